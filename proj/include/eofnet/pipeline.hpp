#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "eofnet/eof.hpp"
#include "eofnet/model.hpp"
#include "eofnet/simulate.hpp"
#include "eofnet/variogram.hpp"

namespace eofnet {

// End-to-end orchestration behind the command line tool. Configuration is a
// JSON document; see README.md for the schema.

/// One stations/measurements pair that is split into train/validation/test.
struct CsvInput {
  std::filesystem::path stations;
  std::filesystem::path measurements;
  std::array<double, 3> split = {0.6, 0.2, 0.2};
};

/// Pre-split dataset directories, each holding stations.csv and measurements.csv.
struct SplitDirsInput {
  std::filesystem::path train;
  std::filesystem::path validation;
  std::filesystem::path test;
};

struct SimulationInput {
  Index nx = 139;
  Index ny = 88;
  double cell_size = 1.0;
  SimulationParams params;
  std::array<Index, 3> stations = {2000, 1000, 1000};
};

enum class DecomposeOn { kTrain, kTrainValidation };

struct VariogramConfig {
  bool enabled = true;
  Index space_bins = 15;
  Index max_lag = 10;
  double subsample = 1.0;
};

struct OutputOptions {
  bool images = true;
  bool full_field = false;
  Index snapshots = 3;
  Index max_coefficient_maps = 20;
};

struct RunConfig {
  std::uint64_t seed = 0;
  std::filesystem::path output;
  std::optional<CsvInput> csv;
  std::optional<SplitDirsInput> split_dirs;
  std::optional<SimulationInput> simulation;
  std::optional<std::filesystem::path> grid;  // prediction grid for CSV input
  TruncationRule truncation = VarianceThreshold{0.95};
  DecomposeOn decompose_on = DecomposeOn::kTrainValidation;
  MlpConfig model;
  bool baseline = false;
  VariogramConfig variogram;
  OutputOptions outputs;

  /// Checks everything that can be checked without touching data files.
  void validate() const;
};

/// Parses a JSON config. Relative input paths resolve against `base_dir`;
/// unknown keys are configuration errors.
RunConfig parse_run_config(const std::string& text, const std::filesystem::path& base_dir,
                           const std::string& source = "<config>");
RunConfig load_run_config(const std::filesystem::path& path);

/// Normalized JSON echo of a config (written as config.json in run outputs).
std::string run_config_json(const RunConfig& config);

/// Per-stage seeds, all derived from the root seed.
struct StageSeeds {
  std::uint64_t simulation;
  std::uint64_t stations;
  std::uint64_t split;
  std::uint64_t model;
  std::uint64_t variogram;
};
StageSeeds stage_seeds(std::uint64_t root);

struct StageRecord {
  std::string name;
  std::string status;  // "ok", "skipped" or "FAILED"
  double seconds = 0.0;
  std::string message;
};

struct RunSummary {
  bool ok = false;
  std::string error;
  std::vector<StageRecord> stages;
  Vector cumulative_variance;
  Index k_used = 0;
  double test_mae = 0.0;
  std::optional<double> baseline_test_mae;
  std::optional<VariogramSurface> data_variogram;
  std::optional<VariogramSurface> model_variogram;
  std::optional<VariogramSurface> residual_variogram;

  double stage_seconds(const std::string& name) const;
};

/// Runs every configured stage, writing artifacts and manifest.json under
/// `config.output`. Stage failures are recorded, not thrown.
RunSummary run_pipeline(const RunConfig& config, std::ostream* log = nullptr);

/// Writes train/, val/, test/ dataset directories and truth/ for a
/// simulation config.
void simulate_to_directory(const RunConfig& config, std::ostream* log = nullptr);

/// Exit statuses shared by the subcommands.
inline constexpr int kExitOk = 0;
inline constexpr int kExitFailure = 1;
inline constexpr int kExitConfig = 2;
inline constexpr int kExitPartial = 3;

int cmd_simulate(const RunConfig& config, std::ostream& log);
int cmd_run(const RunConfig& config, std::ostream& log);
/// Re-renders images into `<run>/report/` and writes report/summary.txt from
/// the CSV artifacts; never touches files listed in the manifest.
int cmd_report(const std::filesystem::path& run_dir, std::ostream& log);

// Artifact writers shared with the single-stage subcommands.
void write_explained_variance_csv(const EofBasis& basis, const std::filesystem::path& path);
/// `x,y,alpha_1..alpha_m` for the first m maps.
void write_coefficient_maps_csv(const GridSpec& grid, const Matrix& coeff_maps, Index max_maps,
                                const std::filesystem::path& path);
/// `x,y,<time label>...` for the given time columns.
void write_field_csv(const GridSpec& grid, const Matrix& field, const TimeAxis& times,
                     const std::vector<Index>& columns, const std::filesystem::path& path);
/// `surface,nugget,sill,nugget_h,nugget_tau,flatness_ratio` per named surface.
void write_nugget_sill_csv(const std::vector<std::pair<std::string, const VariogramSurface*>>& surfaces,
                           const std::filesystem::path& path);
/// Evenly spaced time columns including both ends.
std::vector<Index> snapshot_columns(Index num_times, Index count);

/// Renders every heatmap derivable from the CSVs in `run_dir` into
/// `image_dir`; returns the image paths written, relative to `image_dir`.
std::vector<std::string> render_images(const std::filesystem::path& run_dir, const std::filesystem::path& image_dir);

}  // namespace eofnet
