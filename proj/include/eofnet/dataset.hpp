#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "eofnet/types.hpp"

namespace eofnet {

/// How time stamps were written in the source file.
enum class TimeKind { kIndex, kIso8601 };

/// Regular time axis. `values` are either raw integer indices or seconds since
/// 1970-01-01T00:00:00 (no time zone handling).
struct TimeAxis {
  TimeKind kind = TimeKind::kIndex;
  std::vector<std::int64_t> values;

  Index size() const { return static_cast<Index>(values.size()); }
  std::string label(Index j) const;
};

/// Parses "YYYY-MM-DD", "YYYY-MM-DDTHH:MM[:SS]" (space separator and trailing
/// 'Z' accepted) to seconds since the epoch.
std::optional<std::int64_t> parse_iso8601(std::string_view text);
std::string format_iso8601(std::int64_t seconds);

/// S stations by T time steps of one field plus per-station covariates.
/// Missing cells hold NaN.
struct StationDataset {
  std::vector<std::string> station_ids;
  std::vector<std::string> covariate_names;  // e.g. {"x", "y", "alt"}
  Matrix coords;                             // S x D
  TimeAxis times;
  Matrix values;                             // S x T

  Index num_stations() const { return values.rows(); }
  Index num_times() const { return values.cols(); }
  Index num_covariates() const { return coords.cols(); }
  Index missing_count() const;

  /// Throws on broken invariants (shapes, unique ids, strictly increasing times).
  void validate() const;

  /// Rows in the given order.
  StationDataset subset(const std::vector<Index>& rows) const;
};

/// Stacks the stations of two datasets that share a time axis and covariates.
StationDataset concat(const StationDataset& a, const StationDataset& b);

/// Spatially centered view of a complete dataset.
struct CenteredDataset {
  Matrix centered;  // S x T
  Vector mean_series;  // T
  std::vector<std::string> station_ids;
  TimeAxis times;
};

struct SplitSpec {
  std::vector<Index> train;
  std::vector<Index> validation;
  std::vector<Index> test;
  std::uint64_t rng_seed = 0;
};

struct SplitResult {
  StationDataset train;
  StationDataset validation;
  StationDataset test;
  SplitSpec spec;
};

/// Reads the stations and measurements CSVs.
StationDataset load_csv(const std::filesystem::path& stations_path,
                        const std::filesystem::path& measurements_path);

/// Writes `stations.csv` and `measurements.csv` into `dir`.
void write_csv(const StationDataset& ds, const std::filesystem::path& dir);

/// Fills each missing cell with the mean of the observed values of its 8
/// nearest stations at the same and the two adjacent time steps.
StationDataset impute_missing(const StationDataset& ds);

/// Neighbour stations used by `impute_missing` for station `i`, nearest first.
std::vector<Index> imputation_neighbours(const StationDataset& ds, Index i);

inline constexpr Index kImputationNeighbours = 8;

/// Station counts for a split by largest remainder.
std::array<Index, 3> split_sizes(Index num_stations, const std::array<double, 3>& fractions);

SplitResult split_stations(const StationDataset& ds, const std::array<double, 3>& fractions,
                           std::uint64_t seed);

CenteredDataset center(const StationDataset& ds);

/// Per-covariate standardization fitted on training stations.
struct Standardizer {
  Vector mean;
  Vector scale;

  static Standardizer fit(const Matrix& covariates);
  Matrix apply(const Matrix& covariates) const;
};

}  // namespace eofnet
