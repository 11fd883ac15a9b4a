// eofnet: EOF decomposition plus multi-output network interpolation of
// station time series onto a regular grid.

#include <cstdlib>
#include <filesystem>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>

#include <CLI11.hpp>
#include <fmt/format.h>

#include "eofnet/csv.hpp"
#include "eofnet/errors.hpp"
#include "eofnet/pipeline.hpp"

namespace fs = std::filesystem;
using namespace eofnet;

namespace {

// Discards everything written to it (for --quiet).
class NullBuffer : public std::streambuf {
 protected:
  int overflow(int c) override { return c; }
};

struct Common {
  std::string config;
  std::string output;
  std::optional<std::uint64_t> seed;
  bool baseline = false;
  bool quiet = false;
};

// --output, then the config's output (relative to EOFNET_OUTPUT_ROOT when
// set), then EOFNET_OUTPUT_ROOT/<config name>.
fs::path resolve_output(const Common& c, const RunConfig& config) {
  const char* root = std::getenv("EOFNET_OUTPUT_ROOT");
  if (!c.output.empty()) return c.output;
  if (!config.output.empty()) {
    if (config.output.is_absolute() || root == nullptr) return config.output;
    return fs::path(root) / config.output;
  }
  const std::string stem = c.config.empty() ? std::string("eofnet-run") : fs::path(c.config).stem().string();
  return root != nullptr ? fs::path(root) / stem : fs::path(stem);
}

RunConfig load_config(const Common& c) {
  RunConfig config = c.config.empty() ? RunConfig{} : load_run_config(c.config);
  if (c.seed) config.seed = *c.seed;
  if (c.baseline) config.baseline = true;
  config.output = resolve_output(c, config);
  return config;
}

void add_common(CLI::App* app, Common& c, bool needs_config) {
  auto* opt = app->add_option("--config", c.config, "JSON configuration file")->check(CLI::ExistingFile);
  if (needs_config) opt->required();
  app->add_option("--output", c.output, "Output directory");
  app->add_option("--seed", c.seed, "Root seed (overrides the config)");
  app->add_flag("--quiet", c.quiet, "Only report errors");
}

StationDataset load_dataset_dir(const fs::path& dir) {
  return load_csv(dir / "stations.csv", dir / "measurements.csv");
}

TruncatedBasis load_truncated(const fs::path& dir) {
  const auto loaded = load_basis(dir);
  return truncate(loaded.basis, FixedComponents{loaded.k_used});
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Spatio-temporal interpolation with EOF bases and multi-output networks"};
  app.require_subcommand(1);

  Common common;

  auto* simulate = app.add_subcommand("simulate", "Write synthetic station datasets and truth grids");
  add_common(simulate, common, false);

  auto* run = app.add_subcommand("run", "Run the full pipeline");
  add_common(run, common, true);
  run->add_flag("--baseline", common.baseline, "Also train the single-output baseline");

  std::string report_dir;
  auto* report = app.add_subcommand("report", "Regenerate images and a summary from a run directory");
  report->add_option("run_dir", report_dir, "Run directory")->required();
  report->add_flag("--quiet", common.quiet, "Only report errors");

  std::string stations, measurements, basis_dir, train_dir, val_dir, model_dir, grid_path, dataset_dir;
  std::optional<double> variance;
  std::optional<Index> components;
  auto* decompose_cmd = app.add_subcommand("decompose", "Impute, center and decompose one dataset");
  decompose_cmd->add_option("--stations", stations, "Stations CSV")->required()->check(CLI::ExistingFile);
  decompose_cmd->add_option("--measurements", measurements, "Measurements CSV")->required()->check(CLI::ExistingFile);
  auto* var_opt = decompose_cmd->add_option("--variance", variance, "Keep components up to this cumulative variance");
  decompose_cmd->add_option("--components", components, "Keep this many components")->excludes(var_opt);
  decompose_cmd->add_option("--output", common.output, "Output directory")->required();
  decompose_cmd->add_flag("--quiet", common.quiet, "Only report errors");

  auto* train_cmd = app.add_subcommand("train", "Train a model against an existing basis");
  train_cmd->add_option("--train", train_dir, "Training dataset directory")->required()->check(CLI::ExistingDirectory);
  train_cmd->add_option("--val", val_dir, "Validation dataset directory")->required()->check(CLI::ExistingDirectory);
  train_cmd->add_option("--basis", basis_dir, "Basis directory")->required()->check(CLI::ExistingDirectory);
  add_common(train_cmd, common, false);
  train_cmd->add_flag("--baseline", common.baseline, "Train the single-output baseline instead");

  Index snapshots = 3;
  bool full_field = false;
  auto* predict_cmd = app.add_subcommand("predict", "Predict coefficient maps and the field on a grid");
  predict_cmd->add_option("--model", model_dir, "Model directory")->required()->check(CLI::ExistingDirectory);
  predict_cmd->add_option("--grid", grid_path, "Grid CSV (x,y[,extras])")->required()->check(CLI::ExistingFile);
  predict_cmd->add_option("--basis", basis_dir, "Basis directory, for time labels")->check(CLI::ExistingDirectory);
  predict_cmd->add_option("--snapshots", snapshots, "Number of field snapshots");
  predict_cmd->add_flag("--full-field", full_field, "Also write every time step");
  predict_cmd->add_flag("--baseline", common.baseline, "Model directory holds a single-output baseline");
  predict_cmd->add_option("--output", common.output, "Output directory")->required();
  predict_cmd->add_flag("--quiet", common.quiet, "Only report errors");

  VariogramConfig vg;
  std::uint64_t vg_seed = 0;
  auto* variogram_cmd = app.add_subcommand("variogram", "Empirical semivariogram of a dataset and model residuals");
  variogram_cmd->add_option("--dataset", dataset_dir, "Dataset directory")->required()->check(CLI::ExistingDirectory);
  variogram_cmd->add_option("--model", model_dir, "Model directory for model and residual surfaces")
      ->check(CLI::ExistingDirectory);
  variogram_cmd->add_flag("--baseline", common.baseline, "Model directory holds a single-output baseline");
  variogram_cmd->add_option("--space-bins", vg.space_bins, "Number of distance classes");
  variogram_cmd->add_option("--max-lag", vg.max_lag, "Largest time lag in steps");
  variogram_cmd->add_option("--subsample", vg.subsample, "Fraction of station pairs kept");
  variogram_cmd->add_option("--seed", vg_seed, "Subsampling seed");
  variogram_cmd->add_option("--output", common.output, "Output directory")->required();
  variogram_cmd->add_flag("--quiet", common.quiet, "Only report errors");

  CLI11_PARSE(app, argc, argv);

  NullBuffer null_buffer;
  std::ostream null_stream(&null_buffer);
  std::ostream& log = common.quiet ? null_stream : std::cout;

  try {
    if (simulate->parsed() || run->parsed()) {
      const RunConfig config = load_config(common);
      // Quiet runs still show the log when something fails.
      std::ostringstream captured;
      std::ostream& out = common.quiet ? captured : std::cout;
      const int status = simulate->parsed() ? cmd_simulate(config, out) : cmd_run(config, out);
      if (status != kExitOk && common.quiet) std::cerr << captured.str();
      return status;
    }
    if (report->parsed()) {
      std::ostringstream captured;
      const int status = cmd_report(report_dir, captured);
      (status == kExitOk ? log : std::cerr) << captured.str();
      return status;
    }

    const fs::path out = common.output;
    fs::create_directories(out);

    if (decompose_cmd->parsed()) {
      StationDataset ds = load_csv(stations, measurements);
      if (ds.missing_count() > 0) ds = impute_missing(ds);
      const EofBasis basis = decompose(center(ds));
      TruncationRule rule = VarianceThreshold{0.95};
      if (variance) rule = VarianceThreshold{*variance};
      if (components) rule = FixedComponents{*components};
      const TruncatedBasis truncated = truncate(basis, rule);
      save_basis(basis, truncated.k_used(), out / "basis");
      write_explained_variance_csv(basis, out / "explained_variance.csv");
      log << fmt::format("K = {}, K~ = {}, variance captured {:.6f}\n", basis.k_total(), truncated.k_used(),
                         truncated.variance_captured);
      return kExitOk;
    }

    if (train_cmd->parsed()) {
      RunConfig config = common.config.empty() ? RunConfig{} : load_run_config(common.config);
      if (common.seed) config.seed = *common.seed;
      MlpConfig mc = config.model;
      mc.seed = stage_seeds(config.seed).model;
      const StationDataset train_ds = load_dataset_dir(train_dir);
      const StationDataset val_ds = load_dataset_dir(val_dir);
      const TruncatedBasis basis = load_truncated(basis_dir);
      if (common.baseline) {
        const auto result = train_single_output_baseline(train_ds, val_ds, basis, mc);
        save_model(result.model, out / "baseline");
        log << fmt::format("{} networks, validation signal MAE {:.6g}\n", result.component_reports.size(),
                           result.val_signal_mae);
      } else {
        const auto result = train(train_ds, val_ds, basis, mc);
        save_model(result.model, out / "model");
        result.report.write_log(out / "train_log.csv");
        log << fmt::format("{} epochs, best validation MAE {:.6g}\n", result.report.stopping_epoch,
                           result.report.best_val_mae);
      }
      return kExitOk;
    }

    if (predict_cmd->parsed()) {
      const GridSpec grid = load_grid_csv(grid_path);
      const GridPrediction pred =
          common.baseline ? predict_grid(load_baseline_model(model_dir), grid) : predict_grid(load_model(model_dir), grid);
      TimeAxis times;
      if (!basis_dir.empty()) {
        times = load_basis(basis_dir).basis.times;
        if (times.size() != pred.field.cols()) throw ShapeError("basis and model time axes differ");
      } else {
        for (Index j = 0; j < pred.field.cols(); ++j) times.values.push_back(j);
      }
      write_coefficient_maps_csv(grid, pred.coeff_maps, pred.coeff_maps.cols(), out / "coeff_maps.csv");
      const auto cols = snapshot_columns(pred.field.cols(), snapshots);
      if (!cols.empty()) write_field_csv(grid, pred.field, times, cols, out / "field_snapshots.csv");
      if (full_field) {
        std::vector<Index> all;
        for (Index j = 0; j < pred.field.cols(); ++j) all.push_back(j);
        write_field_csv(grid, pred.field, times, all, out / "field.csv");
      }
      log << fmt::format("{} cells, {} maps\n", grid.num_cells(), pred.coeff_maps.cols());
      return kExitOk;
    }

    if (variogram_cmd->parsed()) {
      StationDataset ds = load_dataset_dir(dataset_dir);
      if (ds.missing_count() > 0) ds = impute_missing(ds);
      VariogramBinning binning = default_binning(ds, vg.space_bins, vg.max_lag);
      binning.subsample_fraction = vg.subsample;
      binning.subsample_seed = vg_seed;
      const VariogramSurface data = empirical_semivariogram(ds, binning);
      write_variogram_csv(data, out / "variogram_data.csv");
      std::vector<std::pair<std::string, const VariogramSurface*>> surfaces{{"data", &data}};
      std::optional<VariogramSurface> model_surface, residual_surface;
      if (!model_dir.empty()) {
        const Matrix pred = common.baseline ? forward(load_baseline_model(model_dir), ds.coords).signal
                                            : forward(load_model(model_dir), ds.coords).signal;
        StationDataset predicted = ds;
        predicted.values = pred;
        model_surface = empirical_semivariogram(predicted, binning);
        residual_surface = empirical_semivariogram(residual_dataset(ds, pred), binning);
        write_variogram_csv(*model_surface, out / "variogram_model.csv");
        write_variogram_csv(*residual_surface, out / "variogram_residual.csv");
        surfaces.push_back({"model", &*model_surface});
        surfaces.push_back({"residual", &*residual_surface});
      }
      write_nugget_sill_csv(surfaces, out / "nugget_sill.csv");
      log << fmt::format("{} distance classes x {} lags -> {}\n", binning.space_bins.size(), binning.time_lags.size(),
                         out.string());
      return kExitOk;
    }
  } catch (const ConfigError& e) {
    std::cerr << "configuration error: " << e.what() << '\n';
    return kExitConfig;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitFailure;
  }
  return kExitOk;
}
