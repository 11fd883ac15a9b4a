#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "eofnet/dataset.hpp"
#include "eofnet/eof.hpp"
#include "eofnet/network.hpp"
#include "eofnet/simulate.hpp"
#include "eofnet/types.hpp"

namespace eofnet {

/// Network and training configuration. Activation is ELU, initialization He,
/// loss mean absolute error; these are fixed.
struct MlpConfig {
  Index hidden_layers = 6;
  Index width = 100;
  NadamParams nadam;
  OneCycleSchedule schedule;
  bool batch_norm = false;
  BatchNormParams batch_norm_params;
  bool early_stopping = true;
  int patience = 20;
  Index batch_size = 256;
  int max_epochs = 300;
  std::uint64_t seed = 0;

  void validate() const;
};

/// Network with its frozen recomposition layer.
struct MlpModel {
  Network network;
  Matrix recomposition;  // K~ x T temporal bases, never trained
  Vector mean_series;    // T
  Standardizer standardizer;
  std::vector<std::string> covariate_names;
  MlpConfig config;
  std::string basis_fingerprint;

  Index k_used() const { return recomposition.rows(); }
  Index num_times() const { return recomposition.cols(); }
};

struct ForwardResult {
  Matrix coeffs;  // N x K~
  Matrix signal;  // N x T
};

/// Standardizes raw covariates, runs the network and recomposes the signal.
ForwardResult forward(const MlpModel& model, const Matrix& covariates);

struct TrainReport {
  std::vector<double> train_mae;
  std::vector<double> val_mae;
  std::vector<double> learning_rate;  // at the last step of each epoch
  int stopping_epoch = 0;             // number of epochs run
  int best_epoch = 0;                 // 1-based
  double best_val_mae = 0.0;
  double seconds = 0.0;

  /// `epoch,train_mae,val_mae,lr` log.
  void write_log(const std::filesystem::path& path) const;
};

struct TrainResult {
  MlpModel model;
  TrainReport report;
};

/// Trains the multi-output network with MAE on the recomposed signal.
TrainResult train(const StationDataset& train, const StationDataset& val, const TruncatedBasis& basis,
                  const MlpConfig& config);

/// K~ single-output networks, one per coefficient map, sharing the
/// recomposition used at prediction time.
struct BaselineModel {
  std::vector<Network> networks;
  Matrix recomposition;
  Vector mean_series;
  Standardizer standardizer;
  std::vector<std::string> covariate_names;
  MlpConfig config;
  std::string basis_fingerprint;

  Index k_used() const { return recomposition.rows(); }
};

ForwardResult forward(const BaselineModel& model, const Matrix& covariates);

struct BaselineResult {
  BaselineModel model;
  std::vector<TrainReport> component_reports;
  double val_signal_mae = 0.0;
  double seconds = 0.0;
};

/// Trains each network on MAE against its spatial coefficient target.
BaselineResult train_single_output_baseline(const StationDataset& train, const StationDataset& val,
                                            const TruncatedBasis& basis, const MlpConfig& config);

/// Coefficient targets for a dataset's stations: decomposition rows where the
/// station is in the basis, projection otherwise.
Matrix coefficient_targets(const StationDataset& ds, const TruncatedBasis& basis);

struct GridPrediction {
  Matrix coeff_maps;  // cells x K~, column k is the map of coefficient k
  Matrix field;       // cells x T
};

GridPrediction predict_grid(const MlpModel& model, const GridSpec& grid);
GridPrediction predict_grid(const BaselineModel& model, const GridSpec& grid);

double evaluate_mae(const Matrix& predictions, const Matrix& truth);

/// SHA-256 of the temporal bases and mean series bytes (little-endian doubles).
std::string basis_fingerprint(const Matrix& phi, const Vector& mean);

void save_model(const MlpModel& model, const std::filesystem::path& dir);
MlpModel load_model(const std::filesystem::path& dir);
void save_model(const BaselineModel& model, const std::filesystem::path& dir);
BaselineModel load_baseline_model(const std::filesystem::path& dir);

}  // namespace eofnet
