#pragma once

#include <cstdint>
#include <filesystem>
#include <memory>
#include <string>
#include <vector>

#include "eofnet/dataset.hpp"
#include "eofnet/types.hpp"

namespace eofnet {

/// Regular 2-D prediction grid. Cell (ix, iy) has index iy * nx + ix and
/// coordinates (origin_x + ix * cell_size, origin_y + iy * cell_size).
struct GridSpec {
  Index nx = 0;
  Index ny = 0;
  double cell_size = 1.0;
  double origin_x = 0.0;
  double origin_y = 0.0;
  std::vector<std::string> extra_names;  // optional per-cell covariates, e.g. "alt"
  Matrix extra;                          // num_cells x extra_names.size()

  Index num_cells() const { return nx * ny; }
  double x(Index ix) const { return origin_x + static_cast<double>(ix) * cell_size; }
  double y(Index iy) const { return origin_y + static_cast<double>(iy) * cell_size; }

  /// Covariate matrix in model order: x, y, then extras.
  Matrix covariates() const;
  std::vector<std::string> covariate_names() const;
  void validate() const;
};

/// Reads a grid CSV (`x,y[,extra...]`). Rows may come in any order but must
/// fill a complete regular lattice.
GridSpec load_grid_csv(const std::filesystem::path& path);
void write_grid_csv(const GridSpec& grid, const std::filesystem::path& path);

enum class GrfMethod { kAuto, kCholesky, kCirculantEmbedding };

/// Largest grid the exact Cholesky sampler accepts.
inline constexpr Index kMaxCholeskyCells = 4096;

/// Samples zero-mean, unit-variance stationary Gaussian fields with covariance
/// exp(-d^2 / (2 l^2)) on a grid. The factorization is computed once and
/// reused for every seed.
class GaussianFieldSampler {
 public:
  GaussianFieldSampler(const GridSpec& grid, double length_scale, GrfMethod method = GrfMethod::kAuto);
  ~GaussianFieldSampler();
  GaussianFieldSampler(GaussianFieldSampler&&) noexcept;
  GaussianFieldSampler& operator=(GaussianFieldSampler&&) noexcept;

  /// One field, flattened in cell order.
  Vector sample(std::uint64_t seed) const;
  GrfMethod method() const { return method_; }

 private:
  struct Circulant;
  GridSpec grid_;
  double length_scale_;
  GrfMethod method_;
  Eigen::MatrixXd cholesky_factor_;
  std::unique_ptr<Circulant> circulant_;
};

Vector gaussian_random_field(const GridSpec& grid, double length_scale, std::uint64_t seed,
                             GrfMethod method = GrfMethod::kAuto);

/// Stationary AR(1): Y(t) = phi Y(t-1) + eta_t, Y(0) drawn from the stationary law.
Vector ar1_series(Index length, double phi, double innovation_sd, std::uint64_t seed);

struct SimulationParams {
  Index n_components = 20;
  Index t_len = 1080;
  double noise_ratio = 0.10;
  double phi = 0.8;
  double innovation_sd = 1.0;
  double length_scale = 10.0;  // length units; 10 cells at unit cell size
  std::uint64_t seed = 0;
  GrfMethod method = GrfMethod::kAuto;
};

/// Field Z(s, t) = sum_k X_k(s) Y_k(t) + noise on every grid cell.
struct SyntheticTruth {
  GridSpec grid;
  Matrix fields;    // cells x C, column k = X_k
  Matrix series;    // C x T, row k = Y_k
  Matrix observed;  // cells x T, noisy field
  double noise_sd = 0.0;
  double sd_free = 0.0;
  std::uint64_t seed = 0;

  Matrix noise_free() const { return fields * series; }
};

SyntheticTruth synthesize(const GridSpec& grid, const SimulationParams& params);

struct SampledStations {
  StationDataset train;
  StationDataset validation;
  StationDataset test;
};

/// Draws distinct grid cells uniformly without replacement for the three sets.
SampledStations sample_stations(const SyntheticTruth& truth, Index n_train, Index n_val, Index n_test,
                                std::uint64_t seed);

/// Writes grid.csv, fields.csv, series.csv and truth.json to `dir`.
void write_truth(const SyntheticTruth& truth, const std::filesystem::path& dir);

}  // namespace eofnet
