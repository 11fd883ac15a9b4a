#pragma once

#include <filesystem>
#include <string>
#include <variant>
#include <vector>

#include "eofnet/dataset.hpp"
#include "eofnet/types.hpp"

namespace eofnet {

/// Temporal EOF basis of a centered station matrix.
///
/// `centered ≈ spatial_coeffs * temporal_bases`. Rows of `temporal_bases` are
/// orthonormal; column k of `spatial_coeffs` has zero mean and empirical
/// variance (with S-1 denominator) equal to `singular_values[k]^2`.
struct EofBasis {
  Matrix temporal_bases;    // K x T
  Matrix spatial_coeffs;    // S x K
  Vector singular_values;   // K, nonincreasing
  Vector mean_series;       // T
  std::vector<std::string> station_ids;
  TimeAxis times;

  Index k_total() const { return temporal_bases.rows(); }
  Index num_times() const { return temporal_bases.cols(); }
  Index num_stations() const { return spatial_coeffs.rows(); }
};

/// Leading components of an EofBasis.
struct TruncatedBasis {
  Matrix temporal_bases;    // K~ x T
  Matrix spatial_coeffs;    // S x K~
  Vector singular_values;   // K~
  Vector mean_series;       // T
  std::vector<std::string> station_ids;
  TimeAxis times;
  Index k_total = 0;
  double variance_captured = 0.0;

  Index k_used() const { return temporal_bases.rows(); }
  Index num_times() const { return temporal_bases.cols(); }
};

struct FixedComponents {
  Index count;
};

struct VarianceThreshold {
  double fraction;
};

using TruncationRule = std::variant<FixedComponents, VarianceThreshold>;

EofBasis decompose(const CenteredDataset& cd);

/// sigma_k^2 / sum sigma^2 per component; all zeros when every sigma is zero.
Vector explained_variance(const EofBasis& basis);

/// Running sum of sigma^2 divided by the total, so the last entry is exactly 1
/// (or 0 for a degenerate basis).
Vector cumulative_explained_variance(const EofBasis& basis);

TruncatedBasis truncate(const EofBasis& basis, const TruncationRule& rule);

/// coeffs (N x K~) times the temporal bases, optionally plus the mean series.
Matrix reconstruct(const Matrix& coeffs, const TruncatedBasis& basis, bool add_mean);

/// Spatial coefficients of arbitrary station rows: (values - mean) * Phi^T.
Matrix project(const Matrix& values, const TruncatedBasis& basis);

/// Basis persistence: phi.csv, alpha.csv, sigma.csv, mean.csv and basis.json.
void save_basis(const EofBasis& basis, Index k_used, const std::filesystem::path& dir);

struct LoadedBasis {
  EofBasis basis;
  Index k_used = 0;
};

LoadedBasis load_basis(const std::filesystem::path& dir);

}  // namespace eofnet
