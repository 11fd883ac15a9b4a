#pragma once

#include <cstdint>
#include <filesystem>
#include <utility>
#include <vector>

#include "eofnet/dataset.hpp"
#include "eofnet/types.hpp"

namespace eofnet {

/// Spatial distance class (center - half_width, center + half_width]. The
/// first class of a binning also includes its lower edge.
struct SpaceBin {
  double center;
  double half_width;
};

/// Temporal lag class: integer lags (in time steps) with |lag - center| <= tolerance.
struct TimeLag {
  double center;
  double tolerance;
};

struct VariogramBinning {
  std::vector<SpaceBin> space_bins;
  std::vector<TimeLag> time_lags;
  /// Fraction of distinct-station pairs kept (1 keeps all).
  double subsample_fraction = 1.0;
  std::uint64_t subsample_seed = 0;
};

/// `space_bins` equal-width classes up to half the largest station distance
/// and unit-step lags 0..max_lag.
VariogramBinning default_binning(const StationDataset& ds, Index space_bins = 15, Index max_lag = 10);

/// Empirical spatio-temporal semivariogram. Station pairs are ordered (i, k),
/// time pairs (t_j, t_l) with l >= j; the same-station same-time term is
/// skipped.
struct VariogramSurface {
  std::vector<SpaceBin> space_bins;
  std::vector<TimeLag> time_lags;
  Matrix gamma;  // space x time; NaN marks an empty cell
  Eigen::Matrix<long long, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor> pair_counts;
  double subsample_fraction = 1.0;
  std::uint64_t subsample_seed = 0;

  bool empty(Index s, Index t) const { return pair_counts(s, t) == 0; }
  Index nonempty_count() const;
};

VariogramSurface empirical_semivariogram(const StationDataset& ds, const VariogramBinning& binning);

/// Observed minus predicted, same stations, times and covariates.
StationDataset residual_dataset(const StationDataset& ds, const Matrix& predictions);

struct NuggetSill {
  double nugget = 0.0;
  double sill = 0.0;
  std::pair<Index, Index> nugget_cell;
  std::vector<std::pair<Index, Index>> sill_cells;
};

/// Nugget: gamma at the nonempty cell nearest the origin in lag space
/// (each axis scaled by its largest center). Sill: mean gamma over the
/// quarter of nonempty cells farthest from the origin.
NuggetSill nugget_and_sill_summary(const VariogramSurface& surface);

/// max(gamma) / min(gamma) over nonempty cells with h > 0 (and tau > 0 if
/// requested).
double flatness_ratio(const VariogramSurface& surface, bool positive_tau_only = false);

/// `h_center,tau_center,gamma,pairs` plus a JSON sidecar (`<path>.json`) with
/// the binning and subsampling.
void write_variogram_csv(const VariogramSurface& surface, const std::filesystem::path& path);

}  // namespace eofnet
