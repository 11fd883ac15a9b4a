#include "eofnet/variogram.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <numeric>

#include <fmt/format.h>
#include <json.hpp>

#include "eofnet/csv.hpp"
#include "eofnet/errors.hpp"
#include "eofnet/rng.hpp"

namespace eofnet {

namespace {

// Neumaier compensated sum.
struct CompensatedSum {
  double sum = 0.0;
  double compensation = 0.0;

  void add(double v) {
    const double t = sum + v;
    if (std::abs(sum) >= std::abs(v))
      compensation += (sum - t) + v;
    else
      compensation += (v - t) + sum;
    sum = t;
  }
  double value() const { return sum + compensation; }
};

double station_distance(const Matrix& coords, Index a, Index b) {
  const double dx = coords(a, 0) - coords(b, 0);
  const double dy = coords(a, 1) - coords(b, 1);
  return std::sqrt(dx * dx + dy * dy);
}

Index find_space_bin(const std::vector<SpaceBin>& bins, double d) {
  // (lo, hi]; the first bin also takes its lower edge so that d = 0 is counted.
  for (std::size_t b = 0; b < bins.size(); ++b) {
    const double lo = bins[b].center - bins[b].half_width;
    const double hi = bins[b].center + bins[b].half_width;
    if ((d > lo || (b == 0 && d >= lo)) && d <= hi) return static_cast<Index>(b);
  }
  return -1;
}

}  // namespace

Index VariogramSurface::nonempty_count() const { return static_cast<Index>((pair_counts.array() > 0).count()); }

VariogramBinning default_binning(const StationDataset& ds, Index space_bins, Index max_lag) {
  if (space_bins < 1) throw ConfigError("need at least one spatial bin");
  if (max_lag < 0) throw ConfigError("maximum lag must be nonnegative");
  if (ds.num_covariates() < 2) throw PreconditionError("variogram needs x, y coordinates");
  double max_d = 0.0;
  for (Index i = 0; i < ds.num_stations(); ++i)
    for (Index k = i + 1; k < ds.num_stations(); ++k) max_d = std::max(max_d, station_distance(ds.coords, i, k));
  const double cutoff = max_d > 0.0 ? 0.5 * max_d : 1.0;
  const double width = cutoff / static_cast<double>(space_bins);
  VariogramBinning b;
  for (Index i = 0; i < space_bins; ++i)
    b.space_bins.push_back({(static_cast<double>(i) + 0.5) * width, 0.5 * width});
  for (Index l = 0; l <= std::min<Index>(max_lag, ds.num_times() - 1); ++l)
    b.time_lags.push_back({static_cast<double>(l), 0.0});
  return b;
}

VariogramSurface empirical_semivariogram(const StationDataset& ds, const VariogramBinning& binning) {
  const Index s = ds.num_stations();
  const Index t = ds.num_times();
  if (s < 2) throw PreconditionError(fmt::format("variogram needs at least 2 stations, got {}", s));
  if (t < 2) throw PreconditionError(fmt::format("variogram needs at least 2 time steps, got {}", t));
  if (ds.missing_count() > 0) throw PreconditionError("variogram input contains missing values");
  if (ds.num_covariates() < 2) throw PreconditionError("variogram needs x, y coordinates");
  if (binning.space_bins.empty() || binning.time_lags.empty()) throw ConfigError("empty variogram binning");
  if (!(binning.subsample_fraction > 0.0 && binning.subsample_fraction <= 1.0))
    throw ConfigError("subsample fraction must be in (0, 1]");

  const Index n_space = static_cast<Index>(binning.space_bins.size());
  const Index n_time = static_cast<Index>(binning.time_lags.size());
  // Integer lags belonging to each temporal class.
  std::vector<std::vector<Index>> lags(static_cast<std::size_t>(n_time));
  for (Index c = 0; c < n_time; ++c) {
    const auto& lag = binning.time_lags[static_cast<std::size_t>(c)];
    for (Index l = 0; l < t; ++l)
      if (std::abs(static_cast<double>(l) - lag.center) <= lag.tolerance) lags[static_cast<std::size_t>(c)].push_back(l);
  }

  std::vector<CompensatedSum> sums(static_cast<std::size_t>(n_space * n_time));
  VariogramSurface out;
  out.space_bins = binning.space_bins;
  out.time_lags = binning.time_lags;
  out.subsample_fraction = binning.subsample_fraction;
  out.subsample_seed = binning.subsample_seed;
  out.pair_counts.setZero(n_space, n_time);

  Rng rng(binning.subsample_seed);
  const bool subsample = binning.subsample_fraction < 1.0;
  for (Index i = 0; i < s; ++i) {
    const double* zi = ds.values.row(i).data();
    for (Index k = i; k < s; ++k) {
      if (k != i && subsample && rng.uniform() >= binning.subsample_fraction) continue;
      const Index bin = find_space_bin(binning.space_bins, k == i ? 0.0 : station_distance(ds.coords, i, k));
      if (bin < 0) continue;
      const double* zk = ds.values.row(k).data();
      for (Index c = 0; c < n_time; ++c) {
        auto& acc = sums[static_cast<std::size_t>(bin * n_time + c)];
        long long count = 0;
        for (Index l : lags[static_cast<std::size_t>(c)]) {
          if (k == i) {
            if (l == 0) continue;
            for (Index j = 0; j + l < t; ++j) {
              const double d = zi[j] - zi[j + l];
              acc.add(d * d);
            }
            count += t - l;
          } else {
            // Both orientations of the station pair.
            for (Index j = 0; j + l < t; ++j) {
              const double d1 = zi[j] - zk[j + l];
              const double d2 = zk[j] - zi[j + l];
              acc.add(d1 * d1);
              acc.add(d2 * d2);
            }
            count += 2 * (t - l);
          }
        }
        out.pair_counts(bin, c) += count;
      }
    }
  }
  out.gamma.resize(n_space, n_time);
  for (Index b = 0; b < n_space; ++b)
    for (Index c = 0; c < n_time; ++c) {
      const long long n = out.pair_counts(b, c);
      out.gamma(b, c) = n > 0 ? sums[static_cast<std::size_t>(b * n_time + c)].value() / (2.0 * static_cast<double>(n))
                              : std::numeric_limits<double>::quiet_NaN();
    }
  return out;
}

StationDataset residual_dataset(const StationDataset& ds, const Matrix& predictions) {
  if (predictions.rows() != ds.num_stations() || predictions.cols() != ds.num_times())
    throw ShapeError(fmt::format("predictions are {}x{}, dataset is {}x{}", predictions.rows(), predictions.cols(),
                                 ds.num_stations(), ds.num_times()));
  StationDataset out = ds;
  out.values = ds.values - predictions;
  return out;
}

namespace {

std::vector<std::pair<double, std::pair<Index, Index>>> cells_by_lag(const VariogramSurface& v) {
  double h_max = 0.0, tau_max = 0.0;
  for (const auto& b : v.space_bins) h_max = std::max(h_max, std::abs(b.center));
  for (const auto& l : v.time_lags) tau_max = std::max(tau_max, std::abs(l.center));
  std::vector<std::pair<double, std::pair<Index, Index>>> cells;
  for (Index b = 0; b < v.gamma.rows(); ++b)
    for (Index c = 0; c < v.gamma.cols(); ++c) {
      if (v.empty(b, c)) continue;
      const double hs = h_max > 0.0 ? v.space_bins[static_cast<std::size_t>(b)].center / h_max : 0.0;
      const double ts = tau_max > 0.0 ? v.time_lags[static_cast<std::size_t>(c)].center / tau_max : 0.0;
      cells.push_back({std::sqrt(hs * hs + ts * ts), {b, c}});
    }
  std::stable_sort(cells.begin(), cells.end(), [](const auto& a, const auto& b) { return a.first < b.first; });
  return cells;
}

}  // namespace

NuggetSill nugget_and_sill_summary(const VariogramSurface& surface) {
  const auto cells = cells_by_lag(surface);
  if (cells.empty()) throw DiagnosticError("variogram surface has no nonempty cells");
  NuggetSill out;
  out.nugget_cell = cells.front().second;
  out.nugget = surface.gamma(out.nugget_cell.first, out.nugget_cell.second);
  const std::size_t quartile = (cells.size() + 3) / 4;
  double sum = 0.0;
  for (std::size_t i = cells.size() - quartile; i < cells.size(); ++i) {
    out.sill_cells.push_back(cells[i].second);
    sum += surface.gamma(cells[i].second.first, cells[i].second.second);
  }
  out.sill = sum / static_cast<double>(quartile);
  return out;
}

double flatness_ratio(const VariogramSurface& surface, bool positive_tau_only) {
  double lo = std::numeric_limits<double>::infinity();
  double hi = -std::numeric_limits<double>::infinity();
  for (Index b = 0; b < surface.gamma.rows(); ++b) {
    if (!(surface.space_bins[static_cast<std::size_t>(b)].center > 0.0)) continue;
    for (Index c = 0; c < surface.gamma.cols(); ++c) {
      if (surface.empty(b, c)) continue;
      if (positive_tau_only && !(surface.time_lags[static_cast<std::size_t>(c)].center > 0.0)) continue;
      lo = std::min(lo, surface.gamma(b, c));
      hi = std::max(hi, surface.gamma(b, c));
    }
  }
  if (!std::isfinite(hi)) throw DiagnosticError("no nonempty cells with h > 0");
  if (lo <= 0.0) return hi > 0.0 ? std::numeric_limits<double>::infinity() : 1.0;
  return hi / lo;
}

void write_variogram_csv(const VariogramSurface& surface, const std::filesystem::path& path) {
  {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError(fmt::format("cannot write {}", path.string()));
    out << "h_center,tau_center,gamma,pairs\n";
    for (Index b = 0; b < surface.gamma.rows(); ++b)
      for (Index c = 0; c < surface.gamma.cols(); ++c)
        out << csv::format_double(surface.space_bins[static_cast<std::size_t>(b)].center) << ','
            << csv::format_double(surface.time_lags[static_cast<std::size_t>(c)].center) << ','
            << (surface.empty(b, c) ? std::string() : csv::format_double(surface.gamma(b, c))) << ','
            << surface.pair_counts(b, c) << '\n';
  }
  nlohmann::ordered_json meta;
  auto bins = nlohmann::ordered_json::array();
  for (const auto& b : surface.space_bins) bins.push_back({{"center", b.center}, {"half_width", b.half_width}});
  auto lags = nlohmann::ordered_json::array();
  for (const auto& l : surface.time_lags) lags.push_back({{"center", l.center}, {"tolerance", l.tolerance}});
  meta["space_bins"] = bins;
  meta["time_lags"] = lags;
  meta["interval_convention"] = "space bins (lo, hi], first bin [lo, hi]; lags in time steps";
  meta["subsample_fraction"] = surface.subsample_fraction;
  meta["subsample_seed"] = surface.subsample_seed;
  std::ofstream(path.string() + ".json", std::ios::binary) << meta.dump(2) << '\n';
}

}  // namespace eofnet
