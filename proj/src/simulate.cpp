#include "eofnet/simulate.hpp"

#include <algorithm>
#include <cmath>
#include <complex>
#include <fstream>
#include <map>

#include <fftw3.h>
#include <fmt/format.h>
#include <json.hpp>

#include "eofnet/csv.hpp"
#include "eofnet/errors.hpp"
#include "eofnet/rng.hpp"

namespace eofnet {

Matrix GridSpec::covariates() const {
  Matrix out(num_cells(), 2 + static_cast<Index>(extra_names.size()));
  for (Index iy = 0; iy < ny; ++iy) {
    for (Index ix = 0; ix < nx; ++ix) {
      const Index c = iy * nx + ix;
      out(c, 0) = x(ix);
      out(c, 1) = y(iy);
      for (Index e = 0; e < static_cast<Index>(extra_names.size()); ++e) out(c, 2 + e) = extra(c, e);
    }
  }
  return out;
}

std::vector<std::string> GridSpec::covariate_names() const {
  std::vector<std::string> names{"x", "y"};
  names.insert(names.end(), extra_names.begin(), extra_names.end());
  return names;
}

void GridSpec::validate() const {
  if (nx < 1 || ny < 1) throw ConfigError(fmt::format("grid must have positive size, got {}x{}", nx, ny));
  if (!(cell_size > 0.0)) throw ConfigError("grid cell size must be positive");
  if (!extra_names.empty() && (extra.rows() != num_cells() || extra.cols() != static_cast<Index>(extra_names.size())))
    throw ShapeError("grid covariate matrix does not match the grid");
}

GridSpec load_grid_csv(const std::filesystem::path& path) {
  const auto table = csv::read(path);
  if (table.header.size() < 2 || table.header[0] != "x" || table.header[1] != "y")
    throw ParseError(fmt::format("{}:1: header must start with x,y", table.source));
  const std::size_t width = table.header.size();
  std::vector<std::vector<double>> rows;
  for (const auto& row : table.rows) {
    if (row.fields.size() != width)
      throw ParseError(fmt::format("{}:{}: expected {} fields, got {}", table.source, row.line, width, row.fields.size()));
    std::vector<double> values;
    for (const auto& f : row.fields) {
      auto v = csv::parse_double(f);
      if (!v || !std::isfinite(*v)) throw ParseError(fmt::format("{}:{}: non-numeric field '{}'", table.source, row.line, f));
      values.push_back(*v);
    }
    rows.push_back(std::move(values));
  }
  if (rows.empty()) throw ParseError(fmt::format("{}: grid has no cells", table.source));

  auto unique_axis = [&](std::size_t col) {
    std::vector<double> v;
    for (const auto& r : rows) v.push_back(r[col]);
    std::sort(v.begin(), v.end());
    v.erase(std::unique(v.begin(), v.end()), v.end());
    return v;
  };
  const auto xs = unique_axis(0);
  const auto ys = unique_axis(1);
  double step = 0.0;
  if (xs.size() > 1) step = xs[1] - xs[0];
  else if (ys.size() > 1) step = ys[1] - ys[0];
  else step = 1.0;
  auto check_axis = [&](const std::vector<double>& axis, const char* name) {
    for (std::size_t i = 1; i < axis.size(); ++i)
      if (std::abs((axis[i] - axis[i - 1]) - step) > 1e-9 * std::max(1.0, std::abs(step)))
        throw ParseError(fmt::format("{}: {} coordinates are not on a regular lattice of step {}", table.source, name, step));
  };
  check_axis(xs, "x");
  check_axis(ys, "y");

  GridSpec grid;
  grid.nx = static_cast<Index>(xs.size());
  grid.ny = static_cast<Index>(ys.size());
  grid.cell_size = step;
  grid.origin_x = xs.front();
  grid.origin_y = ys.front();
  if (static_cast<Index>(rows.size()) != grid.num_cells())
    throw ParseError(fmt::format("{}: {} rows do not fill a {}x{} lattice", table.source, rows.size(), grid.nx, grid.ny));
  grid.extra_names.assign(table.header.begin() + 2, table.header.end());
  grid.extra.resize(grid.num_cells(), static_cast<Index>(grid.extra_names.size()));
  std::vector<char> seen(static_cast<std::size_t>(grid.num_cells()), 0);
  for (std::size_t r = 0; r < rows.size(); ++r) {
    const Index ix = std::llround((rows[r][0] - grid.origin_x) / step);
    const Index iy = std::llround((rows[r][1] - grid.origin_y) / step);
    const Index c = iy * grid.nx + ix;
    if (seen[static_cast<std::size_t>(c)]++)
      throw DuplicateKeyError(fmt::format("{}:{}: duplicate grid cell", table.source, table.rows[r].line));
    for (std::size_t e = 2; e < width; ++e) grid.extra(c, static_cast<Index>(e - 2)) = rows[r][e];
  }
  return grid;
}

void write_grid_csv(const GridSpec& grid, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError(fmt::format("cannot write {}", path.string()));
  const auto names = grid.covariate_names();
  for (std::size_t i = 0; i < names.size(); ++i) out << (i ? "," : "") << names[i];
  out << '\n';
  const Matrix cov = grid.covariates();
  for (Index c = 0; c < cov.rows(); ++c) {
    for (Index k = 0; k < cov.cols(); ++k) out << (k ? "," : "") << csv::format_double(cov(c, k));
    out << '\n';
  }
}

// ---------------------------------------------------------------------------
// Gaussian random fields

struct GaussianFieldSampler::Circulant {
  Index mx = 0;
  Index my = 0;
  std::vector<double> amplitude;  // sqrt(lambda / (mx * my)), row-major (y, x)
};

namespace {

double gaussian_kernel(double d2, double length_scale) {
  return std::exp(-d2 / (2.0 * length_scale * length_scale));
}

Index fft_friendly(Index n) {
  auto smooth = [](Index v) {
    for (Index p : {2, 3, 5}) while (v % p == 0) v /= p;
    return v == 1;
  };
  while (!smooth(n)) ++n;
  return n;
}

struct FftwBuffer {
  explicit FftwBuffer(std::size_t n) : data(fftw_alloc_complex(n)) {
    if (!data) throw std::bad_alloc();
  }
  ~FftwBuffer() { fftw_free(data); }
  FftwBuffer(const FftwBuffer&) = delete;
  FftwBuffer& operator=(const FftwBuffer&) = delete;
  fftw_complex* data;
};

void fft2d_forward(fftw_complex* buffer, Index my, Index mx) {
  fftw_plan plan = fftw_plan_dft_2d(static_cast<int>(my), static_cast<int>(mx), buffer, buffer, FFTW_FORWARD,
                                    FFTW_ESTIMATE);
  fftw_execute(plan);
  fftw_destroy_plan(plan);
}

}  // namespace

GaussianFieldSampler::GaussianFieldSampler(const GridSpec& grid, double length_scale, GrfMethod method)
    : grid_(grid), length_scale_(length_scale), method_(method) {
  grid_.validate();
  if (!(length_scale > 0.0)) throw ConfigError("length scale must be positive");
  const Index n = grid.num_cells();
  if (method_ == GrfMethod::kAuto)
    method_ = n <= kMaxCholeskyCells ? GrfMethod::kCholesky : GrfMethod::kCirculantEmbedding;

  if (method_ == GrfMethod::kCholesky) {
    if (n > kMaxCholeskyCells)
      throw CapabilityError(fmt::format(
          "grid of {} cells exceeds the {}-cell limit of the Cholesky sampler; use the circulant-embedding method",
          n, kMaxCholeskyCells));
    const Matrix coords = grid.covariates().leftCols(2);
    Eigen::MatrixXd cov(n, n);
    for (Index a = 0; a < n; ++a) {
      for (Index b = 0; b <= a; ++b) {
        const double dx = coords(a, 0) - coords(b, 0);
        const double dy = coords(a, 1) - coords(b, 1);
        cov(a, b) = cov(b, a) = gaussian_kernel(dx * dx + dy * dy, length_scale);
      }
    }
    // The squared-exponential kernel is numerically semidefinite on dense
    // grids; a small diagonal jitter keeps the factorization well defined.
    for (double jitter = 1e-10; jitter <= 1e-4; jitter *= 10.0) {
      Eigen::MatrixXd shifted = cov;
      shifted.diagonal().array() += jitter;
      Eigen::LLT<Eigen::MatrixXd> llt(shifted);
      if (llt.info() == Eigen::Success) {
        cholesky_factor_ = llt.matrixL();
        return;
      }
    }
    throw NumericError("Cholesky factorization of the field covariance failed");
  }

  // Circulant embedding on a periodic extension of at least twice the grid.
  auto circ = std::make_unique<Circulant>();
  const double h = grid.cell_size;
  const Index pad = static_cast<Index>(std::ceil(6.0 * length_scale / h));
  Index mx = fft_friendly(std::max<Index>(2 * (grid.nx - 1), grid.nx + pad));
  Index my = fft_friendly(std::max<Index>(2 * (grid.ny - 1), grid.ny + pad));
  for (int attempt = 0; attempt < 4; ++attempt) {
    const std::size_t m = static_cast<std::size_t>(mx * my);
    FftwBuffer buf(m);
    for (Index j = 0; j < my; ++j) {
      const double dy = static_cast<double>(std::min(j, my - j)) * h;
      for (Index i = 0; i < mx; ++i) {
        const double dx = static_cast<double>(std::min(i, mx - i)) * h;
        auto& cell = buf.data[j * mx + i];
        cell[0] = gaussian_kernel(dx * dx + dy * dy, length_scale);
        cell[1] = 0.0;
      }
    }
    fft2d_forward(buf.data, my, mx);
    double max_eig = 0.0, min_eig = 0.0;
    for (std::size_t k = 0; k < m; ++k) {
      max_eig = std::max(max_eig, buf.data[k][0]);
      min_eig = std::min(min_eig, buf.data[k][0]);
    }
    if (min_eig >= -1e-8 * max_eig) {
      circ->mx = mx;
      circ->my = my;
      circ->amplitude.resize(m);
      for (std::size_t k = 0; k < m; ++k)
        circ->amplitude[k] = std::sqrt(std::max(0.0, buf.data[k][0]) / static_cast<double>(m));
      circulant_ = std::move(circ);
      return;
    }
    mx = fft_friendly(2 * mx);
    my = fft_friendly(2 * my);
  }
  throw NumericError("circulant embedding is not nonnegative definite for this grid and length scale");
}

GaussianFieldSampler::~GaussianFieldSampler() = default;
GaussianFieldSampler::GaussianFieldSampler(GaussianFieldSampler&&) noexcept = default;
GaussianFieldSampler& GaussianFieldSampler::operator=(GaussianFieldSampler&&) noexcept = default;

Vector GaussianFieldSampler::sample(std::uint64_t seed) const {
  Rng rng(seed);
  const Index n = grid_.num_cells();
  if (method_ == GrfMethod::kCholesky) {
    Vector z(n);
    for (Index i = 0; i < n; ++i) z(i) = rng.normal();
    return cholesky_factor_.triangularView<Eigen::Lower>() * z;
  }
  const Index mx = circulant_->mx, my = circulant_->my;
  const std::size_t m = static_cast<std::size_t>(mx * my);
  FftwBuffer buf(m);
  for (std::size_t k = 0; k < m; ++k) {
    const double a = circulant_->amplitude[k];
    buf.data[k][0] = a * rng.normal();
    buf.data[k][1] = a * rng.normal();
  }
  fft2d_forward(buf.data, my, mx);
  Vector field(n);
  for (Index iy = 0; iy < grid_.ny; ++iy)
    for (Index ix = 0; ix < grid_.nx; ++ix) field(iy * grid_.nx + ix) = buf.data[iy * mx + ix][0];
  return field;
}

Vector gaussian_random_field(const GridSpec& grid, double length_scale, std::uint64_t seed, GrfMethod method) {
  return GaussianFieldSampler(grid, length_scale, method).sample(seed);
}

Vector ar1_series(Index length, double phi, double innovation_sd, std::uint64_t seed) {
  if (length < 1) throw ConfigError("AR(1) length must be positive");
  if (!(std::abs(phi) < 1.0)) throw ConfigError(fmt::format("AR(1) coefficient {} is not stationary (|phi| >= 1)", phi));
  if (!(innovation_sd > 0.0)) throw ConfigError("AR(1) innovation sd must be positive");
  Rng rng(seed);
  Vector y(length);
  y(0) = rng.normal() * innovation_sd / std::sqrt(1.0 - phi * phi);
  for (Index t = 1; t < length; ++t) y(t) = phi * y(t - 1) + innovation_sd * rng.normal();
  return y;
}

SyntheticTruth synthesize(const GridSpec& grid, const SimulationParams& params) {
  if (params.n_components < 1) throw ConfigError("need at least one component");
  if (params.t_len < 1) throw ConfigError("series length must be positive");
  if (!(params.noise_ratio >= 0.0)) throw ConfigError("noise ratio must be nonnegative");
  grid.validate();

  SyntheticTruth truth;
  truth.grid = grid;
  truth.seed = params.seed;
  const Index cells = grid.num_cells();
  const GaussianFieldSampler sampler(grid, params.length_scale, params.method);
  truth.fields.resize(cells, params.n_components);
  truth.series.resize(params.n_components, params.t_len);
  for (Index k = 0; k < params.n_components; ++k) {
    truth.fields.col(k) = sampler.sample(derive_seed(params.seed, fmt::format("field/{}", k)));
    truth.series.row(k) = ar1_series(params.t_len, params.phi, params.innovation_sd,
                                     derive_seed(params.seed, fmt::format("series/{}", k)))
                              .transpose();
  }
  truth.observed = truth.fields * truth.series;

  const double n = static_cast<double>(truth.observed.size());
  const double mean = truth.observed.mean();
  const double var = (truth.observed.array() - mean).square().sum() / std::max(1.0, n - 1.0);
  truth.sd_free = std::sqrt(var);
  truth.noise_sd = params.noise_ratio * truth.sd_free;
  if (truth.noise_sd > 0.0) {
    Rng rng(derive_seed(params.seed, "noise"));
    for (Index c = 0; c < cells; ++c)
      for (Index t = 0; t < params.t_len; ++t) truth.observed(c, t) += truth.noise_sd * rng.normal();
  }
  return truth;
}

SampledStations sample_stations(const SyntheticTruth& truth, Index n_train, Index n_val, Index n_test,
                                std::uint64_t seed) {
  const Index cells = truth.grid.num_cells();
  if (n_train < 1 || n_val < 1 || n_test < 1)
    throw ConfigError(fmt::format("station counts ({}, {}, {}) must all be positive", n_train, n_val, n_test));
  if (n_train + n_val + n_test > cells)
    throw ConfigError(fmt::format("requested {} stations but the grid has only {} cells", n_train + n_val + n_test, cells));

  std::vector<Index> order(static_cast<std::size_t>(cells));
  for (Index c = 0; c < cells; ++c) order[static_cast<std::size_t>(c)] = c;
  Rng rng(seed);
  const Index wanted = n_train + n_val + n_test;
  for (Index i = 0; i < wanted; ++i) {
    const Index j = i + static_cast<Index>(rng.below(static_cast<std::uint64_t>(cells - i)));
    std::swap(order[static_cast<std::size_t>(i)], order[static_cast<std::size_t>(j)]);
  }

  const int width = static_cast<int>(std::to_string(cells - 1).size());
  const Matrix covariates = truth.grid.covariates();
  auto build = [&](Index begin, Index count) {
    std::vector<Index> picked(order.begin() + begin, order.begin() + begin + count);
    std::sort(picked.begin(), picked.end());
    StationDataset ds;
    ds.covariate_names = truth.grid.covariate_names();
    ds.times.kind = TimeKind::kIndex;
    for (Index t = 0; t < truth.observed.cols(); ++t) ds.times.values.push_back(t);
    ds.coords.resize(count, covariates.cols());
    ds.values.resize(count, truth.observed.cols());
    for (Index r = 0; r < count; ++r) {
      const Index c = picked[static_cast<std::size_t>(r)];
      ds.station_ids.push_back(fmt::format("c{:0{}d}", c, width));
      ds.coords.row(r) = covariates.row(c);
      ds.values.row(r) = truth.observed.row(c);
    }
    return ds;
  };
  return {build(0, n_train), build(n_train, n_val), build(n_train + n_val, n_test)};
}

void write_truth(const SyntheticTruth& truth, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  write_grid_csv(truth.grid, dir / "grid.csv");
  csv::write_matrix(dir / "fields.csv", truth.fields);
  csv::write_matrix(dir / "series.csv", truth.series);
  nlohmann::ordered_json meta;
  meta["nx"] = truth.grid.nx;
  meta["ny"] = truth.grid.ny;
  meta["cell_size"] = truth.grid.cell_size;
  meta["origin"] = {truth.grid.origin_x, truth.grid.origin_y};
  meta["components"] = truth.fields.cols();
  meta["T"] = truth.series.cols();
  meta["noise_sd"] = truth.noise_sd;
  meta["sd_free"] = truth.sd_free;
  meta["seed"] = truth.seed;
  meta["note"] = "noise-free field = fields (cells x C) * series (C x T); cell index = iy * nx + ix";
  std::ofstream(dir / "truth.json", std::ios::binary) << meta.dump(2) << '\n';
}

}  // namespace eofnet
