#include "eofnet/eof.hpp"

#include <cmath>
#include <fstream>

#include <fmt/format.h>
#include <json.hpp>

#include "eofnet/csv.hpp"
#include "eofnet/errors.hpp"

namespace eofnet {

EofBasis decompose(const CenteredDataset& cd) {
  const Index s = cd.centered.rows();
  const Index t = cd.centered.cols();
  if (s < 2) throw PreconditionError(fmt::format("decomposition needs at least 2 stations, got {}", s));
  if (t < 1) throw PreconditionError("decomposition needs at least 1 time step");
  if (!cd.centered.allFinite() || !cd.mean_series.allFinite())
    throw NumericError("decomposition input contains non-finite values");

  const Index k = std::min(t, s - 1);
  const Eigen::MatrixXd scaled = cd.centered / std::sqrt(static_cast<double>(s - 1));
  Eigen::BDCSVD<Eigen::MatrixXd> svd(scaled, Eigen::ComputeThinU | Eigen::ComputeThinV);

  EofBasis basis;
  basis.singular_values = svd.singularValues().head(k);
  Eigen::MatrixXd v = svd.matrixV().leftCols(k);

  // Sign convention: the largest-magnitude entry of each phi_k is positive;
  // the first index wins on exact ties.
  for (Index c = 0; c < k; ++c) {
    Index arg = 0;
    double best = -1.0;
    for (Index j = 0; j < t; ++j) {
      const double a = std::abs(v(j, c));
      if (a > best) {
        best = a;
        arg = j;
      }
    }
    if (v(arg, c) < 0.0) v.col(c) = -v.col(c);
  }

  basis.temporal_bases = v.transpose();
  basis.spatial_coeffs = cd.centered * v;
  basis.mean_series = cd.mean_series;
  basis.station_ids = cd.station_ids;
  basis.times = cd.times;
  return basis;
}

Vector cumulative_explained_variance(const EofBasis& basis) {
  const Index k = basis.singular_values.size();
  Vector partial(k);
  double running = 0.0;
  for (Index i = 0; i < k; ++i) {
    running += basis.singular_values(i) * basis.singular_values(i);
    partial(i) = running;
  }
  if (running == 0.0) return Vector::Zero(k);
  return partial / running;
}

Vector explained_variance(const EofBasis& basis) {
  const Vector sq = basis.singular_values.array().square();
  double total = 0.0;
  for (Index i = 0; i < sq.size(); ++i) total += sq(i);
  if (total == 0.0) return Vector::Zero(sq.size());
  return sq / total;
}

TruncatedBasis truncate(const EofBasis& basis, const TruncationRule& rule) {
  const Index k_total = basis.k_total();
  const Vector cumulative = cumulative_explained_variance(basis);
  Index keep = 0;
  if (const auto* fixed = std::get_if<FixedComponents>(&rule)) {
    if (fixed->count < 1 || fixed->count > k_total)
      throw ConfigError(fmt::format("component count {} outside [1, {}]", fixed->count, k_total));
    keep = fixed->count;
  } else {
    const double theta = std::get<VarianceThreshold>(rule).fraction;
    if (!(theta > 0.0 && theta <= 1.0))
      throw ConfigError(fmt::format("variance threshold {} outside (0, 1]", theta));
    if (k_total == 0) throw ConfigError("cannot truncate an empty basis");
    keep = k_total;
    for (Index i = 0; i < k_total; ++i) {
      if (cumulative(i) >= theta) {
        keep = i + 1;
        break;
      }
    }
  }
  TruncatedBasis out;
  out.temporal_bases = basis.temporal_bases.topRows(keep);
  out.spatial_coeffs = basis.spatial_coeffs.leftCols(keep);
  out.singular_values = basis.singular_values.head(keep);
  out.mean_series = basis.mean_series;
  out.station_ids = basis.station_ids;
  out.times = basis.times;
  out.k_total = k_total;
  out.variance_captured = k_total > 0 ? cumulative(keep - 1) : 0.0;
  return out;
}

Matrix reconstruct(const Matrix& coeffs, const TruncatedBasis& basis, bool add_mean) {
  if (coeffs.cols() != basis.k_used())
    throw ShapeError(fmt::format("coefficient matrix has {} columns, basis has {} components", coeffs.cols(),
                                 basis.k_used()));
  Matrix out = coeffs * basis.temporal_bases;
  if (add_mean) out.rowwise() += basis.mean_series.transpose();
  return out;
}

Matrix project(const Matrix& values, const TruncatedBasis& basis) {
  if (values.cols() != basis.num_times())
    throw ShapeError(fmt::format("values have {} time steps, basis has {}", values.cols(), basis.num_times()));
  const Matrix centered = values.rowwise() - basis.mean_series.transpose();
  return centered * basis.temporal_bases.transpose();
}

void save_basis(const EofBasis& basis, Index k_used, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  csv::write_matrix(dir / "phi.csv", basis.temporal_bases);

  const Vector fractions = explained_variance(basis);
  const Vector cumulative = cumulative_explained_variance(basis);
  {
    std::ofstream out(dir / "alpha.csv", std::ios::binary);
    out << "station_id";
    for (Index k = 0; k < basis.k_total(); ++k) out << ",alpha_" << (k + 1);
    out << '\n';
    for (Index i = 0; i < basis.num_stations(); ++i) {
      out << basis.station_ids[static_cast<std::size_t>(i)];
      for (Index k = 0; k < basis.k_total(); ++k) out << ',' << csv::format_double(basis.spatial_coeffs(i, k));
      out << '\n';
    }
  }
  {
    std::ofstream out(dir / "sigma.csv", std::ios::binary);
    out << "k,sigma,explained_variance,cumulative\n";
    for (Index k = 0; k < basis.k_total(); ++k)
      out << (k + 1) << ',' << csv::format_double(basis.singular_values(k)) << ','
          << csv::format_double(fractions(k)) << ',' << csv::format_double(cumulative(k)) << '\n';
  }
  {
    std::ofstream out(dir / "mean.csv", std::ios::binary);
    out << "time,mean\n";
    for (Index j = 0; j < basis.num_times(); ++j)
      out << basis.times.label(j) << ',' << csv::format_double(basis.mean_series(j)) << '\n';
  }
  nlohmann::ordered_json meta;
  meta["S"] = basis.num_stations();
  meta["T"] = basis.num_times();
  meta["K"] = basis.k_total();
  meta["K_used"] = k_used;
  meta["variance_captured"] = k_used > 0 ? cumulative(k_used - 1) : 0.0;
  meta["time_kind"] = basis.times.kind == TimeKind::kIndex ? "index" : "iso8601";
  std::ofstream(dir / "basis.json", std::ios::binary) << meta.dump(2) << '\n';
}

LoadedBasis load_basis(const std::filesystem::path& dir) {
  std::ifstream meta_in(dir / "basis.json");
  if (!meta_in) throw IoError(fmt::format("missing {}", (dir / "basis.json").string()));
  const auto meta = nlohmann::json::parse(meta_in);
  LoadedBasis loaded;
  auto& basis = loaded.basis;
  loaded.k_used = meta.at("K_used").get<Index>();
  basis.temporal_bases = csv::read_matrix(dir / "phi.csv");
  const Index k = meta.at("K").get<Index>();
  const Index t = meta.at("T").get<Index>();
  if (basis.temporal_bases.rows() != k || basis.temporal_bases.cols() != t)
    throw ShapeError(fmt::format("{}: expected {}x{} phi matrix", dir.string(), k, t));

  const auto alpha = csv::read(dir / "alpha.csv");
  basis.spatial_coeffs.resize(static_cast<Index>(alpha.rows.size()), k);
  for (std::size_t r = 0; r < alpha.rows.size(); ++r) {
    const auto& row = alpha.rows[r];
    if (static_cast<Index>(row.fields.size()) != k + 1)
      throw ParseError(fmt::format("{}:{}: expected {} fields", alpha.source, row.line, k + 1));
    basis.station_ids.push_back(row.fields[0]);
    for (Index c = 0; c < k; ++c) {
      auto v = csv::parse_double(row.fields[static_cast<std::size_t>(c + 1)]);
      if (!v) throw ParseError(fmt::format("{}:{}: non-numeric coefficient", alpha.source, row.line));
      basis.spatial_coeffs(static_cast<Index>(r), c) = *v;
    }
  }
  const auto sigma = csv::read(dir / "sigma.csv");
  basis.singular_values.resize(k);
  for (std::size_t r = 0; r < sigma.rows.size() && static_cast<Index>(r) < k; ++r)
    basis.singular_values(static_cast<Index>(r)) = csv::parse_double(sigma.rows[r].fields.at(1)).value();
  const auto mean = csv::read(dir / "mean.csv");
  if (static_cast<Index>(mean.rows.size()) != t) throw ShapeError(fmt::format("{}: expected {} means", mean.source, t));
  basis.mean_series.resize(t);
  basis.times.kind = meta.value("time_kind", "index") == "index" ? TimeKind::kIndex : TimeKind::kIso8601;
  for (std::size_t r = 0; r < mean.rows.size(); ++r) {
    const auto& row = mean.rows[r];
    basis.mean_series(static_cast<Index>(r)) = csv::parse_double(row.fields.at(1)).value();
    std::optional<std::int64_t> time;
    if (basis.times.kind == TimeKind::kIndex) {
      if (const auto v = csv::parse_int(row.fields[0])) time = *v;
    } else {
      time = parse_iso8601(row.fields[0]);
    }
    if (!time) throw ParseError(fmt::format("{}:{}: bad time", mean.source, row.line));
    basis.times.values.push_back(*time);
  }
  return loaded;
}

}  // namespace eofnet
