#include "eofnet/dataset.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>
#include <numeric>
#include <unordered_map>
#include <unordered_set>

#include <fmt/format.h>

#include "eofnet/csv.hpp"
#include "eofnet/errors.hpp"
#include "eofnet/rng.hpp"

namespace eofnet {

namespace {

// Howard Hinnant's civil calendar conversions.
std::int64_t days_from_civil(std::int64_t y, unsigned m, unsigned d) {
  y -= m <= 2;
  const std::int64_t era = (y >= 0 ? y : y - 399) / 400;
  const unsigned yoe = static_cast<unsigned>(y - era * 400);
  const unsigned doy = (153 * (m + (m > 2 ? -3 : 9)) + 2) / 5 + d - 1;
  const unsigned doe = yoe * 365 + yoe / 4 - yoe / 100 + doy;
  return era * 146097 + static_cast<std::int64_t>(doe) - 719468;
}

void civil_from_days(std::int64_t z, std::int64_t& y, unsigned& m, unsigned& d) {
  z += 719468;
  const std::int64_t era = (z >= 0 ? z : z - 146096) / 146097;
  const unsigned doe = static_cast<unsigned>(z - era * 146097);
  const unsigned yoe = (doe - doe / 1460 + doe / 36524 - doe / 146096) / 365;
  y = static_cast<std::int64_t>(yoe) + era * 400;
  const unsigned doy = doe - (365 * yoe + yoe / 4 - yoe / 100);
  const unsigned mp = (5 * doy + 2) / 153;
  d = doy - (153 * mp + 2) / 5 + 1;
  m = mp < 10 ? mp + 3 : mp - 9;
  y += m <= 2;
}

bool read_digits(std::string_view s, std::size_t pos, std::size_t n, int& out) {
  if (pos + n > s.size()) return false;
  out = 0;
  for (std::size_t i = pos; i < pos + n; ++i) {
    if (s[i] < '0' || s[i] > '9') return false;
    out = out * 10 + (s[i] - '0');
  }
  return true;
}

double squared_distance(const Matrix& coords, Index a, Index b) {
  const Index dims = std::min<Index>(2, coords.cols());
  double sum = 0.0;
  for (Index c = 0; c < dims; ++c) {
    const double d = coords(a, c) - coords(b, c);
    sum += d * d;
  }
  return sum;
}

}  // namespace

std::optional<std::int64_t> parse_iso8601(std::string_view s) {
  if (!s.empty() && s.back() == 'Z') s.remove_suffix(1);
  int year, month, day, hour = 0, minute = 0, second = 0;
  if (s.size() < 10 || !read_digits(s, 0, 4, year) || s[4] != '-' || !read_digits(s, 5, 2, month) ||
      s[7] != '-' || !read_digits(s, 8, 2, day))
    return std::nullopt;
  if (s.size() > 10) {
    if ((s[10] != 'T' && s[10] != ' ') || s.size() < 16 || !read_digits(s, 11, 2, hour) || s[13] != ':' ||
        !read_digits(s, 14, 2, minute))
      return std::nullopt;
    if (s.size() > 16) {
      if (s.size() != 19 || s[16] != ':' || !read_digits(s, 17, 2, second)) return std::nullopt;
    }
  }
  if (month < 1 || month > 12 || day < 1 || day > 31 || hour > 23 || minute > 59 || second > 60)
    return std::nullopt;
  std::int64_t y2;
  unsigned m2, d2;
  const std::int64_t days = days_from_civil(year, static_cast<unsigned>(month), static_cast<unsigned>(day));
  civil_from_days(days, y2, m2, d2);
  if (m2 != static_cast<unsigned>(month) || d2 != static_cast<unsigned>(day)) return std::nullopt;
  return days * 86400 + hour * 3600 + minute * 60 + second;
}

std::string format_iso8601(std::int64_t seconds) {
  std::int64_t days = seconds / 86400;
  std::int64_t rem = seconds % 86400;
  if (rem < 0) {
    rem += 86400;
    --days;
  }
  std::int64_t y;
  unsigned m, d;
  civil_from_days(days, y, m, d);
  return fmt::format("{:04d}-{:02d}-{:02d}T{:02d}:{:02d}:{:02d}", y, m, d, rem / 3600, (rem / 60) % 60, rem % 60);
}

std::string TimeAxis::label(Index j) const {
  const auto v = values.at(static_cast<std::size_t>(j));
  return kind == TimeKind::kIndex ? std::to_string(v) : format_iso8601(v);
}

Index StationDataset::missing_count() const {
  return static_cast<Index>(values.array().isNaN().count());
}

void StationDataset::validate() const {
  const auto s = static_cast<Index>(station_ids.size());
  if (values.rows() != s || coords.rows() != s)
    throw ShapeError(fmt::format("dataset has {} ids, {} value rows, {} coordinate rows", s, values.rows(),
                                 coords.rows()));
  if (values.cols() != times.size())
    throw ShapeError(fmt::format("dataset has {} time stamps but {} value columns", times.size(), values.cols()));
  if (static_cast<Index>(covariate_names.size()) != coords.cols())
    throw ShapeError("covariate names do not match coordinate columns");
  std::unordered_set<std::string> seen;
  for (const auto& id : station_ids)
    if (!seen.insert(id).second) throw DuplicateKeyError(fmt::format("duplicate station id '{}'", id));
  for (std::size_t j = 1; j < times.values.size(); ++j)
    if (times.values[j] <= times.values[j - 1]) throw PreconditionError("time axis is not strictly increasing");
}

StationDataset StationDataset::subset(const std::vector<Index>& rows) const {
  StationDataset out;
  out.covariate_names = covariate_names;
  out.times = times;
  out.coords.resize(static_cast<Index>(rows.size()), coords.cols());
  out.values.resize(static_cast<Index>(rows.size()), values.cols());
  for (std::size_t r = 0; r < rows.size(); ++r) {
    const Index i = rows[r];
    if (i < 0 || i >= num_stations()) throw ShapeError(fmt::format("station row {} out of range", i));
    out.station_ids.push_back(station_ids[static_cast<std::size_t>(i)]);
    out.coords.row(static_cast<Index>(r)) = coords.row(i);
    out.values.row(static_cast<Index>(r)) = values.row(i);
  }
  return out;
}

StationDataset concat(const StationDataset& a, const StationDataset& b) {
  if (a.times.values != b.times.values) throw ShapeError("cannot concatenate datasets with different time axes");
  if (a.covariate_names != b.covariate_names)
    throw ShapeError("cannot concatenate datasets with different covariates");
  StationDataset out;
  out.covariate_names = a.covariate_names;
  out.times = a.times;
  out.station_ids = a.station_ids;
  out.station_ids.insert(out.station_ids.end(), b.station_ids.begin(), b.station_ids.end());
  out.coords.resize(a.coords.rows() + b.coords.rows(), a.coords.cols());
  out.coords << a.coords, b.coords;
  out.values.resize(a.values.rows() + b.values.rows(), a.values.cols());
  out.values << a.values, b.values;
  out.validate();
  return out;
}

StationDataset load_csv(const std::filesystem::path& stations_path,
                        const std::filesystem::path& measurements_path) {
  const csv::Table stations = csv::read(stations_path);
  if (stations.header.size() < 3 || stations.header[0] != "station_id" || stations.header[1] != "x" ||
      stations.header[2] != "y")
    throw ParseError(fmt::format("{}:1: header must start with station_id,x,y", stations.source));

  StationDataset ds;
  ds.covariate_names.assign(stations.header.begin() + 1, stations.header.end());
  const Index dims = static_cast<Index>(ds.covariate_names.size());
  ds.coords.resize(static_cast<Index>(stations.rows.size()), dims);
  std::unordered_map<std::string, Index> station_row;
  for (std::size_t r = 0; r < stations.rows.size(); ++r) {
    const auto& row = stations.rows[r];
    if (row.fields.size() != stations.header.size())
      throw ParseError(fmt::format("{}:{}: expected {} fields, got {}", stations.source, row.line,
                                   stations.header.size(), row.fields.size()));
    const std::string& id = row.fields[0];
    if (id.empty()) throw ParseError(fmt::format("{}:{}: empty station_id", stations.source, row.line));
    if (!station_row.emplace(id, static_cast<Index>(r)).second)
      throw DuplicateKeyError(fmt::format("{}:{}: duplicate station id '{}'", stations.source, row.line, id));
    ds.station_ids.push_back(id);
    for (Index c = 0; c < dims; ++c) {
      auto v = csv::parse_double(row.fields[static_cast<std::size_t>(c + 1)]);
      if (!v || !std::isfinite(*v))
        throw ParseError(fmt::format("{}:{}: non-numeric covariate '{}'", stations.source, row.line,
                                     row.fields[static_cast<std::size_t>(c + 1)]));
      ds.coords(static_cast<Index>(r), c) = *v;
    }
  }

  const csv::Table meas = csv::read(measurements_path);
  const auto id_col = meas.column("station_id");
  const auto time_col = meas.column("time");
  const auto value_col = meas.column("value");
  if (!id_col || !time_col || !value_col)
    throw ParseError(fmt::format("{}:1: header must contain station_id,time,value", meas.source));

  // First pass: decide the time representation from the first data row.
  TimeKind kind = TimeKind::kIndex;
  if (!meas.rows.empty() && meas.rows.front().fields.size() == meas.header.size() &&
      !csv::parse_int(meas.rows.front().fields[*time_col]))
    kind = TimeKind::kIso8601;

  struct Record {
    Index station;
    std::int64_t time;
    double value;
    std::size_t line;
  };
  std::vector<Record> records;
  records.reserve(meas.rows.size());
  for (const auto& row : meas.rows) {
    if (row.fields.size() != meas.header.size())
      throw ParseError(fmt::format("{}:{}: expected {} fields, got {}", meas.source, row.line, meas.header.size(),
                                   row.fields.size()));
    const std::string& id = row.fields[*id_col];
    auto it = station_row.find(id);
    if (it == station_row.end())
      throw ReferentialError(
          fmt::format("{}:{}: station '{}' is not listed in {}", meas.source, row.line, id, stations.source));
    const std::string& time_text = row.fields[*time_col];
    std::int64_t t;
    if (kind == TimeKind::kIndex) {
      auto v = csv::parse_int(time_text);
      if (!v) throw ParseError(fmt::format("{}:{}: bad integer time '{}'", meas.source, row.line, time_text));
      t = *v;
    } else {
      auto v = parse_iso8601(time_text);
      if (!v) throw ParseError(fmt::format("{}:{}: bad ISO-8601 time '{}'", meas.source, row.line, time_text));
      t = *v;
    }
    const std::string& value_text = row.fields[*value_col];
    double value = std::numeric_limits<double>::quiet_NaN();
    if (!value_text.empty()) {
      auto v = csv::parse_double(value_text);
      if (!v) throw ParseError(fmt::format("{}:{}: non-numeric value '{}'", meas.source, row.line, value_text));
      value = *v;
      if (std::isinf(value)) throw ParseError(fmt::format("{}:{}: infinite value", meas.source, row.line));
    }
    records.push_back({it->second, t, value, row.line});
  }

  std::vector<std::int64_t> times;
  times.reserve(records.size());
  for (const auto& r : records) times.push_back(r.time);
  std::sort(times.begin(), times.end());
  times.erase(std::unique(times.begin(), times.end()), times.end());
  if (times.size() > 2) {
    const std::int64_t step = times[1] - times[0];
    for (std::size_t j = 2; j < times.size(); ++j)
      if (times[j] - times[j - 1] != step)
        throw ParseError(fmt::format("{}: irregular time axis (step {} then {} at {})", meas.source, step,
                                     times[j] - times[j - 1], j));
  }
  ds.times.kind = kind;
  ds.times.values = times;

  const Index s = ds.coords.rows();
  const Index t_count = static_cast<Index>(times.size());
  ds.values = Matrix::Constant(s, t_count, std::numeric_limits<double>::quiet_NaN());
  std::vector<char> filled(static_cast<std::size_t>(s * t_count), 0);
  for (const auto& r : records) {
    const Index j = std::lower_bound(times.begin(), times.end(), r.time) - times.begin();
    auto& flag = filled[static_cast<std::size_t>(r.station * t_count + j)];
    if (flag)
      throw DuplicateKeyError(fmt::format("{}:{}: duplicate measurement for station '{}' at time {}", meas.source,
                                          r.line, ds.station_ids[static_cast<std::size_t>(r.station)],
                                          ds.times.label(j)));
    flag = 1;
    ds.values(r.station, j) = r.value;
  }
  ds.validate();
  return ds;
}

void write_csv(const StationDataset& ds, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  {
    std::ofstream out(dir / "stations.csv", std::ios::binary);
    if (!out) throw IoError(fmt::format("cannot write {}", (dir / "stations.csv").string()));
    out << "station_id";
    for (const auto& name : ds.covariate_names) out << ',' << name;
    out << '\n';
    for (Index i = 0; i < ds.num_stations(); ++i) {
      out << ds.station_ids[static_cast<std::size_t>(i)];
      for (Index c = 0; c < ds.num_covariates(); ++c) out << ',' << csv::format_double(ds.coords(i, c));
      out << '\n';
    }
  }
  std::ofstream out(dir / "measurements.csv", std::ios::binary);
  if (!out) throw IoError(fmt::format("cannot write {}", (dir / "measurements.csv").string()));
  out << "station_id,time,value\n";
  std::vector<std::string> labels;
  labels.reserve(static_cast<std::size_t>(ds.num_times()));
  for (Index j = 0; j < ds.num_times(); ++j) labels.push_back(ds.times.label(j));
  std::string line;
  for (Index i = 0; i < ds.num_stations(); ++i) {
    const auto& id = ds.station_ids[static_cast<std::size_t>(i)];
    for (Index j = 0; j < ds.num_times(); ++j) {
      line = id;
      line.push_back(',');
      line += labels[static_cast<std::size_t>(j)];
      line.push_back(',');
      const double v = ds.values(i, j);
      if (!std::isnan(v)) line += csv::format_double(v);
      line.push_back('\n');
      out << line;
    }
  }
}

std::vector<Index> imputation_neighbours(const StationDataset& ds, Index i) {
  std::vector<Index> others;
  for (Index k = 0; k < ds.num_stations(); ++k)
    if (k != i) others.push_back(k);
  std::vector<double> dist(static_cast<std::size_t>(ds.num_stations()));
  for (Index k : others) dist[static_cast<std::size_t>(k)] = squared_distance(ds.coords, i, k);
  const Index keep = std::min<Index>(kImputationNeighbours, static_cast<Index>(others.size()));
  std::partial_sort(others.begin(), others.begin() + keep, others.end(), [&](Index a, Index b) {
    const double da = dist[static_cast<std::size_t>(a)], db = dist[static_cast<std::size_t>(b)];
    if (da != db) return da < db;
    return ds.station_ids[static_cast<std::size_t>(a)] < ds.station_ids[static_cast<std::size_t>(b)];
  });
  others.resize(static_cast<std::size_t>(keep));
  return others;
}

StationDataset impute_missing(const StationDataset& ds) {
  StationDataset out = ds;
  if (ds.missing_count() == 0) return out;
  const Index t_count = ds.num_times();
  std::vector<std::string> failures;
  for (Index i = 0; i < ds.num_stations(); ++i) {
    if (!ds.values.row(i).array().isNaN().any()) continue;
    const auto neighbours = imputation_neighbours(ds, i);
    for (Index j = 0; j < t_count; ++j) {
      if (!std::isnan(ds.values(i, j))) continue;
      double sum = 0.0;
      Index count = 0;
      for (Index jj = std::max<Index>(0, j - 1); jj <= std::min(t_count - 1, j + 1); ++jj) {
        for (Index k : neighbours) {
          const double v = ds.values(k, jj);
          if (!std::isnan(v)) {
            sum += v;
            ++count;
          }
        }
      }
      if (count == 0) {
        failures.push_back(fmt::format("({}, {})", ds.station_ids[static_cast<std::size_t>(i)], ds.times.label(j)));
        continue;
      }
      out.values(i, j) = sum / static_cast<double>(count);
    }
  }
  if (!failures.empty()) {
    std::string list;
    for (std::size_t n = 0; n < failures.size() && n < 20; ++n) list += (n ? ", " : "") + failures[n];
    if (failures.size() > 20) list += fmt::format(", ... ({} total)", failures.size());
    throw ImputationError("no observed neighbours for cells " + list);
  }
  return out;
}

std::array<Index, 3> split_sizes(Index num_stations, const std::array<double, 3>& fractions) {
  double total = 0.0;
  for (double f : fractions) {
    if (!(f >= 0.0) || !std::isfinite(f)) throw ConfigError("split fractions must be nonnegative");
    total += f;
  }
  if (std::abs(total - 1.0) > 1e-9) throw ConfigError(fmt::format("split fractions sum to {}, not 1", total));
  std::array<Index, 3> sizes{};
  std::array<double, 3> remainder{};
  Index assigned = 0;
  for (std::size_t k = 0; k < 3; ++k) {
    const double raw = fractions[k] * static_cast<double>(num_stations);
    sizes[k] = static_cast<Index>(std::floor(raw));
    remainder[k] = raw - std::floor(raw);
    assigned += sizes[k];
  }
  std::array<std::size_t, 3> order{0, 1, 2};
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return remainder[a] > remainder[b]; });
  for (std::size_t n = 0; assigned < num_stations; n = (n + 1) % 3) {
    ++sizes[order[n]];
    ++assigned;
  }
  return sizes;
}

SplitResult split_stations(const StationDataset& ds, const std::array<double, 3>& fractions, std::uint64_t seed) {
  const auto sizes = split_sizes(ds.num_stations(), fractions);
  static constexpr const char* kNames[] = {"training", "validation", "test"};
  for (std::size_t k = 0; k < 3; ++k)
    if (sizes[k] == 0) throw ConfigError(fmt::format("split leaves the {} subset empty", kNames[k]));

  // Canonical order by station id makes the result independent of input row order.
  std::vector<Index> order(static_cast<std::size_t>(ds.num_stations()));
  std::iota(order.begin(), order.end(), Index{0});
  auto by_id = [&](Index a, Index b) {
    return ds.station_ids[static_cast<std::size_t>(a)] < ds.station_ids[static_cast<std::size_t>(b)];
  };
  std::sort(order.begin(), order.end(), by_id);
  Rng rng(seed);
  rng.shuffle(order);

  SplitResult result;
  result.spec.rng_seed = seed;
  auto begin = order.begin();
  std::vector<Index>* targets[] = {&result.spec.train, &result.spec.validation, &result.spec.test};
  for (std::size_t k = 0; k < 3; ++k) {
    targets[k]->assign(begin, begin + sizes[k]);
    std::sort(targets[k]->begin(), targets[k]->end(), by_id);
    begin += sizes[k];
  }
  result.train = ds.subset(result.spec.train);
  result.validation = ds.subset(result.spec.validation);
  result.test = ds.subset(result.spec.test);
  return result;
}

CenteredDataset center(const StationDataset& ds) {
  if (ds.missing_count() > 0)
    throw PreconditionError(fmt::format("cannot center: {} missing values present", ds.missing_count()));
  if (ds.num_stations() == 0) throw PreconditionError("cannot center an empty dataset");
  CenteredDataset out;
  out.station_ids = ds.station_ids;
  out.times = ds.times;
  out.mean_series = ds.values.colwise().mean().transpose();
  out.centered = ds.values.rowwise() - out.mean_series.transpose();
  return out;
}

Standardizer Standardizer::fit(const Matrix& covariates) {
  Standardizer s;
  const auto n = static_cast<double>(covariates.rows());
  s.mean = covariates.colwise().mean().transpose();
  s.scale.resize(covariates.cols());
  for (Index c = 0; c < covariates.cols(); ++c) {
    const double var = (covariates.col(c).array() - s.mean(c)).square().sum() / std::max(1.0, n);
    s.scale(c) = var > 0.0 ? std::sqrt(var) : 1.0;
  }
  return s;
}

Matrix Standardizer::apply(const Matrix& covariates) const {
  if (covariates.cols() != mean.size())
    throw ShapeError(fmt::format("expected {} covariates, got {}", mean.size(), covariates.cols()));
  Matrix out(covariates.rows(), covariates.cols());
  for (Index i = 0; i < covariates.rows(); ++i)
    for (Index c = 0; c < covariates.cols(); ++c) out(i, c) = (covariates(i, c) - mean(c)) / scale(c);
  return out;
}

}  // namespace eofnet
