#include "eofnet/pipeline.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <fstream>
#include <functional>
#include <limits>
#include <map>
#include <ostream>
#include <set>
#include <sstream>

#include <fmt/format.h>
#include <json.hpp>

#include "eofnet/csv.hpp"
#include "eofnet/errors.hpp"
#include "eofnet/hash.hpp"
#include "eofnet/heatmap.hpp"
#include "eofnet/rng.hpp"

namespace eofnet {

namespace fs = std::filesystem;
using nlohmann::json;
using nlohmann::ordered_json;

namespace {

// ---- config parsing ----

class ConfigReader {
 public:
  explicit ConfigReader(std::string source) : source_(std::move(source)) {}

  void require_object(const json& j, const std::string& where) const {
    if (!j.is_object()) throw ConfigError(fmt::format("{}: '{}' must be an object", source_, where));
  }

  void check_keys(const json& j, std::initializer_list<const char*> allowed, const std::string& where) const {
    require_object(j, where);
    for (const auto& [key, value] : j.items()) {
      bool known = false;
      for (const char* a : allowed) known = known || key == a;
      if (!known) throw ConfigError(fmt::format("{}: unknown key '{}' in '{}'", source_, key, where));
    }
  }

  template <typename T>
  void read(const json& j, const char* key, T& out, const std::string& where) const {
    if (!j.contains(key)) return;
    try {
      out = j.at(key).get<T>();
    } catch (const json::exception&) {
      throw ConfigError(fmt::format("{}: '{}.{}' has the wrong type", source_, where, key));
    }
  }

  fs::path path(const json& j, const char* key, const fs::path& base, const std::string& where) const {
    std::string text;
    read(j, key, text, where);
    if (text.empty()) throw ConfigError(fmt::format("{}: '{}.{}' is required", source_, where, key));
    fs::path p(text);
    return p.is_absolute() ? p : base / p;
  }

  const std::string& source() const { return source_; }

 private:
  std::string source_;
};

GrfMethod parse_method(const std::string& s, const std::string& source) {
  if (s == "auto") return GrfMethod::kAuto;
  if (s == "cholesky") return GrfMethod::kCholesky;
  if (s == "circulant") return GrfMethod::kCirculantEmbedding;
  throw ConfigError(fmt::format("{}: unknown field method '{}' (auto, cholesky, circulant)", source, s));
}

const char* method_name(GrfMethod m) {
  switch (m) {
    case GrfMethod::kCholesky: return "cholesky";
    case GrfMethod::kCirculantEmbedding: return "circulant";
    default: return "auto";
  }
}

void parse_model(const ConfigReader& r, const json& j, MlpConfig& m) {
  r.check_keys(j,
               {"hidden_layers", "width", "batch_size", "max_epochs", "patience", "early_stopping", "batch_norm",
                "bn_momentum", "bn_epsilon", "max_lr", "warmup_fraction", "initial_div", "final_div", "beta1",
                "beta2", "epsilon"},
               "model");
  r.read(j, "hidden_layers", m.hidden_layers, "model");
  r.read(j, "width", m.width, "model");
  r.read(j, "batch_size", m.batch_size, "model");
  r.read(j, "max_epochs", m.max_epochs, "model");
  r.read(j, "patience", m.patience, "model");
  r.read(j, "early_stopping", m.early_stopping, "model");
  r.read(j, "batch_norm", m.batch_norm, "model");
  r.read(j, "bn_momentum", m.batch_norm_params.momentum, "model");
  r.read(j, "bn_epsilon", m.batch_norm_params.epsilon, "model");
  r.read(j, "max_lr", m.schedule.max_lr, "model");
  r.read(j, "warmup_fraction", m.schedule.warmup_fraction, "model");
  r.read(j, "initial_div", m.schedule.initial_div, "model");
  r.read(j, "final_div", m.schedule.final_div, "model");
  r.read(j, "beta1", m.nadam.beta1, "model");
  r.read(j, "beta2", m.nadam.beta2, "model");
  r.read(j, "epsilon", m.nadam.epsilon, "model");
}

void parse_simulation(const ConfigReader& r, const json& j, SimulationInput& s) {
  r.check_keys(j,
               {"nx", "ny", "cell_size", "n_components", "t_len", "noise_ratio", "phi", "innovation_sd",
                "length_scale", "method", "stations"},
               "simulation");
  r.read(j, "nx", s.nx, "simulation");
  r.read(j, "ny", s.ny, "simulation");
  r.read(j, "cell_size", s.cell_size, "simulation");
  r.read(j, "n_components", s.params.n_components, "simulation");
  r.read(j, "t_len", s.params.t_len, "simulation");
  r.read(j, "noise_ratio", s.params.noise_ratio, "simulation");
  r.read(j, "phi", s.params.phi, "simulation");
  r.read(j, "innovation_sd", s.params.innovation_sd, "simulation");
  r.read(j, "length_scale", s.params.length_scale, "simulation");
  std::string method = method_name(s.params.method);
  r.read(j, "method", method, "simulation");
  s.params.method = parse_method(method, r.source());
  r.read(j, "stations", s.stations, "simulation");
}

void parse_data(const ConfigReader& r, const json& j, const fs::path& base, RunConfig& c) {
  r.require_object(j, "data");
  const bool single = j.contains("stations") || j.contains("measurements");
  const bool dirs = j.contains("train") || j.contains("validation") || j.contains("test");
  if (single == dirs)
    throw ConfigError(fmt::format("{}: 'data' needs either stations/measurements or train/validation/test",
                                  r.source()));
  if (single) {
    r.check_keys(j, {"stations", "measurements", "split", "grid"}, "data");
    CsvInput in;
    in.stations = r.path(j, "stations", base, "data");
    in.measurements = r.path(j, "measurements", base, "data");
    r.read(j, "split", in.split, "data");
    c.csv = in;
  } else {
    r.check_keys(j, {"train", "validation", "test", "grid"}, "data");
    c.split_dirs = SplitDirsInput{r.path(j, "train", base, "data"), r.path(j, "validation", base, "data"),
                                  r.path(j, "test", base, "data")};
  }
  if (j.contains("grid")) c.grid = r.path(j, "grid", base, "data");
}

// ---- artifact helpers ----

std::ofstream open_out(const fs::path& path) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError(fmt::format("cannot write {}", path.string()));
  return out;
}

std::string file_label(const std::string& s) {
  std::string out;
  for (char c : s) out += std::isalnum(static_cast<unsigned char>(c)) || c == '_' ? c : '-';
  return out;
}

std::vector<double> column_values(const csv::Table& t, std::size_t col) {
  std::vector<double> out;
  out.reserve(t.rows.size());
  for (const auto& row : t.rows) {
    const std::string& f = col < row.fields.size() ? row.fields[col] : std::string();
    const auto v = csv::parse_double(f);
    out.push_back(v ? *v : std::numeric_limits<double>::quiet_NaN());
  }
  return out;
}

// Every artifact of a run, relative to the output directory.
class ArtifactSet {
 public:
  explicit ArtifactSet(fs::path root) : root_(std::move(root)) {}

  fs::path add(const std::string& rel) {
    files_.insert(rel);
    return root_ / rel;
  }
  void add_tree(const std::string& rel) {
    for (const auto& e : fs::recursive_directory_iterator(root_ / rel))
      if (e.is_regular_file()) files_.insert(fs::relative(e.path(), root_).generic_string());
  }
  const std::set<std::string>& files() const { return files_; }
  const fs::path& root() const { return root_; }

 private:
  fs::path root_;
  std::set<std::string> files_;
};

void write_manifest(const ArtifactSet& artifacts, const RunSummary* summary, std::uint64_t seed,
                    const std::string& command) {
  ordered_json m;
  m["command"] = command;
  m["status"] = summary == nullptr || summary->ok ? "ok" : "FAILED";
  m["seed"] = seed;
  if (summary != nullptr) {
    if (!summary->ok) m["error"] = summary->error;
    auto stages = ordered_json::array();
    for (const auto& s : summary->stages) {
      ordered_json e{{"name", s.name}, {"status", s.status}};
      if (!s.message.empty()) e["message"] = s.message;
      stages.push_back(e);
    }
    m["stages"] = stages;
  }
  auto list = ordered_json::array();
  for (const auto& rel : artifacts.files()) {
    const fs::path p = artifacts.root() / rel;
    if (!fs::exists(p)) continue;
    list.push_back({{"path", rel}, {"sha256", sha256_file(p)}, {"bytes", fs::file_size(p)}});
  }
  m["artifacts"] = list;
  open_out(artifacts.root() / "manifest.json") << m.dump(2) << '\n';
}

// Removes the artifacts of an earlier run in the same directory.
void remove_previous_artifacts(const fs::path& dir) {
  const fs::path manifest = dir / "manifest.json";
  if (!fs::exists(manifest)) return;
  try {
    std::ifstream in(manifest);
    const json m = json::parse(in);
    for (const auto& a : m.at("artifacts")) fs::remove(dir / a.at("path").get<std::string>());
  } catch (const json::exception&) {
  }
  fs::remove(manifest);
}

class StageRunner {
 public:
  StageRunner(RunSummary& summary, std::ostream* log) : summary_(summary), log_(log) {}

  bool failed() const { return failed_; }

  void run(const std::string& name, const std::function<std::string()>& body) {
    if (failed_) return not_run(name);
    const auto start = std::chrono::steady_clock::now();
    StageRecord rec{name, "ok", 0.0, {}};
    try {
      rec.message = body();
    } catch (const std::exception& e) {
      rec.status = "FAILED";
      rec.message = e.what();
      failed_ = true;
      summary_.error = fmt::format("{}: {}", name, e.what());
    }
    rec.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    if (log_) {
      *log_ << fmt::format("[{:<9}] {} ({:.2f} s)", name, rec.status, rec.seconds);
      if (!rec.message.empty()) *log_ << ": " << rec.message;
      *log_ << '\n';
    }
    summary_.stages.push_back(std::move(rec));
  }

  void skip(const std::string& name, const std::string& why) {
    if (failed_) return not_run(name);
    if (log_) *log_ << fmt::format("[{:<9}] skipped: {}\n", name, why);
    summary_.stages.push_back({name, "skipped", 0.0, why});
  }

 private:
  void not_run(const std::string& name) { summary_.stages.push_back({name, "skipped", 0.0, "earlier stage failed"}); }

  RunSummary& summary_;
  std::ostream* log_;
  bool failed_ = false;
};

GridSpec simulation_grid(const SimulationInput& s) {
  GridSpec g;
  g.nx = s.nx;
  g.ny = s.ny;
  g.cell_size = s.cell_size;
  return g;
}

void write_split_csv(const SplitResult& split, const fs::path& path) {
  auto out = open_out(path);
  out << "station_id,set\n";
  for (const auto& [ds, name] : {std::pair{&split.train, "train"}, std::pair{&split.validation, "validation"},
                                 std::pair{&split.test, "test"}})
    for (const auto& id : ds->station_ids) out << id << ',' << name << '\n';
}

StationDataset with_values(const StationDataset& ds, Matrix values) {
  StationDataset out = ds;
  out.values = std::move(values);
  return out;
}

}  // namespace

// ---- config ----

void RunConfig::validate() const {
  const int sources = int(csv.has_value()) + int(split_dirs.has_value()) + int(simulation.has_value());
  if (sources != 1) throw ConfigError("exactly one of data (stations/measurements or split directories) and simulation must be given");
  if (output.empty()) throw ConfigError("no output directory");
  if (csv) {
    double sum = 0.0;
    for (double f : csv->split) {
      if (!(f >= 0.0)) throw ConfigError("split fractions must be nonnegative");
      sum += f;
    }
    if (std::abs(sum - 1.0) > 1e-9) throw ConfigError(fmt::format("split fractions sum to {}, not 1", sum));
    if (csv->split[0] <= 0.0) throw ConfigError("split has no training stations");
    if (csv->split[1] <= 0.0) throw ConfigError("split has no validation stations");
    if (csv->split[2] <= 0.0) throw ConfigError("split has no test stations");
  }
  if (simulation) {
    const auto& s = *simulation;
    if (s.nx < 1 || s.ny < 1) throw ConfigError("simulation grid must have at least one cell per axis");
    if (!(s.cell_size > 0.0)) throw ConfigError("cell_size must be positive");
    if (s.params.n_components < 1) throw ConfigError("n_components must be at least 1");
    if (s.params.t_len < 2) throw ConfigError("t_len must be at least 2");
    if (!(std::abs(s.params.phi) < 1.0)) throw ConfigError("AR(1) phi must satisfy |phi| < 1");
    if (!(s.params.innovation_sd > 0.0)) throw ConfigError("innovation_sd must be positive");
    if (!(s.params.noise_ratio >= 0.0)) throw ConfigError("noise_ratio must be nonnegative");
    if (!(s.params.length_scale > 0.0)) throw ConfigError("length_scale must be positive");
    if (s.stations[0] < 1) throw ConfigError("simulation has no training stations");
    if (s.stations[1] < 1) throw ConfigError("simulation has no validation stations");
    if (s.stations[2] < 1) throw ConfigError("simulation has no test stations");
    if (s.stations[0] + s.stations[1] + s.stations[2] > s.nx * s.ny)
      throw ConfigError("more stations requested than grid cells");
  }
  if (const auto* v = std::get_if<VarianceThreshold>(&truncation)) {
    if (!(v->fraction > 0.0 && v->fraction <= 1.0)) throw ConfigError("variance threshold must be in (0, 1]");
  } else if (std::get<FixedComponents>(truncation).count < 1) {
    throw ConfigError("component count must be at least 1");
  }
  model.validate();
  if (variogram.space_bins < 1) throw ConfigError("variogram needs at least one spatial bin");
  if (variogram.max_lag < 0) throw ConfigError("variogram max_lag must be nonnegative");
  if (!(variogram.subsample > 0.0 && variogram.subsample <= 1.0))
    throw ConfigError("variogram subsample must be in (0, 1]");
  if (outputs.snapshots < 0 || outputs.max_coefficient_maps < 0)
    throw ConfigError("output counts must be nonnegative");
}

RunConfig parse_run_config(const std::string& text, const fs::path& base_dir, const std::string& source) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::parse_error& e) {
    throw ConfigError(fmt::format("{}: {}", source, e.what()));
  }
  const ConfigReader r(source);
  r.check_keys(j,
               {"seed", "output", "data", "simulation", "truncation", "decompose_on", "model", "baseline",
                "variogram", "outputs"},
               "<root>");
  RunConfig c;
  r.read(j, "seed", c.seed, "<root>");
  std::string output;
  r.read(j, "output", output, "<root>");
  c.output = output;
  if (j.contains("data")) parse_data(r, j.at("data"), base_dir, c);
  if (j.contains("simulation")) {
    SimulationInput s;
    parse_simulation(r, j.at("simulation"), s);
    c.simulation = s;
  }
  if (j.contains("truncation")) {
    const json& t = j.at("truncation");
    r.check_keys(t, {"variance", "components"}, "truncation");
    if (t.contains("variance") == t.contains("components"))
      throw ConfigError(fmt::format("{}: truncation needs exactly one of 'variance' and 'components'", source));
    if (t.contains("variance")) {
      double f = 0.0;
      r.read(t, "variance", f, "truncation");
      c.truncation = VarianceThreshold{f};
    } else {
      Index k = 0;
      r.read(t, "components", k, "truncation");
      c.truncation = FixedComponents{k};
    }
  }
  if (j.contains("decompose_on")) {
    std::string d;
    r.read(j, "decompose_on", d, "<root>");
    if (d == "train")
      c.decompose_on = DecomposeOn::kTrain;
    else if (d == "train+validation")
      c.decompose_on = DecomposeOn::kTrainValidation;
    else
      throw ConfigError(fmt::format("{}: decompose_on must be 'train' or 'train+validation'", source));
  }
  if (j.contains("model")) parse_model(r, j.at("model"), c.model);
  r.read(j, "baseline", c.baseline, "<root>");
  if (j.contains("variogram")) {
    const json& v = j.at("variogram");
    r.check_keys(v, {"enabled", "space_bins", "max_lag", "subsample"}, "variogram");
    r.read(v, "enabled", c.variogram.enabled, "variogram");
    r.read(v, "space_bins", c.variogram.space_bins, "variogram");
    r.read(v, "max_lag", c.variogram.max_lag, "variogram");
    r.read(v, "subsample", c.variogram.subsample, "variogram");
  }
  if (j.contains("outputs")) {
    const json& o = j.at("outputs");
    r.check_keys(o, {"images", "full_field", "snapshots", "max_coefficient_maps"}, "outputs");
    r.read(o, "images", c.outputs.images, "outputs");
    r.read(o, "full_field", c.outputs.full_field, "outputs");
    r.read(o, "snapshots", c.outputs.snapshots, "outputs");
    r.read(o, "max_coefficient_maps", c.outputs.max_coefficient_maps, "outputs");
  }
  return c;
}

RunConfig load_run_config(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ConfigError(fmt::format("cannot read config {}", path.string()));
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_run_config(ss.str(), fs::absolute(path).parent_path(), path.string());
}

std::string run_config_json(const RunConfig& c) {
  ordered_json j;
  j["seed"] = c.seed;
  if (c.csv) {
    j["data"] = {{"stations", c.csv->stations.generic_string()},
                 {"measurements", c.csv->measurements.generic_string()},
                 {"split", c.csv->split}};
  } else if (c.split_dirs) {
    j["data"] = {{"train", c.split_dirs->train.generic_string()},
                 {"validation", c.split_dirs->validation.generic_string()},
                 {"test", c.split_dirs->test.generic_string()}};
  }
  if (c.grid) j["data"]["grid"] = c.grid->generic_string();
  if (c.simulation) {
    const auto& s = *c.simulation;
    j["simulation"] = {{"nx", s.nx},
                       {"ny", s.ny},
                       {"cell_size", s.cell_size},
                       {"n_components", s.params.n_components},
                       {"t_len", s.params.t_len},
                       {"noise_ratio", s.params.noise_ratio},
                       {"phi", s.params.phi},
                       {"innovation_sd", s.params.innovation_sd},
                       {"length_scale", s.params.length_scale},
                       {"method", method_name(s.params.method)},
                       {"stations", s.stations}};
  }
  if (const auto* v = std::get_if<VarianceThreshold>(&c.truncation))
    j["truncation"] = {{"variance", v->fraction}};
  else
    j["truncation"] = {{"components", std::get<FixedComponents>(c.truncation).count}};
  j["decompose_on"] = c.decompose_on == DecomposeOn::kTrain ? "train" : "train+validation";
  const auto& m = c.model;
  j["model"] = {{"hidden_layers", m.hidden_layers},
                {"width", m.width},
                {"batch_size", m.batch_size},
                {"max_epochs", m.max_epochs},
                {"patience", m.patience},
                {"early_stopping", m.early_stopping},
                {"batch_norm", m.batch_norm},
                {"bn_momentum", m.batch_norm_params.momentum},
                {"bn_epsilon", m.batch_norm_params.epsilon},
                {"max_lr", m.schedule.max_lr},
                {"warmup_fraction", m.schedule.warmup_fraction},
                {"initial_div", m.schedule.initial_div},
                {"final_div", m.schedule.final_div},
                {"beta1", m.nadam.beta1},
                {"beta2", m.nadam.beta2},
                {"epsilon", m.nadam.epsilon}};
  j["baseline"] = c.baseline;
  j["variogram"] = {{"enabled", c.variogram.enabled},
                    {"space_bins", c.variogram.space_bins},
                    {"max_lag", c.variogram.max_lag},
                    {"subsample", c.variogram.subsample}};
  j["outputs"] = {{"images", c.outputs.images},
                  {"full_field", c.outputs.full_field},
                  {"snapshots", c.outputs.snapshots},
                  {"max_coefficient_maps", c.outputs.max_coefficient_maps}};
  return j.dump(2) + "\n";
}

StageSeeds stage_seeds(std::uint64_t root) {
  return {derive_seed(root, "simulation"), derive_seed(root, "stations"), derive_seed(root, "split"),
          derive_seed(root, "model"), derive_seed(root, "variogram")};
}

double RunSummary::stage_seconds(const std::string& name) const {
  for (const auto& s : stages)
    if (s.name == name) return s.seconds;
  return 0.0;
}

// ---- artifact writers ----

void write_explained_variance_csv(const EofBasis& basis, const fs::path& path) {
  const Vector ev = explained_variance(basis);
  const Vector cum = cumulative_explained_variance(basis);
  auto out = open_out(path);
  out << "k,singular_value,explained_variance,cumulative\n";
  for (Index k = 0; k < ev.size(); ++k)
    out << (k + 1) << ',' << csv::format_double(basis.singular_values(k)) << ',' << csv::format_double(ev(k)) << ','
        << csv::format_double(cum(k)) << '\n';
}

void write_coefficient_maps_csv(const GridSpec& grid, const Matrix& coeff_maps, Index max_maps, const fs::path& path) {
  if (coeff_maps.rows() != grid.num_cells()) throw ShapeError("coefficient maps do not match the grid");
  const Index m = std::min(max_maps, coeff_maps.cols());
  auto out = open_out(path);
  out << "x,y";
  for (Index k = 0; k < m; ++k) out << ",alpha_" << (k + 1);
  out << '\n';
  for (Index iy = 0; iy < grid.ny; ++iy)
    for (Index ix = 0; ix < grid.nx; ++ix) {
      const Index c = iy * grid.nx + ix;
      out << csv::format_double(grid.x(ix)) << ',' << csv::format_double(grid.y(iy));
      for (Index k = 0; k < m; ++k) out << ',' << csv::format_double(coeff_maps(c, k));
      out << '\n';
    }
}

void write_field_csv(const GridSpec& grid, const Matrix& field, const TimeAxis& times,
                     const std::vector<Index>& columns, const fs::path& path) {
  if (field.rows() != grid.num_cells()) throw ShapeError("field does not match the grid");
  auto out = open_out(path);
  out << "x,y";
  for (Index j : columns) out << ',' << times.label(j);
  out << '\n';
  for (Index iy = 0; iy < grid.ny; ++iy)
    for (Index ix = 0; ix < grid.nx; ++ix) {
      const Index c = iy * grid.nx + ix;
      out << csv::format_double(grid.x(ix)) << ',' << csv::format_double(grid.y(iy));
      for (Index j : columns) out << ',' << csv::format_double(field(c, j));
      out << '\n';
    }
}

void write_nugget_sill_csv(const std::vector<std::pair<std::string, const VariogramSurface*>>& surfaces,
                       const fs::path& path) {
  auto out = open_out(path);
  out << "surface,nugget,sill,nugget_h,nugget_tau,flatness_ratio\n";
  for (const auto& [name, v] : surfaces) {
    const auto ns = nugget_and_sill_summary(*v);
    out << name << ',' << csv::format_double(ns.nugget) << ',' << csv::format_double(ns.sill) << ','
        << csv::format_double(v->space_bins[static_cast<std::size_t>(ns.nugget_cell.first)].center) << ','
        << csv::format_double(v->time_lags[static_cast<std::size_t>(ns.nugget_cell.second)].center) << ','
        << csv::format_double(flatness_ratio(*v)) << '\n';
  }
}

std::vector<Index> snapshot_columns(Index num_times, Index count) {
  std::vector<Index> out;
  if (num_times < 1 || count < 1) return out;
  if (count == 1) return {0};
  for (Index i = 0; i < count; ++i) {
    const Index j = static_cast<Index>(
        std::llround(static_cast<double>(i) * static_cast<double>(num_times - 1) / static_cast<double>(count - 1)));
    if (out.empty() || out.back() != j) out.push_back(j);
  }
  return out;
}

std::vector<std::string> render_images(const fs::path& run_dir, const fs::path& image_dir) {
  std::vector<std::string> written;
  auto render = [&](const HeatmapData& d, const std::string& title, const std::string& xl, const std::string& yl,
                    const std::string& name) {
    fs::create_directories(image_dir);
    write_heatmap_svg(d, title, xl, yl, image_dir / name);
    written.push_back(name);
  };

  struct MapSource {
    const char* file;
    const char* prefix;
    const char* title;
  };
  for (const MapSource& src : {MapSource{"coeff_maps.csv", "coeff_map_", "Predicted spatial coefficient {}"},
                               MapSource{"field_snapshots.csv", "field_", "Predicted field at t = {}"},
                               MapSource{"truth_snapshots.csv", "truth_", "True noise-free field at t = {}"}}) {
    const fs::path path = run_dir / src.file;
    if (!fs::exists(path)) continue;
    const auto table = csv::read(path);
    if (table.header.size() < 3 || table.header[0] != "x" || table.header[1] != "y")
      throw ParseError(fmt::format("{}: expected header x,y,...", table.source));
    HeatmapData d;
    d.x = column_values(table, 0);
    d.y = column_values(table, 1);
    for (std::size_t c = 2; c < table.header.size(); ++c) {
      d.value = column_values(table, c);
      render(d, fmt::format(fmt::runtime(src.title), table.header[c]), "x", "y",
             fmt::format("{}{}.svg", src.prefix, file_label(table.header[c])));
    }
  }
  for (const char* which : {"data", "model", "residual"}) {
    const fs::path path = run_dir / fmt::format("variogram_{}.csv", which);
    if (!fs::exists(path)) continue;
    const auto table = csv::read(path);
    const auto h = table.column("h_center"), tau = table.column("tau_center"), g = table.column("gamma");
    if (!h || !tau || !g) throw ParseError(fmt::format("{}: expected h_center,tau_center,gamma", table.source));
    render({column_values(table, *h), column_values(table, *tau), column_values(table, *g)},
           fmt::format("Semivariogram ({})", which), "h", "tau", fmt::format("variogram_{}.svg", which));
  }
  return written;
}

// ---- commands ----

void simulate_to_directory(const RunConfig& config, std::ostream* log) {
  config.validate();
  if (!config.simulation) throw ConfigError("simulate needs a 'simulation' section");
  const auto seeds = stage_seeds(config.seed);
  const auto& sim = *config.simulation;
  SimulationParams params = sim.params;
  params.seed = seeds.simulation;
  const GridSpec grid = simulation_grid(sim);
  const SyntheticTruth truth = synthesize(grid, params);
  const auto sampled = sample_stations(truth, sim.stations[0], sim.stations[1], sim.stations[2], seeds.stations);

  fs::create_directories(config.output);
  remove_previous_artifacts(config.output);
  ArtifactSet artifacts(config.output);
  for (const auto& [ds, name] : {std::pair{&sampled.train, "train"}, std::pair{&sampled.validation, "val"},
                                 std::pair{&sampled.test, "test"}}) {
    write_csv(*ds, config.output / name);
    artifacts.add(fmt::format("{}/stations.csv", name));
    artifacts.add(fmt::format("{}/measurements.csv", name));
  }
  write_truth(truth, config.output / "truth");
  artifacts.add_tree("truth");
  open_out(artifacts.add("config.json")) << run_config_json(config);
  write_manifest(artifacts, nullptr, config.seed, "simulate");
  if (log)
    *log << fmt::format("simulated {}x{} grid, T = {}, stations {}/{}/{} -> {}\n", grid.nx, grid.ny,
                        params.t_len, sim.stations[0], sim.stations[1], sim.stations[2], config.output.string());
}

RunSummary run_pipeline(const RunConfig& config, std::ostream* log) {
  RunSummary summary;
  StageRunner stage(summary, log);
  const fs::path out = config.output;
  ArtifactSet artifacts(out);

  StationDataset full, train_ds, val_ds, test_ds;
  std::optional<GridSpec> grid;
  std::optional<SyntheticTruth> truth;
  std::vector<Index> dir_sizes;
  const auto seeds = stage_seeds(config.seed);

  stage.run("config", [&] {
    config.validate();
    fs::create_directories(out);
    remove_previous_artifacts(out);
    open_out(artifacts.add("config.json")) << run_config_json(config);
    return std::string();
  });

  stage.run("load", [&] {
    if (config.simulation) {
      const auto& sim = *config.simulation;
      SimulationParams params = sim.params;
      params.seed = seeds.simulation;
      grid = simulation_grid(sim);
      truth = synthesize(*grid, params);
      auto sampled = sample_stations(*truth, sim.stations[0], sim.stations[1], sim.stations[2], seeds.stations);
      train_ds = std::move(sampled.train);
      val_ds = std::move(sampled.validation);
      test_ds = std::move(sampled.test);
      return fmt::format("simulated {}x{} grid, T = {}", grid->nx, grid->ny, params.t_len);
    }
    if (config.csv) {
      full = load_csv(config.csv->stations, config.csv->measurements);
    } else {
      const auto& d = *config.split_dirs;
      StationDataset parts[3] = {load_csv(d.train / "stations.csv", d.train / "measurements.csv"),
                                 load_csv(d.validation / "stations.csv", d.validation / "measurements.csv"),
                                 load_csv(d.test / "stations.csv", d.test / "measurements.csv")};
      for (const auto& p : parts) dir_sizes.push_back(p.num_stations());
      full = concat(concat(parts[0], parts[1]), parts[2]);
    }
    if (config.grid) grid = load_grid_csv(*config.grid);
    return fmt::format("{} stations, {} time steps, {} missing", full.num_stations(), full.num_times(),
                       full.missing_count());
  });

  if (config.simulation) {
    stage.skip("impute", "simulated data is complete");
  } else {
    stage.run("impute", [&] {
      const Index missing = full.missing_count();
      if (missing == 0) return std::string("no missing values");
      full = impute_missing(full);
      return fmt::format("{} cells filled", missing);
    });
  }

  stage.run("split", [&] {
    SplitResult split;
    if (config.csv) {
      split = split_stations(full, config.csv->split, seeds.split);
    } else if (config.split_dirs) {
      std::vector<Index> rows[3];
      Index next = 0;
      for (int s = 0; s < 3; ++s)
        for (Index i = 0; i < dir_sizes[static_cast<std::size_t>(s)]; ++i) rows[s].push_back(next++);
      split.train = full.subset(rows[0]);
      split.validation = full.subset(rows[1]);
      split.test = full.subset(rows[2]);
      for (const auto* ds : {&split.train, &split.validation, &split.test})
        if (ds->num_stations() == 0) throw ConfigError("a split directory has no stations");
    } else {
      split.train = train_ds;
      split.validation = val_ds;
      split.test = test_ds;
    }
    write_split_csv(split, artifacts.add("split.csv"));
    train_ds = std::move(split.train);
    val_ds = std::move(split.validation);
    test_ds = std::move(split.test);
    full = StationDataset();
    return fmt::format("{}/{}/{} stations", train_ds.num_stations(), val_ds.num_stations(), test_ds.num_stations());
  });

  CenteredDataset centered;
  EofBasis basis;
  TruncatedBasis truncated;
  stage.run("center", [&] {
    centered = center(config.decompose_on == DecomposeOn::kTrain ? train_ds : concat(train_ds, val_ds));
    return fmt::format("{} stations", centered.centered.rows());
  });
  stage.run("decompose", [&] {
    basis = decompose(centered);
    centered = CenteredDataset();
    write_explained_variance_csv(basis, artifacts.add("explained_variance.csv"));
    summary.cumulative_variance = cumulative_explained_variance(basis);
    return fmt::format("K = {}", basis.k_total());
  });
  stage.run("truncate", [&] {
    truncated = truncate(basis, config.truncation);
    save_basis(basis, truncated.k_used(), out / "basis");
    artifacts.add_tree("basis");
    summary.k_used = truncated.k_used();
    return fmt::format("K~ = {}, variance captured {:.6f}", truncated.k_used(), truncated.variance_captured);
  });

  MlpModel model;
  std::optional<BaselineModel> baseline;
  MlpConfig model_config = config.model;
  model_config.seed = seeds.model;
  stage.run("train", [&] {
    auto result = train(train_ds, val_ds, truncated, model_config);
    model = std::move(result.model);
    save_model(model, out / "model");
    artifacts.add_tree("model");
    result.report.write_log(artifacts.add("train_log.csv"));
    return fmt::format("{} epochs, best validation MAE {:.6g} at epoch {}", result.report.stopping_epoch,
                       result.report.best_val_mae, result.report.best_epoch);
  });
  if (config.baseline) {
    stage.run("baseline", [&] {
      auto result = train_single_output_baseline(train_ds, val_ds, truncated, model_config);
      baseline = std::move(result.model);
      save_model(*baseline, out / "baseline");
      artifacts.add_tree("baseline");
      auto log_out = open_out(artifacts.add("baseline_log.csv"));
      log_out << "component,epoch,train_mae,val_mae,lr\n";
      for (std::size_t k = 0; k < result.component_reports.size(); ++k) {
        const auto& r = result.component_reports[k];
        for (std::size_t e = 0; e < r.train_mae.size(); ++e)
          log_out << (k + 1) << ',' << (e + 1) << ',' << csv::format_double(r.train_mae[e]) << ','
                  << csv::format_double(r.val_mae[e]) << ',' << csv::format_double(r.learning_rate[e]) << '\n';
      }
      return fmt::format("{} networks, validation signal MAE {:.6g}", result.component_reports.size(),
                         result.val_signal_mae);
    });
  } else {
    stage.skip("baseline", "not requested");
  }

  std::optional<GridPrediction> grid_pred;
  if (grid) {
    stage.run("predict", [&] {
      grid_pred = predict_grid(model, *grid);
      write_coefficient_maps_csv(*grid, grid_pred->coeff_maps, config.outputs.max_coefficient_maps,
                                 artifacts.add("coeff_maps.csv"));
      const auto cols = snapshot_columns(truncated.num_times(), config.outputs.snapshots);
      if (!cols.empty()) {
        write_field_csv(*grid, grid_pred->field, truncated.times, cols, artifacts.add("field_snapshots.csv"));
        if (truth) {
          Matrix snap(grid->num_cells(), truncated.num_times());
          snap.setZero();
          for (Index j : cols) snap.col(j) = truth->fields * truth->series.col(j);
          write_field_csv(*grid, snap, truncated.times, cols, artifacts.add("truth_snapshots.csv"));
        }
      }
      if (config.outputs.full_field) {
        std::vector<Index> all(static_cast<std::size_t>(truncated.num_times()));
        for (Index j = 0; j < truncated.num_times(); ++j) all[static_cast<std::size_t>(j)] = j;
        write_field_csv(*grid, grid_pred->field, truncated.times, all, artifacts.add("field.csv"));
      }
      return fmt::format("{} cells", grid->num_cells());
    });
  } else {
    stage.skip("predict", "no grid configured");
  }

  Matrix test_pred;
  stage.run("evaluate", [&] {
    auto metrics = open_out(artifacts.add("metrics.csv"));
    metrics << "model,split,mae\n";
    auto emit = [&](const char* name, const auto& m) {
      for (const auto& [ds, split] : {std::pair{&train_ds, "train"}, std::pair{&val_ds, "validation"},
                                      std::pair{&test_ds, "test"}}) {
        Matrix signal = forward(m, ds->coords).signal;
        const double mae = evaluate_mae(signal, ds->values);
        metrics << name << ',' << split << ',' << csv::format_double(mae) << '\n';
        if (ds == &test_ds) {
          if constexpr (std::is_same_v<std::decay_t<decltype(m)>, MlpModel>) {
            summary.test_mae = mae;
            test_pred = std::move(signal);
          } else {
            summary.baseline_test_mae = mae;
          }
        }
      }
      if (truth && grid) {
        const Matrix field = predict_grid(m, *grid).field;
        metrics << name << ",grid_truth," << csv::format_double(evaluate_mae(field, truth->noise_free())) << '\n';
      }
    };
    emit("multi_output", model);
    if (baseline) emit("single_output", *baseline);
    std::string msg = fmt::format("test MAE {:.6g}", summary.test_mae);
    if (summary.baseline_test_mae) msg += fmt::format(", baseline {:.6g}", *summary.baseline_test_mae);
    return msg;
  });

  if (config.variogram.enabled) {
    stage.run("variogram", [&] {
      VariogramBinning binning = default_binning(test_ds, config.variogram.space_bins, config.variogram.max_lag);
      binning.subsample_fraction = config.variogram.subsample;
      binning.subsample_seed = seeds.variogram;
      summary.data_variogram = empirical_semivariogram(test_ds, binning);
      summary.model_variogram = empirical_semivariogram(with_values(test_ds, test_pred), binning);
      summary.residual_variogram = empirical_semivariogram(residual_dataset(test_ds, test_pred), binning);
      write_variogram_csv(*summary.data_variogram, artifacts.add("variogram_data.csv"));
      write_variogram_csv(*summary.model_variogram, artifacts.add("variogram_model.csv"));
      write_variogram_csv(*summary.residual_variogram, artifacts.add("variogram_residual.csv"));
      for (const char* w : {"data", "model", "residual"}) artifacts.add(fmt::format("variogram_{}.csv.json", w));
      write_nugget_sill_csv({{"data", &*summary.data_variogram},
                         {"model", &*summary.model_variogram},
                         {"residual", &*summary.residual_variogram}},
                        artifacts.add("nugget_sill.csv"));
      return fmt::format("flatness data {:.3g}, residual {:.3g}", flatness_ratio(*summary.data_variogram),
                         flatness_ratio(*summary.residual_variogram));
    });
  } else {
    stage.skip("variogram", "disabled");
  }

  if (config.outputs.images) {
    stage.run("images", [&] {
      const auto names = render_images(out, out / "images");
      for (const auto& n : names) artifacts.add("images/" + n);
      return fmt::format("{} images", names.size());
    });
  } else {
    stage.skip("images", "disabled");
  }

  summary.ok = !stage.failed();
  if (fs::is_directory(out)) {
    ordered_json timings = ordered_json::object();
    for (const auto& s : summary.stages) timings[s.name] = s.seconds;
    open_out(artifacts.add("timings.json")) << timings.dump(2) << '\n';
    write_manifest(artifacts, &summary, config.seed, "run");
  }
  return summary;
}

int cmd_simulate(const RunConfig& config, std::ostream& log) {
  try {
    simulate_to_directory(config, &log);
  } catch (const ConfigError& e) {
    log << "configuration error: " << e.what() << '\n';
    return kExitConfig;
  } catch (const std::exception& e) {
    log << "error: " << e.what() << '\n';
    return kExitFailure;
  }
  return kExitOk;
}

int cmd_run(const RunConfig& config, std::ostream& log) {
  try {
    config.validate();
  } catch (const ConfigError& e) {
    log << "configuration error: " << e.what() << '\n';
    return kExitConfig;
  }
  const RunSummary summary = run_pipeline(config, &log);
  if (!summary.ok) {
    log << "run FAILED: " << summary.error << '\n';
    return kExitFailure;
  }
  return kExitOk;
}

int cmd_report(const fs::path& run_dir, std::ostream& log) {
  const fs::path manifest_path = run_dir / "manifest.json";
  if (!fs::exists(manifest_path)) {
    log << "error: missing manifest: " << manifest_path.string() << '\n';
    return kExitFailure;
  }
  json manifest;
  try {
    std::ifstream in(manifest_path);
    manifest = json::parse(in);
  } catch (const json::exception& e) {
    log << "error: unreadable manifest " << manifest_path.string() << ": " << e.what() << '\n';
    return kExitFailure;
  }

  std::vector<std::string> missing, modified;
  std::size_t listed = 0;
  for (const auto& a : manifest.value("artifacts", json::array())) {
    const std::string rel = a.value("path", "");
    ++listed;
    const fs::path p = run_dir / rel;
    if (!fs::exists(p))
      missing.push_back(rel);
    else if (sha256_file(p) != a.value("sha256", ""))
      modified.push_back(rel);
  }

  const fs::path report_dir = run_dir / "report";
  std::vector<std::string> images;
  std::string render_error;
  try {
    images = render_images(run_dir, report_dir / "images");
  } catch (const std::exception& e) {
    render_error = e.what();
  }

  const std::string status = manifest.value("status", "unknown");
  std::ostringstream s;
  s << "run directory: " << run_dir.generic_string() << '\n';
  s << "run status: " << status << '\n';
  if (manifest.contains("error")) s << "run error: " << manifest["error"].get<std::string>() << '\n';
  s << "\nstages:\n";
  for (const auto& st : manifest.value("stages", json::array()))
    s << "  " << st.value("name", "") << ": " << st.value("status", "") << '\n';

  auto copy_csv = [&](const char* name, const char* heading) {
    const fs::path p = run_dir / name;
    if (!fs::exists(p)) return;
    s << '\n' << heading << ":\n";
    std::ifstream in(p);
    std::string line;
    while (std::getline(in, line)) s << "  " << line << '\n';
  };
  copy_csv("metrics.csv", "test MAE table");
  if (fs::exists(run_dir / "basis" / "basis.json")) {
    try {
      std::ifstream in(run_dir / "basis" / "basis.json");
      const json b = json::parse(in);
      s << fmt::format("\nEOF truncation: K~ = {} of K = {}, variance captured {}\n", b.value("K_used", 0),
                       b.value("K", 0), csv::format_double(b.value("variance_captured", 0.0)));
    } catch (const json::exception&) {
      s << "\nEOF truncation: basis.json unreadable\n";
    }
  }
  copy_csv("nugget_sill.csv", "variogram nugget and sill");
  s << fmt::format("\nartifacts: {} listed, {} missing, {} modified\n", listed, missing.size(), modified.size());
  for (const auto& m : missing) s << "  missing: " << m << '\n';
  for (const auto& m : modified) s << "  modified: " << m << '\n';
  if (!render_error.empty()) s << "image rendering failed: " << render_error << '\n';
  s << "\nimages:\n";
  for (const auto& i : images) s << "  report/images/" << i << '\n';

  fs::create_directories(report_dir);
  open_out(report_dir / "summary.txt") << s.str();
  for (const auto& m : missing) log << "missing artifact: " << m << '\n';
  for (const auto& m : modified) log << "modified artifact: " << m << '\n';
  if (!render_error.empty()) log << "image rendering failed: " << render_error << '\n';
  log << fmt::format("report written to {} ({} images)\n", (report_dir / "summary.txt").string(), images.size());

  const bool complete = missing.empty() && modified.empty() && render_error.empty() && status == "ok";
  return complete ? kExitOk : kExitPartial;
}

}  // namespace eofnet
