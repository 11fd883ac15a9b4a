#include "eofnet/model.hpp"

#include <chrono>
#include <cmath>
#include <fstream>
#include <functional>
#include <unordered_map>

#include <fmt/format.h>
#include <fmt/ranges.h>
#include <json.hpp>

#include "eofnet/csv.hpp"
#include "eofnet/errors.hpp"
#include "eofnet/hash.hpp"

namespace eofnet {

void MlpConfig::validate() const {
  if (hidden_layers < 1) throw ConfigError("hidden_layers must be at least 1");
  if (width < 1) throw ConfigError("width must be at least 1");
  if (!(schedule.max_lr > 0.0)) throw ConfigError("max_lr must be positive");
  if (!(schedule.warmup_fraction >= 0.0 && schedule.warmup_fraction < 1.0))
    throw ConfigError("warmup fraction must be in [0, 1)");
  if (patience < 1) throw ConfigError("patience must be at least 1");
  if (batch_size < 1) throw ConfigError("batch size must be at least 1");
  if (max_epochs < 1) throw ConfigError("max_epochs must be at least 1");
}

namespace {

using LossFn = std::function<double(const Matrix& output, const Matrix& target, Matrix* d_output)>;

Matrix gather_rows(const Matrix& m, const std::vector<Index>& rows, std::size_t begin, std::size_t end) {
  Matrix out(static_cast<Index>(end - begin), m.cols());
  for (std::size_t r = begin; r < end; ++r) out.row(static_cast<Index>(r - begin)) = m.row(rows[r]);
  return out;
}

// Minibatch training with Nadam + 1cycle and best-validation restore.
TrainReport fit(Network& net, const Matrix& x, const Matrix& y, const Matrix& x_val, const Matrix& y_val,
                const LossFn& loss, const MlpConfig& config, std::uint64_t shuffle_seed) {
  const auto start = std::chrono::steady_clock::now();
  const Index n = x.rows();
  if (n == 0) throw PreconditionError("no training samples");
  if (x_val.rows() == 0) throw PreconditionError("no validation samples");
  const Index batch = std::min(config.batch_size, n);
  const long steps_per_epoch = static_cast<long>((n + batch - 1) / batch);
  const long total_steps = steps_per_epoch * config.max_epochs;

  Rng rng(shuffle_seed);
  Nadam optimizer(config.nadam, net.parameters());
  std::vector<Index> order(static_cast<std::size_t>(n));
  for (Index i = 0; i < n; ++i) order[static_cast<std::size_t>(i)] = i;

  TrainReport report;
  Network best = net;
  double best_val = std::numeric_limits<double>::infinity();
  int since_best = 0;
  long step = 0;
  Network::Cache cache;
  Matrix d_output;
  for (int epoch = 1; epoch <= config.max_epochs; ++epoch) {
    rng.shuffle(order);
    double weighted = 0.0;
    double lr = config.schedule.at(step, total_steps);
    for (std::size_t begin = 0; begin < order.size(); begin += static_cast<std::size_t>(batch)) {
      const std::size_t end = std::min(order.size(), begin + static_cast<std::size_t>(batch));
      const Matrix xb = gather_rows(x, order, begin, end);
      const Matrix yb = gather_rows(y, order, begin, end);
      const Matrix out = net.forward_train(xb, cache);
      const double batch_loss = loss(out, yb, &d_output);
      lr = config.schedule.at(step, total_steps);
      if (!std::isfinite(batch_loss))
        throw TrainingError(fmt::format("training diverged at epoch {} (learning rate {})", epoch, lr), epoch, lr);
      const Gradients grads = net.backward(cache, d_output);
      optimizer.step(net.parameters(), grads, lr);
      weighted += batch_loss * static_cast<double>(end - begin);
      ++step;
    }
    const double train_mae = weighted / static_cast<double>(n);
    const double val_mae = loss(net.forward(x_val), y_val, nullptr);
    if (!std::isfinite(val_mae))
      throw TrainingError(fmt::format("validation loss is not finite at epoch {} (learning rate {})", epoch, lr),
                          epoch, lr);
    report.train_mae.push_back(train_mae);
    report.val_mae.push_back(val_mae);
    report.learning_rate.push_back(lr);
    report.stopping_epoch = epoch;
    if (val_mae < best_val) {
      best_val = val_mae;
      best = net;
      report.best_epoch = epoch;
      since_best = 0;
    } else if (config.early_stopping && ++since_best >= config.patience) {
      break;
    }
  }
  net = std::move(best);
  report.best_val_mae = best_val;
  report.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  return report;
}

void check_training_inputs(const StationDataset& train, const StationDataset& val, const TruncatedBasis& basis) {
  for (const auto* ds : {&train, &val}) {
    if (ds->num_times() != basis.num_times())
      throw ShapeError(fmt::format("dataset has {} time steps, basis has {}", ds->num_times(), basis.num_times()));
    if (ds->times.values != basis.times.values) throw ShapeError("dataset and basis time axes differ");
    if (ds->missing_count() > 0) throw PreconditionError("training data must not contain missing values");
    if (ds->num_covariates() < 1) throw PreconditionError("training data has no covariates");
  }
  if (train.num_stations() == 0) throw PreconditionError("training set is empty");
  if (val.num_stations() == 0) throw PreconditionError("validation set is empty");
  if (train.covariate_names != val.covariate_names)
    throw ShapeError("training and validation covariates differ");
}

void write_network(const Network& net, const std::filesystem::path& dir, nlohmann::ordered_json& meta) {
  std::filesystem::create_directories(dir);
  meta["inputs"] = net.input_dim();
  meta["outputs"] = net.output_dim();
  meta["hidden_layers"] = net.hidden_layers();
  meta["width"] = net.dense().front().weight.cols();
  meta["batch_norm"] = net.batch_norm();
  for (std::size_t l = 0; l < net.dense().size(); ++l) {
    csv::write_matrix(dir / fmt::format("layer_{}_weight.csv", l), net.dense()[l].weight);
    csv::write_matrix(dir / fmt::format("layer_{}_bias.csv", l), net.dense()[l].bias);
  }
  for (std::size_t l = 0; l < net.norms().size(); ++l) {
    const auto& bn = net.norms()[l];
    csv::write_matrix(dir / fmt::format("bn_{}_gamma.csv", l), bn.gamma);
    csv::write_matrix(dir / fmt::format("bn_{}_beta.csv", l), bn.beta);
    csv::write_matrix(dir / fmt::format("bn_{}_mean.csv", l), bn.running_mean);
    csv::write_matrix(dir / fmt::format("bn_{}_var.csv", l), bn.running_var);
  }
}

Network read_network(const std::filesystem::path& dir, const nlohmann::json& meta, BatchNormParams bn_params) {
  const Index inputs = meta.at("inputs").get<Index>();
  const Index outputs = meta.at("outputs").get<Index>();
  const Index hidden = meta.at("hidden_layers").get<Index>();
  const Index width = meta.at("width").get<Index>();
  const bool bn = meta.at("batch_norm").get<bool>();
  Rng unused(0);
  Network net(inputs, hidden, width, outputs, bn, unused, bn_params);
  auto load_into = [&](Matrix& target, const std::filesystem::path& path) {
    Matrix m = csv::read_matrix(path);
    if (m.rows() != target.rows() || m.cols() != target.cols())
      throw ShapeError(fmt::format("{}: expected {}x{}, got {}x{}", path.string(), target.rows(), target.cols(),
                                   m.rows(), m.cols()));
    target = std::move(m);
  };
  for (std::size_t l = 0; l < net.dense().size(); ++l) {
    load_into(net.dense()[l].weight, dir / fmt::format("layer_{}_weight.csv", l));
    load_into(net.dense()[l].bias, dir / fmt::format("layer_{}_bias.csv", l));
  }
  for (std::size_t l = 0; l < net.norms().size(); ++l) {
    auto& norm = net.norms()[l];
    load_into(norm.gamma, dir / fmt::format("bn_{}_gamma.csv", l));
    load_into(norm.beta, dir / fmt::format("bn_{}_beta.csv", l));
    load_into(norm.running_mean, dir / fmt::format("bn_{}_mean.csv", l));
    load_into(norm.running_var, dir / fmt::format("bn_{}_var.csv", l));
  }
  return net;
}

nlohmann::ordered_json config_to_json(const MlpConfig& c) {
  nlohmann::ordered_json j;
  j["hidden_layers"] = c.hidden_layers;
  j["width"] = c.width;
  j["activation"] = "elu";
  j["weight_init"] = "he_normal";
  j["loss"] = "mae";
  j["optimizer"] = {{"name", "nadam"}, {"beta1", c.nadam.beta1}, {"beta2", c.nadam.beta2}, {"epsilon", c.nadam.epsilon}};
  j["schedule"] = {{"name", "1cycle"},
                   {"max_lr", c.schedule.max_lr},
                   {"warmup_fraction", c.schedule.warmup_fraction},
                   {"initial_div", c.schedule.initial_div},
                   {"final_div", c.schedule.final_div}};
  j["batch_norm"] = c.batch_norm;
  j["batch_norm_momentum"] = c.batch_norm_params.momentum;
  j["batch_norm_epsilon"] = c.batch_norm_params.epsilon;
  j["early_stopping"] = c.early_stopping;
  j["patience"] = c.patience;
  j["batch_size"] = c.batch_size;
  j["max_epochs"] = c.max_epochs;
  j["seed"] = c.seed;
  return j;
}

MlpConfig config_from_json(const nlohmann::json& j) {
  MlpConfig c;
  c.hidden_layers = j.at("hidden_layers").get<Index>();
  c.width = j.at("width").get<Index>();
  c.nadam.beta1 = j.at("optimizer").at("beta1").get<double>();
  c.nadam.beta2 = j.at("optimizer").at("beta2").get<double>();
  c.nadam.epsilon = j.at("optimizer").at("epsilon").get<double>();
  c.schedule.max_lr = j.at("schedule").at("max_lr").get<double>();
  c.schedule.warmup_fraction = j.at("schedule").at("warmup_fraction").get<double>();
  c.schedule.initial_div = j.at("schedule").at("initial_div").get<double>();
  c.schedule.final_div = j.at("schedule").at("final_div").get<double>();
  c.batch_norm = j.at("batch_norm").get<bool>();
  c.batch_norm_params.momentum = j.at("batch_norm_momentum").get<double>();
  c.batch_norm_params.epsilon = j.at("batch_norm_epsilon").get<double>();
  c.early_stopping = j.at("early_stopping").get<bool>();
  c.patience = j.at("patience").get<int>();
  c.batch_size = j.at("batch_size").get<Index>();
  c.max_epochs = j.at("max_epochs").get<int>();
  c.seed = j.at("seed").get<std::uint64_t>();
  return c;
}

void write_common(const std::filesystem::path& dir, const Matrix& phi, const Vector& mean, const Standardizer& st,
                  const std::vector<std::string>& names, const MlpConfig& config, const std::string& fingerprint,
                  nlohmann::ordered_json& meta) {
  std::filesystem::create_directories(dir);
  csv::write_matrix(dir / "phi.csv", phi);
  csv::write_matrix(dir / "mean.csv", mean.transpose());
  meta["K_used"] = phi.rows();
  meta["T"] = phi.cols();
  meta["basis_fingerprint"] = fingerprint;
  meta["covariates"] = names;
  meta["standardization"] = {{"mean", std::vector<double>(st.mean.data(), st.mean.data() + st.mean.size())},
                             {"scale", std::vector<double>(st.scale.data(), st.scale.data() + st.scale.size())}};
  meta["config"] = config_to_json(config);
}

struct Common {
  Matrix phi;
  Vector mean;
  Standardizer standardizer;
  std::vector<std::string> names;
  MlpConfig config;
  std::string fingerprint;
  nlohmann::json meta;
};

Common read_common(const std::filesystem::path& dir, const char* expected_kind) {
  std::ifstream in(dir / "model.json");
  if (!in) throw IoError(fmt::format("missing {}", (dir / "model.json").string()));
  Common c;
  c.meta = nlohmann::json::parse(in);
  if (c.meta.at("kind").get<std::string>() != expected_kind)
    throw ConfigError(fmt::format("{} holds a '{}' model, expected '{}'", dir.string(),
                                  c.meta.at("kind").get<std::string>(), expected_kind));
  c.phi = csv::read_matrix(dir / "phi.csv");
  const Matrix mean = csv::read_matrix(dir / "mean.csv");
  c.mean = mean.row(0).transpose();
  c.fingerprint = c.meta.at("basis_fingerprint").get<std::string>();
  if (basis_fingerprint(c.phi, c.mean) != c.fingerprint)
    throw IoError(fmt::format("{}: recomposition files do not match the recorded basis fingerprint", dir.string()));
  c.names = c.meta.at("covariates").get<std::vector<std::string>>();
  const auto mu = c.meta.at("standardization").at("mean").get<std::vector<double>>();
  const auto sd = c.meta.at("standardization").at("scale").get<std::vector<double>>();
  c.standardizer.mean = Eigen::Map<const Vector>(mu.data(), static_cast<Index>(mu.size()));
  c.standardizer.scale = Eigen::Map<const Vector>(sd.data(), static_cast<Index>(sd.size()));
  c.config = config_from_json(c.meta.at("config"));
  return c;
}

void check_covariates(const Matrix& covariates, Index expected) {
  if (covariates.cols() != expected)
    throw ShapeError(fmt::format("model expects {} covariates, got {}", expected, covariates.cols()));
  if (!covariates.allFinite()) throw NumericError("covariates contain non-finite values");
}

}  // namespace

ForwardResult forward(const MlpModel& model, const Matrix& covariates) {
  check_covariates(covariates, model.network.input_dim());
  ForwardResult r;
  r.coeffs = model.network.forward(model.standardizer.apply(covariates));
  r.signal = recompose(r.coeffs, model.recomposition, model.mean_series);
  return r;
}

ForwardResult forward(const BaselineModel& model, const Matrix& covariates) {
  if (model.networks.empty()) throw ShapeError("baseline has no networks");
  check_covariates(covariates, model.networks.front().input_dim());
  const Matrix x = model.standardizer.apply(covariates);
  ForwardResult r;
  r.coeffs.resize(covariates.rows(), static_cast<Index>(model.networks.size()));
  for (std::size_t k = 0; k < model.networks.size(); ++k)
    r.coeffs.col(static_cast<Index>(k)) = model.networks[k].forward(x).col(0);
  r.signal = recompose(r.coeffs, model.recomposition, model.mean_series);
  return r;
}

void TrainReport::write_log(const std::filesystem::path& path) const {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError(fmt::format("cannot write {}", path.string()));
  out << "epoch,train_mae,val_mae,lr\n";
  for (std::size_t e = 0; e < train_mae.size(); ++e)
    out << (e + 1) << ',' << csv::format_double(train_mae[e]) << ',' << csv::format_double(val_mae[e]) << ','
        << csv::format_double(learning_rate[e]) << '\n';
}

TrainResult train(const StationDataset& train_ds, const StationDataset& val_ds, const TruncatedBasis& basis,
                  const MlpConfig& config) {
  config.validate();
  check_training_inputs(train_ds, val_ds, basis);
  TrainResult result;
  MlpModel& model = result.model;
  model.recomposition = basis.temporal_bases;
  model.mean_series = basis.mean_series;
  model.standardizer = Standardizer::fit(train_ds.coords);
  model.covariate_names = train_ds.covariate_names;
  model.config = config;
  model.basis_fingerprint = basis_fingerprint(basis.temporal_bases, basis.mean_series);

  Rng init(derive_seed(config.seed, "init"));
  model.network = Network(train_ds.num_covariates(), config.hidden_layers, config.width, basis.k_used(),
                          config.batch_norm, init, config.batch_norm_params);

  const Matrix& phi = model.recomposition;
  const Vector& mean = model.mean_series;
  const LossFn signal_loss = [&phi, &mean](const Matrix& coeffs, const Matrix& target, Matrix* d_coeffs) {
    const Matrix signal = recompose(coeffs, phi, mean);
    if (!d_coeffs) return mae_loss(signal, target);
    Matrix d_signal;
    const double value = mae_loss(signal, target, &d_signal);
    *d_coeffs = recompose_backward(d_signal, phi);
    return value;
  };
  result.report = fit(model.network, model.standardizer.apply(train_ds.coords), train_ds.values,
                      model.standardizer.apply(val_ds.coords), val_ds.values, signal_loss, config,
                      derive_seed(config.seed, "shuffle"));
  return result;
}

Matrix coefficient_targets(const StationDataset& ds, const TruncatedBasis& basis) {
  std::unordered_map<std::string, Index> row_of;
  for (std::size_t i = 0; i < basis.station_ids.size(); ++i) row_of.emplace(basis.station_ids[i], static_cast<Index>(i));
  Matrix targets(ds.num_stations(), basis.k_used());
  for (Index i = 0; i < ds.num_stations(); ++i) {
    auto it = row_of.find(ds.station_ids[static_cast<std::size_t>(i)]);
    if (it != row_of.end())
      targets.row(i) = basis.spatial_coeffs.row(it->second);
    else
      targets.row(i) = project(ds.values.row(i), basis);
  }
  return targets;
}

BaselineResult train_single_output_baseline(const StationDataset& train_ds, const StationDataset& val_ds,
                                            const TruncatedBasis& basis, const MlpConfig& config) {
  config.validate();
  check_training_inputs(train_ds, val_ds, basis);
  const auto start = std::chrono::steady_clock::now();
  BaselineResult result;
  BaselineModel& model = result.model;
  model.recomposition = basis.temporal_bases;
  model.mean_series = basis.mean_series;
  model.standardizer = Standardizer::fit(train_ds.coords);
  model.covariate_names = train_ds.covariate_names;
  model.config = config;
  model.basis_fingerprint = basis_fingerprint(basis.temporal_bases, basis.mean_series);

  const Matrix x = model.standardizer.apply(train_ds.coords);
  const Matrix x_val = model.standardizer.apply(val_ds.coords);
  const Matrix targets = coefficient_targets(train_ds, basis);
  const Matrix val_targets = coefficient_targets(val_ds, basis);
  const LossFn coeff_loss = [](const Matrix& out, const Matrix& target, Matrix* d_out) {
    return mae_loss(out, target, d_out);
  };
  for (Index k = 0; k < basis.k_used(); ++k) {
    Rng init(derive_seed(config.seed, fmt::format("baseline/{}/init", k)));
    Network net(train_ds.num_covariates(), config.hidden_layers, config.width, 1, config.batch_norm, init,
                config.batch_norm_params);
    result.component_reports.push_back(fit(net, x, targets.col(k), x_val, val_targets.col(k), coeff_loss, config,
                                           derive_seed(config.seed, fmt::format("baseline/{}/shuffle", k))));
    model.networks.push_back(std::move(net));
  }
  result.val_signal_mae = evaluate_mae(forward(model, val_ds.coords).signal, val_ds.values);
  result.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  return result;
}

namespace {

template <typename Model>
GridPrediction predict_grid_impl(const Model& model, const GridSpec& grid, const std::vector<std::string>& names) {
  grid.validate();
  if (grid.covariate_names() != names)
    throw ShapeError(fmt::format("grid covariates ({}) do not match the model ({})",
                                 fmt::join(grid.covariate_names(), ","), fmt::join(names, ",")));
  auto r = forward(model, grid.covariates());
  return {std::move(r.coeffs), std::move(r.signal)};
}

}  // namespace

GridPrediction predict_grid(const MlpModel& model, const GridSpec& grid) {
  return predict_grid_impl(model, grid, model.covariate_names);
}

GridPrediction predict_grid(const BaselineModel& model, const GridSpec& grid) {
  return predict_grid_impl(model, grid, model.covariate_names);
}

double evaluate_mae(const Matrix& predictions, const Matrix& truth) { return mae_loss(predictions, truth); }

std::string basis_fingerprint(const Matrix& phi, const Vector& mean) {
  Sha256 hasher;
  const std::int64_t dims[2] = {phi.rows(), phi.cols()};
  hasher.update(dims, sizeof(dims));
  hasher.update(phi.data(), static_cast<std::size_t>(phi.size()) * sizeof(double));
  hasher.update(mean.data(), static_cast<std::size_t>(mean.size()) * sizeof(double));
  return hasher.hex_digest();
}

void save_model(const MlpModel& model, const std::filesystem::path& dir) {
  nlohmann::ordered_json meta;
  meta["kind"] = "multi_output";
  write_common(dir, model.recomposition, model.mean_series, model.standardizer, model.covariate_names, model.config,
               model.basis_fingerprint, meta);
  nlohmann::ordered_json net;
  write_network(model.network, dir, net);
  meta["network"] = net;
  std::ofstream(dir / "model.json", std::ios::binary) << meta.dump(2) << '\n';
}

MlpModel load_model(const std::filesystem::path& dir) {
  Common c = read_common(dir, "multi_output");
  MlpModel model;
  model.network = read_network(dir, c.meta.at("network"), c.config.batch_norm_params);
  model.recomposition = std::move(c.phi);
  model.mean_series = std::move(c.mean);
  model.standardizer = std::move(c.standardizer);
  model.covariate_names = std::move(c.names);
  model.config = c.config;
  model.basis_fingerprint = std::move(c.fingerprint);
  if (model.network.output_dim() != model.k_used())
    throw ShapeError("network output width does not match the recomposition layer");
  return model;
}

void save_model(const BaselineModel& model, const std::filesystem::path& dir) {
  nlohmann::ordered_json meta;
  meta["kind"] = "single_output_baseline";
  write_common(dir, model.recomposition, model.mean_series, model.standardizer, model.covariate_names, model.config,
               model.basis_fingerprint, meta);
  auto nets = nlohmann::ordered_json::array();
  for (std::size_t k = 0; k < model.networks.size(); ++k) {
    nlohmann::ordered_json net;
    write_network(model.networks[k], dir / fmt::format("component_{:03d}", k + 1), net);
    nets.push_back(net);
  }
  meta["networks"] = nets;
  std::ofstream(dir / "model.json", std::ios::binary) << meta.dump(2) << '\n';
}

BaselineModel load_baseline_model(const std::filesystem::path& dir) {
  Common c = read_common(dir, "single_output_baseline");
  BaselineModel model;
  const auto& nets = c.meta.at("networks");
  for (std::size_t k = 0; k < nets.size(); ++k)
    model.networks.push_back(
        read_network(dir / fmt::format("component_{:03d}", k + 1), nets[k], c.config.batch_norm_params));
  model.recomposition = std::move(c.phi);
  model.mean_series = std::move(c.mean);
  model.standardizer = std::move(c.standardizer);
  model.covariate_names = std::move(c.names);
  model.config = c.config;
  model.basis_fingerprint = std::move(c.fingerprint);
  if (static_cast<Index>(model.networks.size()) != model.k_used())
    throw ShapeError("baseline network count does not match the recomposition layer");
  return model;
}

}  // namespace eofnet
