#include "eofnet/network.hpp"

#include <cmath>
#include <numbers>

#include <fmt/format.h>

#include "eofnet/errors.hpp"

namespace eofnet {

namespace {

// Keras he_normal: truncated normal, |z| < 2, stddev corrected for truncation.
constexpr double kTruncatedNormalStd = 0.87962566103423978;

Matrix column_sums(const Matrix& m) { return m.colwise().sum(); }

}  // namespace

double elu(double x) { return x > 0.0 ? x : std::expm1(x); }
double elu_derivative(double x) { return x > 0.0 ? 1.0 : std::exp(x); }

Matrix affine(const Matrix& x, const Dense& layer) {
  if (x.cols() != layer.weight.rows())
    throw ShapeError(fmt::format("layer expects {} inputs, got {}", layer.weight.rows(), x.cols()));
  const Index n = x.rows();
  const Index in = layer.weight.rows();
  Matrix out(n, layer.weight.cols());
  for (Index r = 0; r < n; ++r) {
    auto row = out.row(r);
    row = layer.bias.row(0);
    for (Index d = 0; d < in; ++d) row += x(r, d) * layer.weight.row(d);
  }
  return out;
}

Network::Network(Index inputs, Index hidden_layers, Index width, Index outputs, bool batch_norm, Rng& rng,
                 BatchNormParams bn)
    : bn_(bn) {
  if (inputs < 1 || hidden_layers < 1 || width < 1 || outputs < 1)
    throw ConfigError(fmt::format("invalid network shape: inputs {}, hidden layers {}, width {}, outputs {}", inputs,
                                  hidden_layers, width, outputs));
  Index fan_in = inputs;
  for (Index l = 0; l <= hidden_layers; ++l) {
    const Index fan_out = l == hidden_layers ? outputs : width;
    Dense layer;
    layer.weight.resize(fan_in, fan_out);
    const double sd = std::sqrt(2.0 / static_cast<double>(fan_in)) / kTruncatedNormalStd;
    for (Index i = 0; i < fan_in; ++i)
      for (Index j = 0; j < fan_out; ++j) layer.weight(i, j) = sd * rng.truncated_normal(2.0);
    layer.bias = Matrix::Zero(1, fan_out);
    dense_.push_back(std::move(layer));
    if (batch_norm && l < hidden_layers) {
      BatchNorm norm;
      norm.gamma = Matrix::Ones(1, width);
      norm.beta = Matrix::Zero(1, width);
      norm.running_mean = Matrix::Zero(1, width);
      norm.running_var = Matrix::Ones(1, width);
      norms_.push_back(std::move(norm));
    }
    fan_in = fan_out;
  }
}

Index Network::parameter_count() const {
  Index count = 0;
  for (const auto* p : parameters()) count += p->size();
  return count;
}

Matrix Network::forward(const Matrix& x) const {
  Matrix h = x;
  const Index hidden = hidden_layers();
  for (Index l = 0; l < hidden; ++l) {
    Matrix z = affine(h, dense_[static_cast<std::size_t>(l)]);
    if (batch_norm()) {
      const auto& norm = norms_[static_cast<std::size_t>(l)];
      for (Index c = 0; c < z.cols(); ++c) {
        const double inv = 1.0 / std::sqrt(norm.running_var(0, c) + bn_.epsilon);
        const double shift = norm.running_mean(0, c);
        for (Index r = 0; r < z.rows(); ++r)
          z(r, c) = norm.gamma(0, c) * ((z(r, c) - shift) * inv) + norm.beta(0, c);
      }
    }
    h = z.unaryExpr([](double v) { return elu(v); });
  }
  return affine(h, dense_.back());
}

Matrix Network::forward_train(const Matrix& x, Cache& cache) {
  const Index hidden = hidden_layers();
  cache.layer_input.assign(static_cast<std::size_t>(hidden + 1), Matrix());
  cache.pre_activation.assign(static_cast<std::size_t>(hidden), Matrix());
  cache.normalized.assign(batch_norm() ? static_cast<std::size_t>(hidden) : 0, Matrix());
  cache.inv_std.assign(batch_norm() ? static_cast<std::size_t>(hidden) : 0, Matrix());
  Matrix h = x;
  const double n = static_cast<double>(x.rows());
  for (Index l = 0; l < hidden; ++l) {
    const auto ul = static_cast<std::size_t>(l);
    cache.layer_input[ul] = h;
    Matrix z = affine(h, dense_[ul]);
    if (batch_norm()) {
      auto& norm = norms_[ul];
      const Matrix mean = column_sums(z) / n;
      Matrix centered = z.rowwise() - mean.row(0);
      const Matrix var = column_sums(centered.array().square().matrix()) / n;
      Matrix inv(1, z.cols());
      for (Index c = 0; c < z.cols(); ++c) inv(0, c) = 1.0 / std::sqrt(var(0, c) + bn_.epsilon);
      Matrix zhat = centered.array().rowwise() * inv.row(0).array();
      z = (zhat.array().rowwise() * norm.gamma.row(0).array()).rowwise() + norm.beta.row(0).array();
      norm.running_mean = bn_.momentum * norm.running_mean + (1.0 - bn_.momentum) * mean;
      norm.running_var = bn_.momentum * norm.running_var + (1.0 - bn_.momentum) * var;
      cache.normalized[ul] = std::move(zhat);
      cache.inv_std[ul] = std::move(inv);
    }
    h = z.unaryExpr([](double v) { return elu(v); });
    cache.pre_activation[ul] = std::move(z);
  }
  cache.layer_input[static_cast<std::size_t>(hidden)] = h;
  return affine(h, dense_.back());
}

Gradients Network::backward(const Cache& cache, const Matrix& d_out) const {
  const Index hidden = hidden_layers();
  const std::size_t per_hidden = batch_norm() ? 4 : 2;
  Gradients grads(static_cast<std::size_t>(hidden) * per_hidden + 2);
  auto offset = [&](Index l) { return static_cast<std::size_t>(l) * per_hidden; };

  Matrix g = d_out;
  for (Index l = hidden; l >= 0; --l) {
    const auto ul = static_cast<std::size_t>(l);
    if (l < hidden) {
      const Matrix& pre = cache.pre_activation[ul];
      Matrix d_pre = g.cwiseProduct(pre.unaryExpr([](double v) { return elu_derivative(v); }));
      if (batch_norm()) {
        const auto& norm = norms_[ul];
        const Matrix& zhat = cache.normalized[ul];
        const double n = static_cast<double>(zhat.rows());
        grads[offset(l) + 2] = column_sums(d_pre.cwiseProduct(zhat));
        grads[offset(l) + 3] = column_sums(d_pre);
        const Matrix d_zhat = d_pre.array().rowwise() * norm.gamma.row(0).array();
        const Matrix sum_dz = column_sums(d_zhat);
        const Matrix sum_dz_zhat = column_sums(d_zhat.cwiseProduct(zhat));
        Matrix dz(d_zhat.rows(), d_zhat.cols());
        for (Index r = 0; r < dz.rows(); ++r)
          for (Index c = 0; c < dz.cols(); ++c)
            dz(r, c) = cache.inv_std[ul](0, c) / n *
                       (n * d_zhat(r, c) - sum_dz(0, c) - zhat(r, c) * sum_dz_zhat(0, c));
        g = std::move(dz);
      } else {
        g = std::move(d_pre);
      }
    }
    const Dense& layer = dense_[ul];
    const std::size_t base = l == hidden ? offset(hidden) : offset(l);
    grads[base] = cache.layer_input[ul].transpose() * g;
    grads[base + 1] = column_sums(g);
    if (l > 0) g = g * layer.weight.transpose();
  }
  return grads;
}

std::vector<Matrix*> Network::parameters() {
  std::vector<Matrix*> out;
  for (std::size_t l = 0; l < dense_.size(); ++l) {
    out.push_back(&dense_[l].weight);
    out.push_back(&dense_[l].bias);
    if (l < norms_.size()) {
      out.push_back(&norms_[l].gamma);
      out.push_back(&norms_[l].beta);
    }
  }
  return out;
}

std::vector<const Matrix*> Network::parameters() const {
  std::vector<const Matrix*> out;
  for (auto* p : const_cast<Network*>(this)->parameters()) out.push_back(p);
  return out;
}

bool Network::operator==(const Network& other) const {
  if (dense_.size() != other.dense_.size() || norms_.size() != other.norms_.size()) return false;
  for (std::size_t l = 0; l < dense_.size(); ++l)
    if (dense_[l].weight != other.dense_[l].weight || dense_[l].bias != other.dense_[l].bias) return false;
  for (std::size_t l = 0; l < norms_.size(); ++l)
    if (norms_[l].gamma != other.norms_[l].gamma || norms_[l].beta != other.norms_[l].beta ||
        norms_[l].running_mean != other.norms_[l].running_mean ||
        norms_[l].running_var != other.norms_[l].running_var)
      return false;
  return true;
}

double mae_loss(const Matrix& prediction, const Matrix& target, Matrix* gradient) {
  if (prediction.rows() != target.rows() || prediction.cols() != target.cols())
    throw ShapeError(fmt::format("prediction {}x{} vs target {}x{}", prediction.rows(), prediction.cols(),
                                 target.rows(), target.cols()));
  const double count = static_cast<double>(prediction.size());
  if (count == 0) throw ShapeError("empty prediction");
  double sum = 0.0;
  for (Index r = 0; r < prediction.rows(); ++r)
    for (Index c = 0; c < prediction.cols(); ++c) sum += std::abs(prediction(r, c) - target(r, c));
  if (gradient) {
    gradient->resize(prediction.rows(), prediction.cols());
    for (Index r = 0; r < prediction.rows(); ++r) {
      for (Index c = 0; c < prediction.cols(); ++c) {
        const double d = prediction(r, c) - target(r, c);
        (*gradient)(r, c) = (d > 0.0 ? 1.0 : d < 0.0 ? -1.0 : 0.0) / count;
      }
    }
  }
  return sum / count;
}

double squared_loss(const Matrix& prediction, const Matrix& target, Matrix* gradient) {
  if (prediction.rows() != target.rows() || prediction.cols() != target.cols())
    throw ShapeError("prediction and target shapes differ");
  const double count = static_cast<double>(prediction.size());
  const Matrix diff = prediction - target;
  if (gradient) *gradient = 2.0 * diff / count;
  return diff.squaredNorm() / count;
}

Matrix recompose(const Matrix& coeffs, const Matrix& phi, const Vector& mean) {
  if (coeffs.cols() != phi.rows())
    throw ShapeError(fmt::format("{} coefficients for {} temporal bases", coeffs.cols(), phi.rows()));
  if (mean.size() != phi.cols()) throw ShapeError("mean series length does not match the temporal bases");
  Matrix signal(coeffs.rows(), phi.cols());
  for (Index r = 0; r < coeffs.rows(); ++r) {
    auto row = signal.row(r);
    row = mean.transpose();
    for (Index k = 0; k < phi.rows(); ++k) row += coeffs(r, k) * phi.row(k);
  }
  return signal;
}

Matrix recompose_backward(const Matrix& d_signal, const Matrix& phi) { return d_signal * phi.transpose(); }

Nadam::Nadam(NadamParams params, const std::vector<Matrix*>& shapes) : params_(params) {
  for (const auto* p : shapes) {
    m_.push_back(Matrix::Zero(p->rows(), p->cols()));
    v_.push_back(Matrix::Zero(p->rows(), p->cols()));
  }
}

void Nadam::step(const std::vector<Matrix*>& params, const Gradients& grads, double learning_rate) {
  if (params.size() != m_.size() || grads.size() != m_.size())
    throw ShapeError("optimizer state does not match parameter list");
  ++iterations_;
  const double t = static_cast<double>(iterations_);
  const double b1 = params_.beta1, b2 = params_.beta2;
  const double u_t = b1 * (1.0 - 0.5 * std::pow(0.96, 0.004 * t));
  const double u_next = b1 * (1.0 - 0.5 * std::pow(0.96, 0.004 * (t + 1.0)));
  const double m_schedule_new = m_schedule_ * u_t;
  const double m_schedule_next = m_schedule_new * u_next;
  const double v_correction = 1.0 - std::pow(b2, t);
  for (std::size_t i = 0; i < params.size(); ++i) {
    Matrix& p = *params[i];
    const Matrix& g = grads[i];
    Matrix& m = m_[i];
    Matrix& v = v_[i];
    for (Index r = 0; r < p.rows(); ++r) {
      for (Index c = 0; c < p.cols(); ++c) {
        const double gi = g(r, c);
        m(r, c) = b1 * m(r, c) + (1.0 - b1) * gi;
        v(r, c) = b2 * v(r, c) + (1.0 - b2) * gi * gi;
        const double m_bar = (1.0 - u_t) * gi / (1.0 - m_schedule_new) + u_next * m(r, c) / (1.0 - m_schedule_next);
        const double v_hat = v(r, c) / v_correction;
        p(r, c) -= learning_rate * m_bar / (std::sqrt(v_hat) + params_.epsilon);
      }
    }
  }
  m_schedule_ = m_schedule_new;
}

double OneCycleSchedule::at(long step, long total_steps) const {
  const double lo = max_lr / initial_div;
  const double fin = max_lr / final_div;
  if (total_steps <= 1) return max_lr;
  const long warm = std::max<long>(1, std::lround(warmup_fraction * static_cast<double>(total_steps)));
  if (step < warm) {
    const double p = static_cast<double>(step) / static_cast<double>(warm);
    return lo + (max_lr - lo) * 0.5 * (1.0 - std::cos(std::numbers::pi * p));
  }
  const long span = std::max<long>(1, total_steps - 1 - warm);
  const double p = std::min(1.0, static_cast<double>(step - warm) / static_cast<double>(span));
  return fin + (max_lr - fin) * 0.5 * (1.0 + std::cos(std::numbers::pi * p));
}

}  // namespace eofnet
