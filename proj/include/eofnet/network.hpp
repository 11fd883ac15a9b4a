#pragma once

#include <vector>

#include "eofnet/rng.hpp"
#include "eofnet/types.hpp"

namespace eofnet {

// Fully connected ELU network with optional batch normalization, plus the
// losses, the recomposition layer and the optimizer used to train it.

struct Dense {
  Matrix weight;  // in x out
  Matrix bias;    // 1 x out
};

struct BatchNorm {
  Matrix gamma;  // 1 x width
  Matrix beta;
  Matrix running_mean;
  Matrix running_var;
};

struct BatchNormParams {
  double momentum = 0.99;
  double epsilon = 1e-3;
};

enum class Mode { kTrain, kInference };

using Gradients = std::vector<Matrix>;

class Network {
 public:
  /// Intermediate values kept by a training-mode forward pass.
  struct Cache {
    std::vector<Matrix> layer_input;  // input to each dense layer
    std::vector<Matrix> pre_activation;  // after affine (and batch norm), before ELU
    std::vector<Matrix> normalized;      // batch-norm z-hat
    std::vector<Matrix> inv_std;         // 1 x width per batch-norm layer
  };

  Network() = default;

  /// He-initialized network: `hidden_layers` ELU layers of `width` units and a
  /// linear output layer.
  Network(Index inputs, Index hidden_layers, Index width, Index outputs, bool batch_norm, Rng& rng,
          BatchNormParams bn = {});

  Index input_dim() const { return dense_.empty() ? 0 : dense_.front().weight.rows(); }
  Index output_dim() const { return dense_.empty() ? 0 : dense_.back().weight.cols(); }
  Index hidden_layers() const { return static_cast<Index>(dense_.size()) - 1; }
  bool batch_norm() const { return !norms_.empty(); }
  const BatchNormParams& batch_norm_params() const { return bn_; }
  Index parameter_count() const;

  /// Inference pass using stored batch-norm statistics. Each output row
  /// depends only on the matching input row.
  Matrix forward(const Matrix& x) const;

  /// Training pass: batch statistics, updates running statistics, fills cache.
  Matrix forward_train(const Matrix& x, Cache& cache);

  /// Gradients w.r.t. parameters(), in the same order.
  Gradients backward(const Cache& cache, const Matrix& d_out) const;

  /// Trainable tensors: per layer weight, bias, then gamma and beta for hidden
  /// layers when batch norm is on.
  std::vector<Matrix*> parameters();
  std::vector<const Matrix*> parameters() const;

  std::vector<Dense>& dense() { return dense_; }
  const std::vector<Dense>& dense() const { return dense_; }
  std::vector<BatchNorm>& norms() { return norms_; }
  const std::vector<BatchNorm>& norms() const { return norms_; }
  void set_batch_norm_params(BatchNormParams bn) { bn_ = bn; }

  bool operator==(const Network& other) const;

 private:
  std::vector<Dense> dense_;
  std::vector<BatchNorm> norms_;
  BatchNormParams bn_;
};

/// out = x * W + b, evaluated row by row in a fixed summation order.
Matrix affine(const Matrix& x, const Dense& layer);

double elu(double x);
double elu_derivative(double x);

/// Mean absolute error over all entries; gradient uses sign(0) = 0.
double mae_loss(const Matrix& prediction, const Matrix& target, Matrix* gradient = nullptr);
double squared_loss(const Matrix& prediction, const Matrix& target, Matrix* gradient = nullptr);

/// signal[n] = mean + sum_k coeffs[n][k] * phi[k], row by row.
Matrix recompose(const Matrix& coeffs, const Matrix& phi, const Vector& mean);
Matrix recompose_backward(const Matrix& d_signal, const Matrix& phi);

struct NadamParams {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-7;
};

/// Nadam with the Dozat momentum schedule as used by Keras.
class Nadam {
 public:
  Nadam(NadamParams params, const std::vector<Matrix*>& shapes);
  void step(const std::vector<Matrix*>& params, const Gradients& grads, double learning_rate);
  long iterations() const { return iterations_; }

 private:
  NadamParams params_;
  long iterations_ = 0;
  double m_schedule_ = 1.0;
  std::vector<Matrix> m_;
  std::vector<Matrix> v_;
};

/// 1cycle learning-rate policy: cosine warmup from max_lr / initial_div to
/// max_lr, then cosine annealing to max_lr / final_div.
struct OneCycleSchedule {
  double max_lr = 1e-2;
  double warmup_fraction = 0.3;
  double initial_div = 25.0;
  double final_div = 100.0;

  double at(long step, long total_steps) const;
};

}  // namespace eofnet
