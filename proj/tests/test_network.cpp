#include <doctest.h>

#include <cmath>
#include <numbers>

#include "eofnet/errors.hpp"
#include "eofnet/network.hpp"
#include "oracles.hpp"
#include "test_util.hpp"

using namespace eofnet;

TEST_CASE("analytic gradients match central differences") {
  CHECK(test::gradient_check(false, 1) < 1e-4);
  CHECK(test::gradient_check(true, 2) < 1e-4);
}

TEST_CASE("ELU and its derivative") {
  CHECK(elu(2.0) == 2.0);
  CHECK(elu(0.0) == 0.0);
  CHECK(elu(-1.0) == doctest::Approx(std::exp(-1.0) - 1.0));
  CHECK(elu_derivative(3.0) == 1.0);
  CHECK(elu_derivative(-2.0) == doctest::Approx(std::exp(-2.0)));
}

TEST_CASE("network shape and parameter count") {
  Rng rng(3);
  const Network net(2, 6, 100, 20, false, rng);
  CHECK(net.input_dim() == 2);
  CHECK(net.output_dim() == 20);
  CHECK(net.hidden_layers() == 6);
  CHECK(net.parameter_count() == (2 * 100 + 100) + 5 * (100 * 100 + 100) + (100 * 20 + 20));
  Rng rng2(3);
  const Network bn(2, 2, 10, 1, true, rng2);
  CHECK(bn.parameter_count() == (2 * 10 + 10) + (10 * 10 + 10) + (10 + 1) + 2 * 2 * 10);
}

TEST_CASE("batch inference equals row by row inference bitwise") {
  for (bool batch_norm : {false, true}) {
    Rng rng(4);
    Network net(3, 3, 16, 5, batch_norm, rng);
    const Matrix x = test::random_matrix(37, 3, rng);
    if (batch_norm) {
      Network::Cache cache;
      net.forward_train(x, cache);
    }
    const Matrix batch = net.forward(x);
    for (Index r = 0; r < x.rows(); ++r) CHECK(net.forward(x.row(r)) == batch.row(r));
  }
}

TEST_CASE("zero output layer predicts the mean series") {
  Rng rng(5);
  Network net(2, 2, 8, 3, false, rng);
  net.dense().back().weight.setZero();
  net.dense().back().bias.setZero();
  const Matrix x = test::random_matrix(6, 2, rng);
  const Matrix coeffs = net.forward(x);
  CHECK(coeffs.isZero(0.0));
  const Matrix phi = test::random_matrix(3, 7, rng);
  Vector mean(7);
  for (Index j = 0; j < 7; ++j) mean(j) = j * 0.5;
  const Matrix signal = recompose(coeffs, phi, mean);
  for (Index r = 0; r < 6; ++r) CHECK(signal.row(r) == mean.transpose());
}

TEST_CASE("recomposition matches a direct sum") {
  Rng rng(6);
  const Matrix coeffs = test::random_matrix(9, 4, rng);
  const Matrix phi = test::random_matrix(4, 11, rng);
  Vector mean(11);
  for (Index j = 0; j < 11; ++j) mean(j) = rng.normal();
  const Matrix signal = recompose(coeffs, phi, mean);
  for (Index n = 0; n < 9; ++n)
    for (Index t = 0; t < 11; ++t) {
      double s = mean(t);
      for (Index k = 0; k < 4; ++k) s += coeffs(n, k) * phi(k, t);
      CHECK(std::abs(signal(n, t) - s) < 1e-10);
    }

  // T = 1 with a single component is a scalar multiply-add.
  Matrix one_phi(1, 1);
  one_phi << 2.0;
  Vector one_mean(1);
  one_mean << 0.5;
  Matrix c(2, 1);
  c << 1.0, -3.0;
  const Matrix out = recompose(c, one_phi, one_mean);
  CHECK(out(0, 0) == 2.5);
  CHECK(out(1, 0) == -5.5);

  // Backward is the transpose product.
  const Matrix d = test::random_matrix(9, 11, rng);
  CHECK(test::max_abs(recompose_backward(d, phi) - d * phi.transpose()) < 1e-12);
}

TEST_CASE("mean absolute error") {
  Matrix p(1, 2), t(1, 2);
  p << 1.0, 3.0;
  t << 2.0, 3.0;
  Matrix g;
  CHECK(mae_loss(p, t, &g) == 0.5);
  CHECK(g(0, 0) == -0.5);
  CHECK(g(0, 1) == 0.0);

  Matrix p2(2, 2), t2 = Matrix::Zero(2, 2);
  p2 << 1.0, -2.0, 0.0, 4.0;
  CHECK(mae_loss(p2, t2, &g) == 1.75);
  CHECK(g(0, 0) == 0.25);
  CHECK(g(0, 1) == -0.25);
  CHECK(g(1, 0) == 0.0);

  Matrix sg;
  CHECK(squared_loss(p, t, &sg) == 0.5);
  CHECK(sg(0, 0) == -1.0);
}

TEST_CASE("first Nadam step matches the closed form") {
  const NadamParams np;
  Matrix w(1, 3);
  w << 1.0, -1.0, 0.5;
  Matrix g(1, 3);
  g << 0.2, -0.4, 0.0;
  const Matrix start = w;
  Nadam opt(np, {&w});
  opt.step({&w}, {g}, 0.01);
  CHECK(opt.iterations() == 1);

  const double u1 = np.beta1 * (1.0 - 0.5 * std::pow(0.96, 0.004));
  const double u2 = np.beta1 * (1.0 - 0.5 * std::pow(0.96, 0.008));
  for (Index c = 0; c < 3; ++c) {
    const double gi = g(0, c);
    const double m = (1 - np.beta1) * gi;
    const double v_hat = (1 - np.beta2) * gi * gi / (1 - np.beta2);
    const double m_bar = (1 - u1) * gi / (1 - u1) + u2 * m / (1 - u1 * u2);
    const double expected = start(0, c) - 0.01 * m_bar / (std::sqrt(v_hat) + np.epsilon);
    CHECK(w(0, c) == doctest::Approx(expected).epsilon(1e-14));
  }
  CHECK(w(0, 2) == 0.5);
}

TEST_CASE("one-cycle schedule endpoints and shape") {
  const OneCycleSchedule s;
  const long total = 1000;
  CHECK(s.at(0, total) == doctest::Approx(s.max_lr / s.initial_div));
  CHECK(s.at(300, total) == doctest::Approx(s.max_lr));
  CHECK(s.at(total - 1, total) == doctest::Approx(s.max_lr / s.final_div));
  double prev = 0.0;
  for (long k = 0; k <= 300; ++k) {
    CHECK(s.at(k, total) >= prev);
    prev = s.at(k, total);
  }
  for (long k = 301; k < total; ++k) {
    CHECK(s.at(k, total) <= prev);
    prev = s.at(k, total);
  }
  CHECK(s.at(150, total) == doctest::Approx(0.5 * (s.max_lr + s.max_lr / s.initial_div)));
}

TEST_CASE("network equality and copies") {
  Rng a(7), b(7);
  const Network n1(2, 2, 4, 1, true, a), n2(2, 2, 4, 1, true, b);
  CHECK(n1 == n2);
  Network n3 = n1;
  n3.dense()[0].weight(0, 0) += 1.0;
  CHECK_FALSE(n3 == n1);
}
