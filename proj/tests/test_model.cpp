#include <doctest.h>

#include <algorithm>
#include <cmath>

#include "eofnet/errors.hpp"
#include "eofnet/model.hpp"
#include "test_util.hpp"

using namespace eofnet;

namespace {

// Smooth low-rank field sampled at random stations.
StationDataset smooth_dataset(Index stations, Index times, std::uint64_t seed, Index rank = 4) {
  Rng rng(seed);
  auto ds = test::random_dataset(stations, times, rng);
  for (Index i = 0; i < stations; ++i) {
    const double x = ds.coords(i, 0) / 10.0, y = ds.coords(i, 1) / 10.0;
    for (Index t = 0; t < times; ++t) {
      const double u = static_cast<double>(t) / static_cast<double>(times);
      double v = 2.0 * u;
      for (Index k = 1; k <= rank; ++k)
        v += std::sin(k * (x + 0.5 * y) + 0.3 * k) * std::cos(2.0 * std::numbers::pi * k * u) / k;
      ds.values(i, t) = v;
    }
  }
  return ds;
}

TruncatedBasis basis_of(const StationDataset& ds, Index k) { return truncate(decompose(center(ds)), FixedComponents{k}); }

MlpConfig small_config(int epochs) {
  MlpConfig c;
  c.hidden_layers = 2;
  c.width = 32;
  c.max_epochs = epochs;
  c.early_stopping = false;
  c.batch_size = 32;
  c.seed = 5;
  return c;
}

GridSpec small_grid() {
  GridSpec g;
  g.nx = 6;
  g.ny = 5;
  g.cell_size = 2.0;
  return g;
}

double signal_sd(const Matrix& m) { return std::sqrt((m.array() - m.mean()).square().mean()); }

}  // namespace

TEST_CASE("multi-output network can overfit a small training set") {
  const auto ds = smooth_dataset(10, 50, 1);
  const auto basis = basis_of(ds, 5);
  MlpConfig c;
  c.max_epochs = 2000;
  c.early_stopping = false;
  c.seed = 1;
  const auto r = train(ds, ds, basis, c);
  const double mae = evaluate_mae(forward(r.model, ds.coords).signal, ds.values);
  CHECK(mae < 0.05 * signal_sd(ds.values));
  CHECK(r.report.stopping_epoch == 2000);
}

TEST_CASE("baseline fits a linear coefficient map") {
  // Rank one deviations whose amplitude is linear in x.
  auto ds = smooth_dataset(20, 30, 2);
  for (Index i = 0; i < 20; ++i)
    for (Index t = 0; t < 30; ++t)
      ds.values(i, t) = 0.1 * t + (ds.coords(i, 0) - 5.0) / 5.0 * std::sin(0.4 * t);
  const auto basis = basis_of(ds, 1);
  const auto r = train_single_output_baseline(ds, ds, basis, small_config(1000));
  const Matrix pred = forward(r.model, ds.coords).coeffs;
  const Matrix target = coefficient_targets(ds, basis);
  CHECK(evaluate_mae(pred, target) < 0.01 * target.cwiseAbs().mean());
}

TEST_CASE("one-component models have the expected parameter counts") {
  const auto ds = smooth_dataset(12, 10, 3);
  const auto basis = basis_of(ds, 1);
  MlpConfig c;
  c.max_epochs = 1;
  const auto multi = train(ds, ds, basis, c);
  const auto single = train_single_output_baseline(ds, ds, basis, c);
  const Index expected = (2 * 100 + 100) + 5 * (100 * 100 + 100) + (100 + 1);
  CHECK(multi.model.network.parameter_count() == expected);
  REQUIRE(single.model.networks.size() == 1);
  CHECK(single.model.networks[0].parameter_count() == expected);
}

TEST_CASE("recomposition layer is frozen during training") {
  const auto ds = smooth_dataset(15, 12, 4);
  const auto basis = basis_of(ds, 3);
  const auto r = train(ds, ds, basis, small_config(20));
  CHECK(r.model.recomposition == basis.temporal_bases);
  CHECK(r.model.mean_series == basis.mean_series);
  CHECK(r.model.basis_fingerprint == basis_fingerprint(basis.temporal_bases, basis.mean_series));
}

TEST_CASE("validation loss is measured on the recomposed signal and the best weights are kept") {
  const auto train_ds = smooth_dataset(30, 16, 5);
  const auto val_ds = smooth_dataset(10, 16, 6);
  const auto basis = basis_of(train_ds, 4);
  const auto r = train(train_ds, val_ds, basis, small_config(60));
  const double best = *std::min_element(r.report.val_mae.begin(), r.report.val_mae.end());
  CHECK(r.report.best_val_mae == best);
  CHECK(r.report.val_mae[static_cast<std::size_t>(r.report.best_epoch - 1)] == best);
  const double restored = evaluate_mae(forward(r.model, val_ds.coords).signal, val_ds.values);
  CHECK(restored == doctest::Approx(best).epsilon(1e-12));
  CHECK(r.report.learning_rate.size() == r.report.train_mae.size());
}

TEST_CASE("early stopping honours the patience") {
  const auto train_ds = smooth_dataset(30, 16, 7);
  const auto val_ds = smooth_dataset(10, 16, 8);
  const auto basis = basis_of(train_ds, 4);
  auto c = small_config(500);
  c.early_stopping = true;
  c.patience = 5;
  c.schedule.max_lr = 0.5;
  const auto r = train(train_ds, val_ds, basis, c);
  CHECK(r.report.stopping_epoch < 500);
  CHECK(r.report.stopping_epoch - r.report.best_epoch == 5);
}

TEST_CASE("training is deterministic for a seed") {
  const auto ds = smooth_dataset(25, 10, 9);
  const auto basis = basis_of(ds, 3);
  const auto a = train(ds, ds, basis, small_config(15));
  const auto b = train(ds, ds, basis, small_config(15));
  CHECK(a.model.network == b.model.network);
  CHECK(a.report.train_mae == b.report.train_mae);
  auto other = small_config(15);
  other.seed = 6;
  CHECK_FALSE(train(ds, ds, basis, other).model.network == a.model.network);
  const auto ba = train_single_output_baseline(ds, ds, basis, small_config(5));
  const auto bb = train_single_output_baseline(ds, ds, basis, small_config(5));
  for (std::size_t k = 0; k < ba.model.networks.size(); ++k) CHECK(ba.model.networks[k] == bb.model.networks[k]);
}

TEST_CASE("divergent training raises a training error") {
  const auto ds = smooth_dataset(20, 10, 10);
  const auto basis = basis_of(ds, 2);
  auto c = small_config(50);
  c.schedule.max_lr = 1e200;
  c.schedule.initial_div = 1.0;
  CHECK_THROWS_AS(train(ds, ds, basis, c), TrainingError);
}

TEST_CASE("training input checks") {
  const auto ds = smooth_dataset(20, 10, 11);
  const auto basis = basis_of(ds, 2);
  const auto shorter = smooth_dataset(20, 9, 11);
  CHECK_THROWS_AS(train(shorter, shorter, basis, small_config(1)), ShapeError);
  auto holes = ds;
  holes.values(0, 0) = std::numeric_limits<double>::quiet_NaN();
  CHECK_THROWS_AS(train(holes, ds, basis, small_config(1)), PreconditionError);
  auto bad = small_config(1);
  bad.width = 0;
  CHECK_THROWS_AS(train(ds, ds, basis, bad), ConfigError);
}

TEST_CASE("coefficient targets use decomposition rows or projections") {
  const auto ds = smooth_dataset(20, 10, 12);
  const auto basis = basis_of(ds, 3);
  CHECK(coefficient_targets(ds, basis) == basis.spatial_coeffs);
  auto renamed = ds;
  for (auto& id : renamed.station_ids) id += "_new";
  CHECK(test::max_abs(coefficient_targets(renamed, basis) - basis.spatial_coeffs) < 1e-10);
}

TEST_CASE("grid prediction shapes and purity") {
  Rng rng(13);
  auto ds = test::random_dataset(40, 1080, rng, 139.0);
  const auto basis = basis_of(ds, 20);
  MlpConfig c;
  c.max_epochs = 1;
  const auto model = train(ds, ds, basis, c).model;
  GridSpec grid;
  grid.nx = 139;
  grid.ny = 88;
  const auto p = predict_grid(model, grid);
  CHECK(p.coeff_maps.rows() == 12232);
  CHECK(p.coeff_maps.cols() == 20);
  CHECK(p.field.rows() == 12232);
  CHECK(p.field.cols() == 1080);
  // A cell's prediction does not depend on which other cells are predicted.
  const Matrix cov = grid.covariates();
  for (Index cell : {Index{0}, Index{777}, Index{12231}}) {
    const auto one = forward(model, cov.row(cell));
    CHECK(one.coeffs.row(0) == p.coeff_maps.row(cell));
    CHECK(one.signal.row(0) == p.field.row(cell));
  }
  CHECK(predict_grid(model, grid).field == p.field);

  GridSpec with_alt = grid;
  with_alt.extra_names = {"alt"};
  with_alt.extra = Matrix::Zero(grid.num_cells(), 1);
  CHECK_THROWS_AS(predict_grid(model, with_alt), ShapeError);
}

TEST_CASE("baseline grid prediction") {
  const auto ds = smooth_dataset(20, 12, 14);
  const auto basis = basis_of(ds, 3);
  const auto model = train_single_output_baseline(ds, ds, basis, small_config(3)).model;
  const auto p = predict_grid(model, small_grid());
  CHECK(p.coeff_maps.rows() == 30);
  CHECK(p.coeff_maps.cols() == 3);
  CHECK(test::max_abs(p.field - recompose(p.coeff_maps, basis.temporal_bases, basis.mean_series)) < 1e-12);
}

TEST_CASE("model persistence round trip and fingerprint check") {
  const auto ds = smooth_dataset(20, 12, 15);
  const auto basis = basis_of(ds, 3);
  auto c = small_config(5);
  c.batch_norm = true;
  const auto model = train(ds, ds, basis, c).model;
  test::TempDir dir("model");
  save_model(model, dir / "mlp");
  const auto loaded = load_model(dir / "mlp");
  CHECK(loaded.network == model.network);
  CHECK(loaded.config.batch_norm);
  CHECK(loaded.covariate_names == model.covariate_names);
  const auto grid = small_grid();
  CHECK(predict_grid(loaded, grid).field == predict_grid(model, grid).field);

  const auto baseline = train_single_output_baseline(ds, ds, basis, small_config(2)).model;
  save_model(baseline, dir / "baseline");
  const auto loaded_baseline = load_baseline_model(dir / "baseline");
  CHECK(predict_grid(loaded_baseline, grid).field == predict_grid(baseline, grid).field);
  CHECK_THROWS_AS(load_model(dir / "baseline"), ConfigError);

  std::string phi = test::read_text(dir / "mlp" / "phi.csv");
  const auto pos = phi.find_first_of("123456789");
  phi[pos] = phi[pos] == '9' ? '8' : static_cast<char>(phi[pos] + 1);
  test::write_text(dir / "mlp" / "phi.csv", phi);
  CHECK_THROWS_AS(load_model(dir / "mlp"), IoError);
  CHECK_THROWS_AS(load_model(dir / "missing"), IoError);
}

TEST_CASE("training log format") {
  const auto ds = smooth_dataset(12, 8, 16);
  const auto r = train(ds, ds, basis_of(ds, 2), small_config(3));
  test::TempDir dir("log");
  r.report.write_log(dir / "log.csv");
  const std::string text = test::read_text(dir / "log.csv");
  CHECK(text.rfind("epoch,train_mae,val_mae,lr\n1,", 0) == 0);
  CHECK(std::count(text.begin(), text.end(), '\n') == 4);
}
