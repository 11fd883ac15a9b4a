// Acceptance checks: one PASS/FAIL line per criterion.
//
// Usage: acceptance [--tolerate N]...
// Exit status is 1 when any criterion fails, except those named with
// --tolerate, whose lines are still printed as FAIL.

#include <chrono>
#include <cmath>
#include <cstdlib>
#include <functional>
#include <iostream>
#include <numbers>
#include <set>
#include <sstream>
#include <string>

#include <Eigen/Eigenvalues>
#include <fmt/format.h>

#include "eofnet/dataset.hpp"
#include "eofnet/eof.hpp"
#include "eofnet/pipeline.hpp"
#include "eofnet/variogram.hpp"
#include "oracles.hpp"
#include "test_util.hpp"

using namespace eofnet;
namespace fs = std::filesystem;

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point start) { return std::chrono::duration<double>(Clock::now() - start).count(); }

struct Outcome {
  bool pass;
  std::string detail;
};

CenteredDataset random_centered(Index s, Index t, Rng& rng) {
  auto ds = test::random_dataset(s, t, rng);
  return center(ds);
}

Outcome full_rank_identity() {
  const auto start = Clock::now();
  Rng rng(101);
  double worst = 0.0;
  for (int m = 0; m < 50; ++m) {
    const Index s = 2 + static_cast<Index>(rng.below(63)), t = 1 + static_cast<Index>(rng.below(64));
    auto ds = test::random_dataset(s, t, rng);
    const auto basis = decompose(center(ds));
    const auto full = truncate(basis, FixedComponents{basis.k_total()});
    const Matrix rec = reconstruct(full.spatial_coeffs, full, true);
    worst = std::max(worst, (rec - ds.values).norm() / ds.values.norm());
  }
  const double secs = seconds_since(start);
  return {worst < 1e-8 && secs < 5.0, fmt::format("max relative error {:.2e}, {:.2f} s", worst, secs)};
}

Outcome eigen_oracle() {
  Rng rng(202);
  double worst = 0.0;
  for (int m = 0; m < 20; ++m) {
    const Index t = 2 + static_cast<Index>(rng.below(10));
    const Index s = t + 2 + static_cast<Index>(rng.below(20));
    const auto cd = random_centered(s, t, rng);
    const auto basis = decompose(cd);
    const Matrix cov = cd.centered.transpose() * cd.centered / static_cast<double>(s - 1);
    Eigen::SelfAdjointEigenSolver<Matrix> eig(cov);
    const Vector ev = eig.eigenvalues().reverse();
    for (Index k = 0; k < basis.k_total(); ++k) {
      const double sq = basis.singular_values(k) * basis.singular_values(k);
      worst = std::max(worst, std::abs(sq - ev(k)) / std::abs(ev(k)));
    }
  }
  return {worst < 1e-8, fmt::format("max relative eigenvalue error {:.2e}", worst)};
}

Outcome gradient_check() {
  const double plain = test::gradient_check(false, 303);
  const double bn = test::gradient_check(true, 304);
  return {plain < 1e-4 && bn < 1e-4, fmt::format("max relative error {:.2e} (batch norm {:.2e})", plain, bn)};
}

Outcome variogram_oracle() {
  Rng rng(404);
  double worst = 0.0;
  for (int m = 0; m < 10; ++m) {
    const Index s = 2 + static_cast<Index>(rng.below(4)), t = 2 + static_cast<Index>(rng.below(4));
    const auto ds = test::random_dataset(s, t, rng);
    const auto binning = default_binning(ds, 3, 4);
    worst = std::max(worst, test::surface_difference(empirical_semivariogram(ds, binning).gamma,
                                                     test::variogram_oracle(ds, binning)));
  }
  return {worst <= 1e-12, fmt::format("max cell difference {:.2e}", worst)};
}

Outcome truncation_scan() {
  Rng rng(505);
  int mismatches = 0;
  for (int m = 0; m < 20; ++m) {
    const Index s = 5 + static_cast<Index>(rng.below(40)), t = 3 + static_cast<Index>(rng.below(40));
    auto ds = test::random_dataset(s, t, rng);
    // Low-rank structure so that 0.95 is reached before the last component.
    const Matrix u = test::random_matrix(s, 3, rng), v = test::random_matrix(3, t, rng);
    ds.values = 3.0 * u * v + 0.3 * ds.values;
    const auto basis = decompose(center(ds));
    const Vector cum = cumulative_explained_variance(basis);
    Index expected = 0;
    for (Index k = 1; k <= basis.k_total() && expected == 0; ++k)
      if (cum(k - 1) >= 0.95) expected = k;
    if (truncate(basis, VarianceThreshold{0.95}).k_used() != expected) ++mismatches;
  }
  return {mismatches == 0, fmt::format("{} of 20 decompositions disagree with the scan", mismatches)};
}

Outcome imputation_oracle() {
  Rng rng(606);
  const Index s = 200, t = 30;
  auto ds = test::random_dataset(s, t, rng, 50.0);
  // Integer values keep every neighbour sum exact regardless of order.
  for (Index i = 0; i < s; ++i)
    for (Index j = 0; j < t; ++j)
      ds.values(i, j) = std::round(10.0 * (std::sin(ds.coords(i, 0) / 8.0) + std::cos(ds.coords(i, 1) / 10.0)) +
                                   5.0 * std::sin(static_cast<double>(j) / 5.0));
  const StationDataset complete = ds;
  std::set<std::pair<Index, Index>> holes;
  while (holes.size() < 100)
    holes.insert({static_cast<Index>(rng.below(s)), static_cast<Index>(rng.below(t))});
  for (const auto& [i, j] : holes) ds.values(i, j) = std::numeric_limits<double>::quiet_NaN();

  const auto filled = impute_missing(ds);
  int mismatches = 0;
  double abs_error = 0.0;
  for (const auto& [i, j] : holes) {
    if (filled.values(i, j) != test::brute_force_impute(ds, i, j)) ++mismatches;
    abs_error += std::abs(filled.values(i, j) - complete.values(i, j));
  }
  abs_error /= static_cast<double>(holes.size());
  double sd = 0.0;
  for (Index j = 0; j < t; ++j) {
    const auto col = complete.values.col(j);
    sd += std::sqrt((col.array() - col.mean()).square().sum() / static_cast<double>(s - 1));
  }
  sd /= static_cast<double>(t);
  return {mismatches == 0 && abs_error < sd,
          fmt::format("{} mismatches, mean hole error {:.3f} vs mean per-time sd {:.3f}", mismatches, abs_error, sd)};
}

Outcome determinism(const fs::path& root) {
  const std::string text = R"({
    "seed": 11,
    "simulation": {"nx": 32, "ny": 24, "t_len": 96, "n_components": 8, "length_scale": 5,
                   "stations": [120, 40, 40]},
    "model": {"hidden_layers": 3, "width": 32, "max_epochs": 40},
    "baseline": true,
    "variogram": {"space_bins": 6, "max_lag": 4}
  })";
  std::ostringstream log;
  for (const char* name : {"a", "b"}) {
    auto c = parse_run_config(text, root);
    c.output = root / name;
    if (cmd_run(c, log) != kExitOk) return {false, "run failed: " + log.str()};
  }
  std::vector<fs::path> files = {"metrics.csv"};
  for (const char* dir : {"basis", "model", "baseline"})
    for (const auto& e : fs::recursive_directory_iterator(root / "a" / dir))
      if (e.is_regular_file()) files.push_back(fs::relative(e.path(), root / "a"));
  int differing = 0;
  for (const auto& f : files)
    if (!fs::exists(root / "b" / f) || test::read_text(root / "a" / f) != test::read_text(root / "b" / f)) ++differing;
  return {differing == 0, fmt::format("{} of {} compared files differ", differing, files.size())};
}

struct Replica {
  RunSummary summary;
  double noise_floor = 0.0;
  std::string log;
};

Replica run_replica(const fs::path& root) {
  const std::string text = R"({
    "seed": 1,
    "simulation": {"nx": 64, "ny": 48, "t_len": 256, "n_components": 20, "noise_ratio": 0.1,
                   "stations": [500, 250, 250]},
    "truncation": {"components": 20},
    "model": {"early_stopping": false},
    "baseline": true,
    "outputs": {"images": false}
  })";
  auto c = parse_run_config(text, root);
  c.output = root / "replica";
  Replica r;
  std::ostringstream log;
  r.summary = run_pipeline(c, &log);
  r.log = log.str();
  // Smallest achievable test MAE: the noise is Gaussian with this sd.
  GridSpec grid;
  grid.nx = c.simulation->nx;
  grid.ny = c.simulation->ny;
  grid.cell_size = c.simulation->cell_size;
  SimulationParams params = c.simulation->params;
  params.seed = stage_seeds(c.seed).simulation;
  r.noise_floor = synthesize(grid, params).noise_sd * std::sqrt(2.0 / std::numbers::pi);
  return r;
}

Outcome variance_capture(const Replica& r) {
  if (r.summary.cumulative_variance.size() < 20) return {false, "decomposition did not complete"};
  const double captured = r.summary.cumulative_variance(19);
  double secs = 0.0;
  for (const char* s : {"load", "split", "center", "decompose", "truncate"}) secs += r.summary.stage_seconds(s);
  return {captured >= 0.98 && secs < 120.0,
          fmt::format("20 components capture {:.4f}, simulate + decompose {:.1f} s", captured, secs)};
}

Outcome ordering(const Replica& r) {
  if (!r.summary.ok || !r.summary.baseline_test_mae) return {false, "replica run failed: " + r.summary.error};
  const double multi = r.summary.test_mae, single = *r.summary.baseline_test_mae;
  const double gain = (single - multi) / single;
  return {gain >= 0.10, fmt::format("test MAE multi-output {:.4f}, baseline {:.4f}, relative gain {:.1f}% "
                                    "(noise floor {:.4f})",
                                    multi, single, 100.0 * gain, r.noise_floor)};
}

Outcome residual_flatness(const Replica& r) {
  if (!r.summary.residual_variogram || !r.summary.data_variogram) return {false, "variograms missing"};
  const double residual = flatness_ratio(*r.summary.residual_variogram);
  const double data = flatness_ratio(*r.summary.data_variogram);
  return {residual < 1.5 && data > 3.0, fmt::format("max/min residual {:.3f}, data {:.3f}", residual, data)};
}

}  // namespace

int main(int argc, char** argv) {
  std::set<int> tolerated;
  for (int a = 1; a < argc; ++a) {
    const std::string arg = argv[a];
    if (arg == "--tolerate" && a + 1 < argc) {
      tolerated.insert(std::atoi(argv[++a]));
    } else {
      std::cerr << "usage: acceptance [--tolerate N]...\n";
      return 2;
    }
  }

  test::TempDir root("acceptance");
  const Replica replica = run_replica(root.path());

  const std::vector<std::pair<std::string, std::function<Outcome()>>> criteria = {
      {"full-rank EOF identity", full_rank_identity},
      {"EOF eigen-oracle equivalence", eigen_oracle},
      {"replica variance capture", [&] { return variance_capture(replica); }},
      {"multi-output beats baseline by 10%", [&] { return ordering(replica); }},
      {"gradient check", gradient_check},
      {"variogram oracle", variogram_oracle},
      {"residual flatness", [&] { return residual_flatness(replica); }},
      {"truncation rule", truncation_scan},
      {"determinism", [&] { return determinism(root.path() / "determinism"); }},
      {"imputation oracle", imputation_oracle},
  };

  bool ok = true;
  for (std::size_t i = 0; i < criteria.size(); ++i) {
    Outcome o;
    try {
      o = criteria[i].second();
    } catch (const std::exception& e) {
      o = {false, fmt::format("exception: {}", e.what())};
    }
    const int id = static_cast<int>(i) + 1;
    std::cout << fmt::format("{} {:>2} {}: {}{}\n", o.pass ? "PASS" : "FAIL", id, criteria[i].first, o.detail,
                             !o.pass && tolerated.count(id) ? " [tolerated]" : "")
              << std::flush;
    if (!o.pass && !tolerated.count(id)) ok = false;
  }
  if (!replica.summary.ok) std::cerr << replica.log;
  return ok ? 0 : 1;
}
