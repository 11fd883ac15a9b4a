#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>
#include <numeric>
#include <set>

#include "eofnet/dataset.hpp"
#include "eofnet/errors.hpp"
#include "oracles.hpp"
#include "test_util.hpp"

using namespace eofnet;
using eofnet::test::TempDir;
using eofnet::test::write_text;

namespace {

const double kNaN = std::numeric_limits<double>::quiet_NaN();

StationDataset toy(const TempDir& dir, const std::string& measurements) {
  write_text(dir / "stations.csv", "station_id,x,y,alt\nA,0,0,100\nB,1,0,200\nC,0,1,300\n");
  write_text(dir / "measurements.csv", measurements);
  return load_csv(dir / "stations.csv", dir / "measurements.csv");
}

}  // namespace

TEST_CASE("load_csv reads a toy dataset") {
  TempDir dir("ds");
  const auto ds = toy(dir, "station_id,time,value\nA,0,1.5\nA,1,2\nB,0,3\nB,1,4\nC,1,6\nC,0,5\n");
  CHECK(ds.num_stations() == 3);
  CHECK(ds.num_times() == 2);
  CHECK(ds.missing_count() == 0);
  CHECK(ds.covariate_names == std::vector<std::string>{"x", "y", "alt"});
  CHECK(ds.coords(2, 2) == 300.0);
  CHECK(ds.values(0, 0) == 1.5);
  CHECK(ds.values(2, 0) == 5.0);
  CHECK(ds.times.kind == TimeKind::kIndex);
}

TEST_CASE("empty value cells are flagged missing") {
  TempDir dir("ds");
  const auto ds = toy(dir, "station_id,time,value\nA,0,1\nA,1,\nB,0,3\nB,1,4\nC,0,5\nC,1,6\n");
  CHECK(ds.missing_count() == 1);
  CHECK(std::isnan(ds.values(0, 1)));
}

TEST_CASE("cells absent from the measurements file are missing") {
  TempDir dir("ds");
  const auto ds = toy(dir, "station_id,time,value\nA,0,1\nA,1,2\nB,0,3\nC,0,5\nC,1,6\n");
  CHECK(ds.missing_count() == 1);
  CHECK(std::isnan(ds.values(1, 1)));
}

TEST_CASE("load_csv errors") {
  TempDir dir("ds");
  SUBCASE("malformed row names the line") {
    try {
      toy(dir, "station_id,time,value\nA,0,1\nA,1,abc\n");
      FAIL("expected ParseError");
    } catch (const ParseError& e) {
      CHECK(std::string(e.what()).find("measurements.csv:3") != std::string::npos);
    }
  }
  SUBCASE("wrong field count") { CHECK_THROWS_AS(toy(dir, "station_id,time,value\nA,0\n"), ParseError); }
  SUBCASE("duplicate station/time") {
    CHECK_THROWS_AS(toy(dir, "station_id,time,value\nA,0,1\nA,0,2\n"), DuplicateKeyError);
  }
  SUBCASE("unknown station") {
    CHECK_THROWS_AS(toy(dir, "station_id,time,value\nA,0,1\nZ,0,2\n"), ReferentialError);
  }
  SUBCASE("irregular time axis") {
    CHECK_THROWS_AS(toy(dir, "station_id,time,value\nA,0,1\nA,1,1\nA,3,1\n"), ParseError);
  }
  SUBCASE("duplicate station id") {
    write_text(dir / "stations.csv", "station_id,x,y\nA,0,0\nA,1,1\n");
    write_text(dir / "measurements.csv", "station_id,time,value\nA,0,1\n");
    CHECK_THROWS_AS(load_csv(dir / "stations.csv", dir / "measurements.csv"), DuplicateKeyError);
  }
  SUBCASE("bad stations header") {
    write_text(dir / "stations.csv", "id,x,y\nA,0,0\n");
    write_text(dir / "measurements.csv", "station_id,time,value\nA,0,1\n");
    CHECK_THROWS_AS(load_csv(dir / "stations.csv", dir / "measurements.csv"), ParseError);
  }
  SUBCASE("missing file") { CHECK_THROWS_AS(load_csv(dir / "nope.csv", dir / "nope2.csv"), Error); }
}

TEST_CASE("ISO-8601 time stamps") {
  CHECK(parse_iso8601("1970-01-01") == 0);
  CHECK(parse_iso8601("1970-01-02T00:00:00Z") == 86400);
  CHECK(parse_iso8601("2000-03-01 12:30") == 951913800);
  CHECK(!parse_iso8601("2000-13-01"));
  CHECK(!parse_iso8601("yesterday"));
  CHECK(format_iso8601(951913800) == "2000-03-01T12:30:00");
  for (std::int64_t t : {-86400LL * 400, 0LL, 1234567890LL, 4102444800LL}) CHECK(parse_iso8601(format_iso8601(t)) == t);

  TempDir dir("iso");
  const auto ds = toy(dir,
                      "station_id,time,value\nA,2020-01-01T00:00,1\nA,2020-01-01T01:00,2\n"
                      "B,2020-01-01T00:00,3\nC,2020-01-01T01:00,4\n");
  CHECK(ds.times.kind == TimeKind::kIso8601);
  CHECK(ds.num_times() == 2);
  CHECK(ds.times.label(1) == "2020-01-01T01:00:00");
}

TEST_CASE("two-year hourly file with 369 stations") {
  // Written with plain stdio, independently of the loader's writer.
  TempDir dir("big");
  const int stations = 369;
  {
    FILE* f = std::fopen((dir / "stations.csv").c_str(), "w");
    std::fprintf(f, "station_id,x,y,alt\n");
    for (int i = 0; i < stations; ++i) std::fprintf(f, "st%03d,%d,%d,%d\n", i, i % 20, i / 20, 400 + i);
    std::fclose(f);
  }
  long rows = 0;
  {
    FILE* f = std::fopen((dir / "measurements.csv").c_str(), "w");
    std::fprintf(f, "station_id,time,value\n");
    static const int days_in_month[] = {31, 29, 31, 30, 31, 30, 31, 31, 30, 31, 30, 31};  // 2020 leap
    for (int i = 0; i < stations; ++i)
      for (int year = 2020; year <= 2021; ++year)
        for (int m = 0; m < 12; ++m) {
          const int days = (m == 1 && year == 2021) ? 28 : days_in_month[m];
          for (int d = 1; d <= days; ++d)
            for (int h = 0; h < 24; ++h) {
              std::fprintf(f, "st%03d,%04d-%02d-%02dT%02d:00,%d.5\n", i, year, m + 1, d, h, (h + i) % 30);
              ++rows;
            }
        }
    std::fclose(f);
  }
  const auto ds = load_csv(dir / "stations.csv", dir / "measurements.csv");
  CHECK(ds.num_stations() == 369);
  CHECK(ds.num_times() == 17544);
  CHECK(rows == 369L * 17544L);
  CHECK(ds.missing_count() == 0);
  CHECK(ds.values(5, 3) == 8.5);
}

TEST_CASE("write_csv round trip") {
  Rng rng(11);
  auto ds = test::random_dataset(6, 5, rng);
  ds.values(2, 3) = kNaN;
  TempDir dir("rt");
  write_csv(ds, dir.path());
  const auto back = load_csv(dir / "stations.csv", dir / "measurements.csv");
  CHECK(back.station_ids == ds.station_ids);
  CHECK(back.coords == ds.coords);
  CHECK(back.missing_count() == 1);
  CHECK(std::isnan(back.values(2, 3)));
  for (Index i = 0; i < 6; ++i)
    for (Index j = 0; j < 5; ++j)
      if (!(i == 2 && j == 3)) CHECK(back.values(i, j) == ds.values(i, j));
}

TEST_CASE("imputation of a constant field returns the constant") {
  Rng rng(2);
  auto ds = test::random_dataset(12, 6, rng);
  ds.values.setConstant(3.25);
  ds.values(4, 2) = kNaN;
  const auto out = impute_missing(ds);
  CHECK(out.values(4, 2) == 3.25);
}

TEST_CASE("imputation matches a brute-force neighbour mean") {
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    Rng rng(seed);
    auto ds = test::random_dataset(10, 6, rng);
    const Index i = static_cast<Index>(rng.below(10)), j = static_cast<Index>(rng.below(6));
    const double original = ds.values(i, j);
    ds.values(i, j) = kNaN;
    const auto out = impute_missing(ds);
    CHECK(out.values(i, j) == doctest::Approx(test::brute_force_impute(ds, i, j)).epsilon(1e-14));
    CHECK(out.values(i, j) != original);
    for (Index r = 0; r < 10; ++r)
      for (Index c = 0; c < 6; ++c)
        if (!(r == i && c == j)) CHECK(out.values(r, c) == ds.values(r, c));
  }
}

TEST_CASE("imputation at the first time step uses 8 stations x 2 times") {
  Rng rng(3);
  auto ds = test::random_dataset(15, 4, rng);
  ds.values(0, 0) = kNaN;
  const auto nb = imputation_neighbours(ds, 0);
  REQUIRE(nb.size() == 8);
  double sum = 0.0;
  for (Index k : nb) sum += ds.values(k, 0) + ds.values(k, 1);
  CHECK(impute_missing(ds).values(0, 0) == doctest::Approx(sum / 16.0).epsilon(1e-14));
}

TEST_CASE("imputation ignores missing neighbours and never chains") {
  Rng rng(4);
  auto ds = test::random_dataset(10, 5, rng);
  ds.values(0, 2) = kNaN;
  ds.values(1, 2) = kNaN;
  const auto out = impute_missing(ds);
  CHECK(out.values(0, 2) == doctest::Approx(test::brute_force_impute(ds, 0, 2)).epsilon(1e-14));
  CHECK(out.values(1, 2) == doctest::Approx(test::brute_force_impute(ds, 1, 2)).epsilon(1e-14));
  CHECK(out.missing_count() == 0);
}

TEST_CASE("imputation failure lists the cell") {
  Rng rng(5);
  auto ds = test::random_dataset(3, 3, rng);
  ds.values.row(1).setConstant(kNaN);
  ds.values.row(2).setConstant(kNaN);
  ds.values(0, 1) = kNaN;
  try {
    impute_missing(ds);
    FAIL("expected ImputationError");
  } catch (const ImputationError& e) {
    CHECK(std::string(e.what()).find("s000") != std::string::npos);
  }
}

TEST_CASE("imputation is idempotent on complete data") {
  Rng rng(6);
  const auto ds = test::random_dataset(9, 4, rng);
  CHECK(impute_missing(ds).values == ds.values);
}

TEST_CASE("neighbour ties break by station id") {
  StationDataset ds;
  ds.covariate_names = {"x", "y"};
  ds.coords.resize(11, 2);
  ds.coords.row(0) << 0, 0;
  // Ten stations on the unit circle's axis points, all at distance 1.
  const double pts[10][2] = {{1, 0}, {-1, 0}, {0, 1}, {0, -1}, {1, 0}, {-1, 0}, {0, 1}, {0, -1}, {1, 0}, {0, 1}};
  for (int k = 0; k < 10; ++k) ds.coords.row(k + 1) << pts[k][0], pts[k][1];
  ds.station_ids = {"center", "j", "i", "h", "g", "f", "e", "d", "c", "b", "a"};
  ds.times.values = {0};
  ds.values = Matrix::Zero(11, 1);
  const auto nb = imputation_neighbours(ds, 0);
  std::vector<std::string> ids;
  for (Index k : nb) ids.push_back(ds.station_ids[static_cast<std::size_t>(k)]);
  CHECK(ids == std::vector<std::string>{"a", "b", "c", "d", "e", "f", "g", "h"});
}

TEST_CASE("split sizes for the temperature network") {
  const auto sizes = split_sizes(369, {0.596, 0.203, 0.201});
  CHECK(sizes[0] == 220);
  CHECK(sizes[1] == 75);
  CHECK(sizes[2] == 74);
}

TEST_CASE("split_stations partitions deterministically") {
  Rng rng(8);
  const auto ds = test::random_dataset(40, 3, rng);
  const auto a = split_stations(ds, {0.5, 0.25, 0.25}, 99);
  const auto b = split_stations(ds, {0.5, 0.25, 0.25}, 99);
  CHECK(a.train.station_ids == b.train.station_ids);
  CHECK(a.test.station_ids == b.test.station_ids);
  std::set<std::string> all;
  for (const auto* part : {&a.train, &a.validation, &a.test}) {
    CHECK(part->times.values == ds.times.values);
    for (const auto& id : part->station_ids) CHECK(all.insert(id).second);
  }
  CHECK(all.size() == 40);
  CHECK(a.train.num_stations() == 20);
  const auto c = split_stations(ds, {0.5, 0.25, 0.25}, 100);
  CHECK(c.train.station_ids != a.train.station_ids);

  // Invariant to input row order.
  std::vector<Index> rows(40);
  std::iota(rows.rbegin(), rows.rend(), 0);
  const auto shuffled = split_stations(ds.subset(rows), {0.5, 0.25, 0.25}, 99);
  CHECK(shuffled.train.station_ids == a.train.station_ids);
  CHECK(shuffled.validation.station_ids == a.validation.station_ids);
  CHECK(shuffled.train.values == a.train.values);
}

TEST_CASE("split with an empty subset is a configuration error") {
  Rng rng(9);
  const auto ds = test::random_dataset(10, 3, rng);
  CHECK_THROWS_AS(split_stations(ds, {1.0, 0.0, 0.0}, 1), ConfigError);
  CHECK_THROWS_AS(split_stations(ds, {0.5, 0.5, 0.5}, 1), ConfigError);
}

TEST_CASE("center examples") {
  StationDataset ds;
  ds.station_ids = {"a", "b"};
  ds.covariate_names = {"x", "y"};
  ds.coords = Matrix::Zero(2, 2);
  ds.times.values = {0, 1};
  ds.values.resize(2, 2);
  ds.values << 1, 3, 3, 5;
  const auto c = center(ds);
  CHECK(c.mean_series(0) == 2.0);
  CHECK(c.mean_series(1) == 4.0);
  Matrix expected(2, 2);
  expected << -1, -1, 1, 1;
  CHECK(c.centered == expected);

  ds.values.setConstant(7.0);
  const auto k = center(ds);
  CHECK(k.centered.isZero(0.0));
  CHECK(k.mean_series.isConstant(7.0));

  ds.values(0, 0) = kNaN;
  CHECK_THROWS_AS(center(ds), PreconditionError);
}

TEST_CASE("centered columns sum to zero and un-centering is exact") {
  Rng rng(10);
  auto ds = test::random_dataset(50, 20, rng);
  ds.values.array() += 100.0;
  const auto c = center(ds);
  for (Index j = 0; j < 20; ++j) CHECK(std::abs(c.centered.col(j).sum()) < 1e-10);
  Matrix back = c.centered;
  back.rowwise() += c.mean_series.transpose();
  CHECK(test::max_abs(back - ds.values) <= 1e-12 * test::max_abs(ds.values));
}

TEST_CASE("standardizer uses population statistics") {
  Matrix x(4, 2);
  x << 1, 5, 2, 5, 3, 5, 4, 5;
  const auto st = Standardizer::fit(x);
  CHECK(st.mean(0) == 2.5);
  CHECK(st.scale(0) == doctest::Approx(std::sqrt(1.25)));
  CHECK(st.scale(1) == 1.0);
  const Matrix z = st.apply(x);
  CHECK(std::abs(z.col(0).sum()) < 1e-12);
  CHECK(z.col(1).isZero(0.0));
}
