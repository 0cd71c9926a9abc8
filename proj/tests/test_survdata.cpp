#include <doctest.h>

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <random>
#include <vector>

#include "frailtyscan/errors.hpp"
#include "frailtyscan/simulation.hpp"
#include "frailtyscan/survdata.hpp"

using namespace frailtyscan;

namespace {

StudyRegion two_units() {
  return StudyRegion({{"u1", 0, 0}, {"u2", 1, 0}}, {{"u1", "u2"}});
}

std::string write_temp(const std::string& name, const std::string& content) {
  const auto path = (std::filesystem::temp_directory_path() / name).string();
  std::ofstream out(path);
  out << content;
  return path;
}

SurvivalDataset from_times(const StudyRegion& region, std::vector<double> times,
                           std::vector<int> events, std::vector<std::size_t> units) {
  const auto n = static_cast<Eigen::Index>(times.size());
  Eigen::VectorXd t(n);
  Eigen::VectorXi e(n);
  for (Eigen::Index i = 0; i < n; ++i) {
    t[i] = times[static_cast<std::size_t>(i)];
    e[i] = events[static_cast<std::size_t>(i)];
  }
  return SurvivalDataset(region, std::move(units), std::move(t), std::move(e),
                         Eigen::MatrixXd());
}

}  // namespace

TEST_CASE("ingest a single-row file") {
  const auto region = two_units();
  const auto path = write_temp("fs_one_row.csv", "unit_id,time,event\nu1,2.0,1\n");
  const auto data = ingest_individuals(path, region);
  CHECK(data.n() == 1);
  CHECK(data.n_events() == 1);
  CHECK(data.n_covariates() == 0);
  CHECK(data.unit_counts()[0] == 1);
}

TEST_CASE("ingest rejects bad rows with their row number") {
  const auto region = two_units();
  CHECK_THROWS_WITH_AS(
      ingest_individuals(
          write_temp("fs_bad_time.csv", "unit_id,time,event\nu1,0,1\n"), region),
      doctest::Contains("non-positive time at row 2"), ValidationError);
  CHECK_THROWS_WITH_AS(
      ingest_individuals(
          write_temp("fs_bad_event.csv", "unit_id,time,event\nu1,1.0,2\n"), region),
      doctest::Contains("row 2"), ValidationError);
  CHECK_THROWS_WITH_AS(
      ingest_individuals(
          write_temp("fs_bad_unit.csv", "unit_id,time,event\nzz,1.0,1\n"), region),
      doctest::Contains("zz"), ValidationError);
  CHECK_THROWS_WITH_AS(
      ingest_individuals(
          write_temp("fs_ragged.csv", "unit_id,time,event,z1\nu1,1.0,1\n"), region),
      doctest::Contains("ragged"), ValidationError);
  CHECK_THROWS_WITH_AS(
      ingest_individuals(
          write_temp("fs_weights.csv", "unit_id,time,event,weights\nu1,1.0,1,2\n"),
          region),
      doctest::Contains("weights"), ValidationError);
}

TEST_CASE("simulated 1690-row export round-trips") {
  const auto map = builtin_map169();
  const auto field = generate_frailty_field(map.region, map.cluster_units, 1.0, 0.4,
                                            1.0, 20240601);
  const auto data = generate_survival_times(map.region, field, map.unit_counts, 7);
  const auto path =
      (std::filesystem::temp_directory_path() / "fs_roundtrip.csv").string();
  write_individuals(path, data, map.region);
  const auto back = ingest_individuals(path, map.region);
  REQUIRE(back.n() == data.n());
  CHECK(back.units() == data.units());
  CHECK((back.times() - data.times()).cwiseAbs().maxCoeff() == 0.0);
  CHECK((back.events() - data.events()).cwiseAbs().maxCoeff() == 0);
}

TEST_CASE("grid size follows the unique-times rule") {
  const auto region = two_units();
  SUBCASE("40 unique times give two intervals") {
    std::vector<double> times;
    std::vector<int> events;
    std::vector<std::size_t> units;
    for (int i = 0; i < 40; ++i) {
      times.push_back(0.1 * (i + 1));
      events.push_back(1);
      units.push_back(i % 2);
    }
    const auto grid = build_grid(from_times(region, times, events, units));
    CHECK(grid.n_intervals() == 2);
    CHECK(grid.cutpoints.front() == 0.0);
    CHECK(grid.cutpoints.back() == doctest::Approx(4.0).epsilon(1e-12));
  }
  SUBCASE("5 unique times clamp to one interval") {
    const auto grid = build_grid(
        from_times(region, {1, 2, 3, 4, 5}, {1, 1, 1, 1, 1}, {0, 1, 0, 1, 0}));
    CHECK(grid.n_intervals() == 1);
    CHECK(grid.cutpoints.back() == 5.0);
  }
}

TEST_CASE("grid cutpoints match an independent quantile routine") {
  const auto map = builtin_map169();
  const auto field = generate_frailty_field(map.region, {}, 0.0, 0.0, 1.0, 99);
  const auto data = generate_survival_times(map.region, field, map.unit_counts, 123);
  const auto grid = build_grid(data);

  std::vector<double> unique(data.times().data(), data.times().data() + data.times().size());
  std::sort(unique.begin(), unique.end());
  unique.erase(std::unique(unique.begin(), unique.end()), unique.end());
  const std::size_t U = unique.size();
  const std::size_t n_T = std::max<std::size_t>(1, U / 20);
  REQUIRE(grid.n_intervals() == n_T);
  for (std::size_t j = 1; j < n_T; ++j) {
    // Linear-interpolation quantile at level j / n_T.
    const double h =
        (static_cast<double>(U) - 1.0) * static_cast<double>(j) / static_cast<double>(n_T);
    const auto lo = static_cast<std::size_t>(std::floor(h));
    const double q = unique[lo] + (h - std::floor(h)) * (unique[lo + 1] - unique[lo]);
    CHECK(std::abs(grid.cutpoints[j] - q) < 1e-12);
  }
  CHECK(grid.cutpoints.back() == unique.back());
}

TEST_CASE("piecewise expansion conserves exposure and events") {
  const auto region = two_units();
  SUBCASE("event within a single interval") {
    const auto data = from_times(region, {3.0}, {1}, {0});
    const auto records = expand_piecewise(data, grid_from_cutpoints({0, 5}));
    REQUIRE(records.size() == 1);
    CHECK(records[0].exposure == 3.0);
    CHECK(records[0].events == 1);
    CHECK(records[0].interval == 0);
  }
  SUBCASE("censored time split across intervals") {
    const auto data = from_times(region, {3.0}, {0}, {0});
    const auto records = expand_piecewise(data, grid_from_cutpoints({0, 2, 5}));
    REQUIRE(records.size() == 2);
    CHECK(records[0].exposure == 2.0);
    CHECK(records[0].events == 0);
    CHECK(records[1].exposure == 1.0);
    CHECK(records[1].events == 0);
  }
  SUBCASE("event exactly on a cutpoint lands in the interval ending there") {
    const auto data = from_times(region, {2.0}, {1}, {0});
    const auto records = expand_piecewise(data, grid_from_cutpoints({0, 2, 5}));
    REQUIRE(records.size() == 1);
    CHECK(records[0].interval == 0);
    CHECK(records[0].exposure == 2.0);
    CHECK(records[0].events == 1);
  }
  SUBCASE("random individuals: totals match to 1e-12") {
    std::mt19937_64 engine(11);
    std::vector<double> times;
    std::vector<int> events;
    std::vector<std::size_t> units;
    for (int i = 0; i < 100; ++i) {
      times.push_back(std::exponential_distribution<double>(0.5)(engine));
      events.push_back(engine() % 2 == 0 ? 1 : 0);
      units.push_back(engine() % 2);
    }
    const auto data = from_times(region, times, events, units);
    const auto grid = build_grid(data);
    const auto records = expand_piecewise(data, grid);
    double exposure = 0.0;
    int total_events = 0;
    for (const auto& r : records) {
      CHECK(r.exposure > 0.0);
      exposure += r.exposure;
      total_events += r.events;
    }
    CHECK(std::abs(exposure - data.times().sum()) < 1e-12 * data.times().sum());
    CHECK(total_events == static_cast<int>(data.n_events()));
  }
}

TEST_CASE("grid is deterministic for a fixed multiset of times") {
  const auto region = two_units();
  const auto d1 = from_times(region, {3, 1, 2, 5, 4}, {1, 1, 1, 1, 1}, {0, 1, 0, 1, 0});
  const auto d2 = from_times(region, {5, 4, 3, 2, 1}, {1, 1, 1, 1, 1}, {1, 0, 1, 0, 1});
  CHECK(build_grid(d1).cutpoints == build_grid(d2).cutpoints);
}
