#include <doctest.h>

#include <Eigen/Dense>
#include <algorithm>
#include <random>
#include <set>
#include <string>
#include <vector>

#include "frailtyscan/errors.hpp"
#include "frailtyscan/simulation.hpp"
#include "frailtyscan/spatial.hpp"

using namespace frailtyscan;

namespace {

StudyRegion path3() {
  return StudyRegion({{"u1", 0, 0}, {"u2", 1, 0}, {"u3", 2, 0}},
                     {{"u1", "u2"}, {"u2", "u3"}});
}

}  // namespace

TEST_CASE("neighbor matrix of a single edge") {
  StudyRegion region({{"a", 0, 0}, {"b", 1, 0}}, {{"a", "b"}});
  const auto nm = build_neighbor_matrix(region);
  Eigen::MatrixXd expected(2, 2);
  expected << 1, -1, -1, 1;
  CHECK((nm.R - expected).norm() == 0.0);
}

TEST_CASE("neighbor matrix of the 1-2-3 path") {
  const auto nm = build_neighbor_matrix(path3());
  Eigen::MatrixXd expected(3, 3);
  expected << 1, -1, 0, -1, 2, -1, 0, -1, 1;
  CHECK((nm.R - expected).norm() == 0.0);
}

TEST_CASE("non-symmetric adjacency is rejected naming the pair") {
  Eigen::MatrixXd v = Eigen::MatrixXd::Zero(3, 3);
  v(0, 1) = 1.0;  // missing (1, 0)
  std::vector<Unit> units{{"a", 0, 0}, {"b", 1, 0}, {"c", 2, 0}};
  CHECK_THROWS_WITH_AS(StudyRegion::from_adjacency_matrix(units, v),
                       doctest::Contains("(a,b)"), ValidationError);
}

TEST_CASE("169-unit lattice: R row sums zero and PSD") {
  const auto map = builtin_map169();
  const auto nm = build_neighbor_matrix(map.region);
  CHECK(nm.R.rowwise().sum().cwiseAbs().maxCoeff() == 0.0);
  // Independent PSD route: Cholesky of R + eps I.
  Eigen::LLT<Eigen::MatrixXd> llt(nm.R + 1e-8 * Eigen::MatrixXd::Identity(169, 169));
  CHECK(llt.info() == Eigen::Success);
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(nm.R, Eigen::EigenvaluesOnly);
  CHECK(eig.eigenvalues().minCoeff() > -1e-9);
}

TEST_CASE("leroux precision limits and arithmetic") {
  const auto nm = build_neighbor_matrix(path3());

  SUBCASE("rho = 0 gives the identity exactly") {
    const auto m = leroux_precision(nm, 0.0, 2.0);
    CHECK((m.A - Eigen::MatrixXd::Identity(3, 3)).norm() == 0.0);
  }
  SUBCASE("rho = 0.5 on the path") {
    const auto m = leroux_precision(nm, 0.5, 1.0);
    Eigen::MatrixXd expected(3, 3);
    expected << 1.0, -0.5, 0.0, -0.5, 1.5, -0.5, 0.0, -0.5, 1.0;
    CHECK((m.A - expected).norm() == 0.0);
  }
  SUBCASE("rho = 0.999 stays positive definite") {
    const auto m = leroux_precision(nm, 0.999, 1.0);
    CHECK((m.A - (0.999 * nm.R + (1.0 - 0.999) * Eigen::MatrixXd::Identity(3, 3)))
              .norm() == 0.0);
    Eigen::LLT<Eigen::MatrixXd> llt(m.A);
    CHECK(llt.info() == Eigen::Success);
  }
  SUBCASE("rho >= 1 rejected with ICAR guidance") {
    CHECK_THROWS_WITH_AS(leroux_precision(nm, 1.0, 1.0), doctest::Contains("0.999"),
                         ValidationError);
  }
  SUBCASE("bad sigma2 rejected") {
    CHECK_THROWS_AS(leroux_precision(nm, 0.5, 0.0), ValidationError);
  }
}

TEST_CASE("A(rho) is positive definite across the admissible range") {
  const auto map = builtin_map169();
  const auto nm = build_neighbor_matrix(map.region);
  for (double rho : {0.0, 0.2, 0.5, 0.8, 0.999}) {
    const auto m = leroux_precision(nm, rho, 1.0);
    Eigen::LLT<Eigen::MatrixXd> llt(m.A);
    CHECK(llt.info() == Eigen::Success);
  }
}

TEST_CASE("CAR conditional moments match the joint distribution") {
  // Conditionals of N(0, sigma2 A^{-1}) against the closed-form CAR
  // conditionals, on random small graphs.
  std::mt19937_64 engine(7);
  for (int trial = 0; trial < 20; ++trial) {
    const int K = 3 + static_cast<int>(engine() % 4);  // 3..6
    Eigen::MatrixXd v = Eigen::MatrixXd::Zero(K, K);
    for (int a = 0; a < K; ++a)
      for (int b = a + 1; b < K; ++b)
        if (engine() % 2 == 0) v(a, b) = v(b, a) = 1.0;
    // Keep the graph connected along a spine.
    for (int a = 0; a + 1 < K; ++a) v(a, a + 1) = v(a + 1, a) = 1.0;
    std::vector<Unit> units;
    for (int a = 0; a < K; ++a)
      units.push_back(Unit{"g" + std::to_string(a), static_cast<double>(a), 0.0});
    const auto region = StudyRegion::from_adjacency_matrix(units, v);
    const auto nm = build_neighbor_matrix(region);

    const double sigma2 = 0.7;
    for (double rho : {0.2, 0.8}) {
      const auto model = leroux_precision(nm, rho, sigma2);
      const Eigen::MatrixXd cov = sigma2 * model.A.inverse();
      Eigen::VectorXd x(K);
      for (int a = 0; a < K; ++a)
        x[a] = std::uniform_real_distribution<double>(-2, 2)(engine);

      for (int k = 0; k < K; ++k) {
        // Joint route: condition the multivariate normal.
        std::vector<int> rest;
        for (int a = 0; a < K; ++a)
          if (a != k) rest.push_back(a);
        Eigen::MatrixXd cov_rr(K - 1, K - 1);
        Eigen::VectorXd cov_kr(K - 1), x_r(K - 1);
        for (int a = 0; a < K - 1; ++a) {
          cov_kr[a] = cov(k, rest[a]);
          x_r[a] = x[rest[a]];
          for (int b = 0; b < K - 1; ++b) cov_rr(a, b) = cov(rest[a], rest[b]);
        }
        const Eigen::VectorXd weights = cov_rr.ldlt().solve(cov_kr);
        const double mean_joint = weights.dot(x_r);
        const double var_joint = cov(k, k) - weights.dot(cov_kr);

        // Paper route.
        double vsum = 0.0, vx = 0.0;
        for (int l = 0; l < K; ++l)
          if (v(k, l) == 1.0) {
            vsum += 1.0;
            vx += x[l];
          }
        const double denom = rho * vsum + 1.0 - rho;
        const double mean_cond = rho * vx / denom;
        const double var_cond = sigma2 / denom;

        CHECK(std::abs(mean_joint - mean_cond) < 1e-10);
        CHECK(std::abs(var_joint - var_cond) < 1e-10);
      }
    }
  }
}

TEST_CASE("windows on 3 collinear units respect the population cap") {
  const auto region = path3();
  const auto windows = enumerate_windows(region, {10, 10, 10});
  // N/2 = 15: every pair (20) and the full set (30) are over the cap.
  REQUIRE(windows.size() == 3);
  for (const auto& w : windows) {
    CHECK(w.members.size() == 1);
    CHECK(w.n_individuals == 10);
  }
}

TEST_CASE("K = 2 with equal counts yields the two singletons") {
  StudyRegion region({{"a", 0, 0}, {"b", 1, 0}}, {{"a", "b"}});
  const auto windows = enumerate_windows(region, {7, 7});
  REQUIRE(windows.size() == 2);
  CHECK(windows[0].members == std::vector<std::size_t>{0});
  CHECK(windows[1].members == std::vector<std::size_t>{1});
}

TEST_CASE("distance ties join together and duplicates collapse") {
  // A center with three equidistant satellites; the tie group enters as one.
  StudyRegion region({{"c", 0, 0}, {"n", 0, 1}, {"e", 1, 0}, {"s", 0, -1}},
                     {{"c", "n"}, {"c", "e"}, {"c", "s"}});
  const auto windows = enumerate_windows(region, {1, 1, 1, 1});
  std::set<std::vector<std::size_t>> sets;
  for (const auto& w : windows) sets.insert(w.members);
  // Cap is N/2 = 2: singletons and satellite+center pairs survive, the
  // 4-unit disc around c does not.
  CHECK(sets.count({0}) == 1);
  CHECK(sets.count({1}) == 1);
  CHECK(sets.count({0, 1}) == 1);
  for (const auto& w : windows) CHECK(w.n_individuals <= 2);
  for (const auto& w : windows) CHECK(w.members.size() <= 2);
}

TEST_CASE("windows nest as the radius grows") {
  const auto map = builtin_map94();
  const auto windows = enumerate_windows(map.region, map.unit_counts);
  for (std::size_t i = 1; i < windows.size(); ++i) {
    if (windows[i].center != windows[i - 1].center) continue;
    CHECK(windows[i].radius2 > windows[i - 1].radius2);
    CHECK(std::includes(windows[i].members.begin(), windows[i].members.end(),
                        windows[i - 1].members.begin(), windows[i - 1].members.end()));
  }
}

TEST_CASE("169-unit lattice window count matches brute force") {
  const auto map = builtin_map169();
  const auto& region = map.region;
  const auto windows = enumerate_windows(region, map.unit_counts);

  // Brute force: every ordered pair (k, l) defines a disc; hash member sets.
  std::size_t total = 0;
  for (std::size_t c : map.unit_counts) total += c;
  std::set<std::vector<std::size_t>> seen;
  for (std::size_t k = 0; k < region.size(); ++k)
    for (std::size_t l = 0; l < region.size(); ++l) {
      const double r2 = region.squared_distance(k, l);
      std::vector<std::size_t> members;
      std::size_t inside = 0;
      for (std::size_t j = 0; j < region.size(); ++j)
        if (region.squared_distance(k, j) <= r2) {
          members.push_back(j);
          inside += map.unit_counts[j];
        }
      if (inside < 1 || 2 * inside > total) continue;
      seen.insert(members);
    }
  CHECK(windows.size() == seen.size());

  std::set<std::vector<std::size_t>> produced;
  for (const auto& w : windows) produced.insert(w.members);
  CHECK(produced == seen);
}

TEST_CASE("deterministic window ordering by center id then radius") {
  const auto map = builtin_map94();
  const auto windows = enumerate_windows(map.region, map.unit_counts);
  for (std::size_t i = 1; i < windows.size(); ++i) {
    const auto& prev = map.region.unit(windows[i - 1].center).id;
    const auto& cur = map.region.unit(windows[i].center).id;
    CHECK(prev <= cur);
    if (prev == cur) CHECK(windows[i - 1].radius2 < windows[i].radius2);
  }
}
