#include <cmath>
#include <limits>
#include <vector>

#include <gtest/gtest.h>

#include "kftrl/log_barrier_ftrl.hpp"

using namespace kftrl;

TEST(SolvePolicy, ZeroLossIsUniform) {
  const std::vector<double> l(4, 0.0);
  const auto p = solve_policy(l, 0.7);
  for (double v : p.probs) EXPECT_NEAR(v, 0.25, 1e-15);
  EXPECT_NEAR(p.dual_lambda, 4.0, 1e-12);
}

TEST(SolvePolicy, SingleAction) {
  const std::vector<double> l{3.0};
  EXPECT_EQ(solve_policy(l, 1.0).probs, std::vector<double>{1.0});
}

TEST(SolvePolicy, GoldenRatio) {
  const std::vector<double> l{0.0, 1.0};
  const auto p = solve_policy(l, 1.0);
  EXPECT_NEAR(p.dual_lambda, 1.618033988749895, 1e-12);
  EXPECT_NEAR(p.probs[0], 0.6180339887498949, 1e-12);
  EXPECT_NEAR(p.probs[1], 0.3819660112501051, 1e-12);
}

TEST(SolvePolicy, Errors) {
  EXPECT_THROW(solve_policy(std::vector<double>{}, 1.0), std::invalid_argument);
  EXPECT_THROW(solve_policy(std::vector<double>{0.0, 1.0}, 0.0), std::invalid_argument);
  EXPECT_THROW(solve_policy(std::vector<double>{0.0, std::numeric_limits<double>::infinity()}, 1.0),
               std::invalid_argument);
  EXPECT_THROW(solve_policy(std::vector<double>{0.0, std::nan("")}, 1.0), std::invalid_argument);
}

TEST(SolvePolicy, StationarityAndNormalization) {
  Rng rng(1);
  for (int i = 0; i < 2000; ++i) {
    const std::size_t k = 1 + rng.index(8);
    std::vector<double> l(k);
    for (auto& v : l) v = rng.uniform(-100.0, 100.0);
    const double eta = std::pow(10.0, rng.uniform(-4.0, 1.0));
    const auto p = solve_policy(l, eta);
    double mass = 0.0;
    for (std::size_t a = 0; a < k; ++a) {
      EXPECT_GT(p.probs[a], 0.0);
      mass += p.probs[a];
      EXPECT_LE(std::abs(eta * l[a] + p.dual_lambda - 1.0 / p.probs[a]), 1e-9);
    }
    EXPECT_LE(std::abs(mass - 1.0), 1e-12);
  }
}

TEST(SolvePolicy, TranslationInvariant) {
  Rng rng(2);
  for (int i = 0; i < 500; ++i) {
    const std::size_t k = 2 + rng.index(6);
    std::vector<double> l(k), shifted(k);
    const double c = rng.uniform(-50.0, 50.0);
    for (std::size_t a = 0; a < k; ++a) {
      l[a] = rng.uniform(-10.0, 10.0);
      shifted[a] = l[a] + c;
    }
    const double eta = rng.uniform(0.01, 2.0);
    const auto p = solve_policy(l, eta);
    const auto q = solve_policy(shifted, eta);
    for (std::size_t a = 0; a < k; ++a) EXPECT_NEAR(p.probs[a], q.probs[a], 1e-10);
    EXPECT_NEAR(q.dual_lambda, p.dual_lambda - eta * c, 1e-9 * std::max(1.0, std::abs(eta * c)));
  }
}

TEST(SolvePolicy, BeatsSimplexGrid) {
  Rng rng(3);
  for (int i = 0; i < 20; ++i) {
    const std::vector<double> l{rng.uniform(-100.0, 100.0), rng.uniform(-100.0, 100.0)};
    const double eta = std::pow(10.0, rng.uniform(-4.0, 1.0));
    auto f = [&](double p0) {
      return eta * (p0 * l[0] + (1 - p0) * l[1]) - std::log(p0) - std::log(1 - p0);
    };
    const double solved = f(solve_policy(l, eta).probs[0]);
    for (int g = 1; g <= 10000; ++g) EXPECT_LE(solved, f(g / 10001.0));
  }
}

TEST(SampleAction, SingleActionAlwaysZero) {
  Rng rng(4);
  PolicyDistribution p;
  p.probs = {1.0};
  for (int i = 0; i < 100; ++i) EXPECT_EQ(sample_action(p, rng), 0u);
}

TEST(SampleAction, Frequencies) {
  Rng rng(5);
  const double eps = 0.01;
  PolicyDistribution p;
  p.probs = {1 - 2 * eps, eps, eps};
  const int n = 1000000;
  int hits = 0;
  for (int i = 0; i < n; ++i) hits += sample_action(p, rng) == 1;
  const double sd = std::sqrt(n * eps * (1 - eps));
  EXPECT_LE(std::abs(hits - n * eps), 4.0 * sd);

  PolicyDistribution u;
  u.probs = {0.5, 0.5};
  int ones = 0;
  for (int i = 0; i < 100000; ++i) ones += static_cast<int>(sample_action(u, rng));
  EXPECT_LE(std::abs(ones / 100000.0 - 0.5), 4.0 * std::sqrt(0.25 / 100000.0));
}

TEST(SampleAction, ZeroMassNeverDrawn) {
  EXPECT_EQ(categorical_index(std::vector<double>{0.5, 0.5, 0.0}, 0.9999999999999999), 1u);
  EXPECT_EQ(categorical_index(std::vector<double>{0.0, 1.0}, 0.0), 1u);
}

TEST(RegretAudit, EmptySequence) {
  const std::vector<double> y{0.2, 0.3, 0.5};
  const auto r = regret_audit({}, 0.5, y);
  EXPECT_EQ(r.measured, 0.0);
  EXPECT_GE(r.bound, 0.0);
  EXPECT_NEAR(r.bound, (log_barrier(y) - 3.0 * std::log(3.0)) / 0.5, 1e-12);
}

TEST(RegretAudit, ConstantLosses) {
  const std::vector<std::vector<double>> c(50, std::vector<double>{0.3, -0.2, 0.9});
  const std::vector<double> y(3, 1.0 / 3.0);
  EXPECT_TRUE(regret_audit(c, 0.2, y).holds());
}

TEST(RegretAudit, RandomSequences) {
  Rng rng(6);
  for (int i = 0; i < 300; ++i) {
    const std::size_t k = std::vector<std::size_t>{2, 3, 5}[i % 3];
    std::vector<std::vector<double>> c(200, std::vector<double>(k));
    for (auto& row : c)
      for (auto& v : row) v = rng.uniform(-5.0, 5.0);
    const double eta = std::pow(10.0, rng.uniform(-3.0, 0.0));
    const std::vector<double> y(k, 1.0 / static_cast<double>(k));
    EXPECT_TRUE(regret_audit(c, eta, y).holds());
  }
}

TEST(RegretAudit, BoundaryComparatorIsError) {
  const std::vector<std::vector<double>> c(3, std::vector<double>{0.1, 0.2});
  EXPECT_THROW(regret_audit(c, 0.5, std::vector<double>{1.0, 0.0}), std::invalid_argument);
  EXPECT_THROW(regret_audit(c, 0.5, std::vector<double>{0.7, 0.7}), std::invalid_argument);
}
