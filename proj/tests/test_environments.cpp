#include <cmath>
#include <vector>

#include <gtest/gtest.h>

#include "kftrl/environments.hpp"
#include "kftrl/stats.hpp"

using namespace kftrl;

namespace {

MercerKernel kernel16() {
  return MercerKernel::synthetic(DecayProfile(DecayKind::kExponential, 1.0, 0.5), 16);
}

AdversaryParams params(double drift, std::size_t horizon) {
  AdversaryParams p;
  p.drift = drift;
  p.horizon = horizon;
  return p;
}

}  // namespace

TEST(EvalLoss, ZeroFunction) {
  const auto k = kernel16();
  const LossFunction f{std::vector<double>(16, 0.0)};
  EXPECT_EQ(eval_loss(f, Point{0.3}, k), 0.0);
}

TEST(EvalLoss, CauchySchwarzEquality) {
  const auto k = kernel16();
  const Point x0{0.37};
  auto phi = k.features(x0);
  const double n = l2_norm(phi);
  for (auto& v : phi) v /= n;
  EXPECT_NEAR(eval_loss(LossFunction{phi}, x0, k), n, 1e-15);
}

TEST(EvalLoss, TwoTermArithmetic) {
  const auto k = MercerKernel::cosine({0.5, 0.25});
  EXPECT_NEAR(eval_loss(LossFunction{{0.6, 0.8}}, Point{0.0}, k), 0.8242640687119285, 1e-15);
}

TEST(EvalLoss, EvalOnlyKernelUnsupported) {
  EXPECT_THROW(eval_loss(LossFunction{{1.0}}, Point{0.2}, MercerKernel::gaussian(1, 0.2)),
               unsupported_kernel_error);
}

TEST(Adversary, FixedIsStationary) {
  const auto k = kernel16();
  const auto adv = make_adversary(AdversaryKind::kFixed, k, 3, 42, params(0.0, 0));
  History h;
  EXPECT_EQ(adv.losses(5, h), adv.losses(5, h));
  EXPECT_EQ(adv.losses(1, h), adv.losses(9, h));
}

TEST(Adversary, ObliviousWithoutDriftEqualsFixed) {
  const auto k = kernel16();
  const auto fixed = make_adversary(AdversaryKind::kFixed, k, 3, 42, params(0.0, 0));
  const auto obl = make_adversary(AdversaryKind::kObliviousSequence, k, 3, 42, params(0.0, 20));
  History h;
  for (std::size_t t = 1; t <= 20; ++t) EXPECT_EQ(obl.losses(t, h), fixed.losses(t, h));
  EXPECT_THROW(obl.losses(21, h), std::out_of_range);
}

TEST(Adversary, ObliviousDriftMoves) {
  const auto k = kernel16();
  const auto obl = make_adversary(AdversaryKind::kObliviousSequence, k, 2, 42, params(0.1, 10));
  History h;
  EXPECT_NE(obl.losses(1, h), obl.losses(10, h));
}

TEST(Adversary, AdaptiveFallbackAndDeterminism) {
  const auto k = kernel16();
  const auto a1 = make_adversary(AdversaryKind::kAdaptive, k, 3, 7, params(0.0, 0));
  const auto a2 = make_adversary(AdversaryKind::kAdaptive, k, 3, 7, params(0.0, 0));
  const auto fixed = make_adversary(AdversaryKind::kFixed, k, 3, 7, params(0.0, 0));
  History h;
  EXPECT_EQ(a1.losses(1, h), fixed.losses(1, h));
  Rng rng(3);
  for (std::size_t t = 1; t <= 30; ++t) {
    const auto f1 = a1.losses(t, h);
    EXPECT_EQ(f1, a2.losses(t, h));
    const Point x{rng.uniform()};
    const std::size_t a = rng.index(3) == 0 ? 2 : rng.index(3);
    h.record(x, a, eval_loss(f1[a], x, k));
  }
}

TEST(Adversary, AdaptiveTargetsMostPlayedAction) {
  const auto k = kernel16();
  const auto adv = make_adversary(AdversaryKind::kAdaptive, k, 2, 7, params(0.0, 0));
  History h;
  const Point x{0.2};
  h.record(x, 1, 0.0);
  h.record(x, 1, 0.0);
  h.record(Point{0.9}, 0, 0.0);
  const auto f = adv.losses(4, h);
  // The played context now incurs the largest possible loss.
  EXPECT_NEAR(eval_loss(f[1], x, k), l2_norm(k.features(x)), 1e-12);
}

TEST(Adversary, UnitBallInvariants) {
  const auto k = kernel16();
  Rng rng(9);
  for (auto kind : {AdversaryKind::kFixed, AdversaryKind::kObliviousSequence,
                    AdversaryKind::kAdaptive}) {
    const auto adv = make_adversary(kind, k, 3, 11, params(0.3, 50));
    History h;
    for (std::size_t t = 1; t <= 50; ++t) {
      const auto fs = adv.losses(t, h);
      for (const auto& f : fs) EXPECT_LE(l2_norm(f.coeffs), 1.0 + 1e-12);
      const Point x{rng.uniform()};
      const std::size_t a = rng.index(3);
      h.record(x, a, eval_loss(fs[a], x, k));
    }
    const auto fs = adv.losses(50, h);
    for (int i = 0; i < 10000; ++i) {
      const Point x{rng.uniform()};
      for (const auto& f : fs) EXPECT_LE(std::abs(eval_loss(f, x, k)), 1.0 + 1e-12);
    }
  }
}

TEST(Adversary, ScaleZeroIsZeroAdversary) {
  const auto k = kernel16();
  AdversaryParams p = params(0.2, 5);
  p.scale = 0.0;
  const auto adv = make_adversary(AdversaryKind::kObliviousSequence, k, 2, 1, p);
  for (const auto& f : adv.losses(5, History{})) EXPECT_EQ(l2_norm(f.coeffs), 0.0);
}

TEST(Adversary, InvalidParameters) {
  const auto k = kernel16();
  AdversaryParams p;
  p.scale = 1.5;
  EXPECT_THROW(make_adversary(AdversaryKind::kFixed, k, 2, 1, p), std::invalid_argument);
  EXPECT_THROW(make_adversary(AdversaryKind::kFixed, k, 0, 1, params(0, 0)), std::invalid_argument);
  EXPECT_THROW(make_adversary(AdversaryKind::kObliviousSequence, k, 2, 1, params(0.1, 0)),
               std::invalid_argument);
  EXPECT_THROW(make_adversary(AdversaryKind::kFixed, MercerKernel::gaussian(1, 0.2), 2, 1, params(0, 0)),
               unsupported_kernel_error);
}

TEST(LossSequence, JsonRoundTripAndReplay) {
  const auto k = kernel16();
  const auto adv = make_adversary(AdversaryKind::kObliviousSequence, k, 2, 5, params(0.05, 8));
  LossSequence seq;
  for (std::size_t t = 1; t <= 8; ++t) seq.push_back(adv.losses(t, History{}));
  const auto back = loss_sequence_from_json(nlohmann::json::parse(loss_sequence_to_json(seq).dump()));
  EXPECT_EQ(back, seq);
  const auto replay = replay_adversary(back);
  for (std::size_t t = 1; t <= 8; ++t) EXPECT_EQ(replay.losses(t, History{}), seq[t - 1]);
}

TEST(Contexts, GridMidpoints) {
  const auto g = ContextDistribution::grid(4);
  ASSERT_EQ(g.points().size(), 4u);
  EXPECT_DOUBLE_EQ(g.points()[0][0], 0.125);
  EXPECT_DOUBLE_EQ(g.points()[3][0], 0.875);
  EXPECT_EQ(ContextDistribution::grid(3, 2).points().size(), 9u);
}

TEST(Contexts, DiscreteWeightsNormalized) {
  const auto d = ContextDistribution::discrete({{0.1}, {0.9}}, {1.0, 3.0});
  EXPECT_DOUBLE_EQ(d.weights()[1], 0.75);
  EXPECT_THROW(ContextDistribution::discrete({{0.1}}, {-1.0}), std::invalid_argument);
}

TEST(Contexts, IndependentStreamsAgree) {
  const auto d = ContextDistribution::uniform(1);
  RunningStats a, b;
  for (int i = 0; i < 100000; ++i) {
    Rng r1 = Rng::for_site(derive_stream_seed(1, Stream::kContext), i);
    Rng r2 = Rng::for_site(derive_stream_seed(2, Stream::kContext), i);
    a.add(std::cos(3.0 * d.sample(r1)[0]));
    b.add(std::cos(3.0 * d.sample(r2)[0]));
  }
  const double se = std::sqrt(a.stderr() * a.stderr() + b.stderr() * b.stderr());
  EXPECT_LE(std::abs(a.mean - b.mean), 4.0 * se);
}

TEST(Rng, StreamsDiffer) {
  EXPECT_NE(derive_stream_seed(1, Stream::kPolicy), derive_stream_seed(1, Stream::kResample));
  EXPECT_NE(mix_seed(1, 2, 3), mix_seed(1, 3, 2));
  Rng a = Rng::for_site(5, 1, 0), b = Rng::for_site(5, 1, 0);
  EXPECT_EQ(a.bits(), b.bits());
}
