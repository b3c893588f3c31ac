#include <cmath>
#include <filesystem>
#include <fstream>
#include <numbers>
#include <vector>

#include <gtest/gtest.h>

#include "kftrl/harness.hpp"
#include "kftrl/io.hpp"

using namespace kftrl;

namespace {

json base_config() {
  return json::parse(R"({
    "T": 40, "K": 3,
    "kernel": {"kind": "synthetic", "profile": "exponential", "g": 1, "c": 1, "D_trunc": 12},
    "adversary": {"kind": "oblivious", "drift": 0.05},
    "contexts": {"kind": "grid", "n": 4},
    "M": 5, "eta": 0.3, "beta": 0.2,
    "seeds": {"master": 9},
    "diag_eval": 4000
  })");
}

Experiment experiment(const json& j) { return make_experiment(config_from_json(j)); }

}  // namespace

TEST(TunedSchedule, Values) {
  const auto p = tuned_params(10000, DecayProfile(DecayKind::kPolynomial, 1.0, 2.0));
  EXPECT_EQ(p.m, 10000u);
  EXPECT_NEAR(p.eta, 0.003034854258770293, 1e-15);
  EXPECT_EQ(p.eta, p.beta);
  const auto e = tuned_params(10000, DecayProfile(DecayKind::kExponential, 1.0, 1.0));
  EXPECT_NEAR(e.eta, 0.03034854258770293, 1e-15);
  const auto small = tuned_params(std::numbers::e, DecayProfile(DecayKind::kExponential, 1.0, 1.0));
  EXPECT_NEAR(small.eta, std::sqrt(1.0 / std::numbers::e), 1e-15);
  EXPECT_EQ(small.m, 2u);
  EXPECT_THROW(tuned_params(1.5, DecayProfile()), std::invalid_argument);
}

TEST(Config, UnknownKeysAreErrors) {
  auto j = base_config();
  j["extra"] = 1;
  EXPECT_THROW(config_from_json(j), std::invalid_argument);
  j = base_config();
  j["kernel"]["bogus"] = 1;
  EXPECT_THROW(config_from_json(j), std::invalid_argument);
  j = base_config();
  j.erase("K");
  EXPECT_THROW(config_from_json(j), std::exception);
  j = base_config();
  j["eta"] = 0.0;
  EXPECT_THROW(config_from_json(j), std::invalid_argument);
}

TEST(Config, RoundTrip) {
  const auto c = config_from_json(base_config());
  EXPECT_EQ(config_to_json(config_from_json(config_to_json(c))), config_to_json(c));
  EXPECT_EQ(c.seeds.policy, derive_stream_seed(9, Stream::kPolicy));
}

TEST(Config, TunedScheduleCapsM) {
  auto j = base_config();
  j["schedule"] = "tuned";
  j["max_m"] = 6;
  const auto exp = experiment(j);
  EXPECT_EQ(exp.params.m, 6u);
  EXPECT_EQ(exp.m_cap, 6u);
  EXPECT_NEAR(exp.params.eta, std::sqrt(std::log(40.0) / 40.0), 1e-15);
}

TEST(Config, EvalOnlyKernelCannotRun) {
  auto j = base_config();
  j["kernel"] = {{"kind", "gaussian"}, {"lengthscale", 0.2}};
  EXPECT_THROW(experiment(j), unsupported_kernel_error);
}

TEST(Run, FirstPolicyIsUniform) {
  auto j = base_config();
  j["T"] = 1;
  const auto rec = run(experiment(j));
  ASSERT_EQ(rec.rounds.size(), 1u);
  for (double p : rec.rounds[0].probs) EXPECT_NEAR(p, 1.0 / 3.0, 1e-15);
}

TEST(Run, ZeroAdversary) {
  auto j = base_config();
  j["adversary"]["scale"] = 0.0;
  j["beta"] = 0.0;
  const auto exp = experiment(j);
  const auto rec = run(exp);
  for (const auto& r : rec.rounds) EXPECT_EQ(r.loss, 0.0);
  const auto curve = empirical_regret(rec, exp);
  for (double r : curve.regret) EXPECT_EQ(r, 0.0);
  const auto d = decomposition_diagnostic(rec, exp, 500);
  EXPECT_EQ(d.r_tilde, 0.0);
  EXPECT_EQ(d.b_star, 0.0);
  EXPECT_EQ(d.b, 0.0);
}

TEST(Run, Deterministic) {
  const auto exp = experiment(base_config());
  const auto a = run(exp);
  const auto b = run(exp);
  EXPECT_EQ(a.buffer, b.buffer);
  EXPECT_EQ(a.losses, b.losses);
  ASSERT_EQ(a.rounds.size(), b.rounds.size());
  for (std::size_t t = 0; t < a.rounds.size(); ++t) {
    EXPECT_EQ(a.rounds[t].probs, b.rounds[t].probs);
    EXPECT_EQ(a.rounds[t].context, b.rounds[t].context);
    EXPECT_EQ(a.rounds[t].kernel_evals, b.rounds[t].kernel_evals);
  }
}

TEST(Run, AdaptiveDeterministic) {
  auto j = base_config();
  j["adversary"] = {{"kind", "adaptive"}};
  const auto exp = experiment(j);
  EXPECT_EQ(run(exp).losses, run(exp).losses);
}

TEST(Run, KernelEvalAccounting) {
  const auto exp = experiment(base_config());
  const auto rec = run(exp);
  std::size_t total = 0;
  const double m = static_cast<double>(exp.params.m);
  const double k = static_cast<double>(exp.config.num_actions);
  for (std::size_t t = 0; t < rec.rounds.size(); ++t) {
    total += rec.rounds[t].kernel_evals;
    EXPECT_LE(static_cast<double>(rec.rounds[t].kernel_evals),
              3.0 * static_cast<double>(t + 1) * m * m * (m + 1) * k);
  }
  EXPECT_EQ(total, rec.total_kernel_evals);
}

TEST(Run, WallClockCapMarksIncomplete) {
  auto j = base_config();
  j["T"] = 500;
  j["max_seconds"] = 1e-9;
  const auto rec = run(experiment(j));
  EXPECT_FALSE(rec.complete);
  EXPECT_LT(rec.rounds.size(), 500u);
}

TEST(Run, ReplayedLossSequenceReproducesRun) {
  const auto exp = experiment(base_config());
  const auto rec = run(exp);
  const auto path = std::filesystem::temp_directory_path() / "kftrl_replay_losses.json";
  std::ofstream(path) << loss_sequence_to_json(rec.losses).dump();
  auto j = base_config();
  j["adversary"] = {{"kind", "replay"}, {"path", path.string()}};
  const auto replayed = run(experiment(j));
  EXPECT_EQ(replayed.buffer, rec.buffer);
  std::filesystem::remove(path);
}

TEST(Regret, Checkpoints) {
  EXPECT_EQ(checkpoints(10), (std::vector<std::size_t>{1, 2, 4, 8, 10}));
  EXPECT_EQ(checkpoints(8), (std::vector<std::size_t>{1, 2, 4, 8}));
  EXPECT_EQ(checkpoints(1), (std::vector<std::size_t>{1}));
}

TEST(Regret, ForcedUniformPolicy) {
  const std::size_t horizon = 100;
  const std::vector<std::vector<double>> probs(horizon, {0.5, 0.5});
  const std::vector<std::vector<double>> losses(horizon, {0.2, 0.8});
  const auto marks = checkpoints(horizon);
  const auto r = pointwise_regret(probs, losses, marks);
  for (std::size_t i = 0; i < marks.size(); ++i)
    EXPECT_NEAR(r[i], 0.3 * static_cast<double>(marks[i]), 1e-12);
}

TEST(Regret, MatchesBruteForceRecomputation) {
  const auto exp = experiment(base_config());
  const auto rec = run(exp);
  const auto curve = empirical_regret(rec, exp);
  ASSERT_TRUE(curve.exact);

  // Independent path: exported loss sequence, direct kgr over buffer prefixes.
  const auto losses = loss_sequence_from_json(json::parse(loss_sequence_to_json(rec.losses).dump()));
  const std::size_t k = exp.config.num_actions;
  const auto& pts = exp.contexts.points();
  const auto& w = exp.contexts.weights();
  const auto marks = checkpoints(rec.horizon());
  std::vector<double> want(marks.size(), 0.0);
  for (std::size_t j = 0; j < pts.size(); ++j) {
    double learner = 0.0;
    std::vector<double> per_action(k, 0.0);
    std::size_t next = 0;
    for (std::size_t t = 0; t < rec.horizon(); ++t) {
      std::vector<double> cum(k);
      for (std::size_t a = 0; a < k; ++a)
        cum[a] = cumulative_estimate(pts[j], a, std::span<const ResampleBlock>(rec.buffer).first(t),
                                     rec.params.beta, exp.kernel);
      const auto pi = solve_policy(cum, rec.params.eta);
      for (std::size_t a = 0; a < k; ++a) {
        const double l = eval_loss(losses[t][a], pts[j], exp.kernel);
        learner += pi.probs[a] * l;
        per_action[a] += l;
      }
      if (next < marks.size() && marks[next] == t + 1) {
        want[next] += w[j] * (learner - *std::min_element(per_action.begin(), per_action.end()));
        ++next;
      }
    }
  }
  for (std::size_t i = 0; i < marks.size(); ++i) EXPECT_NEAR(curve.regret[i], want[i], 1e-12);
}

TEST(Regret, ContinuousContextsReportStderr) {
  auto j = base_config();
  j["contexts"] = {{"kind", "uniform"}};
  j["T"] = 16;
  j["eval_contexts"] = 32;
  const auto exp = experiment(j);
  const auto curve = empirical_regret(run(exp), exp);
  EXPECT_FALSE(curve.exact);
  EXPECT_EQ(curve.eval_points, 32u);
  EXPECT_GT(curve.stderr.back(), 0.0);
}

TEST(Regret, MissingLossReplayIsError) {
  const auto exp = experiment(base_config());
  auto rec = run(exp);
  rec.losses.clear();
  EXPECT_THROW(empirical_regret(rec, exp), std::invalid_argument);
}

TEST(Decomposition, ConsistentWithRegret) {
  const auto exp = experiment(base_config());
  const auto rec = run(exp);
  const auto d = decomposition_diagnostic(rec, exp, 4000);
  EXPECT_TRUE(d.consistent()) << d.sum << " vs " << d.regret << " se " << d.combined_stderr;
  EXPECT_TRUE(d.b_star_within());
}

TEST(SlopeFit, ExactPowerLaws) {
  const std::vector<double> t{100, 400, 1600};
  std::vector<double> r;
  for (double v : t) r.push_back(std::sqrt(v));
  EXPECT_NEAR(slope_fit(t, r), 0.5, 1e-12);
  EXPECT_NEAR(slope_fit(t, t), 1.0, 1e-12);
}

TEST(SlopeFit, NoisyRootT) {
  Rng rng(2024);
  std::vector<double> t, r;
  for (double v = 100; v <= 102400; v *= 2) {
    t.push_back(v);
    r.push_back(std::sqrt(v) + rng.uniform());
  }
  const double s = slope_fit(t, r);
  EXPECT_GE(s, 0.45);
  EXPECT_LE(s, 0.55);
}

TEST(SlopeFit, DropsNonPositive) {
  const std::vector<double> t{10, 20, 40, 80};
  EXPECT_NEAR(slope_fit(t, std::vector<double>{-1.0, 20, 40, 80}), 1.0, 1e-12);
  EXPECT_THROW(slope_fit(t, std::vector<double>{0.0, -2.0, 40, 80}), std::invalid_argument);
}

TEST(Outputs, FilesWritten) {
  const auto dir = std::filesystem::temp_directory_path() / "kftrl_outputs_test";
  std::filesystem::remove_all(dir);
  auto j = base_config();
  j["output"] = {{"dir", dir.string()}, {"buffer", true}};
  const auto exp = experiment(j);
  const auto rec = run(exp);
  write_run_outputs(dir, rec, exp);
  for (const char* f : {"regret.csv", "run.json", "diag.json", "losses.json", "timing.json",
                        "buffer.jsonl"})
    EXPECT_TRUE(std::filesystem::exists(dir / f)) << f;
  std::ifstream csv(dir / "regret.csv");
  std::string header;
  std::getline(csv, header);
  EXPECT_EQ(header, "T_checkpoint,cum_regret,stderr");
  std::ifstream buf(dir / "buffer.jsonl");
  EXPECT_EQ(read_buffer_jsonl(buf), rec.buffer);
  std::filesystem::remove_all(dir);
}
