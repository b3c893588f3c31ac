#pragma once

// The KernelFTRL simulation loop, parameter schedules, regret measurement and
// the three-term regret decomposition.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <fstream>
#include <initializer_list>
#include <limits>
#include <map>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "json.hpp"
#include "kftrl/environments.hpp"
#include "kftrl/kgr.hpp"
#include "kftrl/log_barrier_ftrl.hpp"
#include "kftrl/mercer_kernel.hpp"
#include "kftrl/resample_block.hpp"
#include "kftrl/rng.hpp"
#include "kftrl/stats.hpp"

namespace kftrl {

using nlohmann::json;

// ---------------------------------------------------------------------------
// Parameter schedule

struct ScheduleParams {
  std::size_t m = 0;
  double eta = 0.0;
  double beta = 0.0;
};

// M = T and eta = beta = T^{-(1+1/c)/2} sqrt((c-1) ln T / g) (polynomial decay)
// or sqrt(c ln T / (g T)) (exponential decay). M is floor(T).
inline ScheduleParams tuned_params(double horizon, const DecayProfile& profile) {
  if (!(horizon >= 2.0)) throw std::invalid_argument("tuned_params: T must be >= 2");
  profile.validate();
  const double log_t = std::log(horizon);
  ScheduleParams out;
  out.m = static_cast<std::size_t>(std::floor(horizon));
  if (profile.kind == DecayKind::kPolynomial) {
    out.eta = std::pow(horizon, -0.5 * (1.0 + 1.0 / profile.c)) *
              std::sqrt((profile.c - 1.0) * log_t / profile.g);
  } else {
    out.eta = std::sqrt(profile.c * log_t / (profile.g * horizon));
  }
  out.beta = out.eta;
  return out;
}

// ---------------------------------------------------------------------------
// Configuration

enum class Schedule { kManual, kTuned };

struct KernelSpec {
  std::string kind = "synthetic";  // synthetic | cosine | gaussian | matern
  std::size_t d = 1;
  DecayKind profile = DecayKind::kExponential;
  double g = 1.0;
  double c = 1.0;
  std::size_t d_trunc = 32;
  std::vector<double> eigenvalues;  // cosine
  double lengthscale = 0.2;         // gaussian, matern
  double nu = 2.5;                  // matern
};

struct AdversarySpec {
  AdversaryKind kind = AdversaryKind::kObliviousSequence;
  double drift = 0.0;
  double scale = 1.0;
  std::string path;  // replay
};

struct ContextSpec {
  std::string kind = "uniform";  // uniform | grid | points
  std::size_t n = 8;             // grid points per axis
  std::vector<Point> points;
  std::vector<double> weights;
};

struct Seeds {
  std::uint64_t policy = 1;
  std::uint64_t resample = 2;
  std::uint64_t adversary = 3;
  std::uint64_t context = 4;
  std::uint64_t eval = 5;

  static Seeds from_master(std::uint64_t master) {
    return Seeds{derive_stream_seed(master, Stream::kPolicy),
                 derive_stream_seed(master, Stream::kResample),
                 derive_stream_seed(master, Stream::kAdversary),
                 derive_stream_seed(master, Stream::kContext),
                 derive_stream_seed(master, Stream::kEval)};
  }
};

struct ExperimentConfig {
  std::size_t horizon = 0;
  std::size_t num_actions = 0;
  KernelSpec kernel;
  AdversarySpec adversary;
  ContextSpec contexts;
  std::size_t m = 16;
  double eta = 0.1;
  double beta = 0.1;
  Schedule schedule = Schedule::kManual;
  std::size_t max_m = 16;
  Seeds seeds;
  std::size_t eval_contexts = 256;
  std::size_t diag_eval = 1000;
  double max_seconds = 0.0;
  std::string out_dir = "out";
  bool write_buffer = false;

  void validate() const {
    if (horizon < 1) throw std::invalid_argument("config: T must be >= 1");
    if (num_actions < 1) throw std::invalid_argument("config: K must be >= 1");
    if (schedule == Schedule::kManual) {
      if (!(eta > 0.0) || !std::isfinite(eta)) throw std::invalid_argument("config: eta must be > 0");
      if (!(beta >= 0.0) || !std::isfinite(beta)) throw std::invalid_argument("config: beta must be >= 0");
    }
    if (!(max_seconds >= 0.0)) throw std::invalid_argument("config: max_seconds must be >= 0");
  }
};

namespace detail {

inline void check_keys(const json& j, std::initializer_list<const char*> allowed,
                       const std::string& where) {
  if (!j.is_object()) throw std::invalid_argument(where + ": expected an object");
  for (auto it = j.begin(); it != j.end(); ++it) {
    bool ok = false;
    for (const char* a : allowed) ok = ok || it.key() == a;
    if (!ok) throw std::invalid_argument(where + ": unknown key '" + it.key() + "'");
  }
}

template <class T>
void read_opt(const json& j, const char* key, T& out) {
  if (j.contains(key)) out = j.at(key).get<T>();
}

inline DecayKind parse_decay(const std::string& s) {
  if (s == "exponential") return DecayKind::kExponential;
  if (s == "polynomial") return DecayKind::kPolynomial;
  throw std::invalid_argument("unknown decay profile '" + s + "'");
}

inline AdversaryKind parse_adversary(const std::string& s) {
  if (s == "fixed") return AdversaryKind::kFixed;
  if (s == "oblivious") return AdversaryKind::kObliviousSequence;
  if (s == "adaptive") return AdversaryKind::kAdaptive;
  if (s == "replay") return AdversaryKind::kReplay;
  throw std::invalid_argument("unknown adversary kind '" + s + "'");
}

}  // namespace detail

inline ExperimentConfig config_from_json(const json& j) {
  using detail::check_keys;
  using detail::read_opt;
  check_keys(j, {"T", "K", "kernel", "adversary", "contexts", "M", "eta", "beta", "schedule",
                 "max_m", "seeds", "eval_contexts", "diag_eval", "max_seconds", "output"},
             "config");
  ExperimentConfig c;
  c.horizon = j.at("T").get<std::size_t>();
  c.num_actions = j.at("K").get<std::size_t>();

  const json& k = j.at("kernel");
  check_keys(k, {"kind", "d", "profile", "g", "c", "D_trunc", "eigenvalues", "lengthscale", "nu"},
             "config.kernel");
  read_opt(k, "kind", c.kernel.kind);
  read_opt(k, "d", c.kernel.d);
  if (k.contains("profile")) c.kernel.profile = detail::parse_decay(k.at("profile").get<std::string>());
  read_opt(k, "g", c.kernel.g);
  read_opt(k, "c", c.kernel.c);
  read_opt(k, "D_trunc", c.kernel.d_trunc);
  read_opt(k, "eigenvalues", c.kernel.eigenvalues);
  read_opt(k, "lengthscale", c.kernel.lengthscale);
  read_opt(k, "nu", c.kernel.nu);

  const json& a = j.at("adversary");
  check_keys(a, {"kind", "drift", "scale", "path"}, "config.adversary");
  c.adversary.kind = detail::parse_adversary(a.at("kind").get<std::string>());
  read_opt(a, "drift", c.adversary.drift);
  read_opt(a, "scale", c.adversary.scale);
  read_opt(a, "path", c.adversary.path);

  const json& x = j.at("contexts");
  check_keys(x, {"kind", "n", "points", "weights"}, "config.contexts");
  read_opt(x, "kind", c.contexts.kind);
  read_opt(x, "n", c.contexts.n);
  read_opt(x, "points", c.contexts.points);
  read_opt(x, "weights", c.contexts.weights);

  read_opt(j, "M", c.m);
  read_opt(j, "eta", c.eta);
  read_opt(j, "beta", c.beta);
  if (j.contains("schedule")) {
    const auto s = j.at("schedule").get<std::string>();
    if (s == "manual")
      c.schedule = Schedule::kManual;
    else if (s == "tuned")
      c.schedule = Schedule::kTuned;
    else
      throw std::invalid_argument("config: unknown schedule '" + s + "'");
  }
  read_opt(j, "max_m", c.max_m);
  if (j.contains("seeds")) {
    const json& s = j.at("seeds");
    check_keys(s, {"master", "policy", "resample", "adversary", "context", "eval"}, "config.seeds");
    if (s.contains("master")) c.seeds = Seeds::from_master(s.at("master").get<std::uint64_t>());
    read_opt(s, "policy", c.seeds.policy);
    read_opt(s, "resample", c.seeds.resample);
    read_opt(s, "adversary", c.seeds.adversary);
    read_opt(s, "context", c.seeds.context);
    read_opt(s, "eval", c.seeds.eval);
  }
  read_opt(j, "eval_contexts", c.eval_contexts);
  read_opt(j, "diag_eval", c.diag_eval);
  read_opt(j, "max_seconds", c.max_seconds);
  if (j.contains("output")) {
    const json& o = j.at("output");
    check_keys(o, {"dir", "buffer"}, "config.output");
    read_opt(o, "dir", c.out_dir);
    read_opt(o, "buffer", c.write_buffer);
  }
  c.validate();
  return c;
}

inline ExperimentConfig load_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open config '" + path + "'");
  return config_from_json(json::parse(in));
}

inline json config_to_json(const ExperimentConfig& c) {
  json kernel{{"kind", c.kernel.kind}, {"d", c.kernel.d}};
  if (c.kernel.kind == "synthetic") {
    kernel["profile"] = to_string(c.kernel.profile);
    kernel["g"] = c.kernel.g;
    kernel["c"] = c.kernel.c;
    kernel["D_trunc"] = c.kernel.d_trunc;
  } else if (c.kernel.kind == "cosine") {
    kernel["eigenvalues"] = c.kernel.eigenvalues;
  } else {
    kernel["lengthscale"] = c.kernel.lengthscale;
    if (c.kernel.kind == "matern") kernel["nu"] = c.kernel.nu;
  }
  json adversary{{"kind", to_string(c.adversary.kind)},
                 {"drift", c.adversary.drift},
                 {"scale", c.adversary.scale}};
  if (!c.adversary.path.empty()) adversary["path"] = c.adversary.path;
  json contexts{{"kind", c.contexts.kind}};
  if (c.contexts.kind == "grid") contexts["n"] = c.contexts.n;
  if (c.contexts.kind == "points") {
    contexts["points"] = c.contexts.points;
    if (!c.contexts.weights.empty()) contexts["weights"] = c.contexts.weights;
  }
  return json{{"T", c.horizon},
              {"K", c.num_actions},
              {"kernel", kernel},
              {"adversary", adversary},
              {"contexts", contexts},
              {"M", c.m},
              {"eta", c.eta},
              {"beta", c.beta},
              {"schedule", c.schedule == Schedule::kManual ? "manual" : "tuned"},
              {"max_m", c.max_m},
              {"seeds",
               {{"policy", c.seeds.policy},
                {"resample", c.seeds.resample},
                {"adversary", c.seeds.adversary},
                {"context", c.seeds.context},
                {"eval", c.seeds.eval}}},
              {"eval_contexts", c.eval_contexts},
              {"diag_eval", c.diag_eval},
              {"max_seconds", c.max_seconds},
              {"output", {{"dir", c.out_dir}, {"buffer", c.write_buffer}}}};
}

// ---------------------------------------------------------------------------
// Experiment objects built from a configuration

inline MercerKernel make_kernel(const KernelSpec& s) {
  if (s.kind == "synthetic")
    return MercerKernel::synthetic(DecayProfile(s.profile, s.g, s.c), s.d_trunc, s.d);
  if (s.kind == "cosine") return MercerKernel::cosine(s.eigenvalues, s.d);
  if (s.kind == "gaussian") return MercerKernel::gaussian(s.d, s.lengthscale);
  if (s.kind == "matern") return MercerKernel::matern(s.d, s.nu, s.lengthscale);
  throw std::invalid_argument("unknown kernel kind '" + s.kind + "'");
}

inline ContextDistribution make_contexts(const ContextSpec& s, std::size_t dim) {
  if (s.kind == "uniform") return ContextDistribution::uniform(dim);
  if (s.kind == "grid") return ContextDistribution::grid(s.n, dim);
  if (s.kind == "points") return ContextDistribution::discrete(s.points, s.weights);
  throw std::invalid_argument("unknown context distribution '" + s.kind + "'");
}

struct Experiment {
  ExperimentConfig config;
  MercerKernel kernel;
  ContextDistribution contexts;
  Adversary adversary;
  ScheduleParams params;
  std::size_t m_cap = 0;  // nonzero when the schedule's M was capped
};

inline Experiment make_experiment(const ExperimentConfig& config) {
  config.validate();
  MercerKernel kernel = make_kernel(config.kernel);
  if (!kernel.has_eigensystem())
    throw unsupported_kernel_error(
        "simulation needs an explicit eigensystem to represent loss functions");
  ContextDistribution contexts = make_contexts(config.contexts, kernel.dim());
  if (contexts.dim() != kernel.dim())
    throw std::invalid_argument("context dimension does not match kernel dimension");
  for (const auto& p : contexts.points()) kernel.check_point(p);

  ScheduleParams params{config.m, config.eta, config.beta};
  std::size_t cap = 0;
  if (config.schedule == Schedule::kTuned) {
    if (!kernel.decay_profile())
      throw std::invalid_argument("tuned schedule needs a kernel decay profile");
    params = tuned_params(std::max<double>(2.0, static_cast<double>(config.horizon)),
                             *kernel.decay_profile());
    if (params.m > config.max_m) {
      params.m = config.max_m;
      cap = config.max_m;
    }
  }

  AdversaryParams ap;
  ap.drift = config.adversary.drift;
  ap.scale = config.adversary.scale;
  ap.horizon = config.horizon;
  std::optional<Adversary> adversary;
  if (config.adversary.kind == AdversaryKind::kReplay) {
    std::ifstream in(config.adversary.path);
    if (!in) throw std::runtime_error("cannot open loss sequence '" + config.adversary.path + "'");
    adversary = replay_adversary(loss_sequence_from_json(json::parse(in)));
    if (adversary->num_actions() != config.num_actions)
      throw std::invalid_argument("replayed loss sequence has the wrong action count");
  } else {
    adversary = make_adversary(config.adversary.kind, kernel, config.num_actions,
                               config.seeds.adversary, ap);
  }
  return Experiment{config, std::move(kernel), std::move(contexts), std::move(*adversary), params,
                    cap};
}

// ---------------------------------------------------------------------------
// Simulation

struct RoundRecord {
  Point context;
  std::size_t action = 0;
  double loss = 0.0;
  std::vector<double> probs;  // pi_t(.|X_t)
  std::size_t kernel_evals = 0;
  double wall_seconds = 0.0;
};

struct RunRecord {
  ExperimentConfig config;
  ScheduleParams params;
  std::size_t m_cap = 0;
  bool complete = true;
  std::vector<RoundRecord> rounds;
  Buffer buffer;
  LossSequence losses;  // f_{t,a} actually used, for exact replay
  std::size_t total_kernel_evals = 0;

  std::size_t horizon() const { return rounds.size(); }
};

// One KernelFTRL run. Deterministic given the seeds: every draw comes from its
// own (stream, round, k) generator.
inline RunRecord run(const Experiment& exp) {
  const auto& cfg = exp.config;
  const std::size_t m = exp.params.m;
  LossEstimator estimator(exp.kernel, cfg.num_actions, exp.params.beta);
  History history;
  RunRecord rec;
  rec.config = cfg;
  rec.params = exp.params;
  rec.m_cap = exp.m_cap;
  rec.rounds.reserve(cfg.horizon);
  const auto start = std::chrono::steady_clock::now();

  for (std::size_t t = 1; t <= cfg.horizon; ++t) {
    const auto round_start = std::chrono::steady_clock::now();
    const std::size_t evals_before = estimator.kernel_evals();

    Rng context_rng = Rng::for_site(cfg.seeds.context, t);
    Point x = exp.contexts.sample(context_rng);
    std::vector<LossFunction> f = exp.adversary.losses(t, history);

    const std::vector<double> cumulative = estimator.cumulative(x);
    PolicyDistribution policy = solve_policy(cumulative, exp.params.eta);
    Rng policy_rng = Rng::for_site(cfg.seeds.policy, t);
    const std::size_t action = sample_action(policy, policy_rng);
    const double loss = eval_loss(f.at(action), x, exp.kernel);

    ResampleBlock block;
    block.round = t;
    block.context = x;
    block.action = action;
    block.loss = loss;
    block.resamples.reserve(m);
    for (std::size_t k = 1; k <= m; ++k) {
      Rng rng = Rng::for_site(cfg.seeds.resample, t, k);
      Point xk = exp.contexts.sample(rng);
      const PolicyDistribution pk = solve_policy(estimator.cumulative(xk), exp.params.eta);
      const std::size_t ak = sample_action(pk, rng);
      block.resamples.push_back(Resample{std::move(xk), ak});
    }
    estimator.append(std::move(block));
    history.record(x, action, loss);

    RoundRecord r;
    r.context = std::move(x);
    r.action = action;
    r.loss = loss;
    r.probs = std::move(policy.probs);
    r.kernel_evals = estimator.kernel_evals() - evals_before;
    const auto now = std::chrono::steady_clock::now();
    r.wall_seconds = std::chrono::duration<double>(now - round_start).count();
    rec.total_kernel_evals += r.kernel_evals;
    rec.rounds.push_back(std::move(r));
    rec.losses.push_back(std::move(f));

    if (cfg.max_seconds > 0.0 &&
        std::chrono::duration<double>(now - start).count() > cfg.max_seconds && t < cfg.horizon) {
      rec.complete = false;
      break;
    }
  }
  rec.buffer = estimator.buffer();
  return rec;
}

inline RunRecord run(const ExperimentConfig& config) { return run(make_experiment(config)); }

// ---------------------------------------------------------------------------
// Regret

// Powers of two up to T, and T itself.
inline std::vector<std::size_t> checkpoints(std::size_t horizon) {
  std::vector<std::size_t> out;
  for (std::size_t p = 1; p <= horizon; p *= 2) out.push_back(p);
  if (out.empty() || out.back() != horizon) out.push_back(horizon);
  return out;
}

// Index of the smallest entry; ties go to the smallest index.
inline std::size_t argmin_first(std::span<const double> v) {
  std::size_t best = 0;
  for (std::size_t i = 1; i < v.size(); ++i)
    if (v[i] < v[best]) best = i;
  return best;
}

// Regret at one context, in expectation over the learner's draws:
// sum_{t<=T_c} <pi_t, l_t> - min_a sum_{t<=T_c} l_t(a), for every checkpoint T_c.
inline std::vector<double> pointwise_regret(const std::vector<std::vector<double>>& probs,
                                            const std::vector<std::vector<double>>& losses,
                                            std::span<const std::size_t> marks) {
  if (probs.size() != losses.size()) throw std::invalid_argument("pointwise_regret: length mismatch");
  const std::size_t k = losses.empty() ? 0 : losses.front().size();
  std::vector<double> out;
  out.reserve(marks.size());
  std::vector<double> per_action(k, 0.0);
  double learner = 0.0;
  std::size_t next = 0;
  for (std::size_t t = 0; t < losses.size() && next < marks.size(); ++t) {
    for (std::size_t a = 0; a < k; ++a) {
      learner += probs[t][a] * losses[t][a];
      per_action[a] += losses[t][a];
    }
    while (next < marks.size() && marks[next] == t + 1) {
      out.push_back(learner - per_action[argmin_first(per_action)]);
      ++next;
    }
  }
  return out;
}

struct RegretCurve {
  std::vector<std::size_t> checkpoints;
  std::vector<double> regret;
  std::vector<double> stderr;
  bool exact = false;  // finite support, exact expectation over contexts
  std::size_t eval_points = 0;

  double final_regret() const { return regret.empty() ? 0.0 : regret.back(); }
};

// Evaluation contexts: the whole support with its weights when the context
// distribution is finite, otherwise `n` held-out draws from the eval stream.
struct EvalSet {
  std::vector<Point> points;
  std::vector<double> weights;
  bool exact = false;
};

inline EvalSet make_eval_set(const Experiment& exp, std::size_t n) {
  EvalSet s;
  if (exp.contexts.is_discrete()) {
    s.points = exp.contexts.points();
    s.weights = exp.contexts.weights();
    s.exact = true;
    return s;
  }
  if (n == 0) throw std::invalid_argument("need at least one evaluation context");
  for (std::size_t i = 0; i < n; ++i) {
    Rng rng = Rng::for_site(exp.config.seeds.eval, 0, i);
    s.points.push_back(exp.contexts.sample(rng));
  }
  s.weights.assign(n, 1.0 / static_cast<double>(n));
  return s;
}

// Policy and true-loss tables pi_t(.|x), l_t(x, .) at one evaluation context,
// rebuilt from the buffer.
struct ContextTrace {
  std::vector<std::vector<double>> probs;
  std::vector<std::vector<double>> losses;
  std::vector<std::vector<double>> estimates;  // l_hat_t(x, .)
};

inline ContextTrace trace_context(const RunRecord& rec, const MercerKernel& kernel,
                                  LossEstimator& estimator, std::span<const double> x) {
  ContextTrace tr;
  const std::size_t horizon = rec.horizon();
  tr.probs.reserve(horizon);
  tr.losses.reserve(horizon);
  tr.estimates.reserve(horizon);
  const auto phi = kernel.features(x);
  estimator.replay(x, [&](std::size_t i, std::span<const double> before,
                          std::span<const double> lhat) {
    tr.probs.push_back(solve_policy(before, rec.params.eta).probs);
    tr.estimates.emplace_back(lhat.begin(), lhat.end());
    std::vector<double> l(rec.config.num_actions);
    for (std::size_t a = 0; a < l.size(); ++a) l[a] = eval_loss(rec.losses[i][a], phi);
    tr.losses.push_back(std::move(l));
  });
  return tr;
}

inline LossEstimator rebuild_estimator(const RunRecord& rec, const MercerKernel& kernel) {
  LossEstimator est(kernel, rec.config.num_actions, rec.params.beta);
  for (const auto& b : rec.buffer) est.append(b);
  return est;
}

inline RegretCurve regret_over(const EvalSet& eval,
                               const std::vector<std::vector<double>>& per_point,
                               std::vector<std::size_t> marks) {
  RegretCurve curve;
  curve.checkpoints = std::move(marks);
  curve.exact = eval.exact;
  curve.eval_points = eval.points.size();
  for (std::size_t c = 0; c < curve.checkpoints.size(); ++c) {
    if (eval.exact) {
      double r = 0.0;
      for (std::size_t j = 0; j < per_point.size(); ++j) r += eval.weights[j] * per_point[j][c];
      curve.regret.push_back(r);
      curve.stderr.push_back(0.0);
    } else {
      RunningStats s;
      for (const auto& p : per_point) s.add(p[c]);
      curve.regret.push_back(s.mean);
      curve.stderr.push_back(s.stderr());
    }
  }
  return curve;
}

// Regret curve of a finished run, using the recorded loss sequence and the
// buffer to reconstruct pi_t at every evaluation context.
inline RegretCurve empirical_regret(const RunRecord& rec, const Experiment& exp,
                                    const EvalSet& eval) {
  if (rec.losses.size() != rec.horizon())
    throw std::invalid_argument("empirical_regret: run record has no loss replay");
  LossEstimator est = rebuild_estimator(rec, exp.kernel);
  const auto marks = checkpoints(rec.horizon());
  std::vector<std::vector<double>> per_point;
  per_point.reserve(eval.points.size());
  for (const auto& x : eval.points) {
    const ContextTrace tr = trace_context(rec, exp.kernel, est, x);
    per_point.push_back(pointwise_regret(tr.probs, tr.losses, marks));
  }
  return regret_over(eval, per_point, marks);
}

inline RegretCurve empirical_regret(const RunRecord& rec, const Experiment& exp) {
  return empirical_regret(rec, exp, make_eval_set(exp, exp.config.eval_contexts));
}

// Regret of the uniform policy on the same loss sequence (reference line).
inline RegretCurve uniform_policy_regret(const RunRecord& rec, const Experiment& exp,
                                         const EvalSet& eval) {
  const auto marks = checkpoints(rec.horizon());
  const std::size_t k = rec.config.num_actions;
  std::vector<std::vector<double>> per_point;
  const std::vector<std::vector<double>> probs(rec.horizon(),
                                               std::vector<double>(k, 1.0 / static_cast<double>(k)));
  for (const auto& x : eval.points) {
    const auto phi = exp.kernel.features(x);
    std::vector<std::vector<double>> losses(rec.horizon(), std::vector<double>(k));
    for (std::size_t t = 0; t < rec.horizon(); ++t)
      for (std::size_t a = 0; a < k; ++a) losses[t][a] = eval_loss(rec.losses[t][a], phi);
    per_point.push_back(pointwise_regret(probs, losses, marks));
  }
  return regret_over(eval, per_point, marks);
}

// ---------------------------------------------------------------------------
// Regret decomposition R = R_tilde + B_star + B

struct Decomposition {
  double r_tilde = 0.0, r_tilde_stderr = 0.0;
  double b_star = 0.0, b_star_stderr = 0.0;
  double b = 0.0, b_stderr = 0.0;
  double sum = 0.0, sum_stderr = 0.0;  // per-draw R_tilde + B_star + B
  double regret = 0.0, regret_stderr = 0.0;
  double combined_stderr = 0.0;
  double b_star_bound = 0.0;  // T / (beta (M+1))
  std::size_t draws = 0;

  bool consistent(double z = 3.0) const {
    return std::abs(sum - regret) <= z * combined_stderr + 1e-9 * std::max(1.0, std::abs(regret));
  }
  bool b_star_within(double z = 3.0) const { return b_star <= b_star_bound + z * b_star_stderr; }
};

// Monte Carlo over n fresh X_0 draws; each draw replays the buffer at X_0.
inline Decomposition decomposition_diagnostic(const RunRecord& rec, const Experiment& exp,
                                              std::size_t n_eval) {
  if (n_eval == 0) throw std::invalid_argument("decomposition_diagnostic: need n_eval >= 1");
  LossEstimator est = rebuild_estimator(rec, exp.kernel);
  const std::size_t k = rec.config.num_actions;
  struct Terms {
    double r_tilde = 0.0, b_star = 0.0, b = 0.0;
  };
  std::map<Point, Terms> cache;
  auto terms_at = [&](const Point& x) {
    if (auto it = cache.find(x); it != cache.end()) return it->second;
    const ContextTrace tr = trace_context(rec, exp.kernel, est, x);
    std::vector<double> totals(k, 0.0);
    for (const auto& l : tr.losses)
      for (std::size_t a = 0; a < k; ++a) totals[a] += l[a];
    const std::size_t best = argmin_first(totals);
    Terms s;
    for (std::size_t t = 0; t < tr.losses.size(); ++t) {
      for (std::size_t a = 0; a < k; ++a) {
        const double star = a == best ? 1.0 : 0.0;
        const double p = tr.probs[t][a];
        const double lhat = tr.estimates[t][a];
        const double l = tr.losses[t][a];
        s.r_tilde += (p - star) * lhat;
        s.b_star += star * (lhat - l);
        s.b += p * (l - lhat);
      }
    }
    if (exp.contexts.is_discrete()) cache.emplace(x, s);
    return s;
  };

  RunningStats rt, bs, bb, sum;
  for (std::size_t i = 0; i < n_eval; ++i) {
    Rng rng = Rng::for_site(rec.config.seeds.eval, 1, i);
    const Terms s = terms_at(exp.contexts.sample(rng));
    rt.add(s.r_tilde);
    bs.add(s.b_star);
    bb.add(s.b);
    sum.add(s.r_tilde + s.b_star + s.b);
  }
  Decomposition d;
  d.draws = n_eval;
  d.r_tilde = rt.mean;
  d.r_tilde_stderr = rt.stderr();
  d.b_star = bs.mean;
  d.b_star_stderr = bs.stderr();
  d.b = bb.mean;
  d.b_stderr = bb.stderr();
  d.sum = sum.mean;
  d.sum_stderr = sum.stderr();
  const RegretCurve curve = empirical_regret(rec, exp);
  d.regret = curve.final_regret();
  d.regret_stderr = curve.stderr.empty() ? 0.0 : curve.stderr.back();
  d.combined_stderr = std::sqrt(d.sum_stderr * d.sum_stderr + d.regret_stderr * d.regret_stderr);
  const double denom = rec.params.beta * static_cast<double>(rec.params.m + 1);
  d.b_star_bound = denom > 0.0 ? static_cast<double>(rec.horizon()) / denom
                               : std::numeric_limits<double>::infinity();
  return d;
}

// ---------------------------------------------------------------------------
// Rate fitting

// Least-squares slope of log R against log T. Points with R <= 0 are dropped.
inline double slope_fit(std::span<const double> horizons, std::span<const double> regrets) {
  if (horizons.size() != regrets.size()) throw std::invalid_argument("slope_fit: length mismatch");
  std::vector<double> lx, ly;
  for (std::size_t i = 0; i < horizons.size(); ++i) {
    if (regrets[i] > 0.0 && horizons[i] > 0.0) {
      lx.push_back(std::log(horizons[i]));
      ly.push_back(std::log(regrets[i]));
    }
  }
  if (lx.size() < 3) throw std::invalid_argument("slope_fit: need >= 3 positive points");
  const double n = static_cast<double>(lx.size());
  double mx = 0.0, my = 0.0;
  for (std::size_t i = 0; i < lx.size(); ++i) {
    mx += lx[i];
    my += ly[i];
  }
  mx /= n;
  my /= n;
  double sxy = 0.0, sxx = 0.0;
  for (std::size_t i = 0; i < lx.size(); ++i) {
    sxy += (lx[i] - mx) * (ly[i] - my);
    sxx += (lx[i] - mx) * (lx[i] - mx);
  }
  if (!(sxx > 0.0)) throw std::invalid_argument("slope_fit: horizons must differ");
  return sxy / sxx;
}

}  // namespace kftrl
