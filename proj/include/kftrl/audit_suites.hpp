#pragma once

// Property suites over randomized instances. Each returns the measured
// quantities; callers decide pass/fail against their tolerances.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <limits>
#include <string>
#include <vector>

#include "json.hpp"
#include "kftrl/environments.hpp"
#include "kftrl/feature_oracle.hpp"
#include "kftrl/kgr.hpp"
#include "kftrl/kgr_audit.hpp"
#include "kftrl/log_barrier_ftrl.hpp"
#include "kftrl/mercer_kernel.hpp"
#include "kftrl/rng.hpp"

namespace kftrl::suites {

using nlohmann::json;

namespace detail {

inline double seconds_since(std::chrono::steady_clock::time_point start) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
}

inline DecayProfile random_profile(Rng& rng) {
  if (rng.uniform() < 0.5) return DecayProfile(DecayKind::kExponential, 1.0, rng.uniform(0.2, 3.0));
  return DecayProfile(DecayKind::kPolynomial, 1.0, rng.uniform(1.2, 4.0));
}

}  // namespace detail

// ---------------------------------------------------------------------------
// kgr against the explicit feature-space oracle

struct OracleCheck {
  std::size_t instances = 0;
  std::size_t comparisons = 0;
  double max_rel_err_q = 0.0;
  double max_rel_err_b = 0.0;
  double seconds = 0.0;
  json worst;  // the instance attaining the largest error

  double max_rel_err() const { return std::max(max_rel_err_q, max_rel_err_b); }
};

// Relative error with a scale floor: the magnitude the exact value could have
// given the norms involved, so that near-cancellations are not amplified.
inline double relative_error(double got, double want, double scale) {
  const double denom = std::max(std::abs(want), scale);
  return denom > 0.0 ? std::abs(got - want) / denom : std::abs(got - want);
}

inline OracleCheck oracle_equivalence(std::size_t n, std::uint64_t seed, std::size_t max_d = 16,
                                      std::size_t max_m = 8, std::size_t max_k = 4) {
  const auto start = std::chrono::steady_clock::now();
  OracleCheck out;
  for (std::size_t i = 0; i < n; ++i) {
    Rng rng = Rng::for_site(seed, i);
    const std::size_t d = 1 + rng.index(max_d);
    const std::size_t m = rng.index(max_m + 1);
    const std::size_t k = 1 + rng.index(max_k);
    const double beta = rng.uniform() < 0.1 ? 0.0 : rng.uniform(0.0, 2.0);
    const MercerKernel kernel = MercerKernel::synthetic(detail::random_profile(rng), d);
    const auto contexts = ContextDistribution::uniform(1);

    ResampleBlock block;
    block.round = 1;
    block.context = contexts.sample(rng);
    block.action = rng.index(k);
    block.loss = rng.uniform(-1.0, 1.0);
    // Bias resample actions toward few values so that many resamples share
    // the queried action.
    const std::size_t spread = 1 + rng.index(k);
    for (std::size_t r = 0; r < m; ++r)
      block.resamples.push_back(Resample{contexts.sample(rng), rng.index(spread)});
    const Point x = rng.uniform() < 0.1 ? block.context : contexts.sample(rng);

    const auto phi_x = kernel.features(x);
    const auto phi_t = kernel.features(block.context);
    const double nx = l2_norm(phi_x);
    const double nt = l2_norm(phi_t);
    for (std::size_t a = 0; a < k; ++a) {
      const KgrResult got = kgr(x, a, block, beta, kernel);
      const oracle::OracleKgr want = oracle::oracle_kgr(x, a, block, beta, kernel);
      const double eq = relative_error(got.q, want.q, nx * nt);
      const double eb = relative_error(got.b, want.b, beta * nx * nx);
      ++out.comparisons;
      if (std::max(eq, eb) > out.max_rel_err()) {
        out.worst = json{{"instance", i}, {"D_trunc", d}, {"M", m},   {"K", k},
                         {"action", a},   {"beta", beta}, {"x", x},   {"block", block},
                         {"q", got.q},    {"q_oracle", want.q},       {"b", got.b},
                         {"b_oracle", want.b}};
      }
      out.max_rel_err_q = std::max(out.max_rel_err_q, eq);
      out.max_rel_err_b = std::max(out.max_rel_err_b, eb);
    }
    ++out.instances;
  }
  out.seconds = detail::seconds_since(start);
  return out;
}

// ---------------------------------------------------------------------------
// Kernel-evaluation count of one kgr call

struct ComplexityCheck {
  std::size_t max_m = 0;
  std::size_t violations = 0;
  std::vector<std::size_t> evals;  // worst case per M (all resamples active)
};

inline ComplexityCheck complexity_count(std::size_t max_m, std::uint64_t seed) {
  ComplexityCheck out;
  out.max_m = max_m;
  const MercerKernel kernel =
      MercerKernel::synthetic(DecayProfile(DecayKind::kExponential, 1.0, 1.0), 8);
  Rng rng(seed);
  for (std::size_t m = 1; m <= max_m; ++m) {
    ResampleBlock block;
    block.context = {rng.uniform()};
    block.loss = 0.5;
    for (std::size_t r = 0; r < m; ++r) block.resamples.push_back(Resample{{rng.uniform()}, 0});
    const Point x{rng.uniform()};
    const KgrResult r = kgr(x, 0, block, 0.5, kernel);
    const double md = static_cast<double>(m);
    if (static_cast<double>(r.kernel_evals) > 1.5 * md * md + 5.0 * md + 4.0) ++out.violations;
    out.evals.push_back(r.kernel_evals);
  }
  return out;
}

// ---------------------------------------------------------------------------
// Log-barrier FTRL solver

struct FtrlSolveCheck {
  std::size_t solves = 0;
  double max_normalization_err = 0.0;
  double max_kkt_residual = 0.0;
  std::size_t grid_instances = 0;
  std::size_t grid_losses = 0;  // K=2 instances where some grid point beat the solver
  double worst_grid_gap = -std::numeric_limits<double>::infinity();
};

inline FtrlSolveCheck ftrl_solve_check(std::size_t n, std::uint64_t seed,
                                       std::size_t grid_instances = 100,
                                       std::size_t grid_points = 10000) {
  FtrlSolveCheck out;
  for (std::size_t i = 0; i < n; ++i) {
    Rng rng = Rng::for_site(seed, i);
    const std::size_t k = 1 + rng.index(8);
    std::vector<double> l(k);
    for (auto& v : l) v = rng.uniform(-100.0, 100.0);
    const double eta = std::pow(10.0, rng.uniform(-4.0, 1.0));
    const PolicyDistribution p = solve_policy(l, eta);
    double mass = 0.0;
    for (double v : p.probs) mass += v;
    out.max_normalization_err = std::max(out.max_normalization_err, std::abs(mass - 1.0));
    out.max_kkt_residual = std::max(out.max_kkt_residual, p.kkt_residual);
    ++out.solves;
  }
  for (std::size_t i = 0; i < grid_instances; ++i) {
    Rng rng = Rng::for_site(seed, n + i, 1);
    const std::vector<double> l{rng.uniform(-100.0, 100.0), rng.uniform(-100.0, 100.0)};
    const double eta = std::pow(10.0, rng.uniform(-4.0, 1.0));
    auto objective = [&](double p0) {
      return eta * (p0 * l[0] + (1.0 - p0) * l[1]) - std::log(p0) - std::log(1.0 - p0);
    };
    const double solved = objective(solve_policy(l, eta).probs[0]);
    double best = std::numeric_limits<double>::infinity();
    for (std::size_t g = 1; g <= grid_points; ++g)
      best = std::min(best, objective(static_cast<double>(g) / static_cast<double>(grid_points + 1)));
    const double gap = solved - best;  // <= 0 when the solver wins
    out.worst_grid_gap = std::max(out.worst_grid_gap, gap);
    if (gap > 0.0) ++out.grid_losses;
    ++out.grid_instances;
  }
  return out;
}

// ---------------------------------------------------------------------------
// FTRL regret inequality on arbitrary loss sequences

struct FtrlRegretCheck {
  std::size_t sequences = 0;
  std::size_t checks = 0;
  std::size_t violations = 0;
  double min_slack = std::numeric_limits<double>::infinity();  // bound - measured
};

inline FtrlRegretCheck ftrl_regret_check(std::size_t n, std::size_t horizon, double c_max,
                                         std::uint64_t seed) {
  FtrlRegretCheck out;
  for (std::size_t i = 0; i < n; ++i) {
    Rng rng = Rng::for_site(seed, i);
    const std::size_t k = 2 + rng.index(5);
    const double eta = std::pow(10.0, rng.uniform(-3.0, 0.0));
    // Families: symmetric, nonnegative, nonpositive, and sparse spikes.
    const std::size_t family = i % 4;
    std::vector<std::vector<double>> c(horizon, std::vector<double>(k));
    for (auto& row : c) {
      for (auto& v : row) {
        switch (family) {
          case 0: v = rng.uniform(-c_max, c_max); break;
          case 1: v = rng.uniform(0.0, c_max); break;
          case 2: v = rng.uniform(-c_max, 0.0); break;
          default: v = rng.uniform() < 0.05 ? rng.uniform(-c_max, c_max) : rng.uniform(-0.1, 0.1);
        }
      }
    }
    std::vector<double> totals(k, 0.0);
    for (const auto& row : c)
      for (std::size_t a = 0; a < k; ++a) totals[a] += row[a];
    const std::size_t best = static_cast<std::size_t>(
        std::min_element(totals.begin(), totals.end()) - totals.begin());
    const double kd = static_cast<double>(k);
    const double delta = 1.0 / static_cast<double>(horizon);
    std::vector<std::vector<double>> comparators;
    comparators.emplace_back(k, 1.0 / kd);
    std::vector<double> smoothed(k, delta / kd);
    smoothed[best] += 1.0 - delta;
    comparators.push_back(smoothed);
    std::vector<double> random(k);
    double mass = 0.0;
    for (auto& v : random) mass += (v = 0.01 + rng.uniform());
    for (auto& v : random) v /= mass;
    comparators.push_back(random);

    for (const auto& y : comparators) {
      const RegretAudit r = regret_audit(c, eta, y);
      ++out.checks;
      if (!r.holds()) ++out.violations;
      out.min_slack = std::min(out.min_slack, r.bound - r.measured);
    }
    ++out.sequences;
  }
  return out;
}

// ---------------------------------------------------------------------------
// Effective-dimension trace bound

struct TraceCell {
  std::string profile;
  double c = 0.0;
  std::size_t m = 0;
  double eps = 0.0;
  bool skipped = false;  // profile not admissible (polynomial with c <= 1)
  double trace = 0.0;       // exponent M+1
  double trace_m = 0.0;     // exponent M
  std::uint64_t m_eps = 0;
  double bound = 0.0;       // m(eps) + (M+1) eps
  double allowance = 0.0;   // Monte Carlo allowance for the trace
  bool pass = true;
};

inline const std::vector<double>& trace_eps_grid() {
  static const std::vector<double> grid{1.0, 0.3, 0.1, 0.03, 0.01, 3e-3, 1e-3, 3e-4, 1e-4};
  return grid;
}

// Sigma is estimated once per kernel from n draws (uniform contexts, a
// context-dependent two-action policy, action 0), then every (M, eps) cell is
// checked against it.
inline std::vector<TraceCell> trace_bound_check(std::size_t n, std::uint64_t seed,
                                                std::size_t d_trunc = 32) {
  std::vector<TraceCell> cells;
  const std::vector<std::size_t> ms{4, 16, 64};
  const std::vector<double> cs{1.0, 2.0, 3.0};
  std::uint64_t site = 0;
  for (DecayKind kind : {DecayKind::kExponential, DecayKind::kPolynomial}) {
    for (double c : cs) {
      ++site;
      if (kind == DecayKind::kPolynomial && c <= 1.0) {
        for (std::size_t m : ms)
          for (double eps : trace_eps_grid()) {
            TraceCell cell;
            cell.profile = to_string(kind);
            cell.c = c;
            cell.m = m;
            cell.eps = eps;
            cell.skipped = true;
            cells.push_back(cell);
          }
        continue;
      }
      const MercerKernel kernel = MercerKernel::synthetic(DecayProfile(kind, 1.0, c), d_trunc);
      const auto contexts = ContextDistribution::uniform(1);
      Rng rng = Rng::for_site(seed, site);
      const auto sigma = oracle::sigma_estimate(
          kernel, [&](Rng& r) { return contexts.sample(r); },
          [](std::span<const double> x) {
            const double p = 0.2 + 0.6 * x[0];
            return std::vector<double>{p, 1.0 - p};
          },
          0, n, rng);
      const double se_norm = sigma.stderr.norm();
      const double root_d = std::sqrt(static_cast<double>(d_trunc));
      for (std::size_t m : ms) {
        const double tr = oracle::effective_dim_trace(sigma.mean, m + 1);
        const double tr_m = oracle::effective_dim_trace(sigma.mean, m);
        for (double eps : trace_eps_grid()) {
          TraceCell cell;
          cell.profile = to_string(kind);
          cell.c = c;
          cell.m = m;
          cell.eps = eps;
          cell.trace = tr;
          cell.trace_m = tr_m;
          cell.m_eps = truncation_index(kernel, eps);
          cell.bound = static_cast<double>(cell.m_eps) + static_cast<double>(m + 1) * eps;
          cell.allowance = static_cast<double>(m + 1) * root_d * se_norm;
          cell.pass = tr <= cell.bound + 3.0 * cell.allowance;
          cells.push_back(cell);
        }
      }
    }
  }
  return cells;
}

// ---------------------------------------------------------------------------
// Estimator bias, over-estimation and second moment on fixed instances

// K = 2, D = 8 exponential-decay kernel, uniform contexts, a context-dependent
// policy and loss functions drawn once from the unit ball.
inline EstimatorInstance bias_instance(double beta, std::size_t m, std::uint64_t seed) {
  const MercerKernel kernel =
      MercerKernel::synthetic(DecayProfile(DecayKind::kExponential, 1.0, 0.5), 8);
  std::vector<LossFunction> losses;
  for (std::size_t a = 0; a < 2; ++a) {
    Rng rng = Rng::for_site(seed, 0, a);
    losses.push_back(LossFunction{draw_in_ball(kernel.feature_dim(), 1.0, rng)});
  }
  PolicyFn policy = [](std::span<const double> x) {
    const double p = 0.25 + 0.5 * x[0];
    return std::vector<double>{p, 1.0 - p};
  };
  return EstimatorInstance{kernel, ContextDistribution::uniform(1), policy, losses, beta, m};
}

struct BiasCell {
  double beta = 0.0;
  std::size_t m = 0;
  std::size_t action = 0;
  double x = 0.0;
  BiasAudit audit;
};

inline std::vector<BiasCell> bias_check(std::size_t n, std::uint64_t seed) {
  std::vector<BiasCell> cells;
  const std::vector<double> xs{0.1, 0.6};
  std::uint64_t site = 0;
  for (double beta : {0.05, 0.2}) {
    for (std::size_t m : {std::size_t{4}, std::size_t{16}}) {
      const EstimatorInstance inst = bias_instance(beta, m, seed);
      for (std::size_t a = 0; a < 2; ++a) {
        for (double x : xs) {
          Rng rng = Rng::for_site(seed, 1, ++site);
          cells.push_back(BiasCell{beta, m, a, x, bias_audit(inst, Point{x}, a, n, rng)});
        }
      }
    }
  }
  return cells;
}

struct SecondMomentCell {
  std::size_t m = 0;
  double beta = 0.0;
  SecondMomentAudit audit;
};

inline std::vector<SecondMomentCell> second_moment_check(std::size_t n, double eps,
                                                         std::uint64_t seed) {
  std::vector<SecondMomentCell> cells;
  std::uint64_t site = 0;
  for (double beta : {0.05, 0.2}) {
    for (std::size_t m : {std::size_t{4}, std::size_t{16}}) {
      const EstimatorInstance inst = bias_instance(beta, m, seed);
      Rng rng = Rng::for_site(seed, 2, ++site);
      cells.push_back(SecondMomentCell{m, beta, second_moment_audit(inst, eps, n, rng)});
    }
  }
  return cells;
}

}  // namespace kftrl::suites
