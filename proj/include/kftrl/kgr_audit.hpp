#pragma once

// Monte Carlo checks of the estimator's bias and second moment on a fixed
// instance: one round of the interaction with a frozen policy and frozen loss
// functions, redrawn N times.

#include <cstddef>
#include <functional>
#include <limits>
#include <span>
#include <stdexcept>
#include <utility>
#include <vector>

#include "kftrl/environments.hpp"
#include "kftrl/kgr.hpp"
#include "kftrl/mercer_kernel.hpp"
#include "kftrl/rng.hpp"
#include "kftrl/stats.hpp"

namespace kftrl {

using PolicyFn = std::function<std::vector<double>(std::span<const double>)>;

struct EstimatorInstance {
  MercerKernel kernel;
  ContextDistribution contexts;
  PolicyFn policy;
  std::vector<LossFunction> losses;  // f_a, one per action
  double beta = 0.0;
  std::size_t m = 0;

  std::size_t num_actions() const { return losses.size(); }

  // X_t ~ D, A_t ~ policy(.|X_t), observed loss, and M resampled pairs.
  ResampleBlock draw_round(Rng& rng) const {
    ResampleBlock block;
    block.context = contexts.sample(rng);
    block.action = categorical_index(policy(block.context), rng.uniform());
    block.loss = eval_loss(losses.at(block.action), block.context, kernel);
    block.resamples.reserve(m);
    for (std::size_t k = 0; k < m; ++k) {
      Point x = contexts.sample(rng);
      const std::size_t a = categorical_index(policy(x), rng.uniform());
      block.resamples.push_back(Resample{std::move(x), a});
    }
    return block;
  }
};

struct BiasAudit {
  double empirical_bias = 0.0;    // mean <phi(x), f_tilde> - <phi(x), f>
  double mc_stderr = 0.0;
  double bound = 0.0;             // beta mean|phi(x)|^2_{S} + 1/(beta (M+1))
  double mean_sigma_norm = 0.0;   // mean |phi(x)|^2_{S}
  double overestimate = 0.0;      // mean l_hat - l
  double overestimate_stderr = 0.0;
  double overestimate_bound = 0.0;  // 1/(beta (M+1))
  bool bound_finite = true;       // false when beta = 0

  bool bias_within(double z = 3.0) const {
    return std::abs(empirical_bias) <= bound + z * mc_stderr;
  }
  bool overestimate_within(double z = 3.0) const {
    return overestimate <= overestimate_bound + z * overestimate_stderr;
  }
};

inline BiasAudit bias_audit(const EstimatorInstance& inst, std::span<const double> x,
                            std::size_t action, std::size_t n, Rng& rng) {
  if (!inst.kernel.has_eigensystem())
    throw unsupported_kernel_error("bias_audit needs an explicit eigensystem");
  if (n == 0) throw std::invalid_argument("bias_audit: N must be >= 1");
  const double truth = eval_loss(inst.losses.at(action), x, inst.kernel);
  const PreparedPoint px(inst.kernel, Point(x.begin(), x.end()));
  const double k_x_x = kernel_between(inst.kernel, px, px);
  CoefficientState state;
  RunningStats f_tilde, norm, lhat;
  for (std::size_t i = 0; i < n; ++i) {
    const ResampleBlock block = inst.draw_round(rng);
    const BlockGram gram(inst.kernel, block, nullptr);
    const KgrResult r = kgr_cached(inst.kernel, px, k_x_x, action, block, gram, 1.0, state);
    const double ft = block.action == action ? r.q * block.loss : 0.0;
    f_tilde.add(ft);
    norm.add(r.b);
    lhat.add(ft - inst.beta * r.b);
  }
  BiasAudit out;
  out.empirical_bias = f_tilde.mean - truth;
  out.mc_stderr = f_tilde.stderr();
  out.mean_sigma_norm = norm.mean;
  out.overestimate = lhat.mean - truth;
  out.overestimate_stderr = lhat.stderr();
  const double m1 = static_cast<double>(inst.m + 1);
  if (inst.beta > 0.0) {
    out.bound = inst.beta * norm.mean + 1.0 / (inst.beta * m1);
    out.overestimate_bound = 1.0 / (inst.beta * m1);
  } else {
    out.bound_finite = false;
    out.bound = std::numeric_limits<double>::infinity();
    out.overestimate_bound = std::numeric_limits<double>::infinity();
  }
  return out;
}

struct SecondMomentAudit {
  double mean = 0.0;
  double mc_stderr = 0.0;
  double bound = 0.0;  // 2K(1 + m(eps) + M eps)
  std::uint64_t m_eps = 0;

  bool within(double z = 3.0) const { return mean <= bound + z * mc_stderr; }
};

// Monte Carlo of E[sum_a pi(a|X_0) <phi(X_0), f_tilde_a>^2] with X_0 ~ D
// independent of the round.
inline SecondMomentAudit second_moment_audit(const EstimatorInstance& inst, double eps,
                                             std::size_t n, Rng& rng) {
  if (!inst.kernel.has_eigensystem())
    throw unsupported_kernel_error("second_moment_audit needs an explicit eigensystem");
  if (n == 0) throw std::invalid_argument("second_moment_audit: N must be >= 1");
  CoefficientState state;
  RunningStats acc;
  for (std::size_t i = 0; i < n; ++i) {
    const ResampleBlock block = inst.draw_round(rng);
    const PreparedPoint x0(inst.kernel, inst.contexts.sample(rng));
    const auto probs = inst.policy(x0.x);
    // Only the played action has a non-zero f_tilde.
    const BlockGram gram(inst.kernel, block, nullptr);
    const KgrResult r = kgr_cached(inst.kernel, x0, kernel_between(inst.kernel, x0, x0),
                                   block.action, block, gram, 0.0, state);
    const double v = r.q * block.loss;
    acc.add(probs[block.action] * v * v);
  }
  SecondMomentAudit out;
  out.mean = acc.mean;
  out.mc_stderr = acc.stderr();
  out.m_eps = truncation_index(inst.kernel, eps);
  out.bound = 2.0 * static_cast<double>(inst.num_actions()) *
              (1.0 + static_cast<double>(out.m_eps) + static_cast<double>(inst.m) * eps);
  return out;
}

}  // namespace kftrl
