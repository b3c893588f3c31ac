#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <limits>
#include <span>
#include <stdexcept>
#include <vector>

#include "kftrl/rng.hpp"

namespace kftrl {

// Point on the simplex minimizing  Psi(p) + eta <p, L>,  Psi(p) = sum_a ln(1/p_a).
// Stationarity: 1/p_a = eta L_a + dual_lambda.
struct PolicyDistribution {
  std::vector<double> probs;
  double dual_lambda = 0.0;
  double kkt_residual = 0.0;

  std::size_t size() const { return probs.size(); }
};

inline double log_barrier(std::span<const double> p) {
  double s = 0.0;
  for (double v : p) s -= std::log(v);
  return s;
}

// Solves for the multiplier. With s_a = eta (L_a - min L) >= 0 and
// nu = lambda + eta min L, the normalizer g(nu) = sum_a 1/(s_a + nu) - 1 is
// convex and decreasing on nu > 0 with its root in [1, K]: g(1) >= 0 because
// the minimizing action contributes 1, and g(K) <= 0 because every term is at
// most 1/K. Newton started at the left end increases monotonically to the
// root; steps leaving the current bracket fall back to bisection.
inline PolicyDistribution solve_policy(std::span<const double> cumulative_loss, double eta) {
  const std::size_t k = cumulative_loss.size();
  if (k == 0) throw std::invalid_argument("solve_policy: need at least one action");
  if (!std::isfinite(eta) || !(eta > 0.0))
    throw std::invalid_argument("solve_policy: eta must be finite and > 0");
  for (double v : cumulative_loss)
    if (!std::isfinite(v)) throw std::invalid_argument("solve_policy: non-finite loss estimate");

  const double l_min = *std::min_element(cumulative_loss.begin(), cumulative_loss.end());
  std::vector<double> shift(k);
  for (std::size_t a = 0; a < k; ++a) shift[a] = eta * (cumulative_loss[a] - l_min);

  auto normalizer = [&](double nu, double* slope) {
    double g = -1.0;
    double d = 0.0;
    for (double s : shift) {
      const double inv = 1.0 / (s + nu);
      g += inv;
      d -= inv * inv;
    }
    if (slope) *slope = d;
    return g;
  };

  double lo = 1.0;
  double hi = static_cast<double>(k);
  double nu = lo;
  constexpr double kTol = 1e-13;
  for (int iter = 0; iter < 200; ++iter) {
    double slope = 0.0;
    const double g = normalizer(nu, &slope);
    if (std::abs(g) <= kTol) break;
    if (g > 0.0)
      lo = nu;
    else
      hi = nu;
    double next = nu - g / slope;
    if (!(next > lo && next < hi)) next = 0.5 * (lo + hi);
    if (next == nu) break;
    nu = next;
  }

  PolicyDistribution out;
  out.probs.resize(k);
  out.dual_lambda = nu - eta * l_min;
  double residual = 0.0;
  for (std::size_t a = 0; a < k; ++a) {
    out.probs[a] = 1.0 / (shift[a] + nu);
    residual = std::max(
        residual, std::abs(eta * cumulative_loss[a] + out.dual_lambda - 1.0 / out.probs[a]));
  }
  out.kkt_residual = residual;
  return out;
}

inline std::size_t sample_action(const PolicyDistribution& policy, Rng& rng) {
  return categorical_index(policy.probs, rng.uniform());
}

struct RegretAudit {
  double measured = 0.0;
  double bound = 0.0;
  bool holds() const { return measured <= bound; }
};

// Replays p_t = argmin_p { eta <p, sum_{tau<=t} c_tau> + Psi(p) } and compares
//   sum_t <p_t - y, c_t>   against   (Psi(y) - Psi(p_1)) / eta + eta sum_t <p_t, c_t^2>.
// Note the iterate for round t already includes c_t.
inline RegretAudit regret_audit(const std::vector<std::vector<double>>& losses, double eta,
                                std::span<const double> comparator) {
  const std::size_t k = comparator.size();
  if (k == 0) throw std::invalid_argument("regret_audit: empty comparator");
  double mass = 0.0;
  for (double v : comparator) {
    if (!(v > 0.0)) throw std::invalid_argument("regret_audit: comparator must be interior");
    mass += v;
  }
  if (std::abs(mass - 1.0) > 1e-9)
    throw std::invalid_argument("regret_audit: comparator must sum to 1");

  std::vector<double> cumulative(k, 0.0);
  RegretAudit out;
  double psi_first = static_cast<double>(k) * std::log(static_cast<double>(k));
  double second_moment = 0.0;
  for (std::size_t t = 0; t < losses.size(); ++t) {
    const auto& c = losses[t];
    if (c.size() != k) throw std::invalid_argument("regret_audit: loss vector size mismatch");
    for (std::size_t a = 0; a < k; ++a) cumulative[a] += c[a];
    const PolicyDistribution p = solve_policy(cumulative, eta);
    if (t == 0) psi_first = log_barrier(p.probs);
    for (std::size_t a = 0; a < k; ++a) {
      out.measured += (p.probs[a] - comparator[a]) * c[a];
      second_moment += p.probs[a] * c[a] * c[a];
    }
  }
  out.bound = (log_barrier(comparator) - psi_first) / eta + eta * second_moment;
  return out;
}

}  // namespace kftrl
