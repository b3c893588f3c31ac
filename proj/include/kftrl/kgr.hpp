#pragma once

// Kernel geometric resampling: loss estimates computed purely through kernel
// evaluations.
//
// For one buffer entry (X_t, A_t, loss, {X(k), A(k)}_{k<=M}) and a query
// (x, a), the row vector phi(x)^T C_k with C_k = prod_{j<=k} (I - B_j) and
// B_j = 1{A(j) = a} phi(X(j)) phi(X(j))^T is kept in the form
//
//   phi(x)^T C_k = phi(x)^T + sum_{i<=k} p_i phi(X(i))^T,
//
// where p_k = -1{A(k) = a} (k(x, X(k)) + sum_{i<k} p_i k(X(i), X(k))) and
// earlier coefficients never change. Then
//
//   q = k(x, X_t) + sum_k [k(x, X_t) + sum_{i<=k} p_i k(X(i), X_t)]
//   b = beta (k(x, x) + sum_k [k(x, x) + sum_{i<=k} p_i k(X(i), x)])
//
// Only resamples with A(i) = a carry a non-zero coefficient, so a call costs
// at most 2 + 2M + M(M-1)/2 kernel evaluations and O(M) memory.

#include <cstddef>
#include <map>
#include <span>
#include <stdexcept>
#include <utility>
#include <vector>

#include "kftrl/mercer_kernel.hpp"
#include "kftrl/resample_block.hpp"

namespace kftrl {

struct KgrResult {
  double q = 0.0;
  double b = 0.0;
  std::size_t kernel_evals = 0;
};

// Documented per-call budget for kgr(): 2 + 2M + M(M-1)/2 <= 3M^2/2 + 5M + 4.
constexpr std::size_t kgr_eval_budget(std::size_t m) {
  return 2 + 2 * m + m * (m - 1) / 2;
}

// Coefficients p_i of the active resamples (A(i) = a), in resample order.
struct CoefficientState {
  std::vector<std::size_t> active;
  std::vector<double> p;

  void reset(std::size_t m) {
    active.clear();
    p.clear();
    active.reserve(m);
    p.reserve(m);
  }
};

namespace detail {

// Shared recursion. kx(k) = k(x, X(k)), kt(k) = k(X(k), X_t),
// gram(i, k) = k(X(i), X(k)) for i < k.
template <class KX, class KT, class Gram>
std::pair<double, double> kgr_recursion(const ResampleBlock& block, std::size_t action,
                                        double beta, double k_x_t, double k_x_x, KX&& kx,
                                        KT&& kt, Gram&& gram, CoefficientState& state) {
  const std::size_t m = block.resamples.size();
  state.reset(m);
  double sum_q = 0.0;  // sum_i p_i k(X(i), X_t)
  double sum_b = 0.0;  // sum_i p_i k(X(i), x)
  double q = k_x_t;
  double b = k_x_x;
  for (std::size_t k = 0; k < m; ++k) {
    if (block.resamples[k].action == action) {
      const double k_x_k = kx(k);
      double v = k_x_k;
      for (std::size_t n = 0; n < state.active.size(); ++n)
        v += state.p[n] * gram(state.active[n], k);
      const double p_k = -v;
      state.active.push_back(k);
      state.p.push_back(p_k);
      sum_q += p_k * kt(k);
      sum_b += p_k * k_x_k;
    }
    q += k_x_t + sum_q;
    b += k_x_x + sum_b;
  }
  return {q, beta * b};
}

}  // namespace detail

// q_t(x, a) and b_t(x, a) for one buffer entry, evaluating the kernel directly.
// q is the raw bilinear form <phi(x), S phi(X_t)>; the 1{A_t = a} factor is
// applied by point_estimate.
inline KgrResult kgr(std::span<const double> x, std::size_t action, const ResampleBlock& block,
                     double beta, const MercerKernel& kernel) {
  if (!(beta >= 0.0)) throw std::invalid_argument("kgr: beta must be >= 0");
  kernel.check_point(x);
  std::size_t evals = 0;
  auto eval = [&](std::span<const double> u, std::span<const double> v) {
    ++evals;
    return kernel.eval_unchecked(u, v);
  };
  const double k_x_t = eval(x, block.context);
  const double k_x_x = eval(x, x);
  CoefficientState state;
  auto [q, b] = detail::kgr_recursion(
      block, action, beta, k_x_t, k_x_x,
      [&](std::size_t k) { return eval(x, block.resamples[k].context); },
      [&](std::size_t k) { return eval(block.resamples[k].context, block.context); },
      [&](std::size_t i, std::size_t k) {
        return eval(block.resamples[i].context, block.resamples[k].context);
      },
      state);
  return KgrResult{q, b, evals};
}

// l_hat(x, a) = q * loss * 1{A_t = a} - b. Never clamped.
inline double point_estimate(std::span<const double> x, std::size_t action,
                             const ResampleBlock& block, double beta, const MercerKernel& kernel,
                             std::size_t* kernel_evals = nullptr) {
  const KgrResult r = kgr(x, action, block, beta, kernel);
  if (kernel_evals) *kernel_evals += r.kernel_evals;
  const double observed = block.action == action ? r.q * block.loss : 0.0;
  return observed - r.b;
}

// L_hat(x, a) = sum over the buffer of point estimates, in round order.
inline double cumulative_estimate(std::span<const double> x, std::size_t action,
                                  std::span<const ResampleBlock> buffer, double beta,
                                  const MercerKernel& kernel,
                                  std::size_t* kernel_evals = nullptr) {
  double total = 0.0;
  for (const auto& block : buffer)
    total += point_estimate(x, action, block, beta, kernel, kernel_evals);
  return total;
}

// A context prepared for repeated kernel evaluation: feature vector for
// eigensystem kernels, the raw point otherwise.
struct PreparedPoint {
  Point x;
  std::vector<double> phi;

  PreparedPoint() = default;
  PreparedPoint(const MercerKernel& k, Point p) : x(std::move(p)) {
    k.check_point(x);
    if (k.has_eigensystem()) phi = k.features(x);
  }
};

inline double kernel_between(const MercerKernel& k, const PreparedPoint& u,
                             const PreparedPoint& v) {
  return k.has_eigensystem() ? dot(u.phi, v.phi) : k.eval_unchecked(u.x, v.x);
}

// Kernel values of one buffer entry that do not depend on the query context:
// the full resample Gram matrix (strict lower triangle) and k(X(i), X_t).
// Shared by every query and every action that replays the entry.
struct BlockGram {
  PreparedPoint played;
  std::vector<PreparedPoint> resamples;
  std::vector<double> gram;  // packed: (i, k), i < k at k(k-1)/2 + i
  std::vector<double> to_played;

  BlockGram(const MercerKernel& k, const ResampleBlock& block, std::size_t* evals)
      : played(k, block.context) {
    const std::size_t m = block.resamples.size();
    resamples.reserve(m);
    for (const auto& r : block.resamples) resamples.emplace_back(k, r.context);
    gram.resize(m * (m - (m > 0 ? 1 : 0)) / 2);
    to_played.resize(m);
    for (std::size_t kk = 0; kk < m; ++kk) {
      to_played[kk] = kernel_between(k, resamples[kk], played);
      for (std::size_t i = 0; i < kk; ++i)
        gram[kk * (kk - 1) / 2 + i] = kernel_between(k, resamples[i], resamples[kk]);
    }
    if (evals) *evals += m + gram.size();
  }

  double pair(std::size_t i, std::size_t k) const { return gram[k * (k - 1) / 2 + i]; }
};

// kgr() for a prepared query against a precomputed BlockGram. Returns the
// same values as kgr() without re-evaluating the kernel on block pairs.
inline KgrResult kgr_cached(const MercerKernel& k, const PreparedPoint& x, double k_x_x,
                            std::size_t action, const ResampleBlock& block, const BlockGram& g,
                            double beta, CoefficientState& state) {
  const double k_x_t = kernel_between(k, x, g.played);
  auto [q, b] = detail::kgr_recursion(
      block, action, beta, k_x_t, k_x_x,
      [&](std::size_t i) { return kernel_between(k, x, g.resamples[i]); },
      [&](std::size_t i) { return g.to_played[i]; },
      [&](std::size_t i, std::size_t j) { return g.pair(i, j); }, state);
  return KgrResult{q, b, 0};
}

// The learner's data buffer together with per-entry kernel caches. Answers
// cumulative estimates for all actions at once; running sums for contexts
// that were queried before are memoized, so repeated queries at the same
// point (finite context supports) only replay the entries appended since.
class LossEstimator {
 public:
  LossEstimator(const MercerKernel& kernel, std::size_t num_actions, double beta)
      : kernel_(&kernel), num_actions_(num_actions), beta_(beta) {
    if (num_actions == 0) throw std::invalid_argument("LossEstimator: K must be >= 1");
    if (!(beta >= 0.0)) throw std::invalid_argument("LossEstimator: beta must be >= 0");
  }

  void append(ResampleBlock block) {
    block.validate(*kernel_, num_actions_);
    grams_.emplace_back(*kernel_, block, &kernel_evals_);
    buffer_.push_back(std::move(block));
  }

  const Buffer& buffer() const { return buffer_; }
  std::size_t size() const { return buffer_.size(); }
  std::size_t num_actions() const { return num_actions_; }
  double beta() const { return beta_; }
  const MercerKernel& kernel() const { return *kernel_; }
  std::size_t kernel_evals() const { return kernel_evals_; }

  // Point estimates l_hat_i(x, .) of entry i for all actions.
  void point_estimates(const PreparedPoint& x, double k_x_x, std::size_t entry,
                       std::span<double> out) {
    const ResampleBlock& block = buffer_[entry];
    const BlockGram& g = grams_[entry];
    const std::size_t m = block.resamples.size();
    const double k_x_t = kernel_between(*kernel_, x, g.played);
    kx_.resize(m);
    for (std::size_t k = 0; k < m; ++k) kx_[k] = kernel_between(*kernel_, x, g.resamples[k]);
    kernel_evals_ += 1 + m;
    for (std::size_t a = 0; a < num_actions_; ++a) {
      auto [q, b] = detail::kgr_recursion(
          block, a, beta_, k_x_t, k_x_x, [&](std::size_t k) { return kx_[k]; },
          [&](std::size_t k) { return g.to_played[k]; },
          [&](std::size_t i, std::size_t k) { return g.pair(i, k); }, state_);
      const double observed = block.action == a ? q * block.loss : 0.0;
      out[a] = observed - b;
    }
  }

  // L_hat(x, .) over the whole buffer.
  std::vector<double> cumulative(std::span<const double> x) {
    Point key(x.begin(), x.end());
    auto it = memo_.find(key);
    if (it == memo_.end()) {
      it = memo_.emplace(key, Memo{std::vector<double>(num_actions_, 0.0), 0}).first;
    }
    Memo& memo = it->second;
    if (memo.entries < buffer_.size()) {
      const PreparedPoint px(*kernel_, key);
      const double k_x_x = self_kernel(px);
      std::vector<double> lhat(num_actions_);
      for (std::size_t i = memo.entries; i < buffer_.size(); ++i) {
        point_estimates(px, k_x_x, i, lhat);
        for (std::size_t a = 0; a < num_actions_; ++a) memo.total[a] += lhat[a];
      }
      memo.entries = buffer_.size();
    }
    return memo.total;
  }

  // Walks the buffer in order, calling fn(entry, cumulative_before, l_hat).
  template <class Fn>
  void replay(std::span<const double> x, Fn&& fn) {
    const PreparedPoint px(*kernel_, Point(x.begin(), x.end()));
    const double k_x_x = self_kernel(px);
    std::vector<double> total(num_actions_, 0.0);
    std::vector<double> lhat(num_actions_);
    for (std::size_t i = 0; i < buffer_.size(); ++i) {
      point_estimates(px, k_x_x, i, lhat);
      fn(i, std::span<const double>(total), std::span<const double>(lhat));
      for (std::size_t a = 0; a < num_actions_; ++a) total[a] += lhat[a];
    }
  }

  double self_kernel(const PreparedPoint& px) {
    ++kernel_evals_;
    return kernel_between(*kernel_, px, px);
  }

 private:
  struct Memo {
    std::vector<double> total;
    std::size_t entries = 0;
  };

  const MercerKernel* kernel_;
  std::size_t num_actions_;
  double beta_;
  Buffer buffer_;
  std::vector<BlockGram> grams_;
  std::map<Point, Memo> memo_;
  std::size_t kernel_evals_ = 0;
  std::vector<double> kx_;
  CoefficientState state_;
};

}  // namespace kftrl
