#pragma once

// Brute-force finite-dimensional reference for the kernel-trick code paths.
// Everything here works on explicit feature vectors and dense D x D matrices;
// it is O(D^3 M) per call and is never used by the simulation loop.

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <cstddef>
#include <span>
#include <stdexcept>
#include <utility>
#include <vector>

#include "kftrl/mercer_kernel.hpp"
#include "kftrl/resample_block.hpp"
#include "kftrl/rng.hpp"

namespace kftrl::oracle {

using Eigen::MatrixXd;
using Eigen::VectorXd;

inline VectorXd feature_map(const MercerKernel& k, std::span<const double> x) {
  const auto phi = k.features(x);
  return Eigen::Map<const VectorXd>(phi.data(), static_cast<Eigen::Index>(phi.size()));
}

// I + sum_{k=1}^M prod_{j=1}^k (I - B_j), by dense products.
inline MatrixXd explicit_sigma_plus(std::span<const MatrixXd> blocks, Eigen::Index dim) {
  MatrixXd identity = MatrixXd::Identity(dim, dim);
  MatrixXd result = identity;
  MatrixXd running = identity;
  for (const auto& b : blocks) {
    if (b.rows() != dim || b.cols() != dim)
      throw std::invalid_argument("explicit_sigma_plus: dimension mismatch");
    running = running * (identity - b);
    result += running;
  }
  return result;
}

inline MatrixXd explicit_sigma_plus(std::span<const MatrixXd> blocks) {
  if (blocks.empty()) throw std::invalid_argument("explicit_sigma_plus: need dimension for M = 0");
  return explicit_sigma_plus(blocks, blocks.front().rows());
}

// B_k = 1{A(k) = a} phi(X(k)) phi(X(k))^T for every resample of the block.
inline std::vector<MatrixXd> block_operators(const MercerKernel& k, const ResampleBlock& block,
                                             std::size_t action) {
  const auto dim = static_cast<Eigen::Index>(k.feature_dim());
  std::vector<MatrixXd> out;
  out.reserve(block.resamples.size());
  for (const auto& r : block.resamples) {
    if (r.action == action) {
      const VectorXd v = feature_map(k, r.context);
      out.emplace_back(v * v.transpose());
    } else {
      out.emplace_back(MatrixXd::Zero(dim, dim));
    }
  }
  return out;
}

struct OracleKgr {
  double q = 0.0;
  double b = 0.0;
};

// q = <phi(x), S phi(X_t)>,  b = beta <phi(x), S phi(x)>,  S = explicit sigma-plus.
inline OracleKgr oracle_kgr(std::span<const double> x, std::size_t action,
                            const ResampleBlock& block, double beta, const MercerKernel& k) {
  const auto dim = static_cast<Eigen::Index>(k.feature_dim());
  const auto ops = block_operators(k, block, action);
  const MatrixXd s = explicit_sigma_plus(ops, dim);
  const VectorXd phi_x = feature_map(k, x);
  const VectorXd phi_t = feature_map(k, block.context);
  return OracleKgr{phi_x.dot(s * phi_t), beta * phi_x.dot(s * phi_x)};
}

struct SigmaEstimate {
  MatrixXd mean;
  MatrixXd stderr;  // entrywise Monte Carlo standard error
  std::size_t samples = 0;
};

// Monte Carlo estimate of E[1{A = a} phi(X) phi(X)^T] with X ~ D,
// A ~ policy(.|X). `sample_context(Rng&) -> Point`,
// `policy(span<const double>) -> probability vector`.
template <class ContextSampler, class Policy>
SigmaEstimate sigma_estimate(const MercerKernel& k, ContextSampler&& sample_context,
                             Policy&& policy, std::size_t action, std::size_t n, Rng& rng) {
  if (n == 0) throw std::invalid_argument("sigma_estimate: N must be >= 1");
  const auto dim = static_cast<Eigen::Index>(k.feature_dim());
  constexpr Eigen::Index kBatch = 4096;
  MatrixXd first = MatrixXd::Zero(dim, dim);
  MatrixXd second = MatrixXd::Zero(dim, dim);
  MatrixXd batch(dim, kBatch);
  std::vector<double> phi(static_cast<std::size_t>(dim));
  Eigen::Index filled = 0;
  auto flush = [&] {
    if (filled == 0) return;
    const auto cols = batch.leftCols(filled);
    first.noalias() += cols * cols.transpose();
    const MatrixXd sq = cols.array().square().matrix();
    second.noalias() += sq * sq.transpose();
    filled = 0;
  };
  for (std::size_t i = 0; i < n; ++i) {
    const Point x = sample_context(rng);
    const auto probs = policy(std::span<const double>(x));
    const std::size_t a = categorical_index(probs, rng.uniform());
    if (a != action) continue;
    k.features(x, phi);
    batch.col(filled) = Eigen::Map<const VectorXd>(phi.data(), dim);
    if (++filled == kBatch) flush();
  }
  flush();
  const double nd = static_cast<double>(n);
  SigmaEstimate out;
  out.samples = n;
  out.mean = first / nd;
  const MatrixXd var = (second / nd - out.mean.array().square().matrix()).cwiseMax(0.0);
  out.stderr = (var / std::max(1.0, nd - 1.0)).cwiseSqrt();
  return out;
}

// trace(I - (I - sigma)^exponent) = sum_i (1 - (1 - lambda_i)^exponent),
// computed from the symmetric eigendecomposition.
inline double effective_dim_trace(const MatrixXd& sigma, std::size_t exponent) {
  if (sigma.rows() != sigma.cols())
    throw std::invalid_argument("effective_dim_trace: matrix must be square");
  const MatrixXd sym = 0.5 * (sigma + sigma.transpose());
  Eigen::SelfAdjointEigenSolver<MatrixXd> eig(sym, Eigen::EigenvaluesOnly);
  double total = 0.0;
  for (Eigen::Index i = 0; i < eig.eigenvalues().size(); ++i) {
    double lambda = eig.eigenvalues()[i];
    if (lambda < -1e-9 || lambda > 1.0 + 1e-9)
      throw std::domain_error("effective_dim_trace: eigenvalue outside [0, 1]");
    lambda = std::clamp(lambda, 0.0, 1.0);
    total += 1.0 - std::pow(1.0 - lambda, static_cast<double>(exponent));
  }
  return total;
}

}  // namespace kftrl::oracle
