#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <limits>
#include <numbers>
#include <numeric>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace kftrl {

using Point = std::vector<double>;

// Raised when an operation needs the explicit eigensystem of a kernel that
// only supports evaluation.
class unsupported_kernel_error : public std::logic_error {
 public:
  using std::logic_error::logic_error;
};

enum class DecayKind { kExponential, kPolynomial };

inline const char* to_string(DecayKind k) {
  return k == DecayKind::kExponential ? "exponential" : "polynomial";
}

// Eigenvalue envelope mu_j <= g exp(-c j)  or  mu_j <= g j^{-c}  (j >= 1).
struct DecayProfile {
  DecayKind kind = DecayKind::kExponential;
  double g = 1.0;
  double c = 1.0;

  DecayProfile() = default;
  DecayProfile(DecayKind k, double g_, double c_) : kind(k), g(g_), c(c_) {
    validate();
  }

  void validate() const {
    if (!std::isfinite(g) || !(g > 0.0))
      throw std::invalid_argument("decay profile: g must be finite and > 0");
    if (!std::isfinite(c) || !(c > 0.0))
      throw std::invalid_argument("decay profile: c must be finite and > 0");
    if (kind == DecayKind::kPolynomial && !(c > 1.0))
      throw std::invalid_argument("polynomial decay profile requires c > 1");
  }

  // Envelope value for index j >= 1.
  double eigenvalue(std::uint64_t j) const {
    const double jd = static_cast<double>(j);
    return kind == DecayKind::kExponential ? g * std::exp(-c * jd)
                                           : g * std::pow(jd, -c);
  }
};

// Analytic upper bound on sum_{j>m} mu_j for the profile envelope.
inline double tail_bound(const DecayProfile& p, std::uint64_t m) {
  p.validate();
  if (p.kind == DecayKind::kExponential) {
    return p.g * std::exp(-p.c * static_cast<double>(m + 1)) /
           (1.0 - std::exp(-p.c));
  }
  if (m == 0) return std::numeric_limits<double>::infinity();
  return p.g * std::pow(static_cast<double>(m), 1.0 - p.c) / (p.c - 1.0);
}

// sum_{j>m} mu_j of the envelope series. Direct summation stops once a term
// drops below 1e-15 of the running total (or after a fixed number of terms);
// the remainder is added in closed form. For the exponential series the
// remainder is exact; for the polynomial series it is the midpoint-integral
// bound, which dominates the true remainder because j^{-c} is convex.
inline double profile_tail(const DecayProfile& p, std::uint64_t m) {
  p.validate();
  constexpr std::uint64_t kMaxTerms = 100000;
  double acc = 0.0;
  std::uint64_t j = m + 1;
  for (std::uint64_t n = 0; n < kMaxTerms; ++n, ++j) {
    const double term = p.eigenvalue(j);
    acc += term;
    if (term < 1e-15 * acc) {
      ++j;
      break;
    }
  }
  // j is the first index not yet summed.
  if (p.kind == DecayKind::kExponential) {
    acc += p.eigenvalue(j) / (1.0 - std::exp(-p.c));
  } else {
    const double from = static_cast<double>(j) - 0.5;
    acc += p.g * std::pow(from, 1.0 - p.c) / (p.c - 1.0);
  }
  return acc;
}

// m(eps) = min{ m >= 0 : sum_{j>m} mu_j <= eps } over the envelope series.
inline std::uint64_t truncation_index(const DecayProfile& p, double eps) {
  p.validate();
  if (!(eps > 0.0)) throw std::invalid_argument("truncation_index: eps must be > 0");

  // Upper end of the search from inverting the closed-form tail bound.
  double guess;
  if (p.kind == DecayKind::kExponential) {
    guess = std::log(p.g / (eps * (1.0 - std::exp(-p.c)))) / p.c - 1.0;
  } else {
    guess = std::pow(p.g / ((p.c - 1.0) * eps), 1.0 / (p.c - 1.0));
  }
  if (!(guess < 1e15))
    throw std::overflow_error("truncation_index: m(eps) exceeds 1e15");
  std::uint64_t hi = guess > 0.0 ? static_cast<std::uint64_t>(std::ceil(guess)) : 0;
  while (profile_tail(p, hi) > eps) ++hi;

  std::uint64_t lo = 0;
  if (profile_tail(p, 0) <= eps) return 0;
  // invariant: tail(lo) > eps, tail(hi) <= eps
  while (hi - lo > 1) {
    const std::uint64_t mid = lo + (hi - lo) / 2;
    if (profile_tail(p, mid) <= eps)
      hi = mid;
    else
      lo = mid;
  }
  return hi;
}

// m(eps) over an explicit, finite list of eigenvalues.
inline std::uint64_t truncation_index(std::span<const double> eigenvalues,
                                      double eps) {
  if (!(eps > 0.0)) throw std::invalid_argument("truncation_index: eps must be > 0");
  double tail = 0.0;
  std::size_t m = eigenvalues.size();
  // Walk backwards while including mu_m keeps the tail within eps.
  while (m > 0 && tail + eigenvalues[m - 1] <= eps) {
    tail += eigenvalues[m - 1];
    --m;
  }
  return m;
}

// Axis-aligned box; the default support is the unit cube.
struct Support {
  std::vector<double> lo;
  std::vector<double> hi;

  static Support unit(std::size_t dim) {
    return Support{std::vector<double>(dim, 0.0), std::vector<double>(dim, 1.0)};
  }
  std::size_t dim() const { return lo.size(); }
  bool contains(std::span<const double> x) const {
    if (x.size() != lo.size()) return false;
    for (std::size_t i = 0; i < x.size(); ++i)
      if (!(x[i] >= lo[i] && x[i] <= hi[i])) return false;
    return true;
  }
};

enum class KernelKind { kCosine, kGaussian, kMatern };

inline const char* to_string(KernelKind k) {
  switch (k) {
    case KernelKind::kCosine: return "cosine";
    case KernelKind::kGaussian: return "gaussian";
    case KernelKind::kMatern: return "matern";
  }
  return "?";
}

// Positive-definite kernel on a box in R^d.
//
// Cosine kernels carry an explicit finite eigensystem
//   k(x, x') = sum_j mu_j psi_j(x) psi_j(x'),  psi_j(x) = cos(j pi xbar),
// where xbar is the first coordinate rescaled to [0, 1]. Eigenvalues are
// rescaled so that sum_j mu_j <= 1, which gives k(x, x) <= 1 and
// |phi(x)|_2 <= 1. Gaussian and Matern kernels are evaluation-only; their
// decay profiles are tags used for parameter schedules.
//
// Immutable after construction.
class MercerKernel {
 public:
  static MercerKernel cosine(std::vector<double> eigenvalues, std::size_t dim = 1,
                             std::optional<DecayProfile> profile = std::nullopt) {
    if (dim == 0) throw std::invalid_argument("kernel dimension must be >= 1");
    double total = 0.0;
    for (double mu : eigenvalues) {
      if (!std::isfinite(mu) || mu < 0.0)
        throw std::invalid_argument("eigenvalues must be finite and >= 0");
      total += mu;
    }
    if (total > 1.0)
      for (double& mu : eigenvalues) mu /= total;
    MercerKernel k;
    k.kind_ = KernelKind::kCosine;
    k.support_ = Support::unit(dim);
    k.eigenvalues_ = std::move(eigenvalues);
    k.sqrt_eigenvalues_.reserve(k.eigenvalues_.size());
    for (double mu : k.eigenvalues_) k.sqrt_eigenvalues_.push_back(std::sqrt(mu));
    k.profile_ = profile;
    return k;
  }

  // D_trunc eigenvalues taken from the profile envelope, mu_j = g e^{-cj} or
  // g j^{-c}, then rescaled to total mass <= 1.
  static MercerKernel synthetic(const DecayProfile& profile, std::size_t d_trunc,
                                std::size_t dim = 1) {
    profile.validate();
    if (d_trunc == 0) throw std::invalid_argument("D_trunc must be >= 1");
    std::vector<double> mu(d_trunc);
    for (std::size_t j = 0; j < d_trunc; ++j) mu[j] = profile.eigenvalue(j + 1);
    return cosine(std::move(mu), dim, profile);
  }

  // exp(-|x - x'|^2 / (2 l^2)); tagged with exponential decay, c = 1/d.
  static MercerKernel gaussian(std::size_t dim, double lengthscale) {
    if (dim == 0) throw std::invalid_argument("kernel dimension must be >= 1");
    if (!(lengthscale > 0.0)) throw std::invalid_argument("lengthscale must be > 0");
    MercerKernel k;
    k.kind_ = KernelKind::kGaussian;
    k.support_ = Support::unit(dim);
    k.lengthscale_ = lengthscale;
    k.profile_ = DecayProfile(DecayKind::kExponential, 1.0, 1.0 / static_cast<double>(dim));
    return k;
  }

  // Matern with smoothness nu; tagged with polynomial decay, c = 1 + 2 nu / d.
  static MercerKernel matern(std::size_t dim, double nu, double lengthscale) {
    if (dim == 0) throw std::invalid_argument("kernel dimension must be >= 1");
    if (!(nu > 0.0)) throw std::invalid_argument("matern smoothness must be > 0");
    if (!(lengthscale > 0.0)) throw std::invalid_argument("lengthscale must be > 0");
    MercerKernel k;
    k.kind_ = KernelKind::kMatern;
    k.support_ = Support::unit(dim);
    k.lengthscale_ = lengthscale;
    k.nu_ = nu;
    k.profile_ = DecayProfile(DecayKind::kPolynomial, 1.0,
                              1.0 + 2.0 * nu / static_cast<double>(dim));
    return k;
  }

  KernelKind kind() const { return kind_; }
  std::size_t dim() const { return support_.dim(); }
  const Support& support() const { return support_; }
  bool has_eigensystem() const { return kind_ == KernelKind::kCosine; }
  const std::optional<DecayProfile>& decay_profile() const { return profile_; }
  double lengthscale() const { return lengthscale_; }
  double nu() const { return nu_; }

  std::span<const double> eigenvalues() const {
    require_eigensystem();
    return eigenvalues_;
  }
  std::size_t feature_dim() const {
    require_eigensystem();
    return eigenvalues_.size();
  }

  void check_point(std::span<const double> x) const {
    if (!support_.contains(x))
      throw std::domain_error("context point outside kernel support");
  }

  // psi_j(x) = cos(j pi xbar) for j >= 1.
  double eigenfunction(std::size_t j, std::span<const double> x) const {
    require_eigensystem();
    const double xbar = (x[0] - support_.lo[0]) / (support_.hi[0] - support_.lo[0]);
    return std::cos(static_cast<double>(j) * std::numbers::pi * xbar);
  }

  // phi_j(x) = sqrt(mu_j) psi_j(x), written into out (size D_trunc).
  void features(std::span<const double> x, std::span<double> out) const {
    require_eigensystem();
    check_point(x);
    for (std::size_t j = 0; j < eigenvalues_.size(); ++j)
      out[j] = sqrt_eigenvalues_[j] * eigenfunction(j + 1, x);
  }

  std::vector<double> features(std::span<const double> x) const {
    std::vector<double> out(feature_dim());
    features(x, out);
    return out;
  }

  double operator()(std::span<const double> x, std::span<const double> y) const {
    check_point(x);
    check_point(y);
    return eval_unchecked(x, y);
  }

  double eval_unchecked(std::span<const double> x, std::span<const double> y) const {
    switch (kind_) {
      case KernelKind::kCosine: {
        // Same operation order as a dot product of two feature vectors, so
        // cached-feature and direct evaluation agree bit for bit.
        double s = 0.0;
        for (std::size_t j = 0; j < eigenvalues_.size(); ++j)
          s += (sqrt_eigenvalues_[j] * eigenfunction(j + 1, x)) *
               (sqrt_eigenvalues_[j] * eigenfunction(j + 1, y));
        return s;
      }
      case KernelKind::kGaussian:
        return std::exp(-squared_distance(x, y) / (2.0 * lengthscale_ * lengthscale_));
      case KernelKind::kMatern:
        return matern_value(std::sqrt(squared_distance(x, y)));
    }
    return 0.0;
  }

 private:
  MercerKernel() = default;

  void require_eigensystem() const {
    if (!has_eigensystem())
      throw unsupported_kernel_error(std::string(to_string(kind_)) +
                                     " kernel has no explicit eigensystem");
  }

  static double squared_distance(std::span<const double> x, std::span<const double> y) {
    double s = 0.0;
    for (std::size_t i = 0; i < x.size(); ++i) s += (x[i] - y[i]) * (x[i] - y[i]);
    return s;
  }

  double matern_value(double r) const {
    if (r == 0.0) return 1.0;
    const double z = std::sqrt(2.0 * nu_) * r / lengthscale_;
    if (nu_ == 0.5) return std::exp(-z);
    if (nu_ == 1.5) return (1.0 + z) * std::exp(-z);
    if (nu_ == 2.5) return (1.0 + z + z * z / 3.0) * std::exp(-z);
    return std::pow(2.0, 1.0 - nu_) / std::tgamma(nu_) * std::pow(z, nu_) *
           std::cyl_bessel_k(nu_, z);
  }

  KernelKind kind_ = KernelKind::kCosine;
  Support support_;
  std::vector<double> eigenvalues_;
  std::vector<double> sqrt_eigenvalues_;
  std::optional<DecayProfile> profile_;
  double lengthscale_ = 0.0;
  double nu_ = 0.0;
};

inline double dot(std::span<const double> a, std::span<const double> b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

// m(eps) for a kernel: explicit eigenvalues when available, else the profile.
inline std::uint64_t truncation_index(const MercerKernel& k, double eps) {
  if (k.has_eigensystem()) return truncation_index(k.eigenvalues(), eps);
  if (!k.decay_profile())
    throw unsupported_kernel_error("kernel has neither eigensystem nor decay profile");
  return truncation_index(*k.decay_profile(), eps);
}

}  // namespace kftrl
