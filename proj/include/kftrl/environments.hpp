#pragma once

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <span>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "json.hpp"
#include "kftrl/mercer_kernel.hpp"
#include "kftrl/rng.hpp"

namespace kftrl {

// Context distribution with sampling access: uniform on the unit cube, or a
// weighted finite support (grids, point masses).
class ContextDistribution {
 public:
  static ContextDistribution uniform(std::size_t dim) {
    if (dim == 0) throw std::invalid_argument("context dimension must be >= 1");
    ContextDistribution d;
    d.dim_ = dim;
    return d;
  }

  static ContextDistribution discrete(std::vector<Point> points, std::vector<double> weights = {}) {
    if (points.empty()) throw std::invalid_argument("discrete distribution needs points");
    const std::size_t dim = points.front().size();
    for (const auto& p : points)
      if (p.size() != dim || dim == 0)
        throw std::invalid_argument("discrete distribution: inconsistent point dimension");
    if (weights.empty()) weights.assign(points.size(), 1.0 / static_cast<double>(points.size()));
    if (weights.size() != points.size())
      throw std::invalid_argument("discrete distribution: weight count mismatch");
    double total = 0.0;
    for (double w : weights) {
      if (!(w >= 0.0) || !std::isfinite(w))
        throw std::invalid_argument("discrete distribution: weights must be >= 0");
      total += w;
    }
    if (!(total > 0.0)) throw std::invalid_argument("discrete distribution: zero total weight");
    for (double& w : weights) w /= total;
    ContextDistribution d;
    d.dim_ = dim;
    d.points_ = std::move(points);
    d.weights_ = std::move(weights);
    return d;
  }

  static ContextDistribution point_mass(Point x) { return discrete({std::move(x)}); }

  // Cell midpoints (i + 1/2)/n of an n^dim grid on the unit cube, uniform weights.
  static ContextDistribution grid(std::size_t per_axis, std::size_t dim = 1) {
    if (per_axis == 0 || dim == 0) throw std::invalid_argument("grid: need n >= 1 and d >= 1");
    std::size_t total = 1;
    for (std::size_t i = 0; i < dim; ++i) total *= per_axis;
    std::vector<Point> pts;
    pts.reserve(total);
    for (std::size_t idx = 0; idx < total; ++idx) {
      Point p(dim);
      std::size_t rest = idx;
      for (std::size_t i = 0; i < dim; ++i) {
        p[i] = (static_cast<double>(rest % per_axis) + 0.5) / static_cast<double>(per_axis);
        rest /= per_axis;
      }
      pts.push_back(std::move(p));
    }
    return discrete(std::move(pts));
  }

  bool is_discrete() const { return !points_.empty(); }
  std::size_t dim() const { return dim_; }
  const std::vector<Point>& points() const { return points_; }
  const std::vector<double>& weights() const { return weights_; }

  Point sample(Rng& rng) const {
    if (is_discrete()) return points_[categorical_index(weights_, rng.uniform())];
    Point x(dim_);
    for (auto& v : x) v = rng.uniform();
    return x;
  }

 private:
  ContextDistribution() = default;
  std::size_t dim_ = 0;
  std::vector<Point> points_;
  std::vector<double> weights_;
};

// l(x, a) = <f, phi(x)>, f given by its l2 coordinates.
struct LossFunction {
  std::vector<double> coeffs;

  bool operator==(const LossFunction&) const = default;
};

inline double eval_loss(const LossFunction& f, std::span<const double> features) {
  if (f.coeffs.size() != features.size())
    throw std::invalid_argument("eval_loss: dimension mismatch");
  return dot(f.coeffs, features);
}

inline double eval_loss(const LossFunction& f, std::span<const double> x, const MercerKernel& k) {
  return eval_loss(f, k.features(x));
}

inline double l2_norm(std::span<const double> v) { return std::sqrt(dot(v, v)); }

// Rescales v onto the ball of the given radius when it lies outside.
inline void project_to_ball(std::vector<double>& v, double radius) {
  const double n = l2_norm(v);
  if (n > radius && n > 0.0)
    for (auto& c : v) c *= radius / n;
}

// Public interaction history F_{t-1}: what an adaptive adversary may read.
struct History {
  std::vector<Point> contexts;
  std::vector<std::size_t> actions;
  std::vector<double> losses;

  std::size_t rounds() const { return actions.size(); }
  void record(Point x, std::size_t a, double loss) {
    contexts.push_back(std::move(x));
    actions.push_back(a);
    losses.push_back(loss);
  }
};

enum class AdversaryKind { kFixed, kObliviousSequence, kAdaptive, kReplay };

inline const char* to_string(AdversaryKind k) {
  switch (k) {
    case AdversaryKind::kFixed: return "fixed";
    case AdversaryKind::kObliviousSequence: return "oblivious";
    case AdversaryKind::kAdaptive: return "adaptive";
    case AdversaryKind::kReplay: return "replay";
  }
  return "?";
}

struct AdversaryParams {
  double drift = 0.0;      // random-walk step size (oblivious)
  double scale = 1.0;      // radius of the loss ball, <= 1; 0 gives f = 0
  std::size_t horizon = 0; // rounds to pre-draw (oblivious)
};

using LossSequence = std::vector<std::vector<LossFunction>>;  // [round][action]

class Adversary {
 public:
  AdversaryKind kind() const { return kind_; }
  std::size_t num_actions() const { return num_actions_; }

  // Loss functions for round t (1-based). Only the history of rounds < t is
  // consulted; the current context is never an input.
  std::vector<LossFunction> losses(std::size_t t, const History& history) const {
    if (t == 0) throw std::invalid_argument("adversary: rounds are 1-based");
    switch (kind_) {
      case AdversaryKind::kFixed:
        return base_;
      case AdversaryKind::kObliviousSequence:
      case AdversaryKind::kReplay:
        if (t > sequence_.size()) throw std::out_of_range("adversary: round beyond pre-drawn horizon");
        return sequence_[t - 1];
      case AdversaryKind::kAdaptive:
        return adaptive(history);
    }
    return {};
  }

  friend Adversary make_adversary(AdversaryKind, const MercerKernel&, std::size_t, std::uint64_t,
                                  const AdversaryParams&);
  friend Adversary replay_adversary(LossSequence);

 private:
  std::vector<LossFunction> adaptive(const History& h) const {
    if (h.rounds() == 0) return base_;
    std::vector<std::size_t> counts(num_actions_, 0);
    for (auto a : h.actions) ++counts.at(a);
    std::size_t target = 0;
    for (std::size_t a = 1; a < num_actions_; ++a)
      if (counts[a] > counts[target]) target = a;
    // The unit direction maximizing the average loss of `target` over the
    // contexts where it was played.
    std::vector<double> mean(kernel_.feature_dim(), 0.0);
    std::vector<double> phi(kernel_.feature_dim());
    for (std::size_t i = 0; i < h.rounds(); ++i) {
      if (h.actions[i] != target) continue;
      kernel_.features(h.contexts[i], phi);
      for (std::size_t j = 0; j < phi.size(); ++j) mean[j] += phi[j];
    }
    auto out = base_;
    const double n = l2_norm(mean);
    if (n > 0.0) {
      for (auto& v : mean) v *= scale_ / n;
      out[target].coeffs = std::move(mean);
    }
    return out;
  }

  Adversary(const MercerKernel& k) : kernel_(k) {}

  AdversaryKind kind_ = AdversaryKind::kFixed;
  MercerKernel kernel_;
  std::size_t num_actions_ = 0;
  double scale_ = 1.0;
  std::vector<LossFunction> base_;
  LossSequence sequence_;
};

// Uniform draw from the ball of radius `scale` in R^dim.
inline std::vector<double> draw_in_ball(std::size_t dim, double scale, Rng& rng) {
  std::vector<double> v(dim);
  double n2 = 0.0;
  for (auto& c : v) {
    c = rng.normal();
    n2 += c * c;
  }
  const double radius = scale * std::pow(rng.uniform(), 1.0 / static_cast<double>(dim));
  const double n = std::sqrt(n2);
  for (auto& c : v) c = n > 0.0 ? c * radius / n : 0.0;
  return v;
}

inline Adversary make_adversary(AdversaryKind kind, const MercerKernel& kernel,
                                std::size_t num_actions, std::uint64_t seed,
                                const AdversaryParams& params) {
  if (num_actions == 0) throw std::invalid_argument("adversary: K must be >= 1");
  if (!(params.scale >= 0.0 && params.scale <= 1.0))
    throw std::invalid_argument("adversary: scale must lie in [0, 1]");
  if (!(params.drift >= 0.0)) throw std::invalid_argument("adversary: drift must be >= 0");
  if (kind == AdversaryKind::kReplay)
    throw std::invalid_argument("adversary: use replay_adversary for recorded sequences");
  const std::size_t dim = kernel.feature_dim();

  Adversary adv(kernel);
  adv.kind_ = kind;
  adv.num_actions_ = num_actions;
  adv.scale_ = params.scale;
  for (std::size_t a = 0; a < num_actions; ++a) {
    Rng rng = Rng::for_site(seed, 0, a);
    adv.base_.push_back(LossFunction{draw_in_ball(dim, params.scale, rng)});
  }
  if (kind == AdversaryKind::kObliviousSequence) {
    if (params.horizon == 0) throw std::invalid_argument("oblivious adversary needs a horizon");
    adv.sequence_.reserve(params.horizon);
    adv.sequence_.push_back(adv.base_);
    const double step = params.drift / std::sqrt(static_cast<double>(dim));
    for (std::size_t t = 2; t <= params.horizon; ++t) {
      auto next = adv.sequence_.back();
      for (std::size_t a = 0; a < num_actions; ++a) {
        Rng rng = Rng::for_site(seed, t, a);
        for (auto& c : next[a].coeffs) c += step * rng.normal();
        project_to_ball(next[a].coeffs, params.scale);
      }
      adv.sequence_.push_back(std::move(next));
    }
  }
  return adv;
}

// Exact replay of a recorded loss sequence.
inline Adversary replay_adversary(LossSequence sequence) {
  if (sequence.empty() || sequence.front().empty())
    throw std::invalid_argument("replay adversary: empty sequence");
  const std::size_t dim = sequence.front().front().coeffs.size();
  std::vector<double> mu(dim, 0.0);
  Adversary adv(MercerKernel::cosine(mu));
  adv.kind_ = AdversaryKind::kReplay;
  adv.num_actions_ = sequence.front().size();
  adv.base_ = sequence.front();
  adv.sequence_ = std::move(sequence);
  return adv;
}

inline nlohmann::json loss_sequence_to_json(const LossSequence& seq) {
  nlohmann::json rounds = nlohmann::json::array();
  for (const auto& r : seq) {
    nlohmann::json row = nlohmann::json::array();
    for (const auto& f : r) row.push_back(f.coeffs);
    rounds.push_back(std::move(row));
  }
  const std::size_t k = seq.empty() ? 0 : seq.front().size();
  const std::size_t d = (seq.empty() || seq.front().empty()) ? 0 : seq.front().front().coeffs.size();
  return nlohmann::json{{"K", k}, {"D", d}, {"rounds", std::move(rounds)}};
}

inline LossSequence loss_sequence_from_json(const nlohmann::json& j) {
  const auto k = j.at("K").get<std::size_t>();
  const auto d = j.at("D").get<std::size_t>();
  LossSequence seq;
  for (const auto& row : j.at("rounds")) {
    if (row.size() != k) throw std::invalid_argument("loss sequence: wrong action count");
    std::vector<LossFunction> fs;
    for (const auto& f : row) {
      LossFunction lf{f.get<std::vector<double>>()};
      if (lf.coeffs.size() != d) throw std::invalid_argument("loss sequence: wrong dimension");
      fs.push_back(std::move(lf));
    }
    seq.push_back(std::move(fs));
  }
  return seq;
}

}  // namespace kftrl
