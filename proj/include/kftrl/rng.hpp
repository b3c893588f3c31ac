#pragma once

#include <cstdint>
#include <random>
#include <span>

namespace kftrl {

// Named random streams. Each draw site derives its own generator from
// (stream seed, round, k) so that no two purposes ever share state.
enum class Stream : std::uint64_t {
  kPolicy = 1,
  kResample = 2,
  kAdversary = 3,
  kContext = 4,
  kEval = 5,
};

inline constexpr std::uint64_t splitmix64(std::uint64_t z) noexcept {
  z += 0x9e3779b97f4a7c15ULL;
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

inline constexpr std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t a,
                                        std::uint64_t b = 0,
                                        std::uint64_t c = 0) noexcept {
  std::uint64_t h = splitmix64(seed);
  h = splitmix64(h ^ a);
  h = splitmix64(h ^ (b + 0x632be59bd9b4e019ULL));
  h = splitmix64(h ^ (c + 0x85157af5ULL));
  return h;
}

// Per-stream seed derived from a single master seed.
inline constexpr std::uint64_t derive_stream_seed(std::uint64_t master,
                                                  Stream s) noexcept {
  return mix_seed(master, static_cast<std::uint64_t>(s));
}

class Rng {
 public:
  using engine_type = std::mt19937_64;

  explicit Rng(std::uint64_t seed) : engine_(seed) {}

  // Generator for draw site (round, k) of a stream.
  static Rng for_site(std::uint64_t stream_seed, std::uint64_t round,
                      std::uint64_t k = 0) {
    return Rng(mix_seed(stream_seed, round, k));
  }

  // Uniform in [0, 1) with 53 random bits.
  double uniform() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  double normal() { return normal_(engine_); }

  std::uint64_t bits() { return engine_(); }

  // Uniform integer in [0, n).
  std::size_t index(std::size_t n) {
    return std::uniform_int_distribution<std::size_t>(0, n - 1)(engine_);
  }

  engine_type& engine() { return engine_; }

 private:
  engine_type engine_;
  std::normal_distribution<double> normal_{0.0, 1.0};
};

// Inverse-CDF categorical draw for a uniform u in [0, 1). Falls back to the
// last index with positive mass when rounding leaves u above the total.
inline std::size_t categorical_index(std::span<const double> probs, double u) {
  double acc = 0.0;
  std::size_t last = 0;
  for (std::size_t i = 0; i < probs.size(); ++i) {
    if (probs[i] <= 0.0) continue;
    last = i;
    acc += probs[i];
    if (u < acc) return i;
  }
  return last;
}

}  // namespace kftrl
