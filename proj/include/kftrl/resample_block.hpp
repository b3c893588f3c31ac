#pragma once

#include <cmath>
#include <cstddef>
#include <istream>
#include <ostream>
#include <stdexcept>
#include <string>
#include <vector>

#include "json.hpp"
#include "kftrl/mercer_kernel.hpp"

namespace kftrl {

struct Resample {
  Point context;
  std::size_t action = 0;

  bool operator==(const Resample&) const = default;
};

// One round of the data buffer: the played context/action, the observed loss
// and the M context-action pairs drawn for geometric resampling. Actions are
// 0-based. Immutable once appended to a buffer.
struct ResampleBlock {
  std::size_t round = 0;
  Point context;
  std::size_t action = 0;
  double loss = 0.0;
  std::vector<Resample> resamples;

  std::size_t m() const { return resamples.size(); }

  void validate(const MercerKernel& kernel, std::size_t num_actions) const {
    if (!std::isfinite(loss) || std::abs(loss) > 1.0 + 1e-12)
      throw std::invalid_argument("resample block: |observed loss| must be <= 1");
    if (action >= num_actions)
      throw std::invalid_argument("resample block: action out of range");
    kernel.check_point(context);
    for (const auto& r : resamples) {
      if (r.action >= num_actions)
        throw std::invalid_argument("resample block: resample action out of range");
      kernel.check_point(r.context);
    }
  }

  bool operator==(const ResampleBlock&) const = default;
};

using Buffer = std::vector<ResampleBlock>;

// JSON-lines schema: {t, x:[...], a, loss, resamples:[[[...], a], ...]}
inline void to_json(nlohmann::json& j, const ResampleBlock& b) {
  nlohmann::json rs = nlohmann::json::array();
  for (const auto& r : b.resamples) rs.push_back(nlohmann::json::array({r.context, r.action}));
  j = nlohmann::json{{"t", b.round}, {"x", b.context}, {"a", b.action},
                     {"loss", b.loss}, {"resamples", std::move(rs)}};
}

inline void from_json(const nlohmann::json& j, ResampleBlock& b) {
  for (auto it = j.begin(); it != j.end(); ++it) {
    const auto& k = it.key();
    if (k != "t" && k != "x" && k != "a" && k != "loss" && k != "resamples")
      throw std::invalid_argument("buffer entry: unknown key '" + k + "'");
  }
  b.round = j.at("t").get<std::size_t>();
  b.context = j.at("x").get<Point>();
  b.action = j.at("a").get<std::size_t>();
  b.loss = j.at("loss").get<double>();
  b.resamples.clear();
  for (const auto& r : j.at("resamples")) {
    if (!r.is_array() || r.size() != 2)
      throw std::invalid_argument("buffer entry: resample must be [x, a]");
    b.resamples.push_back(Resample{r[0].get<Point>(), r[1].get<std::size_t>()});
  }
}

inline void write_buffer_jsonl(std::ostream& os, const Buffer& buffer) {
  for (const auto& b : buffer) os << nlohmann::json(b).dump() << '\n';
}

inline Buffer read_buffer_jsonl(std::istream& is) {
  Buffer out;
  std::string line;
  while (std::getline(is, line)) {
    if (line.empty()) continue;
    out.push_back(nlohmann::json::parse(line).get<ResampleBlock>());
  }
  return out;
}

}  // namespace kftrl
