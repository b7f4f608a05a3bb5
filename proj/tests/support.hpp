#pragma once

#include <cmath>
#include <cstdint>
#include <random>
#include <vector>

#include "lstmt/model.hpp"

namespace lstmt::test {

inline Tensor random_tensor(Shape shape, std::mt19937_64& rng, double lo = -1.0, double hi = 1.0) {
  Tensor t(std::move(shape));
  std::uniform_real_distribution<double> u(lo, hi);
  for (auto& x : t.data()) x = u(rng);
  return t;
}

inline ModelConfig tiny_config(std::size_t d_v = 3, std::size_t d_h = 4, std::size_t d_a = 3, std::size_t d_e = 2,
                               std::size_t vocab = 5) {
  ModelConfig c;
  c.d_v = d_v;
  c.d_h = d_h;
  c.d_a = d_a;
  c.d_e = d_e;
  c.vocab_size = vocab;
  c.max_caption_len = 8;
  return c;
}

/// Every parameter uniform in [-scale, scale]; larger than the init range so
/// that decisions are not all near-ties.
inline CaptionerParams random_params(const ModelConfig& c, std::mt19937_64& rng, double scale = 1.0) {
  CaptionerParams p = CaptionerParams::zeros(c);
  std::uniform_real_distribution<double> u(-scale, scale);
  p.for_each([&](const char*, Tensor& t) {
    for (auto& x : t.data()) x = u(rng);
  });
  return p;
}

inline FeatureSequence random_features(std::size_t k, std::size_t d_v, std::mt19937_64& rng,
                                       Stream s = Stream::rgb) {
  return FeatureSequence{"v", s, random_tensor({k, d_v}, rng)};
}

inline double rel_err(double a, double b) { return std::abs(a - b) / std::max({1e-8, std::abs(a), std::abs(b)}); }

}  // namespace lstmt::test
