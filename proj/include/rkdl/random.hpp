#pragma once

#include <cmath>
#include <cstdint>
#include <random>

#include "rkdl/tensor.hpp"

namespace rkdl {

// Seeded RNG wrapping mt19937_64. Uniform and gaussian draws are derived from
// the raw engine output instead of <random> distributions so streams are
// identical across standard-library implementations.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : engine_(seed) {}

  // [0, 1)
  double uniform() { return double(engine_() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  // standard normal via Box-Muller
  double gaussian() {
    double u1 = 1.0 - uniform();  // (0, 1]
    double u2 = uniform();
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * 3.14159265358979323846 * u2);
  }

  std::uint64_t raw() { return engine_(); }

 private:
  std::mt19937_64 engine_;
};

inline void fill_uniform(Tensor& t, Rng& rng, double lo, double hi) {
  for (std::size_t i = 0; i < t.numel(); ++i) t[i] = rng.uniform(lo, hi);
}

inline void fill_gaussian(Tensor& t, Rng& rng, double stddev) {
  for (std::size_t i = 0; i < t.numel(); ++i) t[i] = stddev * rng.gaussian();
}

}  // namespace rkdl
