#pragma once

#include "rkdl/tensor.hpp"

namespace rkdl {

// Spiking neuron caricature: fast voltage v with cubic self-limiting term,
// slow linear recovery w.
//   v' = v - w - v^3/3 + 0.5
//   w' = 0.040 v - 0.028 w + 0.032
struct FhnRhs {
  Tensor operator()(const Tensor& x) const {
    detail::require(x.numel() == 2, "FhnRhs", "state must have 2 components");
    const double v = x[0], w = x[1];
    Tensor out = x;
    out[0] = v - w - v * v * v / 3.0 + 0.5;
    out[1] = 0.040 * v - 0.028 * w + 0.032;
    return out;
  }
  static constexpr std::size_t dim = 2;
};

// Weakly damped cubic oscillator:
//   x' = -0.1 x^3 + 2 y^3
//   y' = -2 x^3 - 0.1 y^3
struct CubicRhs {
  Tensor operator()(const Tensor& s) const {
    detail::require(s.numel() == 2, "CubicRhs", "state must have 2 components");
    const double x = s[0], y = s[1];
    Tensor out = s;
    out[0] = -0.1 * x * x * x + 2.0 * y * y * y;
    out[1] = -2.0 * x * x * x - 0.1 * y * y * y;
    return out;
  }
  static constexpr std::size_t dim = 2;
};

}  // namespace rkdl
