#pragma once

#include <complex>
#include <numbers>
#include <vector>

#include "rkdl/tensor.hpp"

namespace rkdl::fft {

inline bool is_power_of_two(std::size_t n) { return n != 0 && (n & (n - 1)) == 0; }

// In-place radix-2 Cooley-Tukey; n must be a power of two.
inline void transform(std::vector<std::complex<double>>& a, bool inverse) {
  const std::size_t n = a.size();
  detail::require(is_power_of_two(n), "fft", "length must be a power of two, got " + std::to_string(n));
  for (std::size_t i = 1, j = 0; i < n; ++i) {
    std::size_t bit = n >> 1;
    for (; j & bit; bit >>= 1) j ^= bit;
    j ^= bit;
    if (i < j) std::swap(a[i], a[j]);
  }
  for (std::size_t len = 2; len <= n; len <<= 1) {
    const double ang = (inverse ? 2.0 : -2.0) * std::numbers::pi / double(len);
    const std::complex<double> wlen(std::cos(ang), std::sin(ang));
    for (std::size_t i = 0; i < n; i += len) {
      std::complex<double> w(1.0, 0.0);
      for (std::size_t j = 0; j < len / 2; ++j) {
        const std::complex<double> u = a[i + j];
        const std::complex<double> v = a[i + j + len / 2] * w;
        a[i + j] = u + v;
        a[i + j + len / 2] = u - v;
        w *= wlen;
      }
    }
  }
  if (inverse) {
    const double s = 1.0 / double(n);
    for (auto& x : a) x *= s;
  }
}

inline std::vector<std::complex<double>> forward(const std::vector<double>& x) {
  std::vector<std::complex<double>> a(x.begin(), x.end());
  transform(a, false);
  return a;
}

// inverse of a spectrum with (approximate) conjugate symmetry; returns the real part
inline std::vector<double> inverse_real(std::vector<std::complex<double>> spec) {
  transform(spec, true);
  std::vector<double> out(spec.size());
  for (std::size_t i = 0; i < spec.size(); ++i) out[i] = spec[i].real();
  return out;
}

}  // namespace rkdl::fft
