#pragma once

#include <cmath>
#include <complex>
#include <functional>
#include <numbers>
#include <vector>

#include "rkdl/fft.hpp"
#include "rkdl/tensor.hpp"

namespace rkdl {

// Uniform periodic grid on [left, left + length): point j = left + j length/n.
struct Grid1d {
  std::size_t n = 0;
  double left = 0.0;
  double length = 0.0;

  std::vector<double> points() const {
    std::vector<double> p(n);
    for (std::size_t j = 0; j < n; ++j) p[j] = left + length * double(j) / double(n);
    return p;
  }

  // signed wavenumbers in FFT order: 0, 1, ..., n/2, -(n/2-1), ..., -1 times 2*pi/length
  std::vector<double> wavenumbers() const {
    std::vector<double> k(n);
    const double unit = 2.0 * std::numbers::pi / length;
    for (std::size_t j = 0; j < n; ++j) {
      const double idx = (j <= n / 2) ? double(j) : double(j) - double(n);
      k[j] = unit * idx;
    }
    return k;
  }

  double spacing() const { return length / double(n); }
};

// Diagonal-linear spectral problem u_t = L u + N(u) in Fourier space.
// nonlinear maps the spectrum to the spectrum of the nonlinear term.
struct SpectralProblem {
  std::vector<double> linear;  // L_k, real
  std::function<std::vector<std::complex<double>>(const std::vector<std::complex<double>>&)> nonlinear;
};

namespace detail {

// Coefficients phi1..phi3-style weights for one ETDRK4 step of size h,
// evaluated stably by averaging over a contour of 32 points around each L_k.
struct Etdrk4Coeffs {
  std::vector<double> E, E2, Q, f1, f2, f3;

  Etdrk4Coeffs(const std::vector<double>& L, double h) {
    const std::size_t n = L.size();
    E.resize(n);
    E2.resize(n);
    Q.resize(n);
    f1.resize(n);
    f2.resize(n);
    f3.resize(n);
    const int M = 32;
    for (std::size_t i = 0; i < n; ++i) {
      E[i] = std::exp(h * L[i]);
      E2[i] = std::exp(0.5 * h * L[i]);
      std::complex<double> q(0.0), a(0.0), b(0.0), c(0.0);
      for (int j = 0; j < M; ++j) {
        const double th = std::numbers::pi * (double(j) + 0.5) / double(M);
        const std::complex<double> r(std::cos(th), std::sin(th));
        const std::complex<double> z = h * L[i] + r;
        const std::complex<double> ez = std::exp(z);
        q += (std::exp(z / 2.0) - 1.0) / z;
        a += (-4.0 - z + ez * (4.0 - 3.0 * z + z * z)) / (z * z * z);
        b += (2.0 + z + ez * (-2.0 + z)) / (z * z * z);
        c += (-4.0 - 3.0 * z - z * z + ez * (4.0 - z)) / (z * z * z);
      }
      const double inv_m = 1.0 / double(M);
      Q[i] = h * (q * inv_m).real();
      f1[i] = h * (a * inv_m).real();
      f2[i] = h * (b * inv_m).real();
      f3[i] = h * (c * inv_m).real();
    }
  }
};

}  // namespace detail

struct SpectralSolveOptions {
  std::size_t substeps = 0;  // internal steps per output step; 0 picks ceil(dt / 0.05)
  double blowup = 1e8;
};

// Integrates the spectral problem with the exponential time differencing
// fourth-order scheme. Returns the real-space trajectory, one row per output
// time including the initial state: shape (steps + 1, n).
inline Tensor solve_spectral(const SpectralProblem& prob, const Tensor& u0, double dt,
                             std::size_t steps, SpectralSolveOptions opt = {}) {
  const std::size_t n = prob.linear.size();
  detail::require(u0.numel() == n, "solve_spectral", "initial state size does not match the grid");
  detail::require(dt > 0.0, "solve_spectral", "dt must be positive");
  std::size_t sub = opt.substeps;
  if (sub == 0) sub = std::size_t(std::ceil(dt / 0.05 - 1e-12));
  if (sub == 0) sub = 1;
  const double h = dt / double(sub);

  detail::Etdrk4Coeffs co(prob.linear, h);
  std::vector<std::complex<double>> v(n);
  for (std::size_t j = 0; j < n; ++j) v[j] = u0[j];
  fft::transform(v, false);

  Tensor out({steps + 1, n});
  std::copy(u0.data(), u0.data() + n, out.data());

  std::vector<std::complex<double>> a(n), b(n), c(n);
  for (std::size_t s = 1; s <= steps; ++s) {
    for (std::size_t k = 0; k < sub; ++k) {
      const auto Nv = prob.nonlinear(v);
      for (std::size_t j = 0; j < n; ++j) a[j] = co.E2[j] * v[j] + co.Q[j] * Nv[j];
      const auto Na = prob.nonlinear(a);
      for (std::size_t j = 0; j < n; ++j) b[j] = co.E2[j] * v[j] + co.Q[j] * Na[j];
      const auto Nb = prob.nonlinear(b);
      for (std::size_t j = 0; j < n; ++j) c[j] = co.E2[j] * a[j] + co.Q[j] * (2.0 * Nb[j] - Nv[j]);
      const auto Nc = prob.nonlinear(c);
      for (std::size_t j = 0; j < n; ++j)
        v[j] = co.E[j] * v[j] + co.f1[j] * Nv[j] + co.f2[j] * 2.0 * (Na[j] + Nb[j]) + co.f3[j] * Nc[j];
    }
    auto u = fft::inverse_real(v);
    double m = 0.0;
    for (std::size_t j = 0; j < n; ++j) {
      out.at(s, j) = u[j];
      m = std::max(m, std::abs(u[j]));
    }
    detail::require(m <= opt.blowup, "solve_spectral",
                    "solution blew up at output step " + std::to_string(s));
  }
  return out;
}

namespace detail {

// spectrum of the nonlinear term with 2/3-rule dealiasing; mode 0 of the
// result is exactly zero because of the ik factor, so the spatial mean of the
// solution is conserved to the bit by the time stepper
inline std::vector<std::complex<double>> quadratic_flux(const std::vector<std::complex<double>>& v,
                                                        const std::vector<double>& k,
                                                        double prefactor) {
  const std::size_t n = v.size();
  std::vector<std::complex<double>> u = v;
  fft::transform(u, true);
  for (std::size_t j = 0; j < n; ++j) {
    const double r = u[j].real();
    u[j] = r * r;
  }
  fft::transform(u, false);
  const double kmax = 2.0 / 3.0 * std::abs(k[n / 2]);
  for (std::size_t j = 0; j < n; ++j) {
    if (std::abs(k[j]) > kmax) {
      u[j] = 0.0;
    } else {
      u[j] *= std::complex<double>(0.0, prefactor * k[j]);
    }
  }
  return u;
}

}  // namespace detail

// u_t = mu u_xx - (u^2/2)_x, periodic
inline SpectralProblem burgers_problem(const Grid1d& grid, double mu) {
  SpectralProblem p;
  const auto k = grid.wavenumbers();
  p.linear.resize(grid.n);
  for (std::size_t j = 0; j < grid.n; ++j) p.linear[j] = -mu * k[j] * k[j];
  p.nonlinear = [k](const std::vector<std::complex<double>>& v) {
    return detail::quadratic_flux(v, k, -0.5);
  };
  return p;
}

// u_t = -u u_x - u_xx - u_xxxx, periodic (the Kuramoto-Sivashinsky flow)
inline SpectralProblem ks_problem(const Grid1d& grid) {
  SpectralProblem p;
  const auto k = grid.wavenumbers();
  p.linear.resize(grid.n);
  for (std::size_t j = 0; j < grid.n; ++j) {
    const double k2 = k[j] * k[j];
    p.linear[j] = k2 - k2 * k2;
  }
  p.nonlinear = [k](const std::vector<std::complex<double>>& v) {
    return detail::quadratic_flux(v, k, -0.5);
  };
  return p;
}

}  // namespace rkdl
