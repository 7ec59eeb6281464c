#include <cmath>
#include <complex>
#include <numbers>

#include "catch_amalgamated.hpp"
#include "rkdl/integrators.hpp"
#include "rkdl/pde_solvers.hpp"

using rkdl::Grid1d;
using rkdl::Tensor;

namespace {

// real-space right-hand side of a spectral problem, for cross-checking the
// exponential integrator against plain RK4 time stepping
Tensor spectral_rhs(const rkdl::SpectralProblem& prob, const Tensor& u) {
  const std::size_t n = u.numel();
  std::vector<std::complex<double>> v(n);
  for (std::size_t j = 0; j < n; ++j) v[j] = u[j];
  rkdl::fft::transform(v, false);
  auto nl = prob.nonlinear(v);
  for (std::size_t j = 0; j < n; ++j) nl[j] += prob.linear[j] * v[j];
  const auto r = rkdl::fft::inverse_real(nl);
  Tensor out({n});
  for (std::size_t j = 0; j < n; ++j) out[j] = r[j];
  return out;
}

double mass(const Tensor& sol, std::size_t row, double spacing) {
  double m = 0.0;
  for (std::size_t j = 0; j < sol.dim(1); ++j) m += sol.at(row, j);
  return m * spacing;
}

}  // namespace

TEST_CASE("grid points and wavenumbers") {
  Grid1d g{8, -4.0, 8.0};
  const auto p = g.points();
  CHECK(p[0] == -4.0);
  CHECK(p[4] == 0.0);
  CHECK(g.spacing() == 1.0);
  const auto k = g.wavenumbers();
  const double unit = 2.0 * std::numbers::pi / 8.0;
  CHECK(k[0] == 0.0);
  CHECK(k[1] == Catch::Approx(unit));
  CHECK(k[4] == Catch::Approx(4.0 * unit));
  CHECK(k[7] == Catch::Approx(-unit));
}

TEST_CASE("pure diffusion decays each mode at its analytic rate") {
  Grid1d g{64, 0.0, 2.0 * std::numbers::pi};
  rkdl::SpectralProblem heat;
  const auto k = g.wavenumbers();
  heat.linear.resize(g.n);
  for (std::size_t j = 0; j < g.n; ++j) heat.linear[j] = -k[j] * k[j];
  heat.nonlinear = [n = g.n](const std::vector<std::complex<double>>& v) {
    return std::vector<std::complex<double>>(n, 0.0);
  };
  const auto pts = g.points();
  Tensor u0({g.n});
  for (std::size_t j = 0; j < g.n; ++j) u0[j] = std::sin(3.0 * pts[j]) + 0.5 * std::cos(pts[j]);
  const double t_end = 0.3;
  const auto sol = rkdl::solve_spectral(heat, u0, t_end, 1, {.substeps = 4});
  for (std::size_t j = 0; j < g.n; ++j) {
    const double want = std::exp(-9.0 * t_end) * std::sin(3.0 * pts[j]) +
                        0.5 * std::exp(-t_end) * std::cos(pts[j]);
    CHECK(sol.at(1, j) == Catch::Approx(want).margin(1e-9));
  }
}

TEST_CASE("advection-diffusion solution agrees with direct RK4 time stepping") {
  Grid1d g{64, -8.0, 16.0};
  auto prob = rkdl::burgers_problem(g, 0.1);
  const auto pts = g.points();
  Tensor u0({g.n});
  for (std::size_t j = 0; j < g.n; ++j) u0[j] = std::exp(-(pts[j] + 2.0) * (pts[j] + 2.0));

  const auto sol = rkdl::solve_spectral(prob, u0, 1.0, 1, {.substeps = 100});

  auto rhs = [&](const Tensor& u) { return spectral_rhs(prob, u); };
  const auto ref = rkdl::integrate(rhs, u0, {0.0, 1.0}, {.max_step = 0.01});
  for (std::size_t j = 0; j < g.n; ++j)
    CHECK(sol.at(1, j) == Catch::Approx(ref.at(1, j)).margin(1e-7));
}

TEST_CASE("chaotic flow solution agrees with direct RK4 on a small grid") {
  Grid1d g{32, 0.0, 32.0 * std::numbers::pi};
  auto prob = rkdl::ks_problem(g);
  const auto pts = g.points();
  Tensor u0({g.n});
  for (std::size_t j = 0; j < g.n; ++j)
    u0[j] = std::cos(pts[j] / 16.0) * (1.0 + std::sin(pts[j] / 16.0));

  const auto sol = rkdl::solve_spectral(prob, u0, 1.0, 2, {.substeps = 20});
  auto rhs = [&](const Tensor& u) { return spectral_rhs(prob, u); };
  const auto ref = rkdl::integrate(rhs, u0, {0.0, 1.0, 2.0}, {.max_step = 0.005});
  for (std::size_t j = 0; j < g.n; ++j)
    CHECK(sol.at(2, j) == Catch::Approx(ref.at(2, j)).margin(1e-6));
}

TEST_CASE("both flows conserve total mass to rounding") {
  SECTION("advection-diffusion") {
    Grid1d g{128, -8.0, 16.0};
    auto prob = rkdl::burgers_problem(g, 0.1);
    const auto pts = g.points();
    Tensor u0({g.n});
    for (std::size_t j = 0; j < g.n; ++j) u0[j] = std::exp(-(pts[j] + 2.0) * (pts[j] + 2.0));
    const auto sol = rkdl::solve_spectral(prob, u0, 0.1, 100);
    CHECK(std::abs(mass(sol, 100, g.spacing()) - mass(sol, 0, g.spacing())) < 1e-10);
  }
  SECTION("chaotic flow") {
    Grid1d g{128, 0.0, 32.0 * std::numbers::pi};
    auto prob = rkdl::ks_problem(g);
    const auto pts = g.points();
    Tensor u0({g.n});
    for (std::size_t j = 0; j < g.n; ++j)
      u0[j] = std::cos(pts[j] / 16.0) * (1.0 + std::sin(pts[j] / 16.0));
    const auto sol = rkdl::solve_spectral(prob, u0, 0.4, 60, {.substeps = 16});
    CHECK(std::abs(mass(sol, 60, g.spacing()) - mass(sol, 0, g.spacing())) < 1e-10);
    CHECK(sol.max_abs() < 10.0);
  }
}

TEST_CASE("solver output shape and initial row") {
  Grid1d g{16, 0.0, 2.0 * std::numbers::pi};
  auto prob = rkdl::burgers_problem(g, 0.5);
  Tensor u0({g.n});
  const auto pts = g.points();
  for (std::size_t j = 0; j < g.n; ++j) u0[j] = std::sin(pts[j]);
  const auto sol = rkdl::solve_spectral(prob, u0, 0.05, 3);
  CHECK(sol.rows() == 4);
  CHECK(sol.cols() == 16);
  for (std::size_t j = 0; j < g.n; ++j) CHECK(sol.at(0, j) == u0[j]);
}

TEST_CASE("solver rejects mismatched sizes") {
  Grid1d g{16, 0.0, 1.0};
  auto prob = rkdl::burgers_problem(g, 0.1);
  CHECK_THROWS_AS(rkdl::solve_spectral(prob, Tensor({8}), 0.1, 1), std::runtime_error);
}
