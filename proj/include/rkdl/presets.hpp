#pragma once

#include <numbers>
#include <string>
#include <vector>

#include "rkdl/dataset.hpp"
#include "rkdl/networks.hpp"
#include "rkdl/odes.hpp"
#include "rkdl/pde_solvers.hpp"
#include "rkdl/trainer.hpp"

namespace rkdl {

enum class ExampleKind { ode, pde };

// One ready-to-run benchmark configuration: data generation recipe plus the
// network sizes and training hyperparameters used for it.
struct ExamplePreset {
  std::string name;
  ExampleKind kind = ExampleKind::ode;

  ImplicitSineConfig implicit;
  ResidualMlpConfig mlp;     // ode dynamics
  ResidualConv1dConfig conv;  // pde dynamics

  // ode data
  std::size_t samples = 0;
  double t0 = 0.0, t1 = 0.0;
  Tensor x0;

  // pde data
  Grid1d grid;
  double dt = 0.0;
  std::size_t steps = 0;
  double viscosity = 0.0;  // advection-diffusion preset only

  TrainConfig train;
};

inline std::vector<std::string> preset_names() { return {"fhn", "cubic", "burgers", "ks"}; }

inline ExamplePreset preset(const std::string& name) {
  ExamplePreset p;
  p.name = name;
  p.train.epochs = 15000;
  p.train.lr_implicit = 5e-4;
  p.train.lr_dynamics = 1e-3;
  p.train.weight_decay = 1e-4;
  if (name == "fhn") {
    p.kind = ExampleKind::ode;
    p.implicit = {1, 2, 20, 4, 30.0};
    p.mlp = {2, 2, 20, 4};
    p.samples = 4000;
    p.t0 = 0.0;
    p.t1 = 400.0;
    p.x0 = Tensor::vector({2.0, 0.0});
    p.train.weights = {1.0, 1.0};
    return p;
  }
  if (name == "cubic") {
    p.kind = ExampleKind::ode;
    p.implicit = {1, 2, 20, 4, 30.0};
    p.mlp = {2, 2, 20, 4};
    p.samples = 2500;
    p.t0 = 0.0;
    p.t1 = 10.0;
    p.x0 = Tensor::vector({2.0, 0.0});
    p.train.weights = {1.0, 0.05};
    return p;
  }
  if (name == "burgers") {
    p.kind = ExampleKind::pde;
    p.implicit = {2, 1, 10, 4, 30.0};
    p.conv = {8, 4, 3};
    p.grid = Grid1d{256, -8.0, 16.0};
    p.dt = 0.1;
    p.steps = 100;
    p.viscosity = 0.1;
    p.train.weights = {1.0, 1.0};
    return p;
  }
  if (name == "ks") {
    p.kind = ExampleKind::pde;
    p.implicit = {2, 1, 50, 4, 30.0};
    p.conv = {16, 4, 3};
    p.grid = Grid1d{1024, 0.0, 32.0 * std::numbers::pi};
    p.dt = 0.4;
    p.steps = 250;
    p.train.weights = {1.0, 1.0};
    return p;
  }
  detail::fail("preset", "unknown example '" + name + "' (have fhn, cubic, burgers, ks)");
}

inline Tensor preset_initial_field(const ExamplePreset& p) {
  detail::require(p.kind == ExampleKind::pde, "preset_initial_field", "not a field preset");
  const auto pts = p.grid.points();
  Tensor u0({p.grid.n});
  if (p.name == "burgers") {
    for (std::size_t j = 0; j < p.grid.n; ++j)
      u0[j] = std::exp(-(pts[j] + 2.0) * (pts[j] + 2.0));
  } else {
    for (std::size_t j = 0; j < p.grid.n; ++j)
      u0[j] = std::cos(pts[j] / 16.0) * (1.0 + std::sin(pts[j] / 16.0));
  }
  return u0;
}

inline SpectralProblem preset_problem(const ExamplePreset& p) {
  detail::require(p.kind == ExampleKind::pde, "preset_problem", "not a field preset");
  if (p.name == "burgers") return burgers_problem(p.grid, p.viscosity);
  return ks_problem(p.grid);
}

inline OdeDataset preset_ode_dataset(const ExamplePreset& p, NoiseSpec noise, std::uint64_t seed) {
  detail::require(p.kind == ExampleKind::ode, "preset_ode_dataset", "not a trajectory preset");
  if (p.name == "fhn") return make_ode_dataset(FhnRhs{}, p.x0, p.t0, p.t1, p.samples, noise, seed);
  return make_ode_dataset(CubicRhs{}, p.x0, p.t0, p.t1, p.samples, noise, seed);
}

inline PdeDataset preset_pde_dataset(const ExamplePreset& p, NoiseSpec noise, std::uint64_t seed) {
  return make_pde_dataset(preset_problem(p), preset_initial_field(p), p.grid, p.dt, p.steps, noise,
                          seed);
}

}  // namespace rkdl
