#pragma once

// Umbrella header: joint denoising + dynamics learning from noisy trajectory
// or field measurements, coupling an implicit sinusoidal representation to a
// learned vector field through a fourth-order Runge-Kutta consistency loss.

namespace rkdl {
inline constexpr const char* kVersion = "1.0.0";
}

#include "rkdl/checkpoint.hpp"
#include "rkdl/constraint_loss.hpp"
#include "rkdl/csv.hpp"
#include "rkdl/dataset.hpp"
#include "rkdl/dual.hpp"
#include "rkdl/evaluate.hpp"
#include "rkdl/fft.hpp"
#include "rkdl/gradcheck.hpp"
#include "rkdl/integrators.hpp"
#include "rkdl/networks.hpp"
#include "rkdl/odes.hpp"
#include "rkdl/pde_solvers.hpp"
#include "rkdl/presets.hpp"
#include "rkdl/random.hpp"
#include "rkdl/tape.hpp"
#include "rkdl/tensor.hpp"
#include "rkdl/trainer.hpp"
