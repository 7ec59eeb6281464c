#pragma once

#include <cmath>
#include <vector>

#include "rkdl/dataset.hpp"
#include "rkdl/dual.hpp"
#include "rkdl/integrators.hpp"
#include "rkdl/networks.hpp"
#include "rkdl/tape.hpp"

namespace rkdl {

struct LossWeights {
  double rk = 1.0;
  double grad = 1.0;
};

struct LossTerms {
  Var total, mse, rk, grad;
};

struct LossValues {
  double total = 0.0, mse = 0.0, rk = 0.0, grad = 0.0;

  bool finite() const {
    return std::isfinite(total) && std::isfinite(mse) && std::isfinite(rk) && std::isfinite(grad);
  }
};

inline LossValues read_loss(const LossTerms& t) {
  return {t.total.value()[0], t.mse.value()[0], t.rk.value()[0], t.grad.value()[0]};
}

namespace detail {

// per-pair step sizes broadcast across the state shape, constant on the tape
inline Tensor pair_steps(const std::vector<double>& times, std::vector<std::size_t> state_shape) {
  const std::size_t pairs = times.size() - 1;
  state_shape[0] = pairs;
  Tensor h(state_shape);
  const std::size_t stride = h.numel() / pairs;
  for (std::size_t i = 0; i < pairs; ++i) {
    const double hi = times[i + 1] - times[i];
    double* row = h.data() + i * stride;
    for (std::size_t k = 0; k < stride; ++k) row[k] = hi;
  }
  return h;
}

inline bool identity_selection(const std::vector<std::size_t>& sel, std::size_t d) {
  if (sel.size() != d) return false;
  for (std::size_t c = 0; c < d; ++c)
    if (sel[c] != c) return false;
  return true;
}

}  // namespace detail

// Loss over noisy trajectory measurements:
//   data term      mean over samples of |x_hat(t_i) - y_i|^2
//   step term      mean of |RK4(g, x_hat(t_i), h_i) - x_hat(t_{i+1})|^2
//   gradient term  mean of |d/dt x_hat(t_i) - g(x_hat(t_i))|^2
// All three divide by the sample count M (the step term runs over M-1 pairs).
// The time derivative is the input tangent of the implicit network scaled by
// the time map's jacobian, so it stays differentiable in the parameters.
template <class DynNet>
LossTerms build_ode_loss(Tape& t, const ImplicitSineNet& implicit, const std::vector<Var>& pi,
                         DynNet& dyn, const std::vector<Var>& pd, const OdeDataset& ds,
                         const InputTransform& tf, LossWeights w) {
  const std::size_t M = ds.size();
  detail::require(M >= 2, "build_ode_loss", "need at least two measurements");
  const std::size_t d = ds.channels();

  Tensor tin({M, 1});
  Tensor tdot({M, 1});
  for (std::size_t i = 0; i < M; ++i) {
    tin.at(i, 0) = tf.map(0, ds.times[i]);
    tdot.at(i, 0) = tf.jacobian(0);
  }
  DualVar xhat = implicit.forward(t, pi, dual_leaf(t, std::move(tin), std::move(tdot)));

  const double inv_m = 1.0 / double(M);

  Var mse{};
  if (detail::identity_selection(ds.observed, d)) {
    Var diff = t.sub(xhat.primal, t.constant(ds.noisy));
    mse = t.scale(t.sum(t.square(diff)), inv_m);
  } else {
    Tensor sel({M, ds.observed.size()});
    for (std::size_t i = 0; i < M; ++i)
      for (std::size_t j = 0; j < ds.observed.size(); ++j)
        sel.at(i, j) = ds.noisy.at(i, ds.observed[j]);
    Var diff = t.sub(t.gather_cols(xhat.primal, ds.observed), t.constant(std::move(sel)));
    mse = t.scale(t.sum(t.square(diff)), inv_m);
  }

  Var prev = t.slice_rows(xhat.primal, 0, M - 1);
  Var next = t.slice_rows(xhat.primal, 1, M);
  Var h = t.constant(detail::pair_steps(ds.times, {M, d}));
  auto field = [&](Var s) { return dyn.forward(t, pd, s); };
  Var stepped = rk4_step(field, prev, h);
  Var rk = t.scale(t.sum(t.square(t.sub(stepped, next))), inv_m);

  Var gx = dyn.forward(t, pd, xhat.primal);
  Var grad = t.scale(t.sum(t.square(t.sub(xhat.tangent, gx))), inv_m);

  Var total = t.add(mse, t.add(t.scale(rk, w.rk), t.scale(grad, w.grad)));
  return {total, mse, rk, grad};
}

// Single-measurement pieces of the same three terms: the data and derivative
// residuals at index i, plus the step residual of the pair (i, i+1) while one
// exists. Squared norms stay unscaled, so their mean over one pass of the
// data matches the full-set terms above. The field evaluation at x_hat(t_i)
// serves as both the gradient-term estimate and the first integration stage.
template <class DynNet>
LossTerms build_ode_sample_loss(Tape& t, const ImplicitSineNet& implicit,
                                const std::vector<Var>& pi, DynNet& dyn,
                                const std::vector<Var>& pd, const OdeDataset& ds,
                                const InputTransform& tf, LossWeights w, std::size_t i) {
  const std::size_t M = ds.size();
  detail::require(i < M, "build_ode_sample_loss", "sample index out of range");
  const std::size_t d = ds.channels();
  const bool pair = i + 1 < M;
  const std::size_t rows = pair ? 2 : 1;

  Tensor tin({rows, 1});
  Tensor tdot({rows, 1});
  for (std::size_t r = 0; r < rows; ++r) {
    tin.at(r, 0) = tf.map(0, ds.times[i + r]);
    tdot.at(r, 0) = tf.jacobian(0);
  }
  DualVar xhat = implicit.forward(t, pi, dual_leaf(t, std::move(tin), std::move(tdot)));
  Var xi = t.slice_rows(xhat.primal, 0, 1);

  Var mse{};
  if (detail::identity_selection(ds.observed, d)) {
    Tensor y({1, d});
    for (std::size_t c = 0; c < d; ++c) y.at(0, c) = ds.noisy.at(i, c);
    mse = t.sum(t.square(t.sub(xi, t.constant(std::move(y)))));
  } else {
    Tensor y({1, ds.observed.size()});
    for (std::size_t j = 0; j < ds.observed.size(); ++j)
      y.at(0, j) = ds.noisy.at(i, ds.observed[j]);
    mse = t.sum(t.square(t.sub(t.gather_cols(xi, ds.observed), t.constant(std::move(y)))));
  }

  auto field = [&](Var s) { return dyn.forward(t, pd, s); };
  Var gi = field(xi);
  Var grad = t.sum(t.square(t.sub(t.slice_rows(xhat.tangent, 0, 1), gi)));

  Var rk{};
  if (pair) {
    Var stepped = rk4_step_from(field, xi, ds.times[i + 1] - ds.times[i], gi);
    rk = t.sum(t.square(t.sub(stepped, t.slice_rows(xhat.primal, 1, 2))));
  } else {
    rk = t.constant(Tensor::scalar(0.0));
  }

  Var total = t.add(mse, t.add(t.scale(rk, w.rk), t.scale(grad, w.grad)));
  return {total, mse, rk, grad};
}

// Same three terms for field snapshots. The implicit network maps (t, zeta)
// lattice points to the field value; snapshots are its rows reshaped to
// (T, 1, S) so the convolutional dynamics sees one channel per snapshot.
// Every term divides by the snapshot count T.
inline LossTerms build_pde_loss(Tape& t, const ImplicitSineNet& implicit,
                                const std::vector<Var>& pi, ResidualConv1d& dyn,
                                const std::vector<Var>& pd, const PdeDataset& ds,
                                const InputTransform& tf, LossWeights w) {
  const std::size_t T = ds.snapshots();
  const std::size_t S = ds.grid.n;
  detail::require(T >= 2, "build_pde_loss", "need at least two snapshots");

  const auto pts = ds.grid.points();
  Tensor in({T * S, 2});
  Tensor din({T * S, 2});
  for (std::size_t i = 0; i < T; ++i)
    for (std::size_t j = 0; j < S; ++j) {
      in.at(i * S + j, 0) = tf.map(0, ds.times[i]);
      in.at(i * S + j, 1) = tf.map(1, pts[j]);
      din.at(i * S + j, 0) = tf.jacobian(0);
      din.at(i * S + j, 1) = 0.0;
    }
  DualVar uhat = implicit.forward(t, pi, dual_leaf(t, std::move(in), std::move(din)));

  const double inv_t = 1.0 / double(T);

  Var diff = t.sub(uhat.primal, t.constant(ds.noisy.reshaped({T * S, 1})));
  Var mse = t.scale(t.sum(t.square(diff)), inv_t);

  Var U = t.reshape(uhat.primal, {T, 1, S});
  Var prev = t.slice_rows(U, 0, T - 1);
  Var next = t.slice_rows(U, 1, T);
  Var h = t.constant(detail::pair_steps(ds.times, {T, 1, S}));
  auto field = [&](Var s) { return dyn.forward(t, pd, s); };
  Var stepped = rk4_step(field, prev, h);
  Var rk = t.scale(t.sum(t.square(t.sub(stepped, next))), inv_t);

  Var udot = t.reshape(uhat.tangent, {T, 1, S});
  Var gu = dyn.forward(t, pd, U);
  Var grad = t.scale(t.sum(t.square(t.sub(udot, gu))), inv_t);

  Var total = t.add(mse, t.add(t.scale(rk, w.rk), t.scale(grad, w.grad)));
  return {total, mse, rk, grad};
}

// Single-snapshot pieces of the snapshot loss, mirroring the one-measurement
// variant above: data and derivative residuals of snapshot i, step residual
// of the pair (i, i+1) while one exists, raw squared norms throughout.
inline LossTerms build_pde_sample_loss(Tape& t, const ImplicitSineNet& implicit,
                                       const std::vector<Var>& pi, ResidualConv1d& dyn,
                                       const std::vector<Var>& pd, const PdeDataset& ds,
                                       const InputTransform& tf, LossWeights w, std::size_t i) {
  const std::size_t T = ds.snapshots();
  const std::size_t S = ds.grid.n;
  detail::require(i < T, "build_pde_sample_loss", "sample index out of range");
  const bool pair = i + 1 < T;
  const std::size_t rows = pair ? 2 : 1;

  const auto pts = ds.grid.points();
  Tensor in({rows * S, 2});
  Tensor din({rows * S, 2});
  for (std::size_t r = 0; r < rows; ++r)
    for (std::size_t j = 0; j < S; ++j) {
      in.at(r * S + j, 0) = tf.map(0, ds.times[i + r]);
      in.at(r * S + j, 1) = tf.map(1, pts[j]);
      din.at(r * S + j, 0) = tf.jacobian(0);
      din.at(r * S + j, 1) = 0.0;
    }
  DualVar uhat = implicit.forward(t, pi, dual_leaf(t, std::move(in), std::move(din)));

  Tensor y({S, 1});
  for (std::size_t j = 0; j < S; ++j) y.at(j, 0) = ds.noisy.at(i, j);
  Var mse = t.sum(t.square(t.sub(t.slice_rows(uhat.primal, 0, S), t.constant(std::move(y)))));

  Var U = t.reshape(uhat.primal, {rows, 1, S});
  Var ui = t.slice_rows(U, 0, 1);
  auto field = [&](Var s) { return dyn.forward(t, pd, s); };
  Var gi = field(ui);
  Var udot = t.reshape(t.slice_rows(uhat.tangent, 0, S), {1, 1, S});
  Var grad = t.sum(t.square(t.sub(udot, gi)));

  Var rk{};
  if (pair) {
    Var stepped = rk4_step_from(field, ui, ds.times[i + 1] - ds.times[i], gi);
    rk = t.sum(t.square(t.sub(stepped, t.slice_rows(U, 1, 2))));
  } else {
    rk = t.constant(Tensor::scalar(0.0));
  }

  Var total = t.add(mse, t.add(t.scale(rk, w.rk), t.scale(grad, w.grad)));
  return {total, mse, rk, grad};
}

}  // namespace rkdl
