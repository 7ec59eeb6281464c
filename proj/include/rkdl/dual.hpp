#pragma once

#include <numbers>

#include "rkdl/tape.hpp"

namespace rkdl {

// Forward-mode tangent carried alongside a primal value. Both halves are
// ordinary tape nodes, so reverse mode through either reaches the parameters.
// Used to differentiate a network output with respect to its input (e.g. time)
// while keeping that derivative trainable.
struct DualVar {
  Var primal;
  Var tangent;

  Tape& tape() const { return *primal.tape; }
};

inline DualVar dual_leaf(Tape& t, Tensor value, Tensor tangent) {
  detail::require(value.same_shape(tangent), "dual_leaf", "value/tangent shape mismatch");
  Var p = t.constant(std::move(value));
  Var d = t.constant(std::move(tangent));
  return {p, d};
}

inline DualVar dual_const(Tape& t, Tensor value) {
  Tensor zero(value.shape());
  Var p = t.constant(std::move(value));
  Var d = t.constant(std::move(zero));
  return {p, d};
}

inline DualVar add(DualVar a, DualVar b) {
  Tape& t = a.tape();
  return {t.add(a.primal, b.primal), t.add(a.tangent, b.tangent)};
}

inline DualVar sub(DualVar a, DualVar b) {
  Tape& t = a.tape();
  return {t.sub(a.primal, b.primal), t.sub(a.tangent, b.tangent)};
}

inline DualVar mul(DualVar a, DualVar b) {
  Tape& t = a.tape();
  Var td = t.add(t.mul(a.tangent, b.primal), t.mul(a.primal, b.tangent));
  return {t.mul(a.primal, b.primal), td};
}

inline DualVar scale(DualVar a, double c) {
  Tape& t = a.tape();
  return {t.scale(a.primal, c), t.scale(a.tangent, c)};
}

// d/dt (W z + b) = W dz/dt; the zero bias keeps the same primitive usable
inline DualVar linear(Var W, Var b, DualVar z) {
  Tape& t = z.tape();
  Var p = t.linear(W, b, z.primal);
  Var d = t.linear(W, t.constant_like(b, 0.0), z.tangent);
  return {p, d};
}

// cos(x) written as sin(x + pi/2) so its reverse pass is exact second order
inline DualVar sine(DualVar x) {
  Tape& t = x.tape();
  Var p = t.sine(x.primal);
  Var shift = t.constant_like(x.primal, std::numbers::pi / 2.0);
  Var cosx = t.sine(t.add(x.primal, shift));
  return {p, t.mul(cosx, x.tangent)};
}

inline DualVar elu(DualVar x) {
  Tape& t = x.tape();
  return {t.elu(x.primal), t.mul(t.elu_grad(x.primal), x.tangent)};
}

inline DualVar activation(Activation kind, DualVar x) {
  switch (kind) {
    case Activation::sine: return sine(x);
    case Activation::elu: return elu(x);
    case Activation::identity: return x;
  }
  detail::fail("dual activation", "unsupported activation kind");
}

inline DualVar square(DualVar x) {
  Tape& t = x.tape();
  return {t.square(x.primal), t.mul(t.scale(x.primal, 2.0), x.tangent)};
}

inline DualVar slice_rows(DualVar x, std::size_t begin, std::size_t end) {
  Tape& t = x.tape();
  return {t.slice_rows(x.primal, begin, end), t.slice_rows(x.tangent, begin, end)};
}

inline DualVar reshape(DualVar x, const std::vector<std::size_t>& shape) {
  Tape& t = x.tape();
  return {t.reshape(x.primal, shape), t.reshape(x.tangent, shape)};
}

inline DualVar concat_cols(DualVar a, DualVar b) {
  Tape& t = a.tape();
  return {t.concat_cols(a.primal, b.primal), t.concat_cols(a.tangent, b.tangent)};
}

inline DualVar gather_cols(DualVar x, const std::vector<std::size_t>& cols) {
  Tape& t = x.tape();
  return {t.gather_cols(x.primal, cols), t.gather_cols(x.tangent, cols)};
}

inline DualVar operator+(DualVar a, DualVar b) { return add(a, b); }
inline DualVar operator-(DualVar a, DualVar b) { return sub(a, b); }
inline DualVar operator*(DualVar a, DualVar b) { return mul(a, b); }
inline DualVar operator*(double c, DualVar a) { return scale(a, c); }
inline DualVar operator*(DualVar a, double c) { return scale(a, c); }

}  // namespace rkdl
