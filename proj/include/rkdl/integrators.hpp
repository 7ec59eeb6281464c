#pragma once

#include <cmath>
#include <string>
#include <vector>

#include "rkdl/tape.hpp"
#include "rkdl/tensor.hpp"

namespace rkdl {

namespace detail {

inline Tensor step_mul(double h, const Tensor& k) { return h * k; }
inline Tensor step_mul(const Tensor& h, const Tensor& k) { return h * k; }
inline Var step_mul(double h, Var k) { return k.tape->scale(k, h); }
inline Var step_mul(Var h, Var k) { return h.tape->mul(h, k); }

inline const Tensor& state_values(const Tensor& t) { return t; }
inline const Tensor& state_values(const Var& v) { return v.value(); }

template <class State>
void check_stage(const State& s, const char* stage) {
  if (!state_values(s).all_finite())
    fail("rk4_step", std::string("stage ") + stage + " produced a non-finite value");
}

}  // namespace detail

// One classical Runge-Kutta step x + h(k1/6 + k2/3 + k3/3 + k4/6) with the
// first stage supplied by the caller (k1 must equal f(x)), so an evaluation
// of f at x can be shared with other terms of the same graph.
template <class F, class State, class Step>
State rk4_step_from(F&& f, const State& x, const Step& h, const State& k1) {
  detail::check_stage(k1, "k1");
  State k2 = f(x + detail::step_mul(h, k1) * 0.5);
  detail::check_stage(k2, "k2");
  State k3 = f(x + detail::step_mul(h, k2) * 0.5);
  detail::check_stage(k3, "k3");
  State k4 = f(x + detail::step_mul(h, k3));
  detail::check_stage(k4, "k4");
  State incr = k1 * (1.0 / 6.0) + k2 * (1.0 / 3.0) + k3 * (1.0 / 3.0) + k4 * (1.0 / 6.0);
  return x + detail::step_mul(h, incr);
}

// Same step for an autonomous field f evaluated at x. State is a Tensor or a
// tape Var; the step h is a scalar or a tensor shaped like the state
// (per-row steps for batched states).
template <class F, class State, class Step>
State rk4_step(F&& f, const State& x, const Step& h) {
  return rk4_step_from(f, x, h, f(x));
}

struct IntegrateOptions {
  // longest internal step; 0 picks min(1e-3 * time range, smallest grid gap / 100)
  double max_step = 0.0;
  bool refine = true;  // false: exactly one step per grid interval
  double blowup = 1e8;
};

// Dense reference trajectory of an autonomous ODE at the given strictly
// increasing times, sub-stepping each interval with RK4. Row i is the state
// at times[i]; row 0 is x0.
template <class F>
Tensor integrate(F&& f, const Tensor& x0, const std::vector<double>& times,
                 IntegrateOptions opt = {}) {
  detail::require(times.size() >= 1, "integrate", "need at least one time point");
  for (std::size_t i = 1; i < times.size(); ++i)
    detail::require(times[i] > times[i - 1], "integrate", "times must be strictly increasing");

  double max_step = opt.max_step;
  if (opt.refine && max_step <= 0.0 && times.size() >= 2) {
    double min_gap = times[1] - times[0];
    for (std::size_t i = 2; i < times.size(); ++i) min_gap = std::min(min_gap, times[i] - times[i - 1]);
    max_step = std::min(1e-3 * (times.back() - times.front()), min_gap / 100.0);
  }

  const std::size_t d = x0.numel();
  Tensor out({times.size(), d});
  Tensor x = x0.reshaped({d});
  std::copy(x.data(), x.data() + d, out.data());
  for (std::size_t i = 1; i < times.size(); ++i) {
    const double span = times[i] - times[i - 1];
    std::size_t n_sub = 1;
    if (opt.refine && max_step > 0.0) n_sub = std::size_t(std::ceil(span / max_step - 1e-12));
    if (n_sub == 0) n_sub = 1;
    const double h = span / double(n_sub);
    for (std::size_t s = 0; s < n_sub; ++s) {
      x = rk4_step(f, x, h);
      detail::require(x.max_abs() <= opt.blowup, "integrate",
                      "solution blew up near t = " + std::to_string(times[i - 1] + h * double(s + 1)));
    }
    std::copy(x.data(), x.data() + d, out.data() + i * d);
  }
  return out;
}

inline std::vector<double> uniform_times(double t0, double t1, std::size_t count) {
  detail::require(count >= 2 && t1 > t0, "uniform_times", "need count >= 2 and t1 > t0");
  std::vector<double> ts(count);
  const double h = (t1 - t0) / double(count - 1);
  for (std::size_t i = 0; i < count; ++i) ts[i] = t0 + h * double(i);
  ts.back() = t1;
  return ts;
}

}  // namespace rkdl
