#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <string>
#include <vector>

#include "rkdl/csv.hpp"
#include "rkdl/dataset.hpp"
#include "rkdl/networks.hpp"

namespace rkdl {

// implicit network outputs at the measurement times
inline Tensor denoised_states(const ImplicitSineNet& implicit, const OdeDataset& ds,
                              const InputTransform& tf) {
  Tensor in({ds.size(), 1});
  for (std::size_t i = 0; i < ds.size(); ++i) in.at(i, 0) = tf.map(0, ds.times[i]);
  return implicit.predict(in);
}

struct DenoiseMetrics {
  std::vector<double> rmse;         // per channel, against the clean reference
  std::vector<double> noise_sigma;  // per channel, measured on the noisy data
};

inline DenoiseMetrics denoise_metrics(const ImplicitSineNet& implicit, const OdeDataset& ds,
                                      const InputTransform& tf) {
  const Tensor xhat = denoised_states(implicit, ds, tf);
  const std::size_t m = ds.size(), d = ds.channels();
  DenoiseMetrics out;
  out.rmse.assign(d, 0.0);
  out.noise_sigma.assign(d, 0.0);
  for (std::size_t c = 0; c < d; ++c) {
    double sq = 0.0, nsq = 0.0;
    for (std::size_t i = 0; i < m; ++i) {
      const double e = xhat.at(i, c) - ds.clean.at(i, c);
      const double n = ds.noisy.at(i, c) - ds.clean.at(i, c);
      sq += e * e;
      nsq += n * n;
    }
    out.rmse[c] = std::sqrt(sq / double(m));
    out.noise_sigma[c] = std::sqrt(nsq / double(m));
  }
  return out;
}

// Learned vs reference vector field on a regular grid over the trajectory's
// bounding box (plus margin). The mask marks grid points within
// radius_frac * bbox diagonal of some trajectory point; error metrics are
// restricted to it since the model never saw states outside.
struct VectorFieldEval {
  std::size_t nx = 0, ny = 0;
  std::vector<double> xs, ys;
  Tensor reference;  // (ny*nx, 2), row r = iy*nx + ix
  Tensor learned;    // (ny*nx, 2)
  std::vector<std::uint8_t> mask;
  double rel_l2 = 0.0;
  double mean_cos = 0.0;
  std::size_t mask_count = 0;
};

template <class DynNet, class Rhs>
VectorFieldEval evaluate_vector_field(DynNet& dyn, Rhs&& rhs, const Tensor& traj, std::size_t nx,
                                      std::size_t ny, double margin_frac = 0.1,
                                      double radius_frac = 0.1) {
  detail::require(traj.rank() == 2 && traj.dim(1) == 2, "evaluate_vector_field",
                  "trajectory must be (M, 2)");
  const std::size_t m = traj.dim(0);
  double lo[2], hi[2];
  for (int c = 0; c < 2; ++c) {
    lo[c] = hi[c] = traj.at(0, c);
    for (std::size_t i = 1; i < m; ++i) {
      lo[c] = std::min(lo[c], traj.at(i, std::size_t(c)));
      hi[c] = std::max(hi[c], traj.at(i, std::size_t(c)));
    }
  }
  const double diag = std::hypot(hi[0] - lo[0], hi[1] - lo[1]);
  const double radius = radius_frac * diag;
  for (int c = 0; c < 2; ++c) {
    const double pad = margin_frac * (hi[c] - lo[c]);
    lo[c] -= pad;
    hi[c] += pad;
  }

  VectorFieldEval ev;
  ev.nx = nx;
  ev.ny = ny;
  ev.xs.resize(nx);
  ev.ys.resize(ny);
  for (std::size_t i = 0; i < nx; ++i)
    ev.xs[i] = lo[0] + (hi[0] - lo[0]) * double(i) / double(nx - 1);
  for (std::size_t i = 0; i < ny; ++i)
    ev.ys[i] = lo[1] + (hi[1] - lo[1]) * double(i) / double(ny - 1);

  Tensor points({nx * ny, 2});
  for (std::size_t iy = 0; iy < ny; ++iy)
    for (std::size_t ix = 0; ix < nx; ++ix) {
      points.at(iy * nx + ix, 0) = ev.xs[ix];
      points.at(iy * nx + ix, 1) = ev.ys[iy];
    }

  ev.learned = dyn.predict(points);
  ev.reference = Tensor({nx * ny, 2});
  for (std::size_t r = 0; r < nx * ny; ++r) {
    Tensor f = rhs(Tensor::vector({points.at(r, 0), points.at(r, 1)}));
    ev.reference.at(r, 0) = f[0];
    ev.reference.at(r, 1) = f[1];
  }

  ev.mask.assign(nx * ny, 0);
  const double r2 = radius * radius;
  for (std::size_t r = 0; r < nx * ny; ++r) {
    for (std::size_t i = 0; i < m; ++i) {
      const double dx = points.at(r, 0) - traj.at(i, 0);
      const double dy = points.at(r, 1) - traj.at(i, 1);
      if (dx * dx + dy * dy <= r2) {
        ev.mask[r] = 1;
        break;
      }
    }
  }

  double num = 0.0, den = 0.0, cos_sum = 0.0;
  for (std::size_t r = 0; r < nx * ny; ++r) {
    if (!ev.mask[r]) continue;
    ++ev.mask_count;
    const double fu = ev.reference.at(r, 0), fv = ev.reference.at(r, 1);
    const double gu = ev.learned.at(r, 0), gv = ev.learned.at(r, 1);
    num += (gu - fu) * (gu - fu) + (gv - fv) * (gv - fv);
    den += fu * fu + fv * fv;
    const double nf = std::hypot(fu, fv), ng = std::hypot(gu, gv);
    cos_sum += (fu * gu + fv * gv) / std::max(nf * ng, 1e-300);
  }
  ev.rel_l2 = den > 0.0 ? std::sqrt(num / den) : std::sqrt(num);
  ev.mean_cos = ev.mask_count ? cos_sum / double(ev.mask_count) : 0.0;
  return ev;
}

// One row per lattice point: coordinates, learned vector, reference vector,
// and whether the point lies inside the data-region mask.
inline void write_field_grid_csv(const std::string& path, const VectorFieldEval& ev) {
  std::ofstream out(path);
  detail::require(bool(out), "write_field_grid_csv", "cannot open " + path);
  out << "x0,x1,learned0,learned1,true0,true1,mask\n";
  for (std::size_t iy = 0; iy < ev.ny; ++iy)
    for (std::size_t ix = 0; ix < ev.nx; ++ix) {
      const std::size_t r = iy * ev.nx + ix;
      out << detail::fmt_double(ev.xs[ix]) << "," << detail::fmt_double(ev.ys[iy]) << ","
          << detail::fmt_double(ev.learned.at(r, 0)) << ","
          << detail::fmt_double(ev.learned.at(r, 1)) << ","
          << detail::fmt_double(ev.reference.at(r, 0)) << ","
          << detail::fmt_double(ev.reference.at(r, 1)) << "," << unsigned(ev.mask[r]) << "\n";
    }
}

struct PdeMetrics {
  double denoise_rel_l2 = 0.0;   // implicit reconstruction vs clean snapshots
  double dynamics_rel_l2 = 0.0;  // dynamics net on denoised snapshots vs FD du/dt of clean
};

// central differences inside, one-sided at the ends
inline Tensor time_derivative_fd(const Tensor& u, const std::vector<double>& times) {
  const std::size_t T = u.dim(0), S = u.dim(1);
  detail::require(T >= 2 && times.size() == T, "time_derivative_fd", "need >= 2 snapshots");
  Tensor out({T, S});
  for (std::size_t j = 0; j < S; ++j) {
    out.at(0, j) = (u.at(1, j) - u.at(0, j)) / (times[1] - times[0]);
    out.at(T - 1, j) = (u.at(T - 1, j) - u.at(T - 2, j)) / (times[T - 1] - times[T - 2]);
  }
  for (std::size_t i = 1; i + 1 < T; ++i)
    for (std::size_t j = 0; j < S; ++j)
      out.at(i, j) = (u.at(i + 1, j) - u.at(i - 1, j)) / (times[i + 1] - times[i - 1]);
  return out;
}

inline Tensor denoised_snapshots(const ImplicitSineNet& implicit, const PdeDataset& ds,
                                 const InputTransform& tf) {
  const std::size_t T = ds.snapshots(), S = ds.grid.n;
  const auto pts = ds.grid.points();
  Tensor in({T * S, 2});
  for (std::size_t i = 0; i < T; ++i)
    for (std::size_t j = 0; j < S; ++j) {
      in.at(i * S + j, 0) = tf.map(0, ds.times[i]);
      in.at(i * S + j, 1) = tf.map(1, pts[j]);
    }
  return implicit.predict(in).reshaped({T, S});
}

inline double relative_l2(const Tensor& approx, const Tensor& exact) {
  detail::require(approx.same_shape(exact), "relative_l2", "shape mismatch");
  double num = 0.0, den = 0.0;
  for (std::size_t i = 0; i < exact.numel(); ++i) {
    const double d = approx[i] - exact[i];
    num += d * d;
    den += exact[i] * exact[i];
  }
  return den > 0.0 ? std::sqrt(num / den) : std::sqrt(num);
}

inline PdeMetrics evaluate_pde(const ImplicitSineNet& implicit, ResidualConv1d& dyn,
                               const PdeDataset& ds, const InputTransform& tf) {
  const std::size_t T = ds.snapshots(), S = ds.grid.n;
  PdeMetrics out;
  const Tensor uhat = denoised_snapshots(implicit, ds, tf);
  out.denoise_rel_l2 = relative_l2(uhat, ds.clean);
  const bool was_train = dyn.train_mode();
  dyn.set_train(false);
  const Tensor g = dyn.predict(uhat.reshaped({T, 1, S})).reshaped({T, S});
  dyn.set_train(was_train);
  out.dynamics_rel_l2 = relative_l2(g, time_derivative_fd(ds.clean, ds.times));
  return out;
}

// Binary PPM heatmap with a blue-white-red map over [min, max]; the value
// range goes to a text sidecar <path>.range.txt so images stay comparable.
inline void write_heatmap_ppm(const std::string& path, const Tensor& values) {
  detail::require(values.rank() == 2, "write_heatmap_ppm", "values must be rank 2");
  const std::size_t H = values.dim(0), W = values.dim(1);
  const double lo = values.min(), hi = values.max();
  const double span = hi > lo ? hi - lo : 1.0;
  std::ofstream out(path, std::ios::binary);
  detail::require(bool(out), "write_heatmap_ppm", "cannot open " + path);
  out << "P6\n" << W << " " << H << "\n255\n";
  auto channel = [](double v) { return char(std::uint8_t(std::clamp(v, 0.0, 255.0))); };
  for (std::size_t i = 0; i < H; ++i)
    for (std::size_t j = 0; j < W; ++j) {
      const double t = (values.at(i, j) - lo) / span;  // 0 blue, 0.5 white, 1 red
      double r, g, b;
      if (t < 0.5) {
        const double s = t * 2.0;
        r = 255.0 * s;
        g = 255.0 * s;
        b = 255.0;
      } else {
        const double s = (t - 0.5) * 2.0;
        r = 255.0;
        g = 255.0 * (1.0 - s);
        b = 255.0 * (1.0 - s);
      }
      out.put(channel(r));
      out.put(channel(g));
      out.put(channel(b));
    }
  std::ofstream side(path + ".range.txt");
  side << detail::fmt_double(lo) << " " << detail::fmt_double(hi) << "\n";
}

}  // namespace rkdl
