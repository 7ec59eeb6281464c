#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "rkdl/integrators.hpp"
#include "rkdl/pde_solvers.hpp"
#include "rkdl/random.hpp"
#include "rkdl/tensor.hpp"

namespace rkdl {

struct AffineMap {
  double scale = 1.0;
  double shift = 0.0;
  double operator()(double x) const { return scale * x + shift; }
};

// Per-coordinate affine map applied to network inputs; typically onto [-1, 1].
// jacobian(c) is the factor that converts derivatives in mapped coordinates
// back to derivatives in the original ones (chain rule for d/dt).
class InputTransform {
 public:
  InputTransform() = default;
  explicit InputTransform(std::vector<AffineMap> maps) : maps_(std::move(maps)) {}

  static InputTransform to_unit(const std::vector<std::array<double, 2>>& ranges) {
    std::vector<AffineMap> maps;
    maps.reserve(ranges.size());
    for (const auto& r : ranges) {
      detail::require(r[1] > r[0], "InputTransform", "range must have positive width");
      const double s = 2.0 / (r[1] - r[0]);
      maps.push_back({s, -1.0 - s * r[0]});
    }
    return InputTransform(std::move(maps));
  }

  std::size_t dims() const { return maps_.size(); }
  double map(std::size_t c, double x) const { return maps_.at(c)(x); }
  double jacobian(std::size_t c) const { return maps_.at(c).scale; }

  // X: (M, dims) or (dims)
  Tensor apply(const Tensor& X) const {
    const std::size_t k = maps_.size();
    Tensor out = X;
    if (X.rank() == 1) {
      detail::require(X.dim(0) == k, "InputTransform", "coordinate count mismatch");
      for (std::size_t c = 0; c < k; ++c) out[c] = maps_[c](X[c]);
      return out;
    }
    detail::require(X.rank() == 2 && X.dim(1) == k, "InputTransform", "coordinate count mismatch");
    for (std::size_t r = 0; r < X.dim(0); ++r)
      for (std::size_t c = 0; c < k; ++c) out.at(r, c) = maps_[c](X.at(r, c));
    return out;
  }

 private:
  std::vector<AffineMap> maps_;
};

enum class NoiseScale {
  channel_std,  // sigma = level * population std of the clean channel
  absolute,     // sigma = level
};

struct NoiseSpec {
  double level = 0.0;
  NoiseScale scale = NoiseScale::channel_std;
};

namespace detail {

inline double population_std(const double* x, std::size_t n, std::size_t stride) {
  double mean = 0.0;
  for (std::size_t i = 0; i < n; ++i) mean += x[i * stride];
  mean /= double(n);
  double sq = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const double d = x[i * stride] - mean;
    sq += d * d;
  }
  return std::sqrt(sq / double(n));
}

}  // namespace detail

// Measurements of an ODE trajectory: clean reference states plus the noisy
// copies actually shown to the model. `observed` lists the state channels that
// enter the data-fit loss (all by default).
struct OdeDataset {
  std::vector<double> times;
  Tensor clean;  // (M, d)
  Tensor noisy;  // (M, d)
  std::vector<double> noise_sigma;
  std::vector<std::size_t> observed;

  std::size_t size() const { return times.size(); }
  std::size_t channels() const { return clean.rank() == 2 ? clean.dim(1) : 0; }

  InputTransform time_transform() const {
    return InputTransform::to_unit({{times.front(), times.back()}});
  }
};

// Snapshots of a periodic 1-d field: clean and noisy (T, S) arrays over a
// uniform time grid and a periodic spatial grid.
struct PdeDataset {
  std::vector<double> times;
  Grid1d grid;
  Tensor clean;  // (T, S)
  Tensor noisy;  // (T, S)
  double noise_sigma = 0.0;

  std::size_t snapshots() const { return times.size(); }

  InputTransform space_time_transform() const {
    return InputTransform::to_unit(
        {{times.front(), times.back()}, {grid.left, grid.left + grid.length}});
  }
};

inline void add_noise_per_channel(Tensor& noisy, const Tensor& clean, NoiseSpec spec, Rng& rng,
                                  std::vector<double>& sigma_out) {
  const std::size_t m = clean.dim(0), d = clean.dim(1);
  sigma_out.assign(d, 0.0);
  noisy = clean;
  for (std::size_t c = 0; c < d; ++c) {
    const double sigma = spec.scale == NoiseScale::channel_std
                             ? spec.level * detail::population_std(clean.data() + c, m, d)
                             : spec.level;
    sigma_out[c] = sigma;
    for (std::size_t i = 0; i < m; ++i) noisy.at(i, c) += sigma * rng.gaussian();
  }
}

template <class F>
OdeDataset make_ode_dataset(F&& rhs, const Tensor& x0, double t0, double t1, std::size_t count,
                            NoiseSpec noise, std::uint64_t seed) {
  OdeDataset ds;
  ds.times = uniform_times(t0, t1, count);
  ds.clean = integrate(rhs, x0, ds.times);
  Rng rng(seed);
  add_noise_per_channel(ds.noisy, ds.clean, noise, rng, ds.noise_sigma);
  ds.observed.resize(ds.channels());
  for (std::size_t c = 0; c < ds.observed.size(); ++c) ds.observed[c] = c;
  return ds;
}

inline PdeDataset make_pde_dataset(const SpectralProblem& prob, const Tensor& u0,
                                   const Grid1d& grid, double dt, std::size_t steps,
                                   NoiseSpec noise, std::uint64_t seed,
                                   SpectralSolveOptions opt = {}) {
  PdeDataset ds;
  ds.grid = grid;
  ds.times.resize(steps + 1);
  for (std::size_t i = 0; i <= steps; ++i) ds.times[i] = dt * double(i);
  ds.clean = solve_spectral(prob, u0, dt, steps, opt);
  const double sigma = noise.scale == NoiseScale::channel_std
                           ? noise.level * detail::population_std(ds.clean.data(), ds.clean.numel(), 1)
                           : noise.level;
  ds.noise_sigma = sigma;
  ds.noisy = ds.clean;
  Rng rng(seed);
  for (std::size_t i = 0; i < ds.noisy.numel(); ++i) ds.noisy[i] += sigma * rng.gaussian();
  return ds;
}

// every stride-th measurement, always including row 0
inline OdeDataset subsample_stride(const OdeDataset& ds, std::size_t stride) {
  detail::require(stride >= 1, "subsample_stride", "stride must be >= 1");
  if (stride == 1) return ds;
  OdeDataset out;
  out.noise_sigma = ds.noise_sigma;
  out.observed = ds.observed;
  const std::size_t d = ds.channels();
  std::vector<std::size_t> keep;
  for (std::size_t i = 0; i < ds.size(); i += stride) keep.push_back(i);
  out.times.reserve(keep.size());
  out.clean = Tensor({keep.size(), d});
  out.noisy = Tensor({keep.size(), d});
  for (std::size_t r = 0; r < keep.size(); ++r) {
    out.times.push_back(ds.times[keep[r]]);
    for (std::size_t c = 0; c < d; ++c) {
      out.clean.at(r, c) = ds.clean.at(keep[r], c);
      out.noisy.at(r, c) = ds.noisy.at(keep[r], c);
    }
  }
  return out;
}

// random sorted subset holding the first and last rows; fraction of rows kept
inline OdeDataset subsample_keep(const OdeDataset& ds, double fraction, std::uint64_t seed) {
  detail::require(fraction > 0.0 && fraction <= 1.0, "subsample_keep", "fraction must be in (0, 1]");
  if (fraction >= 1.0) return ds;
  const std::size_t m = ds.size();
  std::size_t want = std::size_t(std::ceil(fraction * double(m)));
  want = std::max<std::size_t>(want, 2);
  std::vector<std::size_t> idx(m);
  for (std::size_t i = 0; i < m; ++i) idx[i] = i;
  Rng rng(seed);
  // partial Fisher-Yates over the interior, then pin the endpoints
  std::vector<std::size_t> pool(idx.begin() + 1, idx.end() - 1);
  for (std::size_t i = 0; i + 1 < pool.size(); ++i) {
    const std::size_t j = i + std::size_t(rng.uniform() * double(pool.size() - i));
    std::swap(pool[i], pool[std::min(j, pool.size() - 1)]);
  }
  std::vector<std::size_t> keep = {0, m - 1};
  for (std::size_t i = 0; i < pool.size() && keep.size() < want; ++i) keep.push_back(pool[i]);
  std::sort(keep.begin(), keep.end());
  OdeDataset out;
  out.noise_sigma = ds.noise_sigma;
  out.observed = ds.observed;
  const std::size_t d = ds.channels();
  out.clean = Tensor({keep.size(), d});
  out.noisy = Tensor({keep.size(), d});
  out.times.reserve(keep.size());
  for (std::size_t r = 0; r < keep.size(); ++r) {
    out.times.push_back(ds.times[keep[r]]);
    for (std::size_t c = 0; c < d; ++c) {
      out.clean.at(r, c) = ds.clean.at(keep[r], c);
      out.noisy.at(r, c) = ds.noisy.at(keep[r], c);
    }
  }
  return out;
}

// keep every time_stride-th snapshot and every space_stride-th grid point
inline PdeDataset subsample_pde(const PdeDataset& ds, std::size_t time_stride,
                                std::size_t space_stride, std::size_t max_snapshots = 0) {
  detail::require(time_stride >= 1 && space_stride >= 1, "subsample_pde", "strides must be >= 1");
  detail::require(ds.grid.n % space_stride == 0, "subsample_pde",
                  "space stride must divide the grid size to stay periodic");
  PdeDataset out;
  out.noise_sigma = ds.noise_sigma;
  std::vector<std::size_t> trows;
  for (std::size_t i = 0; i < ds.snapshots(); i += time_stride) {
    trows.push_back(i);
    if (max_snapshots && trows.size() == max_snapshots) break;
  }
  const std::size_t S = ds.grid.n / space_stride;
  out.grid = Grid1d{S, ds.grid.left, ds.grid.length};
  out.clean = Tensor({trows.size(), S});
  out.noisy = Tensor({trows.size(), S});
  out.times.reserve(trows.size());
  for (std::size_t r = 0; r < trows.size(); ++r) {
    out.times.push_back(ds.times[trows[r]]);
    for (std::size_t j = 0; j < S; ++j) {
      out.clean.at(r, j) = ds.clean.at(trows[r], j * space_stride);
      out.noisy.at(r, j) = ds.noisy.at(trows[r], j * space_stride);
    }
  }
  return out;
}

}  // namespace rkdl
