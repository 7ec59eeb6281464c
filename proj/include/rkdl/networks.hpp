#pragma once

#include <cmath>
#include <string>
#include <vector>

#include "rkdl/dual.hpp"
#include "rkdl/random.hpp"
#include "rkdl/tape.hpp"

namespace rkdl {

struct NamedTensor {
  std::string name;
  Tensor value;
};

// Trainable parameters plus non-trainable buffers (running statistics),
// both in a fixed declaration order shared by binding, the optimizer and
// checkpoints.
class ParamStore {
 public:
  std::size_t add_param(std::string name, Tensor value) {
    params_.push_back({std::move(name), std::move(value)});
    return params_.size() - 1;
  }
  std::size_t add_buffer(std::string name, Tensor value) {
    buffers_.push_back({std::move(name), std::move(value)});
    return buffers_.size() - 1;
  }

  std::vector<NamedTensor>& params() { return params_; }
  const std::vector<NamedTensor>& params() const { return params_; }
  std::vector<NamedTensor>& buffers() { return buffers_; }
  const std::vector<NamedTensor>& buffers() const { return buffers_; }

  std::size_t param_count() const {
    std::size_t n = 0;
    for (const auto& p : params_) n += p.value.numel();
    return n;
  }

  // one Var per parameter, in order, trainable leaves
  std::vector<Var> bind(Tape& t) const {
    std::vector<Var> vars;
    bind_into(t, vars);
    return vars;
  }

  // same binding into a reused vector, allocation-free once warm
  void bind_into(Tape& t, std::vector<Var>& out) const {
    out.clear();
    out.reserve(params_.size());
    for (const auto& p : params_) out.push_back(t.leaf_copy(p.value, true));
  }

 private:
  std::vector<NamedTensor> params_;
  std::vector<NamedTensor> buffers_;
};

namespace detail {

inline Tensor uniform_tensor(std::vector<std::size_t> shape, Rng& rng, double bound) {
  Tensor t(std::move(shape));
  fill_uniform(t, rng, -bound, bound);
  return t;
}

inline double bias_bound(std::size_t fan_in) { return 1.0 / std::sqrt(double(fan_in)); }

}  // namespace detail

struct ImplicitSineConfig {
  std::size_t in_dim = 1;
  std::size_t out_dim = 1;
  std::size_t width = 20;
  std::size_t sine_layers = 4;  // input layer + (sine_layers-1) hidden, then linear head
  double omega0 = 30.0;
};

// Sinusoidal coordinate network: sin(omega0 (W x + b)) on the first layer,
// sin(W h + b) on the deeper sine layers, then a linear head. First-layer
// weights start at U(+-1/in_dim) so omega0 spreads the input across many
// periods; deeper weights start at U(+-sqrt(6/width)/omega0).
class ImplicitSineNet {
 public:
  ImplicitSineNet() = default;

  ImplicitSineNet(ImplicitSineConfig cfg, Rng& rng) : cfg_(cfg) {
    detail::require(cfg.sine_layers >= 1, "ImplicitSineNet", "need at least one sine layer");
    std::size_t fan_in = cfg.in_dim;
    for (std::size_t l = 0; l < cfg.sine_layers; ++l) {
      const double wb = (l == 0) ? 1.0 / double(fan_in)
                                 : std::sqrt(6.0 / double(fan_in)) / cfg.omega0;
      add_layer(l, fan_in, cfg.width, wb, rng);
      fan_in = cfg.width;
    }
    const double head_b = std::sqrt(6.0 / double(fan_in)) / cfg.omega0;
    add_layer(cfg.sine_layers, fan_in, cfg.out_dim, head_b, rng);
  }

  const ImplicitSineConfig& config() const { return cfg_; }
  ParamStore& store() { return store_; }
  const ParamStore& store() const { return store_; }

  std::vector<Var> bind(Tape& t) const { return store_.bind(t); }

  // x: (B, in_dim) or (in_dim)
  Var forward(Tape& t, const std::vector<Var>& p, Var x) const {
    Var h = x;
    for (std::size_t l = 0; l < cfg_.sine_layers; ++l) {
      h = t.linear(p[2 * l], p[2 * l + 1], h);
      if (l == 0 && cfg_.omega0 != 1.0) h = t.scale(h, cfg_.omega0);
      h = t.sine(h);
    }
    return t.linear(p[2 * cfg_.sine_layers], p[2 * cfg_.sine_layers + 1], h);
  }

  // same map with an input tangent carried through, so d(output)/d(direction)
  // is itself differentiable with respect to the parameters
  DualVar forward(Tape&, const std::vector<Var>& p, DualVar x) const {
    DualVar h = x;
    for (std::size_t l = 0; l < cfg_.sine_layers; ++l) {
      h = linear(p[2 * l], p[2 * l + 1], h);
      if (l == 0 && cfg_.omega0 != 1.0) h = scale(h, cfg_.omega0);
      h = sine(h);
    }
    return linear(p[2 * cfg_.sine_layers], p[2 * cfg_.sine_layers + 1], h);
  }

  Tensor predict(const Tensor& x) const {
    Tape t;
    auto p = bind(t);
    return forward(t, p, t.constant(x)).value();
  }

 private:
  void add_layer(std::size_t l, std::size_t fan_in, std::size_t fan_out, double weight_bound,
                 Rng& rng) {
    store_.add_param("sine.w" + std::to_string(l),
                     detail::uniform_tensor({fan_out, fan_in}, rng, weight_bound));
    store_.add_param("sine.b" + std::to_string(l),
                     detail::uniform_tensor({fan_out}, rng, detail::bias_bound(fan_in)));
  }

  ImplicitSineConfig cfg_;
  ParamStore store_;
};

struct ResidualMlpConfig {
  std::size_t in_dim = 2;
  std::size_t out_dim = 2;
  std::size_t width = 20;
  std::size_t blocks = 4;
};

// lift -> residual blocks -> head. Block: x + W2 elu(W1 x + b1) + b2.
// The skip path stays linear, so zeroed inner weights reduce the whole
// network to head(lift(x) + sum of b2).
class ResidualMlp {
 public:
  ResidualMlp() = default;

  ResidualMlp(ResidualMlpConfig cfg, Rng& rng) : cfg_(cfg) {
    add_linear("lift", cfg.in_dim, cfg.width, rng);
    for (std::size_t b = 0; b < cfg.blocks; ++b) {
      add_linear("block" + std::to_string(b) + ".w1", cfg.width, cfg.width, rng);
      add_linear("block" + std::to_string(b) + ".w2", cfg.width, cfg.width, rng);
    }
    add_linear("head", cfg.width, cfg.out_dim, rng);
  }

  const ResidualMlpConfig& config() const { return cfg_; }
  ParamStore& store() { return store_; }
  const ParamStore& store() const { return store_; }

  std::vector<Var> bind(Tape& t) const { return store_.bind(t); }

  Var forward(Tape& t, const std::vector<Var>& p, Var x) const {
    Var h = t.linear(p[0], p[1], x);
    for (std::size_t b = 0; b < cfg_.blocks; ++b) {
      const std::size_t k = 2 + 4 * b;
      Var inner = t.elu(t.linear(p[k], p[k + 1], h));
      h = t.add(h, t.linear(p[k + 2], p[k + 3], inner));
    }
    const std::size_t k = 2 + 4 * cfg_.blocks;
    return t.linear(p[k], p[k + 1], h);
  }

  Tensor predict(const Tensor& x) const {
    Tape t;
    auto p = bind(t);
    return forward(t, p, t.constant(x)).value();
  }

 private:
  void add_linear(const std::string& name, std::size_t fan_in, std::size_t fan_out, Rng& rng) {
    store_.add_param(name + ".weight",
                     detail::uniform_tensor({fan_out, fan_in}, rng, std::sqrt(6.0 / double(fan_in))));
    store_.add_param(name + ".bias",
                     detail::uniform_tensor({fan_out}, rng, detail::bias_bound(fan_in)));
  }

  ResidualMlpConfig cfg_;
  ParamStore store_;
};

struct ResidualConv1dConfig {
  std::size_t channels = 8;
  std::size_t blocks = 4;
  std::size_t kernel = 3;
  double bn_momentum = 0.1;
  double bn_eps = 1e-5;
};

// Periodic 1-d conv net over a single-channel field: lift conv -> residual
// blocks (x + conv(elu(bn(x)))) -> conv head back to one channel. Running
// statistics use the biased batch variance.
class ResidualConv1d {
 public:
  ResidualConv1d() = default;

  ResidualConv1d(ResidualConv1dConfig cfg, Rng& rng) : cfg_(cfg) {
    add_conv("lift", 1, cfg.channels, rng);
    for (std::size_t b = 0; b < cfg.blocks; ++b) {
      const std::string base = "block" + std::to_string(b);
      store_.add_param(base + ".bn.gamma", Tensor::full({cfg.channels}, 1.0));
      store_.add_param(base + ".bn.beta", Tensor({cfg.channels}));
      store_.add_buffer(base + ".bn.run_mean", Tensor({cfg.channels}));
      store_.add_buffer(base + ".bn.run_var", Tensor::full({cfg.channels}, 1.0));
      add_conv(base + ".conv", cfg.channels, cfg.channels, rng);
    }
    add_conv("head", cfg.channels, 1, rng);
  }

  const ResidualConv1dConfig& config() const { return cfg_; }
  ParamStore& store() { return store_; }
  const ParamStore& store() const { return store_; }

  std::vector<Var> bind(Tape& t) const { return store_.bind(t); }

  void set_train(bool train) { train_ = train; }
  bool train_mode() const { return train_; }

  // x: (B, 1, S). Running stats update in place when in train mode.
  Var forward(Tape& t, const std::vector<Var>& p, Var x) {
    Var h = t.conv1d_periodic(x, p[0], p[1]);
    for (std::size_t b = 0; b < cfg_.blocks; ++b) {
      const std::size_t k = 2 + 4 * b;
      Tensor& rm = store_.buffers()[2 * b].value;
      Tensor& rv = store_.buffers()[2 * b + 1].value;
      Var inner = t.batch_norm(h, p[k], p[k + 1], &rm, &rv, train_, cfg_.bn_momentum, cfg_.bn_eps);
      inner = t.elu(inner);
      inner = t.conv1d_periodic(inner, p[k + 2], p[k + 3]);
      h = t.add(h, inner);
    }
    const std::size_t k = 2 + 4 * cfg_.blocks;
    return t.conv1d_periodic(h, p[k], p[k + 1]);
  }

  Tensor predict(const Tensor& x) {
    Tape t;
    auto p = bind(t);
    return forward(t, p, t.constant(x)).value();
  }

 private:
  void add_conv(const std::string& name, std::size_t cin, std::size_t cout, Rng& rng) {
    const std::size_t fan_in = cin * cfg_.kernel;
    store_.add_param(name + ".kernel",
                     detail::uniform_tensor({cout, cin, cfg_.kernel}, rng, std::sqrt(6.0 / double(fan_in))));
    store_.add_param(name + ".bias", detail::uniform_tensor({cout}, rng, detail::bias_bound(fan_in)));
  }

  ResidualConv1dConfig cfg_;
  ParamStore store_;
  bool train_ = true;
};

}  // namespace rkdl
