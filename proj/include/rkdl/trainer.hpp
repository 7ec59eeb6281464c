#pragma once

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <numeric>
#include <utility>
#include <vector>

#include "rkdl/constraint_loss.hpp"
#include "rkdl/networks.hpp"
#include "rkdl/random.hpp"
#include "rkdl/tape.hpp"

namespace rkdl {

struct AdamConfig {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 0.0;  // coupled L2: added to the gradient before the moments
};

class Adam {
 public:
  Adam() = default;
  explicit Adam(AdamConfig cfg) : cfg_(cfg) {}

  const AdamConfig& config() const { return cfg_; }

  void step(std::vector<NamedTensor>& params, const std::vector<Tensor>& grads) {
    detail::require(params.size() == grads.size(), "Adam::step", "parameter/gradient count mismatch");
    std::vector<const Tensor*> ptrs(grads.size());
    for (std::size_t i = 0; i < grads.size(); ++i) ptrs[i] = &grads[i];
    step(params, ptrs);
  }

  void step(std::vector<NamedTensor>& params, const std::vector<const Tensor*>& grads) {
    detail::require(params.size() == grads.size(), "Adam::step", "parameter/gradient count mismatch");
    if (m_.empty()) {
      m_.reserve(params.size());
      v_.reserve(params.size());
      for (const auto& p : params) {
        m_.emplace_back(p.value.shape());
        v_.emplace_back(p.value.shape());
      }
    }
    ++t_;
    const double bc1 = 1.0 - std::pow(cfg_.beta1, double(t_));
    const double bc2 = 1.0 - std::pow(cfg_.beta2, double(t_));
    for (std::size_t i = 0; i < params.size(); ++i) {
      Tensor& th = params[i].value;
      const Tensor& gr = *grads[i];
      if (!gr.same_shape(th))
        detail::fail("Adam::step", "gradient shape mismatch for " + params[i].name);
      Tensor& m = m_[i];
      Tensor& v = v_[i];
      for (std::size_t k = 0; k < th.numel(); ++k) {
        const double g = gr[k] + cfg_.weight_decay * th[k];
        m[k] = cfg_.beta1 * m[k] + (1.0 - cfg_.beta1) * g;
        v[k] = cfg_.beta2 * v[k] + (1.0 - cfg_.beta2) * g * g;
        th[k] -= cfg_.lr * (m[k] / bc1) / (std::sqrt(v[k] / bc2) + cfg_.eps);
      }
    }
  }

 private:
  AdamConfig cfg_;
  std::vector<Tensor> m_, v_;
  std::size_t t_ = 0;
};

// One optimizer step per pass over the whole measurement set, or one step per
// measurement with the order reshuffled every pass.
enum class BatchMode { full, sample };

struct TrainConfig {
  std::size_t epochs = 15000;
  double lr_implicit = 5e-4;
  double lr_dynamics = 1e-3;
  double weight_decay = 1e-4;
  LossWeights weights{};
  std::size_t log_every = 500;
  BatchMode batch = BatchMode::sample;
  std::uint64_t shuffle_seed = 0;  // sample order (sample mode only)
};

struct HistoryRow {
  std::size_t epoch = 0;
  double total = 0.0, mse = 0.0, rk = 0.0, grad = 0.0;
};

struct TrainResult {
  std::vector<HistoryRow> history;
  bool aborted = false;          // loss went non-finite
  std::size_t abort_epoch = 0;   // epoch whose loss was non-finite
  HistoryRow last_finite{};
};

using LogFn = std::function<void(const HistoryRow&)>;

namespace detail {

struct ParamGroup {
  ParamStore* store = nullptr;
  double lr = 0.0;
};

inline void shuffle_indices(std::vector<std::size_t>& v, Rng& rng) {
  for (std::size_t i = v.size(); i > 1; --i) std::swap(v[i - 1], v[rng.raw() % i]);
}

// Full-batch loop: each epoch rebuilds the graph on a fresh tape, records the
// pre-update loss, then applies one Adam step per group. With zero epochs the
// loss is still evaluated once so the history is never empty.
template <class BuildLoss>
TrainResult run_training(BuildLoss&& build, std::vector<ParamGroup> groups, const TrainConfig& cfg,
                         const LogFn& on_log) {
  std::vector<Adam> opts;
  opts.reserve(groups.size());
  for (const auto& g : groups)
    opts.emplace_back(AdamConfig{g.lr, 0.9, 0.999, 1e-8, cfg.weight_decay});

  TrainResult res;
  const std::size_t rows = std::max<std::size_t>(cfg.epochs, 1);
  res.history.reserve(rows);
  Tape tape;
  for (std::size_t epoch = 0; epoch < rows; ++epoch) {
    tape.reset();
    std::vector<std::vector<Var>> bound;
    bound.reserve(groups.size());
    for (const auto& g : groups) bound.push_back(g.store->bind(tape));
    LossTerms terms = build(tape, bound);
    const LossValues lv = read_loss(terms);
    if (!lv.finite()) {
      res.aborted = true;
      res.abort_epoch = epoch;
      break;
    }
    HistoryRow row{epoch, lv.total, lv.mse, lv.rk, lv.grad};
    res.history.push_back(row);
    res.last_finite = row;
    if (on_log && (epoch % cfg.log_every == 0 || epoch + 1 == rows)) on_log(row);
    if (cfg.epochs == 0) break;

    Gradients grads = tape.backward(terms.total);
    for (std::size_t g = 0; g < groups.size(); ++g) {
      std::vector<Tensor> gs;
      gs.reserve(bound[g].size());
      for (Var v : bound[g]) gs.push_back(grads.take(v));
      opts[g].step(groups[g].store->params(), gs);
    }
  }
  return res;
}

// Per-sample loop: every epoch reshuffles the sample order, then rebuilds the
// one-sample loss and steps both groups after each sample. Tape, adjoint and
// gradient buffers persist across steps, so the repeated graph shape makes the
// steady state allocation-free. History rows hold the epoch means, matching
// the full-batch loss scale. With zero epochs the losses are evaluated once
// without updates.
template <class BuildSample>
TrainResult run_training_sampled(BuildSample&& build, std::size_t samples,
                                 std::vector<ParamGroup> groups, const TrainConfig& cfg,
                                 const LogFn& on_log) {
  require(samples >= 1, "train", "need at least one sample");
  std::vector<Adam> opts;
  opts.reserve(groups.size());
  for (const auto& g : groups)
    opts.emplace_back(AdamConfig{g.lr, 0.9, 0.999, 1e-8, cfg.weight_decay});

  Rng order_rng(cfg.shuffle_seed);
  std::vector<std::size_t> order(samples);
  std::iota(order.begin(), order.end(), 0);

  TrainResult res;
  const std::size_t rows = std::max<std::size_t>(cfg.epochs, 1);
  const bool update = cfg.epochs > 0;
  res.history.reserve(rows);
  Tape tape;
  std::vector<std::vector<Var>> bound(groups.size());
  std::vector<Tensor> adj;
  std::vector<char> reached;
  std::vector<std::vector<const Tensor*>> gptr(groups.size());
  std::vector<std::vector<Tensor>> gzero(groups.size());
  for (std::size_t epoch = 0; epoch < rows; ++epoch) {
    if (update) shuffle_indices(order, order_rng);
    LossValues acc{};
    bool finite = true;
    for (std::size_t s = 0; s < samples; ++s) {
      tape.reset();
      for (std::size_t g = 0; g < groups.size(); ++g) groups[g].store->bind_into(tape, bound[g]);
      LossTerms terms = build(tape, bound, order[s]);
      const LossValues lv = read_loss(terms);
      if (!lv.finite()) {
        finite = false;
        break;
      }
      acc.total += lv.total;
      acc.mse += lv.mse;
      acc.rk += lv.rk;
      acc.grad += lv.grad;
      if (!update) continue;
      tape.backward_into(terms.total, adj, reached);
      for (std::size_t g = 0; g < groups.size(); ++g) {
        auto& params = groups[g].store->params();
        auto& ptrs = gptr[g];
        ptrs.resize(bound[g].size());
        gzero[g].resize(bound[g].size());
        for (std::size_t j = 0; j < bound[g].size(); ++j) {
          const Var v = bound[g][j];
          if (reached[v.id]) {
            ptrs[j] = &adj[v.id];
          } else {
            Tensor& z = gzero[g][j];
            z.resize_like(params[j].value);
            z.fill(0.0);
            ptrs[j] = &z;
          }
        }
        opts[g].step(params, ptrs);
      }
    }
    if (!finite) {
      res.aborted = true;
      res.abort_epoch = epoch;
      break;
    }
    const double inv = 1.0 / double(samples);
    HistoryRow row{epoch, acc.total * inv, acc.mse * inv, acc.rk * inv, acc.grad * inv};
    res.history.push_back(row);
    res.last_finite = row;
    if (on_log && (epoch % cfg.log_every == 0 || epoch + 1 == rows)) on_log(row);
    if (cfg.epochs == 0) break;
  }
  return res;
}

}  // namespace detail

template <class DynNet>
TrainResult train_ode(ImplicitSineNet& implicit, DynNet& dyn, const OdeDataset& ds,
                      const TrainConfig& cfg, const LogFn& on_log = {}) {
  const InputTransform tf = ds.time_transform();
  std::vector<detail::ParamGroup> groups{{&implicit.store(), cfg.lr_implicit},
                                         {&dyn.store(), cfg.lr_dynamics}};
  if (cfg.batch == BatchMode::sample) {
    auto build = [&](Tape& t, const std::vector<std::vector<Var>>& bound, std::size_t i) {
      return build_ode_sample_loss(t, implicit, bound[0], dyn, bound[1], ds, tf, cfg.weights, i);
    };
    return detail::run_training_sampled(build, ds.size(), std::move(groups), cfg, on_log);
  }
  auto build = [&](Tape& t, const std::vector<std::vector<Var>>& bound) {
    return build_ode_loss(t, implicit, bound[0], dyn, bound[1], ds, tf, cfg.weights);
  };
  return detail::run_training(build, std::move(groups), cfg, on_log);
}

inline TrainResult train_pde(ImplicitSineNet& implicit, ResidualConv1d& dyn, const PdeDataset& ds,
                             const TrainConfig& cfg, const LogFn& on_log = {}) {
  const InputTransform tf = ds.space_time_transform();
  dyn.set_train(true);
  std::vector<detail::ParamGroup> groups{{&implicit.store(), cfg.lr_implicit},
                                         {&dyn.store(), cfg.lr_dynamics}};
  TrainResult res;
  if (cfg.batch == BatchMode::sample) {
    auto build = [&](Tape& t, const std::vector<std::vector<Var>>& bound, std::size_t i) {
      return build_pde_sample_loss(t, implicit, bound[0], dyn, bound[1], ds, tf, cfg.weights, i);
    };
    res = detail::run_training_sampled(build, ds.snapshots(), std::move(groups), cfg, on_log);
  } else {
    auto build = [&](Tape& t, const std::vector<std::vector<Var>>& bound) {
      return build_pde_loss(t, implicit, bound[0], dyn, bound[1], ds, tf, cfg.weights);
    };
    res = detail::run_training(build, std::move(groups), cfg, on_log);
  }
  dyn.set_train(false);
  return res;
}

}  // namespace rkdl
