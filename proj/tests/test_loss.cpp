#include <cmath>

#include "catch_amalgamated.hpp"
#include "rkdl/constraint_loss.hpp"
#include "rkdl/gradcheck.hpp"
#include "rkdl/odes.hpp"

using rkdl::Tensor;
using rkdl::Var;

namespace {

void zero_params(rkdl::ParamStore& store) {
  for (auto& p : store.params()) p.value = Tensor(p.value.shape());
}

rkdl::OdeDataset tiny_ode_data() {
  rkdl::OdeDataset ds;
  ds.times = {0.0, 0.5, 1.5};
  ds.noisy = Tensor::from_rows({{1.0, 2.0}, {3.0, -1.0}, {0.5, 4.0}});
  ds.clean = ds.noisy;
  ds.noise_sigma = {0.0, 0.0};
  ds.observed = {0, 1};
  return ds;
}

rkdl::PdeDataset tiny_pde_data() {
  rkdl::PdeDataset ds;
  ds.grid = rkdl::Grid1d{8, 0.0, 8.0};
  ds.times = {0.0, 0.2, 0.4};
  ds.clean = Tensor({3, 8});
  for (std::size_t i = 0; i < 3; ++i)
    for (std::size_t j = 0; j < 8; ++j) ds.clean.at(i, j) = 0.3 * double(i) - 0.1 * double(j);
  ds.noisy = ds.clean;
  ds.noise_sigma = 0.0;
  return ds;
}

}  // namespace

TEST_CASE("zeroed networks give the closed-form trajectory loss") {
  auto ds = tiny_ode_data();
  rkdl::Rng rng(1);
  rkdl::ImplicitSineNet implicit({.in_dim = 1, .out_dim = 2, .width = 6, .sine_layers = 2}, rng);
  rkdl::ResidualMlp dyn({.in_dim = 2, .out_dim = 2, .width = 5, .blocks = 1}, rng);
  zero_params(implicit.store());
  zero_params(dyn.store());
  const double c0 = 0.7, c1 = -0.3;
  dyn.store().params()[7].value = Tensor::vector({c0, c1});  // head bias: constant field

  rkdl::Tape t;
  auto pi = implicit.bind(t);
  auto pd = dyn.bind(t);
  const auto tf = ds.time_transform();

  // x_hat == 0 and tangent == 0, g == (c0, c1):
  //   mse  = (1/M) sum |y|^2
  //   rk   = (1/M) sum over pairs |h_i c|^2   (zero state steps by h c exactly)
  //   grad = (1/M) * M * |c|^2
  const double mse_want = (1.0 + 4.0 + 9.0 + 1.0 + 0.25 + 16.0) / 3.0;
  const double rk_want =
      (0.25 * (c0 * c0 + c1 * c1) + 1.0 * (c0 * c0 + c1 * c1)) / 3.0;
  const double grad_want = c0 * c0 + c1 * c1;

  SECTION("unit weights") {
    auto terms = rkdl::build_ode_loss(t, implicit, pi, dyn, pd, ds, tf, {1.0, 1.0});
    const auto lv = rkdl::read_loss(terms);
    CHECK(lv.mse == Catch::Approx(mse_want).epsilon(1e-14));
    CHECK(lv.rk == Catch::Approx(rk_want).epsilon(1e-13));
    CHECK(lv.grad == Catch::Approx(grad_want).epsilon(1e-14));
    CHECK(lv.total == Catch::Approx(mse_want + rk_want + grad_want).epsilon(1e-13));
  }
  SECTION("weights scale their own terms only") {
    auto terms = rkdl::build_ode_loss(t, implicit, pi, dyn, pd, ds, tf, {2.0, 0.5});
    const auto lv = rkdl::read_loss(terms);
    CHECK(lv.mse == Catch::Approx(mse_want).epsilon(1e-14));
    CHECK(lv.rk == Catch::Approx(rk_want).epsilon(1e-13));
    CHECK(lv.grad == Catch::Approx(grad_want).epsilon(1e-14));
    CHECK(lv.total == Catch::Approx(mse_want + 2.0 * rk_want + 0.5 * grad_want).epsilon(1e-13));
  }
}

TEST_CASE("only observed channels enter the data term") {
  auto ds = tiny_ode_data();
  ds.observed = {1};
  rkdl::Rng rng(1);
  rkdl::ImplicitSineNet implicit({.in_dim = 1, .out_dim = 2, .width = 6, .sine_layers = 2}, rng);
  rkdl::ResidualMlp dyn({.in_dim = 2, .out_dim = 2, .width = 5, .blocks = 1}, rng);
  zero_params(implicit.store());
  zero_params(dyn.store());

  rkdl::Tape t;
  auto pi = implicit.bind(t);
  auto pd = dyn.bind(t);
  auto terms = rkdl::build_ode_loss(t, implicit, pi, dyn, pd, ds, ds.time_transform(), {1.0, 1.0});
  const auto lv = rkdl::read_loss(terms);
  CHECK(lv.mse == Catch::Approx((4.0 + 1.0 + 16.0) / 3.0).epsilon(1e-14));
  CHECK(lv.rk == 0.0);    // zero field, zero states
  CHECK(lv.grad == 0.0);
}

TEST_CASE("zeroed networks give the closed-form field loss") {
  auto ds = tiny_pde_data();
  rkdl::Rng rng(2);
  rkdl::ImplicitSineNet implicit({.in_dim = 2, .out_dim = 1, .width = 6, .sine_layers = 2}, rng);
  rkdl::ResidualConv1d dyn({.channels = 4, .blocks = 1, .kernel = 3}, rng);
  dyn.set_train(false);
  zero_params(implicit.store());
  zero_params(dyn.store());
  const double c = 0.6;
  dyn.store().params()[7].value = Tensor::vector({c});  // head conv bias

  rkdl::Tape t;
  auto pi = implicit.bind(t);
  auto pd = dyn.bind(t);
  auto terms =
      rkdl::build_pde_loss(t, implicit, pi, dyn, pd, ds, ds.space_time_transform(), {1.0, 1.0});
  const auto lv = rkdl::read_loss(terms);

  double mse_want = 0.0;
  for (std::size_t i = 0; i < ds.noisy.numel(); ++i) mse_want += ds.noisy[i] * ds.noisy[i];
  mse_want /= 3.0;
  const double rk_want = 2.0 * 8.0 * (0.2 * c) * (0.2 * c) / 3.0;
  const double grad_want = 8.0 * c * c;
  CHECK(lv.mse == Catch::Approx(mse_want).epsilon(1e-13));
  CHECK(lv.rk == Catch::Approx(rk_want).epsilon(1e-12));
  CHECK(lv.grad == Catch::Approx(grad_want).epsilon(1e-13));
  CHECK(lv.total == Catch::Approx(mse_want + rk_want + grad_want).epsilon(1e-12));
}

TEST_CASE("total composes the three observed terms with the given weights") {
  auto ds = rkdl::make_ode_dataset(rkdl::FhnRhs{}, Tensor::vector({2.0, 0.0}), 0.0, 4.0, 9,
                                   {.level = 0.05}, 7);
  rkdl::Rng rng(3);
  rkdl::ImplicitSineNet implicit({.in_dim = 1, .out_dim = 2, .width = 6, .sine_layers = 2}, rng);
  rkdl::ResidualMlp dyn({.in_dim = 2, .out_dim = 2, .width = 6, .blocks = 1}, rng);
  rkdl::Tape t;
  auto pi = implicit.bind(t);
  auto pd = dyn.bind(t);
  const rkdl::LossWeights w{0.25, 3.0};
  auto terms = rkdl::build_ode_loss(t, implicit, pi, dyn, pd, ds, ds.time_transform(), w);
  const auto lv = rkdl::read_loss(terms);
  CHECK(lv.total == lv.mse + (lv.rk * w.rk + lv.grad * w.grad));
  CHECK(lv.mse > 0.0);
  CHECK(lv.rk > 0.0);
  CHECK(lv.grad > 0.0);
}

TEST_CASE("zero weights silence the dynamics gradient") {
  auto ds = rkdl::make_ode_dataset(rkdl::FhnRhs{}, Tensor::vector({2.0, 0.0}), 0.0, 4.0, 7,
                                   {.level = 0.05}, 7);
  rkdl::Rng rng(4);
  rkdl::ImplicitSineNet implicit({.in_dim = 1, .out_dim = 2, .width = 6, .sine_layers = 2}, rng);
  rkdl::ResidualMlp dyn({.in_dim = 2, .out_dim = 2, .width = 6, .blocks = 1}, rng);
  rkdl::Tape t;
  auto pi = implicit.bind(t);
  auto pd = dyn.bind(t);
  auto terms = rkdl::build_ode_loss(t, implicit, pi, dyn, pd, ds, ds.time_transform(), {0.0, 0.0});
  auto grads = t.backward(terms.total);

  double dyn_norm = 0.0;
  for (Var v : pd) dyn_norm += grads.take(v).max_abs();
  CHECK(dyn_norm == 0.0);
  double imp_norm = 0.0;
  for (Var v : pi) imp_norm += grads.take(v).max_abs();
  CHECK(imp_norm > 0.0);
}

TEST_CASE("one-measurement terms average to the whole-set terms") {
  auto ds = rkdl::make_ode_dataset(rkdl::FhnRhs{}, Tensor::vector({2.0, 0.0}), 0.0, 4.0, 9,
                                   {.level = 0.05}, 7);
  rkdl::Rng rng(3);
  rkdl::ImplicitSineNet implicit({.in_dim = 1, .out_dim = 2, .width = 6, .sine_layers = 2}, rng);
  rkdl::ResidualMlp dyn({.in_dim = 2, .out_dim = 2, .width = 6, .blocks = 1}, rng);
  const auto tf = ds.time_transform();
  const rkdl::LossWeights w{0.25, 3.0};

  rkdl::Tape t;
  auto pi = implicit.bind(t);
  auto pd = dyn.bind(t);
  const auto whole = rkdl::read_loss(rkdl::build_ode_loss(t, implicit, pi, dyn, pd, ds, tf, w));

  rkdl::LossValues acc{};
  for (std::size_t i = 0; i < ds.size(); ++i) {
    rkdl::Tape ti;
    auto qi = implicit.bind(ti);
    auto qd = dyn.bind(ti);
    const auto lv =
        rkdl::read_loss(rkdl::build_ode_sample_loss(ti, implicit, qi, dyn, qd, ds, tf, w, i));
    acc.total += lv.total;
    acc.mse += lv.mse;
    acc.rk += lv.rk;
    acc.grad += lv.grad;
  }
  const double M = double(ds.size());
  CHECK(acc.mse / M == Catch::Approx(whole.mse).epsilon(1e-12));
  CHECK(acc.rk / M == Catch::Approx(whole.rk).epsilon(1e-12));
  CHECK(acc.grad / M == Catch::Approx(whole.grad).epsilon(1e-12));
  CHECK(acc.total / M == Catch::Approx(whole.total).epsilon(1e-12));

  rkdl::Tape tb;
  CHECK_THROWS_AS(rkdl::build_ode_sample_loss(tb, implicit, implicit.bind(tb), dyn, dyn.bind(tb),
                                              ds, tf, w, ds.size()),
                  std::runtime_error);
}

TEST_CASE("single-snapshot terms average to the whole-set terms when statistics are frozen") {
  auto ds = tiny_pde_data();
  rkdl::Rng rng(5);
  rkdl::ImplicitSineNet implicit({.in_dim = 2, .out_dim = 1, .width = 6, .sine_layers = 2}, rng);
  rkdl::ResidualConv1d dyn({.channels = 4, .blocks = 1, .kernel = 3}, rng);
  dyn.set_train(false);
  const auto tf = ds.space_time_transform();
  const rkdl::LossWeights w{0.7, 1.3};

  rkdl::Tape t;
  auto pi = implicit.bind(t);
  auto pd = dyn.bind(t);
  const auto whole = rkdl::read_loss(rkdl::build_pde_loss(t, implicit, pi, dyn, pd, ds, tf, w));

  rkdl::LossValues acc{};
  for (std::size_t i = 0; i < ds.snapshots(); ++i) {
    rkdl::Tape ti;
    auto qi = implicit.bind(ti);
    auto qd = dyn.bind(ti);
    const auto lv =
        rkdl::read_loss(rkdl::build_pde_sample_loss(ti, implicit, qi, dyn, qd, ds, tf, w, i));
    acc.total += lv.total;
    acc.mse += lv.mse;
    acc.rk += lv.rk;
    acc.grad += lv.grad;
  }
  const double T = double(ds.snapshots());
  CHECK(acc.mse / T == Catch::Approx(whole.mse).epsilon(1e-12));
  CHECK(acc.rk / T == Catch::Approx(whole.rk).epsilon(1e-12));
  CHECK(acc.grad / T == Catch::Approx(whole.grad).epsilon(1e-12));
  CHECK(acc.total / T == Catch::Approx(whole.total).epsilon(1e-12));
}

TEST_CASE("one-measurement loss gradients match finite differences") {
  auto ds = rkdl::make_ode_dataset(rkdl::FhnRhs{}, Tensor::vector({2.0, 0.0}), 0.0, 4.0, 6,
                                   {.level = 0.05}, 11);
  rkdl::Rng ri(21), rd(22);
  rkdl::ImplicitSineNet implicit({.in_dim = 1, .out_dim = 2, .width = 4, .sine_layers = 1}, ri);
  rkdl::ResidualMlp dyn({.in_dim = 2, .out_dim = 2, .width = 4, .blocks = 1}, rd);
  const auto tf = ds.time_transform();
  const rkdl::LossWeights w{1.0, 1.0};

  // one interior index with a step pair, and the last index without one
  for (std::size_t i : {std::size_t{1}, ds.size() - 1}) {
    rkdl::Tape t;
    auto pi = implicit.bind(t);
    auto pd = dyn.bind(t);
    auto terms = rkdl::build_ode_sample_loss(t, implicit, pi, dyn, pd, ds, tf, w, i);
    auto grads = t.backward(terms.total);
    std::vector<std::vector<Tensor>> analytic(2);
    for (Var v : pi) analytic[0].push_back(grads.take(v));
    for (Var v : pd) analytic[1].push_back(grads.take(v));

    auto loss_value = [&] {
      rkdl::Tape tt;
      auto qi = implicit.bind(tt);
      auto qd = dyn.bind(tt);
      return rkdl::read_loss(
                 rkdl::build_ode_sample_loss(tt, implicit, qi, dyn, qd, ds, tf, w, i))
          .total;
    };
    const auto rep =
        rkdl::check_gradients({&implicit.store(), &dyn.store()}, analytic, loss_value, 1e-6);
    CHECK(rep.max_rel_err < 1e-4);
  }
}

TEST_CASE("single-snapshot loss gradients match finite differences in eval mode") {
  auto ds = tiny_pde_data();
  rkdl::Rng ri(31), rd(32);
  rkdl::ImplicitSineNet implicit({.in_dim = 2, .out_dim = 1, .width = 4, .sine_layers = 1}, ri);
  rkdl::ResidualConv1d dyn({.channels = 2, .blocks = 1, .kernel = 3}, rd);
  dyn.set_train(false);
  const auto tf = ds.space_time_transform();
  const rkdl::LossWeights w{1.0, 1.0};

  rkdl::Tape t;
  auto pi = implicit.bind(t);
  auto pd = dyn.bind(t);
  auto terms = rkdl::build_pde_sample_loss(t, implicit, pi, dyn, pd, ds, tf, w, 1);
  auto grads = t.backward(terms.total);
  std::vector<std::vector<Tensor>> analytic(2);
  for (Var v : pi) analytic[0].push_back(grads.take(v));
  for (Var v : pd) analytic[1].push_back(grads.take(v));

  auto loss_value = [&] {
    rkdl::Tape tt;
    auto qi = implicit.bind(tt);
    auto qd = dyn.bind(tt);
    return rkdl::read_loss(rkdl::build_pde_sample_loss(tt, implicit, qi, dyn, qd, ds, tf, w, 1))
        .total;
  };
  const auto rep =
      rkdl::check_gradients({&implicit.store(), &dyn.store()}, analytic, loss_value, 1e-6);
  CHECK(rep.max_rel_err < 1e-4);
}

TEST_CASE("trajectory loss needs at least two measurements") {
  rkdl::OdeDataset ds;
  ds.times = {0.0};
  ds.noisy = Tensor::from_rows({{1.0, 2.0}});
  ds.clean = ds.noisy;
  ds.observed = {0, 1};
  rkdl::Rng rng(1);
  rkdl::ImplicitSineNet implicit({.in_dim = 1, .out_dim = 2, .width = 4, .sine_layers = 1}, rng);
  rkdl::ResidualMlp dyn({.in_dim = 2, .out_dim = 2, .width = 4, .blocks = 1}, rng);
  rkdl::Tape t;
  auto pi = implicit.bind(t);
  auto pd = dyn.bind(t);
  auto tf = rkdl::InputTransform::to_unit({{0.0, 1.0}});
  CHECK_THROWS_AS(rkdl::build_ode_loss(t, implicit, pi, dyn, pd, ds, tf, {1.0, 1.0}),
                  std::runtime_error);
}

TEST_CASE("joint trajectory loss gradients match finite differences") {
  auto ds = rkdl::make_ode_dataset(rkdl::FhnRhs{}, Tensor::vector({2.0, 0.0}), 0.0, 4.0, 6,
                                   {.level = 0.05}, 11);
  rkdl::Rng ri(21), rd(22);
  rkdl::ImplicitSineNet implicit({.in_dim = 1, .out_dim = 2, .width = 4, .sine_layers = 1}, ri);
  rkdl::ResidualMlp dyn({.in_dim = 2, .out_dim = 2, .width = 4, .blocks = 1}, rd);
  const auto tf = ds.time_transform();
  const rkdl::LossWeights w{1.0, 1.0};

  rkdl::Tape t;
  auto pi = implicit.bind(t);
  auto pd = dyn.bind(t);
  auto terms = rkdl::build_ode_loss(t, implicit, pi, dyn, pd, ds, tf, w);
  auto grads = t.backward(terms.total);
  std::vector<std::vector<Tensor>> analytic(2);
  for (Var v : pi) analytic[0].push_back(grads.take(v));
  for (Var v : pd) analytic[1].push_back(grads.take(v));

  auto loss_value = [&] {
    rkdl::Tape tt;
    auto qi = implicit.bind(tt);
    auto qd = dyn.bind(tt);
    return rkdl::read_loss(rkdl::build_ode_loss(tt, implicit, qi, dyn, qd, ds, tf, w)).total;
  };
  const auto rep =
      rkdl::check_gradients({&implicit.store(), &dyn.store()}, analytic, loss_value, 1e-6);
  CHECK(rep.checked == implicit.store().param_count() + dyn.store().param_count());
  CHECK(rep.max_rel_err < 1e-4);
}

TEST_CASE("joint field loss gradients match finite differences in eval mode") {
  auto ds = tiny_pde_data();
  rkdl::Rng ri(31), rd(32);
  rkdl::ImplicitSineNet implicit({.in_dim = 2, .out_dim = 1, .width = 4, .sine_layers = 1}, ri);
  rkdl::ResidualConv1d dyn({.channels = 2, .blocks = 1, .kernel = 3}, rd);
  dyn.set_train(false);
  const auto tf = ds.space_time_transform();
  const rkdl::LossWeights w{1.0, 1.0};

  rkdl::Tape t;
  auto pi = implicit.bind(t);
  auto pd = dyn.bind(t);
  auto terms = rkdl::build_pde_loss(t, implicit, pi, dyn, pd, ds, tf, w);
  auto grads = t.backward(terms.total);
  std::vector<std::vector<Tensor>> analytic(2);
  for (Var v : pi) analytic[0].push_back(grads.take(v));
  for (Var v : pd) analytic[1].push_back(grads.take(v));

  auto loss_value = [&] {
    rkdl::Tape tt;
    auto qi = implicit.bind(tt);
    auto qd = dyn.bind(tt);
    return rkdl::read_loss(rkdl::build_pde_loss(tt, implicit, qi, dyn, qd, ds, tf, w)).total;
  };
  const auto rep =
      rkdl::check_gradients({&implicit.store(), &dyn.store()}, analytic, loss_value, 1e-6);
  CHECK(rep.max_rel_err < 1e-4);
}
