#include <cmath>

#include "catch_amalgamated.hpp"
#include "rkdl/dual.hpp"
#include "rkdl/networks.hpp"
#include "rkdl/random.hpp"

using rkdl::DualVar;
using rkdl::Tape;
using rkdl::Tensor;
using rkdl::Var;

TEST_CASE("dual arithmetic carries exact tangents") {
  Tape t;
  // x = 2 with dx = 1, y = 3 with dy = 0.5
  DualVar x = rkdl::dual_leaf(t, Tensor::scalar(2.0), Tensor::scalar(1.0));
  DualVar y = rkdl::dual_leaf(t, Tensor::scalar(3.0), Tensor::scalar(0.5));

  DualVar s = x + y;
  CHECK(s.primal.value()[0] == 5.0);
  CHECK(s.tangent.value()[0] == 1.5);

  DualVar d = x - y;
  CHECK(d.tangent.value()[0] == 0.5);

  DualVar p = x * y;  // d(xy) = dx y + x dy = 3 + 1 = 4
  CHECK(p.primal.value()[0] == 6.0);
  CHECK(p.tangent.value()[0] == 4.0);

  DualVar c = 3.0 * x;
  CHECK(c.tangent.value()[0] == 3.0);

  DualVar q = rkdl::square(x);  // d(x^2) = 2x dx = 4
  CHECK(q.primal.value()[0] == 4.0);
  CHECK(q.tangent.value()[0] == 4.0);
}

TEST_CASE("sine and elu tangents match analytic derivatives") {
  Tape t;
  Tensor v = Tensor::vector({-1.2, -0.3, 0.4, 2.0});
  Tensor dv = Tensor::vector({1.0, 2.0, -1.0, 0.5});
  DualVar x = rkdl::dual_leaf(t, v, dv);

  DualVar s = rkdl::sine(x);
  for (std::size_t i = 0; i < 4; ++i) {
    CHECK(s.primal.value()[i] == Catch::Approx(std::sin(v[i])).epsilon(1e-15));
    CHECK(s.tangent.value()[i] == Catch::Approx(std::cos(v[i]) * dv[i]).epsilon(1e-12));
  }

  DualVar e = rkdl::elu(x);
  for (std::size_t i = 0; i < 4; ++i) {
    const double de = v[i] >= 0.0 ? 1.0 : std::exp(v[i]);
    CHECK(e.tangent.value()[i] == Catch::Approx(de * dv[i]).epsilon(1e-14));
  }
}

TEST_CASE("linear dual applies the weight to the tangent without the bias") {
  Tape t;
  Tensor W = Tensor::from_rows({{1.0, -2.0}, {0.5, 4.0}});
  Tensor b = Tensor::vector({10.0, 20.0});
  DualVar z = rkdl::dual_leaf(t, Tensor::vector({1.0, 1.0}), Tensor::vector({2.0, -1.0}));
  DualVar y = rkdl::linear(t.leaf(W), t.leaf(b), z);
  CHECK(y.primal.value()[0] == 9.0);    // 1 - 2 + 10
  CHECK(y.primal.value()[1] == 24.5);   // .5 + 4 + 20
  CHECK(y.tangent.value()[0] == 4.0);   // 1*2 + (-2)(-1), no bias
  CHECK(y.tangent.value()[1] == -3.0);  // .5*2 + 4*(-1)
}

TEST_CASE("network input tangent equals finite difference of the primal") {
  rkdl::Rng rng(17);
  rkdl::ImplicitSineNet net({1, 2, 12, 3, 30.0}, rng);

  const double t0 = 0.37;
  Tape tape;
  auto p = net.bind(tape);
  Tensor in({1, 1});
  in.at(0, 0) = t0;
  DualVar out = net.forward(tape, p, rkdl::dual_leaf(tape, in, Tensor::full({1, 1}, 1.0)));

  const double h = 1e-7;
  Tensor ip({1, 1}), im({1, 1});
  ip.at(0, 0) = t0 + h;
  im.at(0, 0) = t0 - h;
  const Tensor fp = net.predict(ip), fm = net.predict(im);
  for (std::size_t c = 0; c < 2; ++c) {
    const double fd = (fp.at(0, c) - fm.at(0, c)) / (2.0 * h);
    CHECK(out.tangent.value().at(0, c) == Catch::Approx(fd).margin(1e-5));
  }
}

TEST_CASE("parameter gradient of the tangent equals finite difference of the tangent") {
  // d/dtheta of (d/dt net(t)) via reverse over the tangent head
  rkdl::Rng rng(23);
  rkdl::ImplicitSineNet net({1, 1, 6, 2, 30.0}, rng);

  auto tangent_value = [&]() {
    Tape tape;
    auto p = net.bind(tape);
    Tensor in = Tensor::full({1, 1}, 0.21);
    DualVar out = net.forward(tape, p, rkdl::dual_leaf(tape, in, Tensor::full({1, 1}, 1.0)));
    return out.tangent.value()[0];
  };

  Tape tape;
  auto p = net.bind(tape);
  Tensor in = Tensor::full({1, 1}, 0.21);
  DualVar out = net.forward(tape, p, rkdl::dual_leaf(tape, in, Tensor::full({1, 1}, 1.0)));
  auto grads = tape.backward(tape.sum(out.tangent));

  auto& params = net.store().params();
  const double step = 1e-6;
  for (std::size_t pi = 0; pi < params.size(); ++pi) {
    const Tensor g = grads.take(p[pi]);
    for (std::size_t k = 0; k < params[pi].value.numel(); ++k) {
      const double saved = params[pi].value[k];
      params[pi].value[k] = saved + step;
      const double up = tangent_value();
      params[pi].value[k] = saved - step;
      const double dn = tangent_value();
      params[pi].value[k] = saved;
      const double fd = (up - dn) / (2.0 * step);
      const double rel = std::abs(fd - g[k]) / std::max(1e-8, std::abs(fd) + std::abs(g[k]));
      INFO(params[pi].name << "[" << k << "] fd " << fd << " analytic " << g[k]);
      CHECK(rel < 1e-4);
    }
  }
}

TEST_CASE("dual structural ops act on both halves") {
  Tape t;
  Tensor v({3, 2});
  Tensor dv({3, 2});
  for (std::size_t i = 0; i < 6; ++i) {
    v[i] = double(i);
    dv[i] = 10.0 * double(i);
  }
  DualVar x = rkdl::dual_leaf(t, v, dv);

  DualVar s = rkdl::slice_rows(x, 1, 2);
  CHECK(s.primal.value().at(0, 1) == 3.0);
  CHECK(s.tangent.value().at(0, 1) == 30.0);

  DualVar r = rkdl::reshape(x, {2, 3});
  CHECK(r.tangent.value().at(1, 0) == 30.0);

  DualVar g = rkdl::gather_cols(x, {1});
  CHECK(g.primal.value().at(2, 0) == 5.0);
  CHECK(g.tangent.value().at(2, 0) == 50.0);

  DualVar c = rkdl::concat_cols(x, g);
  CHECK(c.primal.value().cols() == 3);
  CHECK(c.tangent.value().at(0, 2) == 10.0);

  DualVar k = rkdl::dual_const(t, Tensor::full({3, 2}, 7.0));
  CHECK(k.tangent.value().max_abs() == 0.0);
}
