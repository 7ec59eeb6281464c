#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "rkdl/tensor.hpp"

namespace rkdl {

class Tape;

// Handle to a node on a tape. Cheap to copy; arithmetic operators below build
// new nodes on the owning tape.
struct Var {
  Tape* tape = nullptr;
  std::int32_t id = -1;

  bool valid() const { return tape != nullptr && id >= 0; }
  const Tensor& value() const;
};

enum class Op : std::uint8_t {
  leaf,
  add,
  sub,
  mul,
  scale,
  linear,
  sine,
  elu,
  elu_grad,
  square,
  sum,
  mean,
  slice_rows,
  reshape,
  concat_cols,
  gather_cols,
  batch_norm,
  conv1d,
};

enum class Activation { sine, elu, identity };

inline const char* activation_name(Activation a) {
  switch (a) {
    case Activation::sine: return "sine";
    case Activation::elu: return "elu";
    case Activation::identity: return "identity";
  }
  return "?";
}

namespace detail {

// y = z W^T + b for z (B,n) or (n); W (m,n), b (m)
inline void linear_forward_into(const Tensor& W, const Tensor& b, const Tensor& z, Tensor& out) {
  const std::size_t m = W.dim(0), n = W.dim(1);
  if (b.rank() != 1 || b.dim(0) != m)
    fail("linear",
         "bias shape " + shape_str(b.shape()) + " does not match weight rows " + std::to_string(m));
  const bool batched = z.rank() == 2;
  const std::size_t B = batched ? z.dim(0) : 1;
  const std::size_t zn = batched ? z.dim(1) : (z.rank() == 1 ? z.dim(0) : 0);
  if (zn != n)
    fail("linear",
         "input shape " + shape_str(z.shape()) + " does not conform to weight " + shape_str(W.shape()));
  if (batched) out.resize({B, m});
  else out.resize({m});
  const double* wp = W.data();
  const double* bp = b.data();
  const double* zp = z.data();
  double* op = out.data();
  for (std::size_t r = 0; r < B; ++r) {
    const double* zr = zp + r * n;
    double* orow = op + r * m;
    for (std::size_t i = 0; i < m; ++i) {
      const double* wr = wp + i * n;
      double acc = bp[i];
      for (std::size_t j = 0; j < n; ++j) acc += wr[j] * zr[j];
      orow[i] = acc;
    }
  }
}

inline Tensor linear_forward(const Tensor& W, const Tensor& b, const Tensor& z) {
  Tensor out;
  linear_forward_into(W, b, z, out);
  return out;
}

inline double elu_scalar(double x) { return x >= 0.0 ? x : std::expm1(x); }

// y[b,co,s] = bias[co] + sum_{ci,t} k[co,ci,t] x[b,ci,(s+t-off) mod S]
inline void conv1d_forward_into(const Tensor& x, const Tensor& k, const Tensor& bias, Tensor& out) {
  if (x.rank() != 3)
    fail("conv1d", "input must be (batch, channels, grid), got " + shape_str(x.shape()));
  if (k.rank() != 3)
    fail("conv1d", "kernel must be (out, in, width), got " + shape_str(k.shape()));
  const std::size_t B = x.dim(0), Cin = x.dim(1), S = x.dim(2);
  const std::size_t Cout = k.dim(0), K = k.dim(2);
  if (k.dim(1) != Cin)
    fail("conv1d",
         "kernel expects " + std::to_string(k.dim(1)) + " input channels, input has " + std::to_string(Cin));
  require(bias.rank() == 1 && bias.dim(0) == Cout, "conv1d", "bias shape mismatch");
  require(K % 2 == 1 && K <= S, "conv1d", "kernel width must be odd and not exceed the grid");
  const std::ptrdiff_t off = std::ptrdiff_t(K / 2);
  out.resize({B, Cout, S});
  for (std::size_t bb = 0; bb < B; ++bb) {
    for (std::size_t co = 0; co < Cout; ++co) {
      double* orow = out.data() + (bb * Cout + co) * S;
      for (std::size_t s = 0; s < S; ++s) orow[s] = bias[co];
      for (std::size_t ci = 0; ci < Cin; ++ci) {
        const double* xr = x.data() + (bb * Cin + ci) * S;
        for (std::size_t t = 0; t < K; ++t) {
          const double w = k.at(co, ci, t);
          const std::ptrdiff_t d = std::ptrdiff_t(t) - off;
          for (std::size_t s = 0; s < S; ++s) {
            std::ptrdiff_t src = std::ptrdiff_t(s) + d;
            if (src < 0) src += std::ptrdiff_t(S);
            else if (src >= std::ptrdiff_t(S)) src -= std::ptrdiff_t(S);
            orow[s] += w * xr[src];
          }
        }
      }
    }
  }
}

inline Tensor conv1d_forward(const Tensor& x, const Tensor& k, const Tensor& bias) {
  Tensor out;
  conv1d_forward_into(x, k, bias, out);
  return out;
}

}  // namespace detail

// Fields beyond op/in/value are op-specific; a slot recycled for a different
// op keeps the unused ones as stale storage that its ops never read.
struct Node {
  Op op = Op::leaf;
  std::array<std::int32_t, 3> in{{-1, -1, -1}};
  Tensor value;
  double c = 0.0;                    // scale factor / bn epsilon
  std::size_t a = 0, b = 0;          // slice_rows range; concat split point
  std::vector<std::size_t> cols;     // gather_cols indices
  Tensor bn_mean, bn_invstd;         // batch_norm cached statistics
  bool bn_train = false;
  bool trainable = false;            // leaf only
};

// Collected adjoints of one backward pass, indexed by node id. Unreached
// leaves read back as zeros of the leaf shape.
class Gradients {
 public:
  Gradients() = default;
  Gradients(std::vector<Tensor> adj, std::vector<std::vector<std::size_t>> shapes)
      : adj_(std::move(adj)), shapes_(std::move(shapes)) {}

  bool reached(Var v) const {
    return v.id >= 0 && std::size_t(v.id) < adj_.size() && !adj_[v.id].empty();
  }

  const Tensor& at(Var v) const {
    detail::require(reached(v), "Gradients::at", "node was not reached by backward");
    return adj_[v.id];
  }

  Tensor take(Var v) {
    if (reached(v)) {
      shapes_[v.id] = adj_[v.id].shape();
      return std::move(adj_[v.id]);
    }
    detail::require(v.id >= 0 && std::size_t(v.id) < shapes_.size(), "Gradients::take", "bad node id");
    return Tensor(shapes_[v.id]);
  }

 private:
  std::vector<Tensor> adj_;
  std::vector<std::vector<std::size_t>> shapes_;
};

// Append-only record of primitive operations. Nodes are in topological order
// by construction; backward walks them once in reverse. reset() keeps the node
// storage, so rebuilding a graph of the same shape reuses every allocation;
// the tape holds the high-water mark of the graphs it has carried.
// Single-threaded.
class Tape {
 public:
  void reset() { live_ = 0; }
  std::size_t size() const { return live_; }

  const Tensor& value(Var v) const { return node(v).value; }
  const Node& node(Var v) const {
    detail::require(v.tape == this && v.id >= 0 && std::size_t(v.id) < live_, "Tape",
                    "variable does not belong to this tape");
    return nodes_[v.id];
  }

  Var leaf(Tensor v, bool trainable = false) {
    Node& n = begin_node(Op::leaf);
    n.trainable = trainable;
    n.value = std::move(v);
    return commit_node();
  }

  // copy-in leaf; a recycled slot of the same shape absorbs it without allocating
  Var leaf_copy(const Tensor& v, bool trainable = false) {
    Node& n = begin_node(Op::leaf);
    n.trainable = trainable;
    n.value = v;
    return commit_node();
  }

  Var constant(Tensor v) { return leaf(std::move(v), false); }

  // constant shaped like x, filled with one value
  Var constant_like(Var x, double fill) {
    node(x);
    Node& n = begin_node(Op::leaf);
    n.value.resize_like(nodes_[x.id].value);
    n.value.fill(fill);
    return commit_node();
  }

  Var add(Var x, Var y) { return binary_same(Op::add, x, y, "add"); }
  Var sub(Var x, Var y) { return binary_same(Op::sub, x, y, "sub"); }
  Var mul(Var x, Var y) { return binary_same(Op::mul, x, y, "mul"); }

  Var scale(Var x, double c) {
    node(x);
    Node& n = begin_node(Op::scale, x.id);
    n.c = c;
    const Tensor& v = nodes_[x.id].value;
    n.value.resize_like(v);
    double* o = n.value.data();
    const double* p = v.data();
    for (std::size_t i = 0; i < v.numel(); ++i) o[i] = p[i] * c;
    return commit_node();
  }

  Var linear(Var W, Var b, Var z) {
    node(W);
    node(b);
    node(z);
    Node& n = begin_node(Op::linear, W.id, b.id, z.id);
    detail::linear_forward_into(nodes_[W.id].value, nodes_[b.id].value, nodes_[z.id].value, n.value);
    return commit_node();
  }

  Var activation(Activation kind, Var z) {
    switch (kind) {
      case Activation::sine: return sine(z);
      case Activation::elu: return elu(z);
      case Activation::identity: return z;
    }
    detail::fail("Tape::activation", "unsupported activation kind");
  }

  Var sine(Var x) {
    return unary_map(Op::sine, x, [](double v) { return std::sin(v); });
  }

  Var elu(Var x) {
    return unary_map(Op::elu, x, detail::elu_scalar);
  }

  // d/dx elu(x); its own backward gives the exact second derivative of elu
  Var elu_grad(Var x) {
    return unary_map(Op::elu_grad, x, [](double v) { return v >= 0.0 ? 1.0 : std::exp(v); });
  }

  Var square(Var x) {
    return unary_map(Op::square, x, [](double v) { return v * v; });
  }

  Var sum(Var x) {
    node(x);
    Node& n = begin_node(Op::sum, x.id);
    const double s = nodes_[x.id].value.sum();
    n.value.resize({1});
    n.value[0] = s;
    return commit_node();
  }

  Var mean(Var x) {
    node(x);
    Node& n = begin_node(Op::mean, x.id);
    const double s = nodes_[x.id].value.mean();
    n.value.resize({1});
    n.value[0] = s;
    return commit_node();
  }

  // rows [begin, end) along the first axis
  Var slice_rows(Var x, std::size_t begin, std::size_t end) {
    {
      const Tensor& v = value(x);
      detail::require(v.rank() >= 1, "slice_rows", "rank >= 1 required");
      if (begin >= end || end > v.dim(0))
        detail::fail("slice_rows",
                     "range [" + std::to_string(begin) + "," + std::to_string(end) + ") out of " +
                         std::to_string(v.dim(0)) + " rows");
    }
    Node& n = begin_node(Op::slice_rows, x.id);
    n.a = begin;
    n.b = end;
    const Tensor& v = nodes_[x.id].value;
    const std::size_t stride = v.numel() / v.dim(0);
    shape_scratch_ = v.shape();
    shape_scratch_[0] = end - begin;
    n.value.resize(shape_scratch_);
    std::copy(v.data() + begin * stride, v.data() + end * stride, n.value.data());
    return commit_node();
  }

  Var reshape(Var x, const std::vector<std::size_t>& shape) {
    node(x);
    Node& n = begin_node(Op::reshape, x.id);
    const Tensor& v = nodes_[x.id].value;
    n.value.resize(shape);
    if (n.value.numel() != v.numel())
      detail::fail("Tape::reshape",
                   "cannot reshape " + detail::shape_str(v.shape()) + " to " + detail::shape_str(shape));
    std::copy(v.data(), v.data() + v.numel(), n.value.data());
    return commit_node();
  }

  Var concat_cols(Var x, Var y) {
    {
      const Tensor& a = value(x);
      const Tensor& b = value(y);
      if (a.rank() != 2 || b.rank() != 2 || a.dim(0) != b.dim(0))
        detail::fail("concat_cols",
                     "rank-2 tensors with equal row count required, got " + detail::shape_str(a.shape()) +
                         " and " + detail::shape_str(b.shape()));
    }
    Node& n = begin_node(Op::concat_cols, x.id, y.id);
    const Tensor& a = nodes_[x.id].value;
    const Tensor& b = nodes_[y.id].value;
    const std::size_t B = a.dim(0), p = a.dim(1), q = b.dim(1);
    n.a = p;
    n.value.resize({B, p + q});
    for (std::size_t r = 0; r < B; ++r) {
      std::copy(a.data() + r * p, a.data() + (r + 1) * p, n.value.data() + r * (p + q));
      std::copy(b.data() + r * q, b.data() + (r + 1) * q, n.value.data() + r * (p + q) + p);
    }
    return commit_node();
  }

  Var gather_cols(Var x, std::vector<std::size_t> cols) {
    {
      const Tensor& v = value(x);
      detail::require(v.rank() == 2, "gather_cols", "rank-2 tensor required");
      for (std::size_t c : cols)
        detail::require(c < v.dim(1), "gather_cols", "column index out of range");
    }
    Node& n = begin_node(Op::gather_cols, x.id);
    n.cols = std::move(cols);
    const Tensor& v = nodes_[x.id].value;
    const std::size_t B = v.dim(0), k = n.cols.size();
    n.value.resize({B, k});
    for (std::size_t r = 0; r < B; ++r)
      for (std::size_t j = 0; j < k; ++j) n.value.at(r, j) = v.at(r, n.cols[j]);
    return commit_node();
  }

  // x (B,C,S) normalized per channel over batch and grid axes.
  // Train mode uses batch statistics (biased variance) and updates the
  // external running stats in place; eval mode normalizes by the running
  // stats. run_mean/run_var may be null only in train mode.
  Var batch_norm(Var x, Var gamma, Var beta, Tensor* run_mean, Tensor* run_var, bool train,
                 double momentum = 0.1, double eps = 1e-5) {
    {
      const Tensor& v = value(x);
      detail::require(v.rank() == 3, "batch_norm", "input must be (batch, channels, grid)");
      const Tensor& g = value(gamma);
      const Tensor& be = value(beta);
      if (g.rank() != 1 || g.dim(0) != v.dim(1) || !be.same_shape(g))
        detail::fail("batch_norm",
                     "scale/shift must be per-channel vectors of length " + std::to_string(v.dim(1)));
      if (train) detail::require(v.dim(0) * v.dim(2) >= 2, "batch_norm",
                                 "train mode needs at least 2 elements per channel");
      else detail::require(run_mean && run_var, "batch_norm", "eval mode requires running statistics");
    }
    Node& n = begin_node(Op::batch_norm, x.id, gamma.id, beta.id);
    const Tensor& v = nodes_[x.id].value;
    const Tensor& g = nodes_[gamma.id].value;
    const Tensor& be = nodes_[beta.id].value;
    const std::size_t B = v.dim(0), C = v.dim(1), S = v.dim(2);
    const std::size_t N = B * S;
    n.c = eps;
    n.bn_train = train;
    n.bn_mean.resize({C});
    n.bn_invstd.resize({C});
    if (train) {
      for (std::size_t c = 0; c < C; ++c) {
        double s = 0.0;
        for (std::size_t bb = 0; bb < B; ++bb) {
          const double* xr = v.data() + (bb * C + c) * S;
          for (std::size_t k = 0; k < S; ++k) s += xr[k];
        }
        const double mu = s / double(N);
        double sq = 0.0;
        for (std::size_t bb = 0; bb < B; ++bb) {
          const double* xr = v.data() + (bb * C + c) * S;
          for (std::size_t k = 0; k < S; ++k) sq += (xr[k] - mu) * (xr[k] - mu);
        }
        const double var = sq / double(N);
        n.bn_mean[c] = mu;
        n.bn_invstd[c] = 1.0 / std::sqrt(var + eps);
        if (run_mean && run_var) {
          (*run_mean)[c] = (1.0 - momentum) * (*run_mean)[c] + momentum * mu;
          (*run_var)[c] = (1.0 - momentum) * (*run_var)[c] + momentum * var;
        }
      }
    } else {
      for (std::size_t c = 0; c < C; ++c) {
        n.bn_mean[c] = (*run_mean)[c];
        n.bn_invstd[c] = 1.0 / std::sqrt((*run_var)[c] + eps);
      }
    }
    n.value.resize({B, C, S});
    for (std::size_t bb = 0; bb < B; ++bb)
      for (std::size_t c = 0; c < C; ++c) {
        const double* xr = v.data() + (bb * C + c) * S;
        double* orow = n.value.data() + (bb * C + c) * S;
        const double mu = n.bn_mean[c], is = n.bn_invstd[c];
        for (std::size_t k = 0; k < S; ++k) orow[k] = g[c] * ((xr[k] - mu) * is) + be[c];
      }
    return commit_node();
  }

  Var conv1d_periodic(Var x, Var kernel, Var bias) {
    node(x);
    node(kernel);
    node(bias);
    Node& n = begin_node(Op::conv1d, x.id, kernel.id, bias.id);
    detail::conv1d_forward_into(nodes_[x.id].value, nodes_[kernel.id].value, nodes_[bias.id].value,
                                n.value);
    return commit_node();
  }

  // Reverse pass from a scalar loss node. Visits each node at most once;
  // returns adjoints for every reached node (leaves included).
  Gradients backward(Var loss) const {
    std::vector<Tensor> adj;
    std::vector<char> reached;
    backward_into(loss, adj, reached);
    // shapes are only consulted for unreached nodes, so skip the rest
    std::vector<std::vector<std::size_t>> shapes(live_);
    for (std::size_t i = 0; i < live_; ++i)
      if (!reached[i]) shapes[i] = nodes_[i].value.shape();
    return Gradients(std::move(adj), std::move(shapes));
  }

  // Same pass into caller-held buffers, reusing their allocations across
  // calls; reached[i] marks the entries of adj that carry this pass.
  void backward_into(Var loss, std::vector<Tensor>& adj, std::vector<char>& reached) const {
    detail::require(loss.tape == this, "backward", "loss is not on this tape");
    if (value(loss).numel() != 1)
      detail::fail("backward",
                   "loss must be scalar, got shape " + detail::shape_str(value(loss).shape()));
    adj.resize(live_);
    reached.assign(live_, 0);
    slot(adj, reached, loss.id, nodes_[loss.id].value)[0] = 1.0;
    for (std::int32_t i = loss.id; i >= 0; --i) {
      if (!reached[i]) continue;
      propagate(nodes_[i], adj[i], adj, reached);
    }
  }

 private:
  Node& begin_node(Op op, std::int32_t i0 = -1, std::int32_t i1 = -1, std::int32_t i2 = -1) {
    if (live_ == nodes_.size()) nodes_.emplace_back();
    Node& n = nodes_[live_];
    n.op = op;
    n.in = {i0, i1, i2};
    n.c = 0.0;
    n.a = 0;
    n.b = 0;
    n.bn_train = false;
    n.trainable = false;
    return n;
  }

  Var commit_node() { return Var{this, std::int32_t(live_++)}; }

  Var binary_same(Op op, Var x, Var y, const char* name) {
    {
      const Tensor& a = value(x);
      const Tensor& b = value(y);
      if (!a.same_shape(b))
        detail::fail(name,
                     "shape mismatch " + detail::shape_str(a.shape()) + " vs " + detail::shape_str(b.shape()));
    }
    Node& n = begin_node(op, x.id, y.id);
    const Tensor& a = nodes_[x.id].value;
    const Tensor& b = nodes_[y.id].value;
    n.value.resize_like(a);
    double* o = n.value.data();
    const double* pa = a.data();
    const double* pb = b.data();
    const std::size_t m = a.numel();
    if (op == Op::add)
      for (std::size_t i = 0; i < m; ++i) o[i] = pa[i] + pb[i];
    else if (op == Op::sub)
      for (std::size_t i = 0; i < m; ++i) o[i] = pa[i] - pb[i];
    else
      for (std::size_t i = 0; i < m; ++i) o[i] = pa[i] * pb[i];
    return commit_node();
  }

  template <class F>
  Var unary_map(Op op, Var x, F f) {
    node(x);
    Node& n = begin_node(op, x.id);
    const Tensor& v = nodes_[x.id].value;
    n.value.resize_like(v);
    double* o = n.value.data();
    const double* p = v.data();
    for (std::size_t i = 0; i < v.numel(); ++i) o[i] = f(p[i]);
    return commit_node();
  }

  static Tensor& slot(std::vector<Tensor>& adj, std::vector<char>& reached, std::int32_t id,
                      const Tensor& like) {
    Tensor& t = adj[id];
    if (!reached[id]) {
      t.resize_like(like);
      t.fill(0.0);
      reached[id] = 1;
    }
    return t;
  }

  void propagate(const Node& n, const Tensor& g, std::vector<Tensor>& adj,
                 std::vector<char>& reached) const {
    switch (n.op) {
      case Op::leaf:
        return;
      case Op::add: {
        slot(adj, reached, n.in[0], nodes_[n.in[0]].value) += g;
        slot(adj, reached, n.in[1], nodes_[n.in[1]].value) += g;
        return;
      }
      case Op::sub: {
        slot(adj, reached, n.in[0], nodes_[n.in[0]].value) += g;
        slot(adj, reached, n.in[1], nodes_[n.in[1]].value) -= g;
        return;
      }
      case Op::mul: {
        const Tensor& a = nodes_[n.in[0]].value;
        const Tensor& b = nodes_[n.in[1]].value;
        Tensor& da = slot(adj, reached, n.in[0], a);
        Tensor& db = slot(adj, reached, n.in[1], b);
        for (std::size_t i = 0; i < g.numel(); ++i) {
          da[i] += g[i] * b[i];
          db[i] += g[i] * a[i];
        }
        return;
      }
      case Op::scale: {
        Tensor& dx = slot(adj, reached, n.in[0], nodes_[n.in[0]].value);
        for (std::size_t i = 0; i < g.numel(); ++i) dx[i] += n.c * g[i];
        return;
      }
      case Op::linear: {
        backward_linear(n, g, adj, reached);
        return;
      }
      case Op::sine: {
        const Tensor& x = nodes_[n.in[0]].value;
        Tensor& dx = slot(adj, reached, n.in[0], x);
        for (std::size_t i = 0; i < g.numel(); ++i) dx[i] += g[i] * std::cos(x[i]);
        return;
      }
      case Op::elu: {
        const Tensor& x = nodes_[n.in[0]].value;
        Tensor& dx = slot(adj, reached, n.in[0], x);
        for (std::size_t i = 0; i < g.numel(); ++i)
          dx[i] += g[i] * (x[i] >= 0.0 ? 1.0 : n.value[i] + 1.0);  // exp(x) = elu(x)+1 below 0
        return;
      }
      case Op::elu_grad: {
        const Tensor& x = nodes_[n.in[0]].value;
        Tensor& dx = slot(adj, reached, n.in[0], x);
        for (std::size_t i = 0; i < g.numel(); ++i)
          dx[i] += g[i] * (x[i] >= 0.0 ? 0.0 : n.value[i]);  // d/dx exp(x) = exp(x)
        return;
      }
      case Op::square: {
        const Tensor& x = nodes_[n.in[0]].value;
        Tensor& dx = slot(adj, reached, n.in[0], x);
        for (std::size_t i = 0; i < g.numel(); ++i) dx[i] += 2.0 * g[i] * x[i];
        return;
      }
      case Op::sum: {
        const Tensor& x = nodes_[n.in[0]].value;
        Tensor& dx = slot(adj, reached, n.in[0], x);
        const double s = g[0];
        for (std::size_t i = 0; i < dx.numel(); ++i) dx[i] += s;
        return;
      }
      case Op::mean: {
        const Tensor& x = nodes_[n.in[0]].value;
        Tensor& dx = slot(adj, reached, n.in[0], x);
        const double s = g[0] / double(x.numel());
        for (std::size_t i = 0; i < dx.numel(); ++i) dx[i] += s;
        return;
      }
      case Op::slice_rows: {
        const Tensor& x = nodes_[n.in[0]].value;
        Tensor& dx = slot(adj, reached, n.in[0], x);
        const std::size_t stride = x.numel() / x.dim(0);
        double* d = dx.data() + n.a * stride;
        for (std::size_t i = 0; i < g.numel(); ++i) d[i] += g[i];
        return;
      }
      case Op::reshape: {
        const Tensor& x = nodes_[n.in[0]].value;
        Tensor& dx = slot(adj, reached, n.in[0], x);
        for (std::size_t i = 0; i < g.numel(); ++i) dx[i] += g[i];
        return;
      }
      case Op::concat_cols: {
        const Tensor& a = nodes_[n.in[0]].value;
        const Tensor& b = nodes_[n.in[1]].value;
        Tensor& da = slot(adj, reached, n.in[0], a);
        Tensor& db = slot(adj, reached, n.in[1], b);
        const std::size_t B = a.dim(0), p = n.a, q = b.dim(1);
        for (std::size_t r = 0; r < B; ++r) {
          const double* gr = g.data() + r * (p + q);
          for (std::size_t j = 0; j < p; ++j) da[r * p + j] += gr[j];
          for (std::size_t j = 0; j < q; ++j) db[r * q + j] += gr[p + j];
        }
        return;
      }
      case Op::gather_cols: {
        const Tensor& x = nodes_[n.in[0]].value;
        Tensor& dx = slot(adj, reached, n.in[0], x);
        const std::size_t B = x.dim(0), k = n.cols.size();
        for (std::size_t r = 0; r < B; ++r)
          for (std::size_t j = 0; j < k; ++j) dx.at(r, n.cols[j]) += g.at(r, j);
        return;
      }
      case Op::batch_norm: {
        backward_batch_norm(n, g, adj, reached);
        return;
      }
      case Op::conv1d: {
        backward_conv1d(n, g, adj, reached);
        return;
      }
    }
  }

  void backward_linear(const Node& n, const Tensor& g, std::vector<Tensor>& adj,
                       std::vector<char>& reached) const {
    const Tensor& W = nodes_[n.in[0]].value;
    const Tensor& b = nodes_[n.in[1]].value;
    const Tensor& z = nodes_[n.in[2]].value;
    const std::size_t m = W.dim(0), nn = W.dim(1);
    const bool batched = z.rank() == 2;
    const std::size_t B = batched ? z.dim(0) : 1;
    Tensor& dW = slot(adj, reached, n.in[0], W);
    Tensor& db = slot(adj, reached, n.in[1], b);
    Tensor& dz = slot(adj, reached, n.in[2], z);
    const double* gp = g.data();
    const double* zp = z.data();
    const double* wp = W.data();
    double* dwp = dW.data();
    double* dbp = db.data();
    double* dzp = dz.data();
    for (std::size_t r = 0; r < B; ++r) {
      const double* gr = gp + r * m;
      const double* zr = zp + r * nn;
      double* dzr = dzp + r * nn;
      for (std::size_t i = 0; i < m; ++i) {
        const double gi = gr[i];
        dbp[i] += gi;
        const double* wr = wp + i * nn;
        double* dwr = dwp + i * nn;
        for (std::size_t j = 0; j < nn; ++j) {
          dwr[j] += gi * zr[j];
          dzr[j] += gi * wr[j];
        }
      }
    }
  }

  void backward_batch_norm(const Node& n, const Tensor& g, std::vector<Tensor>& adj,
                           std::vector<char>& reached) const {
    const Tensor& x = nodes_[n.in[0]].value;
    const Tensor& gamma = nodes_[n.in[1]].value;
    const std::size_t B = x.dim(0), C = x.dim(1), S = x.dim(2);
    const std::size_t N = B * S;
    Tensor& dx = slot(adj, reached, n.in[0], x);
    Tensor& dgamma = slot(adj, reached, n.in[1], gamma);
    Tensor& dbeta = slot(adj, reached, n.in[2], gamma);
    for (std::size_t c = 0; c < C; ++c) {
      const double mu = n.bn_mean[c], is = n.bn_invstd[c], gm = gamma[c];
      double sum_g = 0.0, sum_gx = 0.0;
      for (std::size_t bb = 0; bb < B; ++bb) {
        const double* xr = x.data() + (bb * C + c) * S;
        const double* gr = g.data() + (bb * C + c) * S;
        for (std::size_t k = 0; k < S; ++k) {
          sum_g += gr[k];
          sum_gx += gr[k] * (xr[k] - mu) * is;
        }
      }
      dbeta[c] += sum_g;
      dgamma[c] += sum_gx;
      if (n.bn_train) {
        const double inv_n = 1.0 / double(N);
        for (std::size_t bb = 0; bb < B; ++bb) {
          const double* xr = x.data() + (bb * C + c) * S;
          const double* gr = g.data() + (bb * C + c) * S;
          double* dr = dx.data() + (bb * C + c) * S;
          for (std::size_t k = 0; k < S; ++k) {
            const double xh = (xr[k] - mu) * is;
            dr[k] += gm * is * (gr[k] - sum_g * inv_n - xh * sum_gx * inv_n);
          }
        }
      } else {
        for (std::size_t bb = 0; bb < B; ++bb) {
          const double* gr = g.data() + (bb * C + c) * S;
          double* dr = dx.data() + (bb * C + c) * S;
          for (std::size_t k = 0; k < S; ++k) dr[k] += gm * is * gr[k];
        }
      }
    }
  }

  void backward_conv1d(const Node& n, const Tensor& g, std::vector<Tensor>& adj,
                       std::vector<char>& reached) const {
    const Tensor& x = nodes_[n.in[0]].value;
    const Tensor& k = nodes_[n.in[1]].value;
    const std::size_t B = x.dim(0), Cin = x.dim(1), S = x.dim(2);
    const std::size_t Cout = k.dim(0), K = k.dim(2);
    const std::ptrdiff_t off = std::ptrdiff_t(K / 2);
    Tensor& dx = slot(adj, reached, n.in[0], x);
    Tensor& dk = slot(adj, reached, n.in[1], k);
    Tensor& db = slot(adj, reached, n.in[2], nodes_[n.in[2]].value);
    for (std::size_t bb = 0; bb < B; ++bb) {
      for (std::size_t co = 0; co < Cout; ++co) {
        const double* gr = g.data() + (bb * Cout + co) * S;
        for (std::size_t s = 0; s < S; ++s) db[co] += gr[s];
        for (std::size_t ci = 0; ci < Cin; ++ci) {
          const double* xr = x.data() + (bb * Cin + ci) * S;
          double* dxr = dx.data() + (bb * Cin + ci) * S;
          for (std::size_t t = 0; t < K; ++t) {
            const std::ptrdiff_t d = std::ptrdiff_t(t) - off;
            const double w = k.at(co, ci, t);
            double acc = 0.0;
            for (std::size_t s = 0; s < S; ++s) {
              std::ptrdiff_t src = std::ptrdiff_t(s) + d;
              if (src < 0) src += std::ptrdiff_t(S);
              else if (src >= std::ptrdiff_t(S)) src -= std::ptrdiff_t(S);
              acc += gr[s] * xr[src];
              dxr[src] += gr[s] * w;
            }
            dk.at(co, ci, t) += acc;
          }
        }
      }
    }
  }

  std::vector<Node> nodes_;
  std::size_t live_ = 0;
  std::vector<std::size_t> shape_scratch_;
};

inline const Tensor& Var::value() const {
  detail::require(tape != nullptr, "Var::value", "unbound variable");
  return tape->value(*this);
}

inline Var operator+(Var a, Var b) { return a.tape->add(a, b); }
inline Var operator-(Var a, Var b) { return a.tape->sub(a, b); }
inline Var operator*(Var a, Var b) { return a.tape->mul(a, b); }
inline Var operator*(double c, Var a) { return a.tape->scale(a, c); }
inline Var operator*(Var a, double c) { return a.tape->scale(a, c); }

inline Var square(Var v) { return v.tape->square(v); }
inline Var sum(Var v) { return v.tape->sum(v); }
inline Var mean(Var v) { return v.tape->mean(v); }

}  // namespace rkdl
