#pragma once

#include <array>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <string>
#include <vector>

#include "rkdl/networks.hpp"
#include "rkdl/random.hpp"

namespace rkdl {

enum class NetKind : std::uint32_t {
  implicit_sine = 1,
  residual_mlp = 2,
  residual_conv1d = 3,
};

struct CheckpointEntry {
  std::string name;
  bool trainable = true;
  Tensor value;
};

// Self-describing snapshot of one network: the four architecture dimensions
// are (in, out, width, depth) for dense nets and (channels, blocks, kernel, 0)
// for the convolutional one. Byte layout documented in docs/checkpoint-format.md.
struct Checkpoint {
  NetKind kind = NetKind::implicit_sine;
  std::array<std::uint32_t, 4> dims{};
  double omega0 = 0.0;
  std::vector<CheckpointEntry> tensors;
};

namespace detail {

constexpr char kCkptMagic[8] = {'R', 'K', 'D', 'L', 'C', 'K', 'P', 'T'};
constexpr std::uint32_t kCkptVersion = 1;

inline void put_u32(std::ofstream& out, std::uint32_t v) {
  out.write(reinterpret_cast<const char*>(&v), sizeof(v));
}
inline void put_f64(std::ofstream& out, double v) {
  out.write(reinterpret_cast<const char*>(&v), sizeof(v));
}
inline std::uint32_t get_u32(std::ifstream& in) {
  std::uint32_t v = 0;
  in.read(reinterpret_cast<char*>(&v), sizeof(v));
  return v;
}
inline double get_f64(std::ifstream& in) {
  double v = 0;
  in.read(reinterpret_cast<char*>(&v), sizeof(v));
  return v;
}

}  // namespace detail

inline void write_checkpoint(const std::string& path, const Checkpoint& ck) {
  std::ofstream out(path, std::ios::binary);
  detail::require(bool(out), "write_checkpoint", "cannot open " + path);
  out.write(detail::kCkptMagic, sizeof(detail::kCkptMagic));
  detail::put_u32(out, detail::kCkptVersion);
  detail::put_u32(out, std::uint32_t(ck.kind));
  for (std::uint32_t d : ck.dims) detail::put_u32(out, d);
  detail::put_f64(out, ck.omega0);
  detail::put_u32(out, std::uint32_t(ck.tensors.size()));
  for (const auto& e : ck.tensors) {
    detail::put_u32(out, std::uint32_t(e.name.size()));
    out.write(e.name.data(), std::streamsize(e.name.size()));
    out.put(e.trainable ? 1 : 0);
    detail::put_u32(out, std::uint32_t(e.value.rank()));
    for (std::size_t d = 0; d < e.value.rank(); ++d) detail::put_u32(out, std::uint32_t(e.value.dim(d)));
    out.write(reinterpret_cast<const char*>(e.value.data()),
              std::streamsize(e.value.numel() * sizeof(double)));
  }
  detail::require(bool(out), "write_checkpoint", "write failed for " + path);
}

inline Checkpoint read_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  detail::require(bool(in), "read_checkpoint", "cannot open " + path);
  char magic[8];
  in.read(magic, sizeof(magic));
  detail::require(bool(in) && std::memcmp(magic, detail::kCkptMagic, 8) == 0, "read_checkpoint",
                  path + " is not a checkpoint file");
  const std::uint32_t version = detail::get_u32(in);
  detail::require(version == detail::kCkptVersion, "read_checkpoint",
                  "unsupported version " + std::to_string(version));
  Checkpoint ck;
  ck.kind = NetKind(detail::get_u32(in));
  for (auto& d : ck.dims) d = detail::get_u32(in);
  ck.omega0 = detail::get_f64(in);
  const std::uint32_t count = detail::get_u32(in);
  ck.tensors.resize(count);
  for (auto& e : ck.tensors) {
    const std::uint32_t len = detail::get_u32(in);
    e.name.resize(len);
    in.read(e.name.data(), len);
    e.trainable = in.get() != 0;
    const std::uint32_t rank = detail::get_u32(in);
    std::vector<std::size_t> shape(rank);
    for (auto& d : shape) d = detail::get_u32(in);
    e.value = Tensor(shape);
    in.read(reinterpret_cast<char*>(e.value.data()),
            std::streamsize(e.value.numel() * sizeof(double)));
    detail::require(bool(in), "read_checkpoint", path + " is truncated");
  }
  return ck;
}

namespace detail {

inline void append_store(Checkpoint& ck, const ParamStore& store) {
  for (const auto& p : store.params()) ck.tensors.push_back({p.name, true, p.value});
  for (const auto& b : store.buffers()) ck.tensors.push_back({b.name, false, b.value});
}

inline void restore_store(ParamStore& store, const Checkpoint& ck, const std::string& what) {
  require(ck.tensors.size() == store.params().size() + store.buffers().size(), "load " + what,
          "tensor count mismatch");
  std::size_t i = 0;
  for (auto& p : store.params()) {
    const auto& e = ck.tensors[i++];
    require(e.name == p.name && e.value.same_shape(p.value), "load " + what,
            "unexpected tensor " + e.name);
    p.value = e.value;
  }
  for (auto& b : store.buffers()) {
    const auto& e = ck.tensors[i++];
    require(e.name == b.name && e.value.same_shape(b.value), "load " + what,
            "unexpected tensor " + e.name);
    b.value = e.value;
  }
}

}  // namespace detail

inline Checkpoint make_checkpoint(const ImplicitSineNet& net) {
  const auto& c = net.config();
  Checkpoint ck;
  ck.kind = NetKind::implicit_sine;
  ck.dims = {std::uint32_t(c.in_dim), std::uint32_t(c.out_dim), std::uint32_t(c.width),
             std::uint32_t(c.sine_layers)};
  ck.omega0 = c.omega0;
  detail::append_store(ck, net.store());
  return ck;
}

inline Checkpoint make_checkpoint(const ResidualMlp& net) {
  const auto& c = net.config();
  Checkpoint ck;
  ck.kind = NetKind::residual_mlp;
  ck.dims = {std::uint32_t(c.in_dim), std::uint32_t(c.out_dim), std::uint32_t(c.width),
             std::uint32_t(c.blocks)};
  detail::append_store(ck, net.store());
  return ck;
}

inline Checkpoint make_checkpoint(const ResidualConv1d& net) {
  const auto& c = net.config();
  Checkpoint ck;
  ck.kind = NetKind::residual_conv1d;
  ck.dims = {std::uint32_t(c.channels), std::uint32_t(c.blocks), std::uint32_t(c.kernel), 0};
  detail::append_store(ck, net.store());
  return ck;
}

inline ImplicitSineNet load_implicit_sine(const Checkpoint& ck) {
  detail::require(ck.kind == NetKind::implicit_sine, "load_implicit_sine", "wrong network kind");
  Rng rng(0);
  ImplicitSineNet net({ck.dims[0], ck.dims[1], ck.dims[2], ck.dims[3], ck.omega0}, rng);
  detail::restore_store(net.store(), ck, "implicit_sine");
  return net;
}

inline ResidualMlp load_residual_mlp(const Checkpoint& ck) {
  detail::require(ck.kind == NetKind::residual_mlp, "load_residual_mlp", "wrong network kind");
  Rng rng(0);
  ResidualMlp net({ck.dims[0], ck.dims[1], ck.dims[2], ck.dims[3]}, rng);
  detail::restore_store(net.store(), ck, "residual_mlp");
  return net;
}

inline ResidualConv1d load_residual_conv1d(const Checkpoint& ck) {
  detail::require(ck.kind == NetKind::residual_conv1d, "load_residual_conv1d", "wrong network kind");
  Rng rng(0);
  ResidualConv1d net({ck.dims[0], ck.dims[1], ck.dims[2]}, rng);
  detail::restore_store(net.store(), ck, "residual_conv1d");
  return net;
}

}  // namespace rkdl
