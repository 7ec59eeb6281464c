#include <cstdio>
#include <filesystem>
#include <fstream>

#include "catch_amalgamated.hpp"
#include "rkdl/checkpoint.hpp"

using rkdl::Tensor;

namespace {

std::string temp_path(const char* name) {
  return (std::filesystem::temp_directory_path() / name).string();
}

void check_stores_equal(const rkdl::ParamStore& a, const rkdl::ParamStore& b) {
  REQUIRE(a.params().size() == b.params().size());
  REQUIRE(a.buffers().size() == b.buffers().size());
  for (std::size_t i = 0; i < a.params().size(); ++i) {
    CHECK(a.params()[i].name == b.params()[i].name);
    const Tensor& ta = a.params()[i].value;
    const Tensor& tb = b.params()[i].value;
    REQUIRE(ta.same_shape(tb));
    for (std::size_t k = 0; k < ta.numel(); ++k) CHECK(ta[k] == tb[k]);
  }
  for (std::size_t i = 0; i < a.buffers().size(); ++i) {
    CHECK(a.buffers()[i].name == b.buffers()[i].name);
    const Tensor& ta = a.buffers()[i].value;
    const Tensor& tb = b.buffers()[i].value;
    REQUIRE(ta.same_shape(tb));
    for (std::size_t k = 0; k < ta.numel(); ++k) CHECK(ta[k] == tb[k]);
  }
}

}  // namespace

TEST_CASE("sine net round-trips through a file bit for bit") {
  rkdl::Rng rng(17);
  rkdl::ImplicitSineNet net(
      {.in_dim = 2, .out_dim = 1, .width = 10, .sine_layers = 3, .omega0 = 25.0}, rng);
  const auto path = temp_path("rkdl_ckpt_sine.ckpt");
  rkdl::write_checkpoint(path, rkdl::make_checkpoint(net));

  const auto ck = rkdl::read_checkpoint(path);
  CHECK(ck.kind == rkdl::NetKind::implicit_sine);
  CHECK(ck.dims == std::array<std::uint32_t, 4>{2, 1, 10, 3});
  CHECK(ck.omega0 == 25.0);

  auto back = rkdl::load_implicit_sine(ck);
  CHECK(back.config().omega0 == 25.0);
  check_stores_equal(net.store(), back.store());

  // the restored net computes the same function
  const Tensor x = Tensor::from_rows({{0.3, -0.8}, {0.0, 1.0}});
  const Tensor ya = net.predict(x);
  const Tensor yb = back.predict(x);
  for (std::size_t k = 0; k < ya.numel(); ++k) CHECK(ya[k] == yb[k]);
  std::remove(path.c_str());
}

TEST_CASE("dense dynamics net round-trips") {
  rkdl::Rng rng(18);
  rkdl::ResidualMlp net({.in_dim = 2, .out_dim = 2, .width = 8, .blocks = 2}, rng);
  const auto path = temp_path("rkdl_ckpt_mlp.ckpt");
  rkdl::write_checkpoint(path, rkdl::make_checkpoint(net));
  const auto ck = rkdl::read_checkpoint(path);
  CHECK(ck.kind == rkdl::NetKind::residual_mlp);
  auto back = rkdl::load_residual_mlp(ck);
  check_stores_equal(net.store(), back.store());
  std::remove(path.c_str());
}

TEST_CASE("conv net round-trips including running statistics") {
  rkdl::Rng rng(19);
  rkdl::ResidualConv1d net({.channels = 4, .blocks = 2, .kernel = 3}, rng);

  // move the running statistics off their initial values first
  Tensor x({2, 1, 8});
  rkdl::fill_uniform(x, rng, -1.0, 1.0);
  net.set_train(true);
  net.predict(x);
  net.set_train(false);

  const auto path = temp_path("rkdl_ckpt_conv.ckpt");
  rkdl::write_checkpoint(path, rkdl::make_checkpoint(net));
  const auto ck = rkdl::read_checkpoint(path);
  CHECK(ck.kind == rkdl::NetKind::residual_conv1d);
  REQUIRE(ck.tensors.size() == net.store().params().size() + 4);
  CHECK_FALSE(ck.tensors.back().trainable);

  auto back = rkdl::load_residual_conv1d(ck);
  check_stores_equal(net.store(), back.store());

  back.set_train(false);
  const Tensor ya = net.predict(x);
  const Tensor yb = back.predict(x);
  for (std::size_t k = 0; k < ya.numel(); ++k) CHECK(ya[k] == yb[k]);
  std::remove(path.c_str());
}

TEST_CASE("wrong kind and damaged files are rejected") {
  rkdl::Rng rng(20);
  rkdl::ImplicitSineNet net({.in_dim = 1, .out_dim = 1, .width = 4, .sine_layers = 1}, rng);
  const auto path = temp_path("rkdl_ckpt_damage.ckpt");
  rkdl::write_checkpoint(path, rkdl::make_checkpoint(net));

  SECTION("loader checks the network kind") {
    const auto ck = rkdl::read_checkpoint(path);
    CHECK_THROWS_WITH(rkdl::load_residual_mlp(ck),
                      Catch::Matchers::ContainsSubstring("wrong network kind"));
  }
  SECTION("missing file") {
    CHECK_THROWS_WITH(rkdl::read_checkpoint(temp_path("rkdl_ckpt_missing.ckpt")),
                      Catch::Matchers::ContainsSubstring("cannot open"));
  }
  SECTION("bad magic") {
    std::ofstream out(path, std::ios::binary);
    out << "NOTACKPTxxxxxxxxxxxxxxxxxxxxxxxx";
    out.close();
    CHECK_THROWS_WITH(rkdl::read_checkpoint(path),
                      Catch::Matchers::ContainsSubstring("not a checkpoint"));
  }
  SECTION("truncated tensor data") {
    const auto full = std::filesystem::file_size(path);
    std::filesystem::resize_file(path, full - 16);
    CHECK_THROWS_WITH(rkdl::read_checkpoint(path),
                      Catch::Matchers::ContainsSubstring("truncated"));
  }
  SECTION("unsupported version") {
    // patch the version field just after the 8-byte magic
    std::fstream io(path, std::ios::binary | std::ios::in | std::ios::out);
    io.seekp(8);
    const std::uint32_t bad = 999;
    io.write(reinterpret_cast<const char*>(&bad), sizeof(bad));
    io.close();
    CHECK_THROWS_WITH(rkdl::read_checkpoint(path),
                      Catch::Matchers::ContainsSubstring("unsupported version"));
  }
  std::remove(path.c_str());
}

TEST_CASE("shape mismatch on restore is rejected") {
  rkdl::Rng rng(21);
  rkdl::ImplicitSineNet small({.in_dim = 1, .out_dim = 1, .width = 4, .sine_layers = 2}, rng);
  auto ck = rkdl::make_checkpoint(small);
  ck.dims[2] = 6;  // claim a wider net than the stored tensors
  CHECK_THROWS_AS(rkdl::load_implicit_sine(ck), std::runtime_error);
}
