#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <random>

#include "anatomap/network.hpp"
#include "anatomap/util.hpp"
#include "netcheck.hpp"
#include "support.hpp"

using namespace anatomap;
using namespace anatomap::nn;
using anatomap::testing::random_tensor;

namespace {

Patch random_patch(int side, std::mt19937_64& rng) {
  Grid3 g({side, side, side});
  std::uniform_real_distribution<float> u(0.0f, 1.0f);
  for (auto& v : g.data()) v = u(rng);
  return Patch{g, {side / 2, side / 2, side / 2}, Spacing(3, 3, 3)};
}

std::filesystem::path scratch_dir(const char* name) {
  const auto d = std::filesystem::temp_directory_path() / name;
  std::filesystem::remove_all(d);
  std::filesystem::create_directories(d);
  return d;
}

}  // namespace

TEST_CASE("forward_medlam shapes and unit-norm features") {
  std::mt19937_64 rng(1);
  const auto w = NetworkWeights::initialize(NetworkConfig{}, 3);
  const auto out = forward_medlam(random_patch(32, rng), w);
  CHECK(out.features[0].shape() == std::vector<int>{8, 32, 32, 32});
  CHECK(out.features[1].shape() == std::vector<int>{16, 16, 16, 16});
  CHECK(out.features[2].shape() == std::vector<int>{32, 8, 8, 8});
  for (const auto& f : out.features) {
    const int c = f.shape()[0];
    const std::size_t n = f.numel() / std::size_t(c);
    for (std::size_t v = 0; v < n; ++v) {
      double s = 0.0;
      for (int k = 0; k < c; ++k) s += double(f[std::size_t(k) * n + v]) * f[std::size_t(k) * n + v];
      // A voxel whose head output is exactly zero stays zero under the eps guard.
      if (s > 0.0) CHECK(std::sqrt(s) == doctest::Approx(1.0).epsilon(1e-5));
    }
  }
}

TEST_CASE("forward_medlam is deterministic and rejects bad sides") {
  std::mt19937_64 rng(2);
  const auto w = NetworkWeights::initialize(NetworkConfig{}, 5);
  const Patch p = random_patch(32, rng);
  const auto a = forward_medlam(p, w);
  const auto b = forward_medlam(p, w);
  CHECK(a.p == b.p);
  for (std::size_t i = 0; i < 3; ++i) CHECK(std::ranges::equal(a.features[i].values(), b.features[i].values()));

  Grid3 odd({24, 32, 32});
  CHECK_THROWS_AS(forward_medlam(Patch{odd, {12, 16, 16}, Spacing(1, 1, 1)}, w), Error);
  try {
    forward_medlam(Patch{odd, {12, 16, 16}, Spacing(1, 1, 1)}, w);
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::ShapeMismatch);
  }
  NetworkConfig bad;
  bad.patch_side = 20;
  CHECK_THROWS_AS(bad.validate(), Error);
}

TEST_CASE("latent p stays finite over 100 random weight/input draws") {
  NetworkConfig cfg;
  cfg.patch_side = 16;
  std::mt19937_64 rng(3);
  for (int t = 0; t < 100; ++t) {
    const auto w = NetworkWeights::initialize(cfg, std::uint64_t(t));
    const auto out = forward_medlam(random_patch(16, rng), w);
    for (int a = 0; a < 3; ++a) CHECK(std::isfinite(out.p[a]));
  }
}

TEST_CASE("whole-network directional derivative matches finite differences on 16^3") {
  for (std::uint64_t s = 1; s <= 3; ++s) {
    const auto r = anatomap::testing::network_directional_check(16, s);
    INFO("seed " << s << " analytic " << r.analytic << " numeric " << r.numeric);
    CHECK(r.rel_error < 1e-2);
  }
}

TEST_CASE("adam: zero gradient leaves weights unchanged") {
  std::mt19937_64 rng(4);
  std::vector<Tensor> p{random_tensor({3, 4}, rng), random_tensor({5}, rng)};
  const auto before = p;
  std::vector<Tensor> g{Tensor({3, 4}), Tensor({5})};
  auto st = AdamState::zeros_like(p);
  for (int i = 0; i < 5; ++i) adam_step(p, g, st, AdamConfig{});
  CHECK(std::ranges::equal(p[0].values(), before[0].values()));
  CHECK(std::ranges::equal(p[1].values(), before[1].values()));
  CHECK(st.t == 5);
}

TEST_CASE("adam: first step from zero state moves each weight by about lr") {
  // t=1: m_hat = g, v_hat = g^2, step = lr * g / (|g| + eps).
  std::vector<Tensor> p{Tensor({4}, {1.0f, -2.0f, 0.5f, 3.0f})};
  const std::vector<float> gv{0.3f, -7.0f, 1e-3f, 42.0f};
  std::vector<Tensor> g{Tensor({4}, gv)};
  auto st = AdamState::zeros_like(p);
  AdamConfig cfg;
  cfg.lr = 1e-3;
  const auto before = p[0];
  adam_step(p, g, st, cfg);
  for (std::size_t i = 0; i < 4; ++i) {
    const double gi = gv[i];
    const double expect = cfg.lr * gi / (std::abs(gi) + cfg.eps);
    CHECK(double(before[i]) - double(p[0][i]) == doctest::Approx(expect).epsilon(1e-3));
  }
}

TEST_CASE("adam: a one-parameter quadratic decreases for 50 steps") {
  std::vector<Tensor> p{Tensor({1}, {2.0f})};
  auto st = AdamState::zeros_like(p);
  AdamConfig cfg;
  cfg.lr = 1e-2;
  double prev = double(p[0][0]) * p[0][0];
  for (int i = 0; i < 50; ++i) {
    std::vector<Tensor> g{Tensor({1}, {2.0f * p[0][0]})};
    adam_step(p, g, st, cfg);
    const double loss = double(p[0][0]) * p[0][0];
    CHECK(loss < prev);
    prev = loss;
  }
}

TEST_CASE("adam: mismatched shapes raise ShapeMismatch") {
  std::vector<Tensor> p{Tensor({3})};
  auto st = AdamState::zeros_like(p);
  std::vector<Tensor> g{Tensor({4})};
  try {
    adam_step(p, g, st, AdamConfig{});
    FAIL("expected ShapeMismatch");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::ShapeMismatch);
  }
  std::vector<Tensor> none;
  CHECK_THROWS_AS(adam_step(p, none, st, AdamConfig{}), Error);
}

TEST_CASE("checkpoint save -> load -> save is byte-identical") {
  const auto dir = scratch_dir("anatomap_ckpt_rt");
  NetworkConfig cfg;
  cfg.patch_side = 16;
  Checkpoint c;
  c.weights = NetworkWeights::initialize(cfg, 9);
  c.adam = AdamState::zeros_like(c.weights.params);
  c.adam->t = 7;
  std::mt19937_64 rng(5);
  for (auto& t : c.adam->m) t = random_tensor(t.shape(), rng);
  c.r = {120.0, 90.0, 60.0};
  c.epoch = 3;
  c.train_config = {{"epochs", 4}};
  save_checkpoint(c, dir / "a.json");
  const Checkpoint r = load_checkpoint(dir / "a.json");
  CHECK(r.epoch == 3);
  CHECK(r.r == c.r);
  REQUIRE(r.adam.has_value());
  CHECK(r.adam->t == 7);
  for (std::size_t i = 0; i < c.weights.params.size(); ++i) CHECK(std::ranges::equal(r.weights.params[i].values(), c.weights.params[i].values()));
  save_checkpoint(r, dir / "b.json");
  CHECK(read_file_bytes(dir / "a.bin") == read_file_bytes(dir / "b.bin"));
  // Manifests differ only by the blob file name.
  auto ma = nlohmann::json::parse(read_text_file(dir / "a.json"));
  auto mb = nlohmann::json::parse(read_text_file(dir / "b.json"));
  ma["blob"].erase("file");
  mb["blob"].erase("file");
  CHECK(ma == mb);
  const auto first = read_text_file(dir / "a.json");
  save_checkpoint(r, dir / "a.json");
  CHECK(read_text_file(dir / "a.json") == first);
  std::filesystem::remove_all(dir);
}

TEST_CASE("checkpoint corruption is detected") {
  const auto dir = scratch_dir("anatomap_ckpt_bad");
  NetworkConfig cfg;
  cfg.patch_side = 16;
  Checkpoint c;
  c.weights = NetworkWeights::initialize(cfg, 2);
  save_checkpoint(c, dir / "c.json");
  const auto manifest = read_text_file(dir / "c.json");
  const auto blob = read_file_bytes(dir / "c.bin");

  auto expect_code = [&](ErrorCode code) {
    try {
      load_checkpoint(dir / "c.json");
      FAIL("expected " << to_string(code));
    } catch (const Error& e) {
      CHECK(e.code() == code);
    }
  };

  write_file_bytes(dir / "c.bin", std::span(blob).first(blob.size() / 2));
  expect_code(ErrorCode::CorruptCheckpoint);

  auto flipped = blob;
  flipped[17] ^= std::byte{1};
  write_file_bytes(dir / "c.bin", flipped);
  expect_code(ErrorCode::CorruptCheckpoint);

  write_file_bytes(dir / "c.bin", blob);
  write_text_file(dir / "c.json", manifest.substr(0, manifest.size() / 2));
  expect_code(ErrorCode::CorruptCheckpoint);

  auto m = nlohmann::json::parse(manifest);
  m["tensors"][0]["shape"][0] = 99;
  write_text_file(dir / "c.json", m.dump(2));
  expect_code(ErrorCode::ShapeManifestMismatch);

  write_text_file(dir / "c.json", manifest);
  CHECK_NOTHROW(load_checkpoint(dir / "c.json"));
  std::filesystem::remove_all(dir);
}
