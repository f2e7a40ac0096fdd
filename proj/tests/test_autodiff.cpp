#include <doctest.h>

#include <cmath>

#include "anatomap/kernels.hpp"
#include "gradcases.hpp"

using namespace anatomap;
using namespace anatomap::nn;
using anatomap::testing::random_tensor;

TEST_CASE("conv3 with a 1x1x1 identity kernel returns the input") {
  std::mt19937_64 rng(1);
  const Tensor x = random_tensor({1, 4, 5, 6}, rng);
  const Tensor y = kernels::conv3_forward(x, Tensor({1, 1, 1, 1, 1}, 1.0f), Tensor({1}, 0.0f), 1, 0);
  REQUIRE(y.shape() == x.shape());
  for (std::size_t i = 0; i < x.numel(); ++i) CHECK(y[i] == x[i]);
}

TEST_CASE("conv3 of ones with a ones 3^3 kernel, valid padding, gives 27") {
  const Tensor y = kernels::conv3_forward(Tensor({1, 5, 5, 5}, 1.0f), Tensor({1, 1, 3, 3, 3}, 1.0f), Tensor({1}), 1, 0);
  CHECK(y.shape() == std::vector<int>{1, 3, 3, 3});
  for (float v : y.values()) CHECK(v == 27.0f);
}

TEST_CASE("conv3 rejects inconsistent shapes") {
  CHECK_THROWS_AS(kernels::conv3_forward(Tensor({2, 4, 4, 4}), Tensor({1, 1, 3, 3, 3}), Tensor({1}), 1, 1), Error);
  CHECK_THROWS_AS(kernels::conv3_forward(Tensor({1, 2, 2, 2}), Tensor({1, 1, 3, 3, 3}), Tensor({1}), 1, 0), Error);
}

TEST_CASE("l2_normalize_channels examples") {
  Tensor x({2, 1, 1, 1}, std::vector<float>{3.0f, 4.0f});
  const Tensor y = kernels::l2_normalize_channels_forward(x);
  CHECK(y[0] == doctest::Approx(0.6).epsilon(1e-7));
  CHECK(y[1] == doctest::Approx(0.8).epsilon(1e-7));
  Tensor unit({3, 1, 1, 1}, std::vector<float>{0.0f, 1.0f, 0.0f});
  CHECK(kernels::l2_normalize_channels_forward(unit).values()[1] == 1.0f);
  const Tensor z = kernels::l2_normalize_channels_forward(Tensor({4, 2, 2, 2}, 0.0f));
  for (float v : z.values()) CHECK(v == 0.0f);
}

TEST_CASE("softmax_spatial examples") {
  const Tensor c = kernels::softmax_spatial_forward(Tensor({1, 2, 3, 4}, 0.7f));
  for (float v : c.values()) CHECK(v == doctest::Approx(1.0 / 24).epsilon(1e-6));
  Tensor spike({1, 3, 3, 3}, 0.0f);
  spike[13] = 1000.0f;
  CHECK(kernels::softmax_spatial_forward(spike)[13] >= 1.0f - 1e-6f);
  std::mt19937_64 rng(3);
  for (int t = 0; t < 20; ++t) {
    const Tensor s = kernels::softmax_spatial_forward(random_tensor({1, 4, 4, 4}, rng, -30.0f, 30.0f));
    double sum = 0.0;
    for (float v : s.values()) {
      CHECK(v >= 0.0f);
      sum += v;
    }
    CHECK(std::abs(sum - 1.0) <= 1e-6);
  }
}

TEST_CASE("bce_onehot is nonnegative and clamps saturated probabilities") {
  Tensor s({1, 1, 1, 2}, std::vector<float>{1.0f, 0.0f});
  CHECK(kernels::bce_onehot_forward(s, 0) == doctest::Approx(2e-12).epsilon(1e-3));
  CHECK(kernels::bce_onehot_forward(s, 1) > 27.0);
  const Tensor g = kernels::bce_onehot_backward(s, 1, 1.0);
  for (float v : g.values()) CHECK(v == 0.0f);
}

TEST_CASE("pool and upsample are adjoint") {
  std::mt19937_64 rng(5);
  const Tensor x = random_tensor({2, 4, 2, 6}, rng);
  const Tensor y = random_tensor({2, 2, 1, 3}, rng);
  const Tensor px = kernels::avg_pool2_forward(x);
  const Tensor uy = kernels::upsample2_forward(y);
  double a = 0.0, b = 0.0;
  for (std::size_t i = 0; i < y.numel(); ++i) a += double(px[i]) * y[i];
  for (std::size_t i = 0; i < x.numel(); ++i) b += double(x[i]) * uy[i];
  CHECK(a == doctest::Approx(b / 8.0).epsilon(1e-5));
}

TEST_CASE("finite-difference gradient checks for every differentiable op") {
  for (const auto& [name, make] : anatomap::testing::grad_ops()) {
    std::mt19937_64 rng(std::hash<std::string>{}(name));
    for (int t = 0; t < 5; ++t) {
      const auto c = make(rng);
      const auto r = anatomap::testing::gradcheck(c.f, c.inputs, std::uint64_t(t) + 11, c.h, c.max_elems);
      INFO(name << " " << c.desc);
      CHECK(r.rel_error < 1e-3);
    }
  }
}

TEST_CASE("relu gradient matches finite differences away from the kink") {
  std::mt19937_64 rng(9);
  Tensor x = random_tensor({2, 3, 3}, rng);
  for (auto& v : x.values()) v += v >= 0.0f ? 0.1f : -0.1f;
  const auto r = anatomap::testing::gradcheck([](const std::vector<Var>& v) { return nn::relu(v[0]); }, {x}, 2);
  CHECK(r.rel_error < 1e-3);
}

TEST_CASE("backward accumulates through shared inputs") {
  Var a(Tensor({2}, std::vector<float>{1.0f, 2.0f}), true);
  backward(sum(add(a, scale(a, 3.0f))));
  CHECK(a.grad()[0] == 4.0f);
  CHECK(a.grad()[1] == 4.0f);
}
