#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>

#include "mapnet/grad_check.hpp"
#include "mapnet/prior_guidance.hpp"
#include "test_support.hpp"

using namespace mapnet;
using testing::project;
using testing::random_tensor;

TEST_CASE("pool_prior_token hand cases") {
  const std::size_t D = 4, C = 3, H = 2, W = 3;
  const std::vector<double> c{0.5, -1.0, 2.0};
  std::vector<double> pv;
  for (std::size_t ch = 0; ch < C; ++ch)
    for (std::size_t i = 0; i < H * W; ++i) pv.push_back(c[ch]);
  const Tensor prior = Tensor::from({C, H, W}, pv);

  SUBCASE("one-hot distribution") {
    std::vector<double> dv(D * H * W, 0.0);
    for (std::size_t i = 0; i < H * W; ++i) dv[2 * H * W + i] = 1.0;
    const Tensor token = pool_prior_token(Tensor::from({D, H, W}, dv), prior);
    for (std::size_t r = 0; r < D; ++r)
      for (std::size_t ch = 0; ch < C; ++ch) {
        const double expect = r == 2 ? static_cast<double>(H * W) * c[ch] : 0.0;
        CHECK(token[r * C + ch] == doctest::Approx(expect).epsilon(1e-15));
      }
  }
  SUBCASE("uniform distribution") {
    Rng rng(1);
    const Tensor p = random_tensor(rng, {C, H, W});
    const Tensor token = pool_prior_token(Tensor::full({D, H, W}, 1.0 / D), p);
    for (std::size_t ch = 0; ch < C; ++ch) {
      double total = 0.0;
      for (std::size_t i = 0; i < H * W; ++i) total += p[ch * H * W + i];
      for (std::size_t r = 0; r < D; ++r) CHECK(std::abs(token[r * C + ch] - total / D) <= 1e-14);
    }
  }
}

TEST_CASE("compress_prior") {
  Rng rng(2);
  const Tensor prior = random_tensor(rng, {4, 3, 3});
  const Conv2d head = testing::random_conv(rng, 4, 5, 1);
  const PriorCompression out = compress_prior(prior, head, 5);
  CHECK(out.distribution.shape() == Shape{5, 3, 3});
  CHECK(out.token.shape() == Shape{5, 4});
  for (double v : sum_axis(out.distribution, 0).to_vector()) CHECK(std::abs(v - 1.0) <= 1e-12);
  CHECK_THROWS_AS(compress_prior(prior, head, 6), DimensionError);

  SUBCASE("linear in the prior for a frozen distribution") {
    const double alpha = -2.5;
    const Tensor t1 = pool_prior_token(out.distribution, prior);
    const Tensor t2 = pool_prior_token(out.distribution, scale(prior, alpha));
    for (std::size_t i = 0; i < t1.numel(); ++i) CHECK(std::abs(t2[i] - alpha * t1[i]) <= 1e-12);
  }
}

TEST_CASE("token memory FIFO") {
  TokenMemory mem(2);
  CHECK(mem.empty());
  auto token = [](double v) { return Tensor::full({1, 3}, v); };
  mem.push(token(1));
  CHECK(mem.size() == 1);
  mem.push(token(2));
  mem.push(token(3));
  CHECK(mem.size() == 2);
  CHECK(mem.keys().to_vector() == std::vector<double>{2, 2, 2, 3, 3, 3});
  CHECK_THROWS_AS(mem.push(Tensor::zeros({2, 3})), DimensionError);
  CHECK_THROWS_AS(TokenMemory(0), ContractError);

  const TokenMemory pushed = memory_push(mem, token(4));
  CHECK(pushed.keys().to_vector() == std::vector<double>{3, 3, 3, 4, 4, 4});
  CHECK(mem.keys().to_vector() == std::vector<double>{2, 2, 2, 3, 3, 3});  // value semantics
}

TEST_CASE("memory_read") {
  SUBCASE("empty memory passes through") {
    Rng rng(3);
    const Tensor p = random_tensor(rng, {4, 2, 2});
    CHECK(memory_read(p, TokenMemory(4)).to_vector() == p.to_vector());
  }
  SUBCASE("single key broadcasts its value") {
    Rng rng(4);
    TokenMemory mem(1);
    const Tensor tok = random_tensor(rng, {1, 3});
    mem.push(tok);
    const Tensor out = memory_read(random_tensor(rng, {3, 2, 2}), mem);
    for (std::size_t ch = 0; ch < 3; ++ch)
      for (std::size_t i = 0; i < 4; ++i) CHECK(out[ch * 4 + i] == tok[ch]);
  }
  SUBCASE("two orthogonal keys, hand-evaluated weights") {
    const double r = std::sqrt(2.0);  // norm sqrt(C) with C = 2
    TokenMemory mem(1);
    mem.push(Tensor::from({2, 2}, {r, 0.0, 0.0, r}));
    const Tensor q = Tensor::from({2, 1, 1}, {r, 0.0});  // equal to key 1
    const MemoryReadResult res = memory_read_detailed(q, mem);
    // scores (2 / sqrt 2, 0) = (sqrt 2, 0)
    const double e = std::exp(r);
    const double w1 = e / (e + 1.0), w2 = 1.0 / (e + 1.0);
    CHECK(std::abs(res.weights[0] - w1) <= 1e-15);
    CHECK(std::abs(res.weights[1] - w2) <= 1e-15);
    CHECK(std::abs(res.enhanced[0] - w1 * r) <= 1e-15);
    CHECK(std::abs(res.enhanced[1] - w2 * r) <= 1e-15);
  }
  SUBCASE("unit score gives (0.731, 0.269)") {
    const double a = std::pow(2.0, 0.25);  // a * a / sqrt 2 = 1
    TokenMemory mem(1);
    mem.push(Tensor::from({2, 2}, {a, 0.0, 0.0, a}));
    const MemoryReadResult res = memory_read_detailed(Tensor::from({2, 1, 1}, {a, 0.0}), mem);
    const double w1 = std::exp(1.0) / (std::exp(1.0) + 1.0);
    CHECK(std::abs(res.weights[0] - w1) <= 1e-15);
    CHECK(res.weights[0] == doctest::Approx(0.731).epsilon(1e-3));
    CHECK(res.weights[1] == doctest::Approx(0.269).epsilon(1e-3));
    CHECK(std::abs(res.enhanced[0] - w1 * a) <= 1e-15);
  }
  SUBCASE("weights are a distribution per query") {
    Rng rng(5);
    TokenMemory mem(3);
    for (int i = 0; i < 3; ++i) mem.push(random_tensor(rng, {4, 6}, -3, 3));
    const MemoryReadResult res = memory_read_detailed(random_tensor(rng, {6, 3, 3}, -3, 3), mem);
    CHECK(res.weights.shape() == Shape{9, 12});
    for (double v : res.weights.data()) CHECK(v >= 0.0);
    for (double v : sum_axis(res.weights, 1).to_vector()) CHECK(std::abs(v - 1.0) <= 1e-12);
  }
  SUBCASE("permutation equivariance over pixels") {
    Rng rng(6);
    TokenMemory mem(2);
    mem.push(random_tensor(rng, {3, 4}));
    mem.push(random_tensor(rng, {3, 4}));
    const Tensor p = random_tensor(rng, {4, 1, 6});
    const std::vector<std::size_t> perm{3, 0, 5, 1, 4, 2};
    std::vector<double> pv(24);
    for (std::size_t ch = 0; ch < 4; ++ch)
      for (std::size_t i = 0; i < 6; ++i) pv[ch * 6 + i] = p[ch * 6 + perm[i]];
    const Tensor a = memory_read(p, mem), b = memory_read(Tensor::from({4, 1, 6}, pv), mem);
    for (std::size_t ch = 0; ch < 4; ++ch)
      for (std::size_t i = 0; i < 6; ++i) CHECK(b[ch * 6 + i] == a[ch * 6 + perm[i]]);
  }
  SUBCASE("channel mismatch") {
    TokenMemory mem(1);
    mem.push(Tensor::zeros({2, 5}));
    CHECK_THROWS_AS(memory_read(Tensor::zeros({4, 2, 2}), mem), DimensionError);
  }
}

TEST_CASE("guide_scene") {
  Rng rng(7);
  const Tensor p = random_tensor(rng, {4, 3, 3}), j = random_tensor(rng, {4, 3, 3});
  GuideParams zero{make_conv(rng, 8, 4, 3), make_conv(rng, 4, 4, 3, 1, true)};
  CHECK(guide_scene(p, j, zero).to_vector() == j.to_vector());
  CHECK(guide_scene(p, j, zero).shape() == j.shape());
  CHECK_THROWS_AS(guide_scene(Tensor::zeros({3, 3, 3}), j, zero), DimensionError);

  GuideParams live{testing::random_conv(rng, 8, 4, 3), testing::random_conv(rng, 4, 4, 3)};
  const Tensor probe = random_tensor(rng, {4, 3, 3});
  CHECK(grad_check([&](const Tensor& v) { return project(guide_scene(v, j, live), probe); }, p) <= 1e-5);
  CHECK(grad_check([&](const Tensor& v) { return project(guide_scene(p, v, live), probe); }, j) <= 1e-5);
}

TEST_CASE("memory_read and compression gradients") {
  Rng rng(8);
  TokenMemory mem(2);
  mem.push(random_tensor(rng, {3, 4}));
  mem.push(random_tensor(rng, {3, 4}));
  const Tensor p = random_tensor(rng, {4, 2, 2}), probe = random_tensor(rng, {4, 2, 2});
  CHECK(grad_check([&](const Tensor& v) { return project(memory_read(v, mem), probe); }, p) <= 1e-5);

  const Tensor key = random_tensor(rng, {3, 4});
  CHECK(grad_check([&](const Tensor& v) {
          TokenMemory m(2);
          m.push(v);
          return project(memory_read(p, m), probe);
        },
        key) <= 1e-5);

  const Conv2d head = testing::random_conv(rng, 4, 3, 1);
  const Tensor tprobe = random_tensor(rng, {3, 4});
  CHECK(grad_check([&](const Tensor& v) { return project(compress_prior(v, head, 3).token, tprobe); }, p) <= 1e-5);
}
