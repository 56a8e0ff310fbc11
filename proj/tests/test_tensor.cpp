#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>
#include <string>

#include "mapnet/grad_check.hpp"
#include "test_support.hpp"

using namespace mapnet;
using testing::project;
using testing::random_tensor;

TEST_CASE("shape bookkeeping") {
  Tensor t = Tensor::zeros({2, 3, 4});
  CHECK(t.numel() == 24);
  CHECK(t.data().size() == shape_numel(t.shape()));
  CHECK_THROWS_AS(Tensor::from({2, 2}, {1.0, 2.0, 3.0}), DimensionError);
  CHECK_THROWS_AS(reshape(t, {5, 5}), DimensionError);
}

TEST_CASE("matmul") {
  Rng rng(1);
  SUBCASE("identity") {
    Tensor a = random_tensor(rng, {3, 3});
    Tensor eye = Tensor::from({3, 3}, {1, 0, 0, 0, 1, 0, 0, 0, 1});
    CHECK(matmul(a, eye).to_vector() == a.to_vector());
  }
  SUBCASE("1x1") { CHECK(matmul(Tensor::from({1, 1}, {2}), Tensor::from({1, 1}, {3})).item() == 6.0); }
  SUBCASE("triple-loop oracle") {
    Tensor a = random_tensor(rng, {5, 4}), b = random_tensor(rng, {4, 3});
    auto expect = testing::naive_matmul(a.to_vector(), b.to_vector(), 5, 4, 3);
    CHECK(testing::max_abs_diff(matmul(a, b).data(), expect) <= 1e-12);
  }
  SUBCASE("bad inner dimension") {
    CHECK_THROWS_AS(matmul(Tensor::zeros({2, 3}), Tensor::zeros({2, 3})), DimensionError);
  }
  SUBCASE("bmm matches per-batch matmul") {
    Tensor a = random_tensor(rng, {2, 3, 4}), b = random_tensor(rng, {2, 4, 5});
    Tensor c = bmm(a, b);
    for (std::size_t i = 0; i < 2; ++i) {
      auto expect = testing::naive_matmul(reshape(slice(a, 0, i, i + 1), {3, 4}).to_vector(),
                                          reshape(slice(b, 0, i, i + 1), {4, 5}).to_vector(), 3, 4, 5);
      CHECK(testing::max_abs_diff(slice(c, 0, i, i + 1).data(), expect) <= 1e-12);
    }
  }
}

TEST_CASE("softmax") {
  SUBCASE("constant slice") {
    Tensor s = softmax(Tensor::full({4}, 3.7), 0);
    for (double v : s.data()) CHECK(v == doctest::Approx(0.25).epsilon(1e-15));
  }
  SUBCASE("shift invariance") {
    Tensor x = Tensor::from({3}, {0.3, 1.7, -2.0});
    CHECK(testing::max_abs_diff(softmax(x, 0).data(), softmax(add_scalar(x, -5.25), 0).data()) <= 1e-15);
  }
  SUBCASE("logits (0, 10)") {
    Tensor s = softmax(Tensor::from({2}, {0.0, 10.0}), 0);
    const long double e10 = std::exp(10.0L);
    CHECK(std::abs(s[0] - static_cast<double>(1.0L / (1.0L + e10))) <= 1e-15);
    CHECK(std::abs(s[1] - static_cast<double>(e10 / (1.0L + e10))) <= 1e-15);
    CHECK(s[0] == doctest::Approx(4.5397868702434395e-05).epsilon(1e-12));
  }
  SUBCASE("rows sum to one along the reduced axis") {
    Rng rng(2);
    Tensor x = random_tensor(rng, {3, 4, 5}, -8, 8);
    for (std::size_t axis = 0; axis < 3; ++axis) {
      Tensor totals = sum_axis(softmax(x, axis), axis);
      for (double v : totals.data()) CHECK(std::abs(v - 1.0) <= 1e-12);
    }
  }
}

TEST_CASE("conv2d") {
  SUBCASE("1x1 identity kernel") {
    Rng rng(3);
    Tensor x = random_tensor(rng, {1, 4, 5});
    Tensor y = conv2d(x, Tensor::full({1, 1, 1, 1}, 1.0), Tensor::zeros({1}), 1, 0);
    CHECK(y.to_vector() == x.to_vector());
  }
  SUBCASE("3x3 ones on constant input") {
    const double c = 0.37;
    Tensor y = conv2d(Tensor::full({1, 5, 5}, c), Tensor::full({1, 1, 3, 3}, 1.0), Tensor::zeros({1}), 1, 1);
    for (std::size_t i = 1; i < 4; ++i)
      for (std::size_t j = 1; j < 4; ++j) CHECK(y[i * 5 + j] == doctest::Approx(9 * c).epsilon(1e-15));
    CHECK(y[0] == doctest::Approx(4 * c).epsilon(1e-15));  // corner sees 4 taps under zero padding
  }
  SUBCASE("stride 2 shape") {
    Tensor y = conv2d(Tensor::zeros({2, 8, 8}), Tensor::zeros({3, 2, 3, 3}), Tensor::zeros({3}), 2, 1);
    CHECK(y.shape() == Shape{3, 4, 4});
  }
  SUBCASE("gradients") {
    Rng rng(4);
    Tensor x = random_tensor(rng, {2, 5, 5}), w = random_tensor(rng, {3, 2, 3, 3}), b = random_tensor(rng, {3});
    for (std::size_t stride : {1u, 2u}) {
      Tensor probe = random_tensor(rng, conv2d(x, w, b, stride, 1).shape());
      CHECK(grad_check([&](const Tensor& v) { return project(conv2d(v, w, b, stride, 1), probe); }, x) <= 1e-5);
      CHECK(grad_check([&](const Tensor& v) { return project(conv2d(x, v, b, stride, 1), probe); }, w) <= 1e-5);
      CHECK(grad_check([&](const Tensor& v) { return project(conv2d(x, w, v, stride, 1), probe); }, b) <= 1e-5);
    }
  }
}

TEST_CASE("pixel_shuffle") {
  SUBCASE("factor 1 is identity") {
    Rng rng(5);
    Tensor x = random_tensor(rng, {3, 2, 2});
    CHECK(pixel_shuffle(x, 1).to_vector() == x.to_vector());
  }
  SUBCASE("shape law") { CHECK(pixel_shuffle(Tensor::zeros({8, 3, 3}), 2).shape() == Shape{2, 6, 6}); }
  SUBCASE("hand trace") {
    Tensor y = pixel_shuffle(Tensor::from({4, 1, 1}, {1, 2, 3, 4}), 2);
    CHECK(y.shape() == Shape{1, 2, 2});
    CHECK(y.to_vector() == std::vector<double>{1, 2, 3, 4});
  }
  SUBCASE("inverse rearrangement") {
    Rng rng(6);
    Tensor x = random_tensor(rng, {8, 3, 2});
    CHECK(pixel_unshuffle(pixel_shuffle(x, 2), 2).to_vector() == x.to_vector());
  }
  SUBCASE("channel count must divide") { CHECK_THROWS_AS(pixel_shuffle(Tensor::zeros({3, 2, 2}), 2), DimensionError); }
}

TEST_CASE("backward") {
  SUBCASE("sum of squares") {
    Tensor x = Tensor::from({3}, {1.0, -2.0, 0.5}, true);
    sum(mul(x, x)).backward();
    CHECK(x.grad() == std::vector<double>{2.0, -4.0, 1.0});
  }
  SUBCASE("unused leaf gets exact zero") {
    Tensor x = Tensor::from({2}, {1.0, 2.0}, true), unused = Tensor::from({2}, {3.0, 4.0}, true);
    sum(x).backward();
    CHECK(unused.grad() == std::vector<double>{0.0, 0.0});
  }
  SUBCASE("shared subexpression visited once") {
    Tensor x = Tensor::from({1}, {3.0}, true);
    Tensor y = mul(x, x);
    sum(add(y, y)).backward();  // 2 x^2 -> 4x
    CHECK(x.grad()[0] == 12.0);
  }
  SUBCASE("composite softmax(matmul(conv2d))") {
    Rng rng(7);
    Tensor x = random_tensor(rng, {2, 4, 4}), w = random_tensor(rng, {3, 2, 3, 3}), b = random_tensor(rng, {3});
    Tensor m = random_tensor(rng, {16, 5}), probe = random_tensor(rng, {3, 5});
    auto f = [&](const Tensor& v) {
      Tensor y = reshape(conv2d(v, w, b, 1, 1), {3, 16});
      return project(softmax(matmul(y, m), 1), probe);
    };
    CHECK(grad_check(f, x) <= 1e-5);
  }
  SUBCASE("no graph under NoGradGuard") {
    Tensor x = Tensor::from({2}, {1.0, 2.0}, true);
    NoGradGuard guard;
    CHECK_FALSE(mul(x, x).requires_grad());
  }
}

TEST_CASE("grad_check") {
  Rng rng(8);
  Tensor x = random_tensor(rng, {2, 3, 3});
  CHECK(grad_check([](const Tensor& v) { return sum(v); }, x) <= 1e-10);

  auto f = [](const Tensor& v) { return sum(mul(v, v)); };
  Tensor leaf = x.leaf(true);
  f(leaf).backward();
  auto doubled = leaf.grad();
  for (auto& g : doubled) g *= 2.0;
  CHECK(grad_check_against(f, x, doubled) >= 0.5);
}

TEST_CASE("every op passes grad_check on random 2x3x3 inputs") {
  Rng rng(9);
  const Shape s{2, 3, 3};
  Tensor x = random_tensor(rng, s, 0.2, 1.5);  // positive keeps log well defined
  Tensor other = random_tensor(rng, s);
  Tensor probe = random_tensor(rng, s);
  auto check = [&](const std::string& name, auto&& op) {
    CAPTURE(name);
    Tensor p = random_tensor(rng, op(x).shape());
    CHECK(grad_check([&](const Tensor& v) { return project(op(v), p); }, x) <= 1e-5);
  };
  check("add", [&](const Tensor& v) { return add(v, other); });
  check("sub", [&](const Tensor& v) { return sub(other, v); });
  check("mul", [&](const Tensor& v) { return mul(v, other); });
  check("scale", [&](const Tensor& v) { return scale(v, -1.7); });
  check("add_scalar", [&](const Tensor& v) { return add_scalar(v, 0.3); });
  check("exp", [&](const Tensor& v) { return exp(v); });
  check("log", [&](const Tensor& v) { return log(v); });
  check("sigmoid", [&](const Tensor& v) { return sigmoid(v); });
  check("leaky_relu", [&](const Tensor& v) { return leaky_relu(sub(v, Tensor::full(s, 0.77)), 0.1); });
  check("abs", [&](const Tensor& v) { return abs(sub(v, Tensor::full(s, 0.81))); });
  check("clamp", [&](const Tensor& v) { return clamp(v, 0.5, 1.2); });
  check("softmax", [&](const Tensor& v) { return softmax(v, 1); });
  check("permute", [&](const Tensor& v) { return permute(v, {2, 0, 1}); });
  check("transpose", [&](const Tensor& v) { return reshape(transpose(reshape(v, {2, 9})), s); });
  check("concat/slice", [&](const Tensor& v) { return slice(concat({v, other}, 0), 0, 1, 3); });
  check("resize_bilinear", [&](const Tensor& v) { return resize_bilinear(resize_bilinear(v, 5, 4), 3, 3); });
  check("avg_pool2", [&](const Tensor& v) { return avg_pool2(concat({concat({v, v}, 1), concat({v, v}, 1)}, 2)); });
  check("tokens", [&](const Tensor& v) { return tokens_to_chw(chw_to_tokens(v), 3, 3); });

  Tensor a = random_tensor(rng, {3, 3}), mm_probe = random_tensor(rng, {6, 3});
  CHECK(grad_check([&](const Tensor& v) { return project(matmul(reshape(v, {6, 3}), a), mm_probe); }, x) <= 1e-5);
  CHECK(grad_check([&](const Tensor& v) { return project(matmul(reshape(x, {6, 3}), v), mm_probe); }, a) <= 1e-5);
  Tensor scalar = Tensor::scalar(0.4);
  CHECK(grad_check([&](const Tensor& v) { return project(mul_scalar(v, other), probe); }, scalar) <= 1e-5);
  CHECK(grad_check([&](const Tensor& v) { return project(mul_scalar(scalar, v), probe); }, x) <= 1e-5);
  CHECK(grad_check([&](const Tensor& v) { return mean(mul(v, v)); }, x) <= 1e-5);
  Tensor shuffled_probe = random_tensor(rng, {1, 6, 6});
  CHECK(grad_check([&](const Tensor& v) { return project(pixel_shuffle(reshape(concat({v, v}, 0), {4, 3, 3}), 2),
                                                         shuffled_probe); },
                   x) <= 1e-5);
}

TEST_CASE("clamp") {
  Tensor x = Tensor::from({4}, {-2.0, -0.5, 0.5, 2.0}, true);
  Tensor y = clamp(x, -1.0, 1.0);
  CHECK(y.to_vector() == std::vector<double>{-1.0, -0.5, 0.5, 1.0});
  sum(y).backward();
  CHECK(x.grad() == std::vector<double>{0.0, 1.0, 1.0, 0.0});
}

TEST_CASE("resize_bilinear keeps corners and linear ramps") {
  Tensor ramp = Tensor::from({1, 1, 3}, {0.0, 1.0, 2.0});
  Tensor up = resize_bilinear(ramp, 1, 5);
  const std::vector<double> expect{0.0, 0.5, 1.0, 1.5, 2.0};
  CHECK(testing::max_abs_diff(up.data(), expect) <= 1e-15);
}

TEST_CASE("forward results are bit-identical across runs") {
  Rng rng(10);
  Tensor x = random_tensor(rng, {2, 6, 6}), w = random_tensor(rng, {4, 2, 3, 3}), b = random_tensor(rng, {4});
  auto run = [&] { return softmax(conv2d(x, w, b, 1, 1), 0).to_vector(); };
  CHECK(run() == run());
}
