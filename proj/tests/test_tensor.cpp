#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <random>

#include "pass/gradcheck.hpp"
#include "pass/tensor.hpp"

using namespace pass;

namespace {

// plain nested-loop reference convolution, same padding, stride 1
std::vector<float> conv_reference(const std::vector<float>& in, int H, int W,
                                  int Ci, const std::vector<float>& ker, int k,
                                  const std::vector<float>& bias, int Co) {
  std::vector<float> out((size_t)H * W * Co, 0.0f);
  const int pad = k / 2;
  for (int h = 0; h < H; ++h)
    for (int w = 0; w < W; ++w)
      for (int co = 0; co < Co; ++co) {
        float acc = bias[co];
        for (int dh = 0; dh < k; ++dh)
          for (int dw = 0; dw < k; ++dw) {
            const int hi = h + dh - pad, wi = w + dw - pad;
            if (hi < 0 || hi >= H || wi < 0 || wi >= W) continue;
            for (int ci = 0; ci < Ci; ++ci)
              acc += in[((size_t)hi * W + wi) * Ci + ci] *
                     ker[(((size_t)dh * k + dw) * Ci + ci) * Co + co];
          }
        out[((size_t)h * W + w) * Co + co] = acc;
      }
  return out;
}

Tensor random_tensor(Shape shape, std::mt19937& rng, float lo = -1.0f,
                     float hi = 1.0f) {
  std::uniform_real_distribution<float> u(lo, hi);
  std::vector<float> v((size_t)numel(shape));
  for (auto& x : v) x = u(rng);
  return Tensor(std::move(shape), std::move(v));
}

}  // namespace

TEST_CASE("conv2d identity kernel passes input through") {
  Tensor x({1, 3, 3, 1}, std::vector<float>(9, 1.0f));
  std::vector<float> k(9, 0.0f);
  k[4] = 1.0f;  // center tap
  Tensor ker({3, 3, 1, 1}, k);
  Tensor b({1}, {0.0f});
  Tensor y = conv2d(x, ker, b);
  REQUIRE(y.shape() == Shape{1, 3, 3, 1});
  for (float v : y.data()) CHECK(v == doctest::Approx(1.0f));
}

TEST_CASE("conv2d all-ones kernel matches the nested-loop reference") {
  Tensor x({1, 2, 2, 1}, {1, 2, 3, 4});
  Tensor ker({3, 3, 1, 1}, std::vector<float>(9, 1.0f));
  Tensor b({1}, {0.0f});
  Tensor y = conv2d(x, ker, b);
  auto ref = conv_reference(x.data(), 2, 2, 1, ker.data(), 3, b.data(), 1);
  for (size_t i = 0; i < ref.size(); ++i)
    CHECK(y.data()[i] == doctest::Approx(ref[i]));
  CHECK(y.data()[0] == doctest::Approx(10.0f));  // all four cells in view
}

TEST_CASE("conv2d random case matches the nested-loop reference") {
  std::mt19937 rng(7);
  Tensor x = random_tensor({1, 6, 5, 3}, rng);
  Tensor ker = random_tensor({3, 3, 3, 4}, rng);
  Tensor b = random_tensor({4}, rng);
  Tensor y = conv2d(x, ker, b);
  auto ref = conv_reference(x.data(), 6, 5, 3, ker.data(), 3, b.data(), 4);
  for (size_t i = 0; i < ref.size(); ++i)
    CHECK(y.data()[i] == doctest::Approx(ref[i]).epsilon(1e-4));
}

TEST_CASE("conv2d rejects channel mismatch") {
  Tensor x({1, 4, 4, 2}, std::vector<float>(32, 0.0f));
  Tensor ker({3, 3, 3, 1}, std::vector<float>(27, 0.0f));
  Tensor b({1}, {0.0f});
  CHECK_THROWS_AS(conv2d(x, ker, b), ShapeError);
}

TEST_CASE("maxpool2 basics") {
  Tensor x({1, 2, 2, 1}, {1, 2, 3, 4});
  Tensor y = maxpool2(x);
  CHECK(y.shape() == Shape{1, 1, 1, 1});
  CHECK(y.item() == doctest::Approx(4.0f));

  Tensor odd({1, 3, 4, 1}, std::vector<float>(12, 0.0f));
  CHECK_THROWS_AS(maxpool2(odd), ShapeError);
}

TEST_CASE("maxpool2 ties route gradient to the row-major-first cell") {
  Tensor x = Tensor::full({1, 2, 2, 1}, 3.0f, true);
  Tensor y = maxpool2(x);
  CHECK(y.item() == doctest::Approx(3.0f));
  backward(sum_all(y));
  CHECK(x.grad()[0] == doctest::Approx(1.0f));
  CHECK(x.grad()[1] == doctest::Approx(0.0f));
  CHECK(x.grad()[2] == doctest::Approx(0.0f));
  CHECK(x.grad()[3] == doctest::Approx(0.0f));
}

TEST_CASE("maxpool2 random case matches a nested-loop oracle") {
  std::mt19937 rng(11);
  Tensor x = random_tensor({1, 8, 8, 2}, rng);
  Tensor y = maxpool2(x);
  for (int h = 0; h < 4; ++h)
    for (int w = 0; w < 4; ++w)
      for (int c = 0; c < 2; ++c) {
        float best = -1e30f;
        for (int dh = 0; dh < 2; ++dh)
          for (int dw = 0; dw < 2; ++dw)
            best = std::max(best,
                            x.data()[(((size_t)2 * h + dh) * 8 + 2 * w + dw) * 2 + c]);
        CHECK(y.data()[(((size_t)h * 4) + w) * 2 + c] == doctest::Approx(best));
      }
}

TEST_CASE("instance_norm normalizes per sample and channel") {
  Tensor gain({1}, {1.0f});
  Tensor shift({1}, {0.0f});

  SUBCASE("constant channel maps to zeros") {
    Tensor x = Tensor::full({1, 2, 2, 1}, 5.0f);
    Tensor y = instance_norm(x, gain, shift);
    for (float v : y.data()) CHECK(v == doctest::Approx(0.0f).epsilon(1e-3));
  }
  SUBCASE("channel [1,2,3,4] has mean 0 and variance 1") {
    Tensor x({1, 2, 2, 1}, {1, 2, 3, 4});
    Tensor y = instance_norm(x, gain, shift);
    float mean = 0, var = 0;
    for (float v : y.data()) mean += v;
    mean /= 4;
    for (float v : y.data()) var += (v - mean) * (v - mean);
    var /= 4;
    CHECK(mean == doctest::Approx(0.0f).epsilon(1e-4));
    CHECK(var == doctest::Approx(1.0f).epsilon(1e-3));
  }
}

TEST_CASE("leaky_relu values") {
  Tensor x({3}, {1.0f, -1.0f, 0.0f});
  Tensor y = leaky_relu(x, 0.2f);
  CHECK(y.data()[0] == doctest::Approx(1.0f));
  CHECK(y.data()[1] == doctest::Approx(-0.2f));
  CHECK(y.data()[2] == doctest::Approx(0.0f));
}

TEST_CASE("upsample2 duplicates and sums gradients") {
  Tensor x = Tensor::full({1, 1, 1, 1}, 1.0f, true);
  Tensor y = upsample2(x);
  CHECK(y.shape() == Shape{1, 2, 2, 1});
  for (float v : y.data()) CHECK(v == doctest::Approx(1.0f));
  backward(sum_all(y));
  CHECK(x.grad()[0] == doctest::Approx(4.0f));
}

TEST_CASE("maxpool2 after upsample2 is the identity") {
  std::mt19937 rng(3);
  for (int trial = 0; trial < 10; ++trial) {
    Tensor x = random_tensor({2, 4, 4, 3}, rng);
    Tensor y = maxpool2(upsample2(x));
    REQUIRE(y.shape() == x.shape());
    for (int64_t i = 0; i < x.size(); ++i) CHECK(y.data()[i] == x.data()[i]);
  }
}

TEST_CASE("dense basics") {
  SUBCASE("identity weight is a pass-through") {
    Tensor x({1, 2}, {3.0f, 4.0f});
    Tensor w({2, 2}, {1, 0, 0, 1});
    Tensor b({2}, {0, 0});
    Tensor y = dense(x, w, b);
    CHECK(y.data()[0] == doctest::Approx(3.0f));
    CHECK(y.data()[1] == doctest::Approx(4.0f));
  }
  SUBCASE("affine example") {
    Tensor x({1, 2}, {1.0f, 2.0f});
    Tensor w({2, 1}, {1.0f, 1.0f});
    Tensor b({1}, {1.0f});
    CHECK(dense(x, w, b).item() == doctest::Approx(4.0f));
  }
  SUBCASE("feature mismatch throws") {
    Tensor x({1, 3}, {0, 0, 0});
    Tensor w({2, 1}, {0, 0});
    Tensor b({1}, {0});
    CHECK_THROWS_AS(dense(x, w, b), ShapeError);
  }
}

TEST_CASE("sigmoid and softmax_channel") {
  CHECK(sigmoid(Tensor::scalar(0.0f)).item() == doctest::Approx(0.5f));
  Tensor x = Tensor::full({1, 2, 2, 2}, 0.7f);
  Tensor y = softmax_channel(x);
  for (float v : y.data()) CHECK(v == doctest::Approx(0.5f));

  std::mt19937 rng(5);
  Tensor r = random_tensor({2, 3, 3, 4}, rng, -3.0f, 3.0f);
  Tensor s = softmax_channel(r);
  for (int64_t p = 0; p < s.size() / 4; ++p) {
    float sum = 0;
    for (int c = 0; c < 4; ++c) sum += s.data()[p * 4 + c];
    CHECK(sum == doctest::Approx(1.0f).epsilon(1e-5));
  }
  Tensor sg = sigmoid(random_tensor({1, 2, 2, 1}, rng, -8.0f, 8.0f));
  for (float v : sg.data()) {
    CHECK(v > 0.0f);
    CHECK(v < 1.0f);
  }
}

TEST_CASE("backward requires a scalar loss") {
  Tensor x = Tensor::full({2, 2}, 1.0f, true);
  CHECK_THROWS_AS(backward(add(x, x)), ContractError);
}

TEST_CASE("forward passes are deterministic") {
  std::mt19937 rng(9);
  Tensor x = random_tensor({1, 6, 6, 2}, rng);
  Tensor k = random_tensor({3, 3, 2, 3}, rng);
  Tensor b = random_tensor({3}, rng);
  Tensor y1 = conv2d(x, k, b);
  Tensor y2 = conv2d(x, k, b);
  for (int64_t i = 0; i < y1.size(); ++i) CHECK(y1.data()[i] == y2.data()[i]);
}

TEST_CASE("gradient suite passes on the default seed") {
  auto report = run_gradcheck(1);
  INFO(report.to_string());
  CHECK(report.all_passed());
}

TEST_CASE("corrupted conv gradient is reported") {
  auto report = run_gradcheck(1, /*corrupt_conv=*/true);
  bool conv_failed = false;
  for (const auto& r : report.results)
    if (r.op == "conv2d(same)" && !r.passed) conv_failed = true;
  CHECK(conv_failed);
}
