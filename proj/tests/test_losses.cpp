#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <random>
#include <sstream>

#include "pass/losses.hpp"

using namespace pass;

namespace {

Tensor random_soft(Shape shape, std::mt19937& rng, float lo = 0.02f,
                   float hi = 0.98f) {
  std::uniform_real_distribution<float> u(lo, hi);
  std::vector<float> v((size_t)numel(shape));
  for (auto& x : v) x = u(rng);
  return Tensor(std::move(shape), std::move(v));
}

Tensor random_binary(Shape shape, std::mt19937& rng) {
  std::uniform_real_distribution<float> u(0.0f, 1.0f);
  std::vector<float> v((size_t)numel(shape));
  for (auto& x : v) x = u(rng) < 0.5f ? 0.0f : 1.0f;
  return Tensor(std::move(shape), std::move(v));
}

// direct per-element summation, double accumulation
double dice_oracle(const Tensor& pred, const Tensor& ref, double eps) {
  double inter = 0, sp = 0, sr = 0;
  for (int64_t i = 0; i < pred.size(); ++i) {
    inter += (double)pred.data()[i] * ref.data()[i];
    sp += pred.data()[i];
    sr += ref.data()[i];
  }
  return 1.0 - (2.0 * inter + eps) / (sp + sr + eps);
}

}  // namespace

TEST_CASE("dice_loss basics") {
  Tensor ones({1, 4, 4, 1}, std::vector<float>(16, 1.0f));
  Tensor zeros({1, 4, 4, 1}, std::vector<float>(16, 0.0f));
  CHECK(dice_loss(ones, ones).item() == doctest::Approx(0.0f));
  // 1 - 1/17
  CHECK(dice_loss(zeros, ones).item() == doctest::Approx(1.0f - 1.0f / 17.0f).epsilon(1e-6));

  Tensor a({1, 2, 2, 1}, {1, 0, 0, 0});
  Tensor b({1, 2, 2, 1}, {0, 1, 0, 0});
  CHECK_THROWS_AS(dice_loss(a, Tensor({1, 2, 1, 1}, {0, 0})), ShapeError);
}

TEST_CASE("dice_loss matches the summation oracle on random soft inputs") {
  std::mt19937 rng(21);
  for (int t = 0; t < 20; ++t) {
    Tensor p = random_soft({2, 6, 6, 1}, rng);
    Tensor r = random_binary({2, 6, 6, 1}, rng);
    CHECK(dice_loss(p, r).item() ==
          doctest::Approx(dice_oracle(p, r, 1.0)).epsilon(1e-6));
  }
}

TEST_CASE("dice_loss invariants") {
  std::mt19937 rng(22);
  Tensor y = random_binary({1, 8, 8, 1}, rng);
  CHECK(dice_loss(y, y).item() == doctest::Approx(0.0f).epsilon(1e-6));

  // half-filled mask vs its complement: no overlap, loss near maximal
  std::vector<float> half(64, 0.0f), comp(64, 0.0f);
  for (int i = 0; i < 32; ++i) half[(size_t)i] = 1.0f;
  for (int i = 32; i < 64; ++i) comp[(size_t)i] = 1.0f;
  const float l = dice_loss(Tensor({1, 8, 8, 1}, comp), Tensor({1, 8, 8, 1}, half)).item();
  CHECK(l == doctest::Approx(1.0f - 1.0f / 65.0f).epsilon(1e-6));
}

TEST_CASE("downsample_mask average-pools then re-binarizes") {
  // 4x4 with one 2x2 block fully on, one half on, rest off
  std::vector<float> m(16, 0.0f);
  m[0] = m[1] = m[4] = m[5] = 1.0f;  // top-left block all on
  m[2] = m[3] = 1.0f;                // top-right block half on -> 0.5 -> 0 (strict >)
  Tensor ref({1, 4, 4, 1}, m);
  Tensor d = downsample_mask(ref, 2);
  REQUIRE(d.shape() == Shape{1, 2, 2, 1});
  CHECK(d.data()[0] == 1.0f);
  for (int i = 1; i < 4; ++i) CHECK((d.data()[i] == 0.0f || d.data()[i] == 1.0f));
}

TEST_CASE("seg_side_loss") {
  std::mt19937 rng(31);
  Tensor ref = random_binary({1, 8, 8, 1}, rng);
  const std::array<float, 4> w{0.125f, 0.25f, 0.5f, 1.0f};

  SegmentorOutput perfect;
  perfect.y8 = downsample_mask(ref, 8);
  perfect.y4 = downsample_mask(ref, 4);
  perfect.y2 = downsample_mask(ref, 2);
  perfect.y1 = ref;

  SUBCASE("perfect predictions at all scales give zero") {
    CHECK(seg_side_loss(perfect, ref, w, {true, true, true, true}).item() ==
          doctest::Approx(0.0f).epsilon(1e-6));
  }
  SUBCASE("only the finest scale active reduces to dice_loss at base scale") {
    SegmentorOutput out = perfect;
    out.y1 = random_soft({1, 8, 8, 1}, rng);
    const float full = seg_side_loss(out, ref, w, {false, false, false, true}).item();
    CHECK(full == doctest::Approx(dice_loss(out.y1, ref).item()).epsilon(1e-6));
  }
  SUBCASE("hand-built case matches manual per-scale computation") {
    SegmentorOutput out;
    out.y8 = random_soft({1, 1, 1, 1}, rng);
    out.y4 = random_soft({1, 2, 2, 1}, rng);
    out.y2 = random_soft({1, 4, 4, 1}, rng);
    out.y1 = random_soft({1, 8, 8, 1}, rng);
    std::array<float, 4> per{};
    const float total = seg_side_loss(out, ref, w, {true, true, true, true}, &per).item();
    double manual = 0.125 * dice_oracle(out.y8, downsample_mask(ref, 8), 1.0) +
                    0.25 * dice_oracle(out.y4, downsample_mask(ref, 4), 1.0) +
                    0.5 * dice_oracle(out.y2, downsample_mask(ref, 2), 1.0) +
                    1.0 * dice_oracle(out.y1, ref, 1.0);
    CHECK(total == doctest::Approx(manual).epsilon(1e-5));
    CHECK(per[3] == doctest::Approx(dice_loss(out.y1, ref).item()).epsilon(1e-6));
  }
}

TEST_CASE("kl_loss") {
  std::mt19937 rng(41);
  SUBCASE("identical predictions give zero for any reference") {
    Tensor a = random_soft({1, 4, 4, 1}, rng);
    Tensor r = random_binary({1, 4, 4, 1}, rng);
    CHECK(kl_loss(a, a, r).item() == doctest::Approx(0.0f));
    CHECK(kl_loss(a, a, r, 1e-7f, KlVariant::Standard).item() ==
          doctest::Approx(0.0f));
  }
  SUBCASE("single-pixel scalar case") {
    Tensor yl({1, 1, 1, 1}, {0.8f});
    Tensor ya({1, 1, 1, 1}, {0.6f});
    Tensor r({1, 1, 1, 1}, {1.0f});
    // |0.2 * log(1/0.6)| with tiny eps
    CHECK(kl_loss(yl, ya, r).item() ==
          doctest::Approx(0.2 * std::log(1.0 / 0.6)).epsilon(1e-4));
  }
  SUBCASE("nonnegative on random inputs") {
    for (int t = 0; t < 10; ++t) {
      Tensor yl = random_soft({1, 4, 4, 1}, rng);
      Tensor ya = random_soft({1, 4, 4, 1}, rng);
      Tensor r = random_binary({1, 4, 4, 1}, rng);
      CHECK(kl_loss(yl, ya, r).item() >= 0.0f);
      CHECK(std::isfinite(kl_loss(yl, ya, r, 1e-7f, KlVariant::Standard).item()));
    }
  }
}

TEST_CASE("adversarial losses") {
  Tensor half({1, 1}, {0.5f});
  const float ln2 = std::log(2.0f);
  CHECK(adv_loss_real(half).item() == doctest::Approx(ln2).epsilon(1e-6));
  CHECK(adv_loss_pred(half).item() == doctest::Approx(ln2).epsilon(1e-6));
  CHECK(adv_loss_seg(half).item() == doctest::Approx(ln2).epsilon(1e-6));

  // clamped limits
  Tensor zero({1, 1}, {0.0f});
  Tensor one({1, 1}, {1.0f});
  CHECK(adv_loss_real(zero).item() == doctest::Approx(0.0f).epsilon(1e-5));
  CHECK(adv_loss_pred(one).item() == doctest::Approx(0.0f).epsilon(1e-5));
  CHECK(std::isfinite(adv_loss_pred(zero).item()));
  CHECK(std::isfinite(adv_loss_real(one).item()));

  // batch mean
  Tensor batch({2, 1}, {0.5f, 0.5f});
  CHECK(adv_loss_seg(batch).item() == doctest::Approx(ln2).epsilon(1e-6));
}

TEST_CASE("feature_loss") {
  SUBCASE("identical lists give zero") {
    Tensor f({2, 2, 2, 1}, {1, 2, 3, 4, 5, 6, 7, 8});
    CHECK(feature_loss({f, f}, {f, f}).item() == doctest::Approx(0.0f));
  }
  SUBCASE("single discriminator, [1,2] vs [1,4]") {
    Tensor a({1, 1, 1, 2}, {1.0f, 2.0f});
    Tensor b({1, 1, 1, 2}, {1.0f, 4.0f});
    CHECK(feature_loss({a}, {b}).item() == doctest::Approx(4.0f));
  }
  SUBCASE("random 4-discriminator case vs direct summation oracle") {
    std::mt19937 rng(51);
    std::vector<Tensor> real, pred;
    double expected = 0.0;
    for (int d = 0; d < 4; ++d) {
      Tensor a = random_soft({3, 2, 2, 2}, rng, -1.0f, 1.0f);
      Tensor b = random_soft({3, 2, 2, 2}, rng, -1.0f, 1.0f);
      // mean over batch, then squared L2 of the difference
      for (int i = 0; i < 8; ++i) {
        double ma = 0, mb = 0;
        for (int n = 0; n < 3; ++n) {
          ma += a.data()[(size_t)n * 8 + i];
          mb += b.data()[(size_t)n * 8 + i];
        }
        const double diff = (ma - mb) / 3.0;
        expected += diff * diff;
      }
      real.push_back(a);
      pred.push_back(b);
    }
    CHECK(feature_loss(real, pred).item() == doctest::Approx(expected).epsilon(1e-4));
  }
}

TEST_CASE("encoder_loss") {
  std::vector<float> z(256, 0.0f), zh(256, 0.0f);
  z[0] = 1.0f;
  CHECK(encoder_loss(Tensor({1, 256}, z), Tensor({1, 256}, zh)).item() ==
        doctest::Approx(1.0f / 256.0f).epsilon(1e-6));
  CHECK(encoder_loss(Tensor({1, 256}, z), Tensor({1, 256}, z)).item() ==
        doctest::Approx(0.0f));

  std::mt19937 rng(61);
  Tensor a = random_soft({2, 16}, rng, -2.0f, 2.0f);
  Tensor b = random_soft({2, 16}, rng, -2.0f, 2.0f);
  double expected = 0.0;
  for (int i = 0; i < 32; ++i) {
    const double d = (double)a.data()[i] - b.data()[i];
    expected += d * d;
  }
  expected /= 32.0;
  CHECK(encoder_loss(a, b).item() == doctest::Approx(expected).epsilon(1e-5));
  CHECK_THROWS_AS(encoder_loss(a, Tensor({2, 8}, std::vector<float>(16, 0.0f))),
                  ShapeError);
}

TEST_CASE("total_segmentor_loss") {
  auto s = [](float v) { return Tensor::scalar(v); };
  CHECK(total_segmentor_loss(s(0), s(0), s(0), s(0), 0.3f, 0.01f, 1.0f).item() ==
        doctest::Approx(0.0f));
  CHECK(total_segmentor_loss(s(0.5f), s(1.0f), s(0.6931f), s(0.0f), 0.3f, 0.01f,
                             1.0f)
            .item() == doctest::Approx(0.806931f).epsilon(1e-6));
  // lambda = alpha = 0 reduces to the supervised term (plus beta*feature)
  CHECK(total_segmentor_loss(s(0.4f), s(9.0f), s(9.0f), s(0.0f), 0.0f, 0.0f, 1.0f)
            .item() == doctest::Approx(0.4f));
  CHECK_THROWS_AS(
      total_segmentor_loss(s(0), s(0), s(0), s(0), -0.1f, 0.01f, 1.0f),
      ContractError);
}

TEST_CASE("total_segmentor_loss is monotone in each component") {
  auto s = [](float v) { return Tensor::scalar(v); };
  const float base =
      total_segmentor_loss(s(0.5f), s(0.2f), s(0.3f), s(0.1f), 0.3f, 0.01f, 1.0f).item();
  CHECK(total_segmentor_loss(s(0.6f), s(0.2f), s(0.3f), s(0.1f), 0.3f, 0.01f, 1.0f).item() > base);
  CHECK(total_segmentor_loss(s(0.5f), s(0.3f), s(0.3f), s(0.1f), 0.3f, 0.01f, 1.0f).item() > base);
  CHECK(total_segmentor_loss(s(0.5f), s(0.2f), s(0.4f), s(0.1f), 0.3f, 0.01f, 1.0f).item() > base);
  CHECK(total_segmentor_loss(s(0.5f), s(0.2f), s(0.3f), s(0.2f), 0.3f, 0.01f, 1.0f).item() > base);
}

TEST_CASE("LossReport CSV row matches the header column count") {
  const std::string header = LossReport::csv_header();
  LossReport r;
  r.dice_side = {0.1f, 0.2f, 0.3f, 0.4f};
  const std::string row = r.csv_row(3, 7);
  const auto count = [](const std::string& s) {
    return std::count(s.begin(), s.end(), ',');
  };
  CHECK(count(header) == count(row));
  std::istringstream is(row);
  int epoch, step;
  char comma;
  is >> epoch >> comma >> step;
  CHECK(epoch == 3);
  CHECK(step == 7);
}
