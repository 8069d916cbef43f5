#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <random>

#include "pass/metrics.hpp"

using namespace pass;

namespace {

Mask make_mask(int h, int w, const std::vector<uint8_t>& fg) {
  Mask m;
  m.height = h;
  m.width = w;
  m.fg = fg;
  return m;
}

Mask random_mask(int h, int w, std::mt19937& rng, float p = 0.3f) {
  std::uniform_real_distribution<float> u(0.0f, 1.0f);
  std::vector<uint8_t> fg((size_t)h * w);
  for (auto& v : fg) v = u(rng) < p ? 1 : 0;
  return make_mask(h, w, fg);
}

double dice_oracle(const Mask& a, const Mask& b) {
  int64_t inter = 0, sa = 0, sb = 0;
  for (size_t i = 0; i < a.fg.size(); ++i) {
    inter += a.fg[i] && b.fg[i];
    sa += a.fg[i];
    sb += b.fg[i];
  }
  if (sa + sb == 0) return 100.0;
  return 100.0 * 2.0 * (double)inter / (double)(sa + sb);
}

// O(|P|*|R|) directed means, averaged then halved... the halving is the
// mean of the two directed means
std::optional<double> hd_oracle(const Mask& a, const Mask& b) {
  std::vector<std::pair<int, int>> pa, pb;
  for (int y = 0; y < a.height; ++y)
    for (int x = 0; x < a.width; ++x) {
      if (a.fg[(size_t)y * a.width + x]) pa.push_back({y, x});
      if (b.fg[(size_t)y * b.width + x]) pb.push_back({y, x});
    }
  if (pa.empty() || pb.empty()) return std::nullopt;
  auto directed = [](const std::vector<std::pair<int, int>>& from,
                     const std::vector<std::pair<int, int>>& to) {
    double total = 0.0;
    for (const auto& p : from) {
      double best = 1e300;
      for (const auto& q : to) {
        const double dy = p.first - q.first, dx = p.second - q.second;
        best = std::min(best, std::sqrt(dy * dy + dx * dx));
      }
      total += best;
    }
    return total / (double)from.size();
  };
  return 0.5 * (directed(pa, pb) + directed(pb, pa));
}

// plain sliding-window SSIM, one window at a time
double ssim_oracle(const std::vector<float>& a, const std::vector<float>& b,
                   int H, int W) {
  const int win = std::min({11, H, W});
  const double c1 = 0.01 * 0.01, c2 = 0.03 * 0.03;
  double total = 0.0;
  int count = 0;
  for (int y = 0; y + win <= H; ++y)
    for (int x = 0; x + win <= W; ++x) {
      double ma = 0, mb = 0;
      for (int dy = 0; dy < win; ++dy)
        for (int dx = 0; dx < win; ++dx) {
          ma += a[(size_t)(y + dy) * W + x + dx];
          mb += b[(size_t)(y + dy) * W + x + dx];
        }
      const int n = win * win;
      ma /= n;
      mb /= n;
      double va = 0, vb = 0, cov = 0;
      for (int dy = 0; dy < win; ++dy)
        for (int dx = 0; dx < win; ++dx) {
          const double da = a[(size_t)(y + dy) * W + x + dx] - ma;
          const double db = b[(size_t)(y + dy) * W + x + dx] - mb;
          va += da * da;
          vb += db * db;
          cov += da * db;
        }
      va /= n;
      vb /= n;
      cov /= n;
      total += ((2 * ma * mb + c1) * (2 * cov + c2)) /
               ((ma * ma + mb * mb + c1) * (va + vb + c2));
      ++count;
    }
  return count ? total / count : 1.0;
}

}  // namespace

TEST_CASE("dice_score basics") {
  std::mt19937 rng(1);
  Mask m = random_mask(8, 8, rng);
  CHECK(dice_score(m, m) == doctest::Approx(100.0));

  Mask empty = make_mask(4, 4, std::vector<uint8_t>(16, 0));
  CHECK(dice_score(empty, empty) == doctest::Approx(100.0));

  // disjoint equal-area masks
  std::vector<uint8_t> a(16, 0), b(16, 0);
  a[0] = a[1] = 1;
  b[2] = b[3] = 1;
  CHECK(dice_score(make_mask(4, 4, a), make_mask(4, 4, b)) == doctest::Approx(0.0));
}

TEST_CASE("dice_score hand count: |P|=6, |R|=4, overlap 3 gives 60") {
  std::vector<uint8_t> p(16, 0), r(16, 0);
  for (int i = 0; i < 6; ++i) p[(size_t)i] = 1;
  for (int i = 3; i < 7; ++i) r[(size_t)i] = 1;  // overlap {3,4,5} = 3
  CHECK(dice_score(make_mask(4, 4, p), make_mask(4, 4, r)) == doctest::Approx(60.0));
}

TEST_CASE("avg_hausdorff basics") {
  std::mt19937 rng(2);
  Mask m = random_mask(8, 8, rng);
  REQUIRE(m.foreground() > 0);
  CHECK(avg_hausdorff(m, m).value() == doctest::Approx(0.0));

  // two single pixels 3 apart
  std::vector<uint8_t> a(36, 0), b(36, 0);
  a[0] = 1;       // (0,0)
  b[3] = 1;       // (0,3)
  CHECK(avg_hausdorff(make_mask(6, 6, a), make_mask(6, 6, b)).value() ==
        doctest::Approx(3.0));

  Mask empty = make_mask(8, 8, std::vector<uint8_t>(64, 0));
  CHECK(!avg_hausdorff(empty, m).has_value());
  CHECK(!avg_hausdorff(m, empty).has_value());
}

TEST_CASE("ssim basics") {
  std::mt19937 rng(3);
  std::uniform_real_distribution<float> u(0.0f, 1.0f);
  std::vector<float> img(256);
  for (auto& v : img) v = u(rng);
  CHECK(ssim(img, img, 16, 16) == doctest::Approx(1.0).epsilon(1e-9));

  // anticorrelation: an image against its negation scores below zero
  std::vector<float> neg(256);
  for (size_t i = 0; i < 256; ++i) neg[i] = 1.0f - img[i];
  CHECK(ssim(img, neg, 16, 16) < 0.0);
}

TEST_CASE("metric oracles agree on 100 random 16x16 pairs") {
  std::mt19937 rng(7);
  std::uniform_real_distribution<float> u(0.0f, 1.0f);
  for (int t = 0; t < 100; ++t) {
    Mask p = random_mask(16, 16, rng, 0.25f);
    Mask r = random_mask(16, 16, rng, 0.25f);
    CHECK(dice_score(p, r) == doctest::Approx(dice_oracle(p, r)).epsilon(1e-6));
    auto hd = avg_hausdorff(p, r);
    auto hdo = hd_oracle(p, r);
    REQUIRE(hd.has_value() == hdo.has_value());
    if (hd) CHECK(*hd == doctest::Approx(*hdo).epsilon(1e-6));

    std::vector<float> sp(256), sr(256);
    for (auto& v : sp) v = u(rng);
    for (auto& v : sr) v = u(rng);
    CHECK(ssim(sp, sr, 16, 16) ==
          doctest::Approx(ssim_oracle(sp, sr, 16, 16)).epsilon(1e-6));
  }
}

TEST_CASE("dice and hausdorff are symmetric") {
  std::mt19937 rng(9);
  for (int t = 0; t < 10; ++t) {
    Mask a = random_mask(12, 12, rng);
    Mask b = random_mask(12, 12, rng);
    CHECK(dice_score(a, b) == doctest::Approx(dice_score(b, a)));
    auto ab = avg_hausdorff(a, b), ba = avg_hausdorff(b, a);
    REQUIRE(ab.has_value());
    CHECK(*ab == doctest::Approx(*ba));
  }
}

TEST_CASE("Mask::from_tensor thresholds at 0.5 (inclusive)") {
  Tensor t({2, 2, 2, 1}, {0.4f, 0.6f, 0.5f, 0.9f, 1.0f, 0.0f, 0.2f, 0.51f});
  Mask m0 = Mask::from_tensor(t, 0);
  CHECK(m0.fg == std::vector<uint8_t>{0, 1, 1, 1});
  Mask m1 = Mask::from_tensor(t, 1);
  CHECK(m1.fg == std::vector<uint8_t>{1, 0, 0, 1});
}

TEST_CASE("EvalMatrix layout and aggregates") {
  EvalMatrix m;
  m.train_domains = {"a", "b", "c"};
  m.test_domains = {"a", "b", "c"};
  m.cells.resize(3);
  for (int i = 0; i < 3; ++i)
    for (int j = 0; j < 3; ++j) {
      EvalCell c;
      c.in_domain = (i == j);
      c.n_samples = 4;
      c.n_hd = 4;
      c.mean.dice = i == j ? 90.0 : 70.0;
      c.mean.ssim = 0.8;
      c.mean.avg_hd = 1.5;
      m.cells[(size_t)i].push_back(c);
    }

  SUBCASE("row average and domain gap") {
    EvalCell avg = m.row_average(0);
    CHECK(avg.mean.dice == doctest::Approx((90.0 + 70.0 + 70.0) / 3.0));
    CHECK(m.domain_gap(0).value() == doctest::Approx(90.0 - 70.0));
  }
  SUBCASE("csv has one row per matrix cell") {
    const std::string csv = m.to_csv();
    CHECK(std::count(csv.begin(), csv.end(), '\n') == 10);  // header + 3x3 cells
  }
  SUBCASE("text table marks in-domain cells") {
    const std::string txt = m.to_text_table();
    CHECK(std::count(txt.begin(), txt.end(), '*') >= 3);
    CHECK(txt.find("Avg") != std::string::npos);
    CHECK(txt.find("Gap") != std::string::npos);
  }
  SUBCASE("single-domain matrix: average equals the cell") {
    EvalMatrix one;
    one.train_domains = {"a"};
    one.test_domains = {"a"};
    one.cells.resize(1);
    EvalCell c;
    c.in_domain = true;
    c.n_samples = 2;
    c.mean.dice = 84.0;
    one.cells[0].push_back(c);
    CHECK(one.row_average(0).mean.dice == doctest::Approx(84.0));
    CHECK(!one.domain_gap(0).has_value());  // no cross-domain cells
  }
}
