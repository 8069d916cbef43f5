#include "pass/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>
#include <sstream>

#include "pass/losses.hpp"

namespace pass {

namespace {

constexpr float kTol = 1e-2f;

float rel_err(float analytic, float fd) {
  const float denom = std::max({std::fabs(analytic), std::fabs(fd), 0.1f});
  return std::fabs(analytic - fd) / denom;
}

Tensor rand_uniform(Shape shape, std::mt19937& rng, float lo = -1.0f,
                    float hi = 1.0f) {
  std::uniform_real_distribution<float> u(lo, hi);
  std::vector<float> v((size_t)numel(shape));
  for (auto& x : v) x = u(rng);
  return Tensor(std::move(shape), std::move(v), true);
}

// distinct values with pairwise gaps well above the fd step, for ops with
// argmax ties
Tensor rand_distinct(Shape shape, std::mt19937& rng) {
  const int64_t n = numel(shape);
  std::vector<float> v((size_t)n);
  for (int64_t i = 0; i < n; ++i) v[i] = -0.5f + 0.02f * (float)i;
  std::shuffle(v.begin(), v.end(), rng);
  return Tensor(std::move(shape), std::move(v), true);
}

Tensor rand_binary(Shape shape, std::mt19937& rng) {
  std::uniform_real_distribution<float> u(0.0f, 1.0f);
  std::vector<float> v((size_t)numel(shape));
  for (auto& x : v) x = u(rng) < 0.5f ? 0.0f : 1.0f;
  return Tensor(std::move(shape), std::move(v));
}

// Fixed random weights turning a tensor output into a scalar loss without
// cancelling gradients. Normalized by element count so the loss stays O(1);
// otherwise float roundoff in the loss divided by 2*eps swamps the check.
std::vector<float> loss_weights(int64_t n, std::mt19937& rng) {
  std::uniform_real_distribution<float> u(0.5f, 1.5f);
  std::vector<float> w((size_t)n);
  for (auto& x : w) x = u(rng) / (float)n;
  return w;
}

Tensor weighted_sum(const Tensor& t, const std::vector<float>& w) {
  return sum_all(mul(t, Tensor(t.shape(), w)));
}

float check(const std::function<Tensor(const std::vector<Tensor>&)>& f,
            std::vector<Tensor> inputs, float eps,
            const std::function<void(std::vector<Tensor>&)>& tamper) {
  Tensor loss = f(inputs);
  if (loss.size() != 1) throw ContractError("gradcheck function must return a scalar");
  for (auto& t : inputs) t.zero_grad();
  backward(loss);
  if (tamper) tamper(inputs);

  float worst = 0.0f;
  for (auto& t : inputs) {
    const std::vector<float> analytic = t.grad();
    for (int64_t i = 0; i < t.size(); ++i) {
      const float saved = t.data()[i];
      t.data()[i] = saved + eps;
      const float up = f(inputs).item();
      t.data()[i] = saved - eps;
      const float down = f(inputs).item();
      t.data()[i] = saved;
      const float fd = (up - down) / (2.0f * eps);
      worst = std::max(worst, rel_err(analytic[i], fd));
    }
  }
  return worst;
}

}  // namespace

float max_rel_error(const std::function<Tensor(const std::vector<Tensor>&)>& f,
                    std::vector<Tensor> inputs, float eps) {
  return check(f, std::move(inputs), eps, nullptr);
}

bool GradCheckReport::all_passed() const {
  return std::all_of(results.begin(), results.end(),
                     [](const GradCheckResult& r) { return r.passed; });
}

std::string GradCheckReport::to_string() const {
  std::ostringstream os;
  for (const auto& r : results)
    os << (r.passed ? "ok   " : "FAIL ") << r.op << "  max rel err "
       << r.max_rel_err << "\n";
  return os.str();
}

GradCheckReport run_gradcheck(uint32_t seed, bool corrupt_conv) {
  std::mt19937 rng(seed);
  GradCheckReport report;
  auto run = [&](const std::string& name,
                 const std::function<Tensor(const std::vector<Tensor>&)>& f,
                 std::vector<Tensor> inputs,
                 const std::function<void(std::vector<Tensor>&)>& tamper = nullptr) {
    GradCheckResult r;
    r.op = name;
    r.max_rel_err = check(f, std::move(inputs), 1e-3f, tamper);
    r.passed = r.max_rel_err < kTol;
    report.results.push_back(r);
  };

  // conv2d, same and valid padding, optionally with a corrupted kernel
  // gradient as the reporting negative control
  {
    auto w = loss_weights(5 * 6 * 3, rng);
    std::function<void(std::vector<Tensor>&)> tamper;
    if (corrupt_conv)
      tamper = [](std::vector<Tensor>& in) { in[1].grad()[0] += 0.5f; };
    run("conv2d(same)",
        [w](const std::vector<Tensor>& in) {
          return weighted_sum(conv2d(in[0], in[1], in[2]), w);
        },
        {rand_uniform({1, 5, 6, 2}, rng), rand_uniform({3, 3, 2, 3}, rng),
         rand_uniform({3}, rng)},
        tamper);
  }
  {
    auto w = loss_weights(3 * 4 * 3, rng);
    run("conv2d(valid)", [w](const std::vector<Tensor>& in) {
      return weighted_sum(conv2d(in[0], in[1], in[2], 1, Padding::Valid), w);
    }, {rand_uniform({1, 5, 6, 2}, rng), rand_uniform({3, 3, 2, 3}, rng),
        rand_uniform({3}, rng)});
  }
  {
    auto w = loss_weights(4 * 4 * 2, rng);
    run("conv2d(1x1)", [w](const std::vector<Tensor>& in) {
      return weighted_sum(conv2d(in[0], in[1], in[2]), w);
    }, {rand_uniform({1, 4, 4, 3}, rng), rand_uniform({1, 1, 3, 2}, rng),
        rand_uniform({2}, rng)});
  }
  {
    auto w = loss_weights(2 * 3 * 3 * 2, rng);
    run("maxpool2", [w](const std::vector<Tensor>& in) {
      return weighted_sum(maxpool2(in[0]), w);
    }, {rand_distinct({2, 6, 6, 2}, rng)});
  }
  {
    auto w = loss_weights(3 * 3 * 2, rng);
    run("avgpool2", [w](const std::vector<Tensor>& in) {
      return weighted_sum(avgpool2(in[0]), w);
    }, {rand_uniform({1, 6, 6, 2}, rng)});
  }
  {
    auto w = loss_weights(8 * 8 * 2, rng);
    run("upsample2", [w](const std::vector<Tensor>& in) {
      return weighted_sum(upsample2(in[0]), w);
    }, {rand_uniform({1, 4, 4, 2}, rng)});
  }
  {
    auto w = loss_weights(2 * 4 * 4 * 3, rng);
    run("instance_norm", [w](const std::vector<Tensor>& in) {
      return weighted_sum(instance_norm(in[0], in[1], in[2]), w);
    }, {rand_uniform({2, 4, 4, 3}, rng), rand_uniform({3}, rng, 0.5f, 1.5f),
        rand_uniform({3}, rng)});
  }
  {
    // keep inputs away from the kink at 0
    auto w = loss_weights(24, rng);
    Tensor x = rand_uniform({1, 4, 6, 1}, rng, 0.05f, 1.0f);
    std::uniform_real_distribution<float> u(0.0f, 1.0f);
    for (auto& v : x.data())
      if (u(rng) < 0.5f) v = -v;
    run("leaky_relu", [w](const std::vector<Tensor>& in) {
      return weighted_sum(leaky_relu(in[0], 0.2f), w);
    }, {x});
  }
  {
    auto w = loss_weights(2 * 3, rng);
    run("dense", [w](const std::vector<Tensor>& in) {
      return weighted_sum(dense(in[0], in[1], in[2]), w);
    }, {rand_uniform({2, 4}, rng), rand_uniform({4, 3}, rng), rand_uniform({3}, rng)});
  }
  {
    auto w = loss_weights(12, rng);
    run("sigmoid", [w](const std::vector<Tensor>& in) {
      return weighted_sum(sigmoid(in[0]), w);
    }, {rand_uniform({1, 2, 2, 3}, rng, -2.0f, 2.0f)});
  }
  {
    auto w = loss_weights(12, rng);
    run("softmax_channel", [w](const std::vector<Tensor>& in) {
      return weighted_sum(softmax_channel(in[0]), w);
    }, {rand_uniform({1, 2, 2, 3}, rng)});
  }
  {
    auto w = loss_weights(2 * 4 * 4 * 1, rng);
    run("flip_horizontal_sel", [w](const std::vector<Tensor>& in) {
      return weighted_sum(flip_horizontal_sel(in[0], {1, 0}), w);
    }, {rand_uniform({2, 4, 4, 1}, rng)});
  }

  // losses
  {
    Tensor ref = rand_binary({1, 4, 4, 1}, rng);
    run("dice_loss", [ref](const std::vector<Tensor>& in) {
      return dice_loss(in[0], ref);
    }, {rand_uniform({1, 4, 4, 1}, rng, 0.05f, 0.95f)});
  }
  {
    // keep both the difference factor and the log factor away from their
    // zero crossings so finite differences stay valid
    std::uniform_real_distribution<float> u(0.0f, 1.0f);
    Shape sh{1, 3, 3, 1};
    std::vector<float> ya(9), yl(9), rv(9);
    for (int i = 0; i < 9; ++i) {
      ya[i] = 0.1f + 0.3f * u(rng);
      yl[i] = ya[i] + 0.1f + 0.3f * u(rng);
      rv[i] = ya[i] + 0.15f + 0.3f * u(rng);
    }
    Tensor ref(sh, rv);
    run("kl_loss(paper)", [ref](const std::vector<Tensor>& in) {
      return kl_loss(in[0], in[1], ref);
    }, {Tensor(sh, yl, true), Tensor(sh, ya, true)});
    run("kl_loss(standard)", [ref](const std::vector<Tensor>& in) {
      return kl_loss(in[0], in[1], ref, 1e-7f, KlVariant::Standard);
    }, {Tensor(sh, yl, true), Tensor(sh, ya, true)});
  }
  {
    Tensor logits = rand_uniform({3, 1}, rng, 0.1f, 0.9f);
    run("adv_loss_real", [](const std::vector<Tensor>& in) {
      return adv_loss_real(in[0]);
    }, {logits});
    run("adv_loss_pred", [](const std::vector<Tensor>& in) {
      return adv_loss_pred(in[0]);
    }, {rand_uniform({3, 1}, rng, 0.1f, 0.9f)});
    run("adv_loss_seg", [](const std::vector<Tensor>& in) {
      return adv_loss_seg(in[0]);
    }, {rand_uniform({3, 1}, rng, 0.1f, 0.9f)});
  }
  {
    run("feature_loss", [](const std::vector<Tensor>& in) {
      return feature_loss({in[0], in[1]}, {in[2], in[3]});
    }, {rand_uniform({2, 3, 3, 2}, rng), rand_uniform({2, 3, 3, 2}, rng),
        rand_uniform({2, 3, 3, 2}, rng), rand_uniform({2, 3, 3, 2}, rng)});
  }
  {
    run("encoder_loss", [](const std::vector<Tensor>& in) {
      return encoder_loss(in[0], in[1]);
    }, {rand_uniform({1, 16}, rng), rand_uniform({1, 16}, rng)});
  }
  {
    Tensor ref = rand_binary({1, 8, 8, 1}, rng);
    run("seg_side_loss", [ref](const std::vector<Tensor>& in) {
      SegmentorOutput out;
      out.y8 = in[0];
      out.y4 = in[1];
      out.y2 = in[2];
      out.y1 = in[3];
      return seg_side_loss(out, ref, {0.125f, 0.25f, 0.5f, 1.0f},
                           {true, true, true, true});
    }, {rand_uniform({1, 1, 1, 1}, rng, 0.05f, 0.95f),
        rand_uniform({1, 2, 2, 1}, rng, 0.05f, 0.95f),
        rand_uniform({1, 4, 4, 1}, rng, 0.05f, 0.95f),
        rand_uniform({1, 8, 8, 1}, rng, 0.05f, 0.95f)});
  }
  {
    run("total_segmentor_loss", [](const std::vector<Tensor>& in) {
      return total_segmentor_loss(in[0], in[1], in[2], in[3], 0.3f, 0.01f, 1.0f);
    }, {rand_uniform({1}, rng, 0.0f, 1.0f), rand_uniform({1}, rng, 0.0f, 1.0f),
        rand_uniform({1}, rng, 0.0f, 1.0f), rand_uniform({1}, rng, 0.0f, 1.0f)});
  }

  // Three-layer toy network end to end. Finite differences are only valid
  // away from activation kinks, so redraw the inputs until the pre-relu
  // values and the maxpool window gaps clear a margin well above eps.
  {
    Tensor ref = rand_binary({1, 2, 2, 1}, rng);
    auto draw = [&rng] {
      return std::vector<Tensor>{
          rand_uniform({1, 4, 4, 1}, rng), rand_uniform({3, 3, 1, 2}, rng, -0.4f, 0.4f),
          rand_uniform({2}, rng, -0.1f, 0.1f), rand_uniform({2}, rng, 0.5f, 1.5f),
          rand_uniform({2}, rng, -0.2f, 0.2f), rand_uniform({3, 3, 2, 1}, rng, -0.4f, 0.4f),
          rand_uniform({1}, rng, -0.1f, 0.1f)};
    };
    constexpr float kMargin = 0.12f;
    std::vector<Tensor> inputs;
    for (int attempt = 0; attempt < 5000; ++attempt) {
      inputs = draw();
      Tensor pre = instance_norm(conv2d(inputs[0], inputs[1], inputs[2]),
                                 inputs[3], inputs[4]);
      bool ok = true;
      for (float v : pre.data())
        if (std::fabs(v) < kMargin) ok = false;
      Tensor act = leaky_relu(pre, 0.2f);
      // top-2 gap in every 2x2 pooling window
      for (int c = 0; c < 2 && ok; ++c)
        for (int h = 0; h < 4 && ok; h += 2)
          for (int w = 0; w < 4 && ok; w += 2) {
            float hi1 = -1e30f, hi2 = -1e30f;
            for (int dh = 0; dh < 2; ++dh)
              for (int dw = 0; dw < 2; ++dw) {
                const float v = act.data()[(((size_t)h + dh) * 4 + w + dw) * 2 + c];
                if (v > hi1) {
                  hi2 = hi1;
                  hi1 = v;
                } else if (v > hi2) {
                  hi2 = v;
                }
              }
            if (hi1 - hi2 < kMargin) ok = false;
          }
      if (ok) break;
    }
    run("toy_network", [ref](const std::vector<Tensor>& in) {
      Tensor h = conv2d(in[0], in[1], in[2]);
      h = instance_norm(h, in[3], in[4]);
      h = leaky_relu(h, 0.2f);
      h = maxpool2(h);
      Tensor y = sigmoid(conv2d(h, in[5], in[6]));
      return dice_loss(y, ref);
    }, inputs);
  }

  return report;
}

}  // namespace pass
