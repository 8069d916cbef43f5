#pragma once

#include <array>
#include <string>
#include <vector>

#include "pass/nets.hpp"
#include "pass/tensor.hpp"

namespace pass {

enum class KlVariant { Paper, Standard };

// Per-step record of every loss term. disc[i] holds the real-pair and
// predicted-pair loss of discriminator i, indexed coarse to fine like
// dice_side: 0 = D8, 1 = D4, 2 = D2, 3 = D.
struct LossReport {
  std::array<float, 4> dice_side{};  // coarse (x/8) .. fine (x)
  float kl = 0.0f;
  float seg_adv = 0.0f;
  float feature = 0.0f;
  float encoder = 0.0f;
  std::array<std::array<float, 2>, 4> disc{};
  float total_S = 0.0f;
  float total_D = 0.0f;
  float total_E = 0.0f;

  static std::string csv_header();
  std::string csv_row(int epoch, int step) const;
};

// 1 - (2*sum(p*r)+eps) / (sum(p)+sum(r)+eps)
Tensor dice_loss(const Tensor& pred, const Tensor& ref, float eps = 1.0f);

// Average-pool the base-resolution reference down by `scale`, then
// re-binarize at 0.5. Non-differentiable helper for side supervision.
Tensor downsample_mask(const Tensor& ref, int scale);

// Weighted sum of per-scale Dice losses over the active scales.
// weights/active indexed coarse (x/8) to fine (x).
Tensor seg_side_loss(const SegmentorOutput& out, const Tensor& ref,
                     const std::array<float, 4>& weights,
                     const std::array<bool, 4>& active,
                     std::array<float, 4>* per_scale = nullptr,
                     float dice_eps = 1.0f);

// sum_i |(pred_labeled - pred_unlabeled) * log((ref+eps)/(pred_unlabeled+eps))|
Tensor kl_loss(const Tensor& pred_labeled, const Tensor& pred_unlabeled,
               const Tensor& ref, float eps = 1e-7f,
               KlVariant variant = KlVariant::Paper);

// D's output is read as the probability the pair is model-predicted:
// D trains D(x,y) -> 0 and D(x,yhat) -> 1, S pushes D(x,yhat) -> 0.
Tensor adv_loss_real(const Tensor& d_logit);  // -log(1 - D(x,y))
Tensor adv_loss_pred(const Tensor& d_logit);  // -log(D(x,yhat))
Tensor adv_loss_seg(const Tensor& d_logit);   // -log(1 - D(x,yhat))

// sum_i || mean_batch(real_i) - mean_batch(pred_i) ||_2^2
Tensor feature_loss(const std::vector<Tensor>& real_feats,
                    const std::vector<Tensor>& pred_feats);

// (1/n) sum (z - zhat)^2
Tensor encoder_loss(const Tensor& z, const Tensor& z_hat);

// L_S = L_seg + lambda*L_KL + alpha*L_adv + beta*L_feature
Tensor total_segmentor_loss(const Tensor& seg, const Tensor& kl, const Tensor& adv,
                            const Tensor& feature, float lambda, float alpha,
                            float beta);

}  // namespace pass
