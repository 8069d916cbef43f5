#include "pass/losses.hpp"

#include <cmath>
#include <sstream>

namespace pass {

namespace {

constexpr float kLogitClamp = 1e-6f;

}  // namespace

std::string LossReport::csv_header() {
  return "epoch,step,dice8,dice4,dice2,dice1,kl,seg_adv,feature,encoder,"
         "d1_real,d1_pred,d2_real,d2_pred,d4_real,d4_pred,d8_real,d8_pred,"
         "total_S,total_D,total_E";
}

std::string LossReport::csv_row(int epoch, int step) const {
  std::ostringstream os;
  os << epoch << "," << step;
  os << "," << dice_side[0] << "," << dice_side[1] << "," << dice_side[2]
     << "," << dice_side[3];
  os << "," << kl << "," << seg_adv << "," << feature << "," << encoder;
  // fine -> coarse to match the d1,d2,d4,d8 header order
  for (int i = 3; i >= 0; --i) os << "," << disc[i][0] << "," << disc[i][1];
  os << "," << total_S << "," << total_D << "," << total_E;
  return os.str();
}

Tensor dice_loss(const Tensor& pred, const Tensor& ref, float eps) {
  if (pred.shape() != ref.shape())
    throw ShapeError("dice_loss: pred " + shape_str(pred.shape()) + " vs ref " +
                     shape_str(ref.shape()));
  if (eps <= 0.0f) throw ContractError("dice_loss eps must be positive");
  Tensor num = add_scalar(mul_scalar(sum_all(mul(pred, ref)), 2.0f), eps);
  Tensor den = add_scalar(add(sum_all(pred), sum_all(ref)), eps);
  return add_scalar(mul_scalar(div(num, den), -1.0f), 1.0f);
}

Tensor downsample_mask(const Tensor& ref, int scale) {
  Tensor m = ref;
  for (int s = scale; s > 1; s /= 2) m = avgpool2(m);
  if (scale == 1) return m;
  std::vector<float> bin(m.size());
  for (int64_t i = 0; i < m.size(); ++i) bin[i] = m.data()[i] >= 0.5f ? 1.0f : 0.0f;
  return Tensor(m.shape(), std::move(bin));
}

Tensor seg_side_loss(const SegmentorOutput& out, const Tensor& ref,
                     const std::array<float, 4>& weights,
                     const std::array<bool, 4>& active,
                     std::array<float, 4>* per_scale, float dice_eps) {
  static const int scales[4] = {8, 4, 2, 1};  // coarse -> fine
  Tensor total = Tensor::scalar(0.0f);
  for (int i = 0; i < 4; ++i) {
    if (!active[i]) {
      if (per_scale) (*per_scale)[i] = 0.0f;
      continue;
    }
    Tensor l = dice_loss(out.at_scale(scales[i]), downsample_mask(ref, scales[i]),
                         dice_eps);
    if (per_scale) (*per_scale)[i] = l.item();
    total = add(total, mul_scalar(l, weights[i]));
  }
  return total;
}

Tensor kl_loss(const Tensor& pred_labeled, const Tensor& pred_unlabeled,
               const Tensor& ref, float eps, KlVariant variant) {
  if (pred_labeled.shape() != pred_unlabeled.shape() ||
      pred_labeled.shape() != ref.shape())
    throw ShapeError("kl_loss: shapes " + shape_str(pred_labeled.shape()) + ", " +
                     shape_str(pred_unlabeled.shape()) + ", " +
                     shape_str(ref.shape()) + " must match");
  if (variant == KlVariant::Paper) {
    // sum |(yhat - yhat_a) * log((y+eps)/(yhat_a+eps))|, reference in the
    // log numerator
    Tensor ratio = div(add_scalar(ref, eps), add_scalar(pred_unlabeled, eps));
    Tensor term = mul(sub(pred_labeled, pred_unlabeled), log_t(ratio));
    return sum_all(abs_t(term));
  }
  // standard pointwise KL(yhat || yhat_a) over the two-class Bernoulli maps
  Tensor p = clamp(pred_labeled, kLogitClamp, 1.0f - kLogitClamp);
  Tensor q = clamp(pred_unlabeled, kLogitClamp, 1.0f - kLogitClamp);
  Tensor one_p = add_scalar(mul_scalar(p, -1.0f), 1.0f);
  Tensor one_q = add_scalar(mul_scalar(q, -1.0f), 1.0f);
  Tensor kl = add(mul(p, log_t(div(p, q))), mul(one_p, log_t(div(one_p, one_q))));
  return sum_all(kl);
}

Tensor adv_loss_real(const Tensor& d_logit) {
  Tensor d = clamp(d_logit, kLogitClamp, 1.0f - kLogitClamp);
  Tensor one_minus = add_scalar(mul_scalar(d, -1.0f), 1.0f);
  return mul_scalar(mean_all(log_t(one_minus)), -1.0f);
}

Tensor adv_loss_pred(const Tensor& d_logit) {
  Tensor d = clamp(d_logit, kLogitClamp, 1.0f - kLogitClamp);
  return mul_scalar(mean_all(log_t(d)), -1.0f);
}

Tensor adv_loss_seg(const Tensor& d_logit) { return adv_loss_real(d_logit); }

Tensor feature_loss(const std::vector<Tensor>& real_feats,
                    const std::vector<Tensor>& pred_feats) {
  if (real_feats.size() != pred_feats.size())
    throw ShapeError("feature_loss: list lengths differ");
  Tensor total = Tensor::scalar(0.0f);
  for (size_t i = 0; i < real_feats.size(); ++i) {
    if (real_feats[i].shape() != pred_feats[i].shape())
      throw ShapeError("feature_loss: feature " + std::to_string(i) +
                       " shapes differ: " + shape_str(real_feats[i].shape()) +
                       " vs " + shape_str(pred_feats[i].shape()));
    Tensor d = sub(mean_batch(real_feats[i]), mean_batch(pred_feats[i]));
    total = add(total, sum_all(mul(d, d)));
  }
  return total;
}

Tensor encoder_loss(const Tensor& z, const Tensor& z_hat) {
  if (z.shape() != z_hat.shape())
    throw ShapeError("encoder_loss: " + shape_str(z.shape()) + " vs " +
                     shape_str(z_hat.shape()));
  Tensor d = sub(z, z_hat);
  return mean_all(mul(d, d));
}

Tensor total_segmentor_loss(const Tensor& seg, const Tensor& kl, const Tensor& adv,
                            const Tensor& feature, float lambda, float alpha,
                            float beta) {
  if (lambda < 0.0f || alpha < 0.0f || beta < 0.0f)
    throw ContractError("loss weights must be non-negative");
  Tensor total = seg;
  if (lambda > 0.0f) total = add(total, mul_scalar(kl, lambda));
  if (alpha > 0.0f) total = add(total, mul_scalar(adv, alpha));
  if (beta > 0.0f) total = add(total, mul_scalar(feature, beta));
  return total;
}

}  // namespace pass
