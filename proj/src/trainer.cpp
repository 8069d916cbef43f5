#include "pass/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <sstream>

#include "pass/checkpoint.hpp"
#include "pass/metrics.hpp"

namespace fs = std::filesystem;

namespace pass {

namespace {

uint32_t mix(uint32_t a, uint32_t b) {
  uint64_t h = (uint64_t)a * 0x9E3779B97F4A7C15ull + b;
  h ^= h >> 29;
  h *= 0xBF58476D1CE4E5B9ull;
  h ^= h >> 32;
  return (uint32_t)h;
}

const char* kDiscPrefix[4] = {"D8.", "D4.", "D2.", "D1."};

std::string rng_to_string(const std::mt19937& rng) {
  std::ostringstream os;
  os << rng;
  return os.str();
}

void rng_from_string(std::mt19937& rng, const std::string& s) {
  std::istringstream is(s);
  is >> rng;
  if (!is) throw ContractError("corrupt RNG state in trainer state file");
}

}  // namespace

void TrainConfig::validate() const {
  if (epochs < 1 || batch_size < 1) throw ConfigError("epochs and batch_size must be >= 1");
  if (lr_S <= 0 || lr_D <= 0 || lr_E <= 0) throw ConfigError("learning rates must be positive");
  if (decay_factor <= 0.0f || decay_factor >= 1.0f)
    throw ConfigError("decay_factor must be in (0,1)");
  if (decay_every < 1) throw ConfigError("decay_every must be >= 1");
  if (lambda < 0 || alpha < 0 || beta < 0)
    throw ConfigError("lambda, alpha, beta must be non-negative");
  for (float w : side_weights)
    if (w < 0) throw ConfigError("side weights must be non-negative");
  if (progress_interval < 1) throw ConfigError("progress_interval must be >= 1");
}

float TrainConfig::lr_at(float base_lr, int epoch) const {
  return base_lr * std::pow(decay_factor, (float)(epoch / decay_every));
}

std::array<bool, 4> TrainConfig::active_scales(int epoch) const {
  std::array<bool, 4> a{true, true, true, true};
  if (!progressive) return a;
  for (int i = 1; i < 4; ++i) a[i] = epoch >= i * progress_interval;
  return a;
}

// ---------------------------------------------------------------------------

void AdamState::step(ParamStore& params, float lr) {
  ++t;
  const float bc1 = 1.0f - std::pow(beta1, (float)t);
  const float bc2 = 1.0f - std::pow(beta2, (float)t);
  for (auto& [name, p] : params.params) {
    if (!p.has_grad()) continue;
    auto& mm = m[name];
    auto& vv = v[name];
    if (mm.empty()) mm.assign(p.size(), 0.0f);
    if (vv.empty()) vv.assign(p.size(), 0.0f);
    auto& data = p.data();
    const auto& g = p.grad();
    for (int64_t i = 0; i < p.size(); ++i) {
      mm[i] = beta1 * mm[i] + (1.0f - beta1) * g[i];
      vv[i] = beta2 * vv[i] + (1.0f - beta2) * g[i] * g[i];
      const float mhat = mm[i] / bc1;
      const float vhat = vv[i] / bc2;
      data[i] -= lr * mhat / (std::sqrt(vhat) + eps);
    }
  }
}

void AdamState::save(const std::string& path) const {
  ParamStore blob;
  blob.add("t", Tensor::scalar((float)t));
  for (const auto& [name, mm] : m)
    blob.add("m." + name, Tensor({(int)mm.size()}, mm));
  for (const auto& [name, vv] : v)
    blob.add("v." + name, Tensor({(int)vv.size()}, vv));
  save_params(blob, path);
}

void AdamState::load(const std::string& path, const ParamStore& params) {
  ParamStore blob = load_params(path);
  t = (int64_t)blob.at("t").item();
  m.clear();
  v.clear();
  for (const auto& [name, tsr] : blob.params) {
    if (name.rfind("m.", 0) == 0) m[name.substr(2)] = tsr.data();
    if (name.rfind("v.", 0) == 0) v[name.substr(2)] = tsr.data();
  }
  for (const auto& [name, mm] : m)
    if (params.params.count(name) == 0)
      throw ContractError("optimizer state for unknown parameter " + name);
}

// ---------------------------------------------------------------------------

GxParams draw_gx(std::mt19937& rng) {
  auto u = [&](float lo, float hi) {
    return std::uniform_real_distribution<float>(lo, hi)(rng);
  };
  GxParams p;
  p.gamma = u(0.5f, 2.0f);
  p.scale = u(0.7f, 1.3f);
  p.offset = u(-0.1f, 0.1f);
  p.sigma = u(0.0f, 0.05f);
  p.flip = u(0.0f, 1.0f) < 0.5f;
  return p;
}

TransformedBatch transform_gx(const Tensor& images, const std::vector<GxParams>& params,
                              std::mt19937& noise_rng) {
  if (images.rank() != 4) throw ShapeError("transform_gx expects [N,H,W,C]");
  const int N = images.dim(0);
  if ((int)params.size() != N) throw ContractError("transform_gx: one GxParams per image");
  const int64_t per = images.size() / N;
  const int W = images.dim(2), C = images.dim(3);

  std::vector<float> out(images.data());
  TransformedBatch tb;
  tb.flipped.resize(N);
  for (int n = 0; n < N; ++n) {
    const GxParams& p = params[n];
    tb.flipped[n] = p.flip ? 1 : 0;
    std::normal_distribution<float> noise(0.0f, p.sigma);
    float* img = out.data() + (int64_t)n * per;
    for (int64_t i = 0; i < per; ++i) {
      float v = img[i];
      if (p.gamma != 1.0f) v = std::pow(std::max(v, 0.0f), p.gamma);
      v = p.scale * v + p.offset;
      if (p.sigma > 0.0f) v += noise(noise_rng);
      img[i] = std::min(1.0f, std::max(0.0f, v));
    }
    if (p.flip) {
      const int H = images.dim(1);
      for (int h = 0; h < H; ++h)
        for (int w = 0; w < W / 2; ++w)
          for (int c = 0; c < C; ++c)
            std::swap(img[((int64_t)h * W + w) * C + c],
                      img[((int64_t)h * W + (W - 1 - w)) * C + c]);
    }
  }
  tb.images = Tensor(images.shape(), std::move(out));
  return tb;
}

TransformedBatch transform_gx(const Tensor& images, std::mt19937& rng) {
  const int N = images.dim(0);
  std::vector<GxParams> params(N);
  for (int n = 0; n < N; ++n) params[n] = draw_gx(rng);
  return transform_gx(images, params, rng);
}

// ---------------------------------------------------------------------------

PassModel PassModel::build(const NetworkSpec& spec, uint32_t seed) {
  spec.validate();
  PassModel m;
  m.spec = spec;
  std::mt19937 rng_s(mix(seed, 101)), rng_e(mix(seed, 103));
  m.S = build_segmentor(spec, rng_s);
  m.E = build_encoder(spec, rng_e);
  for (int i = 0; i < 4; ++i) {
    std::mt19937 rng_d(mix(seed, 200 + kScales[i]));
    m.D[i] = build_discriminator(kScales[i], spec, rng_d);
  }
  return m;
}

void save_model(const PassModel& model, const std::string& path) {
  ParamStore combined;
  for (const auto& [name, t] : model.S.params) combined.add("S." + name, t);
  for (const auto& [name, t] : model.E.params) combined.add("E." + name, t);
  for (int i = 0; i < 4; ++i)
    for (const auto& [name, t] : model.D[i].params)
      combined.add(kDiscPrefix[i] + name, t);
  save_params(combined, path);
}

void load_model(PassModel& model, const std::string& path) {
  ParamStore combined = load_params(path);
  auto scatter = [&](ParamStore& dst, const std::string& prefix) {
    for (auto& [name, t] : dst.params) {
      const Tensor& src = combined.at(prefix + name);
      if (src.shape() != t.shape())
        throw ContractError("checkpoint shape mismatch for " + prefix + name);
      t.data() = src.data();
      t.zero_grad();
    }
  };
  scatter(model.S, "S.");
  scatter(model.E, "E.");
  for (int i = 0; i < 4; ++i) scatter(model.D[i], kDiscPrefix[i]);
}

// ---------------------------------------------------------------------------

Trainer::Trainer(PassModel model, TrainConfig config)
    : model_(std::move(model)), config_(config) {
  config_.validate();
  rng_order_.seed(mix(config_.seed, 1));
  rng_gx_.seed(mix(config_.seed, 2));
  rng_dropout_.seed(mix(config_.seed, 3));
}

Tensor Trainer::downsample_image(const Tensor& images, int scale) const {
  Tensor x = images;
  for (int s = scale; s > 1; s /= 2) x = avgpool2(x);
  return x;
}

LossReport Trainer::train_step(const Tensor& images, const Tensor& masks) {
  const NetworkSpec& spec = model_.spec;
  const auto active = config_.active_scales(epoch_);
  const float lr_d = config_.lr_at(config_.lr_D, epoch_);
  const float lr_e = config_.lr_at(config_.lr_E, epoch_);
  const float lr_s = config_.lr_at(config_.lr_S, epoch_);

  LossReport report;

  // One forward per branch of Algorithm 1; detached views feed the D and
  // E updates, the live graph feeds S's own update.
  SegmentorOutput seg = forward_segmentor(model_.S, spec, images, true, &rng_dropout_);
  std::optional<TransformedBatch> aug;
  SegmentorOutput seg_a;
  if (config_.use_gx) {
    aug = transform_gx(images, rng_gx_);
    seg_a = forward_segmentor(model_.S, spec, aug->images, true, &rng_dropout_);
  }

  std::array<Tensor, 4> x_s, y_s;
  for (int i = 0; i < 4; ++i) {
    if (!active[i]) continue;
    x_s[i] = downsample_image(images, kScales[i]);
    y_s[i] = downsample_mask(masks, kScales[i]);
  }

  // 1. discriminators
  float total_D = 0.0f;
  for (int i = 0; i < 4; ++i) {
    if (!active[i]) continue;
    const int scale = kScales[i];
    Tensor pred_mask = detach(seg.at_scale(scale));
    DiscriminatorOutput d_real =
        forward_discriminator(model_.D[i], scale, spec, x_s[i], y_s[i]);
    DiscriminatorOutput d_pred =
        forward_discriminator(model_.D[i], scale, spec, x_s[i], pred_mask);
    Tensor l_real = adv_loss_real(d_real.logit);
    Tensor l_pred = adv_loss_pred(d_pred.logit);
    Tensor loss = add(l_real, l_pred);
    if (config_.use_gx && config_.alpha > 0.0f) {
      Tensor xa_s = downsample_image(aug->images, scale);
      Tensor pred_a = detach(seg_a.at_scale(scale));
      DiscriminatorOutput d_aug =
          forward_discriminator(model_.D[i], scale, spec, xa_s, pred_a);
      loss = add(loss, mul_scalar(adv_loss_pred(d_aug.logit), config_.alpha));
    }
    report.disc[i][0] = l_real.item();
    report.disc[i][1] = l_pred.item();
    total_D += loss.item();
    model_.D[i].zero_grad();
    backward(loss);
    adam_D_[i].step(model_.D[i], lr_d);
  }
  report.total_D = total_D;

  // 2. shape encoder
  {
    Tensor z = forward_encoder(model_.E, spec, images, masks);
    Tensor z_hat = forward_encoder(model_.E, spec, images, detach(seg.y1));
    Tensor loss = encoder_loss(z, z_hat);
    report.encoder = loss.item();
    report.total_E = report.encoder;
    model_.E.zero_grad();
    backward(loss);
    adam_E_.step(model_.E, lr_e);
  }

  // 3. segmentor
  {
    Tensor seg_loss = seg_side_loss(seg, masks, config_.side_weights, active,
                                    &report.dice_side, config_.dice_eps);
    Tensor kl = Tensor::scalar(0.0f);
    if (config_.use_gx && config_.lambda > 0.0f) {
      Tensor aligned = flip_horizontal_sel(seg_a.y1, aug->flipped);
      kl = kl_loss(seg.y1, aligned, masks, config_.kl_eps, config_.kl_variant);
    }
    report.kl = kl.item();

    Tensor adv = Tensor::scalar(0.0f);
    Tensor feat = Tensor::scalar(0.0f);
    if (config_.alpha > 0.0f || config_.beta > 0.0f) {
      std::vector<Tensor> real_feats, pred_feats;
      for (int i = 0; i < 4; ++i) {
        if (!active[i]) continue;
        const int scale = kScales[i];
        DiscriminatorOutput d_pred = forward_discriminator(
            model_.D[i], scale, spec, x_s[i], seg.at_scale(scale));
        if (config_.alpha > 0.0f) adv = add(adv, adv_loss_seg(d_pred.logit));
        if (config_.beta > 0.0f) {
          DiscriminatorOutput d_real =
              forward_discriminator(model_.D[i], scale, spec, x_s[i], y_s[i]);
          real_feats.push_back(d_real.features);
          pred_feats.push_back(d_pred.features);
        }
      }
      if (config_.beta > 0.0f) feat = feature_loss(real_feats, pred_feats);
    }
    report.seg_adv = adv.item();
    report.feature = feat.item();

    Tensor total = total_segmentor_loss(seg_loss, kl, adv, feat, config_.lambda,
                                        config_.alpha, config_.beta);
    report.total_S = total.item();
    model_.S.zero_grad();
    backward(total);
    adam_S_.step(model_.S, lr_s);
  }

  auto finite = [](float v) { return std::isfinite(v); };
  bool ok = finite(report.total_S) && finite(report.total_D) && finite(report.total_E) &&
            finite(report.kl) && finite(report.seg_adv) && finite(report.feature);
  for (float d : report.dice_side) ok = ok && finite(d);
  if (!ok)
    throw NumericalError("non-finite loss at epoch " + std::to_string(epoch_) +
                         ": " + report.csv_row(epoch_, -1));
  reports_.push_back(report);
  return report;
}

double Trainer::mean_dice(const Dataset& dataset, const std::vector<int>& indices) {
  if (indices.empty()) return 0.0;
  double total = 0.0;
  for (size_t start = 0; start < indices.size(); start += config_.batch_size) {
    std::vector<int> chunk(indices.begin() + start,
                           indices.begin() + std::min(indices.size(),
                                                      start + config_.batch_size));
    Tensor x = dataset.image_batch(chunk);
    Tensor y = dataset.mask_batch(chunk);
    SegmentorOutput out = forward_segmentor(model_.S, model_.spec, x, false);
    for (size_t i = 0; i < chunk.size(); ++i)
      total += dice_score(Mask::from_tensor(out.y1, (int)i),
                          Mask::from_tensor(y, (int)i));
  }
  return total / (double)indices.size();
}

double Trainer::train(const Dataset& dataset, const std::string& out_dir) {
  if (dataset.train_idx.empty()) throw ConfigError("dataset has no training split");
  fs::create_directories(out_dir);
  std::ofstream loss_csv(fs::path(out_dir) / "loss_log.csv");
  loss_csv << LossReport::csv_header() << "\n";
  std::ofstream val_csv(fs::path(out_dir) / "val_metrics.csv");
  val_csv << "epoch,val_dice,lr_S\n";

  double best_val = -1.0;
  for (; epoch_ < config_.epochs; ++epoch_) {
    std::vector<int> order = dataset.train_idx;
    std::shuffle(order.begin(), order.end(), rng_order_);
    int step = 0;
    for (size_t start = 0; start < order.size(); start += config_.batch_size, ++step) {
      std::vector<int> chunk(order.begin() + start,
                             order.begin() + std::min(order.size(),
                                                      start + config_.batch_size));
      Tensor x = dataset.image_batch(chunk);
      Tensor y = dataset.mask_batch(chunk);
      LossReport r = train_step(x, y);
      loss_csv << r.csv_row(epoch_, step) << "\n";
    }
    const double val = dataset.val_idx.empty()
                           ? mean_dice(dataset, dataset.train_idx)
                           : mean_dice(dataset, dataset.val_idx);
    val_csv << epoch_ << "," << val << "," << config_.lr_at(config_.lr_S, epoch_) << "\n";
    if (val > best_val) {
      best_val = val;
      save_model(model_, (fs::path(out_dir) / "best.ckpt").string());
    }
  }
  save_model(model_, (fs::path(out_dir) / "final.ckpt").string());
  return best_val;
}

void Trainer::save_state(const std::string& dir) const {
  fs::create_directories(dir);
  save_model(model_, (fs::path(dir) / "model.ckpt").string());
  adam_S_.save((fs::path(dir) / "adam_S.ckpt").string());
  adam_E_.save((fs::path(dir) / "adam_E.ckpt").string());
  for (int i = 0; i < 4; ++i)
    adam_D_[i].save((fs::path(dir) / ("adam_D" + std::to_string(kScales[i]) + ".ckpt")).string());
  std::ofstream st(fs::path(dir) / "trainer_state.txt");
  st << "epoch " << epoch_ << "\n";
  st << "rng_order " << rng_to_string(rng_order_) << "\n";
  st << "rng_gx " << rng_to_string(rng_gx_) << "\n";
  st << "rng_dropout " << rng_to_string(rng_dropout_) << "\n";
}

void Trainer::load_state(const std::string& dir) {
  load_model(model_, (fs::path(dir) / "model.ckpt").string());
  adam_S_.load((fs::path(dir) / "adam_S.ckpt").string(), model_.S);
  adam_E_.load((fs::path(dir) / "adam_E.ckpt").string(), model_.E);
  for (int i = 0; i < 4; ++i)
    adam_D_[i].load(
        (fs::path(dir) / ("adam_D" + std::to_string(kScales[i]) + ".ckpt")).string(),
        model_.D[i]);
  std::ifstream st(fs::path(dir) / "trainer_state.txt");
  if (!st) throw ContractError("missing trainer_state.txt in " + dir);
  std::string key, rest;
  while (st >> key) {
    std::getline(st, rest);
    if (!rest.empty() && rest.front() == ' ') rest.erase(0, 1);
    if (key == "epoch") epoch_ = std::stoi(rest);
    if (key == "rng_order") rng_from_string(rng_order_, rest);
    if (key == "rng_gx") rng_from_string(rng_gx_, rest);
    if (key == "rng_dropout") rng_from_string(rng_dropout_, rest);
  }
}

}  // namespace pass
