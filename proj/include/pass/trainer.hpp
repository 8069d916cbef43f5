#pragma once

#include <array>
#include <functional>
#include <map>
#include <optional>
#include <string>

#include "pass/data.hpp"
#include "pass/losses.hpp"
#include "pass/nets.hpp"

namespace pass {

// Raised when a loss turns non-finite; carries the offending report.
struct NumericalError : std::runtime_error {
  explicit NumericalError(const std::string& msg) : std::runtime_error(msg) {}
};

// Side-output scales indexed coarse to fine, matching LossReport.
constexpr std::array<int, 4> kScales{8, 4, 2, 1};

struct TrainConfig {
  int epochs = 30;
  int batch_size = 4;
  float lr_S = 0.01f;
  float lr_D = 0.001f;
  float lr_E = 0.001f;
  float decay_factor = 0.9f;  // multiply every decay_every epochs
  int decay_every = 5;
  float lambda = 0.3f;
  float alpha = 0.01f;
  float beta = 1.0f;
  std::array<float, 4> side_weights{0.125f, 0.25f, 0.5f, 1.0f};  // coarse->fine
  float dice_eps = 1.0f;
  float kl_eps = 1e-7f;
  KlVariant kl_variant = KlVariant::Paper;
  bool use_gx = true;
  bool progressive = true;
  int progress_interval = 2;
  uint32_t seed = 1;

  void validate() const;
  float lr_at(float base_lr, int epoch) const;
  std::array<bool, 4> active_scales(int epoch) const;  // coarse->fine
};

// Canonical Adam with the bias correction, one moment pair per parameter.
struct AdamState {
  float beta1 = 0.9f;
  float beta2 = 0.999f;
  float eps = 1e-8f;
  int64_t t = 0;
  std::map<std::string, std::vector<float>> m, v;

  void step(ParamStore& params, float lr);
  void save(const std::string& path) const;
  void load(const std::string& path, const ParamStore& params);
};

// Per-image appearance transform parameters of g(x).
struct GxParams {
  float gamma = 1.0f;    // [0.5, 2.0]
  float scale = 1.0f;    // [0.7, 1.3]
  float offset = 0.0f;   // [-0.1, 0.1]
  float sigma = 0.0f;    // [0, 0.05]
  bool flip = false;
};

struct TransformedBatch {
  Tensor images;                 // same shape as the input batch
  std::vector<uint8_t> flipped;  // per-sample flip bit, for KL re-alignment
};

GxParams draw_gx(std::mt19937& rng);
TransformedBatch transform_gx(const Tensor& images, const std::vector<GxParams>& params,
                              std::mt19937& noise_rng);
TransformedBatch transform_gx(const Tensor& images, std::mt19937& rng);

struct PassModel {
  NetworkSpec spec;
  ParamStore S, E;
  std::array<ParamStore, 4> D;  // coarse (D8) -> fine (D)

  static PassModel build(const NetworkSpec& spec, uint32_t seed);
};

// Single combined checkpoint: every network's tensors under a prefix.
void save_model(const PassModel& model, const std::string& path);
void load_model(PassModel& model, const std::string& path);

class Trainer {
 public:
  Trainer(PassModel model, TrainConfig config);

  LossReport train_step(const Tensor& images, const Tensor& masks);

  // Runs the full schedule, writing loss_log.csv, val_metrics.csv,
  // final.ckpt and best.ckpt under out_dir. Returns best validation Dice.
  double train(const Dataset& dataset, const std::string& out_dir);

  // Mean validation-style Dice of the current model over given indices.
  double mean_dice(const Dataset& dataset, const std::vector<int>& indices);

  void save_state(const std::string& dir) const;
  void load_state(const std::string& dir);

  PassModel& model() { return model_; }
  const TrainConfig& config() const { return config_; }
  int epoch() const { return epoch_; }
  void set_epoch(int e) { epoch_ = e; }
  const std::vector<LossReport>& reports() const { return reports_; }

 private:
  PassModel model_;
  TrainConfig config_;
  AdamState adam_S_, adam_E_;
  std::array<AdamState, 4> adam_D_;
  std::mt19937 rng_order_, rng_gx_, rng_dropout_;
  int epoch_ = 0;
  std::vector<LossReport> reports_;

  Tensor downsample_image(const Tensor& images, int scale) const;
};

}  // namespace pass
