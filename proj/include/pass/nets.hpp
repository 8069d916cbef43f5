#pragma once

#include <map>
#include <random>
#include <string>
#include <vector>

#include "pass/tensor.hpp"

namespace pass {

// Thrown when a NetworkSpec is internally inconsistent.
struct SpecError : std::runtime_error {
  explicit SpecError(const std::string& msg) : std::runtime_error(msg) {}
};

enum class EncoderInput { Stacked, MaskOnly };

struct NetworkSpec {
  int base_resolution = 64;  // 256 at paper scale
  int image_channels = 1;
  int mask_channels = 1;
  int base_filters = 16;     // 4 at desk scale
  int depth = 5;             // encoder stages of S; >= 4 for the four side outputs
  float leaky_slope = 0.2f;
  float dropout_rate = 0.25f;
  EncoderInput encoder_input = EncoderInput::Stacked;
  int latent_dim = 256;

  void validate() const;
};

// Flat named collection of learnable tensors. std::map keeps iteration
// order deterministic for checkpoints and optimizer sweeps.
struct ParamStore {
  std::map<std::string, Tensor> params;

  Tensor& at(const std::string& name);
  const Tensor& at(const std::string& name) const;
  Tensor& add(const std::string& name, Tensor t);
  void zero_grad();
  int64_t param_count() const;
};

struct SegmentorOutput {
  Tensor y8, y4, y2, y1;  // base/8 ... base, each in (0,1)
  Tensor at_scale(int scale) const;  // scale in {1,2,4,8}
};

struct DiscriminatorOutput {
  Tensor logit;     // [N,1], in (0,1)
  Tensor features;  // last pre-flatten activation map, [N, base/16, base/16, 8f]
};

// One row of the layer-shape trace: layer name and output extents.
using ShapeTrace = std::vector<std::pair<std::string, Shape>>;

ParamStore build_segmentor(const NetworkSpec& spec, std::mt19937& rng);
ParamStore build_discriminator(int scale, const NetworkSpec& spec, std::mt19937& rng);
ParamStore build_encoder(const NetworkSpec& spec, std::mt19937& rng);

SegmentorOutput forward_segmentor(const ParamStore& params, const NetworkSpec& spec,
                                  const Tensor& images, bool training = false,
                                  std::mt19937* dropout_rng = nullptr,
                                  ShapeTrace* trace = nullptr);
DiscriminatorOutput forward_discriminator(const ParamStore& params, int scale,
                                          const NetworkSpec& spec,
                                          const Tensor& image, const Tensor& mask,
                                          ShapeTrace* trace = nullptr);
Tensor forward_encoder(const ParamStore& params, const NetworkSpec& spec,
                       const Tensor& image, const Tensor& mask,
                       ShapeTrace* trace = nullptr);

// Analytic layer-shape listings (no forward pass), mirroring the
// checkpointable architecture exactly. Batch axis omitted.
ShapeTrace describe_segmentor(const NetworkSpec& spec);
ShapeTrace describe_discriminator(int scale, const NetworkSpec& spec);
ShapeTrace describe_encoder(const NetworkSpec& spec);

// Number of conv stages in discriminator D_scale and its stage output
// channel counts (first = base_filters*scale, doubling, capped at 8f).
std::vector<int> discriminator_stage_channels(int scale, const NetworkSpec& spec);

}  // namespace pass
