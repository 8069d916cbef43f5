#include "pass/nets.hpp"

#include <cmath>

namespace pass {

namespace {

bool is_pow2(int x) { return x > 0 && (x & (x - 1)) == 0; }

Tensor he_uniform(Shape shape, int fan_in, std::mt19937& rng) {
  const float limit = std::sqrt(6.0f / (float)fan_in);
  std::uniform_real_distribution<float> u(-limit, limit);
  std::vector<float> v(static_cast<size_t>(numel(shape)));
  for (auto& x : v) x = u(rng);
  return Tensor(std::move(shape), std::move(v), true);
}

void add_conv(ParamStore& ps, const std::string& name, int k, int in_ch,
              int out_ch, std::mt19937& rng, bool with_norm = true) {
  ps.add(name + ".kernel", he_uniform({k, k, in_ch, out_ch}, k * k * in_ch, rng));
  ps.add(name + ".bias", Tensor::zeros({out_ch}, true));
  if (with_norm) {
    ps.add(name + ".gain", Tensor::full({out_ch}, 1.0f, true));
    ps.add(name + ".shift", Tensor::zeros({out_ch}, true));
  }
}

void add_dense(ParamStore& ps, const std::string& name, int in_f, int out_f,
               std::mt19937& rng) {
  ps.add(name + ".weight", he_uniform({in_f, out_f}, in_f, rng));
  ps.add(name + ".bias", Tensor::zeros({out_f}, true));
}

// conv -> instance norm -> leaky-ReLU
Tensor conv_block(const ParamStore& ps, const std::string& name, const Tensor& x,
                  float slope) {
  Tensor y = conv2d(x, ps.at(name + ".kernel"), ps.at(name + ".bias"));
  y = instance_norm(y, ps.at(name + ".gain"), ps.at(name + ".shift"));
  return leaky_relu(y, slope);
}

std::vector<int> segmentor_channels(const NetworkSpec& spec) {
  std::vector<int> c(spec.depth);
  for (int i = 0; i < spec.depth; ++i) c[i] = spec.base_filters << i;
  return c;
}

std::vector<int> encoder_channels(const NetworkSpec& spec) {
  return {spec.base_filters, spec.base_filters * 2, spec.base_filters * 4,
          spec.base_filters * 8, spec.base_filters * 16};
}

void record(ShapeTrace* trace, const std::string& name, Shape s) {
  if (trace) trace->emplace_back(name, std::move(s));
}

}  // namespace

void NetworkSpec::validate() const {
  if (!is_pow2(base_resolution))
    throw SpecError("base_resolution must be a power of 2");
  if (depth < 4)
    throw SpecError("depth must be >= 4 for the four side outputs");
  if (base_resolution % (1 << depth) != 0)
    throw SpecError("base_resolution " + std::to_string(base_resolution) +
                    " not divisible by 2^depth");
  if (base_resolution < 32)
    throw SpecError("base_resolution must be >= 32 for the discriminator stack");
  if (image_channels < 1 || mask_channels < 1 || base_filters < 1)
    throw SpecError("channel and filter counts must be positive");
}

Tensor& ParamStore::at(const std::string& name) {
  auto it = params.find(name);
  if (it == params.end()) throw ContractError("no parameter named " + name);
  return it->second;
}

const Tensor& ParamStore::at(const std::string& name) const {
  auto it = params.find(name);
  if (it == params.end()) throw ContractError("no parameter named " + name);
  return it->second;
}

Tensor& ParamStore::add(const std::string& name, Tensor t) {
  auto [it, fresh] = params.emplace(name, std::move(t));
  if (!fresh) throw ContractError("duplicate parameter " + name);
  return it->second;
}

void ParamStore::zero_grad() {
  for (auto& [name, t] : params) t.zero_grad();
}

int64_t ParamStore::param_count() const {
  int64_t n = 0;
  for (const auto& [name, t] : params) n += t.size();
  return n;
}

Tensor SegmentorOutput::at_scale(int scale) const {
  switch (scale) {
    case 1: return y1;
    case 2: return y2;
    case 4: return y4;
    case 8: return y8;
  }
  throw ContractError("side-output scale must be 1, 2, 4 or 8");
}

// ---------------------------------------------------------------------------
// Segmentor: U-Net, `depth` encoder stages (conv a/b + pool), symmetric
// decoder with skip concatenation, 1x1 sigmoid heads at base/8..base.

ParamStore build_segmentor(const NetworkSpec& spec, std::mt19937& rng) {
  spec.validate();
  ParamStore ps;
  const auto ch = segmentor_channels(spec);
  int in_ch = spec.image_channels;
  for (int i = 0; i < spec.depth; ++i) {
    add_conv(ps, "enc" + std::to_string(i + 1) + "a", 3, in_ch, ch[i], rng);
    add_conv(ps, "enc" + std::to_string(i + 1) + "b", 3, ch[i], ch[i], rng);
    in_ch = ch[i];
  }
  int cur = ch[spec.depth - 1];  // pooled bottom
  for (int j = spec.depth; j >= 1; --j) {
    const int cj = ch[j - 1];
    add_conv(ps, "dec" + std::to_string(j) + "a", 3, cur + cj, cj, rng);
    add_conv(ps, "dec" + std::to_string(j) + "b", 3, cj, cj, rng);
    cur = cj;
    const int scale = 1 << (j - 1);
    if (scale <= 8)
      add_conv(ps, "head" + std::to_string(scale), 1, cj, spec.mask_channels, rng,
               /*with_norm=*/false);
  }
  return ps;
}

SegmentorOutput forward_segmentor(const ParamStore& params, const NetworkSpec& spec,
                                  const Tensor& images, bool training,
                                  std::mt19937* dropout_rng, ShapeTrace* trace) {
  if (images.rank() != 4 || images.dim(3) != spec.image_channels ||
      images.dim(1) != spec.base_resolution || images.dim(2) != spec.base_resolution)
    throw ShapeError("segmentor input must be [N," + std::to_string(spec.base_resolution) +
                     "," + std::to_string(spec.base_resolution) + "," +
                     std::to_string(spec.image_channels) + "], got " +
                     shape_str(images.shape()));
  std::mt19937 unused_rng;
  std::mt19937& drng = dropout_rng ? *dropout_rng : unused_rng;

  Tensor x = images;
  std::vector<Tensor> skips;
  for (int i = 1; i <= spec.depth; ++i) {
    const std::string p = "enc" + std::to_string(i);
    x = conv_block(params, p + "a", x, spec.leaky_slope);
    record(trace, p + "a", x.shape());
    x = conv_block(params, p + "b", x, spec.leaky_slope);
    record(trace, p + "b", x.shape());
    skips.push_back(x);
    x = maxpool2(x);
    record(trace, "pool" + std::to_string(i), x.shape());
    x = dropout(x, spec.dropout_rate, drng, training);
  }
  SegmentorOutput out;
  for (int j = spec.depth; j >= 1; --j) {
    const std::string p = "dec" + std::to_string(j);
    x = upsample2(x);
    x = concat_channels(x, skips[j - 1]);
    x = conv_block(params, p + "a", x, spec.leaky_slope);
    record(trace, p + "a", x.shape());
    x = conv_block(params, p + "b", x, spec.leaky_slope);
    record(trace, p + "b", x.shape());
    const int scale = 1 << (j - 1);
    if (scale <= 8) {
      const std::string h = "head" + std::to_string(scale);
      Tensor y = sigmoid(conv2d(x, params.at(h + ".kernel"), params.at(h + ".bias")));
      record(trace, h, y.shape());
      if (scale == 8) out.y8 = y;
      if (scale == 4) out.y4 = y;
      if (scale == 2) out.y2 = y;
      if (scale == 1) out.y1 = y;
    }
  }
  return out;
}

ShapeTrace describe_segmentor(const NetworkSpec& spec) {
  spec.validate();
  ShapeTrace t;
  const auto ch = segmentor_channels(spec);
  int res = spec.base_resolution;
  for (int i = 1; i <= spec.depth; ++i) {
    t.emplace_back("enc" + std::to_string(i) + "a", Shape{res, res, ch[i - 1]});
    t.emplace_back("enc" + std::to_string(i) + "b", Shape{res, res, ch[i - 1]});
    res /= 2;
    t.emplace_back("pool" + std::to_string(i), Shape{res, res, ch[i - 1]});
  }
  for (int j = spec.depth; j >= 1; --j) {
    res *= 2;
    t.emplace_back("dec" + std::to_string(j) + "a", Shape{res, res, ch[j - 1]});
    t.emplace_back("dec" + std::to_string(j) + "b", Shape{res, res, ch[j - 1]});
    const int scale = 1 << (j - 1);
    if (scale <= 8)
      t.emplace_back("head" + std::to_string(scale), Shape{res, res, spec.mask_channels});
  }
  return t;
}

// ---------------------------------------------------------------------------
// Discriminators: D_s consumes the stacked (image, mask) pair at
// base/s. Every member ends at base/16 spatial with 8f channels, so the
// feature maps line up across scales for the feature loss.

std::vector<int> discriminator_stage_channels(int scale, const NetworkSpec& spec) {
  if (scale != 1 && scale != 2 && scale != 4 && scale != 8)
    throw SpecError("discriminator scale must be 1, 2, 4 or 8");
  std::vector<int> ch;
  for (int c = spec.base_filters * scale; c <= spec.base_filters * 8; c *= 2)
    ch.push_back(c);
  return ch;  // 4, 3, 2 or 1 stages for scale 1, 2, 4, 8
}

ParamStore build_discriminator(int scale, const NetworkSpec& spec, std::mt19937& rng) {
  spec.validate();
  ParamStore ps;
  const auto ch = discriminator_stage_channels(scale, spec);
  int in_ch = spec.image_channels + spec.mask_channels;
  for (size_t i = 0; i < ch.size(); ++i) {
    const std::string p = "conv" + std::to_string(i + 1);
    add_conv(ps, p + "a", 3, in_ch, ch[i], rng);
    add_conv(ps, p + "b", 3, ch[i], ch[i], rng);
    in_ch = ch[i];
  }
  const int fres = spec.base_resolution / 16;
  add_dense(ps, "dense", fres * fres * spec.base_filters * 8, 1, rng);
  return ps;
}

DiscriminatorOutput forward_discriminator(const ParamStore& params, int scale,
                                          const NetworkSpec& spec,
                                          const Tensor& image, const Tensor& mask,
                                          ShapeTrace* trace) {
  const int res = spec.base_resolution / scale;
  auto check = [&](const Tensor& t, int ch, const char* what) {
    if (t.rank() != 4 || t.dim(1) != res || t.dim(2) != res || t.dim(3) != ch)
      throw ShapeError(std::string("discriminator ") + what + " must be [N," +
                       std::to_string(res) + "," + std::to_string(res) + "," +
                       std::to_string(ch) + "], got " + shape_str(t.shape()));
  };
  check(image, spec.image_channels, "image");
  check(mask, spec.mask_channels, "mask");

  Tensor x = concat_channels(image, mask);
  const auto ch = discriminator_stage_channels(scale, spec);
  for (size_t i = 0; i < ch.size(); ++i) {
    const std::string p = "conv" + std::to_string(i + 1);
    x = conv_block(params, p + "a", x, spec.leaky_slope);
    record(trace, p + "a", x.shape());
    x = conv_block(params, p + "b", x, spec.leaky_slope);
    record(trace, p + "b", x.shape());
    x = maxpool2(x);
    record(trace, "pool" + std::to_string(i + 1), x.shape());
  }
  DiscriminatorOutput out;
  out.features = x;
  const int N = x.dim(0);
  Tensor flat = reshape(x, {N, (int)(x.size() / N)});
  record(trace, "flatten", flat.shape());
  Tensor l = dense(flat, params.at("dense.weight"), params.at("dense.bias"));
  record(trace, "dense", l.shape());
  out.logit = sigmoid(l);
  return out;
}

ShapeTrace describe_discriminator(int scale, const NetworkSpec& spec) {
  spec.validate();
  ShapeTrace t;
  const auto ch = discriminator_stage_channels(scale, spec);
  int res = spec.base_resolution / scale;
  for (size_t i = 0; i < ch.size(); ++i) {
    t.emplace_back("conv" + std::to_string(i + 1) + "a", Shape{res, res, ch[i]});
    t.emplace_back("conv" + std::to_string(i + 1) + "b", Shape{res, res, ch[i]});
    res /= 2;
    t.emplace_back("pool" + std::to_string(i + 1), Shape{res, res, ch[i]});
  }
  t.emplace_back("flatten", Shape{res * res * ch.back()});
  t.emplace_back("dense", Shape{1});
  return t;
}

// ---------------------------------------------------------------------------
// Shape encoder: five conv stages, pools after the first four, flatten,
// dense to the fixed-length latent.

ParamStore build_encoder(const NetworkSpec& spec, std::mt19937& rng) {
  spec.validate();
  ParamStore ps;
  const auto ch = encoder_channels(spec);
  int in_ch = spec.encoder_input == EncoderInput::Stacked
                  ? spec.image_channels + spec.mask_channels
                  : spec.mask_channels;
  for (size_t i = 0; i < ch.size(); ++i) {
    const std::string p = "conv" + std::to_string(i + 1);
    add_conv(ps, p + "a", 3, in_ch, ch[i], rng);
    add_conv(ps, p + "b", 3, ch[i], ch[i], rng);
    in_ch = ch[i];
  }
  const int fres = spec.base_resolution / 16;
  add_dense(ps, "dense_z", fres * fres * ch.back(), spec.latent_dim, rng);
  return ps;
}

Tensor forward_encoder(const ParamStore& params, const NetworkSpec& spec,
                       const Tensor& image, const Tensor& mask, ShapeTrace* trace) {
  Tensor x = spec.encoder_input == EncoderInput::Stacked
                 ? concat_channels(image, mask)
                 : mask;
  const auto ch = encoder_channels(spec);
  for (size_t i = 0; i < ch.size(); ++i) {
    const std::string p = "conv" + std::to_string(i + 1);
    x = conv_block(params, p + "a", x, spec.leaky_slope);
    record(trace, p + "a", x.shape());
    x = conv_block(params, p + "b", x, spec.leaky_slope);
    record(trace, p + "b", x.shape());
    if (i + 1 < ch.size()) {
      x = maxpool2(x);
      record(trace, "pool" + std::to_string(i + 1), x.shape());
    }
  }
  const int N = x.dim(0);
  Tensor flat = reshape(x, {N, (int)(x.size() / N)});
  record(trace, "flatten", flat.shape());
  Tensor z = dense(flat, params.at("dense_z.weight"), params.at("dense_z.bias"));
  record(trace, "dense_z", z.shape());
  return z;
}

ShapeTrace describe_encoder(const NetworkSpec& spec) {
  spec.validate();
  ShapeTrace t;
  const auto ch = encoder_channels(spec);
  int res = spec.base_resolution;
  for (size_t i = 0; i < ch.size(); ++i) {
    t.emplace_back("conv" + std::to_string(i + 1) + "a", Shape{res, res, ch[i]});
    t.emplace_back("conv" + std::to_string(i + 1) + "b", Shape{res, res, ch[i]});
    if (i + 1 < ch.size()) {
      res /= 2;
      t.emplace_back("pool" + std::to_string(i + 1), Shape{res, res, ch[i]});
    }
  }
  t.emplace_back("flatten", Shape{res * res * ch.back()});
  t.emplace_back("dense_z", Shape{spec.latent_dim});
  return t;
}

}  // namespace pass
