#include "pass/tensor.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <numeric>
#include <sstream>
#include <unordered_set>

namespace pass {

namespace {

std::atomic<int64_t> g_next_id{1};

std::shared_ptr<detail::Node> make_node(Shape shape) {
  auto n = std::make_shared<detail::Node>();
  n->data.assign(static_cast<size_t>(numel(shape)), 0.0f);
  n->shape = std::move(shape);
  n->id = g_next_id.fetch_add(1);
  return n;
}

void require(bool cond, const std::string& msg) {
  if (!cond) throw ShapeError(msg);
}

// Marks `out` differentiable and installs the reverse closure when any
// parent participates in the graph.
void wire(const std::shared_ptr<detail::Node>& out,
          std::vector<std::shared_ptr<detail::Node>> parents,
          std::function<void(detail::Node&)> backward_fn) {
  bool needs = false;
  for (const auto& p : parents)
    if (p->requires_grad) needs = true;
  if (!needs) return;
  out->requires_grad = true;
  out->parents = std::move(parents);
  out->backward_fn = std::move(backward_fn);
}

}  // namespace

int64_t numel(const Shape& s) {
  int64_t n = 1;
  for (int e : s) {
    if (e <= 0) throw ShapeError("non-positive extent in shape " + shape_str(s));
    n *= e;
  }
  return n;
}

std::string shape_str(const Shape& s) {
  std::ostringstream os;
  os << "[";
  for (size_t i = 0; i < s.size(); ++i) os << (i ? "," : "") << s[i];
  os << "]";
  return os.str();
}

void detail::Node::ensure_grad() {
  if (grad.empty()) grad.assign(data.size(), 0.0f);
}

Tensor::Tensor(Shape shape, std::vector<float> values, bool requires_grad) {
  if (static_cast<int64_t>(values.size()) != numel(shape))
    throw ShapeError("value count " + std::to_string(values.size()) +
                     " does not match shape " + shape_str(shape));
  node_ = std::make_shared<detail::Node>();
  node_->shape = std::move(shape);
  node_->data = std::move(values);
  node_->requires_grad = requires_grad;
  node_->id = g_next_id.fetch_add(1);
}

Tensor Tensor::zeros(Shape shape, bool requires_grad) {
  return full(std::move(shape), 0.0f, requires_grad);
}

Tensor Tensor::full(Shape shape, float value, bool requires_grad) {
  std::vector<float> v(static_cast<size_t>(numel(shape)), value);
  return Tensor(std::move(shape), std::move(v), requires_grad);
}

Tensor Tensor::scalar(float value, bool requires_grad) {
  return Tensor({1}, {value}, requires_grad);
}

std::vector<float>& Tensor::grad() {
  node_->ensure_grad();
  return node_->grad;
}

const std::vector<float>& Tensor::grad() const {
  node_->ensure_grad();
  return node_->grad;
}

void Tensor::zero_grad() {
  if (!node_->grad.empty()) std::fill(node_->grad.begin(), node_->grad.end(), 0.0f);
}

float Tensor::item() const {
  if (size() != 1) throw ContractError("item() on tensor of shape " + shape_str(shape()));
  return node_->data[0];
}

Tensor Tensor::from_node(std::shared_ptr<detail::Node> n) {
  Tensor t;
  t.node_ = std::move(n);
  return t;
}

// ---------------------------------------------------------------------------
// conv2d, NHWC, kernel [k,k,Cin,Cout]

Tensor conv2d(const Tensor& input, const Tensor& kernel, const Tensor& bias,
              int stride, Padding padding) {
  require(input.rank() == 4, "conv2d input must be rank 4, got " + shape_str(input.shape()));
  require(kernel.rank() == 4, "conv2d kernel must be rank 4");
  require(stride == 1, "conv2d supports stride 1 only");
  const int N = input.dim(0), H = input.dim(1), W = input.dim(2), Ci = input.dim(3);
  const int k = kernel.dim(0);
  require(kernel.dim(1) == k, "conv2d kernel must be square");
  require(k == 1 || k == 3, "conv2d supports 1x1 and 3x3 kernels");
  require(kernel.dim(2) == Ci,
          "conv2d channel mismatch: input " + shape_str(input.shape()) +
              " vs kernel " + shape_str(kernel.shape()));
  const int Co = kernel.dim(3);
  require(bias.rank() == 1 && bias.dim(0) == Co, "conv2d bias must be [Cout]");

  const int pad = padding == Padding::Same ? k / 2 : 0;
  const int Ho = padding == Padding::Same ? H : H - k + 1;
  const int Wo = padding == Padding::Same ? W : W - k + 1;
  require(Ho > 0 && Wo > 0, "conv2d valid padding leaves empty output");

  auto out = make_node({N, Ho, Wo, Co});
  const float* in = input.data().data();
  const float* kw = kernel.data().data();
  const float* b = bias.data().data();
  float* o = out->data.data();

  for (int n = 0; n < N; ++n)
    for (int ho = 0; ho < Ho; ++ho)
      for (int wo = 0; wo < Wo; ++wo) {
        float* orow = o + (((int64_t)n * Ho + ho) * Wo + wo) * Co;
        for (int c = 0; c < Co; ++c) orow[c] = b[c];
        for (int dh = 0; dh < k; ++dh) {
          const int hi = ho + dh - pad;
          if (hi < 0 || hi >= H) continue;
          for (int dw = 0; dw < k; ++dw) {
            const int wi = wo + dw - pad;
            if (wi < 0 || wi >= W) continue;
            const float* irow = in + (((int64_t)n * H + hi) * W + wi) * Ci;
            const float* krow = kw + ((int64_t)dh * k + dw) * Ci * Co;
            for (int ci = 0; ci < Ci; ++ci) {
              const float v = irow[ci];
              if (v == 0.0f) continue;
              const float* kc = krow + (int64_t)ci * Co;
              for (int c = 0; c < Co; ++c) orow[c] += v * kc[c];
            }
          }
        }
      }

  auto in_n = input.node(), k_n = kernel.node(), b_n = bias.node();
  wire(out, {in_n, k_n, b_n}, [=](detail::Node& self) {
    const float* go = self.grad.data();
    const int Hs = Ho, Ws = Wo;
    if (b_n->requires_grad) {
      b_n->ensure_grad();
      float* gb = b_n->grad.data();
      for (int64_t i = 0; i < (int64_t)N * Hs * Ws; ++i)
        for (int c = 0; c < Co; ++c) gb[c] += go[i * Co + c];
    }
    const bool need_in = in_n->requires_grad;
    const bool need_k = k_n->requires_grad;
    if (need_in) in_n->ensure_grad();
    if (need_k) k_n->ensure_grad();
    const float* in_d = in_n->data.data();
    const float* kw_d = k_n->data.data();
    for (int n = 0; n < N; ++n)
      for (int ho = 0; ho < Hs; ++ho)
        for (int wo = 0; wo < Ws; ++wo) {
          const float* grow = go + (((int64_t)n * Hs + ho) * Ws + wo) * Co;
          for (int dh = 0; dh < k; ++dh) {
            const int hi = ho + dh - pad;
            if (hi < 0 || hi >= H) continue;
            for (int dw = 0; dw < k; ++dw) {
              const int wi = wo + dw - pad;
              if (wi < 0 || wi >= W) continue;
              const int64_t ioff = (((int64_t)n * H + hi) * W + wi) * Ci;
              const int64_t koff = ((int64_t)dh * k + dw) * Ci * Co;
              for (int ci = 0; ci < Ci; ++ci) {
                if (need_in) {
                  float acc = 0.0f;
                  const float* kc = kw_d + koff + (int64_t)ci * Co;
                  for (int c = 0; c < Co; ++c) acc += grow[c] * kc[c];
                  in_n->grad[ioff + ci] += acc;
                }
                if (need_k) {
                  const float v = in_d[ioff + ci];
                  if (v == 0.0f) continue;
                  float* gk = k_n->grad.data() + koff + (int64_t)ci * Co;
                  for (int c = 0; c < Co; ++c) gk[c] += v * grow[c];
                }
              }
            }
          }
        }
  });
  return Tensor::from_node(out);
}

// ---------------------------------------------------------------------------

Tensor maxpool2(const Tensor& input) {
  require(input.rank() == 4, "maxpool2 input must be rank 4");
  const int N = input.dim(0), H = input.dim(1), W = input.dim(2), C = input.dim(3);
  require(H % 2 == 0 && W % 2 == 0,
          "maxpool2 needs even spatial extents, got " + shape_str(input.shape()));
  const int Ho = H / 2, Wo = W / 2;
  auto out = make_node({N, Ho, Wo, C});
  // argmax per output cell, ties to the row-major-first window element
  auto argmax = std::make_shared<std::vector<int64_t>>(out->data.size());
  const float* in = input.data().data();
  float* o = out->data.data();
  int64_t oi = 0;
  for (int n = 0; n < N; ++n)
    for (int ho = 0; ho < Ho; ++ho)
      for (int wo = 0; wo < Wo; ++wo)
        for (int c = 0; c < C; ++c, ++oi) {
          float best = 0.0f;
          int64_t besti = -1;
          for (int dh = 0; dh < 2; ++dh)
            for (int dw = 0; dw < 2; ++dw) {
              const int64_t idx =
                  (((int64_t)n * H + 2 * ho + dh) * W + 2 * wo + dw) * C + c;
              if (besti < 0 || in[idx] > best) {
                best = in[idx];
                besti = idx;
              }
            }
          o[oi] = best;
          (*argmax)[oi] = besti;
        }
  auto in_n = input.node();
  wire(out, {in_n}, [in_n, argmax](detail::Node& self) {
    if (!in_n->requires_grad) return;
    in_n->ensure_grad();
    for (size_t i = 0; i < self.grad.size(); ++i)
      in_n->grad[(*argmax)[i]] += self.grad[i];
  });
  return Tensor::from_node(out);
}

Tensor avgpool2(const Tensor& input) {
  require(input.rank() == 4, "avgpool2 input must be rank 4");
  const int N = input.dim(0), H = input.dim(1), W = input.dim(2), C = input.dim(3);
  require(H % 2 == 0 && W % 2 == 0, "avgpool2 needs even spatial extents");
  const int Ho = H / 2, Wo = W / 2;
  auto out = make_node({N, Ho, Wo, C});
  const float* in = input.data().data();
  float* o = out->data.data();
  int64_t oi = 0;
  for (int n = 0; n < N; ++n)
    for (int ho = 0; ho < Ho; ++ho)
      for (int wo = 0; wo < Wo; ++wo)
        for (int c = 0; c < C; ++c, ++oi) {
          float s = 0.0f;
          for (int dh = 0; dh < 2; ++dh)
            for (int dw = 0; dw < 2; ++dw)
              s += in[(((int64_t)n * H + 2 * ho + dh) * W + 2 * wo + dw) * C + c];
          o[oi] = s * 0.25f;
        }
  auto in_n = input.node();
  wire(out, {in_n}, [in_n, N, H, W, C, Ho, Wo](detail::Node& self) {
    if (!in_n->requires_grad) return;
    in_n->ensure_grad();
    int64_t oi = 0;
    for (int n = 0; n < N; ++n)
      for (int ho = 0; ho < Ho; ++ho)
        for (int wo = 0; wo < Wo; ++wo)
          for (int c = 0; c < C; ++c, ++oi) {
            const float g = self.grad[oi] * 0.25f;
            for (int dh = 0; dh < 2; ++dh)
              for (int dw = 0; dw < 2; ++dw)
                in_n->grad[(((int64_t)n * H + 2 * ho + dh) * W + 2 * wo + dw) * C + c] += g;
          }
  });
  return Tensor::from_node(out);
}

Tensor upsample2(const Tensor& input) {
  require(input.rank() == 4, "upsample2 input must be rank 4");
  const int N = input.dim(0), H = input.dim(1), W = input.dim(2), C = input.dim(3);
  auto out = make_node({N, 2 * H, 2 * W, C});
  const float* in = input.data().data();
  float* o = out->data.data();
  for (int n = 0; n < N; ++n)
    for (int h = 0; h < 2 * H; ++h)
      for (int w = 0; w < 2 * W; ++w) {
        const float* src = in + (((int64_t)n * H + h / 2) * W + w / 2) * C;
        float* dst = o + (((int64_t)n * 2 * H + h) * 2 * W + w) * C;
        std::copy(src, src + C, dst);
      }
  auto in_n = input.node();
  wire(out, {in_n}, [in_n, N, H, W, C](detail::Node& self) {
    if (!in_n->requires_grad) return;
    in_n->ensure_grad();
    for (int n = 0; n < N; ++n)
      for (int h = 0; h < 2 * H; ++h)
        for (int w = 0; w < 2 * W; ++w) {
          const float* g = self.grad.data() + (((int64_t)n * 2 * H + h) * 2 * W + w) * C;
          float* dst = in_n->grad.data() + (((int64_t)n * H + h / 2) * W + w / 2) * C;
          for (int c = 0; c < C; ++c) dst[c] += g[c];
        }
  });
  return Tensor::from_node(out);
}

// ---------------------------------------------------------------------------
// instance norm: statistics per (sample, channel); gradients flow through
// mean and variance.

Tensor instance_norm(const Tensor& input, const Tensor& gain,
                     const Tensor& shift, float eps) {
  require(input.rank() == 4, "instance_norm input must be rank 4");
  require(eps > 0.0f, "instance_norm eps must be positive");
  const int N = input.dim(0), H = input.dim(1), W = input.dim(2), C = input.dim(3);
  require(gain.rank() == 1 && gain.dim(0) == C, "instance_norm gain must be [C]");
  require(shift.rank() == 1 && shift.dim(0) == C, "instance_norm shift must be [C]");
  const int64_t HW = (int64_t)H * W;

  auto out = make_node(input.shape());
  // normalized values and inverse stddev per (n,c), reused by backward
  auto xhat = std::make_shared<std::vector<float>>(input.data().size());
  auto istd = std::make_shared<std::vector<float>>((size_t)N * C);
  const float* in = input.data().data();
  const float* g = gain.data().data();
  const float* s = shift.data().data();
  float* o = out->data.data();
  for (int n = 0; n < N; ++n)
    for (int c = 0; c < C; ++c) {
      float mean = 0.0f;
      for (int64_t i = 0; i < HW; ++i) mean += in[((int64_t)n * HW + i) * C + c];
      mean /= (float)HW;
      float var = 0.0f;
      for (int64_t i = 0; i < HW; ++i) {
        const float d = in[((int64_t)n * HW + i) * C + c] - mean;
        var += d * d;
      }
      var /= (float)HW;
      const float inv = 1.0f / std::sqrt(var + eps);
      (*istd)[(size_t)n * C + c] = inv;
      for (int64_t i = 0; i < HW; ++i) {
        const int64_t idx = ((int64_t)n * HW + i) * C + c;
        const float xh = (in[idx] - mean) * inv;
        (*xhat)[idx] = xh;
        o[idx] = g[c] * xh + s[c];
      }
    }

  auto in_n = input.node(), g_n = gain.node(), s_n = shift.node();
  wire(out, {in_n, g_n, s_n}, [=](detail::Node& self) {
    const float* go = self.grad.data();
    if (g_n->requires_grad) g_n->ensure_grad();
    if (s_n->requires_grad) s_n->ensure_grad();
    if (in_n->requires_grad) in_n->ensure_grad();
    const float* gd = g_n->data.data();
    for (int n = 0; n < N; ++n)
      for (int c = 0; c < C; ++c) {
        float sum_dy = 0.0f, sum_dy_xhat = 0.0f;
        for (int64_t i = 0; i < HW; ++i) {
          const int64_t idx = ((int64_t)n * HW + i) * C + c;
          sum_dy += go[idx];
          sum_dy_xhat += go[idx] * (*xhat)[idx];
        }
        if (g_n->requires_grad) g_n->grad[c] += sum_dy_xhat;
        if (s_n->requires_grad) s_n->grad[c] += sum_dy;
        if (in_n->requires_grad) {
          const float inv = (*istd)[(size_t)n * C + c];
          const float scale = gd[c] * inv;
          const float m_dy = sum_dy / (float)HW;
          const float m_dy_xhat = sum_dy_xhat / (float)HW;
          for (int64_t i = 0; i < HW; ++i) {
            const int64_t idx = ((int64_t)n * HW + i) * C + c;
            in_n->grad[idx] += scale * (go[idx] - m_dy - (*xhat)[idx] * m_dy_xhat);
          }
        }
      }
  });
  return Tensor::from_node(out);
}

Tensor leaky_relu(const Tensor& input, float slope) {
  require(slope > 0.0f && slope < 1.0f, "leaky_relu slope must be in (0,1)");
  auto out = make_node(input.shape());
  const float* in = input.data().data();
  for (size_t i = 0; i < out->data.size(); ++i)
    out->data[i] = in[i] > 0.0f ? in[i] : slope * in[i];
  auto in_n = input.node();
  wire(out, {in_n}, [in_n, slope](detail::Node& self) {
    if (!in_n->requires_grad) return;
    in_n->ensure_grad();
    // subgradient at 0 is the leak slope
    for (size_t i = 0; i < self.grad.size(); ++i)
      in_n->grad[i] += self.grad[i] * (in_n->data[i] > 0.0f ? 1.0f : slope);
  });
  return Tensor::from_node(out);
}

Tensor dense(const Tensor& input, const Tensor& weight, const Tensor& bias) {
  require(input.rank() == 2, "dense input must be [N,F]");
  require(weight.rank() == 2, "dense weight must be [F,G]");
  const int N = input.dim(0), F = input.dim(1), G = weight.dim(1);
  require(weight.dim(0) == F,
          "dense feature mismatch: input " + shape_str(input.shape()) +
              " vs weight " + shape_str(weight.shape()));
  require(bias.rank() == 1 && bias.dim(0) == G, "dense bias must be [G]");
  auto out = make_node({N, G});
  const float* in = input.data().data();
  const float* w = weight.data().data();
  const float* b = bias.data().data();
  for (int n = 0; n < N; ++n) {
    float* orow = out->data.data() + (int64_t)n * G;
    for (int g = 0; g < G; ++g) orow[g] = b[g];
    for (int f = 0; f < F; ++f) {
      const float v = in[(int64_t)n * F + f];
      if (v == 0.0f) continue;
      const float* wrow = w + (int64_t)f * G;
      for (int g = 0; g < G; ++g) orow[g] += v * wrow[g];
    }
  }
  auto in_n = input.node(), w_n = weight.node(), b_n = bias.node();
  wire(out, {in_n, w_n, b_n}, [=](detail::Node& self) {
    const float* go = self.grad.data();
    if (b_n->requires_grad) {
      b_n->ensure_grad();
      for (int n = 0; n < N; ++n)
        for (int g = 0; g < G; ++g) b_n->grad[g] += go[(int64_t)n * G + g];
    }
    if (w_n->requires_grad) {
      w_n->ensure_grad();
      for (int n = 0; n < N; ++n)
        for (int f = 0; f < F; ++f) {
          const float v = in_n->data[(int64_t)n * F + f];
          if (v == 0.0f) continue;
          for (int g = 0; g < G; ++g)
            w_n->grad[(int64_t)f * G + g] += v * go[(int64_t)n * G + g];
        }
    }
    if (in_n->requires_grad) {
      in_n->ensure_grad();
      for (int n = 0; n < N; ++n)
        for (int f = 0; f < F; ++f) {
          float acc = 0.0f;
          const float* wrow = w_n->data.data() + (int64_t)f * G;
          for (int g = 0; g < G; ++g) acc += wrow[g] * go[(int64_t)n * G + g];
          in_n->grad[(int64_t)n * F + f] += acc;
        }
    }
  });
  return Tensor::from_node(out);
}

Tensor sigmoid(const Tensor& input) {
  auto out = make_node(input.shape());
  const float* in = input.data().data();
  for (size_t i = 0; i < out->data.size(); ++i) {
    const float x = in[i];
    out->data[i] = x >= 0.0f ? 1.0f / (1.0f + std::exp(-x))
                             : std::exp(x) / (1.0f + std::exp(x));
  }
  auto in_n = input.node();
  auto out_p = out;
  wire(out, {in_n}, [in_n, out_p](detail::Node& self) {
    if (!in_n->requires_grad) return;
    in_n->ensure_grad();
    for (size_t i = 0; i < self.grad.size(); ++i) {
      const float s = out_p->data[i];
      in_n->grad[i] += self.grad[i] * s * (1.0f - s);
    }
  });
  return Tensor::from_node(out);
}

Tensor softmax_channel(const Tensor& input) {
  require(input.rank() == 4, "softmax_channel input must be rank 4");
  const int C = input.dim(3);
  const int64_t P = input.size() / C;
  auto out = make_node(input.shape());
  const float* in = input.data().data();
  for (int64_t p = 0; p < P; ++p) {
    const float* row = in + p * C;
    float mx = row[0];
    for (int c = 1; c < C; ++c) mx = std::max(mx, row[c]);
    float z = 0.0f;
    for (int c = 0; c < C; ++c) z += std::exp(row[c] - mx);
    for (int c = 0; c < C; ++c) out->data[p * C + c] = std::exp(row[c] - mx) / z;
  }
  auto in_n = input.node();
  auto out_p = out;
  wire(out, {in_n}, [in_n, out_p, P, C](detail::Node& self) {
    if (!in_n->requires_grad) return;
    in_n->ensure_grad();
    for (int64_t p = 0; p < P; ++p) {
      float dot = 0.0f;
      for (int c = 0; c < C; ++c)
        dot += out_p->data[p * C + c] * self.grad[p * C + c];
      for (int c = 0; c < C; ++c)
        in_n->grad[p * C + c] +=
            out_p->data[p * C + c] * (self.grad[p * C + c] - dot);
    }
  });
  return Tensor::from_node(out);
}

Tensor dropout(const Tensor& input, float rate, std::mt19937& rng, bool training) {
  if (!training || rate <= 0.0f) return input;
  require(rate < 1.0f, "dropout rate must be < 1");
  auto out = make_node(input.shape());
  auto mask = std::make_shared<std::vector<float>>(input.size());
  const float keep = 1.0f - rate;
  std::uniform_real_distribution<float> u(0.0f, 1.0f);
  const float* in = input.data().data();
  for (int64_t i = 0; i < input.size(); ++i) {
    (*mask)[i] = u(rng) < keep ? 1.0f / keep : 0.0f;  // inverted scaling
    out->data[i] = in[i] * (*mask)[i];
  }
  auto in_n = input.node();
  wire(out, {in_n}, [in_n, mask](detail::Node& self) {
    if (!in_n->requires_grad) return;
    in_n->ensure_grad();
    for (size_t i = 0; i < self.grad.size(); ++i)
      in_n->grad[i] += self.grad[i] * (*mask)[i];
  });
  return Tensor::from_node(out);
}

// ---------------------------------------------------------------------------

Tensor concat_channels(const Tensor& a, const Tensor& b) {
  require(a.rank() == 4 && b.rank() == 4, "concat_channels needs rank-4 inputs");
  for (int i = 0; i < 3; ++i)
    require(a.dim(i) == b.dim(i),
            "concat_channels mismatch: " + shape_str(a.shape()) + " vs " +
                shape_str(b.shape()));
  const int Ca = a.dim(3), Cb = b.dim(3);
  const int64_t P = a.size() / Ca;
  auto out = make_node({a.dim(0), a.dim(1), a.dim(2), Ca + Cb});
  for (int64_t p = 0; p < P; ++p) {
    std::copy_n(a.data().data() + p * Ca, Ca, out->data.data() + p * (Ca + Cb));
    std::copy_n(b.data().data() + p * Cb, Cb, out->data.data() + p * (Ca + Cb) + Ca);
  }
  auto a_n = a.node(), b_n = b.node();
  wire(out, {a_n, b_n}, [a_n, b_n, P, Ca, Cb](detail::Node& self) {
    if (a_n->requires_grad) {
      a_n->ensure_grad();
      for (int64_t p = 0; p < P; ++p)
        for (int c = 0; c < Ca; ++c)
          a_n->grad[p * Ca + c] += self.grad[p * (Ca + Cb) + c];
    }
    if (b_n->requires_grad) {
      b_n->ensure_grad();
      for (int64_t p = 0; p < P; ++p)
        for (int c = 0; c < Cb; ++c)
          b_n->grad[p * Cb + c] += self.grad[p * (Ca + Cb) + Ca + c];
    }
  });
  return Tensor::from_node(out);
}

Tensor reshape(const Tensor& input, Shape shape) {
  require(numel(shape) == input.size(),
          "reshape " + shape_str(input.shape()) + " -> " + shape_str(shape));
  auto out = make_node(std::move(shape));
  out->data = input.data();
  auto in_n = input.node();
  wire(out, {in_n}, [in_n](detail::Node& self) {
    if (!in_n->requires_grad) return;
    in_n->ensure_grad();
    for (size_t i = 0; i < self.grad.size(); ++i) in_n->grad[i] += self.grad[i];
  });
  return Tensor::from_node(out);
}

Tensor flip_horizontal(const Tensor& input) {
  require(input.rank() == 4, "flip_horizontal input must be rank 4");
  const int N = input.dim(0), H = input.dim(1), W = input.dim(2), C = input.dim(3);
  auto out = make_node(input.shape());
  const float* in = input.data().data();
  for (int n = 0; n < N; ++n)
    for (int h = 0; h < H; ++h)
      for (int w = 0; w < W; ++w)
        std::copy_n(in + (((int64_t)n * H + h) * W + w) * C, C,
                    out->data.data() + (((int64_t)n * H + h) * W + (W - 1 - w)) * C);
  auto in_n = input.node();
  wire(out, {in_n}, [in_n, N, H, W, C](detail::Node& self) {
    if (!in_n->requires_grad) return;
    in_n->ensure_grad();
    for (int n = 0; n < N; ++n)
      for (int h = 0; h < H; ++h)
        for (int w = 0; w < W; ++w)
          for (int c = 0; c < C; ++c)
            in_n->grad[(((int64_t)n * H + h) * W + w) * C + c] +=
                self.grad[(((int64_t)n * H + h) * W + (W - 1 - w)) * C + c];
  });
  return Tensor::from_node(out);
}

Tensor flip_horizontal_sel(const Tensor& input, const std::vector<uint8_t>& sel) {
  require(input.rank() == 4, "flip_horizontal_sel input must be rank 4");
  const int N = input.dim(0), H = input.dim(1), W = input.dim(2), C = input.dim(3);
  require((int)sel.size() == N, "flip_horizontal_sel selector length mismatch");
  auto out = make_node(input.shape());
  const float* in = input.data().data();
  for (int n = 0; n < N; ++n)
    for (int h = 0; h < H; ++h)
      for (int w = 0; w < W; ++w) {
        const int wd = sel[n] ? W - 1 - w : w;
        std::copy_n(in + (((int64_t)n * H + h) * W + w) * C, C,
                    out->data.data() + (((int64_t)n * H + h) * W + wd) * C);
      }
  auto in_n = input.node();
  auto sel_copy = sel;
  wire(out, {in_n}, [in_n, sel_copy, N, H, W, C](detail::Node& self) {
    if (!in_n->requires_grad) return;
    in_n->ensure_grad();
    for (int n = 0; n < N; ++n)
      for (int h = 0; h < H; ++h)
        for (int w = 0; w < W; ++w) {
          const int wd = sel_copy[n] ? W - 1 - w : w;
          for (int c = 0; c < C; ++c)
            in_n->grad[(((int64_t)n * H + h) * W + w) * C + c] +=
                self.grad[(((int64_t)n * H + h) * W + wd) * C + c];
        }
  });
  return Tensor::from_node(out);
}

Tensor detach(const Tensor& input) {
  return Tensor(input.shape(), input.data(), false);
}

// ---------------------------------------------------------------------------
// elementwise and reductions

namespace {

void require_same_shape(const Tensor& a, const Tensor& b, const char* op) {
  if (a.shape() != b.shape())
    throw ShapeError(std::string(op) + ": shape mismatch " + shape_str(a.shape()) +
                     " vs " + shape_str(b.shape()));
}

}  // namespace

Tensor add(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "add");
  auto out = make_node(a.shape());
  for (int64_t i = 0; i < a.size(); ++i) out->data[i] = a.data()[i] + b.data()[i];
  auto a_n = a.node(), b_n = b.node();
  wire(out, {a_n, b_n}, [a_n, b_n](detail::Node& self) {
    for (auto& p : {a_n, b_n}) {
      if (!p->requires_grad) continue;
      p->ensure_grad();
      for (size_t i = 0; i < self.grad.size(); ++i) p->grad[i] += self.grad[i];
    }
  });
  return Tensor::from_node(out);
}

Tensor sub(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "sub");
  auto out = make_node(a.shape());
  for (int64_t i = 0; i < a.size(); ++i) out->data[i] = a.data()[i] - b.data()[i];
  auto a_n = a.node(), b_n = b.node();
  wire(out, {a_n, b_n}, [a_n, b_n](detail::Node& self) {
    if (a_n->requires_grad) {
      a_n->ensure_grad();
      for (size_t i = 0; i < self.grad.size(); ++i) a_n->grad[i] += self.grad[i];
    }
    if (b_n->requires_grad) {
      b_n->ensure_grad();
      for (size_t i = 0; i < self.grad.size(); ++i) b_n->grad[i] -= self.grad[i];
    }
  });
  return Tensor::from_node(out);
}

Tensor mul(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "mul");
  auto out = make_node(a.shape());
  for (int64_t i = 0; i < a.size(); ++i) out->data[i] = a.data()[i] * b.data()[i];
  auto a_n = a.node(), b_n = b.node();
  wire(out, {a_n, b_n}, [a_n, b_n](detail::Node& self) {
    if (a_n->requires_grad) {
      a_n->ensure_grad();
      for (size_t i = 0; i < self.grad.size(); ++i)
        a_n->grad[i] += self.grad[i] * b_n->data[i];
    }
    if (b_n->requires_grad) {
      b_n->ensure_grad();
      for (size_t i = 0; i < self.grad.size(); ++i)
        b_n->grad[i] += self.grad[i] * a_n->data[i];
    }
  });
  return Tensor::from_node(out);
}

Tensor div(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "div");
  auto out = make_node(a.shape());
  for (int64_t i = 0; i < a.size(); ++i) out->data[i] = a.data()[i] / b.data()[i];
  auto a_n = a.node(), b_n = b.node();
  wire(out, {a_n, b_n}, [a_n, b_n](detail::Node& self) {
    if (a_n->requires_grad) {
      a_n->ensure_grad();
      for (size_t i = 0; i < self.grad.size(); ++i)
        a_n->grad[i] += self.grad[i] / b_n->data[i];
    }
    if (b_n->requires_grad) {
      b_n->ensure_grad();
      for (size_t i = 0; i < self.grad.size(); ++i)
        b_n->grad[i] -= self.grad[i] * a_n->data[i] / (b_n->data[i] * b_n->data[i]);
    }
  });
  return Tensor::from_node(out);
}

Tensor add_scalar(const Tensor& a, float s) {
  auto out = make_node(a.shape());
  for (int64_t i = 0; i < a.size(); ++i) out->data[i] = a.data()[i] + s;
  auto a_n = a.node();
  wire(out, {a_n}, [a_n](detail::Node& self) {
    if (!a_n->requires_grad) return;
    a_n->ensure_grad();
    for (size_t i = 0; i < self.grad.size(); ++i) a_n->grad[i] += self.grad[i];
  });
  return Tensor::from_node(out);
}

Tensor mul_scalar(const Tensor& a, float s) {
  auto out = make_node(a.shape());
  for (int64_t i = 0; i < a.size(); ++i) out->data[i] = a.data()[i] * s;
  auto a_n = a.node();
  wire(out, {a_n}, [a_n, s](detail::Node& self) {
    if (!a_n->requires_grad) return;
    a_n->ensure_grad();
    for (size_t i = 0; i < self.grad.size(); ++i) a_n->grad[i] += self.grad[i] * s;
  });
  return Tensor::from_node(out);
}

Tensor log_t(const Tensor& a) {
  auto out = make_node(a.shape());
  for (int64_t i = 0; i < a.size(); ++i) out->data[i] = std::log(a.data()[i]);
  auto a_n = a.node();
  wire(out, {a_n}, [a_n](detail::Node& self) {
    if (!a_n->requires_grad) return;
    a_n->ensure_grad();
    for (size_t i = 0; i < self.grad.size(); ++i)
      a_n->grad[i] += self.grad[i] / a_n->data[i];
  });
  return Tensor::from_node(out);
}

Tensor abs_t(const Tensor& a) {
  auto out = make_node(a.shape());
  for (int64_t i = 0; i < a.size(); ++i) out->data[i] = std::fabs(a.data()[i]);
  auto a_n = a.node();
  wire(out, {a_n}, [a_n](detail::Node& self) {
    if (!a_n->requires_grad) return;
    a_n->ensure_grad();
    for (size_t i = 0; i < self.grad.size(); ++i)
      a_n->grad[i] += self.grad[i] * (a_n->data[i] >= 0.0f ? 1.0f : -1.0f);
  });
  return Tensor::from_node(out);
}

Tensor clamp(const Tensor& a, float lo, float hi) {
  auto out = make_node(a.shape());
  for (int64_t i = 0; i < a.size(); ++i)
    out->data[i] = std::min(hi, std::max(lo, a.data()[i]));
  auto a_n = a.node();
  wire(out, {a_n}, [a_n, lo, hi](detail::Node& self) {
    if (!a_n->requires_grad) return;
    a_n->ensure_grad();
    for (size_t i = 0; i < self.grad.size(); ++i) {
      const float x = a_n->data[i];
      if (x > lo && x < hi) a_n->grad[i] += self.grad[i];
    }
  });
  return Tensor::from_node(out);
}

Tensor sum_all(const Tensor& a) {
  auto out = make_node({1});
  float s = 0.0f;
  for (int64_t i = 0; i < a.size(); ++i) s += a.data()[i];
  out->data[0] = s;
  auto a_n = a.node();
  wire(out, {a_n}, [a_n](detail::Node& self) {
    if (!a_n->requires_grad) return;
    a_n->ensure_grad();
    for (size_t i = 0; i < a_n->grad.size(); ++i) a_n->grad[i] += self.grad[0];
  });
  return Tensor::from_node(out);
}

Tensor mean_all(const Tensor& a) {
  return mul_scalar(sum_all(a), 1.0f / (float)a.size());
}

Tensor mean_batch(const Tensor& a) {
  require(a.rank() >= 2, "mean_batch needs a batch axis");
  const int N = a.dim(0);
  Shape rest(a.shape().begin() + 1, a.shape().end());
  const int64_t M = a.size() / N;
  auto out = make_node(rest);
  for (int64_t i = 0; i < M; ++i) {
    float s = 0.0f;
    for (int n = 0; n < N; ++n) s += a.data()[(int64_t)n * M + i];
    out->data[i] = s / (float)N;
  }
  auto a_n = a.node();
  wire(out, {a_n}, [a_n, N, M](detail::Node& self) {
    if (!a_n->requires_grad) return;
    a_n->ensure_grad();
    const float inv = 1.0f / (float)N;
    for (int64_t i = 0; i < M; ++i)
      for (int n = 0; n < N; ++n)
        a_n->grad[(int64_t)n * M + i] += self.grad[i] * inv;
  });
  return Tensor::from_node(out);
}

// ---------------------------------------------------------------------------

void backward(const Tensor& loss) {
  if (loss.size() != 1)
    throw ContractError("backward requires a scalar loss, got shape " +
                        shape_str(loss.shape()));
  auto root = loss.node();
  if (!root->requires_grad) return;

  // reachable subgraph, then reverse append order
  std::vector<detail::Node*> nodes;
  std::unordered_set<detail::Node*> seen;
  std::vector<detail::Node*> stack{root.get()};
  seen.insert(root.get());
  while (!stack.empty()) {
    detail::Node* n = stack.back();
    stack.pop_back();
    nodes.push_back(n);
    for (const auto& p : n->parents)
      if (p->requires_grad && seen.insert(p.get()).second) stack.push_back(p.get());
  }
  std::sort(nodes.begin(), nodes.end(),
            [](const detail::Node* a, const detail::Node* b) { return a->id > b->id; });

  root->ensure_grad();
  root->grad[0] += 1.0f;
  for (detail::Node* n : nodes) {
    if (!n->backward_fn) continue;
    n->ensure_grad();
    n->backward_fn(*n);
  }
}

}  // namespace pass
