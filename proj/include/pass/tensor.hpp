#pragma once

#include <cstdint>
#include <functional>
#include <stdexcept>
#include <memory>
#include <random>
#include <string>
#include <vector>

namespace pass {

using Shape = std::vector<int>;

int64_t numel(const Shape& s);
std::string shape_str(const Shape& s);

// Thrown when tensor extents do not line up.
struct ShapeError : std::runtime_error {
  explicit ShapeError(const std::string& msg) : std::runtime_error(msg) {}
};
// Thrown on API misuse (e.g. backward on a non-scalar).
struct ContractError : std::runtime_error {
  explicit ContractError(const std::string& msg) : std::runtime_error(msg) {}
};

namespace detail {

// One record in the differentiation graph. Nodes are created in forward
// order; `id` is the append position, so visiting reachable nodes by
// descending id is a valid reverse-topological order.
struct Node {
  Shape shape;
  std::vector<float> data;
  std::vector<float> grad;  // allocated on demand, same length as data
  bool requires_grad = false;
  int64_t id = 0;
  std::vector<std::shared_ptr<Node>> parents;
  std::function<void(Node&)> backward_fn;

  void ensure_grad();
};

}  // namespace detail

// Dense float32 tensor with an optional autodiff record. Value type:
// copies share the underlying node.
class Tensor {
 public:
  Tensor() = default;
  Tensor(Shape shape, std::vector<float> values, bool requires_grad = false);

  static Tensor zeros(Shape shape, bool requires_grad = false);
  static Tensor full(Shape shape, float value, bool requires_grad = false);
  static Tensor scalar(float value, bool requires_grad = false);

  bool defined() const { return node_ != nullptr; }
  const Shape& shape() const { return node_->shape; }
  int dim(int i) const { return node_->shape[i]; }
  int rank() const { return static_cast<int>(node_->shape.size()); }
  int64_t size() const { return static_cast<int64_t>(node_->data.size()); }

  std::vector<float>& data() { return node_->data; }
  const std::vector<float>& data() const { return node_->data; }
  bool has_grad() const { return !node_->grad.empty(); }
  std::vector<float>& grad();
  const std::vector<float>& grad() const;
  void zero_grad();

  bool requires_grad() const { return node_->requires_grad; }
  void set_requires_grad(bool v) { node_->requires_grad = v; }

  float item() const;

  std::shared_ptr<detail::Node> node() const { return node_; }
  static Tensor from_node(std::shared_ptr<detail::Node> n);

 private:
  std::shared_ptr<detail::Node> node_;
};

enum class Padding { Same, Valid };

// --- network building blocks ---
Tensor conv2d(const Tensor& input, const Tensor& kernel, const Tensor& bias,
              int stride = 1, Padding padding = Padding::Same);
Tensor maxpool2(const Tensor& input);
Tensor avgpool2(const Tensor& input);
Tensor upsample2(const Tensor& input);
Tensor instance_norm(const Tensor& input, const Tensor& gain,
                     const Tensor& shift, float eps = 1e-5f);
Tensor leaky_relu(const Tensor& input, float slope = 0.2f);
Tensor dense(const Tensor& input, const Tensor& weight, const Tensor& bias);
Tensor sigmoid(const Tensor& input);
Tensor softmax_channel(const Tensor& input);
Tensor dropout(const Tensor& input, float rate, std::mt19937& rng,
               bool training);

// --- structure ---
Tensor concat_channels(const Tensor& a, const Tensor& b);
Tensor reshape(const Tensor& input, Shape shape);
Tensor flip_horizontal(const Tensor& input);  // reverses the W axis
// Reverses the W axis only for samples with a nonzero selector.
Tensor flip_horizontal_sel(const Tensor& input, const std::vector<uint8_t>& sel);
Tensor detach(const Tensor& input);

// --- elementwise / reductions (loss plumbing) ---
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor div(const Tensor& a, const Tensor& b);
Tensor add_scalar(const Tensor& a, float s);
Tensor mul_scalar(const Tensor& a, float s);
Tensor log_t(const Tensor& a);
Tensor abs_t(const Tensor& a);
Tensor clamp(const Tensor& a, float lo, float hi);
Tensor sum_all(const Tensor& a);
Tensor mean_all(const Tensor& a);
Tensor mean_batch(const Tensor& a);  // [N,...] -> [...]

// Reverse pass from a scalar loss. Populates grad on every node with
// requires_grad set that the loss depends on.
void backward(const Tensor& loss);

}  // namespace pass
