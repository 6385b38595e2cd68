#pragma once

#include <cstddef>
#include <functional>
#include <initializer_list>
#include <memory>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace mdaif {

using Shape = std::vector<std::size_t>;

std::size_t shape_numel(const Shape& shape);
std::string shape_str(const Shape& shape);

class DimensionError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

template <typename T>
struct TensorNode {
  Shape shape;
  std::vector<T> data;
  std::vector<T> grad;  // empty means "no gradient"
  bool requires_grad = false;
};

// Shared handle to a dense row-major array. Op outputs are never mutated
// after construction except for gradient accumulation.
template <typename T>
class Tensor {
 public:
  using value_type = T;

  Tensor() = default;
  explicit Tensor(Shape shape, T fill = T(0));
  Tensor(Shape shape, std::vector<T> data);
  Tensor(Shape shape, std::initializer_list<T> data);

  static Tensor scalar(T value) { return Tensor(Shape{1}, std::vector<T>{value}); }

  bool defined() const { return node_ != nullptr; }
  const Shape& shape() const { return node_->shape; }
  std::size_t rank() const { return node_->shape.size(); }
  // Negative axes count from the back.
  std::size_t size(int axis) const;
  std::size_t numel() const { return node_->data.size(); }

  std::span<const T> data() const { return node_->data; }
  std::span<T> data_mut() { return node_->data; }
  const std::vector<T>& vec() const { return node_->data; }
  T operator[](std::size_t i) const { return node_->data[i]; }
  T item() const;

  bool requires_grad() const { return node_->requires_grad; }
  Tensor& set_requires_grad(bool on) {
    node_->requires_grad = on;
    return *this;
  }
  bool has_grad() const { return !node_->grad.empty(); }
  std::span<const T> grad() const { return node_->grad; }
  std::span<T> grad_mut() { return node_->grad; }
  void zero_grad();
  void clear_grad() { node_->grad.clear(); }

  // Fresh leaf holding a copy of the values.
  Tensor detach() const;
  Tensor clone() const { return detach(); }

  const std::shared_ptr<TensorNode<T>>& node() const { return node_; }
  bool same_node(const Tensor& other) const { return node_ == other.node_; }

 private:
  std::shared_ptr<TensorNode<T>> node_;
};

// Eager, define-by-run record of differentiable ops. One tape per thread
// and element type; backward replays the entries in reverse.
template <typename T>
class Tape {
 public:
  using Rule = std::function<void(const TensorNode<T>& out)>;

  static Tape& active();

  void record(std::shared_ptr<TensorNode<T>> out, Rule rule);
  void backward(const Tensor<T>& loss);
  void clear() { entries_.clear(); }
  std::size_t size() const { return entries_.size(); }

 private:
  struct Entry {
    std::shared_ptr<TensorNode<T>> out;
    Rule rule;
  };
  std::vector<Entry> entries_;
};

class GradMode {
 public:
  static bool enabled();
  static void set(bool on);
};

class NoGradGuard {
 public:
  NoGradGuard() : prev_(GradMode::enabled()) { GradMode::set(false); }
  ~NoGradGuard() { GradMode::set(prev_); }
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool prev_;
};

template <typename T>
void backward(const Tensor<T>& loss) {
  Tape<T>::active().backward(loss);
}

namespace detail {

// Gradient buffer of an input, allocated on first use. Empty when the input
// does not take part in differentiation.
template <typename T>
std::span<T> grad_buffer(TensorNode<T>& node) {
  if (!node.requires_grad) return {};
  if (node.grad.empty()) node.grad.assign(node.data.size(), T(0));
  return node.grad;
}

// Wraps freshly computed values into a tensor and, when any input needs a
// gradient, records `rule` on the active tape.
template <typename T, typename Rule>
Tensor<T> make_result(Shape shape, std::vector<T> data,
                      std::initializer_list<const Tensor<T>*> inputs, Rule&& rule) {
  Tensor<T> out(std::move(shape), std::move(data));
  bool needs = false;
  if (GradMode::enabled()) {
    for (const auto* in : inputs) needs = needs || in->requires_grad();
  }
  if (needs) {
    out.set_requires_grad(true);
    Tape<T>::active().record(out.node(), typename Tape<T>::Rule(std::forward<Rule>(rule)));
  }
  return out;
}

template <typename T, typename Rule>
Tensor<T> make_result(Shape shape, std::vector<T> data, const std::vector<Tensor<T>>& inputs,
                      Rule&& rule) {
  Tensor<T> out(std::move(shape), std::move(data));
  bool needs = false;
  if (GradMode::enabled()) {
    for (const auto& in : inputs) needs = needs || in.requires_grad();
  }
  if (needs) {
    out.set_requires_grad(true);
    Tape<T>::active().record(out.node(), typename Tape<T>::Rule(std::forward<Rule>(rule)));
  }
  return out;
}

std::size_t normalize_axis(int axis, std::size_t rank);

}  // namespace detail

// ---------------------------------------------------------------------------
// Elementwise

enum class BinaryOp { add, sub, mul, max };

template <typename T> Tensor<T> binary(BinaryOp op, const Tensor<T>& a, const Tensor<T>& b);
template <typename T> Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b);
template <typename T> Tensor<T> sub(const Tensor<T>& a, const Tensor<T>& b);
template <typename T> Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b);
// Gradient goes to `a` on ties.
template <typename T> Tensor<T> maximum(const Tensor<T>& a, const Tensor<T>& b);
template <typename T> Tensor<T> add_scalar(const Tensor<T>& a, T s);
template <typename T> Tensor<T> scale(const Tensor<T>& a, T s);
template <typename T> Tensor<T> abs(const Tensor<T>& a);
template <typename T> Tensor<T> square(const Tensor<T>& a);
template <typename T> Tensor<T> sigmoid(const Tensor<T>& a);
// Exact Gaussian-CDF form.
template <typename T> Tensor<T> gelu(const Tensor<T>& a);

// `v` has shape [x.shape[axes[0]], x.shape[axes[1]], ...] and is broadcast
// over every other axis of `x`. Only add and mul are supported.
template <typename T>
Tensor<T> broadcast(BinaryOp op, const Tensor<T>& x, const Tensor<T>& v, std::vector<int> axes);

// ---------------------------------------------------------------------------
// Reductions

template <typename T> Tensor<T> sum(const Tensor<T>& x, int axis);
template <typename T> Tensor<T> mean(const Tensor<T>& x, int axis);
template <typename T> Tensor<T> sum_all(const Tensor<T>& x);
template <typename T> Tensor<T> mean_all(const Tensor<T>& x);
// Averages over the token axis: [..., S, C] -> [..., C].
template <typename T> Tensor<T> avgpool_global(const Tensor<T>& x);

// ---------------------------------------------------------------------------
// Layout

template <typename T> Tensor<T> reshape(const Tensor<T>& x, Shape shape);
template <typename T> Tensor<T> transpose(const Tensor<T>& x, std::vector<std::size_t> perm);
template <typename T> Tensor<T> concat(const std::vector<Tensor<T>>& xs, int axis);
// Reflect padding (edge excluded) on the last two axes.
template <typename T> Tensor<T> pad_reflect(const Tensor<T>& x, std::size_t pad);
// Nearest-neighbour x2 upsampling on the last two axes.
template <typename T> Tensor<T> upsample_nearest2x(const Tensor<T>& x);

// ---------------------------------------------------------------------------
// Linear algebra

// a: [..., M, K], b: [K, N] -> [..., M, N]
template <typename T> Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b);
// a: [B, M, K], b: [B, K, N] -> [B, M, N]
template <typename T> Tensor<T> bmm(const Tensor<T>& a, const Tensor<T>& b);
// x: [B, C, H, W], kernel: [O, C, k, k] -> [B, O, H', W'], zero padding.
template <typename T>
Tensor<T> conv2d(const Tensor<T>& x, const Tensor<T>& kernel, std::size_t stride, std::size_t pad);

// ---------------------------------------------------------------------------
// Normalization

template <typename T> Tensor<T> softmax(const Tensor<T>& x, int axis);
template <typename T>
Tensor<T> layernorm(const Tensor<T>& x, int axis, const Tensor<T>& gamma, const Tensor<T>& beta,
                    T eps = T(1e-5));

enum class NormMode { train, eval };

class DegenerateBatchError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

template <typename T>
struct RunningStats {
  std::vector<T> mean;
  std::vector<T> var;
  T momentum = T(0.1);
  explicit RunningStats(std::size_t channels = 0)
      : mean(channels, T(0)), var(channels, T(1)) {}
};

// Per-channel normalization over batch and spatial axes of [B, C, ...].
template <typename T>
Tensor<T> batchnorm(const Tensor<T>& x, const Tensor<T>& gamma, const Tensor<T>& beta,
                    RunningStats<T>& stats, NormMode mode, T eps = T(1e-5));

}  // namespace mdaif
