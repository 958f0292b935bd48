#pragma once

// Reverse-mode automatic differentiation over small dense double tensors.
//
// A Tensor is a shared handle to a graph node. Operations on tensors that
// require gradients record their parents and a backward rule; backward()
// walks the graph in reverse topological order and accumulates gradients
// into every reachable node. Leaf tensors created by ParameterSet keep their
// gradients across calls until an optimizer step or zero_grad() clears them.

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <memory>
#include <random>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace gridflow::diff {

using Shape = std::vector<std::size_t>;

class ShapeError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

std::string to_string(const Shape& shape);
std::size_t numel(const Shape& shape);

struct Node {
  Shape shape;
  std::vector<double> value;
  std::vector<double> grad;
  std::vector<std::shared_ptr<Node>> parents;
  std::function<void(Node&)> backward;
  bool requires_grad = false;
};

class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(std::shared_ptr<Node> node) : node_(std::move(node)) {}

  static Tensor constant(Shape shape, std::vector<double> values);
  static Tensor zeros(Shape shape);
  static Tensor scalar(double value);
  /// Leaf that accumulates gradients.
  static Tensor leaf(Shape shape, std::vector<double> values);

  bool defined() const { return node_ != nullptr; }
  const Shape& shape() const { return node_->shape; }
  std::size_t rank() const { return node_->shape.size(); }
  /// Extent of an axis; negative axes count from the end.
  std::size_t dim(int axis) const;
  std::size_t numel() const { return node_->value.size(); }

  std::span<const double> values() const { return node_->value; }
  std::span<double> mutable_values() { return node_->value; }
  std::span<const double> grad() const { return node_->grad; }
  std::span<double> mutable_grad() { return node_->grad; }
  double item() const;
  double operator[](std::size_t flat) const { return node_->value[flat]; }

  bool requires_grad() const { return node_->requires_grad; }
  void zero_grad();
  Node* node() const { return node_.get(); }
  const std::shared_ptr<Node>& shared() const { return node_; }

 private:
  std::shared_ptr<Node> node_;
};

/// Disables graph recording on the current thread while alive.
class NoGradGuard {
 public:
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool previous_;
};

bool grad_enabled();

// ---------------------------------------------------------------------------
// Primitives

/// a[..., n, k] x b[k, m], or batched a[B, n, k] x b[B, k, m].
Tensor matmul(const Tensor& a, const Tensor& b);
/// Swap the last two axes.
Tensor transpose(const Tensor& a);
/// Elementwise sum; b may match a trailing suffix of a's shape (broadcast).
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
/// Elementwise product of equal shapes.
Tensor mul(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& a, double factor);
Tensor add_scalar(const Tensor& a, double value);
/// Concatenate along the last axis.
Tensor concat(const std::vector<Tensor>& parts);
/// Columns [begin, end) of the last axis.
Tensor slice(const Tensor& a, std::size_t begin, std::size_t end);
/// rows[b] = a[b, index[b], :] for a of shape [B, M, d].
Tensor select_rows(const Tensor& a, std::span<const std::size_t> index);
Tensor reshape(const Tensor& a, Shape shape);
Tensor tanh(const Tensor& a);
Tensor relu(const Tensor& a);
Tensor sigmoid(const Tensor& a);
/// Normalizes over the last axis, then applies gamma * x + beta.
Tensor layer_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta, double eps = 1e-5);
Tensor softmax(const Tensor& logits);
/// Softmax over the last axis with additive -1e9 on mask == 0 entries.
/// mask must be binary and either match logits or a trailing suffix of it.
Tensor masked_softmax(const Tensor& logits, const Tensor& mask);
/// Mean over one axis (removed from the result).
Tensor mean(const Tensor& a, int axis);
Tensor mean_all(const Tensor& a);
Tensor sum_all(const Tensor& a);
Tensor mse(const Tensor& pred, const Tensor& target);
Tensor l1_norm(const Tensor& a);

inline constexpr double kMaskedLogit = -1e9;

/// Populates gradients of every node reachable from a scalar loss.
void backward(const Tensor& loss);

// ---------------------------------------------------------------------------
// Parameters and optimisation

struct Parameter {
  std::string name;
  Tensor tensor;
  std::vector<double> mean_square;  // RMSProp accumulator
};

/// Ordered, named collection of trainable leaves.
class ParameterSet {
 public:
  /// Uniform in [-bound, bound].
  Tensor add_uniform(const std::string& name, Shape shape, double bound, std::mt19937_64& rng);
  Tensor add_constant(const std::string& name, Shape shape, double value);

  std::vector<Parameter>& items() { return items_; }
  const std::vector<Parameter>& items() const { return items_; }
  std::size_t size() const { return items_.size(); }
  std::size_t scalar_count() const;
  const Parameter* find(const std::string& name) const;

  void zero_grad();
  /// Overwrites values (not optimizer state) from a congruent set.
  void copy_values_from(const ParameterSet& other);
  /// All values flattened in order; used for hashing and equality checks.
  std::vector<double> flat_values() const;

 private:
  std::vector<Parameter> items_;
};

struct RmsPropOptions {
  double learning_rate = 1e-4;
  double decay = 0.99;
  double eps = 1e-8;
};

/// ms = decay*ms + (1-decay)*g^2; w -= lr*g/(sqrt(ms)+eps); gradients are zeroed.
void rmsprop_step(ParameterSet& params, const RmsPropOptions& options);

/// Global L1 norm of all gradients.
double gradient_l1_norm(const ParameterSet& params);
double gradient_l1_norm(std::span<ParameterSet* const> sets);

/// Scales every gradient by bound/norm when the global L1 norm exceeds bound.
/// Returns the pre-clip norm.
double clip_gradients_l1(std::span<ParameterSet* const> sets, double bound = 1.0);
double clip_gradients_l1(ParameterSet& params, double bound = 1.0);

// ---------------------------------------------------------------------------
// Checkpoints: JSON {"meta": {...}, "params": {name: {"shape": [...], "values": [...]}}}

class CheckpointError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

void save_parameters(const ParameterSet& params, const std::filesystem::path& path,
                     const std::string& meta_json = "{}");
/// Loads values into a congruent set. Returns the stored meta JSON text.
std::string load_parameters(ParameterSet& params, const std::filesystem::path& path);

}  // namespace gridflow::diff
