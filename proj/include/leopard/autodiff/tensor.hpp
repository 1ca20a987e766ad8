#pragma once

// Dense tensors with reverse-mode differentiation.
//
// A tensor is a cheap handle onto a graph node. Operations record their
// parents and a backward closure when any input requires gradients; calling
// backward() on a scalar walks the recorded graph in reverse topological
// order. Leaves (tensors created with requires_grad and no producing op)
// accumulate gradients across backward passes until zero_grad() is called.
//
// Only the shapes the models need are supported: 1-D vectors {n} and 2-D
// matrices {rows, cols}. A 1-D vector behaves as a 1 x n row in matrix ops.

#include <cstddef>
#include <cstdint>
#include <functional>
#include <memory>
#include <random>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace leopard::ad {

using Shape = std::vector<std::size_t>;

std::string to_string(const Shape& shape);
std::size_t element_count(const Shape& shape);

class ShapeError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

template <typename T>
struct Node {
  Shape shape;
  std::shared_ptr<std::vector<T>> data;
  std::vector<T> grad;
  bool requires_grad = false;
  std::vector<std::shared_ptr<Node>> parents;
  std::function<void(Node&)> backward;

  bool is_leaf() const { return !backward; }
  std::span<const T> values() const { return *data; }
  void ensure_grad() {
    if (grad.size() != data->size()) grad.assign(data->size(), T(0));
  }
};

template <typename T>
class BasicTensor {
 public:
  using value_type = T;
  using NodePtr = std::shared_ptr<Node<T>>;

  BasicTensor() = default;
  explicit BasicTensor(NodePtr node) : node_(std::move(node)) {}

  static BasicTensor zeros(Shape shape, bool requires_grad = false);
  static BasicTensor full(Shape shape, T value, bool requires_grad = false);
  static BasicTensor from(Shape shape, std::vector<T> values, bool requires_grad = false);
  static BasicTensor scalar(T value, bool requires_grad = false);

  bool defined() const { return node_ != nullptr; }
  const Shape& shape() const { return node_->shape; }
  std::size_t size() const { return node_->data->size(); }
  std::size_t rows() const { return node_->shape.size() == 2 ? node_->shape[0] : 1; }
  std::size_t cols() const { return node_->shape.back(); }

  std::span<const T> values() const { return *node_->data; }
  // Writable view of the value buffer. Meant for optimizers acting on leaves;
  // writing through a non-leaf invalidates the recorded graph.
  std::span<T> mutable_values() { return *node_->data; }
  T item() const;
  T at(std::size_t row, std::size_t col) const { return (*node_->data)[row * cols() + col]; }

  bool requires_grad() const { return node_->requires_grad; }
  bool is_leaf() const { return node_->is_leaf(); }
  bool has_grad() const { return node_->grad.size() == node_->data->size(); }
  std::span<const T> grad() const;
  std::span<T> mutable_grad();
  void zero_grad();

  // Deep copy of the values into a fresh leaf.
  BasicTensor clone(bool requires_grad) const;

  Node<T>* node() const { return node_.get(); }
  const NodePtr& node_ptr() const { return node_; }

 private:
  NodePtr node_;
};

// Topologically ordered view of everything a scalar depends on.
template <typename T>
struct Graph {
  std::vector<Node<T>*> nodes;   // parents before children
  std::vector<Node<T>*> leaves;  // requires_grad leaves, in discovery order

  static Graph build(const BasicTensor<T>& root);
};

template <typename T>
void backward(const BasicTensor<T>& loss);

// ---- construction helpers -------------------------------------------------

// Shares the value buffer but cuts the graph: no parents, no gradient.
template <typename T>
BasicTensor<T> detach(const BasicTensor<T>& t);

// detach() followed by requires_grad = true: a fresh leaf over shared values.
// It holds a gradient only once a backward pass reaches it.
template <typename T>
BasicTensor<T> as_leaf(const BasicTensor<T>& t);

// ---- elementwise ----------------------------------------------------------

template <typename T>
BasicTensor<T> add(const BasicTensor<T>& a, const BasicTensor<T>& b);
template <typename T>
BasicTensor<T> sub(const BasicTensor<T>& a, const BasicTensor<T>& b);
template <typename T>
BasicTensor<T> mul(const BasicTensor<T>& a, const BasicTensor<T>& b);
template <typename T>
BasicTensor<T> scale(const BasicTensor<T>& a, T factor);
// a * s for a scalar tensor s; differentiable in both.
template <typename T>
BasicTensor<T> mul_scalar(const BasicTensor<T>& a, const BasicTensor<T>& s);
// m (r x c) plus a length-c row vector broadcast over rows.
template <typename T>
BasicTensor<T> add_row(const BasicTensor<T>& m, const BasicTensor<T>& row);
template <typename T>
BasicTensor<T> tanh(const BasicTensor<T>& a);
// tanh-approximated GELU.
template <typename T>
BasicTensor<T> gelu(const BasicTensor<T>& a);
// Inverted dropout with a Bernoulli keep-mask drawn from rng. p == 0 is the identity.
template <typename T>
BasicTensor<T> dropout(const BasicTensor<T>& a, double p, std::mt19937_64& rng);

// ---- shape / linear algebra ----------------------------------------------

template <typename T>
BasicTensor<T> matmul(const BasicTensor<T>& a, const BasicTensor<T>& b);
template <typename T>
BasicTensor<T> transpose(const BasicTensor<T>& a);
template <typename T>
BasicTensor<T> reshape(const BasicTensor<T>& a, Shape shape);
// Gathers rows by index; repeated indices are allowed (embedding lookup).
template <typename T>
BasicTensor<T> select_rows(const BasicTensor<T>& a, std::span<const std::size_t> rows);
template <typename T>
BasicTensor<T> slice_cols(const BasicTensor<T>& a, std::size_t begin, std::size_t count);
template <typename T>
BasicTensor<T> concat_rows(std::span<const BasicTensor<T>> parts);

// ---- reductions -----------------------------------------------------------

template <typename T>
BasicTensor<T> sum(const BasicTensor<T>& a);
// Column-wise mean over rows: r x c -> 1 x c. Invariant to row order.
template <typename T>
BasicTensor<T> mean_rows(const BasicTensor<T>& a);

// ---- model-level primitives ----------------------------------------------

// Row-wise normalization followed by per-column scale and shift.
template <typename T>
BasicTensor<T> layer_norm(const BasicTensor<T>& x, const BasicTensor<T>& gamma,
                          const BasicTensor<T>& beta, T eps = T(1e-12));

// Mean cross-entropy of row-wise softmax(logits) against integer labels.
template <typename T>
BasicTensor<T> softmax_cross_entropy(const BasicTensor<T>& logits, std::span<const int> labels);

// Pairwise squared euclidean distances: (m x d), (n x d) -> m x n.
template <typename T>
BasicTensor<T> squared_distances(const BasicTensor<T>& a, const BasicTensor<T>& b);

struct AttentionShape {
  std::size_t batch = 0;
  std::size_t seq_len = 0;
  std::size_t heads = 1;
};

// Multi-head scaled dot-product attention over (batch * seq_len) x d inputs.
// key_valid holds batch * seq_len flags; invalid keys receive exactly zero
// weight. Dropout (p > 0 with a non-null rng) is applied to the attention
// probabilities.
template <typename T>
BasicTensor<T> attention(const BasicTensor<T>& q, const BasicTensor<T>& k, const BasicTensor<T>& v,
                         std::span<const std::uint8_t> key_valid, AttentionShape shape,
                         double dropout_p = 0.0, std::mt19937_64* rng = nullptr);

// Attention probabilities without recording a graph; layout is
// [batch][head][query][key].
template <typename T>
std::vector<T> attention_probabilities(const BasicTensor<T>& q, const BasicTensor<T>& k,
                                       std::span<const std::uint8_t> key_valid,
                                       AttentionShape shape);

// Functional SGD step: param - lr * grad, with grad treated as a constant.
// The result stays linked to param (identity) and lr (-grad).
template <typename T>
BasicTensor<T> sgd_step(const BasicTensor<T>& param, const BasicTensor<T>& lr,
                        std::span<const T> grad);
// Same, reading the gradient already accumulated on param.
template <typename T>
BasicTensor<T> sgd_step(const BasicTensor<T>& param, const BasicTensor<T>& lr);

// Row-wise softmax of plain values (no graph).
template <typename T>
std::vector<T> softmax_rows(std::span<const T> logits, std::size_t cols);

using Tensor = BasicTensor<double>;
using Tensor32 = BasicTensor<float>;

inline Tensor sgd_step(const Tensor& param, const Tensor& lr, const std::vector<double>& grad) {
  return sgd_step<double>(param, lr, std::span<const double>(grad));
}

}  // namespace leopard::ad
