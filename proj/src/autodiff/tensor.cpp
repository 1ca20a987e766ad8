#include "leopard/autodiff/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <unordered_set>

#include <fmt/format.h>

namespace leopard::ad {

std::string to_string(const Shape& shape) {
  return fmt::format("[{}]", fmt::join(shape, ","));
}

std::size_t element_count(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

namespace {

// Sum that does not depend on the order of its terms.
template <typename T>
T sorted_sum(std::vector<T>& terms) {
  if (std::any_of(terms.begin(), terms.end(), [](T x) { return std::isnan(x); })) {
    return std::numeric_limits<T>::quiet_NaN();
  }
  std::sort(terms.begin(), terms.end());
  return std::accumulate(terms.begin(), terms.end(), T(0));
}

template <typename T>
using NodePtr = std::shared_ptr<Node<T>>;

template <typename T>
BasicTensor<T> make_op(Shape shape, std::vector<T> data, std::vector<BasicTensor<T>> inputs,
                       std::function<void(Node<T>&)> fn) {
  auto node = std::make_shared<Node<T>>();
  node->shape = std::move(shape);
  node->data = std::make_shared<std::vector<T>>(std::move(data));
  const bool needs_grad = std::any_of(inputs.begin(), inputs.end(),
                                      [](const BasicTensor<T>& t) { return t.requires_grad(); });
  if (needs_grad) {
    node->requires_grad = true;
    node->parents.reserve(inputs.size());
    for (const auto& in : inputs) node->parents.push_back(in.node_ptr());
    node->backward = std::move(fn);
  }
  return BasicTensor<T>(std::move(node));
}

// Gradient buffer of parent i, or nullptr when it does not take gradients.
template <typename T>
T* parent_grad(Node<T>& self, std::size_t i) {
  Node<T>& p = *self.parents[i];
  if (!p.requires_grad) return nullptr;
  p.ensure_grad();
  return p.grad.data();
}

template <typename T>
const T* parent_values(const Node<T>& self, std::size_t i) {
  return self.parents[i]->data->data();
}

void require(bool ok, const char* op, const Shape& a, const Shape& b) {
  if (!ok) throw ShapeError(fmt::format("{}: incompatible shapes {} and {}", op, to_string(a), to_string(b)));
}

template <typename T>
std::size_t rows_of(const BasicTensor<T>& t) {
  return t.shape().size() == 2 ? t.shape()[0] : 1;
}

template <typename T>
void check_matrix(const BasicTensor<T>& t, const char* op) {
  if (t.shape().empty() || t.shape().size() > 2) {
    throw ShapeError(fmt::format("{}: expected a vector or matrix, got {}", op, to_string(t.shape())));
  }
}

}  // namespace

// ---- BasicTensor ------------------------------------------------------------

template <typename T>
BasicTensor<T> BasicTensor<T>::zeros(Shape shape, bool requires_grad) {
  return full(std::move(shape), T(0), requires_grad);
}

template <typename T>
BasicTensor<T> BasicTensor<T>::full(Shape shape, T value, bool requires_grad) {
  const std::size_t n = element_count(shape);
  return from(std::move(shape), std::vector<T>(n, value), requires_grad);
}

template <typename T>
BasicTensor<T> BasicTensor<T>::from(Shape shape, std::vector<T> values, bool requires_grad) {
  if (shape.empty() || std::any_of(shape.begin(), shape.end(), [](std::size_t d) { return d == 0; })) {
    throw ShapeError(fmt::format("tensor shape must have positive dimensions, got {}", to_string(shape)));
  }
  if (element_count(shape) != values.size()) {
    throw ShapeError(fmt::format("shape {} does not hold {} values", to_string(shape), values.size()));
  }
  auto node = std::make_shared<Node<T>>();
  node->shape = std::move(shape);
  node->data = std::make_shared<std::vector<T>>(std::move(values));
  node->requires_grad = requires_grad;
  if (requires_grad) node->ensure_grad();
  return BasicTensor(std::move(node));
}

template <typename T>
BasicTensor<T> BasicTensor<T>::scalar(T value, bool requires_grad) {
  return from({1}, {value}, requires_grad);
}

template <typename T>
T BasicTensor<T>::item() const {
  if (size() != 1) throw ShapeError(fmt::format("item: tensor of shape {} is not a scalar", to_string(shape())));
  return (*node_->data)[0];
}

template <typename T>
std::span<const T> BasicTensor<T>::grad() const {
  if (!has_grad()) throw std::logic_error("tensor has no gradient");
  return node_->grad;
}

template <typename T>
std::span<T> BasicTensor<T>::mutable_grad() {
  if (!has_grad()) throw std::logic_error("tensor has no gradient");
  return node_->grad;
}

template <typename T>
void BasicTensor<T>::zero_grad() {
  if (node_->requires_grad) node_->grad.assign(node_->data->size(), T(0));
}

template <typename T>
BasicTensor<T> BasicTensor<T>::clone(bool requires_grad) const {
  return from(shape(), *node_->data, requires_grad);
}

// ---- graph ------------------------------------------------------------------

template <typename T>
Graph<T> Graph<T>::build(const BasicTensor<T>& root) {
  Graph g;
  if (!root.defined() || !root.requires_grad()) return g;
  std::unordered_set<Node<T>*> seen;
  std::vector<std::pair<Node<T>*, std::size_t>> stack;
  seen.insert(root.node());
  stack.emplace_back(root.node(), 0);
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (next < node->parents.size()) {
      Node<T>* p = node->parents[next++].get();
      if (p->requires_grad && seen.insert(p).second) stack.emplace_back(p, 0);
      continue;
    }
    g.nodes.push_back(node);
    if (node->is_leaf()) g.leaves.push_back(node);
    stack.pop_back();
  }
  return g;
}

template <typename T>
void backward(const BasicTensor<T>& loss) {
  if (loss.size() != 1) {
    throw ShapeError(fmt::format("backward: loss must be a scalar, got shape {}", to_string(loss.shape())));
  }
  if (!loss.requires_grad()) return;
  Graph<T> graph = Graph<T>::build(loss);
  for (Node<T>* n : graph.nodes) {
    if (n->is_leaf()) {
      n->ensure_grad();
    } else {
      n->grad.assign(n->data->size(), T(0));
    }
  }
  loss.node()->grad[0] += T(1);
  for (auto it = graph.nodes.rbegin(); it != graph.nodes.rend(); ++it) {
    if (!(*it)->is_leaf()) (*it)->backward(**it);
  }
}

template <typename T>
BasicTensor<T> detach(const BasicTensor<T>& t) {
  auto node = std::make_shared<Node<T>>();
  node->shape = t.shape();
  node->data = t.node()->data;
  return BasicTensor<T>(std::move(node));
}

template <typename T>
BasicTensor<T> as_leaf(const BasicTensor<T>& t) {
  auto out = detach(t);
  out.node()->requires_grad = true;
  return out;
}

// ---- elementwise --------------------------------------------------------------

template <typename T>
BasicTensor<T> add(const BasicTensor<T>& a, const BasicTensor<T>& b) {
  require(a.shape() == b.shape(), "add", a.shape(), b.shape());
  std::vector<T> out(a.size());
  auto av = a.values(), bv = b.values();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = av[i] + bv[i];
  return make_op<T>(a.shape(), std::move(out), {a, b}, [](Node<T>& self) {
    const std::size_t n = self.grad.size();
    for (std::size_t p = 0; p < 2; ++p) {
      if (T* g = parent_grad(self, p)) {
        for (std::size_t i = 0; i < n; ++i) g[i] += self.grad[i];
      }
    }
  });
}

template <typename T>
BasicTensor<T> sub(const BasicTensor<T>& a, const BasicTensor<T>& b) {
  require(a.shape() == b.shape(), "sub", a.shape(), b.shape());
  std::vector<T> out(a.size());
  auto av = a.values(), bv = b.values();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = av[i] - bv[i];
  return make_op<T>(a.shape(), std::move(out), {a, b}, [](Node<T>& self) {
    const std::size_t n = self.grad.size();
    if (T* g = parent_grad(self, 0)) {
      for (std::size_t i = 0; i < n; ++i) g[i] += self.grad[i];
    }
    if (T* g = parent_grad(self, 1)) {
      for (std::size_t i = 0; i < n; ++i) g[i] -= self.grad[i];
    }
  });
}

template <typename T>
BasicTensor<T> mul(const BasicTensor<T>& a, const BasicTensor<T>& b) {
  require(a.shape() == b.shape(), "mul", a.shape(), b.shape());
  std::vector<T> out(a.size());
  auto av = a.values(), bv = b.values();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = av[i] * bv[i];
  return make_op<T>(a.shape(), std::move(out), {a, b}, [](Node<T>& self) {
    const std::size_t n = self.grad.size();
    const T* av = parent_values(self, 0);
    const T* bv = parent_values(self, 1);
    if (T* g = parent_grad(self, 0)) {
      for (std::size_t i = 0; i < n; ++i) g[i] += self.grad[i] * bv[i];
    }
    if (T* g = parent_grad(self, 1)) {
      for (std::size_t i = 0; i < n; ++i) g[i] += self.grad[i] * av[i];
    }
  });
}

template <typename T>
BasicTensor<T> scale(const BasicTensor<T>& a, T factor) {
  std::vector<T> out(a.values().begin(), a.values().end());
  for (T& x : out) x *= factor;
  return make_op<T>(a.shape(), std::move(out), {a}, [factor](Node<T>& self) {
    if (T* g = parent_grad(self, 0)) {
      for (std::size_t i = 0; i < self.grad.size(); ++i) g[i] += self.grad[i] * factor;
    }
  });
}

template <typename T>
BasicTensor<T> mul_scalar(const BasicTensor<T>& a, const BasicTensor<T>& s) {
  require(s.size() == 1, "mul_scalar", a.shape(), s.shape());
  const T sv = s.values()[0];
  std::vector<T> out(a.values().begin(), a.values().end());
  for (T& x : out) x *= sv;
  return make_op<T>(a.shape(), std::move(out), {a, s}, [](Node<T>& self) {
    const std::size_t n = self.grad.size();
    const T* av = parent_values(self, 0);
    const T sv = *parent_values(self, 1);
    if (T* g = parent_grad(self, 0)) {
      for (std::size_t i = 0; i < n; ++i) g[i] += self.grad[i] * sv;
    }
    if (T* g = parent_grad(self, 1)) {
      T acc = 0;
      for (std::size_t i = 0; i < n; ++i) acc += self.grad[i] * av[i];
      g[0] += acc;
    }
  });
}

template <typename T>
BasicTensor<T> add_row(const BasicTensor<T>& m, const BasicTensor<T>& row) {
  check_matrix(m, "add_row");
  const std::size_t r = rows_of(m), c = m.cols();
  require(row.size() == c && rows_of(row) == 1, "add_row", m.shape(), row.shape());
  std::vector<T> out(m.values().begin(), m.values().end());
  auto rv = row.values();
  for (std::size_t i = 0; i < r; ++i) {
    for (std::size_t j = 0; j < c; ++j) out[i * c + j] += rv[j];
  }
  return make_op<T>(m.shape(), std::move(out), {m, row}, [r, c](Node<T>& self) {
    if (T* g = parent_grad(self, 0)) {
      for (std::size_t i = 0; i < r * c; ++i) g[i] += self.grad[i];
    }
    if (T* g = parent_grad(self, 1)) {
      for (std::size_t i = 0; i < r; ++i) {
        for (std::size_t j = 0; j < c; ++j) g[j] += self.grad[i * c + j];
      }
    }
  });
}

template <typename T>
BasicTensor<T> tanh(const BasicTensor<T>& a) {
  std::vector<T> out(a.size());
  auto av = a.values();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = std::tanh(av[i]);
  return make_op<T>(a.shape(), std::move(out), {a}, [](Node<T>& self) {
    if (T* g = parent_grad(self, 0)) {
      const auto& y = *self.data;
      for (std::size_t i = 0; i < y.size(); ++i) g[i] += self.grad[i] * (T(1) - y[i] * y[i]);
    }
  });
}

template <typename T>
BasicTensor<T> gelu(const BasicTensor<T>& a) {
  constexpr T c = T(0.7978845608028654);  // sqrt(2 / pi)
  constexpr T k = T(0.044715);
  std::vector<T> out(a.size());
  auto av = a.values();
  for (std::size_t i = 0; i < out.size(); ++i) {
    const T x = av[i];
    out[i] = T(0.5) * x * (T(1) + std::tanh(c * (x + k * x * x * x)));
  }
  return make_op<T>(a.shape(), std::move(out), {a}, [](Node<T>& self) {
    if (T* g = parent_grad(self, 0)) {
      const T* xv = parent_values(self, 0);
      for (std::size_t i = 0; i < self.grad.size(); ++i) {
        const T x = xv[i];
        const T t = std::tanh(c * (x + k * x * x * x));
        const T d = T(0.5) * (T(1) + t) + T(0.5) * x * (T(1) - t * t) * c * (T(1) + T(3) * k * x * x);
        g[i] += self.grad[i] * d;
      }
    }
  });
}

template <typename T>
BasicTensor<T> dropout(const BasicTensor<T>& a, double p, std::mt19937_64& rng) {
  if (!(p >= 0.0 && p < 1.0)) throw std::invalid_argument(fmt::format("dropout probability {} not in [0, 1)", p));
  if (p == 0.0) return a;
  std::bernoulli_distribution keep(1.0 - p);
  const T inv = T(1.0 / (1.0 - p));
  std::vector<T> mask(a.size());
  for (T& m : mask) m = keep(rng) ? inv : T(0);
  std::vector<T> out(a.size());
  auto av = a.values();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = av[i] * mask[i];
  return make_op<T>(a.shape(), std::move(out), {a}, [mask = std::move(mask)](Node<T>& self) {
    if (T* g = parent_grad(self, 0)) {
      for (std::size_t i = 0; i < mask.size(); ++i) g[i] += self.grad[i] * mask[i];
    }
  });
}

// ---- shape / linear algebra ----------------------------------------------------

template <typename T>
BasicTensor<T> matmul(const BasicTensor<T>& a, const BasicTensor<T>& b) {
  check_matrix(a, "matmul");
  check_matrix(b, "matmul");
  const std::size_t m = rows_of(a), k = a.cols(), n = b.cols();
  require(rows_of(b) == k, "matmul", a.shape(), b.shape());
  std::vector<T> out(m * n, T(0));
  const T* av = a.values().data();
  const T* bv = b.values().data();
  for (std::size_t i = 0; i < m; ++i) {
    T* orow = out.data() + i * n;
    for (std::size_t p = 0; p < k; ++p) {
      const T aip = av[i * k + p];
      const T* brow = bv + p * n;
      for (std::size_t j = 0; j < n; ++j) orow[j] += aip * brow[j];
    }
  }
  return make_op<T>({m, n}, std::move(out), {a, b}, [m, k, n](Node<T>& self) {
    const T* g = self.grad.data();
    if (T* ga = parent_grad(self, 0)) {
      const T* bv = parent_values(self, 1);
      for (std::size_t i = 0; i < m; ++i) {
        for (std::size_t p = 0; p < k; ++p) {
          const T* brow = bv + p * n;
          const T* grow = g + i * n;
          T acc = 0;
          for (std::size_t j = 0; j < n; ++j) acc += grow[j] * brow[j];
          ga[i * k + p] += acc;
        }
      }
    }
    if (T* gb = parent_grad(self, 1)) {
      const T* av = parent_values(self, 0);
      for (std::size_t i = 0; i < m; ++i) {
        const T* grow = g + i * n;
        for (std::size_t p = 0; p < k; ++p) {
          const T aip = av[i * k + p];
          T* gbrow = gb + p * n;
          for (std::size_t j = 0; j < n; ++j) gbrow[j] += aip * grow[j];
        }
      }
    }
  });
}

template <typename T>
BasicTensor<T> transpose(const BasicTensor<T>& a) {
  check_matrix(a, "transpose");
  const std::size_t r = rows_of(a), c = a.cols();
  std::vector<T> out(r * c);
  auto av = a.values();
  for (std::size_t i = 0; i < r; ++i) {
    for (std::size_t j = 0; j < c; ++j) out[j * r + i] = av[i * c + j];
  }
  return make_op<T>({c, r}, std::move(out), {a}, [r, c](Node<T>& self) {
    if (T* g = parent_grad(self, 0)) {
      for (std::size_t i = 0; i < r; ++i) {
        for (std::size_t j = 0; j < c; ++j) g[i * c + j] += self.grad[j * r + i];
      }
    }
  });
}

template <typename T>
BasicTensor<T> reshape(const BasicTensor<T>& a, Shape shape) {
  require(element_count(shape) == a.size(), "reshape", a.shape(), shape);
  std::vector<T> out(a.values().begin(), a.values().end());
  return make_op<T>(std::move(shape), std::move(out), {a}, [](Node<T>& self) {
    if (T* g = parent_grad(self, 0)) {
      for (std::size_t i = 0; i < self.grad.size(); ++i) g[i] += self.grad[i];
    }
  });
}

template <typename T>
BasicTensor<T> select_rows(const BasicTensor<T>& a, std::span<const std::size_t> rows) {
  check_matrix(a, "select_rows");
  const std::size_t r = rows_of(a), c = a.cols();
  if (rows.empty()) throw ShapeError("select_rows: empty row selection");
  std::vector<T> out(rows.size() * c);
  auto av = a.values();
  for (std::size_t i = 0; i < rows.size(); ++i) {
    if (rows[i] >= r) {
      throw std::out_of_range(fmt::format("select_rows: row {} out of range for shape {}", rows[i], to_string(a.shape())));
    }
    std::copy_n(av.begin() + rows[i] * c, c, out.begin() + i * c);
  }
  std::vector<std::size_t> idx(rows.begin(), rows.end());
  return make_op<T>({rows.size(), c}, std::move(out), {a}, [idx = std::move(idx), c](Node<T>& self) {
    if (T* g = parent_grad(self, 0)) {
      for (std::size_t i = 0; i < idx.size(); ++i) {
        T* dst = g + idx[i] * c;
        const T* src = self.grad.data() + i * c;
        for (std::size_t j = 0; j < c; ++j) dst[j] += src[j];
      }
    }
  });
}

template <typename T>
BasicTensor<T> slice_cols(const BasicTensor<T>& a, std::size_t begin, std::size_t count) {
  check_matrix(a, "slice_cols");
  const std::size_t r = rows_of(a), c = a.cols();
  if (count == 0 || begin + count > c) {
    throw ShapeError(fmt::format("slice_cols: columns [{}, {}) out of range for shape {}", begin, begin + count,
                                 to_string(a.shape())));
  }
  std::vector<T> out(r * count);
  auto av = a.values();
  for (std::size_t i = 0; i < r; ++i) {
    std::copy_n(av.begin() + i * c + begin, count, out.begin() + i * count);
  }
  return make_op<T>({r, count}, std::move(out), {a}, [r, c, begin, count](Node<T>& self) {
    if (T* g = parent_grad(self, 0)) {
      for (std::size_t i = 0; i < r; ++i) {
        for (std::size_t j = 0; j < count; ++j) g[i * c + begin + j] += self.grad[i * count + j];
      }
    }
  });
}

template <typename T>
BasicTensor<T> concat_rows(std::span<const BasicTensor<T>> parts) {
  if (parts.empty()) throw ShapeError("concat_rows: no inputs");
  const std::size_t c = parts[0].cols();
  std::size_t total = 0;
  std::vector<std::size_t> offsets;
  std::vector<T> out;
  for (const auto& p : parts) {
    check_matrix(p, "concat_rows");
    require(p.cols() == c, "concat_rows", parts[0].shape(), p.shape());
    offsets.push_back(out.size());
    out.insert(out.end(), p.values().begin(), p.values().end());
    total += rows_of(p);
  }
  std::vector<BasicTensor<T>> inputs(parts.begin(), parts.end());
  return make_op<T>({total, c}, std::move(out), std::move(inputs), [offsets = std::move(offsets)](Node<T>& self) {
    for (std::size_t p = 0; p < self.parents.size(); ++p) {
      if (T* g = parent_grad(self, p)) {
        const std::size_t n = self.parents[p]->data->size();
        for (std::size_t i = 0; i < n; ++i) g[i] += self.grad[offsets[p] + i];
      }
    }
  });
}

// ---- reductions ----------------------------------------------------------------

template <typename T>
BasicTensor<T> sum(const BasicTensor<T>& a) {
  T total = 0;
  for (T x : a.values()) total += x;
  return make_op<T>({1}, {total}, {a}, [](Node<T>& self) {
    if (T* g = parent_grad(self, 0)) {
      const std::size_t n = self.parents[0]->data->size();
      for (std::size_t i = 0; i < n; ++i) g[i] += self.grad[0];
    }
  });
}

template <typename T>
BasicTensor<T> mean_rows(const BasicTensor<T>& a) {
  check_matrix(a, "mean_rows");
  const std::size_t r = rows_of(a), c = a.cols();
  std::vector<T> out(c, T(0));
  auto av = a.values();
  std::vector<T> column(r);
  for (std::size_t j = 0; j < c; ++j) {
    for (std::size_t i = 0; i < r; ++i) column[i] = av[i * c + j];
    out[j] = sorted_sum(column) / T(r);
  }
  return make_op<T>({1, c}, std::move(out), {a}, [r, c](Node<T>& self) {
    if (T* g = parent_grad(self, 0)) {
      for (std::size_t i = 0; i < r; ++i) {
        for (std::size_t j = 0; j < c; ++j) g[i * c + j] += self.grad[j] / T(r);
      }
    }
  });
}

// ---- model-level primitives ----------------------------------------------------

template <typename T>
BasicTensor<T> layer_norm(const BasicTensor<T>& x, const BasicTensor<T>& gamma, const BasicTensor<T>& beta,
                          T eps) {
  check_matrix(x, "layer_norm");
  const std::size_t r = rows_of(x), c = x.cols();
  require(gamma.size() == c, "layer_norm", x.shape(), gamma.shape());
  require(beta.size() == c, "layer_norm", x.shape(), beta.shape());
  std::vector<T> out(r * c), xhat(r * c), inv(r);
  auto xv = x.values(), gv = gamma.values(), bv = beta.values();
  for (std::size_t i = 0; i < r; ++i) {
    const T* row = xv.data() + i * c;
    T mean = 0;
    for (std::size_t j = 0; j < c; ++j) mean += row[j];
    mean /= T(c);
    T var = 0;
    for (std::size_t j = 0; j < c; ++j) var += (row[j] - mean) * (row[j] - mean);
    var /= T(c);
    inv[i] = T(1) / std::sqrt(var + eps);
    for (std::size_t j = 0; j < c; ++j) {
      xhat[i * c + j] = (row[j] - mean) * inv[i];
      out[i * c + j] = gv[j] * xhat[i * c + j] + bv[j];
    }
  }
  return make_op<T>(x.shape(), std::move(out), {x, gamma, beta},
                    [r, c, xhat = std::move(xhat), inv = std::move(inv)](Node<T>& self) {
                      const T* g = self.grad.data();
                      const T* gv = parent_values(self, 1);
                      if (T* gx = parent_grad(self, 0)) {
                        for (std::size_t i = 0; i < r; ++i) {
                          T s1 = 0, s2 = 0;
                          for (std::size_t j = 0; j < c; ++j) {
                            const T d = g[i * c + j] * gv[j];
                            s1 += d;
                            s2 += d * xhat[i * c + j];
                          }
                          for (std::size_t j = 0; j < c; ++j) {
                            const T d = g[i * c + j] * gv[j];
                            gx[i * c + j] += inv[i] / T(c) * (T(c) * d - s1 - xhat[i * c + j] * s2);
                          }
                        }
                      }
                      if (T* gg = parent_grad(self, 1)) {
                        for (std::size_t i = 0; i < r * c; ++i) gg[i % c] += g[i] * xhat[i];
                      }
                      if (T* gb = parent_grad(self, 2)) {
                        for (std::size_t i = 0; i < r * c; ++i) gb[i % c] += g[i];
                      }
                    });
}

template <typename T>
std::vector<T> softmax_rows(std::span<const T> logits, std::size_t cols) {
  std::vector<T> out(logits.size());
  const std::size_t r = logits.size() / cols;
  for (std::size_t i = 0; i < r; ++i) {
    const T* row = logits.data() + i * cols;
    const T mx = *std::max_element(row, row + cols);
    for (std::size_t j = 0; j < cols; ++j) out[i * cols + j] = std::exp(row[j] - mx);
    std::vector<T> terms(out.begin() + i * cols, out.begin() + (i + 1) * cols);
    const T z = sorted_sum(terms);
    for (std::size_t j = 0; j < cols; ++j) out[i * cols + j] /= z;
  }
  return out;
}

template <typename T>
BasicTensor<T> softmax_cross_entropy(const BasicTensor<T>& logits, std::span<const int> labels) {
  check_matrix(logits, "softmax_cross_entropy");
  const std::size_t r = rows_of(logits), n = logits.cols();
  if (labels.size() != r) {
    throw ShapeError(fmt::format("softmax_cross_entropy: {} labels for logits of shape {}", labels.size(),
                                 to_string(logits.shape())));
  }
  for (int y : labels) {
    if (y < 0 || static_cast<std::size_t>(y) >= n) {
      throw std::out_of_range(fmt::format("softmax_cross_entropy: label {} out of range [0, {})", y, n));
    }
  }
  std::vector<T> probs = softmax_rows<T>(logits.values(), n);
  T loss = 0;
  for (std::size_t i = 0; i < r; ++i) {
    const T* row = logits.values().data() + i * n;
    const T mx = *std::max_element(row, row + n);
    T z = 0;
    for (std::size_t j = 0; j < n; ++j) z += std::exp(row[j] - mx);
    loss += mx + std::log(z) - row[labels[i]];
  }
  loss /= T(r);
  std::vector<int> y(labels.begin(), labels.end());
  return make_op<T>({1}, {loss}, {logits}, [r, n, probs = std::move(probs), y = std::move(y)](Node<T>& self) {
    if (T* g = parent_grad(self, 0)) {
      const T scale = self.grad[0] / T(r);
      for (std::size_t i = 0; i < r; ++i) {
        for (std::size_t j = 0; j < n; ++j) {
          const T target = static_cast<std::size_t>(y[i]) == j ? T(1) : T(0);
          g[i * n + j] += scale * (probs[i * n + j] - target);
        }
      }
    }
  });
}

template <typename T>
BasicTensor<T> squared_distances(const BasicTensor<T>& a, const BasicTensor<T>& b) {
  check_matrix(a, "squared_distances");
  check_matrix(b, "squared_distances");
  const std::size_t m = rows_of(a), n = rows_of(b), d = a.cols();
  require(b.cols() == d, "squared_distances", a.shape(), b.shape());
  std::vector<T> out(m * n);
  const T* av = a.values().data();
  const T* bv = b.values().data();
  for (std::size_t i = 0; i < m; ++i) {
    for (std::size_t j = 0; j < n; ++j) {
      T acc = 0;
      for (std::size_t p = 0; p < d; ++p) {
        const T diff = av[i * d + p] - bv[j * d + p];
        acc += diff * diff;
      }
      out[i * n + j] = acc;
    }
  }
  return make_op<T>({m, n}, std::move(out), {a, b}, [m, n, d](Node<T>& self) {
    const T* av = parent_values(self, 0);
    const T* bv = parent_values(self, 1);
    T* ga = parent_grad(self, 0);
    T* gb = parent_grad(self, 1);
    for (std::size_t i = 0; i < m; ++i) {
      for (std::size_t j = 0; j < n; ++j) {
        const T g = T(2) * self.grad[i * n + j];
        for (std::size_t p = 0; p < d; ++p) {
          const T diff = av[i * d + p] - bv[j * d + p];
          if (ga) ga[i * d + p] += g * diff;
          if (gb) gb[j * d + p] -= g * diff;
        }
      }
    }
  });
}

namespace {

template <typename T>
void check_attention(const BasicTensor<T>& q, const BasicTensor<T>& k, std::span<const std::uint8_t> key_valid,
                     AttentionShape s) {
  const std::size_t rows = s.batch * s.seq_len;
  require(q.shape().size() == 2 && rows_of(q) == rows, "attention", q.shape(), Shape{rows, q.cols()});
  require(k.shape() == q.shape(), "attention", q.shape(), k.shape());
  if (s.heads == 0 || q.cols() % s.heads != 0) {
    throw ShapeError(fmt::format("attention: width {} not divisible by {} heads", q.cols(), s.heads));
  }
  if (key_valid.size() != rows) {
    throw ShapeError(fmt::format("attention: {} key flags for {} positions", key_valid.size(), rows));
  }
}

// Fills probs[b][h][i][j]; invalid keys get exactly zero.
template <typename T>
void attention_forward_probs(const T* qv, const T* kv, std::span<const std::uint8_t> key_valid, AttentionShape s,
                             std::size_t d, std::vector<T>& probs) {
  const std::size_t L = s.seq_len, H = s.heads, dh = d / H;
  const T inv_sqrt = T(1) / std::sqrt(T(dh));
  probs.assign(s.batch * H * L * L, T(0));
  std::vector<T> scores(L);
  for (std::size_t b = 0; b < s.batch; ++b) {
    const std::uint8_t* valid = key_valid.data() + b * L;
    for (std::size_t h = 0; h < H; ++h) {
      for (std::size_t i = 0; i < L; ++i) {
        const T* qi = qv + (b * L + i) * d + h * dh;
        T mx = -std::numeric_limits<T>::infinity();
        for (std::size_t j = 0; j < L; ++j) {
          if (!valid[j]) continue;
          const T* kj = kv + (b * L + j) * d + h * dh;
          T acc = 0;
          for (std::size_t p = 0; p < dh; ++p) acc += qi[p] * kj[p];
          scores[j] = acc * inv_sqrt;
          mx = std::max(mx, scores[j]);
        }
        T* prow = probs.data() + ((b * H + h) * L + i) * L;
        T z = 0;
        for (std::size_t j = 0; j < L; ++j) {
          if (!valid[j]) continue;
          prow[j] = std::exp(scores[j] - mx);
          z += prow[j];
        }
        if (z > T(0)) {
          for (std::size_t j = 0; j < L; ++j) prow[j] /= z;
        }
      }
    }
  }
}

}  // namespace

template <typename T>
std::vector<T> attention_probabilities(const BasicTensor<T>& q, const BasicTensor<T>& k,
                                       std::span<const std::uint8_t> key_valid, AttentionShape shape) {
  check_attention(q, k, key_valid, shape);
  std::vector<T> probs;
  attention_forward_probs(q.values().data(), k.values().data(), key_valid, shape, q.cols(), probs);
  return probs;
}

template <typename T>
BasicTensor<T> attention(const BasicTensor<T>& q, const BasicTensor<T>& k, const BasicTensor<T>& v,
                         std::span<const std::uint8_t> key_valid, AttentionShape s, double dropout_p,
                         std::mt19937_64* rng) {
  check_attention(q, k, key_valid, s);
  require(v.shape() == q.shape(), "attention", q.shape(), v.shape());
  if (!(dropout_p >= 0.0 && dropout_p < 1.0)) {
    throw std::invalid_argument(fmt::format("attention dropout {} not in [0, 1)", dropout_p));
  }
  const std::size_t d = q.cols(), L = s.seq_len, H = s.heads, dh = d / H;
  std::vector<T> probs;
  attention_forward_probs(q.values().data(), k.values().data(), key_valid, s, d, probs);

  // Dropped-out probabilities actually used to mix values.
  std::vector<T> mixed = probs;
  std::vector<T> mask;
  if (dropout_p > 0.0 && rng != nullptr) {
    std::bernoulli_distribution keep(1.0 - dropout_p);
    const T inv = T(1.0 / (1.0 - dropout_p));
    mask.resize(probs.size());
    for (std::size_t i = 0; i < mask.size(); ++i) {
      mask[i] = keep(*rng) ? inv : T(0);
      mixed[i] *= mask[i];
    }
  }

  std::vector<T> out(s.batch * L * d, T(0));
  const T* vv = v.values().data();
  for (std::size_t b = 0; b < s.batch; ++b) {
    for (std::size_t h = 0; h < H; ++h) {
      for (std::size_t i = 0; i < L; ++i) {
        const T* prow = mixed.data() + ((b * H + h) * L + i) * L;
        T* oi = out.data() + (b * L + i) * d + h * dh;
        for (std::size_t j = 0; j < L; ++j) {
          if (prow[j] == T(0)) continue;
          const T* vj = vv + (b * L + j) * d + h * dh;
          for (std::size_t p = 0; p < dh; ++p) oi[p] += prow[j] * vj[p];
        }
      }
    }
  }

  return make_op<T>(
      q.shape(), std::move(out), {q, k, v},
      [s, d, probs = std::move(probs), mixed = std::move(mixed), mask = std::move(mask)](Node<T>& self) {
        const std::size_t L = s.seq_len, H = s.heads, dh = d / H;
        const T inv_sqrt = T(1) / std::sqrt(T(dh));
        const T* qv = parent_values(self, 0);
        const T* kv = parent_values(self, 1);
        const T* vv = parent_values(self, 2);
        T* gq = parent_grad(self, 0);
        T* gk = parent_grad(self, 1);
        T* gv = parent_grad(self, 2);
        const T* g = self.grad.data();
        std::vector<T> dp(L);
        for (std::size_t b = 0; b < s.batch; ++b) {
          for (std::size_t h = 0; h < H; ++h) {
            for (std::size_t i = 0; i < L; ++i) {
              const std::size_t prow_off = ((b * H + h) * L + i) * L;
              const T* prow = probs.data() + prow_off;
              const T* mrow = mixed.data() + prow_off;
              const T* gi = g + (b * L + i) * d + h * dh;
              T dot = 0;
              for (std::size_t j = 0; j < L; ++j) {
                if (prow[j] == T(0)) {
                  dp[j] = 0;
                  continue;
                }
                const T* vj = vv + (b * L + j) * d + h * dh;
                T acc = 0;
                for (std::size_t p = 0; p < dh; ++p) acc += gi[p] * vj[p];
                if (gv && mrow[j] != T(0)) {
                  T* gvj = gv + (b * L + j) * d + h * dh;
                  for (std::size_t p = 0; p < dh; ++p) gvj[p] += mrow[j] * gi[p];
                }
                dp[j] = mask.empty() ? acc : acc * mask[prow_off + j];
                dot += dp[j] * prow[j];
              }
              if (!gq && !gk) continue;
              const T* qi = qv + (b * L + i) * d + h * dh;
              T* gqi = gq ? gq + (b * L + i) * d + h * dh : nullptr;
              for (std::size_t j = 0; j < L; ++j) {
                if (prow[j] == T(0)) continue;
                const T ds = prow[j] * (dp[j] - dot) * inv_sqrt;
                const T* kj = kv + (b * L + j) * d + h * dh;
                if (gqi) {
                  for (std::size_t p = 0; p < dh; ++p) gqi[p] += ds * kj[p];
                }
                if (gk) {
                  T* gkj = gk + (b * L + j) * d + h * dh;
                  for (std::size_t p = 0; p < dh; ++p) gkj[p] += ds * qi[p];
                }
              }
            }
          }
        }
      });
}

template <typename T>
BasicTensor<T> sgd_step(const BasicTensor<T>& param, const BasicTensor<T>& lr, std::span<const T> grad) {
  require(lr.size() == 1, "sgd_step", param.shape(), lr.shape());
  if (grad.size() != param.size()) {
    throw ShapeError(fmt::format("sgd_step: gradient of {} values for parameter of shape {}", grad.size(),
                                 to_string(param.shape())));
  }
  const T rate = lr.values()[0];
  std::vector<T> out(param.size());
  auto pv = param.values();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = pv[i] - rate * grad[i];
  std::vector<T> step(grad.begin(), grad.end());
  return make_op<T>(param.shape(), std::move(out), {param, lr}, [step = std::move(step)](Node<T>& self) {
    if (T* g = parent_grad(self, 0)) {
      for (std::size_t i = 0; i < step.size(); ++i) g[i] += self.grad[i];
    }
    if (T* g = parent_grad(self, 1)) {
      T acc = 0;
      for (std::size_t i = 0; i < step.size(); ++i) acc += self.grad[i] * step[i];
      g[0] -= acc;
    }
  });
}

template <typename T>
BasicTensor<T> sgd_step(const BasicTensor<T>& param, const BasicTensor<T>& lr) {
  if (!param.has_grad()) throw std::logic_error("sgd_step: parameter has no gradient");
  return sgd_step(param, lr, param.grad());
}

#define LEOPARD_INSTANTIATE(T)                                                                              \
  template class BasicTensor<T>;                                                                            \
  template struct Graph<T>;                                                                                 \
  template void backward(const BasicTensor<T>&);                                                            \
  template BasicTensor<T> detach(const BasicTensor<T>&);                                                    \
  template BasicTensor<T> as_leaf(const BasicTensor<T>&);                                                   \
  template BasicTensor<T> add(const BasicTensor<T>&, const BasicTensor<T>&);                                \
  template BasicTensor<T> sub(const BasicTensor<T>&, const BasicTensor<T>&);                                \
  template BasicTensor<T> mul(const BasicTensor<T>&, const BasicTensor<T>&);                                \
  template BasicTensor<T> scale(const BasicTensor<T>&, T);                                                  \
  template BasicTensor<T> mul_scalar(const BasicTensor<T>&, const BasicTensor<T>&);                         \
  template BasicTensor<T> add_row(const BasicTensor<T>&, const BasicTensor<T>&);                            \
  template BasicTensor<T> tanh(const BasicTensor<T>&);                                                      \
  template BasicTensor<T> gelu(const BasicTensor<T>&);                                                      \
  template BasicTensor<T> dropout(const BasicTensor<T>&, double, std::mt19937_64&);                         \
  template BasicTensor<T> matmul(const BasicTensor<T>&, const BasicTensor<T>&);                             \
  template BasicTensor<T> transpose(const BasicTensor<T>&);                                                 \
  template BasicTensor<T> reshape(const BasicTensor<T>&, Shape);                                            \
  template BasicTensor<T> select_rows(const BasicTensor<T>&, std::span<const std::size_t>);                 \
  template BasicTensor<T> slice_cols(const BasicTensor<T>&, std::size_t, std::size_t);                      \
  template BasicTensor<T> concat_rows(std::span<const BasicTensor<T>>);                                     \
  template BasicTensor<T> sum(const BasicTensor<T>&);                                                       \
  template BasicTensor<T> mean_rows(const BasicTensor<T>&);                                                 \
  template BasicTensor<T> layer_norm(const BasicTensor<T>&, const BasicTensor<T>&, const BasicTensor<T>&, T); \
  template BasicTensor<T> softmax_cross_entropy(const BasicTensor<T>&, std::span<const int>);               \
  template BasicTensor<T> squared_distances(const BasicTensor<T>&, const BasicTensor<T>&);                  \
  template BasicTensor<T> attention(const BasicTensor<T>&, const BasicTensor<T>&, const BasicTensor<T>&,    \
                                    std::span<const std::uint8_t>, AttentionShape, double, std::mt19937_64*); \
  template std::vector<T> attention_probabilities(const BasicTensor<T>&, const BasicTensor<T>&,             \
                                                  std::span<const std::uint8_t>, AttentionShape);           \
  template BasicTensor<T> sgd_step(const BasicTensor<T>&, const BasicTensor<T>&, std::span<const T>);       \
  template BasicTensor<T> sgd_step(const BasicTensor<T>&, const BasicTensor<T>&);                           \
  template std::vector<T> softmax_rows(std::span<const T>, std::size_t);

LEOPARD_INSTANTIATE(float)
LEOPARD_INSTANTIATE(double)

#undef LEOPARD_INSTANTIATE

}  // namespace leopard::ad
