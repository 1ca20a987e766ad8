#pragma once

// Randomized invariants of the softmax generator, shared by the unit tests
// and the acceptance binary. check_generator_case returns an empty string on
// success and a description of the first violated property otherwise.

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>
#include <string>
#include <vector>

#include <fmt/format.h>

#include "leopard/model/encoder.hpp"
#include "leopard/model/generator.hpp"

namespace leopard::testing {

inline bool same_bits(std::span<const double> a, std::span<const double> b) {
  return a.size() == b.size() && std::equal(a.begin(), a.end(), b.begin());
}

inline std::string check_generator_case(std::uint64_t seed) {
  using ad::Tensor;
  std::mt19937_64 rng(seed);
  auto pick = [&rng](std::size_t lo, std::size_t hi) { return std::uniform_int_distribution<std::size_t>(lo, hi)(rng); };
  const std::size_t d = pick(2, 6), l = pick(1, 5), n = pick(2, 5);
  const bool tanh_out = pick(0, 1) == 1;

  model::ParamSet psi;
  model::init_mlp(psi, model::kGenerator, d, pick(2, 6), l + 1, rng, 0.7);

  std::vector<int> labels;
  for (std::size_t c = 0; c < n; ++c) {
    for (std::size_t m = pick(1, 4); m > 0; --m) labels.push_back(static_cast<int>(c));
  }
  std::shuffle(labels.begin(), labels.end(), rng);
  const std::size_t rows = labels.size();
  std::normal_distribution<double> normal(0.0, 1.5);
  std::vector<double> x(rows * d);
  for (double& v : x) v = normal(rng);
  std::vector<std::string> classes;
  for (std::size_t c = 0; c < n; ++c) classes.push_back(fmt::format("c{}", c));
  std::vector<double> h(3 * l);
  for (double& v : h) v = normal(rng);
  const Tensor hq = Tensor::from({3, l}, h);

  const auto base = model::generate_softmax(psi, Tensor::from({rows, d}, x), labels, classes, tanh_out);

  // Reordering the support rows keeps every class's member set.
  std::vector<std::size_t> order(rows);
  std::iota(order.begin(), order.end(), 0);
  std::shuffle(order.begin(), order.end(), rng);
  std::vector<double> xs(rows * d);
  std::vector<int> ls(rows);
  for (std::size_t i = 0; i < rows; ++i) {
    std::copy_n(x.begin() + order[i] * d, d, xs.begin() + i * d);
    ls[i] = labels[order[i]];
  }
  const auto shuffled = model::generate_softmax(psi, Tensor::from({rows, d}, xs), ls, classes, tanh_out);
  if (!same_bits(base.W.values(), shuffled.W.values()) || !same_bits(base.b.values(), shuffled.b.values())) {
    return "within-class permutation changed the generated softmax";
  }

  // Class c is renamed to position perm[c].
  std::vector<std::size_t> perm(n);
  std::iota(perm.begin(), perm.end(), 0);
  std::shuffle(perm.begin(), perm.end(), rng);
  std::vector<int> relabeled(rows);
  std::vector<std::string> permuted_classes(n);
  for (std::size_t i = 0; i < rows; ++i) relabeled[i] = static_cast<int>(perm[static_cast<std::size_t>(labels[i])]);
  for (std::size_t c = 0; c < n; ++c) permuted_classes[perm[c]] = classes[c];
  const auto moved = model::generate_softmax(psi, Tensor::from({rows, d}, x), relabeled, permuted_classes, tanh_out);
  const auto p = model::predict(base, hq);
  const auto pm = model::predict(moved, hq);
  for (std::size_t c = 0; c < n; ++c) {
    for (std::size_t j = 0; j < l; ++j) {
      if (moved.W.at(perm[c], j) != base.W.at(c, j)) return "class permutation is not equivariant in W";
    }
    if (moved.b.values()[perm[c]] != base.b.values()[c]) return "class permutation is not equivariant in b";
    for (std::size_t r = 0; r < 3; ++r) {
      if (pm[r * n + perm[c]] != p[r * n + c]) return "class permutation is not equivariant in probabilities";
    }
  }

  for (std::size_t r = 0; r < 3; ++r) {
    double total = 0.0;
    for (std::size_t c = 0; c < n; ++c) {
      if (!(p[r * n + c] >= 0.0)) return "negative or NaN probability";
      total += p[r * n + c];
    }
    if (std::abs(total - 1.0) > 1e-9) return fmt::format("probability row sums to {:.17g}", total);
  }

  for (double v : model::predict(model::zero_softmax(l, classes), hq)) {
    if (v != 1.0 / static_cast<double>(n)) return fmt::format("zero softmax gave {:.17g}, not 1/{}", v, n);
  }
  return {};
}

}  // namespace leopard::testing
