#pragma once

// Task-dependent softmax parameters generated from a labeled support set.
//
// For class n with support embeddings x_1..x_m, g_psi maps each x_j to an
// (l + 1)-vector; the class's weight row is the mean of the first l
// components and its bias the mean of the last one.

#include <span>
#include <string>
#include <vector>

#include "leopard/model/params.hpp"

namespace leopard::model {

struct ClassParams {
  Tensor w;  // {l}
  Tensor b;  // {1}
};

struct GeneratedSoftmax {
  Tensor W;  // N x l
  Tensor b;  // {N}
  std::vector<std::string> classes;

  std::size_t num_classes() const { return classes.size(); }
};

// class_embeddings: m x d encoder outputs for one class's examples.
ClassParams generate_class_params(const ParamSet& psi, const Tensor& class_embeddings, const std::string& class_name,
                                  bool output_tanh = false);

GeneratedSoftmax assemble_softmax(const std::vector<ClassParams>& per_class, std::vector<std::string> classes);

// Partitions embeddings by label and generates every class in label order.
GeneratedSoftmax generate_softmax(const ParamSet& psi, const Tensor& embeddings, std::span<const int> labels,
                                  const std::vector<std::string>& classes, bool output_tanh = false);

// W = 0, b = 0; no gradient.
GeneratedSoftmax zero_softmax(std::size_t l, const std::vector<std::string>& classes);

// W h + b for each row of projected: batch x N.
Tensor softmax_logits(const GeneratedSoftmax& softmax, const Tensor& projected);

// Row-wise class probabilities from h_phi outputs.
std::vector<double> predict(const GeneratedSoftmax& softmax, const Tensor& projected);

// Index of the largest entry in each row; ties go to the lowest index.
std::vector<int> argmax_rows(std::span<const double> values, std::size_t cols);

}  // namespace leopard::model
