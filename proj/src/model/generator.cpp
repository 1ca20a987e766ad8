#include "leopard/model/generator.hpp"

#include <fmt/format.h>

#include "leopard/model/encoder.hpp"

namespace leopard::model {

ClassParams generate_class_params(const ParamSet& psi, const Tensor& class_embeddings, const std::string& class_name,
                                  bool output_tanh) {
  if (!class_embeddings.defined() || class_embeddings.size() == 0) {
    throw std::invalid_argument(fmt::format("class '{}' has no support examples", class_name));
  }
  Tensor pooled = ad::mean_rows(mlp(psi, kGenerator, class_embeddings, output_tanh));
  const std::size_t width = pooled.cols();
  if (width < 2) throw ad::ShapeError(fmt::format("generator output width {} leaves no weight components", width));
  return ClassParams{ad::reshape(ad::slice_cols(pooled, 0, width - 1), {width - 1}),
                     ad::reshape(ad::slice_cols(pooled, width - 1, 1), {1})};
}

GeneratedSoftmax assemble_softmax(const std::vector<ClassParams>& per_class, std::vector<std::string> classes) {
  if (per_class.size() < 2) throw std::invalid_argument(fmt::format("softmax needs at least 2 classes, got {}", per_class.size()));
  if (classes.size() != per_class.size()) {
    throw std::invalid_argument(fmt::format("{} class names for {} classes", classes.size(), per_class.size()));
  }
  const std::size_t l = per_class.front().w.size();
  std::vector<Tensor> rows, biases;
  for (std::size_t n = 0; n < per_class.size(); ++n) {
    const auto& c = per_class[n];
    if (c.w.size() != l || c.b.size() != 1) {
      throw ad::ShapeError(fmt::format("class '{}' has w {} and b {}, expected [{}] and [1]", classes[n],
                                       ad::to_string(c.w.shape()), ad::to_string(c.b.shape()), l));
    }
    rows.push_back(ad::reshape(c.w, {1, l}));
    biases.push_back(ad::reshape(c.b, {1, 1}));
  }
  GeneratedSoftmax out;
  out.W = ad::concat_rows(std::span<const Tensor>(rows));
  out.b = ad::reshape(ad::concat_rows(std::span<const Tensor>(biases)), {per_class.size()});
  out.classes = std::move(classes);
  return out;
}

GeneratedSoftmax generate_softmax(const ParamSet& psi, const Tensor& embeddings, std::span<const int> labels,
                                  const std::vector<std::string>& classes, bool output_tanh) {
  if (labels.size() != embeddings.rows()) {
    throw ad::ShapeError(fmt::format("{} labels for embeddings of shape {}", labels.size(),
                                     ad::to_string(embeddings.shape())));
  }
  std::vector<std::vector<std::size_t>> members(classes.size());
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (labels[i] < 0 || static_cast<std::size_t>(labels[i]) >= classes.size()) {
      throw std::out_of_range(fmt::format("label index {} outside {} classes", labels[i], classes.size()));
    }
    members[static_cast<std::size_t>(labels[i])].push_back(i);
  }
  std::vector<ClassParams> per_class;
  for (std::size_t n = 0; n < classes.size(); ++n) {
    if (members[n].empty()) {
      throw std::invalid_argument(fmt::format("class '{}' has no support examples", classes[n]));
    }
    per_class.push_back(generate_class_params(
        psi, ad::select_rows(embeddings, std::span<const std::size_t>(members[n])), classes[n], output_tanh));
  }
  return assemble_softmax(per_class, classes);
}

GeneratedSoftmax zero_softmax(std::size_t l, const std::vector<std::string>& classes) {
  return GeneratedSoftmax{Tensor::zeros({classes.size(), l}), Tensor::zeros({classes.size()}), classes};
}

Tensor softmax_logits(const GeneratedSoftmax& softmax, const Tensor& projected) {
  if (projected.cols() != softmax.W.cols()) {
    throw ad::ShapeError(fmt::format("softmax: projected shape {} does not match W {}",
                                     ad::to_string(projected.shape()), ad::to_string(softmax.W.shape())));
  }
  return ad::add_row(ad::matmul(projected, ad::transpose(softmax.W)), softmax.b);
}

std::vector<double> predict(const GeneratedSoftmax& softmax, const Tensor& projected) {
  const GeneratedSoftmax values{ad::detach(softmax.W), ad::detach(softmax.b), softmax.classes};
  Tensor logits = softmax_logits(values, ad::detach(projected));
  return ad::softmax_rows(logits.values(), softmax.num_classes());
}

std::vector<int> argmax_rows(std::span<const double> values, std::size_t cols) {
  std::vector<int> out;
  for (std::size_t r = 0; r * cols < values.size(); ++r) {
    std::size_t best = 0;
    for (std::size_t c = 1; c < cols; ++c) {
      if (values[r * cols + c] > values[r * cols + best]) best = c;
    }
    out.push_back(static_cast<int>(best));
  }
  return out;
}

}  // namespace leopard::model
