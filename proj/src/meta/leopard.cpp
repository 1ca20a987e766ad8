#include "leopard/meta/leopard.hpp"

#include <fmt/format.h>

#include "leopard/autodiff/checkpoint.hpp"

namespace leopard::meta {

void LeopardConfig::validate() const {
  encoder.validate();
  if (class_embedding == 0) throw std::invalid_argument("class embedding size must be positive");
  if (nu > encoder.layers) {
    throw std::invalid_argument(fmt::format("nu = {} exceeds the encoder's {} layers", nu, encoder.layers));
  }
}

nlohmann::json LeopardConfig::to_json() const {
  return {{"encoder", encoder.to_json()},
          {"class_embedding", class_embedding},
          {"nu", nu},
          {"train_word_embeddings", train_word_embeddings},
          {"generator_output_tanh", generator_output_tanh},
          {"alpha_init", alpha_init},
          {"zero_softmax", zero_softmax}};
}

LeopardConfig LeopardConfig::from_json(const nlohmann::json& j) {
  LeopardConfig c;
  c.encoder = model::EncoderConfig::from_json(j.at("encoder"));
  c.class_embedding = j.at("class_embedding");
  c.nu = j.at("nu");
  c.train_word_embeddings = j.value("train_word_embeddings", true);
  c.generator_output_tanh = j.value("generator_output_tanh", false);
  c.alpha_init = j.value("alpha_init", 1e-3);
  c.zero_softmax = j.value("zero_softmax", false);
  c.validate();
  return c;
}

std::uint64_t LeopardConfig::hash() const { return ad::fnv1a64(to_json().dump()); }

namespace {

bool embeddings_adapted(const LeopardConfig& c) { return c.nu == 0 && c.train_word_embeddings; }

ParamSet with_overrides(const ParamSet& base, const ParamSet& overrides) {
  ParamSet merged = base;
  for (const auto& [path, t] : overrides) {
    if (path != kSoftmaxW && path != kSoftmaxB) merged[path] = t;
  }
  return merged;
}

std::vector<double> grad_or_zeros(const Tensor& t) {
  if (t.has_grad()) return {t.grad().begin(), t.grad().end()};
  return std::vector<double>(t.size(), 0.0);
}

}  // namespace

std::vector<std::string> alpha_paths(const LeopardConfig& c) {
  std::vector<std::string> out;
  if (embeddings_adapted(c)) out.push_back("alpha.embeddings");
  for (std::size_t v = c.nu + 1; v <= c.encoder.layers; ++v) out.push_back(fmt::format("alpha.layer{}", v));
  out.push_back("alpha.projection");
  out.push_back("alpha.softmax");
  return out;
}

ParameterPartition partition(const ParamSet& params, const LeopardConfig& c) {
  if (c.nu > c.encoder.layers) {
    throw std::invalid_argument(fmt::format("nu = {} outside [0, {}]", c.nu, c.encoder.layers));
  }
  ParameterPartition part;
  part.nu = c.nu;
  auto specific = [&](const std::string& path, std::string group) {
    part.phi.push_back(path);
    part.lr_group.emplace(path, std::move(group));
  };
  for (const auto& [path, t] : params) {
    if (auto layer = model::encoder_layer(path)) {
      const auto v = static_cast<std::size_t>(*layer);
      if (v == 0 ? embeddings_adapted(c) : v > c.nu) {
        specific(path, v == 0 ? "alpha.embeddings" : fmt::format("alpha.layer{}", v));
      } else {
        part.theta.push_back(path);
      }
    } else if (model::has_prefix(path, "projection.")) {
      specific(path, "alpha.projection");
    } else if (model::has_prefix(path, "generator.") || model::has_prefix(path, "alpha.")) {
      part.theta.push_back(path);
    } else {
      throw std::invalid_argument(fmt::format("parameter '{}' belongs to no LEOPARD component", path));
    }
  }
  specific(kSoftmaxW, "alpha.softmax");
  specific(kSoftmaxB, "alpha.softmax");
  for (const auto& [path, group] : part.lr_group) {
    if (!params.count(group)) throw std::invalid_argument(fmt::format("missing learning rate '{}' for '{}'", group, path));
  }
  return part;
}

ParamSet init_leopard(const LeopardConfig& c, std::uint64_t seed) {
  c.validate();
  std::mt19937_64 rng(seed);
  ParamSet p;
  model::init_encoder(p, c.encoder, rng);
  model::init_mlp(p, model::kGenerator, c.encoder.hidden, c.encoder.hidden, c.class_embedding + 1, rng,
                  c.encoder.init_std);
  model::init_mlp(p, model::kProjection, c.encoder.hidden, c.encoder.hidden, c.class_embedding, rng,
                  c.encoder.init_std);
  for (const auto& a : alpha_paths(c)) p[a] = Tensor::full({1}, c.alpha_init, true);
  return p;
}

ParamSet inner_loop(const ParamSet& phi0, const std::map<std::string, Tensor>& lr, std::size_t steps,
                    const StepLoss& loss_fn, StepGradients* record, const StepGradients* replay) {
  if (replay && replay->size() < steps) {
    throw std::invalid_argument(fmt::format("replay holds {} steps, need {}", replay->size(), steps));
  }
  ParamSet cur = phi0;
  for (std::size_t s = 0; s < steps; ++s) {
    std::map<std::string, std::vector<double>> g;
    if (replay) {
      g = (*replay)[s];
    } else {
      ParamSet leaves;
      for (const auto& [path, t] : cur) leaves.emplace(path, ad::as_leaf(t));
      ad::backward(loss_fn(leaves, s));
      for (const auto& [path, t] : leaves) g.emplace(path, grad_or_zeros(t));
    }
    ParamSet next;
    for (const auto& [path, t] : cur) {
      auto rate = lr.find(path);
      if (rate == lr.end()) throw std::invalid_argument(fmt::format("no inner learning rate for '{}'", path));
      next.emplace(path, ad::sgd_step(t, rate->second, g.at(path)));
    }
    if (record) record->push_back(std::move(g));
    cur = std::move(next);
  }
  return cur;
}

EpisodeBatches encode_episode(const data::Episode& ep, const data::TaskSpec& spec, const data::Vocabulary& vocab,
                              const data::EncodingOptions& options) {
  EpisodeBatches out;
  out.task = ep.task;
  out.classes = spec.labels;
  out.generation = data::make_batch(ep.generation, spec, vocab, options);
  for (const auto& batch : ep.adaptation) out.adaptation.push_back(data::make_batch(batch, spec, vocab, options));
  out.validation = data::make_batch(ep.validation, spec, vocab, options);
  return out;
}

ParamSet initial_phi(const ParamSet& params, const ParameterPartition& part, const LeopardConfig& c,
                     const data::EncodedBatch& generation, const std::vector<std::string>& classes,
                     model::Forward fwd) {
  ParamSet phi;
  for (const auto& path : part.phi) {
    if (path != kSoftmaxW && path != kSoftmaxB) phi.emplace(path, model::lookup(params, path));
  }
  model::GeneratedSoftmax sm;
  if (c.zero_softmax) {
    sm = model::zero_softmax(c.class_embedding, classes);
  } else {
    Tensor h = model::encode(params, c.encoder, generation, fwd);
    sm = model::generate_softmax(params, h, generation.labels, classes, c.generator_output_tanh);
  }
  phi.emplace(kSoftmaxW, sm.W);
  phi.emplace(kSoftmaxB, sm.b);
  return phi;
}

Tensor leopard_logits(const ParamSet& params, const ParamSet& phi, const LeopardConfig& c,
                      const data::EncodedBatch& batch, model::Forward fwd) {
  ParamSet merged = with_overrides(params, phi);
  Tensor h = model::encode(merged, c.encoder, batch, fwd);
  Tensor projected = model::project(merged, h);
  model::GeneratedSoftmax sm{model::lookup(phi, kSoftmaxW), model::lookup(phi, kSoftmaxB), {}};
  return model::softmax_logits(sm, projected);
}

ParamSet inner_adapt(const ParamSet& params, const ParameterPartition& part, const LeopardConfig& c,
                     const ParamSet& phi0, std::span<const data::EncodedBatch> batches, model::Forward fwd,
                     StepGradients* record, const StepGradients* replay) {
  std::map<std::string, Tensor> lr;
  for (const auto& [path, t] : phi0) lr.emplace(path, model::lookup(params, part.lr_group.at(path)));
  const ParamSet frozen = model::detached(params);
  auto loss = [&](const ParamSet& phi, std::size_t s) {
    const auto& batch = batches[s];
    return ad::softmax_cross_entropy(leopard_logits(frozen, phi, c, batch, fwd), std::span<const int>(batch.labels));
  };
  return inner_loop(phi0, lr, batches.size(), loss, record, replay);
}

double accuracy(const Tensor& logits, std::span<const int> labels) {
  auto pred = model::argmax_rows(logits.values(), logits.cols());
  if (pred.size() != labels.size()) {
    throw ad::ShapeError(fmt::format("{} predictions for {} labels", pred.size(), labels.size()));
  }
  std::size_t hits = 0;
  for (std::size_t i = 0; i < pred.size(); ++i) hits += pred[i] == labels[i];
  return pred.empty() ? 0.0 : static_cast<double>(hits) / static_cast<double>(pred.size());
}

TaskGradient task_gradient(const ParamSet& store, const ParameterPartition& part, const LeopardConfig& c,
                           const EpisodeBatches& ep, std::mt19937_64* dropout_rng, OuterPath path) {
  const ParamSet leaves = model::shadow(store);
  const model::Forward fwd{dropout_rng};
  ParamSet phi = initial_phi(leaves, part, c, ep.generation, ep.classes, fwd);
  phi = inner_adapt(leaves, part, c, phi, ep.adaptation, fwd);
  if (path == OuterPath::DetachAdapted) phi = model::detached(phi);
  Tensor logits = leopard_logits(leaves, phi, c, ep.validation, fwd);
  const std::span<const int> labels(ep.validation.labels);
  Tensor loss = ad::softmax_cross_entropy(logits, labels);
  ad::backward(loss);

  TaskGradient out;
  out.task = ep.task;
  out.loss = loss.item();
  out.accuracy = accuracy(logits, labels);
  for (const auto& [p, t] : leaves) {
    if (t.has_grad()) out.grads.emplace(p, std::vector<double>(t.grad().begin(), t.grad().end()));
  }
  return out;
}

TaskGradient evaluate_episode(const ParamSet& store, const ParameterPartition& part, const LeopardConfig& c,
                              const EpisodeBatches& ep) {
  const ParamSet values = model::detached(store);
  ParamSet phi = initial_phi(values, part, c, ep.generation, ep.classes);
  phi = inner_adapt(values, part, c, phi, ep.adaptation);
  Tensor logits = leopard_logits(values, model::detached(phi), c, ep.validation);
  const std::span<const int> labels(ep.validation.labels);
  TaskGradient out;
  out.task = ep.task;
  out.loss = ad::softmax_cross_entropy(logits, labels).item();
  out.accuracy = accuracy(logits, labels);
  return out;
}

std::map<std::string, std::vector<double>> sum_gradients(std::span<const TaskGradient> grads) {
  std::map<std::string, std::vector<double>> total;
  for (const auto& g : grads) {
    for (const auto& [path, v] : g.grads) {
      auto [it, fresh] = total.try_emplace(path, v.size(), 0.0);
      if (it->second.size() != v.size()) {
        throw ad::ShapeError(fmt::format("gradient for '{}' has {} entries, expected {}", path, v.size(), it->second.size()));
      }
      for (std::size_t i = 0; i < v.size(); ++i) it->second[i] += v[i];
    }
  }
  return total;
}

}  // namespace leopard::meta
