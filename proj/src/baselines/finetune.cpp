#include "leopard/baselines/finetune.hpp"

#include <memory>

#include <fmt/format.h>

#include "leopard/autodiff/optim.hpp"
#include "leopard/baselines/mtl.hpp"
#include "leopard/meta/trainer.hpp"

namespace leopard::baselines {

FinetuneMode parse_finetune_mode(const std::string& s) {
  if (s == "full") return FinetuneMode::Full;
  if (s == "softmax_only") return FinetuneMode::SoftmaxOnly;
  if (s == "reuse_head") return FinetuneMode::ReuseHead;
  if (s == "leopard_zero") return FinetuneMode::LeopardZero;
  throw std::invalid_argument(fmt::format("unknown fine-tuning mode '{}'", s));
}

std::string to_string(FinetuneMode mode) {
  switch (mode) {
    case FinetuneMode::Full: return "full";
    case FinetuneMode::SoftmaxOnly: return "softmax_only";
    case FinetuneMode::ReuseHead: return "reuse_head";
    case FinetuneMode::LeopardZero: return "leopard_zero";
  }
  return "?";
}

namespace {

constexpr const char* kTarget = "target";

}  // namespace

Predictor finetune_eval(const BaselineModel& m, FinetuneMode mode, const data::TaskSpec& task,
                        const std::vector<data::Example>& support, const data::Vocabulary& vocab,
                        const FinetuneConfig& config) {
  if (mode == FinetuneMode::LeopardZero) {
    throw std::invalid_argument("leopard_zero fine-tuning needs a LEOPARD model");
  }
  task.validate();
  auto params = std::make_shared<ParamSet>();
  for (const auto& [path, t] : m.params) {
    if (model::has_prefix(path, "encoder.")) (*params)[path] = t;
  }
  *params = model::deep_copy(*params);
  const std::size_t n = task.labels.size();
  add_head(*params, kTarget, n, m.encoder.hidden);
  if (mode == FinetuneMode::ReuseHead) {
    auto donor = m.head_labels.find(config.donor);
    if (donor == m.head_labels.end()) {
      throw std::invalid_argument(fmt::format("no donor head for task '{}'", config.donor));
    }
    if (donor->second.size() != n) {
      throw std::invalid_argument(fmt::format("donor '{}' has {} labels but task '{}' has {}", config.donor,
                                              donor->second.size(), task.name, n));
    }
    for (const auto& [dst, src] : {std::pair{head_weight(kTarget), head_weight(config.donor)},
                                   std::pair{head_bias(kTarget), head_bias(config.donor)}}) {
      const Tensor& t = model::lookup(m.params, src);
      (*params)[dst] = Tensor::from(t.shape(), std::vector<double>(t.values().begin(), t.values().end()), true);
    }
  }

  const auto batch = data::make_batch(support, task, vocab, config.encoding);
  ad::Adam adam;
  for (std::size_t epoch = 0; epoch < config.epochs; ++epoch) {
    ParamSet leaves = model::shadow(*params);
    ad::backward(ad::softmax_cross_entropy(head_logits(leaves, m.encoder, kTarget, batch),
                                           std::span<const int>(batch.labels)));
    for (auto& [path, t] : *params) {
      if (mode == FinetuneMode::SoftmaxOnly && !model::has_prefix(path, "heads.")) continue;
      const Tensor& leaf = leaves.at(path);
      if (leaf.has_grad()) adam.step(path, t, leaf.grad(), config.lr);
    }
  }
  auto values = std::make_shared<const ParamSet>(model::detached(*params));
  const auto encoder = m.encoder;
  return Predictor{[values, encoder](const data::EncodedBatch& b) { return head_logits(*values, encoder, kTarget, b); },
                   *values};
}

Predictor finetune_eval(const ParamSet& leopard_params, const meta::LeopardConfig& leopard_config, FinetuneMode mode,
                        const data::TaskSpec& task, const std::vector<data::Example>& support,
                        const data::Vocabulary& vocab, const FinetuneConfig& config) {
  if (mode != FinetuneMode::LeopardZero) {
    throw std::invalid_argument(fmt::format("{} fine-tuning needs a baseline model", to_string(mode)));
  }
  auto c = leopard_config;
  c.zero_softmax = true;
  auto predictor = std::make_shared<meta::LeopardPredictor>(
      meta::finetune_adapt(leopard_params, c, task, support, vocab, meta::FinetuneOptions{config.epochs, config.encoding}));
  return Predictor{[predictor](const data::EncodedBatch& b) { return predictor->logits(b); }, predictor->phi()};
}

BaselineModel random_init_model(const model::EncoderConfig& encoder, std::uint64_t seed) {
  BaselineModel m;
  m.kind = "init";
  m.encoder = encoder;
  m.seed = seed;
  std::mt19937_64 rng(seed);
  model::init_encoder(m.params, encoder, rng);
  return m;
}

}  // namespace leopard::baselines
