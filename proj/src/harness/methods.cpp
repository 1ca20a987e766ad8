#include "leopard/harness/methods.hpp"

#include <memory>

#include <fmt/format.h>

#include "leopard/baselines/proto.hpp"

namespace leopard::harness {

const std::vector<std::string>& method_names() {
  static const std::vector<std::string> names{"leopard",  "leopard-zero", "proto",    "finetune",
                                              "mtl-full", "mtl-softmax",  "mtl-reuse"};
  return names;
}

Method leopard_method(const meta::LoadedModel& model, std::size_t epochs, const data::Vocabulary& vocab,
                      const data::EncodingOptions& encoding) {
  auto m = std::make_shared<const meta::LoadedModel>(model);
  return Method{"leopard", [m, epochs, &vocab, encoding](const data::TaskSpec& task,
                                                          const std::vector<data::Example>& support, std::uint64_t) {
                  auto p = std::make_shared<meta::LeopardPredictor>(meta::finetune_adapt(
                      m->params, m->config, task, support, vocab, meta::FinetuneOptions{epochs, encoding}));
                  return baselines::Predictor{[p](const data::EncodedBatch& b) { return p->logits(b); }, p->phi()};
                }};
}

Method leopard_zero_method(const meta::LoadedModel& model, std::size_t epochs, const data::Vocabulary& vocab,
                           const data::EncodingOptions& encoding) {
  auto m = std::make_shared<const meta::LoadedModel>(model);
  baselines::FinetuneConfig fc;
  fc.epochs = epochs;
  fc.encoding = encoding;
  return Method{"leopard-zero", [m, fc, &vocab](const data::TaskSpec& task, const std::vector<data::Example>& support,
                                                std::uint64_t) {
                  return baselines::finetune_eval(m->params, m->config, baselines::FinetuneMode::LeopardZero, task,
                                                  support, vocab, fc);
                }};
}

Method proto_method(const baselines::BaselineModel& model, const data::Vocabulary& vocab,
                    const data::EncodingOptions& encoding) {
  auto m = std::make_shared<const baselines::BaselineModel>(model);
  return Method{"proto", [m, &vocab, encoding](const data::TaskSpec& task, const std::vector<data::Example>& support,
                                               std::uint64_t) {
                  return baselines::proto_predictor(m->params, m->encoder, task, support, vocab, encoding);
                }};
}

std::string pick_donor(const baselines::BaselineModel& model, const data::TaskSpec& task) {
  for (const auto& [name, labels] : model.head_labels) {
    if (labels.size() == task.labels.size()) return name;
  }
  throw std::invalid_argument(
      fmt::format("no trained head has {} labels to reuse for task '{}'", task.labels.size(), task.name));
}

Method finetune_method(std::string name, const baselines::BaselineModel& model, baselines::FinetuneMode mode,
                       const baselines::FinetuneConfig& config, const data::Vocabulary& vocab) {
  auto m = std::make_shared<const baselines::BaselineModel>(model);
  return Method{std::move(name), [m, mode, config, &vocab](const data::TaskSpec& task,
                                                           const std::vector<data::Example>& support, std::uint64_t) {
                  auto c = config;
                  if (mode == baselines::FinetuneMode::ReuseHead && c.donor.empty()) c.donor = pick_donor(*m, task);
                  return baselines::finetune_eval(*m, mode, task, support, vocab, c);
                }};
}

Method make_method(const std::string& name, const ad::Checkpoint* ckpt, const Profile& profile,
                   const data::Vocabulary& vocab, std::optional<std::size_t> epochs) {
  const auto encoding = profile.encoding();
  auto need = [&]() -> const ad::Checkpoint& {
    if (!ckpt) throw std::invalid_argument(fmt::format("method '{}' needs a checkpoint", name));
    return *ckpt;
  };
  baselines::FinetuneConfig fc;
  fc.epochs = epochs.value_or(profile.finetune.epochs);
  fc.encoding = encoding;
  auto mtl = [&]() {
    auto m = baselines::load_baseline(need());
    if (m.kind != "mtl") throw std::invalid_argument(fmt::format("method '{}' needs an MTL checkpoint", name));
    return m;
  };

  if (name == "leopard") {
    return leopard_method(meta::load_leopard(need()), epochs.value_or(profile.finetune.leopard_epochs), vocab,
                          encoding);
  }
  if (name == "leopard-zero") {
    return leopard_zero_method(meta::load_leopard(need()), epochs.value_or(profile.finetune.leopard_epochs), vocab,
                               encoding);
  }
  if (name == "proto") {
    auto m = baselines::load_baseline(need());
    if (m.kind != "proto") throw std::invalid_argument("method 'proto' needs a Proto checkpoint");
    return proto_method(m, vocab, encoding);
  }
  if (name == "finetune") {
    auto e = profile.leopard.encoder;
    e.vocab_size = vocab.size();
    fc.lr = profile.finetune.full_lr;
    return finetune_method(name, baselines::random_init_model(e, profile.baseline.seed), baselines::FinetuneMode::Full,
                           fc, vocab);
  }
  if (name == "mtl-full") {
    fc.lr = profile.finetune.full_lr;
    return finetune_method(name, mtl(), baselines::FinetuneMode::Full, fc, vocab);
  }
  if (name == "mtl-softmax") {
    fc.lr = profile.finetune.softmax_lr;
    return finetune_method(name, mtl(), baselines::FinetuneMode::SoftmaxOnly, fc, vocab);
  }
  if (name == "mtl-reuse") {
    fc.lr = profile.finetune.reuse_lr;
    return finetune_method(name, mtl(), baselines::FinetuneMode::ReuseHead, fc, vocab);
  }
  throw std::invalid_argument(fmt::format("unknown method '{}'", name));
}

}  // namespace leopard::harness
