#include "leopard/baselines/mtl.hpp"

#include <numeric>

#include <fmt/format.h>

namespace leopard::baselines {

std::string head_weight(const std::string& task) { return fmt::format("heads.{}.W", task); }
std::string head_bias(const std::string& task) { return fmt::format("heads.{}.b", task); }

void add_head(ParamSet& params, const std::string& task, std::size_t labels, std::size_t hidden) {
  params[head_weight(task)] = Tensor::zeros({labels, hidden}, true);
  params[head_bias(task)] = Tensor::zeros({labels}, true);
}

Tensor head_logits(const ParamSet& params, const model::EncoderConfig& config, const std::string& task,
                   const data::EncodedBatch& batch, model::Forward fwd) {
  auto w = params.find(head_weight(task));
  auto b = params.find(head_bias(task));
  if (w == params.end() || b == params.end()) throw std::out_of_range(fmt::format("no head for task '{}'", task));
  Tensor h = model::encode(params, config, batch, fwd);
  return ad::add_row(ad::matmul(h, ad::transpose(w->second)), b->second);
}

TrainStats mtl_train_step(ParamSet& params, ad::Adam& adam, const model::EncoderConfig& config,
                          const std::string& task, const data::EncodedBatch& batch, double lr,
                          std::mt19937_64* dropout_rng) {
  ParamSet leaves = model::shadow(params);
  Tensor logits = head_logits(leaves, config, task, batch, model::Forward{dropout_rng});
  Tensor loss = ad::softmax_cross_entropy(logits, std::span<const int>(batch.labels));
  ad::backward(loss);
  for (auto& [path, t] : params) {
    const Tensor& leaf = leaves.at(path);
    if (leaf.has_grad()) adam.step(path, t, leaf.grad(), lr);
  }
  TrainStats s;
  s.task = task;
  s.loss = loss.item();
  const auto pred = model::argmax_rows(logits.values(), logits.cols());
  std::size_t ok = 0;
  for (std::size_t i = 0; i < pred.size(); ++i) ok += pred[i] == batch.labels[i];
  s.accuracy = static_cast<double>(ok) / static_cast<double>(pred.size());
  return s;
}

BaselineModel train_mtl(const model::EncoderConfig& encoder, const BaselineConfig& config,
                        std::span<const data::TaskDataset> tasks, const data::Vocabulary& vocab,
                        std::vector<TrainStats>* log) {
  config.validate();
  if (config.steps > 0 && tasks.empty()) throw std::invalid_argument("MTL training needs at least one task");
  BaselineModel m;
  m.kind = "mtl";
  m.encoder = encoder;
  m.seed = config.seed;
  std::mt19937_64 init_rng(config.seed);
  model::init_encoder(m.params, encoder, init_rng);
  for (const auto& t : tasks) {
    t.spec.validate();
    if (m.head_labels.count(t.spec.name)) throw data::DataError(fmt::format("duplicate task '{}'", t.spec.name));
    m.head_labels[t.spec.name] = t.spec.labels;
    add_head(m.params, t.spec.name, t.num_labels(), encoder.hidden);
  }

  std::vector<std::size_t> sizes;
  for (const auto& t : tasks) sizes.push_back(t.size());
  std::seed_seq task_seed{config.seed, std::uint64_t{1}};
  std::mt19937_64 task_rng(task_seed);
  ad::Adam adam;
  for (std::size_t step = 0; step < config.steps; ++step) {
    const auto& task = tasks[data::sample_task(sizes, task_rng, config.sampling)];
    if (task.train.empty()) throw data::DataError(fmt::format("task '{}' has no training examples", task.spec.name));
    std::mt19937_64 rng(config.seed + step);
    std::vector<std::size_t> idx(task.train.size());
    std::iota(idx.begin(), idx.end(), std::size_t{0});
    const std::size_t n = std::min(config.batch_size, idx.size());
    for (std::size_t i = 0; i < n; ++i) {
      std::uniform_int_distribution<std::size_t> pick(i, idx.size() - 1);
      std::swap(idx[i], idx[pick(rng)]);
    }
    std::vector<data::Example> examples;
    for (std::size_t i = 0; i < n; ++i) examples.push_back(task.train[idx[i]]);
    const auto batch = data::make_batch(examples, task.spec, vocab, config.encoding);
    auto s = mtl_train_step(m.params, adam, encoder, task.spec.name, batch, config.lr_at(step),
                            config.dropout ? &rng : nullptr);
    s.step = step + 1;
    if (log) log->push_back(std::move(s));
  }
  return m;
}

}  // namespace leopard::baselines
