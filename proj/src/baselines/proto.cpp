#include "leopard/baselines/proto.hpp"

#include <fmt/format.h>

#include "leopard/autodiff/optim.hpp"

namespace leopard::baselines {

PrototypeSet make_prototypes(const Tensor& embeddings, std::span<const int> labels,
                             const std::vector<std::string>& classes) {
  if (labels.size() != embeddings.rows()) {
    throw ad::ShapeError(fmt::format("prototypes: {} labels for {} rows", labels.size(), embeddings.rows()));
  }
  std::vector<Tensor> means;
  for (std::size_t c = 0; c < classes.size(); ++c) {
    std::vector<std::size_t> rows;
    for (std::size_t i = 0; i < labels.size(); ++i) {
      if (labels[i] == static_cast<int>(c)) rows.push_back(i);
    }
    if (rows.empty()) throw data::DataError(fmt::format("class '{}' has no support examples", classes[c]));
    means.push_back(ad::mean_rows(ad::select_rows(embeddings, std::span<const std::size_t>(rows))));
  }
  return PrototypeSet{ad::concat_rows(std::span<const Tensor>(means)), classes};
}

Tensor proto_logits(const PrototypeSet& p, const Tensor& queries) {
  return ad::scale(ad::squared_distances(queries, p.means), -1.0);
}

std::vector<double> proto_predict(const PrototypeSet& p, std::span<const double> query) {
  if (query.size() != p.means.cols()) {
    throw ad::ShapeError(fmt::format("proto_predict: query of size {} against d = {}", query.size(), p.means.cols()));
  }
  Tensor q = Tensor::from({1, query.size()}, std::vector<double>(query.begin(), query.end()));
  Tensor logits = proto_logits(p, q);
  return ad::softmax_rows(logits.values(), logits.cols());
}

namespace {

std::vector<std::string> index_names(std::size_t n) {
  std::vector<std::string> out;
  for (std::size_t i = 0; i < n; ++i) out.push_back(std::to_string(i));
  return out;
}

Tensor episode_logits(const ParamSet& params, const model::EncoderConfig& config, const data::EncodedBatch& support,
                      const data::EncodedBatch& queries, std::size_t classes, model::Forward fwd) {
  const auto protos = make_prototypes(model::encode(params, config, support, fwd),
                                      std::span<const int>(support.labels), index_names(classes));
  return proto_logits(protos, model::encode(params, config, queries, fwd));
}

}  // namespace

Tensor proto_loss(const ParamSet& params, const model::EncoderConfig& config, const data::EncodedBatch& support,
                  const data::EncodedBatch& queries, std::size_t classes, model::Forward fwd) {
  return ad::softmax_cross_entropy(episode_logits(params, config, support, queries, classes, fwd),
                                   std::span<const int>(queries.labels));
}

TrainStats proto_train_step(ParamSet& params, ad::Adam& adam, const model::EncoderConfig& config,
                            const data::EncodedBatch& support, const data::EncodedBatch& queries, std::size_t classes,
                            double lr, std::mt19937_64* dropout_rng) {
  ParamSet leaves = model::shadow(params);
  Tensor logits = episode_logits(leaves, config, support, queries, classes, model::Forward{dropout_rng});
  Tensor loss = ad::softmax_cross_entropy(logits, std::span<const int>(queries.labels));
  ad::backward(loss);
  for (auto& [path, t] : params) {
    const Tensor& leaf = leaves.at(path);
    if (leaf.has_grad()) adam.step(path, t, leaf.grad(), lr);
  }
  TrainStats s;
  s.loss = loss.item();
  const auto pred = model::argmax_rows(logits.values(), logits.cols());
  std::size_t ok = 0;
  for (std::size_t i = 0; i < pred.size(); ++i) ok += pred[i] == queries.labels[i];
  s.accuracy = static_cast<double>(ok) / static_cast<double>(pred.size());
  return s;
}

BaselineModel train_proto(const model::EncoderConfig& encoder, const BaselineConfig& config,
                          std::span<const data::TaskDataset> tasks, const data::Vocabulary& vocab,
                          std::vector<TrainStats>* log) {
  config.validate();
  if (config.steps > 0 && tasks.empty()) throw std::invalid_argument("Proto training needs at least one task");
  BaselineModel m;
  m.kind = "proto";
  m.encoder = encoder;
  m.seed = config.seed;
  std::mt19937_64 init_rng(config.seed);
  model::init_encoder(m.params, encoder, init_rng);

  std::vector<std::size_t> sizes;
  for (const auto& t : tasks) sizes.push_back(t.size());
  std::seed_seq task_seed{config.seed, std::uint64_t{1}};
  std::mt19937_64 task_rng(task_seed);
  const data::EpisodeShape shape{config.k, 0, config.queries_per_label};
  ad::Adam adam;
  for (std::size_t step = 0; step < config.steps; ++step) {
    const auto& task = tasks[data::sample_task(sizes, task_rng, config.sampling)];
    std::mt19937_64 rng(config.seed + step);
    const auto ep = data::sample_episode(task, shape, rng);
    const auto support = data::make_batch(ep.generation, task.spec, vocab, config.encoding);
    const auto queries = data::make_batch(ep.validation, task.spec, vocab, config.encoding);
    auto s = proto_train_step(m.params, adam, encoder, support, queries, task.num_labels(), config.lr_at(step),
                              config.dropout ? &rng : nullptr);
    s.step = step + 1;
    s.task = task.spec.name;
    if (log) log->push_back(std::move(s));
  }
  return m;
}

Predictor proto_predictor(const ParamSet& params, const model::EncoderConfig& config, const data::TaskSpec& task,
                          const std::vector<data::Example>& support, const data::Vocabulary& vocab,
                          const data::EncodingOptions& encoding) {
  task.validate();
  const ParamSet values = model::detached(params);
  const auto batch = data::make_batch(support, task, vocab, encoding);
  auto protos = std::make_shared<PrototypeSet>(make_prototypes(model::encode(values, config, batch),
                                                               std::span<const int>(batch.labels), task.labels));
  return Predictor{[values, config, protos](const data::EncodedBatch& b) {
    return proto_logits(*protos, model::encode(values, config, b));
  }, values};
}

}  // namespace leopard::baselines
