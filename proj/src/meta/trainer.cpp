#include "leopard/meta/trainer.hpp"

#include <chrono>
#include <exception>
#include <ostream>
#include <thread>

#include <fmt/format.h>

namespace leopard::meta {

void outer_step(ParamSet& store, ad::Adam& adam, std::span<const TaskGradient> grads, double beta) {
  if (grads.empty()) return;
  for (const auto& [path, g] : sum_gradients(grads)) {
    auto it = store.find(path);
    if (it == store.end()) throw std::invalid_argument(fmt::format("gradient for unknown parameter '{}'", path));
    adam.step(path, it->second, g, beta);
  }
}

data::EpisodeShape MetaConfig::episode_shape() const {
  data::EpisodeShape s;
  s.k = k;
  s.adaptation_batches = prose_steps ? adaptation_steps - 1 : adaptation_steps;
  s.queries_per_label = queries_per_label;
  return s;
}

void MetaConfig::validate() const {
  if (adaptation_steps == 0 || (prose_steps && adaptation_steps < 2)) {
    throw std::invalid_argument("meta-training needs at least one adaptation step");
  }
  if (!(outer_lr > 0.0)) throw std::invalid_argument("outer learning rate must be positive");
  if (tasks_per_batch == 0 || k == 0) throw std::invalid_argument("tasks per batch and k must be positive");
  if (warmup_fraction < 0.0 || warmup_fraction > 1.0) throw std::invalid_argument("warm-up fraction outside [0, 1]");
}

nlohmann::json MetaConfig::to_json() const {
  return {{"adaptation_steps", adaptation_steps},
          {"prose_steps", prose_steps},
          {"outer_lr", outer_lr},
          {"tasks_per_batch", tasks_per_batch},
          {"k", k},
          {"queries_per_label", queries_per_label},
          {"episodes", episodes},
          {"seed", seed},
          {"warmup_fraction", warmup_fraction},
          {"eval_every", eval_every},
          {"patience", patience},
          {"dropout", dropout},
          {"max_len", encoding.max_len},
          {"lowercase", encoding.lowercase}};
}

double scheduled_lr(const MetaConfig& m, std::size_t episode) {
  const double warm = m.warmup_fraction * static_cast<double>(m.episodes);
  if (warm <= 0.0 || static_cast<double>(episode) >= warm) return m.outer_lr;
  return m.outer_lr * static_cast<double>(episode + 1) / warm;
}

namespace {

template <typename Fn>
void run_parallel(std::size_t n, std::size_t threads, Fn fn) {
  std::vector<std::exception_ptr> errors(n);
  auto work = [&](std::size_t start, std::size_t stride) {
    for (std::size_t j = start; j < n; j += stride) {
      try {
        fn(j);
      } catch (...) {
        errors[j] = std::current_exception();
      }
    }
  };
  const std::size_t t = std::min(std::max<std::size_t>(threads, 1), n);
  if (t <= 1) {
    work(0, 1);
  } else {
    std::vector<std::thread> pool;
    for (std::size_t w = 0; w < t; ++w) pool.emplace_back(work, w, t);
    for (auto& th : pool) th.join();
  }
  for (auto& e : errors) {
    if (e) std::rethrow_exception(e);
  }
}

constexpr std::uint64_t kValidationSalt = 0x76616c6964617465ULL;

}  // namespace

std::pair<double, double> validation_score(const ParamSet& store, const LeopardConfig& c, const MetaConfig& m,
                                           std::span<const data::TaskDataset> validation,
                                           const data::Vocabulary& vocab) {
  const auto part = partition(store, c);
  double loss = 0.0, acc = 0.0;
  std::size_t n = 0;
  for (std::size_t i = 0; i < validation.size(); ++i) {
    for (std::size_t e = 0; e < m.eval_episodes; ++e) {
      std::mt19937_64 rng(kValidationSalt + m.seed * 7919 + i * 1000 + e);
      auto ep = data::sample_episode(validation[i], m.episode_shape(), rng);
      auto r = evaluate_episode(store, part, c, encode_episode(ep, validation[i].spec, vocab, m.encoding));
      loss += r.loss;
      acc += r.accuracy;
      ++n;
    }
  }
  if (n == 0) return {0.0, 0.0};
  return {loss / static_cast<double>(n), acc / static_cast<double>(n)};
}

TrainResult meta_train(const LeopardConfig& c, const MetaConfig& m, std::span<const data::TaskDataset> train,
                       std::span<const data::TaskDataset> validation, const data::Vocabulary& vocab,
                       std::ostream* log_jsonl) {
  c.validate();
  m.validate();
  if (m.episodes > 0 && train.empty()) throw std::invalid_argument("meta-training needs at least one task");

  TrainResult result;
  result.params = init_leopard(c, m.seed);
  const auto part = partition(result.params, c);
  const auto shape = m.episode_shape();
  std::vector<std::size_t> sizes;
  for (const auto& t : train) sizes.push_back(t.size());
  std::seed_seq task_seed{m.seed, std::uint64_t{1}};
  std::mt19937_64 task_rng(task_seed);
  const auto start = std::chrono::steady_clock::now();

  const bool early_stopping = !validation.empty() && m.eval_every > 0;
  ParamSet best;
  std::size_t bad_evals = 0;
  auto evaluate = [&] {
    const double loss = validation_score(result.params, c, m, validation, vocab).first;
    if (!result.best_validation_loss || loss < *result.best_validation_loss) {
      result.best_validation_loss = loss;
      best = model::deep_copy(result.params);
      bad_evals = 0;
    } else {
      ++bad_evals;
    }
  };
  if (early_stopping) evaluate();

  std::size_t episode = 0;
  while (episode < m.episodes) {
    const std::size_t n = std::min(m.tasks_per_batch, m.episodes - episode);
    std::vector<std::size_t> task_idx(n);
    for (auto& idx : task_idx) idx = data::sample_task(sizes, task_rng, m.sampling);

    std::vector<TaskGradient> grads(n);
    run_parallel(n, m.threads, [&](std::size_t j) {
      const auto& task = train[task_idx[j]];
      try {
        std::mt19937_64 rng(m.seed + episode + j);
        auto ep = encode_episode(data::sample_episode(task, shape, rng), task.spec, vocab, m.encoding);
        grads[j] = task_gradient(result.params, part, c, ep, m.dropout ? &rng : nullptr);
      } catch (const std::exception& e) {
        throw std::runtime_error(fmt::format("episode {} (task {}): {}", episode + j, task.spec.name, e.what()));
      }
    });
    outer_step(result.params, result.adam, grads, scheduled_lr(m, episode));

    const double elapsed = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    for (std::size_t j = 0; j < n; ++j) {
      TrainLogEntry entry{episode + j + 1, grads[j].task, grads[j].loss, grads[j].accuracy, elapsed};
      if (log_jsonl) {
        *log_jsonl << nlohmann::json{{"episode", entry.episode},
                                     {"task", entry.task},
                                     {"val_loss", entry.val_loss},
                                     {"val_acc", entry.val_acc},
                                     {"wallclock", entry.wallclock}}
                          .dump()
                   << '\n';
      }
      result.log.push_back(std::move(entry));
    }
    const std::size_t before = episode;
    episode += n;
    if (early_stopping && episode / m.eval_every != before / m.eval_every) {
      evaluate();
      if (bad_evals >= m.patience) {
        result.stopped_early = true;
        break;
      }
    }
  }
  result.episodes_run = episode;
  if (early_stopping) {
    if (episode % m.eval_every != 0 && !result.stopped_early) evaluate();
    result.params = std::move(best);
  }
  return result;
}

ad::Checkpoint make_checkpoint(const ParamSet& params, const LeopardConfig& c, std::uint64_t seed,
                               const ad::Adam* adam) {
  ad::Checkpoint ckpt;
  ckpt.header["kind"] = "leopard";
  ckpt.header["config"] = c.to_json();
  ckpt.header["config_hash"] = fmt::format("{:016x}", c.hash());
  ckpt.header["seed"] = seed;
  model::save_params(ckpt, params);
  if (adam) adam->save(ckpt);
  return ckpt;
}

LoadedModel load_leopard(const ad::Checkpoint& ckpt) {
  if (ckpt.header.value("kind", std::string()) != "leopard") {
    throw ad::CheckpointError("checkpoint does not hold a LEOPARD model");
  }
  LoadedModel m;
  m.config = LeopardConfig::from_json(ckpt.header.at("config"));
  if (ckpt.header.value("config_hash", std::string()) != fmt::format("{:016x}", m.config.hash())) {
    throw ad::CheckpointError("checkpoint config hash does not match its config");
  }
  m.seed = ckpt.header.value("seed", std::uint64_t{0});
  model::load_params(ckpt, m.params);
  partition(m.params, m.config);
  return m;
}

Tensor LeopardPredictor::logits(const data::EncodedBatch& batch) const {
  return leopard_logits(params_, phi_, config_, batch);
}

std::vector<double> LeopardPredictor::probabilities(const data::EncodedBatch& batch) const {
  Tensor logits = leopard_logits(params_, phi_, config_, batch);
  return ad::softmax_rows(logits.values(), logits.cols());
}

std::vector<int> LeopardPredictor::predict(const data::EncodedBatch& batch) const {
  Tensor logits = leopard_logits(params_, phi_, config_, batch);
  return model::argmax_rows(logits.values(), logits.cols());
}

LeopardPredictor finetune_adapt(const ParamSet& params, const LeopardConfig& c, const data::TaskSpec& task,
                                const std::vector<data::Example>& support, const data::Vocabulary& vocab,
                                const FinetuneOptions& options) {
  task.validate();
  const auto batch = data::make_batch(support, task, vocab, options.encoding);
  const auto part = partition(params, c);
  ParamSet values = model::detached(params);
  ParamSet phi = model::deep_copy(initial_phi(values, part, c, batch, task.labels), false);

  const model::Forward fwd{options.dropout_rng};
  const std::span<const int> labels(batch.labels);
  for (std::size_t epoch = 0; epoch < options.epochs; ++epoch) {
    ParamSet leaves = model::shadow(phi);
    ad::backward(ad::softmax_cross_entropy(leopard_logits(values, leaves, c, batch, fwd), labels));
    for (auto& [path, t] : phi) {
      const Tensor& leaf = leaves.at(path);
      if (!leaf.has_grad()) continue;
      const double rate = model::lookup(params, part.lr_group.at(path)).item();
      auto v = t.mutable_values();
      auto g = leaf.grad();
      for (std::size_t i = 0; i < v.size(); ++i) v[i] -= rate * g[i];
    }
  }
  return LeopardPredictor(std::move(values), std::move(phi), c);
}

}  // namespace leopard::meta
