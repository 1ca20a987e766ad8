#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <span>
#include <vector>

#include "leopard/autodiff/optim.hpp"
#include "leopard/meta/leopard.hpp"

namespace leopard::meta {

// Adam update of every store entry named in the summed gradients, in path
// order. An empty meta-batch leaves the store and the optimizer untouched.
void outer_step(ParamSet& store, ad::Adam& adam, std::span<const TaskGradient> grads, double beta);

struct MetaConfig {
  std::size_t adaptation_steps = 7;  // G
  bool prose_steps = false;          // generation batch counts as the first of G draws
  double outer_lr = 1e-3;            // beta
  std::size_t tasks_per_batch = 1;
  std::size_t k = 4;
  std::size_t queries_per_label = 0;  // 0 means k
  std::size_t episodes = 2000;
  std::uint64_t seed = 0;
  data::TaskSampling sampling = data::TaskSampling::SquareRoot;
  double warmup_fraction = 0.0;
  std::size_t eval_every = 100;
  std::size_t patience = 5;
  std::size_t eval_episodes = 8;  // per validation task
  std::size_t threads = 1;
  bool dropout = true;
  data::EncodingOptions encoding;

  data::EpisodeShape episode_shape() const;
  void validate() const;
  nlohmann::json to_json() const;
};

struct TrainLogEntry {
  std::size_t episode = 0;
  std::string task;
  double val_loss = 0.0;
  double val_acc = 0.0;
  double wallclock = 0.0;
};

struct TrainResult {
  ParamSet params;
  ad::Adam adam;
  std::vector<TrainLogEntry> log;
  std::size_t episodes_run = 0;
  std::optional<double> best_validation_loss;
  bool stopped_early = false;
};

// Learning rate at a given episode under linear warm-up.
double scheduled_lr(const MetaConfig& config, std::size_t episode);

// Episodic meta-training. Validation tasks drive early stopping; the returned parameters
// are those with the best validation loss seen (or the final ones without
// validation tasks). Each logged episode is also written to log_jsonl.
TrainResult meta_train(const LeopardConfig& config, const MetaConfig& meta, std::span<const data::TaskDataset> train,
                       std::span<const data::TaskDataset> validation, const data::Vocabulary& vocab,
                       std::ostream* log_jsonl = nullptr);

// Mean validation loss and accuracy over a fixed set of episodes per task.
std::pair<double, double> validation_score(const ParamSet& store, const LeopardConfig& config, const MetaConfig& meta,
                                           std::span<const data::TaskDataset> validation,
                                           const data::Vocabulary& vocab);

// ---- checkpoints ----------------------------------------------------------

ad::Checkpoint make_checkpoint(const ParamSet& params, const LeopardConfig& config, std::uint64_t seed,
                               const ad::Adam* adam = nullptr);
struct LoadedModel {
  LeopardConfig config;
  ParamSet params;
  std::uint64_t seed = 0;
};
LoadedModel load_leopard(const ad::Checkpoint& ckpt);

// ---- test-time adaptation -------------------------------------------------

class LeopardPredictor {
 public:
  LeopardPredictor(ParamSet params, ParamSet phi, LeopardConfig config)
      : params_(std::move(params)), phi_(std::move(phi)), config_(std::move(config)) {}

  Tensor logits(const data::EncodedBatch& batch) const;
  std::vector<double> probabilities(const data::EncodedBatch& batch) const;
  std::vector<int> predict(const data::EncodedBatch& batch) const;
  const ParamSet& phi() const { return phi_; }

 private:
  ParamSet params_;
  ParamSet phi_;
  LeopardConfig config_;
};

struct FinetuneOptions {
  std::size_t epochs = 0;
  data::EncodingOptions encoding;
  std::mt19937_64* dropout_rng = nullptr;
};

// Generates the softmax from the whole support once, then takes `epochs`
// full-batch inner steps over it with the learned per-layer rates.
LeopardPredictor finetune_adapt(const ParamSet& params, const LeopardConfig& config, const data::TaskSpec& task,
                                const std::vector<data::Example>& support, const data::Vocabulary& vocab,
                                const FinetuneOptions& options);

}  // namespace leopard::meta
