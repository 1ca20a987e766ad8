#pragma once

#include <cstdint>
#include <functional>
#include <random>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "leopard/autodiff/checkpoint.hpp"
#include "leopard/autodiff/optim.hpp"
#include "leopard/data/dataset.hpp"
#include "leopard/data/sampling.hpp"
#include "leopard/model/encoder.hpp"
#include "leopard/model/generator.hpp"

namespace leopard::baselines {

using model::ParamSet;
using model::Tensor;

// Any fitted classifier over encoded batches.
struct Predictor {
  std::function<Tensor(const data::EncodedBatch&)> logits;
  ParamSet params;  // fitted parameters, for inspection

  std::vector<double> probabilities(const data::EncodedBatch& batch) const;
  std::vector<int> predict(const data::EncodedBatch& batch) const;
};

// Shared by Proto and MTL training.
struct BaselineConfig {
  std::size_t steps = 2000;
  double lr = 1e-3;
  double warmup_fraction = 0.0;
  std::size_t k = 4;                  // Proto: support examples per label
  std::size_t queries_per_label = 0;  // Proto: 0 means k
  std::size_t batch_size = 16;        // MTL: examples per minibatch
  std::uint64_t seed = 0;
  data::TaskSampling sampling = data::TaskSampling::SquareRoot;
  bool dropout = true;
  data::EncodingOptions encoding;

  void validate() const;
  nlohmann::json to_json() const;
  double lr_at(std::size_t step) const;
};

struct TrainStats {
  std::size_t step = 0;
  std::string task;
  double loss = 0.0;
  double accuracy = 0.0;
};

// Baseline checkpoints carry kind ("proto" or "mtl"), the encoder config and,
// for MTL, the label list of every head.
struct BaselineModel {
  std::string kind;
  model::EncoderConfig encoder;
  ParamSet params;
  std::map<std::string, std::vector<std::string>> head_labels;
  std::uint64_t seed = 0;
};

ad::Checkpoint make_checkpoint(const BaselineModel& model);
BaselineModel load_baseline(const ad::Checkpoint& ckpt);

}  // namespace leopard::baselines
