#pragma once

// Test-time fine-tuning of a trained (or freshly initialized) model on a
// k-shot support set.

#include <optional>

#include "leopard/baselines/common.hpp"
#include "leopard/meta/leopard.hpp"

namespace leopard::baselines {

enum class FinetuneMode {
  Full,         // new zero head, every parameter tuned
  SoftmaxOnly,  // new zero head, encoder frozen
  ReuseHead,    // donor head copied, every parameter tuned
  LeopardZero,  // LEOPARD model, W = 0 and b = 0, learned inner rates
};

FinetuneMode parse_finetune_mode(const std::string& s);
std::string to_string(FinetuneMode mode);

struct FinetuneConfig {
  std::size_t epochs = 10;  // one full-batch step over the support per epoch
  double lr = 1e-3;         // Adam; unused by LeopardZero
  std::string donor;        // ReuseHead: training task whose head is copied
  data::EncodingOptions encoding;
};

// Encoder-with-head fine-tuning of a baseline model (Full, SoftmaxOnly,
// ReuseHead). The model is not modified.
Predictor finetune_eval(const BaselineModel& model, FinetuneMode mode, const data::TaskSpec& task,
                        const std::vector<data::Example>& support, const data::Vocabulary& vocab,
                        const FinetuneConfig& config);

// LeopardZero on a LEOPARD model.
Predictor finetune_eval(const ParamSet& leopard_params, const meta::LeopardConfig& leopard_config,
                        FinetuneMode mode, const data::TaskSpec& task, const std::vector<data::Example>& support,
                        const data::Vocabulary& vocab, const FinetuneConfig& config);

// A never-trained encoder, the starting point of the plain fine-tuning baseline.
BaselineModel random_init_model(const model::EncoderConfig& encoder, std::uint64_t seed);

}  // namespace leopard::baselines
