#pragma once

// Multi-task training: one shared encoder, one linear head per training task
// stored as heads.<task>.W (N x d) and heads.<task>.b (N).

#include <span>

#include "leopard/autodiff/optim.hpp"
#include "leopard/baselines/common.hpp"

namespace leopard::baselines {

std::string head_weight(const std::string& task);
std::string head_bias(const std::string& task);

void add_head(ParamSet& params, const std::string& task, std::size_t labels, std::size_t hidden);

Tensor head_logits(const ParamSet& params, const model::EncoderConfig& config, const std::string& task,
                   const data::EncodedBatch& batch, model::Forward fwd = {});

// One Adam step of the encoder and the named task's head. Other heads keep
// their values and optimizer state. Throws std::out_of_range for an unknown task.
TrainStats mtl_train_step(ParamSet& params, ad::Adam& adam, const model::EncoderConfig& config,
                          const std::string& task, const data::EncodedBatch& batch, double lr,
                          std::mt19937_64* dropout_rng = nullptr);

BaselineModel train_mtl(const model::EncoderConfig& encoder, const BaselineConfig& config,
                        std::span<const data::TaskDataset> tasks, const data::Vocabulary& vocab,
                        std::vector<TrainStats>* log = nullptr);

}  // namespace leopard::baselines
