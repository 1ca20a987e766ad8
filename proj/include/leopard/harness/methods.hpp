#pragma once

// Evaluation methods by name: leopard, leopard-zero, proto, finetune,
// mtl-full, mtl-softmax, mtl-reuse.

#include <optional>
#include <string>
#include <vector>

#include "leopard/baselines/finetune.hpp"
#include "leopard/harness/evaluate.hpp"
#include "leopard/harness/profile.hpp"

namespace leopard::harness {

const std::vector<std::string>& method_names();

Method leopard_method(const meta::LoadedModel& model, std::size_t epochs, const data::Vocabulary& vocab,
                      const data::EncodingOptions& encoding);
Method leopard_zero_method(const meta::LoadedModel& model, std::size_t epochs, const data::Vocabulary& vocab,
                           const data::EncodingOptions& encoding);
Method proto_method(const baselines::BaselineModel& model, const data::Vocabulary& vocab,
                    const data::EncodingOptions& encoding);
// For ReuseHead with an empty donor, the first head (by task name) whose
// label count matches the target task is used.
Method finetune_method(std::string name, const baselines::BaselineModel& model, baselines::FinetuneMode mode,
                       const baselines::FinetuneConfig& config, const data::Vocabulary& vocab);

std::string pick_donor(const baselines::BaselineModel& model, const data::TaskSpec& task);

// Builds the named method. ckpt is required for every method except
// finetune, which starts from an encoder initialized with the profile's
// baseline seed. epochs overrides the profile's fine-tuning epochs.
Method make_method(const std::string& name, const ad::Checkpoint* ckpt, const Profile& profile,
                   const data::Vocabulary& vocab, std::optional<std::size_t> epochs = std::nullopt);

}  // namespace leopard::harness
