#pragma once

#include <map>
#include <optional>
#include <random>
#include <string>

#include "leopard/autodiff/checkpoint.hpp"
#include "leopard/autodiff/tensor.hpp"

namespace leopard::model {

using ad::Tensor;

// Named parameters, ordered by path. Paths are dot-separated and encode the
// owning component, e.g. "encoder.layer2.attn.wq" or "generator.w1".
using ParamSet = std::map<std::string, Tensor>;

// Encoder layer index of a path: 0 for "encoder.embeddings.*", v for
// "encoder.layer<v>.*", nullopt for anything outside the encoder.
std::optional<int> encoder_layer(const std::string& path);

bool has_prefix(const std::string& path, const std::string& prefix);

// Fresh leaves sharing each parameter's values, so gradients can be taken
// without touching the originals. Safe to call from several threads at once.
ParamSet shadow(const ParamSet& params);

// Value-only views that never receive gradients.
ParamSet detached(const ParamSet& params);

// Deep copies with independent value buffers.
ParamSet deep_copy(const ParamSet& params, bool requires_grad = true);

const Tensor& lookup(const ParamSet& params, const std::string& path);

// Truncated normal at two standard deviations.
Tensor truncated_normal(ad::Shape shape, double stddev, std::mt19937_64& rng);

void save_params(ad::Checkpoint& ckpt, const ParamSet& params);
// Restores every checkpoint entry whose path starts with prefix. Entries
// missing from params are created as leaves requiring gradients.
void load_params(const ad::Checkpoint& ckpt, ParamSet& params, const std::string& prefix = "");

}  // namespace leopard::model
