#pragma once

// LEOPARD model state, the task-agnostic / task-specific parameter split,
// first-order inner-loop adaptation and per-task outer gradients.
//
// Persistent parameters live in one ParamSet (the store):
//   encoder.*      f_theta
//   generator.*    g_psi, d -> l + 1
//   projection.*   h_phi, d -> l
//   alpha.<group>  one scalar inner learning rate per adapted layer group
// The generated softmax appears only in per-episode Phi sets, under
// "softmax.W" and "softmax.b".

#include <cstdint>
#include <functional>
#include <map>
#include <random>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "leopard/data/dataset.hpp"
#include "leopard/data/sampling.hpp"
#include "leopard/model/encoder.hpp"
#include "leopard/model/generator.hpp"
#include "leopard/model/params.hpp"

namespace leopard::meta {

using model::ParamSet;
using model::Tensor;

inline constexpr const char* kSoftmaxW = "softmax.W";
inline constexpr const char* kSoftmaxB = "softmax.b";

struct LeopardConfig {
  model::EncoderConfig encoder;
  std::size_t class_embedding = 16;  // l
  std::size_t nu = 0;                // encoder layers <= nu are task-agnostic
  bool train_word_embeddings = true;
  bool generator_output_tanh = false;
  double alpha_init = 1e-3;
  bool zero_softmax = false;  // start every episode from W = 0, b = 0

  void validate() const;
  nlohmann::json to_json() const;
  static LeopardConfig from_json(const nlohmann::json& j);
  std::uint64_t hash() const;
};

struct ParameterPartition {
  std::size_t nu = 0;
  std::vector<std::string> theta;  // task-agnostic: shared encoder layers, generator, alpha
  std::vector<std::string> phi;    // task-specific: adapted encoder layers, projection, softmax.W, softmax.b
  std::map<std::string, std::string> lr_group;  // phi path -> alpha path

  bool is_task_specific(const std::string& path) const { return lr_group.count(path) != 0; }
};

// Learning-rate groups adapted in the inner loop, in a fixed order.
std::vector<std::string> alpha_paths(const LeopardConfig& config);

ParameterPartition partition(const ParamSet& params, const LeopardConfig& config);

ParamSet init_leopard(const LeopardConfig& config, std::uint64_t seed);

// ---- generic first-order inner loop ---------------------------------------

using StepLoss = std::function<Tensor(const ParamSet& phi, std::size_t step)>;

// Per step, the loss gradient with respect to each Phi entry, frozen.
using StepGradients = std::vector<std::map<std::string, std::vector<double>>>;

// Phi^(s+1) = Phi^(s) - lr[path] * stopgrad(grad of loss(Phi^(s), s)). The
// loss sees fresh leaves, so its gradients never reach anything upstream of
// Phi^(s); the returned tensors stay differentiable in phi0 and the rates.
// With replay set, its gradients are used instead of evaluating the loss.
ParamSet inner_loop(const ParamSet& phi0, const std::map<std::string, Tensor>& lr, std::size_t steps,
                    const StepLoss& loss, StepGradients* record = nullptr, const StepGradients* replay = nullptr);

// ---- LEOPARD episode ------------------------------------------------------

struct EpisodeBatches {
  std::string task;
  std::vector<std::string> classes;
  data::EncodedBatch generation;
  std::vector<data::EncodedBatch> adaptation;
  data::EncodedBatch validation;
};

EpisodeBatches encode_episode(const data::Episode& episode, const data::TaskSpec& spec,
                              const data::Vocabulary& vocab, const data::EncodingOptions& options);

// Phi^(0): the store's adapted encoder layers and projection, plus a softmax
// generated from the generation batch (or zeros in zero_softmax mode).
ParamSet initial_phi(const ParamSet& params, const ParameterPartition& part, const LeopardConfig& config,
                     const data::EncodedBatch& generation, const std::vector<std::string>& classes,
                     model::Forward fwd = {});

// G inner steps of cross-entropy descent, one per adaptation batch. params is
// read only; Theta enters each step detached.
ParamSet inner_adapt(const ParamSet& params, const ParameterPartition& part, const LeopardConfig& config,
                     const ParamSet& phi0, std::span<const data::EncodedBatch> batches, model::Forward fwd = {},
                     StepGradients* record = nullptr, const StepGradients* replay = nullptr);

// Logits of the model made of params overridden by phi.
Tensor leopard_logits(const ParamSet& params, const ParamSet& phi, const LeopardConfig& config,
                      const data::EncodedBatch& batch, model::Forward fwd = {});

double accuracy(const Tensor& logits, std::span<const int> labels);

struct TaskGradient {
  std::string task;
  std::map<std::string, std::vector<double>> grads;  // store path -> gradient
  double loss = 0.0;
  double accuracy = 0.0;
};

enum class OuterPath {
  Full,           // gradients flow through Phi^(G) into its initial values and alpha
  DetachAdapted,  // Phi^(G) is a constant; only Theta's direct role remains
};

// Validation loss gradient of one episode with respect to every store entry
// it reaches. Reads the store without modifying it.
TaskGradient task_gradient(const ParamSet& store, const ParameterPartition& part, const LeopardConfig& config,
                           const EpisodeBatches& episode, std::mt19937_64* dropout_rng = nullptr,
                           OuterPath path = OuterPath::Full);

// Validation loss and accuracy without any outer gradient.
TaskGradient evaluate_episode(const ParamSet& store, const ParameterPartition& part, const LeopardConfig& config,
                              const EpisodeBatches& episode);

std::map<std::string, std::vector<double>> sum_gradients(std::span<const TaskGradient> grads);

}  // namespace leopard::meta
