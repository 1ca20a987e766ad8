#pragma once

// Prototypical network over the encoder's [CLS] features with squared
// euclidean distance.

#include <span>

#include "leopard/baselines/common.hpp"

namespace leopard::baselines {

struct PrototypeSet {
  Tensor means;  // N x d
  std::vector<std::string> classes;
};

// Class means of the embedding rows grouped by label. Every class in
// [0, classes.size()) needs at least one row.
PrototypeSet make_prototypes(const Tensor& embeddings, std::span<const int> labels,
                             const std::vector<std::string>& classes);

// Negative squared distances, queries x N.
Tensor proto_logits(const PrototypeSet& prototypes, const Tensor& queries);

// Softmax over negative squared distances for one query.
std::vector<double> proto_predict(const PrototypeSet& prototypes, std::span<const double> query);

// Cross-entropy of the query batch against prototypes of the support batch.
Tensor proto_loss(const ParamSet& params, const model::EncoderConfig& config, const data::EncodedBatch& support,
                  const data::EncodedBatch& queries, std::size_t classes, model::Forward fwd = {});

// One Adam step on a single episode. Returns the loss and query accuracy.
TrainStats proto_train_step(ParamSet& params, ad::Adam& adam, const model::EncoderConfig& config,
                            const data::EncodedBatch& support, const data::EncodedBatch& queries,
                            std::size_t classes, double lr, std::mt19937_64* dropout_rng = nullptr);

BaselineModel train_proto(const model::EncoderConfig& encoder, const BaselineConfig& config,
                          std::span<const data::TaskDataset> tasks, const data::Vocabulary& vocab,
                          std::vector<TrainStats>* log = nullptr);

// Prototypes from the encoded support; no parameter updates.
Predictor proto_predictor(const ParamSet& params, const model::EncoderConfig& config, const data::TaskSpec& task,
                          const std::vector<data::Example>& support, const data::Vocabulary& vocab,
                          const data::EncodingOptions& encoding);

}  // namespace leopard::baselines
