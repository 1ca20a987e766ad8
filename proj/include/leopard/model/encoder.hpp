#pragma once

// Post-LN transformer text encoder f_theta, plus the small two-layer MLPs used
// by the projection h_phi and the softmax generator g_psi.
//
// Parameter paths:
//   encoder.embeddings.{token,position,ln.gamma,ln.beta}      layer 0
//   encoder.layer<v>.attn.{wq,bq,wk,bk,wv,bv,wo,bo}           layer v = 1..L
//   encoder.layer<v>.{ln1,ln2}.{gamma,beta}
//   encoder.layer<v>.ffn.{w1,b1,w2,b2}
//   <prefix>.{w1,b1,w2,b2}                                    MLPs

#include <cstdint>
#include <random>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "leopard/data/dataset.hpp"
#include "leopard/model/params.hpp"

namespace leopard::model {

struct EncoderConfig {
  std::size_t vocab_size = 200;
  std::size_t max_len = 32;
  std::size_t layers = 4;
  std::size_t hidden = 64;
  std::size_t heads = 4;
  std::size_t ff = 128;
  double attention_dropout = 0.0;
  double hidden_dropout = 0.0;
  double cls_dropout = 0.0;
  double init_std = 0.02;  // truncated-normal std of every weight and embedding

  void validate() const;
  nlohmann::json to_json() const;
  static EncoderConfig from_json(const nlohmann::json& j);
};

// Dropout is active only when rng is set.
struct Forward {
  std::mt19937_64* rng = nullptr;
  // When set, receives one attention-probability map per layer, laid out
  // [batch][head][query][key].
  std::vector<std::vector<double>>* attention_maps = nullptr;
};

void init_encoder(ParamSet& params, const EncoderConfig& config, std::mt19937_64& rng);

// Final-layer hidden state at the [CLS] position for each sequence: batch x d.
Tensor encode(const ParamSet& params, const EncoderConfig& config, const data::EncodedBatch& batch,
              Forward fwd = {});

// Two layers: tanh(x W1 + b1) W2 + b2, with an optional tanh on the output.
void init_mlp(ParamSet& params, const std::string& prefix, std::size_t in, std::size_t hidden, std::size_t out,
              std::mt19937_64& rng, double std = 0.02);
Tensor mlp(const ParamSet& params, const std::string& prefix, const Tensor& x, bool output_tanh = false);

inline constexpr const char* kProjection = "projection";
inline constexpr const char* kGenerator = "generator";

// h_phi: d -> l.
inline Tensor project(const ParamSet& params, const Tensor& h) { return mlp(params, kProjection, h); }

}  // namespace leopard::model
