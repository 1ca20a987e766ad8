#include "leopard/model/encoder.hpp"

#include <fmt/format.h>

namespace leopard::model {

namespace {

Tensor linear(const ParamSet& p, const std::string& w, const std::string& b, const Tensor& x) {
  return ad::add_row(ad::matmul(x, lookup(p, w)), lookup(p, b));
}

Tensor maybe_dropout(const Tensor& x, double p, const Forward& fwd) {
  if (!fwd.rng || p <= 0.0) return x;
  return ad::dropout(x, p, *fwd.rng);
}

void add_linear(ParamSet& p, const std::string& w, const std::string& b, std::size_t in, std::size_t out,
                double std, std::mt19937_64& rng) {
  p[w] = truncated_normal({in, out}, std, rng);
  p[b] = Tensor::zeros({out}, true);
}

void add_layer_norm(ParamSet& p, const std::string& prefix, std::size_t d) {
  p[prefix + ".gamma"] = Tensor::full({d}, 1.0, true);
  p[prefix + ".beta"] = Tensor::zeros({d}, true);
}

}  // namespace

void EncoderConfig::validate() const {
  if (vocab_size <= static_cast<std::size_t>(data::kReservedCount) || max_len < 3 || layers == 0 || hidden == 0 ||
      heads == 0 || ff == 0) {
    throw std::invalid_argument("encoder dimensions must be positive (vocab > 4, max_len >= 3)");
  }
  if (hidden % heads != 0) {
    throw std::invalid_argument(fmt::format("hidden size {} is not divisible by {} heads", hidden, heads));
  }
  if (!(init_std > 0.0)) throw std::invalid_argument("init std must be positive");
  for (double p : {attention_dropout, hidden_dropout, cls_dropout}) {
    if (p < 0.0 || p >= 1.0) throw std::invalid_argument(fmt::format("dropout {} outside [0, 1)", p));
  }
}

nlohmann::json EncoderConfig::to_json() const {
  return {{"vocab_size", vocab_size},   {"max_len", max_len},
          {"layers", layers},           {"hidden", hidden},
          {"heads", heads},             {"ff", ff},
          {"attention_dropout", attention_dropout}, {"hidden_dropout", hidden_dropout},
          {"cls_dropout", cls_dropout}, {"init_std", init_std}};
}

EncoderConfig EncoderConfig::from_json(const nlohmann::json& j) {
  EncoderConfig c;
  c.vocab_size = j.at("vocab_size");
  c.max_len = j.at("max_len");
  c.layers = j.at("layers");
  c.hidden = j.at("hidden");
  c.heads = j.at("heads");
  c.ff = j.at("ff");
  c.attention_dropout = j.value("attention_dropout", 0.0);
  c.hidden_dropout = j.value("hidden_dropout", 0.0);
  c.cls_dropout = j.value("cls_dropout", 0.0);
  c.init_std = j.value("init_std", 0.02);
  c.validate();
  return c;
}

void init_encoder(ParamSet& p, const EncoderConfig& cfg, std::mt19937_64& rng) {
  cfg.validate();
  const std::size_t d = cfg.hidden;
  p["encoder.embeddings.token"] = truncated_normal({cfg.vocab_size, d}, cfg.init_std, rng);
  p["encoder.embeddings.position"] = truncated_normal({cfg.max_len, d}, cfg.init_std, rng);
  add_layer_norm(p, "encoder.embeddings.ln", d);
  for (std::size_t v = 1; v <= cfg.layers; ++v) {
    const std::string l = fmt::format("encoder.layer{}", v);
    for (const char* name : {"q", "k", "v", "o"}) {
      add_linear(p, fmt::format("{}.attn.w{}", l, name), fmt::format("{}.attn.b{}", l, name), d, d,
                 cfg.init_std, rng);
    }
    add_layer_norm(p, l + ".ln1", d);
    add_linear(p, l + ".ffn.w1", l + ".ffn.b1", d, cfg.ff, cfg.init_std, rng);
    add_linear(p, l + ".ffn.w2", l + ".ffn.b2", cfg.ff, d, cfg.init_std, rng);
    add_layer_norm(p, l + ".ln2", d);
  }
}

Tensor encode(const ParamSet& p, const EncoderConfig& cfg, const data::EncodedBatch& batch, Forward fwd) {
  const std::size_t b = batch.batch;
  if (b == 0) throw ad::ShapeError("encode: empty batch");
  if (batch.ids.size() != b * batch.seq_len) {
    throw ad::ShapeError(fmt::format("encode: {} ids for batch {} x {}", batch.ids.size(), b, batch.seq_len));
  }
  if (batch.seq_len > cfg.max_len) {
    throw ad::ShapeError(fmt::format("encode: sequence length {} exceeds max_len {}", batch.seq_len, cfg.max_len));
  }

  // Trailing columns that are padding in every sequence never influence the
  // output, so they are dropped before the forward pass.
  std::size_t s = 1;
  for (std::size_t i = 0; i < b; ++i) {
    for (std::size_t j = batch.seq_len; j > s; --j) {
      if (batch.ids[i * batch.seq_len + j - 1] != data::kPadId) {
        s = j;
        break;
      }
    }
  }

  std::vector<std::size_t> tokens(b * s), positions(b * s);
  std::vector<std::uint8_t> valid(b * s);
  for (std::size_t i = 0; i < b; ++i) {
    for (std::size_t j = 0; j < s; ++j) {
      const int id = batch.ids[i * batch.seq_len + j];
      if (id < 0 || static_cast<std::size_t>(id) >= cfg.vocab_size) {
        throw std::out_of_range(fmt::format("encode: token id {} outside vocabulary of {}", id, cfg.vocab_size));
      }
      tokens[i * s + j] = static_cast<std::size_t>(id);
      positions[i * s + j] = j;
      valid[i * s + j] = id != data::kPadId;
    }
  }

  Tensor x = ad::add(ad::select_rows(lookup(p, "encoder.embeddings.token"), std::span<const std::size_t>(tokens)),
                     ad::select_rows(lookup(p, "encoder.embeddings.position"),
                                     std::span<const std::size_t>(positions)));
  x = ad::layer_norm(x, lookup(p, "encoder.embeddings.ln.gamma"), lookup(p, "encoder.embeddings.ln.beta"));
  x = maybe_dropout(x, cfg.hidden_dropout, fwd);

  const ad::AttentionShape shape{b, s, cfg.heads};
  for (std::size_t v = 1; v <= cfg.layers; ++v) {
    const std::string l = fmt::format("encoder.layer{}", v);
    Tensor q = linear(p, l + ".attn.wq", l + ".attn.bq", x);
    Tensor k = linear(p, l + ".attn.wk", l + ".attn.bk", x);
    Tensor val = linear(p, l + ".attn.wv", l + ".attn.bv", x);
    if (fwd.attention_maps) fwd.attention_maps->push_back(ad::attention_probabilities(q, k, valid, shape));
    Tensor a = ad::attention(q, k, val, valid, shape, fwd.rng ? cfg.attention_dropout : 0.0, fwd.rng);
    Tensor o = maybe_dropout(linear(p, l + ".attn.wo", l + ".attn.bo", a), cfg.hidden_dropout, fwd);
    x = ad::layer_norm(ad::add(x, o), lookup(p, l + ".ln1.gamma"), lookup(p, l + ".ln1.beta"));
    Tensor f = ad::gelu(linear(p, l + ".ffn.w1", l + ".ffn.b1", x));
    f = maybe_dropout(linear(p, l + ".ffn.w2", l + ".ffn.b2", f), cfg.hidden_dropout, fwd);
    x = ad::layer_norm(ad::add(x, f), lookup(p, l + ".ln2.gamma"), lookup(p, l + ".ln2.beta"));
  }

  std::vector<std::size_t> cls(b);
  for (std::size_t i = 0; i < b; ++i) cls[i] = i * s;
  Tensor h = ad::select_rows(x, std::span<const std::size_t>(cls));
  return maybe_dropout(h, cfg.cls_dropout, fwd);
}

void init_mlp(ParamSet& p, const std::string& prefix, std::size_t in, std::size_t hidden, std::size_t out,
              std::mt19937_64& rng, double std) {
  add_linear(p, prefix + ".w1", prefix + ".b1", in, hidden, std, rng);
  add_linear(p, prefix + ".w2", prefix + ".b2", hidden, out, std, rng);
}

Tensor mlp(const ParamSet& p, const std::string& prefix, const Tensor& x, bool output_tanh) {
  Tensor hidden = ad::tanh(linear(p, prefix + ".w1", prefix + ".b1", x));
  Tensor out = linear(p, prefix + ".w2", prefix + ".b2", hidden);
  return output_tanh ? ad::tanh(out) : out;
}

}  // namespace leopard::model
