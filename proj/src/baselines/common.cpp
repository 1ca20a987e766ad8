#include "leopard/baselines/common.hpp"

#include <fmt/format.h>


namespace leopard::baselines {

std::vector<double> Predictor::probabilities(const data::EncodedBatch& batch) const {
  Tensor l = logits(batch);
  return ad::softmax_rows(l.values(), l.cols());
}

std::vector<int> Predictor::predict(const data::EncodedBatch& batch) const {
  Tensor l = logits(batch);
  return model::argmax_rows(l.values(), l.cols());
}

void BaselineConfig::validate() const {
  if (!(lr >= 0.0)) throw std::invalid_argument("learning rate must be non-negative");
  if (k == 0 || batch_size == 0) throw std::invalid_argument("k and batch size must be positive");
  if (warmup_fraction < 0.0 || warmup_fraction > 1.0) throw std::invalid_argument("warm-up fraction outside [0, 1]");
}

nlohmann::json BaselineConfig::to_json() const {
  return {{"steps", steps},         {"lr", lr},
          {"warmup_fraction", warmup_fraction}, {"k", k},
          {"queries_per_label", queries_per_label}, {"batch_size", batch_size},
          {"seed", seed},           {"dropout", dropout},
          {"max_len", encoding.max_len}, {"lowercase", encoding.lowercase}};
}

double BaselineConfig::lr_at(std::size_t step) const {
  const double warm = warmup_fraction * static_cast<double>(steps);
  if (warm <= 0.0 || static_cast<double>(step) >= warm) return lr;
  return lr * static_cast<double>(step + 1) / warm;
}

namespace {

std::string model_hash(const nlohmann::json& encoder, const nlohmann::json& heads) {
  return fmt::format("{:016x}", ad::fnv1a64(nlohmann::json{{"encoder", encoder}, {"heads", heads}}.dump()));
}

}  // namespace

ad::Checkpoint make_checkpoint(const BaselineModel& m) {
  ad::Checkpoint ckpt;
  const nlohmann::json encoder = m.encoder.to_json();
  const nlohmann::json heads = m.head_labels;
  ckpt.header["kind"] = m.kind;
  ckpt.header["encoder"] = encoder;
  ckpt.header["heads"] = heads;
  ckpt.header["config_hash"] = model_hash(encoder, heads);
  ckpt.header["seed"] = m.seed;
  model::save_params(ckpt, m.params);
  return ckpt;
}

BaselineModel load_baseline(const ad::Checkpoint& ckpt) {
  BaselineModel m;
  m.kind = ckpt.header.value("kind", std::string());
  if (m.kind != "proto" && m.kind != "mtl" && m.kind != "init") {
    throw ad::CheckpointError(fmt::format("checkpoint kind '{}' is not a baseline model", m.kind));
  }
  const nlohmann::json heads = ckpt.header.value("heads", nlohmann::json::object());
  if (ckpt.header.value("config_hash", std::string()) != model_hash(ckpt.header.at("encoder"), heads)) {
    throw ad::CheckpointError("checkpoint config hash does not match its config");
  }
  m.encoder = model::EncoderConfig::from_json(ckpt.header.at("encoder"));
  m.head_labels = heads.get<std::map<std::string, std::vector<std::string>>>();
  m.seed = ckpt.header.value("seed", std::uint64_t{0});
  model::load_params(ckpt, m.params);
  return m;
}

}  // namespace leopard::baselines
