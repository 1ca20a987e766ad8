#include "leopard/model/params.hpp"

#include <charconv>

#include <fmt/format.h>

namespace leopard::model {

bool has_prefix(const std::string& path, const std::string& prefix) {
  return path.compare(0, prefix.size(), prefix) == 0;
}

std::optional<int> encoder_layer(const std::string& path) {
  if (has_prefix(path, "encoder.embeddings.")) return 0;
  const std::string layer = "encoder.layer";
  if (!has_prefix(path, layer)) return std::nullopt;
  const char* begin = path.data() + layer.size();
  const char* end = path.data() + path.size();
  int v = 0;
  auto [ptr, ec] = std::from_chars(begin, end, v);
  if (ec != std::errc() || ptr == begin || ptr == end || *ptr != '.' || v < 1) return std::nullopt;
  return v;
}

ParamSet shadow(const ParamSet& params) {
  ParamSet out;
  for (const auto& [path, t] : params) out.emplace(path, ad::as_leaf(t));
  return out;
}

ParamSet detached(const ParamSet& params) {
  ParamSet out;
  for (const auto& [path, t] : params) out.emplace(path, ad::detach(t));
  return out;
}

ParamSet deep_copy(const ParamSet& params, bool requires_grad) {
  ParamSet out;
  for (const auto& [path, t] : params) out.emplace(path, t.clone(requires_grad));
  return out;
}

const Tensor& lookup(const ParamSet& params, const std::string& path) {
  auto it = params.find(path);
  if (it == params.end()) throw std::out_of_range(fmt::format("missing parameter '{}'", path));
  return it->second;
}

Tensor truncated_normal(ad::Shape shape, double stddev, std::mt19937_64& rng) {
  std::normal_distribution<double> n(0.0, 1.0);
  std::vector<double> v(ad::element_count(shape));
  for (double& x : v) {
    double z;
    do {
      z = n(rng);
    } while (std::abs(z) > 2.0);
    x = z * stddev;
  }
  return Tensor::from(std::move(shape), std::move(v), true);
}

void save_params(ad::Checkpoint& ckpt, const ParamSet& params) {
  for (const auto& [path, t] : params) ckpt.put(path, t);
}

void load_params(const ad::Checkpoint& ckpt, ParamSet& params, const std::string& prefix) {
  for (const auto& [path, entry] : ckpt.entries()) {
    if (!has_prefix(path, prefix) || has_prefix(path, "optim.")) continue;
    auto it = params.find(path);
    if (it == params.end()) {
      params.emplace(path, Tensor::from(entry.shape, entry.values, true));
    } else {
      ckpt.restore(path, it->second);
    }
  }
}

}  // namespace leopard::model
