#include "leopard/autodiff/optim.hpp"

#include <cmath>

#include <fmt/format.h>

#include "leopard/autodiff/checkpoint.hpp"

namespace leopard::ad {

void Adam::step(const std::string& path, Tensor& param, std::span<const double> grad, double lr) {
  if (grad.size() != param.size()) {
    throw ShapeError(fmt::format("adam: gradient of {} values for {} of shape {}", grad.size(), path,
                                 to_string(param.shape())));
  }
  State& s = state_[path];
  if (s.m.empty()) {
    s.m.assign(param.size(), 0.0);
    s.v.assign(param.size(), 0.0);
  }
  s.t += 1;
  const double c1 = 1.0 - std::pow(config_.beta1, static_cast<double>(s.t));
  const double c2 = 1.0 - std::pow(config_.beta2, static_cast<double>(s.t));
  auto values = param.mutable_values();
  for (std::size_t i = 0; i < values.size(); ++i) {
    s.m[i] = config_.beta1 * s.m[i] + (1.0 - config_.beta1) * grad[i];
    s.v[i] = config_.beta2 * s.v[i] + (1.0 - config_.beta2) * grad[i] * grad[i];
    const double mhat = s.m[i] / c1;
    const double vhat = s.v[i] / c2;
    values[i] -= lr * mhat / (std::sqrt(vhat) + config_.eps);
  }
}

std::uint64_t Adam::steps(const std::string& path) const {
  auto it = state_.find(path);
  return it == state_.end() ? 0 : it->second.t;
}

void Adam::save(Checkpoint& ckpt) const {
  for (const auto& [path, s] : state_) {
    ckpt.put("optim.m." + path, {s.m.size()}, s.m);
    ckpt.put("optim.v." + path, {s.v.size()}, s.v);
    ckpt.put("optim.t." + path, {1}, {static_cast<double>(s.t)});
  }
}

void Adam::load(const Checkpoint& ckpt) {
  state_.clear();
  const std::string prefix = "optim.t.";
  for (const auto& [key, entry] : ckpt.entries()) {
    if (key.rfind(prefix, 0) != 0) continue;
    const std::string path = key.substr(prefix.size());
    State s;
    s.t = static_cast<std::uint64_t>(entry.values.at(0));
    s.m = ckpt.get("optim.m." + path).values;
    s.v = ckpt.get("optim.v." + path).values;
    state_[path] = std::move(s);
  }
}

}  // namespace leopard::ad
