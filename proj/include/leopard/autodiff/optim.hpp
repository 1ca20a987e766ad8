#pragma once

#include <cstdint>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "leopard/autodiff/tensor.hpp"

namespace leopard::ad {

class Checkpoint;

struct AdamConfig {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

// Adam with per-parameter state keyed by parameter path. A parameter that is
// not passed to step() keeps both its values and its moment estimates, so
// parameters untouched by a minibatch (e.g. another task's head) stay frozen.
class Adam {
 public:
  explicit Adam(AdamConfig config = {}) : config_(config) {}

  void step(const std::string& path, Tensor& param, std::span<const double> grad, double lr);

  std::uint64_t steps(const std::string& path) const;
  void clear() { state_.clear(); }

  // Moments are stored as "optim.m.<path>", "optim.v.<path>" and "optim.t.<path>".
  void save(Checkpoint& ckpt) const;
  void load(const Checkpoint& ckpt);

 private:
  struct State {
    std::vector<double> m;
    std::vector<double> v;
    std::uint64_t t = 0;
  };
  AdamConfig config_;
  std::map<std::string, State> state_;
};

}  // namespace leopard::ad
