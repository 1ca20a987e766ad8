#pragma once

#include <cstdint>
#include <map>
#include <string>

#include "leopard/meta/leopard.hpp"

namespace leopard::meta {

struct GradcheckOptions {
  std::uint64_t seed = 0;
  double h = 1e-5;
  // Denominator floor of the relative error |a - n| / max(|a|, |n|, floor).
  double floor = 1e-6;
  std::size_t nu = 0;
};

struct GradcheckReport {
  std::map<std::string, double> group_error;  // worst relative error per parameter group
  double max_error = 0.0;
  std::size_t checked = 0;
  double seconds = 0.0;
};

// L = 2, d = 16, l = 8, dropout off.
LeopardConfig tiny_config();

// A random 3-way episode with k = 2 and G = 2 over the tiny vocabulary.
EpisodeBatches tiny_episode(std::uint64_t seed);

// Compares the analytic validation-loss gradient of every store entry with
// central differences of the first-order objective: the validation loss of
// Phi^(0) - sum_s alpha * g_s with each step gradient g_s held at its value
// at the unperturbed point.
GradcheckReport gradcheck(const GradcheckOptions& options = {});

std::string parameter_group(const std::string& path);

}  // namespace leopard::meta
