#pragma once

// Run profiles: INI files with sections [encoder], [leopard], [meta],
// [baseline], [finetune] and [eval]. Every key is optional; unknown sections
// or keys are errors.

#include <filesystem>
#include <string>
#include <vector>

#include "leopard/baselines/common.hpp"
#include "leopard/meta/trainer.hpp"

namespace leopard::harness {

struct FinetuneProfile {
  std::size_t leopard_epochs = 10;
  std::size_t epochs = 10;  // every Adam-based mode
  double full_lr = 3e-3;    // random-init and mtl-full
  double softmax_lr = 1e-2;
  double reuse_lr = 3e-3;
};

struct EvalProfile {
  std::vector<std::size_t> k = {4, 8, 16};
  std::size_t seeds = 10;
  std::vector<std::size_t> epoch_grid = {5, 10, 20, 50};  // candidates for --tune-on
};

struct Profile {
  meta::LeopardConfig leopard;
  meta::MetaConfig meta;
  baselines::BaselineConfig baseline;
  FinetuneProfile finetune;
  EvalProfile eval;

  // Encoding options shared by every method, derived from the encoder.
  data::EncodingOptions encoding() const;
  void validate() const;
};

Profile parse_profile(const std::string& text);
Profile load_profile(const std::filesystem::path& file);

}  // namespace leopard::harness
