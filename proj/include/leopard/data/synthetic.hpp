#pragma once

// Marker-token task distribution used for desk-scale benchmarks.
//
// Each task picks N distinct marker tokens; an example is a run of random
// filler tokens with exactly one of the task's markers inserted, labeled by
// that marker. No two tasks share a label set, so validation and test tasks
// are unseen label combinations. With held_out_markers > 0, that many marker
// tokens are reserved for validation and test tasks and never appear in
// training tasks.

#include <cstdint>
#include <filesystem>
#include <vector>

#include "leopard/data/dataset.hpp"
#include "leopard/data/vocabulary.hpp"

namespace leopard::data {

struct MarkerConfig {
  std::size_t vocab_size = 200;  // including the 4 reserved ids
  std::size_t markers = 24;
  std::size_t held_out_markers = 0;
  std::size_t train_tasks = 30;
  std::size_t validation_tasks = 4;
  std::size_t test_tasks = 20;
  std::size_t min_labels = 2;
  std::size_t max_labels = 3;
  std::size_t sequence_tokens = 8;
  std::size_t train_per_label = 40;
  std::size_t test_per_label = 50;
  std::uint64_t seed = 0;
};

struct MarkerBenchmark {
  Vocabulary vocab;
  std::vector<TaskDataset> train;
  std::vector<TaskDataset> validation;
  std::vector<TaskDataset> test;
};

MarkerBenchmark make_marker_benchmark(const MarkerConfig& config);

// Writes vocab.txt, manifest.json and one JSONL file per task split into dir.
void write_benchmark(const MarkerBenchmark& bench, const std::filesystem::path& dir);

}  // namespace leopard::data
