#pragma once

#include <cstdint>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "leopard/data/dataset.hpp"

namespace leopard::data {

// One meta-training draw from a single task.
struct Episode {
  std::string task;
  std::vector<Example> generation;               // k per label; generates the softmax
  std::vector<std::vector<Example>> adaptation;  // G batches, k per label each
  std::vector<Example> validation;               // queries per label, disjoint from generation
};

struct EpisodeShape {
  std::size_t k = 4;
  std::size_t adaptation_batches = 7;
  std::size_t queries_per_label = 0;  // 0 means k

  std::size_t queries() const { return queries_per_label == 0 ? k : queries_per_label; }
};

// Batches are drawn without replacement internally and with replacement
// across batches, except that validation examples never repeat a generation example.
Episode sample_episode(const TaskDataset& task, const EpisodeShape& shape, std::mt19937_64& rng);

enum class TaskSampling { SquareRoot, Uniform, Proportional };

TaskSampling parse_task_sampling(const std::string& s);
std::vector<double> task_probabilities(std::span<const std::size_t> sizes, TaskSampling sampling);
std::size_t sample_task(std::span<const std::size_t> sizes, std::mt19937_64& rng,
                        TaskSampling sampling = TaskSampling::SquareRoot);
const TaskDataset& sample_task(std::span<const TaskDataset> tasks, std::mt19937_64& rng,
                               TaskSampling sampling = TaskSampling::SquareRoot);

// k training examples per label, a pure function of (task, k, seed).
std::vector<Example> sample_kshot_train(const TaskDataset& task, std::size_t k, std::uint64_t seed);

}  // namespace leopard::data
