#include "leopard/data/sampling.hpp"

#include <cmath>
#include <numeric>
#include <unordered_set>

#include <fmt/format.h>

namespace leopard::data {

namespace {

std::vector<std::vector<std::size_t>> partition_by_label(const TaskDataset& task) {
  std::vector<std::vector<std::size_t>> by_label(task.spec.labels.size());
  for (std::size_t i = 0; i < task.train.size(); ++i) {
    by_label[static_cast<std::size_t>(task.spec.label_index(task.train[i].label))].push_back(i);
  }
  return by_label;
}

std::vector<std::size_t> draw(std::vector<std::size_t> pool, std::size_t n, std::mt19937_64& rng) {
  for (std::size_t i = 0; i < n; ++i) {
    std::uniform_int_distribution<std::size_t> pick(i, pool.size() - 1);
    std::swap(pool[i], pool[pick(rng)]);
  }
  pool.resize(n);
  return pool;
}

void require_available(const TaskDataset& task, const std::vector<std::vector<std::size_t>>& by_label,
                       std::size_t needed, const char* what) {
  for (std::size_t l = 0; l < by_label.size(); ++l) {
    if (by_label[l].size() < needed) {
      throw DataError(fmt::format("task {}: label '{}' has {} {} examples, need {}", task.spec.name,
                                  task.spec.labels[l], by_label[l].size(), what, needed));
    }
  }
}

std::vector<Example> balanced_batch(const TaskDataset& task, const std::vector<std::vector<std::size_t>>& by_label,
                                    std::size_t k, std::mt19937_64& rng, std::vector<std::size_t>* taken = nullptr) {
  std::vector<Example> out;
  out.reserve(k * by_label.size());
  for (const auto& pool : by_label) {
    for (std::size_t idx : draw(pool, k, rng)) {
      out.push_back(task.train[idx]);
      if (taken) taken->push_back(idx);
    }
  }
  return out;
}

}  // namespace

Episode sample_episode(const TaskDataset& task, const EpisodeShape& shape, std::mt19937_64& rng) {
  if (shape.k == 0) throw std::invalid_argument("episode k must be positive");
  auto by_label = partition_by_label(task);
  require_available(task, by_label, shape.k, "training");

  Episode ep;
  ep.task = task.spec.name;
  std::vector<std::size_t> generation_idx;
  ep.generation = balanced_batch(task, by_label, shape.k, rng, &generation_idx);
  for (std::size_t g = 0; g < shape.adaptation_batches; ++g) {
    ep.adaptation.push_back(balanced_batch(task, by_label, shape.k, rng));
  }

  std::unordered_set<std::size_t> used(generation_idx.begin(), generation_idx.end());
  std::vector<std::vector<std::size_t>> remaining(by_label.size());
  for (std::size_t l = 0; l < by_label.size(); ++l) {
    for (std::size_t idx : by_label[l]) {
      if (!used.count(idx)) remaining[l].push_back(idx);
    }
  }
  require_available(task, remaining, shape.queries(), "held-out validation");
  ep.validation = balanced_batch(task, remaining, shape.queries(), rng);
  return ep;
}

TaskSampling parse_task_sampling(const std::string& s) {
  if (s == "sqrt" || s == "square_root" || s == "squareroot") return TaskSampling::SquareRoot;
  if (s == "uniform") return TaskSampling::Uniform;
  if (s == "proportional") return TaskSampling::Proportional;
  throw std::invalid_argument(fmt::format("unknown task sampling '{}'", s));
}

std::vector<double> task_probabilities(std::span<const std::size_t> sizes, TaskSampling sampling) {
  if (sizes.empty()) throw std::invalid_argument("cannot sample from an empty task list");
  std::vector<double> w(sizes.size());
  for (std::size_t i = 0; i < sizes.size(); ++i) {
    if (sizes[i] == 0) throw std::invalid_argument("task sizes must be positive");
    const double s = static_cast<double>(sizes[i]);
    w[i] = sampling == TaskSampling::SquareRoot ? std::sqrt(s) : sampling == TaskSampling::Uniform ? 1.0 : s;
  }
  const double total = std::accumulate(w.begin(), w.end(), 0.0);
  for (double& x : w) x /= total;
  return w;
}

std::size_t sample_task(std::span<const std::size_t> sizes, std::mt19937_64& rng, TaskSampling sampling) {
  auto probs = task_probabilities(sizes, sampling);
  std::discrete_distribution<std::size_t> dist(probs.begin(), probs.end());
  return dist(rng);
}

const TaskDataset& sample_task(std::span<const TaskDataset> tasks, std::mt19937_64& rng, TaskSampling sampling) {
  std::vector<std::size_t> sizes;
  sizes.reserve(tasks.size());
  for (const auto& t : tasks) sizes.push_back(t.size());
  return tasks[sample_task(sizes, rng, sampling)];
}

std::vector<Example> sample_kshot_train(const TaskDataset& task, std::size_t k, std::uint64_t seed) {
  if (k == 0) throw std::invalid_argument("k must be positive");
  auto by_label = partition_by_label(task);
  require_available(task, by_label, k, "training");
  std::mt19937_64 rng(seed);
  return balanced_batch(task, by_label, k, rng);
}

}  // namespace leopard::data
