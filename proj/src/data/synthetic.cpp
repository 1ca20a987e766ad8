#include "leopard/data/synthetic.hpp"

#include <algorithm>
#include <random>
#include <set>

#include <fmt/format.h>

namespace leopard::data {

namespace {

std::vector<Example> make_examples(const std::vector<std::string>& markers, const std::vector<std::string>& fillers,
                                   std::size_t per_label, std::size_t length, std::mt19937_64& rng) {
  std::uniform_int_distribution<std::size_t> filler(0, fillers.size() - 1);
  std::uniform_int_distribution<std::size_t> position(0, length - 1);
  std::vector<Example> out;
  for (std::size_t i = 0; i < per_label; ++i) {
    for (const auto& marker : markers) {
      std::vector<std::string> tokens(length);
      for (auto& t : tokens) t = fillers[filler(rng)];
      tokens[position(rng)] = marker;
      out.push_back(Example{fmt::format("{}", fmt::join(tokens, " ")), std::nullopt, marker});
    }
  }
  return out;
}

std::vector<TaskDataset> make_tasks(const std::string& prefix, std::size_t count,
                                    const std::vector<std::string>& pool, const std::vector<std::string>& fillers,
                                    const MarkerConfig& cfg, bool with_test, std::set<std::set<std::string>>& used,
                                    std::mt19937_64& rng) {
  std::uniform_int_distribution<std::size_t> n_labels(cfg.min_labels, cfg.max_labels);
  std::vector<TaskDataset> out;
  for (std::size_t t = 0; t < count; ++t) {
    std::vector<std::string> markers;
    for (std::size_t attempt = 0;; ++attempt) {
      if (attempt == 1000) throw std::invalid_argument(fmt::format("cannot draw a new label set for {}{:02}", prefix, t));
      const std::size_t n = n_labels(rng);
      if (n > pool.size()) throw std::invalid_argument("marker pool smaller than the label count");
      markers = pool;
      std::shuffle(markers.begin(), markers.end(), rng);
      markers.resize(n);
      if (used.insert(std::set<std::string>(markers.begin(), markers.end())).second) break;
    }
    TaskDataset task;
    task.spec.name = fmt::format("{}{:02}", prefix, t);
    task.spec.kind = InputKind::Single;
    task.spec.labels = markers;
    task.train = make_examples(markers, fillers, cfg.train_per_label, cfg.sequence_tokens, rng);
    if (with_test) task.test = make_examples(markers, fillers, cfg.test_per_label, cfg.sequence_tokens, rng);
    out.push_back(std::move(task));
  }
  return out;
}

}  // namespace

MarkerBenchmark make_marker_benchmark(const MarkerConfig& cfg) {
  const std::size_t words = cfg.vocab_size - kReservedCount;
  if (cfg.markers >= words) throw std::invalid_argument("marker pool leaves no filler tokens");
  if (cfg.held_out_markers >= cfg.markers) throw std::invalid_argument("held-out markers leave no training markers");
  if (cfg.min_labels < 2 || cfg.max_labels < cfg.min_labels) throw std::invalid_argument("bad label count range");

  std::mt19937_64 rng(cfg.seed);
  std::vector<std::string> tokens;
  for (std::size_t i = 0; i < words; ++i) tokens.push_back(fmt::format("w{}", i));
  MarkerBenchmark bench;
  bench.vocab = Vocabulary::from_tokens(tokens);

  std::shuffle(tokens.begin(), tokens.end(), rng);
  auto take = [&, offset = std::size_t{0}](std::size_t n) mutable {
    std::vector<std::string> out(tokens.begin() + static_cast<long>(offset),
                                 tokens.begin() + static_cast<long>(offset + n));
    offset += n;
    return out;
  };
  const auto train_pool = take(cfg.markers - cfg.held_out_markers);
  const auto held_out = take(cfg.held_out_markers);
  const auto fillers = take(words - cfg.markers);
  const auto& eval_pool = held_out.empty() ? train_pool : held_out;

  std::set<std::set<std::string>> used;
  bench.train = make_tasks("train", cfg.train_tasks, train_pool, fillers, cfg, false, used, rng);
  bench.validation = make_tasks("val", cfg.validation_tasks, eval_pool, fillers, cfg, true, used, rng);
  bench.test = make_tasks("test", cfg.test_tasks, eval_pool, fillers, cfg, true, used, rng);
  return bench;
}

void write_benchmark(const MarkerBenchmark& bench, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir / "tasks");
  bench.vocab.save(dir / "vocab.txt");
  Manifest m;
  m.vocab = dir / "vocab.txt";
  auto emit = [&](const std::vector<TaskDataset>& tasks, std::vector<TaskSpec>& dst) {
    for (const auto& t : tasks) {
      TaskSpec spec = t.spec;
      spec.train_path = (dir / "tasks" / (t.spec.name + ".train.jsonl")).string();
      write_jsonl(spec.train_path, t.train);
      if (!t.test.empty()) {
        spec.test_path = (dir / "tasks" / (t.spec.name + ".test.jsonl")).string();
        write_jsonl(spec.test_path, t.test);
      }
      dst.push_back(std::move(spec));
    }
  };
  emit(bench.train, m.train);
  emit(bench.validation, m.validation);
  emit(bench.test, m.test);
  save_manifest(dir / "manifest.json", m);
}

}  // namespace leopard::data
