#include "leopard/harness/evaluate.hpp"

#include <cmath>
#include <cstdlib>
#include <exception>
#include <istream>
#include <numeric>
#include <ostream>
#include <sstream>
#include <thread>

#include <fmt/format.h>

#include "leopard/autodiff/checkpoint.hpp"

namespace leopard::harness {

double sample_std(std::span<const double> v) {
  if (v.size() < 2) return 0.0;
  const double mean = std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
  double ss = 0.0;
  for (double x : v) ss += (x - mean) * (x - mean);
  return std::sqrt(ss / static_cast<double>(v.size() - 1));
}

EvalReport EvalReport::aggregate(std::string task, std::string method, std::size_t k, std::vector<double> accs) {
  EvalReport r;
  r.task = std::move(task);
  r.method = std::move(method);
  r.k = k;
  r.seed_accs = std::move(accs);
  if (!r.seed_accs.empty()) {
    r.mean = std::accumulate(r.seed_accs.begin(), r.seed_accs.end(), 0.0) / static_cast<double>(r.seed_accs.size());
  }
  r.std = sample_std(r.seed_accs);
  return r;
}

void EvalReport::validate() const {
  for (double a : seed_accs) {
    if (!(a >= 0.0 && a <= 1.0)) throw std::invalid_argument(fmt::format("accuracy {} outside [0, 1]", a));
  }
  const auto again = aggregate(task, method, k, seed_accs);
  if (std::abs(again.mean - mean) > 1e-9 || std::abs(again.std - std) > 1e-9) {
    throw std::invalid_argument(fmt::format("report {}/{}/k={} aggregates do not match its accuracies", task, method, k));
  }
}

nlohmann::json SeedDetail::to_json() const {
  return {{"task", task},         {"method", method},   {"k", k},
          {"seed", seed},         {"accuracy", accuracy}, {"correct", correct},
          {"total", total},       {"support_digest", support_digest}};
}

std::string support_digest(const std::vector<data::Example>& support) {
  std::string bytes;
  for (const auto& ex : support) {
    nlohmann::json j{{"text", ex.text}, {"label", ex.label}};
    if (ex.text_pair) j["text_pair"] = *ex.text_pair;
    bytes += j.dump();
    bytes += '\n';
  }
  return fmt::format("{:016x}", ad::fnv1a64(bytes));
}

EvalReport kshot_evaluate(const Method& method, const data::TaskDataset& task, std::size_t k,
                          const data::Vocabulary& vocab, const KshotOptions& options,
                          std::vector<SeedDetail>* details) {
  if (task.test.empty()) throw data::DataError(fmt::format("task '{}' has no test split", task.spec.name));
  if (options.seeds == 0) throw std::invalid_argument("k-shot evaluation needs at least one seed");
  const auto test = data::make_batch(task.test, task.spec, vocab, options.encoding);

  std::vector<SeedDetail> rows(options.seeds);
  std::vector<std::exception_ptr> errors(options.seeds);
  auto run = [&](std::size_t start, std::size_t stride) {
    for (std::size_t s = start; s < options.seeds; s += stride) {
      try {
        const auto support = data::sample_kshot_train(task, k, s);
        const auto predictor = method.fit(task.spec, support, s);
        const auto pred = predictor.predict(test);
        std::size_t ok = 0;
        for (std::size_t i = 0; i < pred.size(); ++i) ok += pred[i] == test.labels[i];
        rows[s] = SeedDetail{task.spec.name, method.name, k, s, static_cast<double>(ok) / static_cast<double>(pred.size()),
                             ok, pred.size(), support_digest(support)};
      } catch (...) {
        errors[s] = std::current_exception();
      }
    }
  };
  const std::size_t t = std::min(std::max<std::size_t>(options.threads, 1), options.seeds);
  if (t == 1) {
    run(0, 1);
  } else {
    std::vector<std::thread> pool;
    for (std::size_t w = 0; w < t; ++w) pool.emplace_back(run, w, t);
    for (auto& th : pool) th.join();
  }
  for (std::size_t s = 0; s < errors.size(); ++s) {
    if (!errors[s]) continue;
    try {
      std::rethrow_exception(errors[s]);
    } catch (const std::exception& e) {
      throw std::runtime_error(fmt::format("{} on {} (k={}, seed {}): {}", method.name, task.spec.name, k, s, e.what()));
    }
  }

  std::vector<double> accs;
  for (const auto& r : rows) accs.push_back(r.accuracy);
  if (details) details->insert(details->end(), rows.begin(), rows.end());
  return EvalReport::aggregate(task.spec.name, method.name, k, std::move(accs));
}

void write_csv_header(std::ostream& out) { out << "task,method,k,mean,std,seed_accs\n"; }

void write_csv_row(std::ostream& out, const EvalReport& r) {
  out << fmt::format("{},{},{},{},{},{}\n", r.task, r.method, r.k, r.mean, r.std,
                     fmt::join(r.seed_accs, ";"));
}

std::vector<EvalReport> read_csv(std::istream& in) {
  std::vector<EvalReport> out;
  std::string line;
  if (!std::getline(in, line) || line != "task,method,k,mean,std,seed_accs") {
    throw data::DataError("CSV report is missing its header");
  }
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::vector<std::string> cols;
    std::stringstream ss(line);
    std::string c;
    while (std::getline(ss, c, ',')) cols.push_back(c);
    if (cols.size() != 6) throw data::DataError(fmt::format("CSV row has {} columns: {}", cols.size(), line));
    EvalReport r;
    r.task = cols[0];
    r.method = cols[1];
    r.k = std::stoul(cols[2]);
    r.mean = std::stod(cols[3]);
    r.std = std::stod(cols[4]);
    std::stringstream accs(cols[5]);
    while (std::getline(accs, c, ';')) r.seed_accs.push_back(std::stod(c));
    out.push_back(std::move(r));
  }
  return out;
}

std::size_t thread_count(std::size_t fallback) {
  const char* env = std::getenv("LEOPARD_THREADS");
  if (!env || !*env) return fallback;
  char* end = nullptr;
  const long v = std::strtol(env, &end, 10);
  if (*end != '\0' || v <= 0) throw std::invalid_argument(fmt::format("LEOPARD_THREADS='{}' is not a positive integer", env));
  return static_cast<std::size_t>(v);
}

std::size_t tune_epochs(std::span<const std::size_t> grid, std::span<const data::TaskDataset> tasks, std::size_t k,
                        const data::Vocabulary& vocab, const KshotOptions& options,
                        const std::function<Method(std::size_t)>& make) {
  if (grid.empty()) throw std::invalid_argument("empty epoch grid");
  if (tasks.empty()) throw std::invalid_argument("epoch tuning needs at least one task");
  std::size_t best = grid[0];
  double best_acc = -1.0;
  for (std::size_t epochs : grid) {
    const Method m = make(epochs);
    double acc = 0.0;
    for (const auto& t : tasks) acc += kshot_evaluate(m, t, k, vocab, options).mean;
    acc /= static_cast<double>(tasks.size());
    if (acc > best_acc) {
      best_acc = acc;
      best = epochs;
    }
  }
  return best;
}

nlohmann::json LotoResult::to_json() const {
  return {{"held_out", held_out}, {"targets", targets},   {"baseline", baseline},
          {"accuracy", accuracy}, {"relative", relative}};
}

LotoResult leave_one_task_out(std::span<const data::TaskDataset> train, std::span<const data::TaskDataset> targets,
                              const TrainFn& train_fn, std::size_t k, const data::Vocabulary& vocab,
                              const KshotOptions& options) {
  if (train.size() < 2) throw std::invalid_argument("leave-one-task-out needs at least two training tasks");
  LotoResult r;
  for (const auto& t : targets) r.targets.push_back(t.spec.name);
  auto score = [&](const Method& m) {
    std::vector<double> accs;
    for (const auto& t : targets) accs.push_back(kshot_evaluate(m, t, k, vocab, options).mean);
    return accs;
  };
  r.baseline = score(train_fn(train));
  for (std::size_t i = 0; i < train.size(); ++i) {
    std::vector<data::TaskDataset> kept;
    for (std::size_t j = 0; j < train.size(); ++j) {
      if (j != i) kept.push_back(train[j]);
    }
    r.held_out.push_back(train[i].spec.name);
    r.accuracy.push_back(score(train_fn(kept)));
    std::vector<double> rel;
    for (std::size_t t = 0; t < targets.size(); ++t) {
      const double base = r.baseline[t];
      rel.push_back(base == 0.0 ? 0.0 : (r.accuracy.back()[t] - base) / base);
    }
    r.relative.push_back(std::move(rel));
  }
  return r;
}

void write_loto_csv(std::ostream& out, const LotoResult& r) {
  out << "held_out," << fmt::format("{}", fmt::join(r.targets, ",")) << '\n';
  out << "all," << fmt::format("{:.6f}", fmt::join(r.baseline, ",")) << '\n';
  for (std::size_t i = 0; i < r.held_out.size(); ++i) {
    out << r.held_out[i] << ',' << fmt::format("{:.6f}", fmt::join(r.relative[i], ",")) << '\n';
  }
}

}  // namespace leopard::harness
