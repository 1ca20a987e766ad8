#pragma once

// k-shot evaluation protocol, report formats, validation-task epoch tuning
// and the leave-one-task-out study.
//
// CSV columns: task,method,k,mean,std,seed_accs where seed_accs holds the
// per-seed accuracies separated by ';'. JSONL detail lines carry task,
// method, k, seed, accuracy, correct, total and support_digest.

#include <functional>
#include <iosfwd>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "leopard/baselines/common.hpp"

namespace leopard::harness {

struct EvalReport {
  std::string task;
  std::string method;
  std::size_t k = 0;
  std::vector<double> seed_accs;
  double mean = 0.0;
  double std = 0.0;  // sample standard deviation; 0 for a single seed

  static EvalReport aggregate(std::string task, std::string method, std::size_t k, std::vector<double> accs);
  // Checks accuracies lie in [0, 1] and the aggregates match the stored values.
  void validate() const;
};

double sample_std(std::span<const double> values);

struct SeedDetail {
  std::string task;
  std::string method;
  std::size_t k = 0;
  std::uint64_t seed = 0;
  double accuracy = 0.0;
  std::size_t correct = 0;
  std::size_t total = 0;
  std::string support_digest;

  nlohmann::json to_json() const;
};

// Fits a predictor to one k-shot support set.
using FitFn = std::function<baselines::Predictor(const data::TaskSpec& task, const std::vector<data::Example>& support,
                                                 std::uint64_t seed)>;
struct Method {
  std::string name;
  FitFn fit;
};

struct KshotOptions {
  std::size_t seeds = 10;
  std::size_t threads = 1;
  data::EncodingOptions encoding;
};

// Hex FNV-1a digest of the support examples in order.
std::string support_digest(const std::vector<data::Example>& support);

// For seeds 0..seeds-1: sample the k-shot support, fit, and score the whole
// test split. Seeds may run concurrently; results are assembled in seed order.
EvalReport kshot_evaluate(const Method& method, const data::TaskDataset& task, std::size_t k,
                          const data::Vocabulary& vocab, const KshotOptions& options,
                          std::vector<SeedDetail>* details = nullptr);

void write_csv_header(std::ostream& out);
void write_csv_row(std::ostream& out, const EvalReport& report);
std::vector<EvalReport> read_csv(std::istream& in);

// Thread count from LEOPARD_THREADS, or fallback when unset.
std::size_t thread_count(std::size_t fallback = 1);

// Candidate with the best mean k-shot accuracy over the tuning tasks; ties go
// to the earlier candidate.
std::size_t tune_epochs(std::span<const std::size_t> grid, std::span<const data::TaskDataset> tasks, std::size_t k,
                        const data::Vocabulary& vocab, const KshotOptions& options,
                        const std::function<Method(std::size_t epochs)>& make);

struct LotoResult {
  std::vector<std::string> held_out;     // one row per training task
  std::vector<std::string> targets;
  std::vector<double> baseline;          // accuracy per target with every task
  std::vector<std::vector<double>> accuracy;  // [held_out][target]
  std::vector<std::vector<double>> relative;  // (acc_heldout - acc_all) / acc_all

  nlohmann::json to_json() const;
};

// Trains once on all tasks and once per held-out task; every model is scored
// by mean k-shot accuracy on each target.
using TrainFn = std::function<Method(std::span<const data::TaskDataset> train)>;
LotoResult leave_one_task_out(std::span<const data::TaskDataset> train, std::span<const data::TaskDataset> targets,
                              const TrainFn& train_fn, std::size_t k, const data::Vocabulary& vocab,
                              const KshotOptions& options);

// Rows: "all" with raw baseline accuracies, then one row of relative changes
// per held-out task.
void write_loto_csv(std::ostream& out, const LotoResult& result);

}  // namespace leopard::harness
