#include <doctest.h>

#include <array>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <map>
#include <memory>
#include <set>
#include <sstream>

#include <nlohmann/json.hpp>

#include "leopard/data/synthetic.hpp"
#include "leopard/harness/evaluate.hpp"
#include "leopard/harness/methods.hpp"
#include "leopard/harness/profile.hpp"

using namespace leopard;
using namespace leopard::harness;
namespace fs = std::filesystem;

namespace {

data::MarkerBenchmark binary_bench() {
  data::MarkerConfig m;
  m.vocab_size = 60;
  m.markers = 12;
  m.min_labels = 2;
  m.max_labels = 2;
  m.train_tasks = 3;
  m.validation_tasks = 1;
  m.test_tasks = 2;
  m.sequence_tokens = 5;
  m.train_per_label = 20;
  m.test_per_label = 15;
  return data::make_marker_benchmark(m);
}

// Always predicts label 0.
Method constant_method() {
  return {"constant", [](const data::TaskSpec& task, const std::vector<data::Example>&, std::uint64_t) {
            const auto n = task.labels.size();
            return baselines::Predictor{
                [n](const data::EncodedBatch& b) { return ad::Tensor::zeros({b.batch, n}); }, {}};
          }};
}

// Predicts the label whose marker token occurs in the input; label names are
// the marker tokens. Falls back to label 0 unless `sharp`.
Method marker_method(const data::Vocabulary& vocab, bool sharp = true) {
  return {"marker", [&vocab, sharp](const data::TaskSpec& task, const std::vector<data::Example>&, std::uint64_t) {
            std::vector<int> ids;
            for (const auto& l : task.labels) ids.push_back(vocab.id(l));
            return baselines::Predictor{[ids, sharp](const data::EncodedBatch& b) {
                                          std::vector<double> v(b.batch * ids.size(), 0.0);
                                          for (std::size_t r = 0; sharp && r < b.batch; ++r) {
                                            for (std::size_t c = 0; c < b.seq_len; ++c) {
                                              for (std::size_t j = 0; j < ids.size(); ++j) {
                                                if (b.ids[r * b.seq_len + c] == ids[j]) v[r * ids.size() + j] = 1.0;
                                              }
                                            }
                                          }
                                          return ad::Tensor::from({b.batch, ids.size()}, std::move(v));
                                        },
                                        {}};
          }};
}

KshotOptions options(std::size_t threads = 1) {
  KshotOptions o;
  o.seeds = 10;
  o.threads = threads;
  o.encoding.max_len = 8;
  return o;
}

struct Run {
  int status = -1;
  std::string out;
};

Run run_cli(const std::string& args) {
  Run r;
  const std::string cmd = std::string(LEOPARD_CLI) + " " + args + " 2>&1";
  std::unique_ptr<FILE, int (*)(FILE*)> pipe(popen(cmd.c_str(), "r"), pclose);
  REQUIRE(pipe);
  std::array<char, 4096> buf{};
  std::size_t n = 0;
  while ((n = std::fread(buf.data(), 1, buf.size(), pipe.get())) > 0) r.out.append(buf.data(), n);
  const int raw = pclose(pipe.release());
  r.status = WIFEXITED(raw) ? WEXITSTATUS(raw) : -1;
  return r;
}

fs::path scratch_dir(const std::string& name) {
  auto dir = fs::temp_directory_path() / ("leopard_harness_" + name);
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

}  // namespace

TEST_CASE("profiles parse every section and reject unknown keys") {
  const auto p = parse_profile(
      "[encoder]\nlayers = 3\nhidden = 24\nheads = 3\ninit_std = 0.05\n"
      "[leopard]\nclass_embedding_size = 8\nmin_adapted_layer = 1\n"
      "[meta]\nadaptation_steps = 5\nbatch_size = 6\nouter_lr = 2e-4\ndata_sampling = uniform\n"
      "[baseline]\nsteps = 50\n"
      "[finetune]\nleopard_epochs = 7\n"
      "[eval]\nk = 2, 8\nseeds = 3\n");
  CHECK(p.leopard.encoder.layers == 3);
  CHECK(p.leopard.encoder.hidden == 24);
  CHECK(p.leopard.encoder.init_std == doctest::Approx(0.05));
  CHECK(p.leopard.class_embedding == 8);
  CHECK(p.leopard.nu == 1);
  CHECK(p.meta.adaptation_steps == 5);
  CHECK(p.meta.k == 6);
  CHECK(p.meta.outer_lr == doctest::Approx(2e-4));
  CHECK(p.meta.sampling == data::TaskSampling::Uniform);
  CHECK(p.baseline.steps == 50);
  CHECK(p.finetune.leopard_epochs == 7);
  CHECK(p.eval.k == std::vector<std::size_t>{2, 8});
  CHECK(p.eval.seeds == 3);

  CHECK_THROWS_AS(parse_profile("[encoder]\nwidth = 3\n"), std::invalid_argument);
  CHECK_THROWS_AS(parse_profile("[optimizer]\nlr = 3\n"), std::invalid_argument);
  CHECK_THROWS_AS(parse_profile("[meta]\nouter_lr = fast\n"), std::invalid_argument);
  CHECK_THROWS_AS(parse_profile("[eval]\nk = 4,0\n"), std::invalid_argument);
  CHECK_THROWS(load_profile("/nonexistent/profile.ini"));

  SUBCASE("shipped profiles load") {
    for (const char* name : {"desk.profile", "paper.profile"}) {
      CAPTURE(name);
      auto loaded = load_profile(fs::path(LEOPARD_PROFILES) / name);
      loaded.leopard.encoder.vocab_size = 100;
      CHECK_NOTHROW(loaded.validate());
    }
    const auto paper = load_profile(fs::path(LEOPARD_PROFILES) / "paper.profile");
    CHECK(paper.meta.adaptation_steps == 7);
    CHECK(paper.leopard.class_embedding == 256);
    CHECK(paper.meta.outer_lr == doctest::Approx(1e-5));
  }
}

TEST_CASE("eval report aggregates are sample mean and sample std") {
  const std::vector<double> accs{0.5, 0.75, 1.0, 0.25};
  const auto r = EvalReport::aggregate("t", "m", 4, accs);
  double mean = 0.0;
  for (double a : accs) mean += a / accs.size();
  double ss = 0.0;
  for (double a : accs) ss += (a - mean) * (a - mean);
  CHECK(r.mean == doctest::Approx(mean).epsilon(1e-15));
  CHECK(r.std == doctest::Approx(std::sqrt(ss / (accs.size() - 1))).epsilon(1e-15));
  CHECK_NOTHROW(r.validate());

  auto bad = r;
  bad.mean += 1e-6;
  CHECK_THROWS(bad.validate());
  bad = r;
  bad.seed_accs[0] = 1.5;
  CHECK_THROWS(bad.validate());
  CHECK(EvalReport::aggregate("t", "m", 4, {0.3}).std == 0.0);
}

TEST_CASE("constant predictor on a balanced binary task scores 0.5 with zero spread") {
  const auto bench = binary_bench();
  const auto& task = bench.test[0];
  REQUIRE(task.num_labels() == 2);
  const auto r = kshot_evaluate(constant_method(), task, 4, bench.vocab, options());
  CHECK(r.seed_accs.size() == 10);
  for (double a : r.seed_accs) CHECK(a == 0.5);
  CHECK(r.mean == 0.5);
  CHECK(r.std == 0.0);
}

TEST_CASE("k-shot protocol: one report per k, ten seeds, supports paired across methods") {
  const auto bench = binary_bench();
  const auto& task = bench.test[1];
  for (std::size_t k : {4, 8, 16}) {
    CAPTURE(k);
    std::vector<SeedDetail> a, b;
    const auto ra = kshot_evaluate(constant_method(), task, k, bench.vocab, options(), &a);
    const auto rb = kshot_evaluate(marker_method(bench.vocab), task, k, bench.vocab, options(3), &b);
    CHECK(ra.k == k);
    CHECK(ra.seed_accs.size() == 10);
    CHECK(rb.seed_accs.size() == 10);
    CHECK_NOTHROW(ra.validate());
    CHECK_NOTHROW(rb.validate());
    REQUIRE(a.size() == 10);
    REQUIRE(b.size() == 10);
    std::set<std::string> digests;
    for (std::size_t s = 0; s < 10; ++s) {
      CHECK(a[s].seed == s);
      CHECK(a[s].support_digest == b[s].support_digest);
      CHECK(a[s].total == task.test.size());
      digests.insert(a[s].support_digest);
      const auto support = data::sample_kshot_train(task, k, s);
      CHECK(support_digest(support) == a[s].support_digest);
      std::map<std::string, std::size_t> per_label;
      for (const auto& ex : support) ++per_label[ex.label];
      for (const auto& l : task.spec.labels) CHECK(per_label[l] == k);
    }
    CHECK(digests.size() == 10);
    CHECK(rb.mean == 1.0);
  }
}

TEST_CASE("threaded evaluation matches sequential evaluation") {
  const auto bench = binary_bench();
  std::vector<SeedDetail> one, many;
  const auto r1 = kshot_evaluate(marker_method(bench.vocab), bench.test[0], 4, bench.vocab, options(1), &one);
  const auto r4 = kshot_evaluate(marker_method(bench.vocab), bench.test[0], 4, bench.vocab, options(4), &many);
  CHECK(r1.seed_accs == r4.seed_accs);
  for (std::size_t s = 0; s < one.size(); ++s) CHECK(one[s].to_json() == many[s].to_json());
}

TEST_CASE("evaluation without a test split is an error") {
  auto bench = binary_bench();
  auto task = bench.test[0];
  task.test.clear();
  CHECK_THROWS_AS(kshot_evaluate(constant_method(), task, 4, bench.vocab, options()), data::DataError);
}

TEST_CASE("csv reports round trip and reruns are byte-identical") {
  const auto bench = binary_bench();
  auto render = [&] {
    std::ostringstream out;
    write_csv_header(out);
    for (const auto& t : bench.test) {
      write_csv_row(out, kshot_evaluate(constant_method(), t, 4, bench.vocab, options()));
      write_csv_row(out, kshot_evaluate(marker_method(bench.vocab), t, 8, bench.vocab, options(2)));
    }
    return out.str();
  };
  const auto text = render();
  CHECK(text == render());
  CHECK(text.rfind("task,method,k,mean,std,seed_accs\n", 0) == 0);

  std::istringstream in(text);
  const auto reports = read_csv(in);
  REQUIRE(reports.size() == 4);
  for (const auto& r : reports) CHECK_NOTHROW(r.validate());
  CHECK(reports[0].method == "constant");
  CHECK(reports[1].k == 8);
  CHECK(reports[1].seed_accs.size() == 10);
  std::ostringstream again;
  write_csv_header(again);
  for (const auto& r : reports) write_csv_row(again, r);
  CHECK(again.str() == text);
}

TEST_CASE("epoch tuning picks the best candidate and breaks ties toward the earlier one") {
  const auto bench = binary_bench();
  std::vector<std::size_t> seen;
  const std::vector<std::size_t> grid{5, 10, 20};
  const auto best = tune_epochs(grid, bench.validation, 4, bench.vocab, options(), [&](std::size_t e) {
    seen.push_back(e);
    return e >= 10 ? marker_method(bench.vocab) : constant_method();
  });
  CHECK(best == 10);
  CHECK(seen == grid);
}

TEST_CASE("leave-one-task-out retrains once per task plus once on everything") {
  const auto bench = binary_bench();
  const std::vector<data::TaskDataset> train(bench.train.begin(), bench.train.begin() + 2);
  std::vector<std::vector<std::string>> calls;
  // Quality drops to chance whenever the first training task is missing.
  const TrainFn train_fn = [&](std::span<const data::TaskDataset> subset) {
    std::vector<std::string> names;
    for (const auto& t : subset) names.push_back(t.spec.name);
    calls.push_back(names);
    const bool has_first = std::find(names.begin(), names.end(), train[0].spec.name) != names.end();
    return marker_method(bench.vocab, has_first);
  };
  const auto r = leave_one_task_out(train, bench.test, train_fn, 4, bench.vocab, options());
  REQUIRE(calls.size() == 3);
  CHECK(calls[0].size() == 2);
  CHECK(calls[1] == std::vector<std::string>{train[1].spec.name});
  CHECK(calls[2] == std::vector<std::string>{train[0].spec.name});

  REQUIRE(r.held_out.size() == 2);
  REQUIRE(r.targets.size() == bench.test.size());
  for (std::size_t h = 0; h < 2; ++h) {
    for (std::size_t t = 0; t < r.targets.size(); ++t) {
      CHECK(r.relative[h][t] == doctest::Approx((r.accuracy[h][t] - r.baseline[t]) / r.baseline[t]).epsilon(1e-15));
    }
  }
  CHECK(r.baseline[0] == 1.0);
  CHECK(r.relative[0][0] == doctest::Approx(-0.5));
  CHECK(r.relative[1][0] == 0.0);

  std::ostringstream a, b;
  write_loto_csv(a, r);
  write_loto_csv(b, leave_one_task_out(train, bench.test, train_fn, 4, bench.vocab, options()));
  CHECK(a.str() == b.str());
  std::istringstream lines(a.str());
  std::string line;
  std::vector<std::string> rows;
  while (std::getline(lines, line)) rows.push_back(line);
  REQUIRE(rows.size() == 4);
  CHECK(rows[0].rfind("held_out,", 0) == 0);
  CHECK(rows[1].rfind("all,", 0) == 0);
  CHECK(rows[2].rfind(train[0].spec.name + ",", 0) == 0);

  CHECK_THROWS(leave_one_task_out(std::span(train).first(1), bench.test, train_fn, 4, bench.vocab, options()));
}

TEST_CASE("thread count comes from the environment") {
  ::unsetenv("LEOPARD_THREADS");
  CHECK(thread_count(3) == 3);
  ::setenv("LEOPARD_THREADS", "5", 1);
  CHECK(thread_count(3) == 5);
  ::unsetenv("LEOPARD_THREADS");
}

TEST_CASE("make_method knows every name and needs checkpoints where it should") {
  const auto bench = binary_bench();
  Profile p;
  p.leopard.encoder.vocab_size = bench.vocab.size();
  p.leopard.encoder.max_len = 8;
  p.leopard.encoder.layers = 1;
  p.leopard.encoder.hidden = 8;
  p.leopard.encoder.heads = 2;
  p.leopard.encoder.ff = 8;
  for (const auto& name : method_names()) {
    CAPTURE(name);
    if (name == "finetune") {
      CHECK(make_method(name, nullptr, p, bench.vocab, 0).name == name);
    } else {
      CHECK_THROWS(make_method(name, nullptr, p, bench.vocab));
    }
  }
  CHECK_THROWS(make_method("nearest-neighbour", nullptr, p, bench.vocab));
}

TEST_CASE("cli exit codes and episode dump") {
  const auto dir = scratch_dir("cli");
  const auto manifest = (dir / "bench" / "manifest.json").string();
  REQUIRE(run_cli("make-synthetic --out " + (dir / "bench").string()).status == 0);

  const auto dump = run_cli("episode-dump --manifest " + manifest + " --task train00 --k 8 --G 7 --seed 3");
  REQUIRE(dump.status == 0);
  const auto j = nlohmann::json::parse(dump.out);
  const std::size_t labels = j["generation"].size() / 8;
  CHECK(j["adaptation"].size() == 7);
  CHECK(j["total_examples"] == 8 * labels * (1 + 7) + 8 * labels);
  CHECK(dump.out == run_cli("episode-dump --manifest " + manifest + " --task train00 --k 8 --G 7 --seed 3").out);

  CHECK(run_cli("").status == 2);
  CHECK(run_cli("frobnicate").status == 2);
  CHECK(run_cli("gradcheck --no-such-flag").status == 2);
  CHECK(run_cli("baseline-train --method knn --manifest " + manifest + " --out x").status == 2);

  const auto missing = run_cli("eval --manifest " + manifest + " --method leopard --csv " + (dir / "r.csv").string());
  CHECK(missing.status == 1);
  CHECK(missing.out.rfind("error: ", 0) == 0);
  CHECK(std::count(missing.out.begin(), missing.out.end(), '\n') == 1);
  CHECK(run_cli("episode-dump --manifest " + manifest + " --task nope").status == 1);
  fs::remove_all(dir);
}

TEST_CASE("cli gradcheck passes on the tiny config") {
  const auto r = run_cli("gradcheck");
  CHECK(r.status == 0);
  CHECK(r.out.find("max relative error") != std::string::npos);
}
