// Acceptance suite: one PASS/FAIL line per criterion, exit 0 iff all pass.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <functional>
#include <iostream>
#include <numeric>
#include <optional>
#include <set>

#include <CLI11.hpp>
#include <fmt/format.h>

#include "generator_properties.hpp"
#include "leopard/baselines/proto.hpp"
#include "leopard/data/synthetic.hpp"
#include "leopard/harness/evaluate.hpp"
#include "leopard/harness/methods.hpp"
#include "leopard/harness/profile.hpp"
#include "leopard/meta/gradcheck.hpp"
#include "leopard/meta/trainer.hpp"

using namespace leopard;
using ad::Tensor;

namespace {

struct Outcome {
  bool pass = false;
  std::string detail;
};

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

// ---- 1 -------------------------------------------------------------------

Outcome gradient_suite() {
  const auto r = meta::gradcheck();
  bool groups = true;
  for (const char* g : {"theta.embeddings", "theta.layer1", "theta.layer2", "psi", "phi", "alpha"}) {
    groups = groups && r.group_error.count(g);
  }
  return {groups && r.max_error < 1e-4 && r.seconds < 60.0,
          fmt::format("max relative error {:.2e} over {} entries in {} groups, {:.1f}s (< 1e-4, < 60s)", r.max_error,
                      r.checked, r.group_error.size(), r.seconds)};
}

// ---- 2 -------------------------------------------------------------------

Outcome first_order_oracle() {
  const double theta0 = -0.4, alpha0 = 0.15, target = 1.3;
  const std::vector<double> centers{0.5, -1.0, 2.5, 0.25};

  double w = theta0, gsum = 0.0;
  for (double c : centers) {
    const double g = 2.0 * (w - c);
    gsum += g;
    w -= alpha0 * g;
  }
  const double expect_theta = 2.0 * (w - target);
  const double expect_alpha = 2.0 * (w - target) * -gsum;

  Tensor theta = Tensor::scalar(theta0, true);
  Tensor alpha = Tensor::scalar(alpha0, true);
  auto loss = [&](const meta::ParamSet& phi, std::size_t s) {
    Tensor d = ad::sub(phi.at("w"), Tensor::scalar(centers[s]));
    return ad::mul(d, d);
  };
  const auto adapted = meta::inner_loop({{"w", theta}}, {{"w", alpha}}, centers.size(), loss);
  Tensor d = ad::sub(adapted.at("w"), Tensor::scalar(target));
  ad::backward(ad::mul(d, d));
  const double err = std::max(std::abs(theta.grad()[0] - expect_theta), std::abs(alpha.grad()[0] - expect_alpha));
  return {err <= 1e-10, fmt::format("|dL/dtheta|, |dL/dalpha| deviation {:.2e} (<= 1e-10)", err)};
}

// ---- 3 -------------------------------------------------------------------

Outcome generator_invariants() {
  constexpr std::uint64_t cases = 10000;
  for (std::uint64_t seed = 0; seed < cases; ++seed) {
    const auto failure = testing::check_generator_case(seed);
    if (!failure.empty()) return {false, fmt::format("case {}: {}", seed, failure)};
  }
  return {true, fmt::format("{} randomized cases", cases)};
}

// ---- 4 -------------------------------------------------------------------

harness::Method constant_method() {
  return {"constant", [](const data::TaskSpec& task, const std::vector<data::Example>&, std::uint64_t) {
            const auto n = task.labels.size();
            return baselines::Predictor{[n](const data::EncodedBatch& b) { return Tensor::zeros({b.batch, n}); }, {}};
          }};
}

harness::Method first_token_method() {
  return {"first-token", [](const data::TaskSpec& task, const std::vector<data::Example>&, std::uint64_t) {
            const auto n = task.labels.size();
            return baselines::Predictor{[n](const data::EncodedBatch& b) {
                                          std::vector<double> v(b.batch * n, 0.0);
                                          for (std::size_t r = 0; r < b.batch; ++r) {
                                            v[r * n + static_cast<std::size_t>(b.ids[r * b.seq_len + 1]) % n] = 1.0;
                                          }
                                          return Tensor::from({b.batch, n}, std::move(v));
                                        },
                                        {}};
          }};
}

Outcome protocol_shape(const data::MarkerBenchmark& bench, const harness::KshotOptions& opts) {
  std::size_t reports = 0;
  for (std::size_t t = 0; t < 3; ++t) {
    const auto& task = bench.test[t];
    for (std::size_t k : {4, 8, 16}) {
      std::vector<harness::SeedDetail> a, b;
      const auto ra = harness::kshot_evaluate(constant_method(), task, k, bench.vocab, opts, &a);
      const auto rb = harness::kshot_evaluate(first_token_method(), task, k, bench.vocab, opts, &b);
      if (ra.seed_accs.size() != 10 || rb.seed_accs.size() != 10) {
        return {false, fmt::format("{} k={}: {} seed accuracies", task.spec.name, k, ra.seed_accs.size())};
      }
      for (std::size_t s = 0; s < 10; ++s) {
        const auto support = harness::support_digest(data::sample_kshot_train(task, k, s));
        if (a[s].support_digest != b[s].support_digest || a[s].support_digest != support) {
          return {false, fmt::format("{} k={} seed {}: supports differ across methods", task.spec.name, k, s)};
        }
      }
      reports += 2;
    }
  }
  for (std::size_t n = 2; n <= 6; ++n) {
    data::TaskDataset task;
    task.spec.name = fmt::format("n{}", n);
    for (std::size_t c = 0; c < n; ++c) {
      task.spec.labels.push_back(fmt::format("l{}", c));
      task.train.push_back({fmt::format("x{}", c), std::nullopt, task.spec.labels.back()});
    }
    const auto pairs = data::augment_pairwise(task);
    std::set<std::set<std::string>> distinct;
    for (const auto& p : pairs) distinct.insert({p.spec.labels.begin(), p.spec.labels.end()});
    if (pairs.size() != n * (n - 1) / 2 || distinct.size() != pairs.size()) {
      return {false, fmt::format("augment_pairwise gave {} tasks for N = {}", pairs.size(), n)};
    }
  }
  return {true, fmt::format("{} reports of 10 seeds with paired supports; C(N,2) for N = 2..6", reports)};
}

// ---- synthetic benchmark ---------------------------------------------------

struct Synthetic {
  harness::Profile profile;
  harness::KshotOptions opts;
  std::size_t held_out_markers = 0;

  data::MarkerBenchmark bench(std::uint64_t seed) const {
    data::MarkerConfig m;
    m.seed = seed;
    m.held_out_markers = held_out_markers;
    return data::make_marker_benchmark(m);
  }

  meta::LoadedModel meta_train(const data::MarkerBenchmark& b, std::uint64_t seed, bool zero, double* secs) const {
    auto config = profile.leopard;
    config.encoder.vocab_size = b.vocab.size();
    config.zero_softmax = zero;
    auto meta = profile.meta;
    meta.seed = seed;
    const auto t0 = std::chrono::steady_clock::now();
    auto r = meta::meta_train(config, meta, b.train, b.validation, b.vocab);
    if (secs) *secs = seconds_since(t0);
    return {config, std::move(r.params), seed};
  }

  double mean_accuracy(const harness::Method& m, std::span<const data::TaskDataset> tasks,
                       const data::Vocabulary& vocab) const {
    double total = 0.0;
    for (const auto& t : tasks) total += harness::kshot_evaluate(m, t, 4, vocab, opts).mean;
    return total / static_cast<double>(tasks.size());
  }

  double leopard_accuracy(const meta::LoadedModel& model, const data::MarkerBenchmark& b) const {
    const auto method = model.config.zero_softmax
                            ? harness::leopard_zero_method(model, profile.finetune.leopard_epochs, b.vocab, opts.encoding)
                            : harness::leopard_method(model, profile.finetune.leopard_epochs, b.vocab, opts.encoding);
    return mean_accuracy(method, b.test, b.vocab);
  }
};

// ---- 5 -------------------------------------------------------------------

Outcome meta_learning_benchmark(const Synthetic& syn, const data::MarkerBenchmark& bench,
                                const meta::LoadedModel& leopard, double train_secs) {
  const double acc = syn.leopard_accuracy(leopard, bench);

  // Random-init fine-tuning with the same epochs; the learning rate is chosen
  // on the validation tasks.
  auto encoder = syn.profile.leopard.encoder;
  encoder.vocab_size = bench.vocab.size();
  const auto init = baselines::random_init_model(encoder, syn.profile.baseline.seed);
  auto method_for = [&](double lr) {
    baselines::FinetuneConfig fc;
    fc.epochs = syn.profile.finetune.leopard_epochs;
    fc.lr = lr;
    fc.encoding = syn.opts.encoding;
    return harness::finetune_method("finetune", init, baselines::FinetuneMode::Full, fc, bench.vocab);
  };
  double best_lr = 0.0, best_val = -1.0;
  for (double lr : {3e-4, 1e-3, 3e-3, 1e-2}) {
    const double v = syn.mean_accuracy(method_for(lr), bench.validation, bench.vocab);
    if (v > best_val) {
      best_val = v;
      best_lr = lr;
    }
  }
  const double baseline = syn.mean_accuracy(method_for(best_lr), bench.test, bench.vocab);
  const bool pass = acc >= 0.90 && acc - baseline >= 0.15 && train_secs < 15 * 60;
  return {pass, fmt::format("LEOPARD k=4 {:.4f} (>= 0.90) on {} unseen tasks; random-init fine-tune {:.4f} (lr {:g}), "
                            "gap {:.4f} (>= 0.15); {} episodes in {:.0f}s",
                            acc, bench.test.size(), baseline, best_lr, acc - baseline, syn.profile.meta.episodes,
                            train_secs)};
}

// ---- 6 -------------------------------------------------------------------

Outcome prototypical(const Synthetic& syn, const data::MarkerBenchmark& bench) {
  const baselines::PrototypeSet protos{Tensor::from({2, 2}, {0, 0, 3, 0}), {"a", "b"}};
  const auto p = baselines::proto_predict(protos, std::vector<double>{1, 0});
  const double hand = std::max(std::abs(p[0] - 0.9526), std::abs(p[1] - 0.0474));

  auto encoder = syn.profile.leopard.encoder;
  encoder.vocab_size = bench.vocab.size();
  const auto model = baselines::train_proto(encoder, syn.profile.baseline, bench.train, bench.vocab);
  const double acc = syn.mean_accuracy(harness::proto_method(model, bench.vocab, syn.opts.encoding), bench.test,
                                       bench.vocab);
  return {hand < 1e-4 && acc >= 0.85,
          fmt::format("hand case ({:.4f}, {:.4f}) off by {:.1e} (< 1e-4); Proto k=4 {:.4f} (>= 0.85)", p[0], p[1],
                      hand, acc)};
}

// ---- 7 -------------------------------------------------------------------

std::string theta_bytes(const meta::ParamSet& store, const meta::ParameterPartition& part) {
  ad::Checkpoint ckpt;
  for (const auto& path : part.theta) ckpt.put(path, store.at(path));
  return ckpt.serialize();
}

Outcome isolation_and_determinism(const data::MarkerBenchmark& bench) {
  auto c = meta::tiny_config();
  c.alpha_init = 0.05;
  const auto store = meta::init_leopard(c, 17);
  const auto part = meta::partition(store, c);
  const auto before = theta_bytes(store, part);
  std::size_t calls = 0;
  for (std::uint64_t s = 0; s < 5; ++s) {
    const auto ep = meta::tiny_episode(s);
    const auto phi = meta::initial_phi(store, part, c, ep.generation, ep.classes);
    meta::inner_adapt(store, part, c, phi, ep.adaptation);
    meta::task_gradient(store, part, c, ep);
    ++calls;
    if (theta_bytes(store, part) != before) return {false, fmt::format("Theta bytes changed after call {}", calls)};
  }

  meta::LeopardConfig lc;
  lc.encoder.vocab_size = bench.vocab.size();
  lc.encoder.max_len = 10;
  lc.encoder.layers = 2;
  lc.encoder.hidden = 16;
  lc.encoder.heads = 2;
  lc.encoder.ff = 32;
  lc.class_embedding = 8;
  meta::MetaConfig m;
  m.adaptation_steps = 2;
  m.episodes = 30;
  m.eval_every = 10;
  m.encoding.max_len = 10;
  m.seed = 5;
  auto run = [&] {
    auto r = meta::meta_train(lc, m, bench.train, bench.validation, bench.vocab);
    return meta::make_checkpoint(r.params, lc, m.seed, &r.adam).serialize();
  };
  const auto a = run();
  const auto b = run();
  return {a == b, fmt::format("Theta identical after {} inner_adapt calls; seeded runs {} ({} bytes)", calls,
                              a == b ? "bit-identical" : "differ", a.size())};
}

// ---- 8 -------------------------------------------------------------------

Outcome zero_contrast(const Synthetic& syn, const data::MarkerBenchmark& bench0, const meta::LoadedModel& leopard0) {
  std::vector<double> gen, zero;
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    const auto bench = seed == 0 ? bench0 : syn.bench(seed);
    gen.push_back(seed == 0 ? syn.leopard_accuracy(leopard0, bench)
                            : syn.leopard_accuracy(syn.meta_train(bench, seed, false, nullptr), bench));
    zero.push_back(syn.leopard_accuracy(syn.meta_train(bench, seed, true, nullptr), bench));
    std::cerr << fmt::format("  seed {}: LEOPARD {:.4f}  LEOPARD-ZERO {:.4f}\n", seed, gen.back(), zero.back());
  }
  const double g = std::accumulate(gen.begin(), gen.end(), 0.0) / gen.size();
  const double z = std::accumulate(zero.begin(), zero.end(), 0.0) / zero.size();
  return {g >= z, fmt::format("LEOPARD {:.4f} vs LEOPARD-ZERO {:.4f} mean over 5 paired seeds", g, z)};
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"acceptance criteria 1-8"};
  std::string profile_path = std::string(LEOPARD_PROFILES) + "/desk.profile";
  std::vector<int> only;
  std::size_t held_out = 0;
  app.add_option("--profile", profile_path);
  app.add_option("--only", only, "criteria to run")->delimiter(',');
  app.add_option("--held-out-markers", held_out, "reserve marker tokens for validation and test tasks");
  CLI11_PARSE(app, argc, argv);

  Synthetic syn;
  syn.profile = harness::load_profile(profile_path);
  syn.held_out_markers = held_out;
  syn.opts.seeds = syn.profile.eval.seeds;
  syn.opts.threads = harness::thread_count();
  syn.opts.encoding = syn.profile.encoding();

  auto wanted = [&](int c) { return only.empty() || std::find(only.begin(), only.end(), c) != only.end(); };
  const auto bench = syn.bench(0);
  std::optional<meta::LoadedModel> leopard;
  double train_secs = 0.0;
  auto leopard0 = [&]() -> const meta::LoadedModel& {
    if (!leopard) leopard = syn.meta_train(bench, 0, false, &train_secs);
    return *leopard;
  };

  const std::vector<std::pair<int, std::function<Outcome()>>> criteria{
      {1, gradient_suite},
      {2, first_order_oracle},
      {3, generator_invariants},
      {4, [&] { return protocol_shape(bench, syn.opts); }},
      {5, [&] { return meta_learning_benchmark(syn, bench, leopard0(), (leopard0(), train_secs)); }},
      {6, [&] { return prototypical(syn, bench); }},
      {7, [&] { return isolation_and_determinism(bench); }},
      {8, [&] { return zero_contrast(syn, bench, leopard0()); }},
  };

  int failures = 0;
  for (const auto& [id, run] : criteria) {
    if (!wanted(id)) continue;
    const auto t0 = std::chrono::steady_clock::now();
    Outcome o;
    try {
      o = run();
    } catch (const std::exception& e) {
      o = {false, fmt::format("error: {}", e.what())};
    }
    failures += o.pass ? 0 : 1;
    std::cout << fmt::format("criterion {} {}: {} [{:.1f}s]", id, o.pass ? "PASS" : "FAIL", o.detail, seconds_since(t0))
              << std::endl;
  }
  return failures == 0 ? 0 : 1;
}
