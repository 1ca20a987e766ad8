#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>

#include <CLI11.hpp>
#include <fmt/format.h>

#include "leopard/baselines/mtl.hpp"
#include "leopard/baselines/proto.hpp"
#include "leopard/data/synthetic.hpp"
#include "leopard/harness/evaluate.hpp"
#include "leopard/harness/methods.hpp"
#include "leopard/harness/profile.hpp"
#include "leopard/meta/gradcheck.hpp"
#include "leopard/meta/trainer.hpp"

namespace fs = std::filesystem;
using namespace leopard;

namespace {

struct Workspace {
  data::Manifest manifest;
  data::Vocabulary vocab;
  harness::Profile profile;

  std::vector<data::TaskDataset> load(const std::vector<data::TaskSpec>& specs) const {
    std::vector<data::TaskDataset> out;
    for (const auto& s : specs) out.push_back(data::load_task(s));
    return out;
  }
  std::vector<data::TaskDataset> load_named(const std::vector<std::string>& names) const {
    std::vector<data::TaskDataset> out;
    for (const auto& n : names) out.push_back(data::load_task(manifest.find(n)));
    return out;
  }
};

Workspace open_workspace(const fs::path& manifest, const std::optional<fs::path>& profile) {
  Workspace w;
  w.manifest = data::load_manifest(manifest);
  w.vocab = data::Vocabulary::load(w.manifest.vocab);
  w.profile = profile ? harness::load_profile(*profile) : harness::Profile{};
  w.profile.leopard.encoder.vocab_size = w.vocab.size();
  w.profile.validate();
  return w;
}

std::vector<data::TaskDataset> augmented(const std::vector<data::TaskDataset>& tasks) {
  std::vector<data::TaskDataset> out;
  for (const auto& t : tasks) {
    for (auto& a : data::augment_pairwise(t)) out.push_back(std::move(a));
  }
  return out;
}

std::vector<std::string> split_names(const std::string& s) {
  std::vector<std::string> out;
  std::stringstream in(s);
  std::string item;
  while (std::getline(in, item, ',')) {
    if (!item.empty()) out.push_back(item);
  }
  return out;
}

std::ofstream open_append(const fs::path& file, bool& fresh) {
  fresh = !fs::exists(file) || fs::file_size(file) == 0;
  if (file.has_parent_path()) fs::create_directories(file.parent_path());
  std::ofstream out(file, std::ios::app);
  if (!out) throw std::runtime_error(fmt::format("cannot write {}", file.string()));
  return out;
}

std::ofstream open_write(const fs::path& file) {
  if (file.has_parent_path()) fs::create_directories(file.parent_path());
  std::ofstream out(file);
  if (!out) throw std::runtime_error(fmt::format("cannot write {}", file.string()));
  return out;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"LEOPARD meta-learning, baselines and k-shot evaluation"};
  app.require_subcommand(1);

  fs::path manifest, out;
  std::optional<fs::path> profile;
  auto workspace_opts = [&](CLI::App* cmd) {
    cmd->add_option("--manifest", manifest, "task manifest (JSON)")->required();
    cmd->add_option("--profile", profile, "run profile (INI)");
  };

  // make-synthetic
  auto* synth = app.add_subcommand("make-synthetic", "write the marker-token benchmark");
  data::MarkerConfig marker;
  synth->add_option("--out", out, "output directory")->required();
  synth->add_option("--seed", marker.seed);
  synth->add_option("--held-out-markers", marker.held_out_markers, "markers reserved for validation/test tasks");

  // meta-train
  auto* mt = app.add_subcommand("meta-train", "meta-train LEOPARD");
  workspace_opts(mt);
  mt->add_option("--out", out, "checkpoint path")->required();
  std::optional<fs::path> log_path;
  std::optional<std::size_t> episodes;
  std::optional<std::uint64_t> seed;
  bool zero_softmax = false, augment = false;
  mt->add_option("--log", log_path, "per-episode JSONL log");
  mt->add_option("--episodes", episodes);
  mt->add_option("--seed", seed);
  mt->add_flag("--zero-softmax", zero_softmax, "LEOPARD-ZERO: W = 0, b = 0 instead of generated");
  mt->add_flag("--augment", augment, "add every label pair of each training task as a binary task");

  // baseline-train
  auto* bt = app.add_subcommand("baseline-train", "train the Proto or MTL baseline");
  workspace_opts(bt);
  std::string baseline_method;
  std::optional<std::size_t> steps;
  bt->add_option("--method", baseline_method)->required()->check(CLI::IsMember({"proto", "mtl"}));
  bt->add_option("--out", out, "checkpoint path")->required();
  bt->add_option("--steps", steps);
  bt->add_option("--seed", seed);
  bt->add_flag("--augment", augment, "add every label pair of each training task as a binary task");

  // eval
  auto* ev = app.add_subcommand("eval", "k-shot evaluation over 10 support seeds");
  workspace_opts(ev);
  std::string methods, ks, tasks, tune_on;
  std::optional<fs::path> checkpoint, jsonl_path;
  fs::path csv_path;
  std::optional<std::size_t> epochs;
  ev->add_option("--method", methods, "comma list of methods")->required();
  ev->add_option("--k", ks, "comma list of shots (default from profile)");
  ev->add_option("--checkpoint", checkpoint);
  ev->add_option("--tasks", tasks, "comma list of target tasks (default: manifest test tasks)");
  ev->add_option("--csv", csv_path, "aggregate report, appended")->required();
  ev->add_option("--jsonl", jsonl_path, "per-seed detail, appended");
  ev->add_option("--epochs", epochs, "fine-tuning epochs (overrides the profile)");
  ev->add_option("--tune-on", tune_on, "comma list of validation tasks used to pick epochs per k");

  // loto
  auto* lo = app.add_subcommand("loto", "leave-one-task-out study");
  workspace_opts(lo);
  std::string loto_method = "leopard";
  std::size_t loto_k = 4;
  lo->add_option("--method", loto_method)->check(CLI::IsMember({"leopard", "proto", "mtl-full"}));
  lo->add_option("--k", loto_k);
  lo->add_option("--tasks", tasks, "comma list of target tasks (default: manifest test tasks)");
  lo->add_option("--out", out, "matrix CSV")->required();
  lo->add_option("--log", log_path, "raw accuracies (JSON)");

  // gradcheck
  auto* gc = app.add_subcommand("gradcheck", "finite-difference check on the tiny config");
  meta::GradcheckOptions gopts;
  gc->add_option("--seed", gopts.seed);
  gc->add_option("--nu", gopts.nu);

  // episode-dump
  auto* ed = app.add_subcommand("episode-dump", "print one sampled episode as JSON");
  ed->add_option("--manifest", manifest)->required();
  std::string task_name;
  data::EpisodeShape shape;
  std::uint64_t episode_seed = 0;
  ed->add_option("--task", task_name)->required();
  ed->add_option("--k", shape.k);
  ed->add_option("--G", shape.adaptation_batches);
  ed->add_option("--queries", shape.queries_per_label, "queries per label (default k)");
  ed->add_option("--seed", episode_seed);

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    std::cerr << "error: " << e.what() << "\n" << app.help();
    return 2;
  }

  try {
    if (*synth) {
      data::write_benchmark(data::make_marker_benchmark(marker), out);
      std::cout << fmt::format("wrote {}\n", (out / "manifest.json").string());
    } else if (*mt) {
      auto w = open_workspace(manifest, profile);
      auto& meta = w.profile.meta;
      if (episodes) meta.episodes = *episodes;
      if (seed) meta.seed = *seed;
      meta.threads = harness::thread_count(meta.threads);
      if (zero_softmax) w.profile.leopard.zero_softmax = true;
      auto train = w.load(w.manifest.train);
      if (augment) train = augmented(train);
      const auto validation = w.load(w.manifest.validation);
      std::optional<std::ofstream> log;
      if (log_path) log = open_write(*log_path);
      auto r = meta::meta_train(w.profile.leopard, meta, train, validation, w.vocab, log ? &*log : nullptr);
      meta::make_checkpoint(r.params, w.profile.leopard, meta.seed, &r.adam).save(out);
      std::cout << fmt::format("{} episodes{}; wrote {}\n", r.episodes_run, r.stopped_early ? " (stopped early)" : "",
                               out.string());
    } else if (*bt) {
      auto w = open_workspace(manifest, profile);
      auto& b = w.profile.baseline;
      if (steps) b.steps = *steps;
      if (seed) b.seed = *seed;
      auto train = w.load(w.manifest.train);
      if (augment) train = augmented(train);
      const auto& enc = w.profile.leopard.encoder;
      auto model = baseline_method == "proto" ? baselines::train_proto(enc, b, train, w.vocab)
                                              : baselines::train_mtl(enc, b, train, w.vocab);
      baselines::make_checkpoint(model).save(out);
      std::cout << fmt::format("{} steps; wrote {}\n", b.steps, out.string());
    } else if (*ev) {
      auto w = open_workspace(manifest, profile);
      const auto ckpt = checkpoint ? std::optional<ad::Checkpoint>(ad::Checkpoint::load(*checkpoint)) : std::nullopt;
      const auto shots = ks.empty() ? w.profile.eval.k : [&] {
        std::vector<std::size_t> v;
        for (const auto& s : split_names(ks)) v.push_back(std::stoul(s));
        return v;
      }();
      const auto targets = tasks.empty() ? w.load(w.manifest.test) : w.load_named(split_names(tasks));
      const auto tuning = w.load_named(split_names(tune_on));
      harness::KshotOptions opts{w.profile.eval.seeds, harness::thread_count(), w.profile.encoding()};

      bool fresh = false;
      auto csv = open_append(csv_path, fresh);
      if (fresh) harness::write_csv_header(csv);
      std::optional<std::ofstream> jsonl;
      if (jsonl_path) {
        bool unused = false;
        jsonl = open_append(*jsonl_path, unused);
      }
      for (const auto& name : split_names(methods)) {
        for (std::size_t k : shots) {
          std::optional<std::size_t> ep = epochs;
          if (!tuning.empty()) {
            ep = harness::tune_epochs(w.profile.eval.epoch_grid, tuning, k, w.vocab, opts, [&](std::size_t e) {
              return harness::make_method(name, ckpt ? &*ckpt : nullptr, w.profile, w.vocab, e);
            });
            std::cerr << fmt::format("{} k={}: tuned epochs {}\n", name, k, *ep);
          }
          const auto method = harness::make_method(name, ckpt ? &*ckpt : nullptr, w.profile, w.vocab, ep);
          for (const auto& t : targets) {
            std::vector<harness::SeedDetail> detail;
            const auto report = harness::kshot_evaluate(method, t, k, w.vocab, opts, &detail);
            harness::write_csv_row(csv, report);
            if (jsonl) {
              for (const auto& d : detail) *jsonl << d.to_json().dump() << '\n';
            }
            std::cout << fmt::format("{} {} k={}: {:.4f} +- {:.4f}\n", t.spec.name, name, k, report.mean, report.std);
          }
        }
      }
    } else if (*lo) {
      auto w = open_workspace(manifest, profile);
      const auto train = w.load(w.manifest.train);
      const auto targets = tasks.empty() ? w.load(w.manifest.test) : w.load_named(split_names(tasks));
      harness::KshotOptions opts{w.profile.eval.seeds, harness::thread_count(), w.profile.encoding()};
      const auto& p = w.profile;
      harness::TrainFn train_fn = [&](std::span<const data::TaskDataset> subset) -> harness::Method {
        if (loto_method == "leopard") {
          auto r = meta::meta_train(p.leopard, p.meta, subset, {}, w.vocab);
          return harness::leopard_method(meta::LoadedModel{p.leopard, r.params, p.meta.seed},
                                         p.finetune.leopard_epochs, w.vocab, opts.encoding);
        }
        if (loto_method == "proto") {
          return harness::proto_method(baselines::train_proto(p.leopard.encoder, p.baseline, subset, w.vocab),
                                       w.vocab, opts.encoding);
        }
        baselines::FinetuneConfig fc;
        fc.epochs = p.finetune.epochs;
        fc.lr = p.finetune.full_lr;
        fc.encoding = opts.encoding;
        return harness::finetune_method("mtl-full", baselines::train_mtl(p.leopard.encoder, p.baseline, subset, w.vocab),
                                        baselines::FinetuneMode::Full, fc, w.vocab);
      };
      const auto result = harness::leave_one_task_out(train, targets, train_fn, loto_k, w.vocab, opts);
      auto csv = open_write(out);
      harness::write_loto_csv(csv, result);
      if (log_path) open_write(*log_path) << result.to_json().dump(2) << '\n';
      std::cout << fmt::format("{} retrainings + 1 baseline; wrote {}\n", result.held_out.size(), out.string());
    } else if (*gc) {
      const auto report = meta::gradcheck(gopts);
      for (const auto& [group, err] : report.group_error) std::cout << fmt::format("{:<18} {:.3e}\n", group, err);
      std::cout << fmt::format("max relative error {:.3e} over {} entries ({:.1f}s)\n", report.max_error,
                               report.checked, report.seconds);
      return report.max_error < 1e-4 ? 0 : 1;
    } else if (*ed) {
      const auto m = data::load_manifest(manifest);
      const auto task = data::load_task(m.find(task_name));
      std::mt19937_64 rng(episode_seed);
      const auto ep = data::sample_episode(task, shape, rng);
      auto examples = [](const std::vector<data::Example>& xs) {
        nlohmann::json arr = nlohmann::json::array();
        for (const auto& x : xs) {
          nlohmann::json j{{"text", x.text}, {"label", x.label}};
          if (x.text_pair) j["text_pair"] = *x.text_pair;
          arr.push_back(j);
        }
        return arr;
      };
      nlohmann::json j{{"task", ep.task}, {"k", shape.k}, {"G", shape.adaptation_batches}, {"seed", episode_seed}};
      j["generation"] = examples(ep.generation);
      j["adaptation"] = nlohmann::json::array();
      std::size_t total = ep.generation.size() + ep.validation.size();
      for (const auto& b : ep.adaptation) {
        j["adaptation"].push_back(examples(b));
        total += b.size();
      }
      j["validation"] = examples(ep.validation);
      j["total_examples"] = total;
      std::cout << j.dump(2) << '\n';
    }
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  return 0;
}
