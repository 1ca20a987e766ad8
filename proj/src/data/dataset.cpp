#include "leopard/data/dataset.hpp"

#include <algorithm>
#include <fstream>
#include <set>

#include <fmt/format.h>
#include <nlohmann/json.hpp>

namespace leopard::data {

using nlohmann::json;

InputKind parse_input_kind(const std::string& s) {
  if (s == "single") return InputKind::Single;
  if (s == "pair") return InputKind::Pair;
  if (s == "phrase") return InputKind::Phrase;
  throw DataError(fmt::format("unknown input kind '{}' (expected single, pair or phrase)", s));
}

std::string to_string(InputKind kind) {
  switch (kind) {
    case InputKind::Single: return "single";
    case InputKind::Pair: return "pair";
    case InputKind::Phrase: return "phrase";
  }
  return "single";
}

void TaskSpec::validate() const {
  if (name.empty()) throw DataError("task name must be nonempty");
  if (labels.size() < 2) throw DataError(fmt::format("task {} needs at least 2 labels, has {}", name, labels.size()));
  std::set<std::string> seen(labels.begin(), labels.end());
  if (seen.size() != labels.size()) throw DataError(fmt::format("task {} has duplicate labels", name));
}

int TaskSpec::label_index(const std::string& label) const {
  auto it = std::find(labels.begin(), labels.end(), label);
  if (it == labels.end()) throw DataError(fmt::format("label '{}' is not in the label set of task {}", label, name));
  return static_cast<int>(it - labels.begin());
}

std::vector<int> encode_input(const Example& example, InputKind kind, const Vocabulary& vocab, std::size_t max_len,
                              bool lowercase) {
  if (max_len < 3) throw std::invalid_argument(fmt::format("max_len must be at least 3, got {}", max_len));
  std::vector<std::string> first = tokenize(example.text, lowercase);
  std::vector<int> ids;
  ids.reserve(max_len);
  ids.push_back(kClsId);
  if (kind == InputKind::Single) {
    if (first.size() > max_len - 1) first.resize(max_len - 1);
    for (const auto& t : first) ids.push_back(vocab.id(t));
  } else {
    if (!example.text_pair) throw DataError(fmt::format("{} example is missing text_pair", to_string(kind)));
    std::vector<std::string> second = tokenize(*example.text_pair, lowercase);
    if (second.empty()) throw DataError(fmt::format("{} example has an empty text_pair", to_string(kind)));
    const std::size_t budget = max_len - 2;
    std::size_t na = first.size(), nb = second.size();
    while (na + nb > budget) {
      if (na >= nb && na > 0) {
        --na;
      } else {
        --nb;
      }
    }
    for (std::size_t i = 0; i < na; ++i) ids.push_back(vocab.id(first[i]));
    ids.push_back(kSepId);
    for (std::size_t i = 0; i < nb; ++i) ids.push_back(vocab.id(second[i]));
  }
  ids.resize(max_len, kPadId);
  return ids;
}

EncodedBatch make_batch(const std::vector<Example>& examples, const TaskSpec& task, const Vocabulary& vocab,
                        const EncodingOptions& options) {
  EncodedBatch b;
  b.batch = examples.size();
  b.seq_len = options.max_len;
  b.ids.reserve(b.batch * b.seq_len);
  b.labels.reserve(b.batch);
  for (const auto& ex : examples) {
    auto ids = encode_input(ex, task.kind, vocab, options.max_len, options.lowercase);
    b.ids.insert(b.ids.end(), ids.begin(), ids.end());
    b.labels.push_back(task.label_index(ex.label));
  }
  return b;
}

namespace {

std::string label_string(const json& j) {
  if (j.is_string()) return j.get<std::string>();
  if (j.is_number_integer()) return std::to_string(j.get<long long>());
  if (j.is_boolean()) return j.get<bool>() ? "true" : "false";
  throw DataError("label must be a string, integer or boolean");
}

}  // namespace

std::vector<Example> read_jsonl(const std::filesystem::path& file) {
  std::ifstream in(file);
  if (!in) throw DataError(fmt::format("cannot open {}", file.string()));
  std::vector<Example> out;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    try {
      json j = json::parse(line);
      Example ex;
      ex.text = j.at("text").get<std::string>();
      if (j.contains("text_pair") && !j["text_pair"].is_null()) {
        ex.text_pair = j["text_pair"].get<std::string>();
      } else if (j.contains("phrase") && !j["phrase"].is_null()) {
        ex.text_pair = j["phrase"].get<std::string>();
      }
      ex.label = label_string(j.at("label"));
      out.push_back(std::move(ex));
    } catch (const json::exception& e) {
      throw DataError(fmt::format("{}:{}: {}", file.string(), lineno, e.what()));
    }
  }
  return out;
}

void write_jsonl(const std::filesystem::path& file, const std::vector<Example>& examples) {
  std::ofstream out(file);
  if (!out) throw DataError(fmt::format("cannot write {}", file.string()));
  for (const auto& ex : examples) {
    json j;
    j["text"] = ex.text;
    if (ex.text_pair) j["text_pair"] = *ex.text_pair;
    j["label"] = ex.label;
    out << j.dump() << '\n';
  }
}

TaskDataset load_task(const TaskSpec& spec) {
  spec.validate();
  TaskDataset task;
  task.spec = spec;
  auto load_split = [&](const std::string& path, std::vector<Example>& dst) {
    if (path.empty()) return;
    dst = read_jsonl(path);
    for (const auto& ex : dst) {
      spec.label_index(ex.label);
      if (spec.kind != InputKind::Single && !ex.text_pair) {
        throw DataError(fmt::format("{}: {} task example is missing text_pair", path, to_string(spec.kind)));
      }
    }
  };
  load_split(spec.train_path, task.train);
  load_split(spec.val_path, task.val);
  load_split(spec.test_path, task.test);
  if (task.spec.kind == InputKind::Phrase) task.spec.kind = InputKind::Pair;
  return task;
}

std::vector<TaskDataset> augment_pairwise(const TaskDataset& task) {
  task.spec.validate();
  const auto& labels = task.spec.labels;
  if (labels.size() == 2) return {task};
  auto restrict = [](const std::vector<Example>& src, const std::string& a, const std::string& b) {
    std::vector<Example> out;
    for (const auto& ex : src) {
      if (ex.label == a || ex.label == b) out.push_back(ex);
    }
    return out;
  };
  std::vector<TaskDataset> out;
  for (std::size_t i = 0; i < labels.size(); ++i) {
    for (std::size_t j = i + 1; j < labels.size(); ++j) {
      TaskDataset t;
      t.spec = task.spec;
      t.spec.name = fmt::format("{}[{}|{}]", task.spec.name, labels[i], labels[j]);
      t.spec.labels = {labels[i], labels[j]};
      t.train = restrict(task.train, labels[i], labels[j]);
      t.val = restrict(task.val, labels[i], labels[j]);
      t.test = restrict(task.test, labels[i], labels[j]);
      out.push_back(std::move(t));
    }
  }
  return out;
}

const TaskSpec& Manifest::find(const std::string& name) const {
  for (const auto* group : {&train, &validation, &test}) {
    for (const auto& t : *group) {
      if (t.name == name) return t;
    }
  }
  throw DataError(fmt::format("unknown task '{}'", name));
}

Manifest load_manifest(const std::filesystem::path& file) {
  std::ifstream in(file);
  if (!in) throw DataError(fmt::format("cannot open manifest {}", file.string()));
  json j;
  try {
    j = json::parse(in);
  } catch (const json::parse_error& e) {
    throw DataError(fmt::format("manifest {}: {}", file.string(), e.what()));
  }
  const auto base = file.parent_path();
  auto resolve = [&](const std::string& p) -> std::string {
    if (p.empty()) return p;
    std::filesystem::path path(p);
    return path.is_absolute() ? p : (base / path).string();
  };
  Manifest m;
  if (j.contains("vocab")) m.vocab = resolve(j["vocab"].get<std::string>());
  try {
    for (const auto& t : j.at("tasks")) {
      TaskSpec spec;
      spec.name = t.at("name").get<std::string>();
      spec.kind = parse_input_kind(t.value("kind", std::string("single")));
      for (const auto& l : t.at("labels")) spec.labels.push_back(label_string(l));
      spec.train_path = resolve(t.value("train", std::string()));
      spec.val_path = resolve(t.value("val", std::string()));
      spec.test_path = resolve(t.value("test", std::string()));
      spec.validate();
      const std::string role = t.value("role", std::string("train"));
      if (role == "train") {
        m.train.push_back(std::move(spec));
      } else if (role == "validation") {
        m.validation.push_back(std::move(spec));
      } else if (role == "test") {
        m.test.push_back(std::move(spec));
      } else {
        throw DataError(fmt::format("task {}: unknown role '{}'", t.at("name").get<std::string>(), role));
      }
    }
  } catch (const json::exception& e) {
    throw DataError(fmt::format("manifest {}: {}", file.string(), e.what()));
  }
  return m;
}

void save_manifest(const std::filesystem::path& file, const Manifest& manifest) {
  const auto base = file.parent_path();
  auto relative = [&](const std::string& p) -> std::string {
    if (p.empty()) return p;
    return std::filesystem::path(p).lexically_relative(base).string();
  };
  json j;
  if (!manifest.vocab.empty()) j["vocab"] = relative(manifest.vocab.string());
  j["tasks"] = json::array();
  auto emit = [&](const std::vector<TaskSpec>& group, const char* role) {
    for (const auto& t : group) {
      json e;
      e["name"] = t.name;
      e["kind"] = to_string(t.kind);
      e["labels"] = t.labels;
      if (!t.train_path.empty()) e["train"] = relative(t.train_path);
      if (!t.val_path.empty()) e["val"] = relative(t.val_path);
      if (!t.test_path.empty()) e["test"] = relative(t.test_path);
      e["role"] = role;
      j["tasks"].push_back(std::move(e));
    }
  };
  emit(manifest.train, "train");
  emit(manifest.validation, "validation");
  emit(manifest.test, "test");
  std::ofstream out(file);
  if (!out) throw DataError(fmt::format("cannot write manifest {}", file.string()));
  out << j.dump(2) << '\n';
}

}  // namespace leopard::data
