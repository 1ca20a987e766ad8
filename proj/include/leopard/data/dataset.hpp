#pragma once

#include <cstddef>
#include <filesystem>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "leopard/data/vocabulary.hpp"

namespace leopard::data {

class DataError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Phrase inputs are (sentence, phrase) pairs; they are materialized as Pair at load time.
enum class InputKind { Single, Pair, Phrase };

InputKind parse_input_kind(const std::string& s);
std::string to_string(InputKind kind);

struct Example {
  std::string text;
  std::optional<std::string> text_pair;
  std::string label;

  bool operator==(const Example&) const = default;
};

struct TaskSpec {
  std::string name;
  InputKind kind = InputKind::Single;
  std::vector<std::string> labels;
  std::string train_path;
  std::string val_path;
  std::string test_path;

  void validate() const;
  int label_index(const std::string& label) const;  // throws DataError when absent
};

struct TaskDataset {
  TaskSpec spec;
  std::vector<Example> train;
  std::vector<Example> val;
  std::vector<Example> test;

  std::size_t size() const { return train.size(); }
  std::size_t num_labels() const { return spec.labels.size(); }
};

// Token ids for one example: [CLS] a... for single inputs, [CLS] a... [SEP] b...
// for pairs, truncated longest-first so that [CLS] and at least one token after
// [SEP] survive, then right-padded with [PAD] to exactly max_len.
std::vector<int> encode_input(const Example& example, InputKind kind, const Vocabulary& vocab, std::size_t max_len,
                              bool lowercase = false);

struct EncodedBatch {
  std::vector<int> ids;  // batch * seq_len, row-major
  std::size_t batch = 0;
  std::size_t seq_len = 0;
  std::vector<int> labels;  // indices into the task's label list
};

struct EncodingOptions {
  std::size_t max_len = 32;
  bool lowercase = false;
};

EncodedBatch make_batch(const std::vector<Example>& examples, const TaskSpec& task, const Vocabulary& vocab,
                        const EncodingOptions& options);

std::vector<Example> read_jsonl(const std::filesystem::path& file);
void write_jsonl(const std::filesystem::path& file, const std::vector<Example>& examples);

// Reads the splits named by the TaskSpec (empty paths are skipped), checks that
// every label belongs to its label list, and rewrites phrase tasks as pair tasks.
TaskDataset load_task(const TaskSpec& spec);

// Every unordered label pair as its own binary task; a binary task comes back unchanged.
std::vector<TaskDataset> augment_pairwise(const TaskDataset& task);

enum class TaskRole { Train, Validation, Test };

struct Manifest {
  std::filesystem::path vocab;
  std::vector<TaskSpec> train;
  std::vector<TaskSpec> validation;
  std::vector<TaskSpec> test;

  const TaskSpec& find(const std::string& name) const;
};

// JSON manifest: {"vocab": "...", "tasks": [{"name", "kind", "labels", "train",
// "val", "test", "role"}]}. Relative paths resolve against the manifest's directory.
Manifest load_manifest(const std::filesystem::path& file);
void save_manifest(const std::filesystem::path& file, const Manifest& manifest);

}  // namespace leopard::data
