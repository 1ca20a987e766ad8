#include "leopard/harness/profile.hpp"

#include <fstream>
#include <functional>
#include <map>
#include <sstream>

#include <boost/property_tree/ini_parser.hpp>
#include <boost/property_tree/ptree.hpp>
#include <fmt/format.h>

namespace leopard::harness {

namespace pt = boost::property_tree;

namespace {

std::vector<std::size_t> parse_list(const std::string& s) {
  std::vector<std::size_t> out;
  std::stringstream in(s);
  std::string item;
  while (std::getline(in, item, ',')) {
    const auto first = item.find_first_not_of(" \t");
    if (first == std::string::npos) continue;
    std::size_t pos = 0;
    const long long v = std::stoll(item.substr(first), &pos);
    if (v <= 0) throw std::invalid_argument(fmt::format("list value '{}' must be positive", item));
    out.push_back(static_cast<std::size_t>(v));
  }
  if (out.empty()) throw std::invalid_argument("empty list");
  return out;
}

bool parse_bool(const std::string& s) {
  if (s == "true" || s == "True" || s == "1" || s == "yes") return true;
  if (s == "false" || s == "False" || s == "0" || s == "no") return false;
  throw std::invalid_argument(fmt::format("'{}' is not a boolean", s));
}

using Setter = std::function<void(const std::string&)>;

template <typename T>
Setter number(T& field) {
  return [&field](const std::string& v) {
    std::size_t pos = 0;
    if constexpr (std::is_floating_point_v<T>) {
      field = static_cast<T>(std::stod(v, &pos));
    } else {
      const long long x = std::stoll(v, &pos);
      if (x < 0) throw std::invalid_argument("must be non-negative");
      field = static_cast<T>(x);
    }
    if (pos != v.size()) throw std::invalid_argument(fmt::format("trailing characters in '{}'", v));
  };
}

Setter boolean(bool& field) {
  return [&field](const std::string& v) { field = parse_bool(v); };
}

}  // namespace

data::EncodingOptions Profile::encoding() const {
  data::EncodingOptions o = meta.encoding;
  o.max_len = leopard.encoder.max_len;
  return o;
}

void Profile::validate() const {
  leopard.validate();
  meta.validate();
  baseline.validate();
  if (eval.seeds == 0) throw std::invalid_argument("eval needs at least one seed");
}

Profile parse_profile(const std::string& text) {
  pt::ptree tree;
  std::istringstream in(text);
  pt::read_ini(in, tree);

  Profile p;
  auto& e = p.leopard.encoder;
  auto& l = p.leopard;
  auto& m = p.meta;
  auto& b = p.baseline;
  auto& f = p.finetune;
  bool lowercase = false;
  std::map<std::string, std::map<std::string, Setter>> keys{
      {"encoder",
       {{"max_len", number(e.max_len)},
        {"layers", number(e.layers)},
        {"hidden", number(e.hidden)},
        {"heads", number(e.heads)},
        {"ff", number(e.ff)},
        {"attention_dropout", number(e.attention_dropout)},
        {"hidden_dropout", number(e.hidden_dropout)},
        {"cls_dropout", number(e.cls_dropout)},
        {"init_std", number(e.init_std)},
        {"lowercase", boolean(lowercase)}}},
      {"leopard",
       {{"class_embedding_size", number(l.class_embedding)},
        {"min_adapted_layer", number(l.nu)},
        {"train_word_embeddings", boolean(l.train_word_embeddings)},
        {"generator_output_tanh", boolean(l.generator_output_tanh)},
        {"alpha_init", number(l.alpha_init)},
        {"zero_softmax", boolean(l.zero_softmax)}}},
      {"meta",
       {{"outer_lr", number(m.outer_lr)},
        {"adaptation_steps", number(m.adaptation_steps)},
        {"prose_steps", boolean(m.prose_steps)},
        {"batch_size", number(m.k)},
        {"queries_per_label", number(m.queries_per_label)},
        {"tasks_per_batch", number(m.tasks_per_batch)},
        {"episodes", number(m.episodes)},
        {"warmup", number(m.warmup_fraction)},
        {"eval_every", number(m.eval_every)},
        {"patience", number(m.patience)},
        {"eval_episodes", number(m.eval_episodes)},
        {"dropout", boolean(m.dropout)},
        {"seed", number(m.seed)},
        {"data_sampling", [&m](const std::string& v) { m.sampling = data::parse_task_sampling(v); }}}},
      {"baseline",
       {{"lr", number(b.lr)},
        {"steps", number(b.steps)},
        {"warmup", number(b.warmup_fraction)},
        {"batch_size", number(b.batch_size)},
        {"k", number(b.k)},
        {"queries_per_label", number(b.queries_per_label)},
        {"dropout", boolean(b.dropout)},
        {"seed", number(b.seed)},
        {"data_sampling", [&b](const std::string& v) { b.sampling = data::parse_task_sampling(v); }}}},
      {"finetune",
       {{"leopard_epochs", number(f.leopard_epochs)},
        {"epochs", number(f.epochs)},
        {"full_lr", number(f.full_lr)},
        {"softmax_lr", number(f.softmax_lr)},
        {"reuse_lr", number(f.reuse_lr)}}},
      {"eval",
       {{"k", [&p](const std::string& v) { p.eval.k = parse_list(v); }},
        {"seeds", number(p.eval.seeds)},
        {"epoch_grid", [&p](const std::string& v) { p.eval.epoch_grid = parse_list(v); }}}},
  };

  for (const auto& [section, body] : tree) {
    auto sec = keys.find(section);
    if (sec == keys.end()) throw std::invalid_argument(fmt::format("unknown profile section [{}]", section));
    for (const auto& [key, value] : body) {
      auto setter = sec->second.find(key);
      if (setter == sec->second.end()) {
        throw std::invalid_argument(fmt::format("unknown profile key {}.{}", section, key));
      }
      try {
        setter->second(value.data());
      } catch (const std::exception& ex) {
        throw std::invalid_argument(fmt::format("profile key {}.{} = '{}': {}", section, key, value.data(), ex.what()));
      }
    }
  }
  m.encoding.lowercase = lowercase;
  m.encoding.max_len = e.max_len;
  b.encoding = m.encoding;
  p.validate();
  return p;
}

Profile load_profile(const std::filesystem::path& file) {
  std::ifstream in(file);
  if (!in) throw std::runtime_error(fmt::format("cannot open profile {}", file.string()));
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_profile(ss.str());
}

}  // namespace leopard::harness
