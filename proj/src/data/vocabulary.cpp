#include "leopard/data/vocabulary.hpp"

#include <algorithm>
#include <cctype>
#include <fstream>
#include <stdexcept>

#include <fmt/format.h>

namespace leopard::data {

std::vector<std::string> tokenize(std::string_view text, bool lowercase) {
  std::vector<std::string> out;
  std::size_t i = 0;
  while (i < text.size()) {
    while (i < text.size() && std::isspace(static_cast<unsigned char>(text[i]))) ++i;
    const std::size_t start = i;
    while (i < text.size() && !std::isspace(static_cast<unsigned char>(text[i]))) ++i;
    if (i > start) {
      std::string tok(text.substr(start, i - start));
      if (lowercase) {
        std::transform(tok.begin(), tok.end(), tok.begin(),
                       [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
      }
      out.push_back(std::move(tok));
    }
  }
  return out;
}

Vocabulary::Vocabulary() {
  for (const char* reserved : {"[PAD]", "[UNK]", "[CLS]", "[SEP]"}) {
    ids_.emplace(reserved, static_cast<int>(tokens_.size()));
    tokens_.emplace_back(reserved);
  }
}

Vocabulary Vocabulary::from_tokens(const std::vector<std::string>& tokens) {
  Vocabulary v;
  for (const auto& t : tokens) v.add(t);
  return v;
}

Vocabulary Vocabulary::load(const std::filesystem::path& file) {
  std::ifstream in(file);
  if (!in) throw std::runtime_error(fmt::format("cannot open vocabulary {}", file.string()));
  Vocabulary v;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty() || line.find_first_of(" \t") != std::string::npos) {
      throw std::runtime_error(fmt::format("{}:{}: expected exactly one token per line", file.string(), lineno));
    }
    v.add(line);
  }
  return v;
}

void Vocabulary::save(const std::filesystem::path& file) const {
  std::ofstream out(file);
  if (!out) throw std::runtime_error(fmt::format("cannot write vocabulary {}", file.string()));
  for (std::size_t i = kReservedCount; i < tokens_.size(); ++i) out << tokens_[i] << '\n';
}

int Vocabulary::add(std::string_view token) {
  if (token.empty()) throw std::invalid_argument("vocabulary tokens must be nonempty");
  auto [it, inserted] = ids_.emplace(std::string(token), static_cast<int>(tokens_.size()));
  if (!inserted) {
    throw std::invalid_argument(fmt::format("token '{}' already has id {}", token, it->second));
  }
  tokens_.emplace_back(token);
  return it->second;
}

int Vocabulary::id(std::string_view token) const {
  auto it = ids_.find(std::string(token));
  return it == ids_.end() ? kUnkId : it->second;
}

bool Vocabulary::contains(std::string_view token) const { return ids_.count(std::string(token)) != 0; }

const std::string& Vocabulary::token(int id) const {
  if (id < 0 || static_cast<std::size_t>(id) >= tokens_.size()) {
    throw std::out_of_range(fmt::format("token id {} out of range [0, {})", id, tokens_.size()));
  }
  return tokens_[static_cast<std::size_t>(id)];
}

}  // namespace leopard::data
