#pragma once

#include <filesystem>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

namespace leopard::data {

inline constexpr int kPadId = 0;
inline constexpr int kUnkId = 1;
inline constexpr int kClsId = 2;
inline constexpr int kSepId = 3;
inline constexpr int kReservedCount = 4;

// Whitespace tokenizer. Case is preserved unless lowercase is set.
std::vector<std::string> tokenize(std::string_view text, bool lowercase = false);

// Token <-> id map with [PAD]=0, [UNK]=1, [CLS]=2, [SEP]=3 reserved. The file
// form lists one token per line; line n (0-based) receives id n + 4.
class Vocabulary {
 public:
  Vocabulary();

  static Vocabulary from_tokens(const std::vector<std::string>& tokens);
  static Vocabulary load(const std::filesystem::path& file);
  void save(const std::filesystem::path& file) const;

  // Adds a new token and returns its id; duplicates and reserved names throw.
  int add(std::string_view token);
  int id(std::string_view token) const;  // kUnkId when absent
  bool contains(std::string_view token) const;
  const std::string& token(int id) const;
  std::size_t size() const { return tokens_.size(); }

 private:
  std::vector<std::string> tokens_;
  std::unordered_map<std::string, int> ids_;
};

}  // namespace leopard::data
