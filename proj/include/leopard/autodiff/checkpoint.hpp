#pragma once

// Flat parameter archive.
//
// Layout (all integers little-endian):
//   magic    "LPRDCKPT"                8 bytes
//   u64      header length H
//   H bytes  JSON header (config_hash, seed, free-form metadata)
//   u64      entry count
//   per entry, sorted by path:
//     u32 path length, path bytes (UTF-8)
//     u32 rank, rank x u64 dims
//     product(dims) x f64 payload

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

#include "leopard/autodiff/tensor.hpp"

namespace leopard::ad {

struct CheckpointEntry {
  Shape shape;
  std::vector<double> values;
};

class CheckpointError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class Checkpoint {
 public:
  nlohmann::json header = nlohmann::json::object();

  void put(const std::string& path, const Tensor& t);
  void put(const std::string& path, Shape shape, std::vector<double> values);
  bool contains(const std::string& path) const { return entries_.count(path) != 0; }
  const CheckpointEntry& get(const std::string& path) const;
  // Copies the stored values into t; shapes must agree.
  void restore(const std::string& path, Tensor& t) const;
  const std::map<std::string, CheckpointEntry>& entries() const { return entries_; }

  std::string serialize() const;
  static Checkpoint deserialize(std::string_view bytes);

  void save(const std::filesystem::path& file) const;
  static Checkpoint load(const std::filesystem::path& file);

 private:
  std::map<std::string, CheckpointEntry> entries_;
};

std::uint64_t fnv1a64(std::string_view bytes);

}  // namespace leopard::ad
