#include "leopard/autodiff/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <sstream>

#include <fmt/format.h>

namespace leopard::ad {

namespace {

constexpr std::string_view kMagic = "LPRDCKPT";

void put_u32(std::string& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xFFu));
}

void put_u64(std::string& out, std::uint64_t v) {
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xFFu));
}

class Reader {
 public:
  explicit Reader(std::string_view bytes) : bytes_(bytes) {}

  std::string_view take(std::size_t n) {
    if (pos_ + n > bytes_.size()) throw CheckpointError("checkpoint truncated");
    auto out = bytes_.substr(pos_, n);
    pos_ += n;
    return out;
  }
  std::uint32_t u32() {
    auto b = take(4);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(static_cast<unsigned char>(b[i])) << (8 * i);
    return v;
  }
  std::uint64_t u64() {
    auto b = take(8);
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(static_cast<unsigned char>(b[i])) << (8 * i);
    return v;
  }
  bool done() const { return pos_ == bytes_.size(); }

 private:
  std::string_view bytes_;
  std::size_t pos_ = 0;
};

}  // namespace

std::uint64_t fnv1a64(std::string_view bytes) {
  std::uint64_t h = 14695981039346656037ull;
  for (char c : bytes) {
    h ^= static_cast<unsigned char>(c);
    h *= 1099511628211ull;
  }
  return h;
}

void Checkpoint::put(const std::string& path, const Tensor& t) {
  put(path, t.shape(), std::vector<double>(t.values().begin(), t.values().end()));
}

void Checkpoint::put(const std::string& path, Shape shape, std::vector<double> values) {
  if (element_count(shape) != values.size()) {
    throw CheckpointError(fmt::format("checkpoint entry {}: shape {} does not hold {} values", path,
                                      to_string(shape), values.size()));
  }
  entries_[path] = CheckpointEntry{std::move(shape), std::move(values)};
}

const CheckpointEntry& Checkpoint::get(const std::string& path) const {
  auto it = entries_.find(path);
  if (it == entries_.end()) throw CheckpointError(fmt::format("checkpoint has no entry {}", path));
  return it->second;
}

void Checkpoint::restore(const std::string& path, Tensor& t) const {
  const auto& e = get(path);
  if (e.shape != t.shape()) {
    throw CheckpointError(fmt::format("checkpoint entry {} has shape {}, expected {}", path, to_string(e.shape),
                                      to_string(t.shape())));
  }
  auto dst = t.mutable_values();
  std::copy(e.values.begin(), e.values.end(), dst.begin());
}

std::string Checkpoint::serialize() const {
  std::string out(kMagic);
  const std::string head = header.dump();
  put_u64(out, head.size());
  out += head;
  put_u64(out, entries_.size());
  for (const auto& [path, e] : entries_) {
    put_u32(out, static_cast<std::uint32_t>(path.size()));
    out += path;
    put_u32(out, static_cast<std::uint32_t>(e.shape.size()));
    for (std::size_t d : e.shape) put_u64(out, d);
    for (double v : e.values) put_u64(out, std::bit_cast<std::uint64_t>(v));
  }
  return out;
}

Checkpoint Checkpoint::deserialize(std::string_view bytes) {
  Reader r(bytes);
  if (r.take(kMagic.size()) != kMagic) throw CheckpointError("not a checkpoint (bad magic)");
  Checkpoint ckpt;
  const auto head_len = r.u64();
  try {
    ckpt.header = nlohmann::json::parse(r.take(head_len));
  } catch (const nlohmann::json::parse_error& e) {
    throw CheckpointError(fmt::format("checkpoint header is not valid JSON: {}", e.what()));
  }
  const auto count = r.u64();
  for (std::uint64_t i = 0; i < count; ++i) {
    std::string path(r.take(r.u32()));
    Shape shape(r.u32());
    for (auto& d : shape) d = r.u64();
    std::vector<double> values(element_count(shape));
    for (auto& v : values) v = std::bit_cast<double>(r.u64());
    ckpt.put(path, std::move(shape), std::move(values));
  }
  if (!r.done()) throw CheckpointError("trailing bytes after checkpoint entries");
  return ckpt;
}

void Checkpoint::save(const std::filesystem::path& file) const {
  std::ofstream out(file, std::ios::binary);
  if (!out) throw CheckpointError(fmt::format("cannot write checkpoint {}", file.string()));
  const std::string bytes = serialize();
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
}

Checkpoint Checkpoint::load(const std::filesystem::path& file) {
  std::ifstream in(file, std::ios::binary);
  if (!in) throw CheckpointError(fmt::format("cannot read checkpoint {}", file.string()));
  std::ostringstream buf;
  buf << in.rdbuf();
  return deserialize(buf.str());
}

}  // namespace leopard::ad
