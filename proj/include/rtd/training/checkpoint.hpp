#pragma once

#include <bit>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "rtd/core/error.hpp"
#include "rtd/data/raster_io.hpp"
#include "rtd/models/params.hpp"

namespace rtd {

// Checkpoint file: "RTDCKPT1", little-endian u64 metadata length, JSON
// metadata, then every tensor listed in metadata["tensors"] as raw
// little-endian float32 in listed order.
struct Checkpoint {
  nlohmann::json meta;
  std::vector<std::pair<std::string, ModelParams<float>>> groups;

  ModelParams<float>& group(const std::string& name) {
    for (auto& [n, p] : groups)
      if (n == name) return p;
    throw FormatError("checkpoint has no parameter group " + name);
  }
  const ModelParams<float>& group(const std::string& name) const {
    for (const auto& [n, p] : groups)
      if (n == name) return p;
    throw FormatError("checkpoint has no parameter group " + name);
  }
  bool has_group(const std::string& name) const {
    for (const auto& [n, p] : groups)
      if (n == name) return true;
    return false;
  }
};

namespace ckpt_detail {
inline constexpr char kMagic[8] = {'R', 'T', 'D', 'C', 'K', 'P', 'T', '1'};
}

inline std::vector<char> encode_checkpoint(const Checkpoint& ckpt) {
  using namespace io_detail;
  nlohmann::json meta = ckpt.meta;
  meta["tensors"] = nlohmann::json::array();
  for (const auto& [g, params] : ckpt.groups) {
    for (const auto& e : params.entries())
      meta["tensors"].push_back({{"group", g}, {"name", e.name}, {"shape", e.tensor.shape()},
                                 {"init", {e.init.mean, e.init.stddev}}});
    meta["seeds"][g] = params.seed();
  }
  const std::string text = meta.dump();
  std::vector<char> buf(ckpt_detail::kMagic, ckpt_detail::kMagic + 8);
  put_le<std::uint64_t>(buf, text.size());
  buf.insert(buf.end(), text.begin(), text.end());
  for (const auto& [g, params] : ckpt.groups)
    for (const auto& e : params.entries())
      for (float v : e.tensor.values()) put_le<std::uint32_t>(buf, std::bit_cast<std::uint32_t>(v));
  return buf;
}

inline Checkpoint decode_checkpoint(const std::vector<char>& buf) {
  using namespace io_detail;
  if (buf.size() < 16 || !std::equal(ckpt_detail::kMagic, ckpt_detail::kMagic + 8, buf.begin()))
    throw FormatError("not a checkpoint file");
  const auto len = get_le<std::uint64_t>(buf.data() + 8);
  if (16 + len > buf.size()) throw IntegrityError("checkpoint metadata truncated");
  Checkpoint ckpt;
  try {
    ckpt.meta = nlohmann::json::parse(buf.begin() + 16, buf.begin() + 16 + static_cast<std::ptrdiff_t>(len));
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("checkpoint metadata: ") + e.what());
  }
  std::size_t off = 16 + len;
  for (const auto& t : ckpt.meta.at("tensors")) {
    const std::string g = t.at("group");
    if (!ckpt.has_group(g)) ckpt.groups.emplace_back(g, ModelParams<float>{});
    auto& params = ckpt.group(g);
    const Shape shape = t.at("shape").get<Shape>();
    params.add(t.at("name"), shape, InitSpec{t.at("init")[0], t.at("init")[1]});
    Tensor<float>& dst = params[t.at("name")];
    if (off + dst.size() * 4 > buf.size()) throw IntegrityError("checkpoint tensor data truncated");
    for (std::size_t i = 0; i < dst.size(); ++i)
      dst[i] = std::bit_cast<float>(get_le<std::uint32_t>(buf.data() + off + 4 * i));
    off += dst.size() * 4;
  }
  if (off != buf.size()) throw IntegrityError("trailing bytes after checkpoint tensors");
  for (auto& [g, params] : ckpt.groups)
    if (ckpt.meta.contains("seeds") && ckpt.meta["seeds"].contains(g)) params.set_seed(ckpt.meta["seeds"][g]);
  ckpt.meta.erase("tensors");
  ckpt.meta.erase("seeds");
  return ckpt;
}

inline void save_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& path) {
  const auto tmp = path.string() + ".tmp";
  io_detail::write_all(tmp, encode_checkpoint(ckpt));
  std::filesystem::rename(tmp, path);
}

inline Checkpoint load_checkpoint(const std::filesystem::path& path) {
  if (!std::filesystem::exists(path)) throw IoError("checkpoint " + path.string() + " does not exist");
  return decode_checkpoint(io_detail::read_all(path));
}

// FNV-1a 64 over a byte buffer, as 16 hex digits.
inline std::string digest_hex(const std::vector<char>& bytes) {
  std::uint64_t h = 1469598103934665603ull;
  for (char c : bytes) {
    h ^= static_cast<unsigned char>(c);
    h *= 1099511628211ull;
  }
  static const char* hex = "0123456789abcdef";
  std::string s(16, '0');
  for (int i = 15; i >= 0; --i, h >>= 4) s[i] = hex[h & 15];
  return s;
}

inline std::string file_digest(const std::filesystem::path& path) { return digest_hex(io_detail::read_all(path)); }

}  // namespace rtd
