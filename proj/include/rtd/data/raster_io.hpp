#pragma once

#include <algorithm>
#include <array>
#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <map>
#include <string>
#include <vector>

#include "rtd/core/error.hpp"
#include "rtd/data/raster.hpp"

namespace rtd {

enum class RasterFormat { native_binary, flat_array_with_sidecar };

namespace io_detail {

inline constexpr std::array<char, 4> kMagic = {'R', 'T', 'D', 'R'};
inline constexpr std::uint32_t kVersion = 1;
inline constexpr std::uint32_t kDtypeF32 = 1;
inline constexpr std::uint32_t kFlagMask = 1u;
inline constexpr std::size_t kHeaderBytes = 4 + 6 * 4;

template <typename U>
U byteswap(U v) {
  auto bytes = std::bit_cast<std::array<unsigned char, sizeof(U)>>(v);
  std::reverse(bytes.begin(), bytes.end());
  return std::bit_cast<U>(bytes);
}

template <typename U>
U from_le(U v) {
  if constexpr (std::endian::native == std::endian::big) return byteswap(v);
  return v;
}

template <typename U>
void put_le(std::vector<char>& buf, U v) {
  v = from_le(v);
  const auto bytes = std::bit_cast<std::array<char, sizeof(U)>>(v);
  buf.insert(buf.end(), bytes.begin(), bytes.end());
}

template <typename U>
U get_le(const char* p) {
  std::array<char, sizeof(U)> bytes;
  std::memcpy(bytes.data(), p, sizeof(U));
  return from_le(std::bit_cast<U>(bytes));
}

inline std::vector<char> read_all(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  return std::vector<char>((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
}

inline void write_all(const std::filesystem::path& path, const std::vector<char>& buf) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write " + path.string());
  out.write(buf.data(), static_cast<std::streamsize>(buf.size()));
  if (!out) throw IoError("short write to " + path.string());
}

inline std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string::npos) return {};
  const auto e = s.find_last_not_of(" \t\r\n");
  return s.substr(b, e - b + 1);
}

}  // namespace io_detail

// Native layout: "RTDR", then little-endian u32 version, dtype code, C, H, W,
// flags; then C*H*W band-sequential float32; then H*W mask bytes if flag bit 0.
inline std::vector<char> encode_native(const Raster& raster) {
  using namespace io_detail;
  std::vector<char> buf(kMagic.begin(), kMagic.end());
  put_le<std::uint32_t>(buf, kVersion);
  put_le<std::uint32_t>(buf, kDtypeF32);
  put_le<std::uint32_t>(buf, static_cast<std::uint32_t>(raster.channels()));
  put_le<std::uint32_t>(buf, static_cast<std::uint32_t>(raster.height()));
  put_le<std::uint32_t>(buf, static_cast<std::uint32_t>(raster.width()));
  put_le<std::uint32_t>(buf, raster.has_mask() ? kFlagMask : 0u);
  buf.reserve(buf.size() + raster.values().size() * 4);
  for (float v : raster.values().values()) put_le<std::uint32_t>(buf, std::bit_cast<std::uint32_t>(v));
  if (raster.has_mask())
    for (std::uint8_t m : *raster.mask()) buf.push_back(static_cast<char>(m ? 1 : 0));
  return buf;
}

inline Raster decode_native(const std::vector<char>& buf, std::string id) {
  using namespace io_detail;
  if (buf.size() < kHeaderBytes || !std::equal(kMagic.begin(), kMagic.end(), buf.begin()))
    throw FormatError("missing raster magic in " + id);
  const char* p = buf.data() + 4;
  const auto version = get_le<std::uint32_t>(p);
  const auto dtype = get_le<std::uint32_t>(p + 4);
  const auto c = get_le<std::uint32_t>(p + 8);
  const auto h = get_le<std::uint32_t>(p + 12);
  const auto w = get_le<std::uint32_t>(p + 16);
  const auto flags = get_le<std::uint32_t>(p + 20);
  if (version != kVersion) throw FormatError("unsupported raster version " + std::to_string(version));
  if (dtype != kDtypeF32) throw FormatError("unsupported dtype code " + std::to_string(dtype));
  if (c == 0 || h == 0 || w == 0) throw FormatError("zero dimension in raster header of " + id);
  if ((flags & ~kFlagMask) != 0) throw FormatError("unknown header flags in " + id);
  const std::uint64_t n = std::uint64_t{c} * h * w;
  const std::uint64_t expected = kHeaderBytes + n * 4 + ((flags & kFlagMask) ? std::uint64_t{h} * w : 0);
  if (buf.size() != expected)
    throw IntegrityError("payload of " + id + " is " + std::to_string(buf.size()) + " bytes, header implies " +
                         std::to_string(expected));
  Tensor<float> values({static_cast<int>(c), static_cast<int>(h), static_cast<int>(w)});
  const char* data = buf.data() + kHeaderBytes;
  for (std::uint64_t i = 0; i < n; ++i)
    values[i] = std::bit_cast<float>(get_le<std::uint32_t>(data + 4 * i));
  std::optional<std::vector<std::uint8_t>> mask;
  if (flags & kFlagMask) {
    const char* m = data + n * 4;
    mask.emplace(std::size_t{h} * w);
    for (std::size_t i = 0; i < mask->size(); ++i) (*mask)[i] = m[i] ? 1 : 0;
  }
  return Raster(std::move(id), std::move(values), std::move(mask));
}

inline void save_raster(const Raster& raster, const std::filesystem::path& path) {
  io_detail::write_all(path, encode_native(raster));
}

// Flat array: raw samples in `path`, shape and sample type in `path` + ".hdr"
// as `key = value` lines. Keys: channels, height, width, dtype
// (float32|float64|int16|uint16), interleave (bsq|bip|bil), byte_order
// (little|big).
inline Raster load_flat_array(const std::filesystem::path& path, std::string id) {
  using namespace io_detail;
  const std::filesystem::path hdr = path.string() + ".hdr";
  std::ifstream in(hdr);
  if (!in) throw IoError("missing sidecar " + hdr.string());
  std::map<std::string, std::string> kv;
  std::string line;
  while (std::getline(in, line)) {
    if (const auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw FormatError("malformed sidecar line: " + line);
    kv[trim(line.substr(0, eq))] = trim(line.substr(eq + 1));
  }
  auto get_int = [&](const std::string& key) {
    const auto it = kv.find(key);
    if (it == kv.end()) throw FormatError("sidecar lacks " + key);
    try {
      const int v = std::stoi(it->second);
      if (v <= 0) throw FormatError("non-positive " + key);
      return v;
    } catch (const std::logic_error&) {
      throw FormatError("bad integer for " + key + ": " + it->second);
    }
  };
  const int c = get_int("channels"), h = get_int("height"), w = get_int("width");
  const std::string dtype = kv.count("dtype") ? kv["dtype"] : "float32";
  const std::string interleave = kv.count("interleave") ? kv["interleave"] : "bsq";
  const std::string order = kv.count("byte_order") ? kv["byte_order"] : "little";
  std::size_t bytes_per = 0;
  if (dtype == "float32") bytes_per = 4;
  else if (dtype == "float64") bytes_per = 8;
  else if (dtype == "int16" || dtype == "uint16") bytes_per = 2;
  else throw FormatError("unsupported dtype " + dtype);
  if (interleave != "bsq" && interleave != "bip" && interleave != "bil")
    throw FormatError("unsupported interleave " + interleave);
  if (order != "little" && order != "big") throw FormatError("unsupported byte_order " + order);

  const auto buf = read_all(path);
  const std::size_t n = static_cast<std::size_t>(c) * h * w;
  if (buf.size() != n * bytes_per)
    throw IntegrityError("flat array " + path.string() + " has " + std::to_string(buf.size()) +
                         " bytes, sidecar implies " + std::to_string(n * bytes_per));
  const bool swap = (order == "big") != (std::endian::native == std::endian::big);
  auto sample = [&](std::size_t i) -> float {
    const char* p = buf.data() + i * bytes_per;
    std::array<char, 8> b{};
    std::memcpy(b.data(), p, bytes_per);
    if (swap) std::reverse(b.begin(), b.begin() + static_cast<std::ptrdiff_t>(bytes_per));
    if (dtype == "float32") {
      float f;
      std::memcpy(&f, b.data(), 4);
      return f;
    }
    if (dtype == "float64") {
      double d;
      std::memcpy(&d, b.data(), 8);
      return static_cast<float>(d);
    }
    if (dtype == "int16") {
      std::int16_t s;
      std::memcpy(&s, b.data(), 2);
      return s;
    }
    std::uint16_t u;
    std::memcpy(&u, b.data(), 2);
    return u;
  };
  Tensor<float> values({c, h, w});
  for (int ch = 0; ch < c; ++ch)
    for (int y = 0; y < h; ++y)
      for (int x = 0; x < w; ++x) {
        std::size_t src = 0;
        if (interleave == "bsq") src = (static_cast<std::size_t>(ch) * h + y) * w + x;
        else if (interleave == "bip") src = (static_cast<std::size_t>(y) * w + x) * c + ch;
        else src = (static_cast<std::size_t>(y) * c + ch) * w + x;
        values(ch, y, x) = sample(src);
      }
  return Raster(std::move(id), std::move(values));
}

inline Raster load_raster(const std::filesystem::path& path, RasterFormat format = RasterFormat::native_binary) {
  std::string id = path.stem().string();
  if (format == RasterFormat::flat_array_with_sidecar) return load_flat_array(path, std::move(id));
  return decode_native(io_detail::read_all(path), std::move(id));
}

}  // namespace rtd
