#pragma once

#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <map>
#include <string>
#include <vector>

#include <zlib.h>

#include "rtd/core/error.hpp"

namespace rtd {

// Numeric array read from a MATLAB level-5 file, values widened to double in
// MATLAB's column-major order.
struct MatArray {
  std::string name;
  std::vector<int> dims;
  std::vector<double> values;

  std::size_t numel() const { return values.size(); }
  int dim(std::size_t i) const { return i < dims.size() ? dims[i] : 1; }
  double at(int i, int j, int k = 0) const {
    return values[static_cast<std::size_t>(i) + static_cast<std::size_t>(dim(0)) * (j + static_cast<std::size_t>(dim(1)) * k)];
  }
};

namespace mat_detail {

enum : std::uint32_t {
  miINT8 = 1, miUINT8 = 2, miINT16 = 3, miUINT16 = 4, miINT32 = 5, miUINT32 = 6,
  miSINGLE = 7, miDOUBLE = 9, miINT64 = 12, miUINT64 = 13, miMATRIX = 14, miCOMPRESSED = 15,
};

template <typename T>
T load(const std::uint8_t* p) {
  T v;
  std::memcpy(&v, p, sizeof(T));
  return v;
}

inline std::size_t element_size(std::uint32_t type) {
  switch (type) {
    case miINT8: case miUINT8: return 1;
    case miINT16: case miUINT16: return 2;
    case miINT32: case miUINT32: case miSINGLE: return 4;
    case miDOUBLE: case miINT64: case miUINT64: return 8;
    default: return 0;
  }
}

inline double widen(std::uint32_t type, const std::uint8_t* p) {
  switch (type) {
    case miINT8: return load<std::int8_t>(p);
    case miUINT8: return load<std::uint8_t>(p);
    case miINT16: return load<std::int16_t>(p);
    case miUINT16: return load<std::uint16_t>(p);
    case miINT32: return load<std::int32_t>(p);
    case miUINT32: return load<std::uint32_t>(p);
    case miSINGLE: return load<float>(p);
    case miDOUBLE: return load<double>(p);
    case miINT64: return static_cast<double>(load<std::int64_t>(p));
    case miUINT64: return static_cast<double>(load<std::uint64_t>(p));
  }
  throw FormatError("unsupported MAT data type " + std::to_string(type));
}

struct Element {
  std::uint32_t type = 0;
  const std::uint8_t* data = nullptr;
  std::size_t size = 0;
  std::size_t next = 0;  // offset of the following element
};

inline Element read_element(const std::vector<std::uint8_t>& buf, std::size_t pos, const std::string& where) {
  if (pos + 8 > buf.size()) throw FormatError("truncated MAT element in " + where);
  Element e;
  const auto first = load<std::uint32_t>(buf.data() + pos);
  if (first >> 16) {
    e.type = first & 0xffffu;
    e.size = first >> 16;
    if (e.size > 4) throw FormatError("bad small MAT element in " + where);
    e.data = buf.data() + pos + 4;
    e.next = pos + 8;
    return e;
  }
  e.type = first;
  e.size = load<std::uint32_t>(buf.data() + pos + 4);
  if (pos + 8 + e.size > buf.size()) throw FormatError("truncated MAT element in " + where);
  e.data = buf.data() + pos + 8;
  e.next = pos + 8 + e.size;
  if (e.type != miCOMPRESSED) e.next = pos + 8 + ((e.size + 7) / 8) * 8;
  return e;
}

inline std::vector<std::uint8_t> inflate_all(const std::uint8_t* data, std::size_t size, const std::string& where) {
  z_stream zs{};
  if (inflateInit(&zs) != Z_OK) throw FormatError("zlib init failed for " + where);
  zs.next_in = const_cast<Bytef*>(data);
  zs.avail_in = static_cast<uInt>(size);
  std::vector<std::uint8_t> out;
  std::uint8_t chunk[1 << 16];
  int rc = Z_OK;
  while (rc != Z_STREAM_END) {
    zs.next_out = chunk;
    zs.avail_out = sizeof(chunk);
    rc = inflate(&zs, Z_NO_FLUSH);
    if (rc != Z_OK && rc != Z_STREAM_END) {
      inflateEnd(&zs);
      throw FormatError("corrupt compressed MAT element in " + where);
    }
    out.insert(out.end(), chunk, chunk + (sizeof(chunk) - zs.avail_out));
    if (rc == Z_OK && zs.avail_in == 0 && zs.avail_out != 0) {
      inflateEnd(&zs);
      throw FormatError("truncated compressed MAT element in " + where);
    }
  }
  inflateEnd(&zs);
  return out;
}

// Parses one miMATRIX payload; returns false for non-numeric or sparse arrays.
inline bool parse_matrix(const std::vector<std::uint8_t>& buf, std::size_t begin, std::size_t end, MatArray& out,
                         const std::string& where) {
  const auto flags = read_element(buf, begin, where);
  if (flags.type != miUINT32 || flags.size < 8) throw FormatError("bad MAT array flags in " + where);
  const auto cls = load<std::uint32_t>(flags.data) & 0xffu;
  const bool complex = (load<std::uint32_t>(flags.data) >> 11) & 1u;
  if (cls < 6 || cls > 15) return false;

  const auto dims = read_element(buf, flags.next, where);
  if (dims.type != miINT32) throw FormatError("bad MAT dimensions in " + where);
  out.dims.clear();
  std::size_t numel = 1;
  for (std::size_t i = 0; i < dims.size / 4; ++i) {
    const auto d = load<std::int32_t>(dims.data + 4 * i);
    if (d < 0) throw FormatError("negative MAT dimension in " + where);
    out.dims.push_back(d);
    numel *= static_cast<std::size_t>(d);
  }

  const auto name = read_element(buf, dims.next, where);
  out.name.assign(reinterpret_cast<const char*>(name.data), name.size);

  const auto real = read_element(buf, name.next, where);
  if (real.next > end + 7) throw FormatError("MAT array overruns its element in " + where);
  const std::size_t es = element_size(real.type);
  if (es == 0 || real.size != numel * es) throw FormatError("MAT array " + out.name + " has inconsistent size");
  if (complex) throw FormatError("complex MAT array " + out.name + " is not supported");
  out.values.resize(numel);
  for (std::size_t i = 0; i < numel; ++i) out.values[i] = widen(real.type, real.data + i * es);
  return true;
}

inline void parse_elements(const std::vector<std::uint8_t>& buf, std::size_t pos, std::map<std::string, MatArray>& vars,
                           const std::string& where) {
  while (pos + 8 <= buf.size()) {
    const auto e = read_element(buf, pos, where);
    if (e.type == miCOMPRESSED) {
      const auto inner = inflate_all(e.data, e.size, where);
      parse_elements(inner, 0, vars, where);
    } else if (e.type == miMATRIX) {
      const auto begin = static_cast<std::size_t>(e.data - buf.data());
      MatArray a;
      if (e.size > 0 && parse_matrix(buf, begin, begin + e.size, a, where)) vars[a.name] = std::move(a);
    }
    pos = e.next;
  }
}

}  // namespace mat_detail

// Every numeric, non-sparse variable of a little-endian MAT v5 file.
inline std::map<std::string, MatArray> read_mat_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  std::vector<std::uint8_t> buf((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  const std::string where = path.string();
  if (buf.size() < 128) throw FormatError(where + " is too short for a MAT file");
  if (std::string(buf.begin(), buf.begin() + 6) != "MATLAB" || buf[126] != 'I' || buf[127] != 'M')
    throw FormatError(where + " is not a little-endian MAT v5 file");
  if (mat_detail::load<std::uint16_t>(buf.data() + 124) == 0x0200)
    throw FormatError(where + " is a MAT v7.3 (HDF5) file; save it as v5 or v7");
  std::map<std::string, MatArray> vars;
  mat_detail::parse_elements(buf, 128, vars, where);
  return vars;
}

inline MatArray read_mat_variable(const std::filesystem::path& path, const std::string& name) {
  auto vars = read_mat_file(path);
  auto it = vars.find(name);
  if (it == vars.end()) throw FormatError(path.string() + " has no numeric variable " + name);
  return std::move(it->second);
}

}  // namespace rtd
