#pragma once

// Tensor container files:
//
//   bytes 0..3   magic "NTF1"
//   bytes 4..7   header length N, u32 little-endian
//   bytes 8..    N bytes of UTF-8 JSON: {"dims": [...], "dtype": "f32" | "u8",
//                "layout": "row-major-channels-last", "name": ..., "meta"?: {...}}
//   then         product(dims) * sizeof(dtype) bytes of little-endian payload

#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "andi/error.hpp"
#include "andi/grid.hpp"
#include "json.hpp"

namespace andi::io {

using json = nlohmann::json;

inline constexpr char magic[4] = {'N', 'T', 'F', '1'};
inline constexpr const char* layout_name = "row-major-channels-last";

enum class DType { f32, u8 };

struct TensorRecord {
  std::string name;
  std::vector<std::int64_t> dims;
  DType dtype = DType::f32;
  std::vector<float> f32;
  std::vector<std::uint8_t> u8;
  json meta;  // optional; omitted from the header when null

  std::size_t element_count() const {
    std::size_t n = 1;
    for (auto d : dims) n *= static_cast<std::size_t>(d);
    return n;
  }
  bool operator==(const TensorRecord&) const = default;
};

namespace detail {

inline void put_u32(std::string& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xffu));
}

inline std::uint32_t get_u32(const unsigned char* p) {
  return static_cast<std::uint32_t>(p[0]) | (static_cast<std::uint32_t>(p[1]) << 8) |
         (static_cast<std::uint32_t>(p[2]) << 16) | (static_cast<std::uint32_t>(p[3]) << 24);
}

inline void append_f32_le(std::string& out, const std::vector<float>& v) {
  const std::size_t start = out.size();
  out.resize(start + v.size() * 4);
  if constexpr (std::endian::native == std::endian::little) {
    std::memcpy(out.data() + start, v.data(), v.size() * 4);
  } else {
    for (std::size_t i = 0; i < v.size(); ++i) {
      const auto bits = std::bit_cast<std::uint32_t>(v[i]);
      for (int b = 0; b < 4; ++b) out[start + i * 4 + b] = static_cast<char>((bits >> (8 * b)) & 0xffu);
    }
  }
}

}  // namespace detail

inline std::string encode(const TensorRecord& rec) {
  for (auto d : rec.dims)
    if (d < 0) throw FormatError("tensor '" + rec.name + "': negative dimension");
  const std::size_t n = rec.element_count();
  if ((rec.dtype == DType::f32 ? rec.f32.size() : rec.u8.size()) != n)
    throw FormatError("tensor '" + rec.name + "': payload does not match dims");
  json header = {{"dims", rec.dims},
                 {"dtype", rec.dtype == DType::f32 ? "f32" : "u8"},
                 {"layout", layout_name},
                 {"name", rec.name}};
  if (!rec.meta.is_null()) header["meta"] = rec.meta;
  const std::string h = header.dump();
  std::string out(magic, 4);
  detail::put_u32(out, static_cast<std::uint32_t>(h.size()));
  out += h;
  if (rec.dtype == DType::f32)
    detail::append_f32_le(out, rec.f32);
  else
    out.append(reinterpret_cast<const char*>(rec.u8.data()), rec.u8.size());
  return out;
}

inline TensorRecord decode(const std::string& bytes) {
  const auto* p = reinterpret_cast<const unsigned char*>(bytes.data());
  if (bytes.size() < 8 || std::memcmp(bytes.data(), magic, 4) != 0) throw FormatError("tensor container: bad magic");
  const std::uint32_t hlen = detail::get_u32(p + 4);
  if (bytes.size() - 8 < hlen) throw FormatError("tensor container: truncated header");
  json header;
  try {
    header = json::parse(bytes.begin() + 8, bytes.begin() + 8 + hlen);
  } catch (const json::exception& e) {
    throw FormatError(std::string("tensor container: malformed header: ") + e.what());
  }
  TensorRecord rec;
  try {
    rec.name = header.at("name").get<std::string>();
    rec.dims = header.at("dims").get<std::vector<std::int64_t>>();
    const auto dtype = header.at("dtype").get<std::string>();
    if (dtype == "f32")
      rec.dtype = DType::f32;
    else if (dtype == "u8")
      rec.dtype = DType::u8;
    else
      throw FormatError("tensor container: unsupported dtype '" + dtype + "'");
    if (header.at("layout").get<std::string>() != layout_name) throw FormatError("tensor container: unsupported layout");
    if (header.contains("meta")) rec.meta = header.at("meta");
  } catch (const json::exception& e) {
    throw FormatError(std::string("tensor container: bad header field: ") + e.what());
  }
  for (auto d : rec.dims)
    if (d < 0) throw FormatError("tensor container: negative dimension");
  const std::size_t n = rec.element_count();
  const std::size_t width = rec.dtype == DType::f32 ? 4 : 1;
  const std::size_t payload = bytes.size() - 8 - hlen;
  if (payload != n * width) throw FormatError("tensor container: payload size does not match dims");
  const unsigned char* data = p + 8 + hlen;
  if (rec.dtype == DType::f32) {
    rec.f32.resize(n);
    for (std::size_t i = 0; i < n; ++i) rec.f32[i] = std::bit_cast<float>(detail::get_u32(data + 4 * i));
  } else {
    rec.u8.assign(data, data + n);
  }
  return rec;
}

inline void write_file(const std::filesystem::path& path, const std::string& bytes) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw IoError("cannot open '" + path.string() + "' for writing");
  f.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!f) throw IoError("failed writing '" + path.string() + "'");
}

inline std::string read_file(const std::filesystem::path& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot open '" + path.string() + "'");
  std::ostringstream ss;
  ss << f.rdbuf();
  return ss.str();
}

inline void write_tensor(const std::filesystem::path& path, const TensorRecord& rec) { write_file(path, encode(rec)); }

inline TensorRecord read_tensor(const std::filesystem::path& path) {
  try {
    return decode(read_file(path));
  } catch (const FormatError& e) {
    throw FormatError(path.string() + ": " + e.what());
  }
}

// FNV-1a 64-bit, used for dataset and artifact checksums.
inline std::uint64_t fnv1a64(const std::string& bytes) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : bytes) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

inline std::string hex64(std::uint64_t v) {
  static const char* digits = "0123456789abcdef";
  std::string s(16, '0');
  for (int i = 15; i >= 0; --i, v >>= 4) s[static_cast<std::size_t>(i)] = digits[v & 0xf];
  return s;
}

inline std::string file_checksum(const std::filesystem::path& path) { return hex64(fnv1a64(read_file(path))); }

// Typed helpers.

inline TensorRecord to_record(const Volume& v, std::string name) {
  return {std::move(name), {v.height, v.width, v.depth, v.channels}, DType::f32, v.data, {}, {}};
}

inline TensorRecord to_record(const ScalarVolume& v, std::string name) {
  return {std::move(name), {v.height, v.width, v.depth}, DType::f32, v.data, {}, {}};
}

inline TensorRecord to_record(const SegMask& v, std::string name) {
  return {std::move(name), {v.height, v.width, v.depth}, DType::u8, {}, v.data, {}};
}

inline TensorRecord to_record(const std::vector<Slice>& slices, std::string name) {
  if (slices.empty()) throw InvalidArgument("cannot store an empty slice stack");
  const auto& f = slices.front();
  TensorRecord rec{std::move(name), {static_cast<std::int64_t>(slices.size()), f.height, f.width, f.channels}, DType::f32, {}, {}, {}};
  rec.f32.reserve(slices.size() * f.size());
  for (const auto& s : slices) {
    if (!s.same_shape(f)) throw InvalidArgument("slice stack has inconsistent shapes");
    rec.f32.insert(rec.f32.end(), s.data.begin(), s.data.end());
  }
  return rec;
}

namespace detail {

inline void expect(const TensorRecord& r, DType dtype, std::size_t rank, const char* what) {
  if (r.dtype != dtype || r.dims.size() != rank)
    throw FormatError(std::string("tensor '") + r.name + "' is not a " + what);
  for (auto d : r.dims)
    if (d < 1) throw FormatError(std::string("tensor '") + r.name + "' has an empty dimension");
}

}  // namespace detail

inline Volume volume_from(const TensorRecord& r) {
  detail::expect(r, DType::f32, 4, "f32 volume (H, W, D, C)");
  Volume v(static_cast<int>(r.dims[0]), static_cast<int>(r.dims[1]), static_cast<int>(r.dims[2]), static_cast<int>(r.dims[3]));
  v.data = r.f32;
  return v;
}

inline ScalarVolume scalar_volume_from(const TensorRecord& r) {
  detail::expect(r, DType::f32, 3, "f32 grid (H, W, D)");
  ScalarVolume v(static_cast<int>(r.dims[0]), static_cast<int>(r.dims[1]), static_cast<int>(r.dims[2]));
  v.data = r.f32;
  return v;
}

inline SegMask mask_from(const TensorRecord& r) {
  detail::expect(r, DType::u8, 3, "u8 mask (H, W, D)");
  SegMask m(static_cast<int>(r.dims[0]), static_cast<int>(r.dims[1]), static_cast<int>(r.dims[2]));
  m.data = r.u8;
  return m;
}

inline std::vector<Slice> slices_from(const TensorRecord& r) {
  detail::expect(r, DType::f32, 4, "f32 slice stack (N, H, W, C)");
  std::vector<Slice> out;
  const int h = static_cast<int>(r.dims[1]), w = static_cast<int>(r.dims[2]), c = static_cast<int>(r.dims[3]);
  const std::size_t per = static_cast<std::size_t>(h) * w * c;
  for (std::int64_t i = 0; i < r.dims[0]; ++i) {
    Slice s(h, w, c);
    std::copy(r.f32.begin() + static_cast<std::ptrdiff_t>(i * per), r.f32.begin() + static_cast<std::ptrdiff_t>((i + 1) * per), s.data.begin());
    out.push_back(std::move(s));
  }
  return out;
}

// Binary 8-bit grayscale image (PGM, P5).
inline std::string encode_pgm(int height, int width, const std::vector<std::uint8_t>& pixels) {
  std::string out = "P5\n" + std::to_string(width) + " " + std::to_string(height) + "\n255\n";
  out.append(reinterpret_cast<const char*>(pixels.data()), pixels.size());
  return out;
}

}  // namespace andi::io
