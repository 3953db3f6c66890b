#pragma once

// File formats: key-value text, raw little-endian rasters, uncompressed
// single-channel TIFF, and the axes sidecar used for gridded images.

#include <algorithm>
#include <array>
#include <bit>
#include <cstdint>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <limits>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "gixd/core.hpp"

namespace gixd {

namespace detail {

inline std::string trim(std::string_view s) {
  const auto *ws = " \t\r\n";
  const auto b = s.find_first_not_of(ws);
  if (b == std::string_view::npos)
    return {};
  const auto e = s.find_last_not_of(ws);
  return std::string(s.substr(b, e - b + 1));
}

inline std::vector<std::string> split_ws(std::string_view s) {
  std::vector<std::string> out;
  std::istringstream in{std::string(s)};
  std::string tok;
  while (in >> tok)
    out.push_back(tok);
  return out;
}

inline double parse_double(const std::string &tok, const std::string &context) {
  try {
    std::size_t used = 0;
    const double v = std::stod(tok, &used);
    if (used != tok.size())
      throw std::invalid_argument(tok);
    return v;
  } catch (const std::exception &) {
    throw DataError(context + ": not a number: '" + tok + "'");
  }
}

inline long long parse_int(const std::string &tok, const std::string &context) {
  try {
    std::size_t used = 0;
    const long long v = std::stoll(tok, &used);
    if (used != tok.size())
      throw std::invalid_argument(tok);
    return v;
  } catch (const std::exception &) {
    throw DataError(context + ": not an integer: '" + tok + "'");
  }
}

/// printf-style "%.9g" rendering used by every text format.
inline std::string fmt9(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.9g", v);
  return buf;
}

inline std::string fmt17(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

template <class T>
T byteswap_value(T v) {
  std::array<unsigned char, sizeof(T)> b;
  std::memcpy(b.data(), &v, sizeof(T));
  std::reverse(b.begin(), b.end());
  std::memcpy(&v, b.data(), sizeof(T));
  return v;
}

template <class T>
void put_le(std::vector<unsigned char> &out, T v) {
  if constexpr (std::endian::native == std::endian::big)
    v = byteswap_value(v);
  const auto at = out.size();
  out.resize(at + sizeof(T));
  std::memcpy(out.data() + at, &v, sizeof(T));
}

template <class T>
T get_as(const unsigned char *p, bool little) {
  T v;
  std::memcpy(&v, p, sizeof(T));
  if ((std::endian::native == std::endian::little) != little)
    v = byteswap_value(v);
  return v;
}

inline std::vector<unsigned char> read_bytes(const std::filesystem::path &path) {
  std::ifstream in(path, std::ios::binary);
  if (!in)
    throw DataError("cannot open " + path.string());
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

inline void write_bytes(const std::filesystem::path &path,
                        const std::vector<unsigned char> &bytes) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out)
    throw DataError("cannot write " + path.string());
  out.write(reinterpret_cast<const char *>(bytes.data()),
            static_cast<std::streamsize>(bytes.size()));
  if (!out)
    throw DataError("write failed: " + path.string());
}

inline void write_text(const std::filesystem::path &path, const std::string &text) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out)
    throw DataError("cannot write " + path.string());
  out << text;
  if (!out)
    throw DataError("write failed: " + path.string());
}

inline std::string read_text(const std::filesystem::path &path) {
  std::ifstream in(path, std::ios::binary);
  if (!in)
    throw DataError("cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

}  // namespace detail

/// `key = value` lines with `#` comments. Lines without `=` are kept in
/// order as data lines (phase cards use them for reflection tables).
class KeyValueFile {
 public:
  struct DataLine {
    std::size_t line_no;
    std::string text;
  };

  static KeyValueFile parse(std::string_view text, std::string source = "<memory>") {
    KeyValueFile kv;
    kv.source_ = std::move(source);
    std::istringstream in{std::string(text)};
    std::string line;
    std::size_t no = 0;
    while (std::getline(in, line)) {
      ++no;
      if (auto hash = line.find('#'); hash != std::string::npos)
        line.erase(hash);
      const auto t = detail::trim(line);
      if (t.empty())
        continue;
      if (auto eq = t.find('='); eq != std::string::npos) {
        auto key = detail::trim(std::string_view(t).substr(0, eq));
        auto value = detail::trim(std::string_view(t).substr(eq + 1));
        if (key.empty())
          throw ConfigError(kv.source_ + ":" + std::to_string(no) + ": empty key");
        kv.entries_[key] = value;
      } else {
        kv.data_.push_back({no, t});
      }
    }
    return kv;
  }

  static KeyValueFile load(const std::filesystem::path &path) {
    std::ifstream in(path, std::ios::binary);
    if (!in)
      throw ConfigError("cannot open " + path.string());
    std::ostringstream ss;
    ss << in.rdbuf();
    return parse(ss.str(), path.string());
  }

  bool has(const std::string &key) const { return entries_.count(key) != 0; }
  const std::map<std::string, std::string> &entries() const { return entries_; }
  const std::vector<DataLine> &data_lines() const { return data_; }
  const std::string &source() const { return source_; }

  const std::string &str(const std::string &key) const {
    auto it = entries_.find(key);
    if (it == entries_.end())
      throw ConfigError(source_ + ": missing key '" + key + "'");
    return it->second;
  }

  std::string str_or(const std::string &key, std::string fallback) const {
    return has(key) ? str(key) : std::move(fallback);
  }

  std::vector<double> numbers(const std::string &key) const {
    std::vector<double> out;
    for (const auto &tok : detail::split_ws(str(key))) {
      try {
        out.push_back(detail::parse_double(tok, source_ + ": key '" + key + "'"));
      } catch (const DataError &e) {
        throw ConfigError(e.what());
      }
    }
    return out;
  }

  double number(const std::string &key) const {
    auto v = numbers(key);
    if (v.size() != 1)
      throw ConfigError(source_ + ": key '" + key + "' expects one number");
    return v[0];
  }

  double number_or(const std::string &key, double fallback) const {
    return has(key) ? number(key) : fallback;
  }

  std::pair<double, double> pair(const std::string &key) const {
    auto v = numbers(key);
    if (v.size() != 2)
      throw ConfigError(source_ + ": key '" + key + "' expects two numbers");
    return {v[0], v[1]};
  }

 private:
  std::string source_;
  std::map<std::string, std::string> entries_;
  std::vector<DataLine> data_;
};

// ---------------------------------------------------------------------------
// Raw raster format: "GIXR", u32 width, u32 height, u32 dtype (1 = f32,
// 2 = f64), then row-major samples; all little-endian. Masked cells are
// stored as NaN and read back as masked zeros.

enum class RawDtype : std::uint32_t { f32 = 1, f64 = 2 };

inline std::vector<unsigned char> encode_raw(const Raster &r, RawDtype dtype = RawDtype::f32) {
  std::vector<unsigned char> out;
  out.reserve(16 + r.size() * (dtype == RawDtype::f32 ? 4 : 8));
  out.insert(out.end(), {'G', 'I', 'X', 'R'});
  detail::put_le<std::uint32_t>(out, static_cast<std::uint32_t>(r.cols));
  detail::put_le<std::uint32_t>(out, static_cast<std::uint32_t>(r.rows));
  detail::put_le<std::uint32_t>(out, static_cast<std::uint32_t>(dtype));
  const double nan = std::numeric_limits<double>::quiet_NaN();
  for (std::size_t i = 0; i < r.size(); ++i) {
    const double v = r.masked(i) ? nan : r.values[i];
    if (dtype == RawDtype::f32)
      detail::put_le<float>(out, static_cast<float>(v));
    else
      detail::put_le<double>(out, v);
  }
  return out;
}

inline Raster decode_raw(const std::vector<unsigned char> &bytes, const std::string &name) {
  if (bytes.size() < 16 || std::memcmp(bytes.data(), "GIXR", 4) != 0)
    throw DataError(name + ": not a GIXR raw raster");
  const auto w = detail::get_as<std::uint32_t>(bytes.data() + 4, true);
  const auto h = detail::get_as<std::uint32_t>(bytes.data() + 8, true);
  const auto code = detail::get_as<std::uint32_t>(bytes.data() + 12, true);
  if (code != 1 && code != 2)
    throw DataError(name + ": unknown dtype code " + std::to_string(code));
  const std::size_t bpp = code == 1 ? 4 : 8;
  const std::size_t n = static_cast<std::size_t>(w) * h;
  if (bytes.size() != 16 + n * bpp)
    throw DataError(name + ": size does not match header");
  Raster r(h, w);
  for (std::size_t i = 0; i < n; ++i) {
    const unsigned char *p = bytes.data() + 16 + i * bpp;
    const double v = code == 1 ? detail::get_as<float>(p, true) : detail::get_as<double>(p, true);
    if (std::isnan(v)) {
      r.mask[i] = 1;
      r.values[i] = 0.0;
    } else {
      r.values[i] = v;
    }
  }
  return r;
}

// ---------------------------------------------------------------------------
// TIFF: writes baseline little-endian, uncompressed, one strip, 32-bit IEEE
// float samples. Reads uncompressed single-sample images of 8/16/32-bit
// unsigned integers or 32/64-bit floats in either byte order.

inline std::vector<unsigned char> encode_tiff(const Raster &r) {
  constexpr std::uint16_t kShort = 3, kLong = 4;
  struct Entry {
    std::uint16_t tag, type;
    std::uint32_t value;
  };
  const auto w = static_cast<std::uint32_t>(r.cols);
  const auto h = static_cast<std::uint32_t>(r.rows);
  const std::uint32_t data_bytes = w * h * 4;
  std::vector<Entry> entries = {
      {256, kLong, w},          {257, kLong, h},      {258, kShort, 32},
      {259, kShort, 1},         {262, kShort, 1},     {273, kLong, 0},
      {277, kShort, 1},         {278, kLong, h},      {279, kLong, data_bytes},
      {284, kShort, 1},         {339, kShort, 3},
  };
  const std::uint32_t ifd_offset = 8;
  const std::uint32_t data_offset =
      ifd_offset + 2 + static_cast<std::uint32_t>(entries.size()) * 12 + 4;
  entries[5].value = data_offset;

  std::vector<unsigned char> out;
  out.reserve(data_offset + data_bytes);
  out.insert(out.end(), {'I', 'I'});
  detail::put_le<std::uint16_t>(out, 42);
  detail::put_le<std::uint32_t>(out, ifd_offset);
  detail::put_le<std::uint16_t>(out, static_cast<std::uint16_t>(entries.size()));
  for (const auto &e : entries) {
    detail::put_le<std::uint16_t>(out, e.tag);
    detail::put_le<std::uint16_t>(out, e.type);
    detail::put_le<std::uint32_t>(out, 1);
    if (e.type == kShort) {
      detail::put_le<std::uint16_t>(out, static_cast<std::uint16_t>(e.value));
      detail::put_le<std::uint16_t>(out, 0);
    } else {
      detail::put_le<std::uint32_t>(out, e.value);
    }
  }
  detail::put_le<std::uint32_t>(out, 0);
  const double nan = std::numeric_limits<double>::quiet_NaN();
  for (std::size_t i = 0; i < r.size(); ++i)
    detail::put_le<float>(out, static_cast<float>(r.masked(i) ? nan : r.values[i]));
  return out;
}

inline Raster decode_tiff(const std::vector<unsigned char> &b, const std::string &name) {
  auto fail = [&](const std::string &why) { return DataError(name + ": " + why); };
  if (b.size() < 8)
    throw fail("truncated TIFF");
  bool little;
  if (b[0] == 'I' && b[1] == 'I')
    little = true;
  else if (b[0] == 'M' && b[1] == 'M')
    little = false;
  else
    throw fail("not a TIFF file");
  auto u16 = [&](std::size_t off) {
    if (off + 2 > b.size())
      throw fail("truncated TIFF");
    return detail::get_as<std::uint16_t>(b.data() + off, little);
  };
  auto u32 = [&](std::size_t off) {
    if (off + 4 > b.size())
      throw fail("truncated TIFF");
    return detail::get_as<std::uint32_t>(b.data() + off, little);
  };
  if (u16(2) != 42)
    throw fail("unsupported TIFF variant");
  const std::size_t ifd = u32(4);
  const std::size_t count = u16(ifd);

  std::uint32_t width = 0, height = 0, bits = 0, compression = 1, spp = 1;
  std::uint32_t sample_format = 1, rows_per_strip = 0;
  std::vector<std::uint32_t> strip_offsets, strip_counts;

  auto read_values = [&](std::size_t entry) {
    const auto type = u16(entry + 2);
    const auto n = u32(entry + 4);
    const std::size_t sz = type == 3 ? 2 : 4;
    if (type != 3 && type != 4)
      throw fail("unsupported TIFF field type");
    std::size_t at = entry + 8;
    if (n * sz > 4)
      at = u32(entry + 8);
    std::vector<std::uint32_t> v(n);
    for (std::uint32_t i = 0; i < n; ++i)
      v[i] = sz == 2 ? u16(at + 2 * i) : u32(at + 4 * i);
    return v;
  };

  for (std::size_t i = 0; i < count; ++i) {
    const std::size_t e = ifd + 2 + 12 * i;
    const auto tag = u16(e);
    switch (tag) {
      case 256: width = read_values(e).at(0); break;
      case 257: height = read_values(e).at(0); break;
      case 258: bits = read_values(e).at(0); break;
      case 259: compression = read_values(e).at(0); break;
      case 273: strip_offsets = read_values(e); break;
      case 277: spp = read_values(e).at(0); break;
      case 278: rows_per_strip = read_values(e).at(0); break;
      case 279: strip_counts = read_values(e); break;
      case 339: sample_format = read_values(e).at(0); break;
      default: break;
    }
  }
  if (compression != 1)
    throw fail("compressed TIFF is not supported");
  if (spp != 1)
    throw fail("only single-channel TIFF is supported");
  if (strip_offsets.empty() || strip_offsets.size() != strip_counts.size())
    throw fail("missing strip layout");
  const bool is_float = sample_format == 3;
  if (is_float ? (bits != 32 && bits != 64) : (bits != 8 && bits != 16 && bits != 32))
    throw fail("unsupported sample layout");

  std::vector<unsigned char> data;
  for (std::size_t s = 0; s < strip_offsets.size(); ++s) {
    if (std::size_t(strip_offsets[s]) + strip_counts[s] > b.size())
      throw fail("strip outside file");
    data.insert(data.end(), b.begin() + strip_offsets[s],
                b.begin() + strip_offsets[s] + strip_counts[s]);
  }
  (void)rows_per_strip;
  const std::size_t bpp = bits / 8;
  const std::size_t n = std::size_t(width) * height;
  if (data.size() < n * bpp)
    throw fail("pixel data shorter than image");

  Raster r(height, width);
  for (std::size_t i = 0; i < n; ++i) {
    const unsigned char *p = data.data() + i * bpp;
    double v;
    if (is_float)
      v = bits == 32 ? detail::get_as<float>(p, little) : detail::get_as<double>(p, little);
    else if (bits == 8)
      v = *p;
    else if (bits == 16)
      v = detail::get_as<std::uint16_t>(p, little);
    else
      v = detail::get_as<std::uint32_t>(p, little);
    if (std::isnan(v)) {
      r.mask[i] = 1;
      v = 0.0;
    }
    r.values[i] = v;
  }
  return r;
}

/// Reads a raster by extension: .tif/.tiff as TIFF, anything else as raw.
inline Raster read_raster(const std::filesystem::path &path) {
  const auto bytes = detail::read_bytes(path);
  auto ext = path.extension().string();
  std::transform(ext.begin(), ext.end(), ext.begin(), ::tolower);
  if (ext == ".tif" || ext == ".tiff")
    return decode_tiff(bytes, path.string());
  return decode_raw(bytes, path.string());
}

inline void write_raster(const std::filesystem::path &path, const Raster &r) {
  auto ext = path.extension().string();
  std::transform(ext.begin(), ext.end(), ext.begin(), ::tolower);
  if (ext == ".tif" || ext == ".tiff")
    detail::write_bytes(path, encode_tiff(r));
  else
    detail::write_bytes(path, encode_raw(r));
}

// Gridded images keep their axes in a `<file>.axes` key-value sidecar.

inline std::string axes_text(const Axis &rows, const Axis &cols, Units units) {
  std::string s;
  s += "units = " + std::string(to_string(units)) + "\n";
  s += "q0 = " + detail::fmt17(cols.start) + "\n";
  s += "dq = " + detail::fmt17(cols.step) + "\n";
  s += "phi0 = " + detail::fmt17(rows.start) + "\n";
  s += "dphi = " + detail::fmt17(rows.step) + "\n";
  return s;
}

inline void write_polar(const std::filesystem::path &path, const PolarImage &img) {
  write_raster(path, img.raster);
  detail::write_text(path.string() + ".axes", axes_text(img.phi, img.q, img.units));
}

inline Units parse_units(const std::string &s) {
  if (s == "px")
    return Units::px;
  if (s == "invA")
    return Units::invA;
  throw DataError("unknown units '" + s + "' (expected px or invA)");
}

inline PolarImage read_polar(const std::filesystem::path &path) {
  PolarImage img;
  img.raster = read_raster(path);
  const auto axes_path = std::filesystem::path(path.string() + ".axes");
  if (std::filesystem::exists(axes_path)) {
    const auto kv = KeyValueFile::load(axes_path);
    img.units = parse_units(kv.str_or("units", "invA"));
    img.q = Axis{kv.number("q0"), kv.number("dq"), img.raster.cols};
    img.phi = Axis{kv.number("phi0"), kv.number("dphi"), img.raster.rows};
  } else {
    img.units = Units::px;
    img.q = Axis{0.0, 1.0, img.raster.cols};
    img.phi = Axis{0.0, 1.0, img.raster.rows};
  }
  return img;
}

}  // namespace gixd
