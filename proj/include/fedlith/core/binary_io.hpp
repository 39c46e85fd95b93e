#pragma once

#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "fedlith/core/error.hpp"

namespace fedlith {

namespace fs = std::filesystem;

static_assert(std::endian::native == std::endian::little, "binary formats assume a little-endian host");

inline void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot open " + path.string() + " for writing");
  out.write(text.data(), static_cast<std::streamsize>(text.size()));
  if (!out) throw IoError("write failed: " + path.string());
}

inline std::string read_text(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

inline nlohmann::json read_json(const fs::path& path) {
  try {
    return nlohmann::json::parse(read_text(path));
  } catch (const nlohmann::json::parse_error& e) {
    throw IoError("malformed JSON in " + path.string() + ": " + e.what());
  }
}

inline void write_json(const fs::path& path, const nlohmann::json& j) { write_text(path, j.dump(2) + "\n"); }

/// Flat little-endian float64 array at `path` with a JSON header next to it
/// (`<path>.json`) holding {"dtype", "endian", "shape"}.
inline void write_f64_array(const fs::path& path, std::span<const double> values, const std::vector<std::size_t>& shape) {
  std::size_t expect = 1;
  for (auto s : shape) expect *= s;
  if (expect != values.size()) throw IoError("shape does not match value count for " + path.string());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot open " + path.string() + " for writing");
  out.write(reinterpret_cast<const char*>(values.data()), static_cast<std::streamsize>(values.size() * sizeof(double)));
  if (!out) throw IoError("write failed: " + path.string());
  write_json(fs::path(path.string() + ".json"), {{"dtype", "float64"}, {"endian", "little"}, {"shape", shape}});
}

struct F64Array {
  std::vector<std::size_t> shape;
  std::vector<double> values;
};

inline F64Array read_f64_array(const fs::path& path) {
  const auto header = read_json(fs::path(path.string() + ".json"));
  if (header.value("dtype", "") != "float64" || header.value("endian", "") != "little")
    throw IoError("unsupported array header for " + path.string());
  F64Array a;
  a.shape = header.at("shape").get<std::vector<std::size_t>>();
  std::size_t n = 1;
  for (auto s : a.shape) n *= s;
  const auto bytes = read_text(path);
  if (bytes.size() != n * sizeof(double)) throw IoError("array size mismatch in " + path.string());
  a.values.resize(n);
  std::memcpy(a.values.data(), bytes.data(), bytes.size());
  return a;
}

inline void put_u32(std::string& buf, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) buf.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

inline std::uint32_t get_u32(const std::string& buf, std::size_t& pos) {
  if (pos + 4 > buf.size()) throw IoError("truncated binary file");
  std::uint32_t v = 0;
  for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(static_cast<unsigned char>(buf[pos + i])) << (8 * i);
  pos += 4;
  return v;
}

}  // namespace fedlith
