#pragma once

#include <bit>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "vem/error.hpp"

namespace vem::io {

static_assert(std::endian::native == std::endian::little,
              "binary formats are little-endian; big-endian hosts need byte swapping");

inline std::vector<char> read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  std::vector<char> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  if (in.bad()) throw IoError("read failed: " + path.string());
  return bytes;
}

inline std::string read_text(const std::filesystem::path& path) {
  auto bytes = read_file(path);
  return std::string(bytes.begin(), bytes.end());
}

inline void write_file(const std::filesystem::path& path, const void* data, std::size_t size) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot open for writing " + path.string());
  out.write(static_cast<const char*>(data), static_cast<std::streamsize>(size));
  if (!out) throw IoError("write failed: " + path.string());
}

inline void write_text(const std::filesystem::path& path, const std::string& text) {
  write_file(path, text.data(), text.size());
}

// Encode doubles at 32 or 64 bits per value.
inline std::vector<char> encode_reals(const double* values, std::size_t count, int width) {
  std::vector<char> out(count * static_cast<std::size_t>(width / 8));
  if (width == 64) {
    std::memcpy(out.data(), values, out.size());
  } else {
    for (std::size_t i = 0; i < count; ++i) {
      const auto f = static_cast<float>(values[i]);
      std::memcpy(out.data() + i * 4, &f, 4);
    }
  }
  return out;
}

// Decode and widen; throws if the byte count is not count * width / 8.
inline std::vector<double> decode_reals(const std::vector<char>& bytes, std::size_t count,
                                        int width, const std::string& what) {
  const std::size_t expected = count * static_cast<std::size_t>(width / 8);
  if (bytes.size() != expected)
    throw ValidationError(what + ": size mismatch, expected " + std::to_string(expected) +
                          " bytes, found " + std::to_string(bytes.size()));
  std::vector<double> out(count);
  if (width == 64) {
    std::memcpy(out.data(), bytes.data(), expected);
  } else {
    for (std::size_t i = 0; i < count; ++i) {
      float f;
      std::memcpy(&f, bytes.data() + i * 4, 4);
      out[i] = static_cast<double>(f);
    }
  }
  for (double v : out)
    if (!std::isfinite(v)) throw ValidationError(what + ": non-finite value");
  return out;
}

}  // namespace vem::io
