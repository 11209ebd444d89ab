#pragma once

#include <bit>
#include <charconv>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "gtn/error.hpp"
#include "gtn/rng.hpp"
#include "gtn/tensor.hpp"

namespace gtn {

// Binary tensor format: magic "GTN0", u8 rank, rank x u64 dims
// (little-endian), then the row-major f64 payload (little-endian).

namespace detail {

inline void put_u64_le(std::string& out, std::uint64_t v) {
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

inline std::uint64_t get_u64_le(const char* p) {
  std::uint64_t v = 0;
  for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(static_cast<unsigned char>(p[i])) << (8 * i);
  return v;
}

}  // namespace detail

inline std::string tensor_to_bytes(const Tensor& t) {
  std::string out;
  out.reserve(5 + 8 * t.rank() + 8 * t.size());
  out += "GTN0";
  out.push_back(static_cast<char>(t.rank()));
  for (std::size_t d : t.shape()) detail::put_u64_le(out, d);
  for (double v : t.values()) detail::put_u64_le(out, std::bit_cast<std::uint64_t>(v));
  return out;
}

inline Tensor tensor_from_bytes(const std::string& bytes, const std::string& what = "tensor") {
  if (bytes.size() < 5 || bytes.compare(0, 4, "GTN0") != 0) {
    throw IoError(what + ": bad magic, not a GTN0 tensor");
  }
  const std::size_t rank = static_cast<unsigned char>(bytes[4]);
  std::size_t pos = 5;
  if (bytes.size() < pos + 8 * rank) throw IoError(what + ": truncated header");
  Shape shape(rank);
  for (std::size_t i = 0; i < rank; ++i, pos += 8) shape[i] = detail::get_u64_le(bytes.data() + pos);
  const std::size_t count = shape_numel(shape);
  if (bytes.size() != pos + 8 * count) {
    throw IoError(what + ": payload size mismatch (expected " + std::to_string(count) +
                  " values)");
  }
  std::vector<double> data(count);
  for (std::size_t i = 0; i < count; ++i, pos += 8) {
    data[i] = std::bit_cast<double>(detail::get_u64_le(bytes.data() + pos));
  }
  Tensor t(std::move(shape), std::move(data));
  detail::ensure_finite(t, what.c_str());
  return t;
}

inline void write_file(const std::filesystem::path& path, const std::string& bytes) {
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw IoError("cannot open " + path.string() + " for writing");
  os.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!os) throw IoError("short write to " + path.string());
}

inline std::string read_file(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError("cannot open " + path.string());
  std::string bytes((std::istreambuf_iterator<char>(is)), std::istreambuf_iterator<char>());
  return bytes;
}

inline void save_tensor(const Tensor& t, const std::filesystem::path& path) {
  write_file(path, tensor_to_bytes(t));
}

inline Tensor load_tensor(const std::filesystem::path& path) {
  return tensor_from_bytes(read_file(path), path.filename().string());
}

/// Shortest round-trip decimal form of a double.
inline std::string format_double(double v) {
  char buf[32];
  auto res = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, res.ptr);
}

/// CSV export: a "shape" header line, then the payload in row-major order,
/// one line per trailing-dimension slice.
inline void write_tensor_csv(const Tensor& t, std::ostream& os) {
  os << "shape";
  for (std::size_t d : t.shape()) os << ',' << d;
  os << '\n';
  const std::size_t cols = t.rank() == 0 ? 1 : t.shape().back();
  const std::size_t rows = t.size() / (cols == 0 ? 1 : cols);
  for (std::size_t r = 0; r < rows; ++r) {
    for (std::size_t c = 0; c < cols; ++c) {
      if (c > 0) os << ',';
      os << format_double(t[r * cols + c]);
    }
    os << '\n';
  }
}

inline void save_tensor_csv(const Tensor& t, const std::filesystem::path& path) {
  std::ofstream os(path, std::ios::trunc);
  if (!os) throw IoError("cannot open " + path.string() + " for writing");
  write_tensor_csv(t, os);
  if (!os) throw IoError("short write to " + path.string());
}

/// FNV-1a 64 checksum of a byte string, as fixed-width hex.
inline std::string checksum_hex(const std::string& bytes) {
  const std::uint64_t h = fnv1a64(bytes);
  char buf[17];
  static const char* digits = "0123456789abcdef";
  for (int i = 0; i < 16; ++i) buf[i] = digits[(h >> (60 - 4 * i)) & 0xf];
  buf[16] = '\0';
  return std::string(buf);
}

}  // namespace gtn
