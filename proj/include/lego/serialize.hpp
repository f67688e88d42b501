#pragma once

#include <bit>
#include <cstdint>
#include <fstream>
#include <iomanip>
#include <sstream>
#include <string>
#include <vector>

#include "lego/tensor.hpp"

static_assert(std::endian::native == std::endian::little,
              "binary file formats are little-endian; big-endian hosts are unsupported");

namespace lego {

inline std::uint64_t fnv1a64(const void* data, std::size_t len,
                             std::uint64_t h = 14695981039346656037ull) {
  const unsigned char* p = static_cast<const unsigned char*>(data);
  for (std::size_t i = 0; i < len; ++i) {
    h ^= p[i];
    h *= 1099511628211ull;
  }
  return h;
}

inline std::string to_hex(std::uint64_t v) {
  std::ostringstream out;
  out << std::hex << std::setw(16) << std::setfill('0') << v;
  return out.str();
}

inline void write_bytes(std::ostream& out, const void* data, std::size_t len) {
  out.write(static_cast<const char*>(data), static_cast<std::streamsize>(len));
  if (!out) throw io_error("write failed");
}

inline void write_u32(std::ostream& out, std::uint32_t v) { write_bytes(out, &v, sizeof v); }
inline void write_u64(std::ostream& out, std::uint64_t v) { write_bytes(out, &v, sizeof v); }

inline void read_bytes(std::istream& in, void* data, std::size_t len, const std::string& what) {
  in.read(static_cast<char*>(data), static_cast<std::streamsize>(len));
  if (static_cast<std::size_t>(in.gcount()) != len) {
    throw io_error("truncated file while reading " + what);
  }
}

inline std::uint32_t read_u32(std::istream& in, const std::string& what) {
  std::uint32_t v = 0;
  read_bytes(in, &v, sizeof v, what);
  return v;
}

inline std::uint64_t read_u64(std::istream& in, const std::string& what) {
  std::uint64_t v = 0;
  read_bytes(in, &v, sizeof v, what);
  return v;
}

inline std::string read_string(std::istream& in, std::size_t len, const std::string& what) {
  std::string s(len, '\0');
  read_bytes(in, s.data(), len, what);
  return s;
}

inline std::string read_text_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw io_error("cannot open file: " + path);
  std::ostringstream out;
  out << in.rdbuf();
  return out.str();
}

inline void write_text_file(const std::string& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw io_error("cannot write file: " + path);
  out << text;
  if (!out) throw io_error("write failed: " + path);
}

}  // namespace lego
