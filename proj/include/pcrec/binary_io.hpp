#pragma once

#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "pcrec/error.hpp"

namespace pcrec {

// Little-endian writer/reader over std::streams, independent of host order.
class BinaryWriter {
 public:
  explicit BinaryWriter(std::ostream& out) : out_(out) {}

  void bytes(std::string_view raw) { out_.write(raw.data(), static_cast<std::streamsize>(raw.size())); }

  void u32(std::uint32_t v) { put(v, 4); }
  void u64(std::uint64_t v) { put(v, 8); }
  void f64(double v) { u64(std::bit_cast<std::uint64_t>(v)); }
  void str(std::string_view s) {
    u32(static_cast<std::uint32_t>(s.size()));
    bytes(s);
  }
  void f64s(std::span<const double> values) {
    for (double v : values) f64(v);
  }

 private:
  void put(std::uint64_t v, int width) {
    char buf[8];
    for (int b = 0; b < width; ++b) buf[b] = static_cast<char>((v >> (8 * b)) & 0xFF);
    out_.write(buf, width);
  }
  std::ostream& out_;
};

class BinaryReader {
 public:
  explicit BinaryReader(std::istream& in) : in_(in) {}

  std::string bytes(std::size_t n) {
    std::string s(n, '\0');
    in_.read(s.data(), static_cast<std::streamsize>(n));
    if (static_cast<std::size_t>(in_.gcount()) != n) throw FormatError("binary: truncated input");
    return s;
  }
  void expect(std::string_view magic) {
    if (bytes(magic.size()) != magic) throw FormatError("binary: bad magic, expected " + std::string(magic));
  }

  std::uint32_t u32() { return static_cast<std::uint32_t>(get(4)); }
  std::uint64_t u64() { return get(8); }
  double f64() { return std::bit_cast<double>(u64()); }
  std::string str(std::size_t max_len = 1 << 20) {
    const std::uint32_t n = u32();
    if (n > max_len) throw FormatError("binary: string length out of range");
    return bytes(n);
  }
  void f64s(std::span<double> out) {
    for (double& v : out) v = f64();
  }
  bool at_end() { return in_.peek() == std::char_traits<char>::eof(); }

 private:
  std::uint64_t get(int width) {
    unsigned char buf[8];
    in_.read(reinterpret_cast<char*>(buf), width);
    if (in_.gcount() != width) throw FormatError("binary: truncated input");
    std::uint64_t v = 0;
    for (int b = 0; b < width; ++b) v |= std::uint64_t{buf[b]} << (8 * b);
    return v;
  }
  std::istream& in_;
};

inline std::ofstream open_for_write(const std::string& path, bool binary = true) {
  std::ofstream out(path, binary ? std::ios::binary | std::ios::trunc : std::ios::trunc);
  if (!out) throw IoError("cannot open for writing: " + path);
  return out;
}

inline std::ifstream open_for_read(const std::string& path, bool binary = true) {
  std::ifstream in(path, binary ? std::ios::binary : std::ios::in);
  if (!in) throw IoError("cannot open for reading: " + path);
  return in;
}

}  // namespace pcrec
