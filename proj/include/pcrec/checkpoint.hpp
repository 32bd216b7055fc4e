#pragma once

#include <cstdint>
#include <string>

#include "pcrec/binary_io.hpp"
#include "pcrec/encoder.hpp"
#include "pcrec/rng.hpp"

namespace pcrec {

// Encoder checkpoint layout (all integers and floats little-endian):
//   "PCRECENC" | u32 version | u32 d_in | u32 d | u32 layers | f64 momentum |
//   str rng_algorithm | f64 tensors in EncoderParams::for_each_tensor order
inline constexpr std::string_view kEncoderMagic = "PCRECENC";
inline constexpr std::uint32_t kEncoderVersion = 1;

struct EncoderHeader {
  std::uint32_t d_in = 0;
  std::uint32_t d = 0;
  std::uint32_t layers = 0;
  double momentum = 0.0;
  std::string rng_algorithm;
};

inline void write_encoder_body(BinaryWriter& w, const EncoderParams& p) {
  p.for_each_tensor([&](std::span<const double> t) { w.f64s(t); });
}

inline void write_encoder(std::ostream& out, const EncoderParams& p, double momentum) {
  p.validate();
  BinaryWriter w(out);
  w.bytes(kEncoderMagic);
  w.u32(kEncoderVersion);
  w.u32(static_cast<std::uint32_t>(p.input_dim()));
  w.u32(static_cast<std::uint32_t>(p.dim()));
  w.u32(static_cast<std::uint32_t>(p.layers.size()));
  w.f64(momentum);
  w.str(kRngAlgorithm);
  write_encoder_body(w, p);
}

inline EncoderHeader read_encoder_header(BinaryReader& r) {
  r.expect(kEncoderMagic);
  const std::uint32_t version = r.u32();
  if (version != kEncoderVersion) {
    throw FormatError("encoder checkpoint version " + std::to_string(version) + " unsupported (expected " +
                      std::to_string(kEncoderVersion) + ")");
  }
  EncoderHeader h;
  h.d_in = r.u32();
  h.d = r.u32();
  h.layers = r.u32();
  h.momentum = r.f64();
  h.rng_algorithm = r.str(256);
  if (h.d_in == 0 || h.d == 0 || h.d > (1u << 16) || h.d_in > (1u << 16) || h.layers > 64) {
    throw FormatError("encoder checkpoint: implausible dimensions");
  }
  return h;
}

inline void read_encoder_body(BinaryReader& r, EncoderParams& p) {
  p.for_each_tensor([&](std::span<double> t) { r.f64s(t); });
}

inline EncoderParams read_encoder(std::istream& in, EncoderHeader* header_out = nullptr) {
  BinaryReader r(in);
  const EncoderHeader h = read_encoder_header(r);
  EncoderParams p = init_encoder(0, {h.d_in, h.d, h.layers}).query;
  read_encoder_body(r, p);
  if (header_out) *header_out = h;
  return p;
}

inline void save_encoder(const std::string& path, const EncoderParams& p, double momentum) {
  auto out = open_for_write(path);
  write_encoder(out, p, momentum);
  if (!out) throw IoError("write failed: " + path);
}

inline EncoderParams load_encoder(const std::string& path, EncoderHeader* header_out = nullptr) {
  auto in = open_for_read(path);
  return read_encoder(in, header_out);
}

}  // namespace pcrec
