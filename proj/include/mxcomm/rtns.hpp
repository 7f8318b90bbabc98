#pragma once

// "RTNS" raw tensor files, little-endian:
//
//   magic "RTNS", u8 version = 1, u8 dtype (1 = float32), u32 ndim,
//   u64 dims[ndim], then product(dims) float32 values.

#include <algorithm>
#include <array>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <iterator>
#include <span>
#include <string>
#include <vector>

#include "mxcomm/error.hpp"
#include "mxcomm/tensor.hpp"
#include "mxcomm/wire.hpp"

namespace mxcomm {

inline constexpr std::array<std::uint8_t, 4> kRtnsMagic = {'R', 'T', 'N', 'S'};
inline constexpr std::uint8_t kRtnsVersion = 1;
inline constexpr std::uint8_t kRtnsFloat32 = 1;

inline std::vector<std::uint8_t> encode_rtns(const Tensor& t) {
  std::vector<std::uint8_t> out;
  out.reserve(10 + 8 * t.shape.size() + 4 * t.size());
  wire::ByteSink sink(out);
  sink.bytes(kRtnsMagic);
  sink.u8(kRtnsVersion);
  sink.u8(kRtnsFloat32);
  sink.u32(static_cast<std::uint32_t>(t.shape.size()));
  for (auto d : t.shape) sink.u64(d);
  for (float v : t.data) {
    std::uint32_t bits;
    std::memcpy(&bits, &v, 4);
    sink.u32(bits);
  }
  return out;
}

inline Tensor decode_rtns(std::span<const std::uint8_t> bytes) {
  wire::ByteSource src(bytes);
  if (src.remaining() < 4) fail(ErrorCode::TruncatedStream, "file shorter than the magic");
  const auto magic = src.bytes(4);
  if (!std::equal(magic.begin(), magic.end(), kRtnsMagic.begin())) fail(ErrorCode::BadMagic, "expected \"RTNS\"");
  const std::uint8_t version = src.u8();
  if (version != kRtnsVersion) fail(ErrorCode::UnsupportedVersion, "RTNS version " + std::to_string(version));
  const std::uint8_t dtype = src.u8();
  if (dtype != kRtnsFloat32) fail(ErrorCode::MalformedHeader, "dtype code " + std::to_string(dtype) + " (only 1 = f32)");
  const std::uint32_t ndim = src.u32();
  if (static_cast<std::uint64_t>(ndim) * 8 > src.remaining()) fail(ErrorCode::TruncatedStream, "dimensions truncated");
  Shape shape(ndim);
  for (auto& d : shape) d = src.u64();
  const std::uint64_t n = element_count(shape);
  if (n > src.remaining() / 4) {
    fail(ErrorCode::TruncatedStream, "payload holds " + std::to_string(src.remaining()) + " bytes, shape " +
                                         shape_string(shape) + " needs " + std::to_string(n) + " values");
  }
  std::vector<float> data(static_cast<std::size_t>(n));
  for (auto& v : data) {
    const std::uint32_t bits = src.u32();
    std::memcpy(&v, &bits, 4);
  }
  if (src.remaining() != 0) fail(ErrorCode::MalformedHeader, std::to_string(src.remaining()) + " trailing bytes");
  return Tensor(std::move(shape), std::move(data));
}

inline std::vector<std::uint8_t> read_file_bytes(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail(ErrorCode::Io, "cannot open " + path);
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  if (in.bad()) fail(ErrorCode::Io, "read error on " + path);
  return bytes;
}

inline void write_file_bytes(const std::string& path, std::span<const std::uint8_t> bytes) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) fail(ErrorCode::Io, "cannot create " + path);
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) fail(ErrorCode::Io, "write error on " + path);
}

inline Tensor read_rtns(const std::string& path) {
  try {
    return decode_rtns(read_file_bytes(path));
  } catch (const Error& e) {
    rethrow_with_context(e, path);
  }
}

inline void write_rtns(const std::string& path, const Tensor& t) { write_file_bytes(path, encode_rtns(t)); }

}  // namespace mxcomm
