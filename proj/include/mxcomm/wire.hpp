#pragma once

// "MXC1" container, little-endian:
//
//   offset  size  field
//   0       4     magic "MXC1"
//   4       1     version = 1
//   5       1     element format code (registry order; 0xF0 TopK, 0xF1 ChannelInt)
//   6       1     scale format code (e4m0 = 0 ... e8m0 = 4)
//   7       1     flags = 0
//   8       4     block_size
//   12      4     ndim
//   16      4     reserved = 0
//   20      8*nd  dimensions (u64)
//   then the byte-aligned scale stream, then the byte-aligned element stream.

#include <algorithm>
#include <array>
#include <cstdint>
#include <cstring>
#include <span>
#include <string>
#include <vector>

#include "mxcomm/bitpack.hpp"
#include "mxcomm/codec.hpp"
#include "mxcomm/error.hpp"
#include "mxcomm/formats.hpp"
#include "mxcomm/tensor.hpp"

namespace mxcomm {

inline constexpr std::array<std::uint8_t, 4> kMagic = {'M', 'X', 'C', '1'};
inline constexpr std::uint8_t kWireVersion = 1;
inline constexpr std::size_t kFixedHeaderBytes = 20;
inline constexpr std::uint8_t kTopKFormatCode = 0xF0;
inline constexpr std::uint8_t kChannelIntFormatCode = 0xF1;

constexpr std::size_t header_bytes(std::size_t ndim) { return kFixedHeaderBytes + 8 * ndim; }

struct ContainerHeader {
  std::uint8_t element_code = 0;
  std::uint8_t scale_code = 0;
  std::uint32_t block_size = 0;
  Shape shape;
};

namespace wire {

class ByteSink {
 public:
  explicit ByteSink(std::vector<std::uint8_t>& out) : out_(out) {}
  void u8(std::uint8_t v) { out_.push_back(v); }
  void u16(std::uint16_t v) { put_le(v, 2); }
  void u32(std::uint32_t v) { put_le(v, 4); }
  void u64(std::uint64_t v) { put_le(v, 8); }
  void bytes(std::span<const std::uint8_t> b) { out_.insert(out_.end(), b.begin(), b.end()); }

 private:
  void put_le(std::uint64_t v, int n) {
    for (int i = 0; i < n; ++i) out_.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
  }
  std::vector<std::uint8_t>& out_;
};

class ByteSource {
 public:
  explicit ByteSource(std::span<const std::uint8_t> in) : in_(in) {}
  std::uint8_t u8() { return static_cast<std::uint8_t>(get_le(1)); }
  std::uint16_t u16() { return static_cast<std::uint16_t>(get_le(2)); }
  std::uint32_t u32() { return static_cast<std::uint32_t>(get_le(4)); }
  std::uint64_t u64() { return get_le(8); }
  std::span<const std::uint8_t> bytes(std::uint64_t n) {
    require(n);
    auto out = in_.subspan(pos_, static_cast<std::size_t>(n));
    pos_ += static_cast<std::size_t>(n);
    return out;
  }
  std::size_t remaining() const { return in_.size() - pos_; }

 private:
  void require(std::uint64_t n) const {
    if (n > in_.size() - pos_) {
      fail(ErrorCode::TruncatedStream, "need " + std::to_string(n) + " bytes at offset " + std::to_string(pos_) +
                                           ", have " + std::to_string(in_.size() - pos_));
    }
  }
  std::uint64_t get_le(int n) {
    require(static_cast<std::uint64_t>(n));
    std::uint64_t v = 0;
    for (int i = 0; i < n; ++i) v |= static_cast<std::uint64_t>(in_[pos_ + i]) << (8 * i);
    pos_ += static_cast<std::size_t>(n);
    return v;
  }
  std::span<const std::uint8_t> in_;
  std::size_t pos_ = 0;
};

}  // namespace wire

inline void write_header(std::vector<std::uint8_t>& out, const ContainerHeader& h) {
  wire::ByteSink sink(out);
  sink.bytes(kMagic);
  sink.u8(kWireVersion);
  sink.u8(h.element_code);
  sink.u8(h.scale_code);
  sink.u8(0);
  sink.u32(h.block_size);
  sink.u32(static_cast<std::uint32_t>(h.shape.size()));
  sink.u32(0);
  for (auto d : h.shape) sink.u64(d);
}

inline ContainerHeader read_header(wire::ByteSource& src) {
  if (src.remaining() < 4) fail(ErrorCode::TruncatedStream, "stream shorter than the magic");
  const auto magic = src.bytes(4);
  if (!std::equal(magic.begin(), magic.end(), kMagic.begin())) fail(ErrorCode::BadMagic, "expected \"MXC1\"");
  if (src.remaining() < kFixedHeaderBytes - 4) fail(ErrorCode::TruncatedStream, "header truncated");
  const std::uint8_t version = src.u8();
  if (version != kWireVersion) fail(ErrorCode::UnsupportedVersion, "version " + std::to_string(version));
  ContainerHeader h;
  h.element_code = src.u8();
  h.scale_code = src.u8();
  if (src.u8() != 0) fail(ErrorCode::MalformedHeader, "non-zero flags");
  h.block_size = src.u32();
  const std::uint32_t ndim = src.u32();
  if (src.u32() != 0) fail(ErrorCode::MalformedHeader, "non-zero reserved field");
  if (static_cast<std::uint64_t>(ndim) * 8 > src.remaining()) fail(ErrorCode::TruncatedStream, "dimensions truncated");
  h.shape.resize(ndim);
  for (auto& d : h.shape) d = src.u64();
  element_count(h.shape);  // rejects overflowing shapes
  return h;
}

/// Format code of a serialized container, after checking magic and version.
inline std::uint8_t peek_format_code(std::span<const std::uint8_t> bytes) {
  wire::ByteSource src(bytes);
  return read_header(src).element_code;
}

inline std::uint64_t serialized_size(const Shape& shape, const SchemeDescriptor& scheme) {
  const std::uint64_t n = element_count(shape);
  return header_bytes(shape.size()) + packed_bytes(block_count(n, scheme.block_size), scheme.scale.exponent_bits()) +
         packed_bytes(n, scheme.element.total_bits());
}

inline std::vector<std::uint8_t> serialize(const CompressedTensor& ct) {
  const auto element_code = element_format_code(ct.scheme.element);
  if (!element_code) {
    fail(ErrorCode::UnknownScheme, "element format " + element_format_name(ct.scheme.element) +
                                       " has no wire code (" + registry_listing() + ")");
  }
  detail::validate_streams(ct);
  std::vector<std::uint8_t> out;
  out.reserve(header_bytes(ct.shape.size()) + ct.scale_stream.size() + ct.element_stream.size());
  write_header(out, {*element_code, scale_format_code(ct.scheme.scale), ct.scheme.block_size, ct.shape});
  out.insert(out.end(), ct.scale_stream.begin(), ct.scale_stream.end());
  out.insert(out.end(), ct.element_stream.begin(), ct.element_stream.end());
  return out;
}

/// serialize(compress(values, shape, scheme)) written straight into `out`,
/// which must hold exactly serialized_size(shape, scheme) bytes.
inline void compress_serialized_into(std::span<const float> values, const Shape& shape, const SchemeDescriptor& scheme,
                                     std::span<std::uint8_t> out) {
  const auto element_code = element_format_code(scheme.element);
  if (!element_code) {
    fail(ErrorCode::UnknownScheme, "element format " + element_format_name(scheme.element) + " has no wire code (" +
                                       registry_listing() + ")");
  }
  if (element_count(shape) != values.size()) {
    fail(ErrorCode::ShapeMismatch, "shape " + shape_string(shape) + " does not hold " + std::to_string(values.size()) +
                                       " values");
  }
  if (out.size() != serialized_size(shape, scheme)) {
    fail(ErrorCode::InvalidArgument, "output buffer holds " + std::to_string(out.size()) + " bytes, need " +
                                         std::to_string(serialized_size(shape, scheme)));
  }
  std::vector<std::uint8_t> header;
  write_header(header, {*element_code, scale_format_code(scheme.scale), scheme.block_size, shape});
  std::copy(header.begin(), header.end(), out.begin());
  const auto scales = packed_bytes(block_count(values.size(), scheme.block_size), scheme.scale.exponent_bits());
  detail::encode_streams(values, scheme, out.subspan(header.size(), scales), out.subspan(header.size() + scales));
}

/// Parses a serialized block-quantized tensor without copying its streams.
inline CompressedView parse_serialized(std::span<const std::uint8_t> bytes) {
  wire::ByteSource src(bytes);
  const ContainerHeader h = read_header(src);
  if (h.element_code == kTopKFormatCode || h.element_code == kChannelIntFormatCode) {
    fail(ErrorCode::MalformedHeader, "container holds a baseline packet, not a block-quantized tensor");
  }
  if (h.block_size == 0) fail(ErrorCode::MalformedHeader, "block_size is zero");
  const SchemeDescriptor scheme(element_format_from_code(h.element_code), h.block_size,
                                scale_format_from_code(h.scale_code));
  const std::uint64_t n = element_count(h.shape);
  if (n / 8 > src.remaining()) fail(ErrorCode::TruncatedStream, "payload shorter than shape " + shape_string(h.shape));
  CompressedView v{scheme, h.shape, block_count(n, h.block_size), {}, {}};
  v.scale_stream = src.bytes(packed_bytes(v.num_blocks, scheme.scale.exponent_bits()));
  v.element_stream = src.bytes(packed_bytes(n, scheme.element.total_bits()));
  if (src.remaining() != 0) fail(ErrorCode::MalformedHeader, std::to_string(src.remaining()) + " trailing bytes");
  return v;
}

inline CompressedTensor deserialize(std::span<const std::uint8_t> bytes) {
  const CompressedView v = parse_serialized(bytes);
  return {v.scheme, v.shape, v.num_blocks, {v.scale_stream.begin(), v.scale_stream.end()},
          {v.element_stream.begin(), v.element_stream.end()}};
}

}  // namespace mxcomm
