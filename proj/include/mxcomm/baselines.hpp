#pragma once

// Comparison codecs: channel-wise symmetric INT quantization (one 16-bit
// scale per trailing-dimension channel) and TopK magnitude sparsification.
// Both serialize into the MXC1 container under their own format codes.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <span>
#include <string>
#include <vector>

#include "mxcomm/bitpack.hpp"
#include "mxcomm/error.hpp"
#include "mxcomm/half.hpp"
#include "mxcomm/tensor.hpp"
#include "mxcomm/wire.hpp"

namespace mxcomm {

// ---------------------------------------------------------------------------
// Channel-wise INT

struct ChannelIntPacket {
  Shape shape;
  int bits = 4;
  std::vector<std::uint16_t> scales;  // binary16, one per channel
  std::vector<std::uint8_t> codes;    // sign-magnitude, `bits` wide, LSB-first

  std::uint64_t channels() const { return shape.empty() ? 1 : shape.back(); }
  float scale(std::size_t channel) const { return half_to_float(scales[channel]); }

  friend bool operator==(const ChannelIntPacket&, const ChannelIntPacket&) = default;
};

inline ChannelIntPacket channelwise_int_compress(const Tensor& tensor, int bits = 4) {
  if (bits < 2 || bits > 8) fail(ErrorCode::InvalidArgument, "channel-wise INT bits must lie in [2, 8]");
  require_finite(std::span<const float>(tensor.data), "channel-wise INT input");
  ChannelIntPacket p;
  p.shape = tensor.shape;
  p.bits = bits;
  const std::uint64_t channels = p.channels();
  const auto qmax = static_cast<double>((1 << (bits - 1)) - 1);
  std::vector<float> max_abs(static_cast<std::size_t>(channels), 0.0f);
  for (std::size_t i = 0; i < tensor.size(); ++i) {
    auto& m = max_abs[i % channels];
    m = std::max(m, std::fabs(tensor.data[i]));
  }
  // Scales are rounded up to binary16 so that |v| / scale never exceeds qmax.
  p.scales.resize(max_abs.size());
  for (std::size_t c = 0; c < max_abs.size(); ++c) {
    p.scales[c] = max_abs[c] == 0.0f ? std::uint16_t{0}
                                     : float_to_half_round_up(static_cast<float>(max_abs[c] / qmax));
  }
  p.codes.reserve(packed_bytes(tensor.size(), bits));
  const std::uint32_t sign_bit = 1u << (bits - 1);
  {
    BitWriter writer(p.codes);
    for (std::size_t i = 0; i < tensor.size(); ++i) {
      const double scale = p.scale(i % channels);
      std::uint32_t code = 0;
      if (scale != 0.0) {
        const double q = std::min(std::nearbyint(std::fabs(static_cast<double>(tensor.data[i])) / scale), qmax);
        code = static_cast<std::uint32_t>(q);
        if (tensor.data[i] < 0.0f && code != 0) code |= sign_bit;
      }
      writer.put(code, bits);
    }
  }
  return p;
}

inline Tensor channelwise_int_decompress(const ChannelIntPacket& p) {
  Tensor out(p.shape);
  const std::uint64_t channels = p.channels();
  if (p.scales.size() != channels || p.codes.size() != packed_bytes(out.size(), p.bits)) {
    fail(ErrorCode::MalformedHeader, "channel-wise INT packet inconsistent with its shape");
  }
  const std::uint32_t sign_bit = 1u << (p.bits - 1);
  BitReader reader(p.codes);
  for (std::size_t i = 0; i < out.size(); ++i) {
    const std::uint32_t code = reader.get(p.bits);
    const float mag = static_cast<float>(code & (sign_bit - 1u)) * p.scale(i % channels);
    out.data[i] = (code & sign_bit) ? -mag : mag;
  }
  return out;
}

inline std::uint64_t channel_int_serialized_size(const Shape& shape, int bits) {
  const std::uint64_t channels = shape.empty() ? 1 : shape.back();
  return header_bytes(shape.size()) + 2 * channels + packed_bytes(element_count(shape), bits);
}

/// Header block_size carries the channel count, scale byte the bit width.
inline std::vector<std::uint8_t> serialize(const ChannelIntPacket& p) {
  std::vector<std::uint8_t> out;
  write_header(out, {kChannelIntFormatCode, static_cast<std::uint8_t>(p.bits), static_cast<std::uint32_t>(p.channels()),
                     p.shape});
  wire::ByteSink sink(out);
  for (auto s : p.scales) sink.u16(s);
  sink.bytes(p.codes);
  return out;
}

inline ChannelIntPacket deserialize_channel_int(std::span<const std::uint8_t> bytes) {
  wire::ByteSource src(bytes);
  const ContainerHeader h = read_header(src);
  if (h.element_code != kChannelIntFormatCode) fail(ErrorCode::MalformedHeader, "not a channel-wise INT packet");
  ChannelIntPacket p;
  p.shape = h.shape;
  p.bits = h.scale_code;
  if (p.bits < 2 || p.bits > 8) fail(ErrorCode::MalformedHeader, "channel-wise INT bits out of range");
  if (h.block_size != p.channels()) fail(ErrorCode::MalformedHeader, "channel count does not match shape");
  if (p.channels() > src.remaining() / 2) fail(ErrorCode::TruncatedStream, "scales truncated");
  p.scales.resize(static_cast<std::size_t>(p.channels()));
  for (auto& s : p.scales) s = src.u16();
  const std::uint64_t n = element_count(p.shape);
  if (n / 8 > src.remaining()) fail(ErrorCode::TruncatedStream, "codes truncated");
  const auto codes = src.bytes(packed_bytes(n, p.bits));
  if (src.remaining() != 0) fail(ErrorCode::MalformedHeader, "trailing bytes after channel-wise INT packet");
  p.codes.assign(codes.begin(), codes.end());
  return p;
}

// ---------------------------------------------------------------------------
// TopK

struct TopKPacket {
  Shape shape;
  std::vector<std::uint32_t> indices;  // strictly increasing
  std::vector<std::uint16_t> values;   // binary16 payloads

  std::size_t k() const { return indices.size(); }

  friend bool operator==(const TopKPacket&, const TopKPacket&) = default;
};

inline constexpr std::size_t kTopKBytesPerEntry = 4 + 2;

inline std::uint64_t topk_serialized_size(const Shape& shape, std::uint64_t k) {
  return header_bytes(shape.size()) + kTopKBytesPerEntry * k;
}

/// Largest k whose serialized packet fits in original_bytes / factor, where
/// the original is the tensor at 16 bits per value.
inline std::uint64_t topk_k_for_factor(const Shape& shape, double compression_factor) {
  if (!(compression_factor > 1.0)) fail(ErrorCode::InvalidArgument, "compression factor must exceed 1");
  const double budget = 2.0 * static_cast<double>(element_count(shape)) / compression_factor;
  const double room = budget - static_cast<double>(header_bytes(shape.size()));
  const auto k = room <= 0.0 ? std::uint64_t{0} : static_cast<std::uint64_t>(std::floor(room / kTopKBytesPerEntry));
  if (k == 0) {
    fail(ErrorCode::CompressionFactorTooHigh, "factor " + std::to_string(compression_factor) +
                                                  " leaves no room for a single entry");
  }
  return std::min<std::uint64_t>(k, element_count(shape));
}

/// Keeps the k largest magnitudes; equal magnitudes prefer the lower index.
inline TopKPacket topk_select(const Tensor& tensor, std::uint64_t k) {
  require_finite(std::span<const float>(tensor.data), "TopK input");
  if (tensor.size() > 0xFFFFFFFFull) fail(ErrorCode::InvalidArgument, "TopK indices are 32-bit");
  if (k > tensor.size()) fail(ErrorCode::InvalidArgument, "k exceeds the tensor size");
  std::vector<std::uint32_t> order(tensor.size());
  std::iota(order.begin(), order.end(), 0u);
  const auto before = [&](std::uint32_t a, std::uint32_t b) {
    const float ma = std::fabs(tensor.data[a]);
    const float mb = std::fabs(tensor.data[b]);
    return ma > mb || (ma == mb && a < b);
  };
  const auto kth = order.begin() + static_cast<std::ptrdiff_t>(k);
  if (k < order.size()) std::nth_element(order.begin(), kth, order.end(), before);
  std::sort(order.begin(), kth);
  TopKPacket p;
  p.shape = tensor.shape;
  p.indices.assign(order.begin(), kth);
  p.values.reserve(p.indices.size());
  for (auto i : p.indices) p.values.push_back(float_to_half(tensor.data[i]));
  return p;
}

inline TopKPacket topk_compress(const Tensor& tensor, double compression_factor) {
  return topk_select(tensor, topk_k_for_factor(tensor.shape, compression_factor));
}

inline Tensor topk_decompress(const TopKPacket& p) {
  Tensor out(p.shape);
  if (p.values.size() != p.indices.size()) fail(ErrorCode::MalformedHeader, "TopK index/value count mismatch");
  for (std::size_t j = 0; j < p.indices.size(); ++j) {
    if (p.indices[j] >= out.size() || (j > 0 && p.indices[j] <= p.indices[j - 1])) {
      fail(ErrorCode::MalformedHeader, "TopK indices must be strictly increasing and in range");
    }
    out.data[p.indices[j]] = half_to_float(p.values[j]);
  }
  return out;
}

/// Header block_size carries k; indices (u32) precede values (u16).
inline std::vector<std::uint8_t> serialize(const TopKPacket& p) {
  std::vector<std::uint8_t> out;
  out.reserve(topk_serialized_size(p.shape, p.k()));
  write_header(out, {kTopKFormatCode, 0, static_cast<std::uint32_t>(p.k()), p.shape});
  wire::ByteSink sink(out);
  for (auto i : p.indices) sink.u32(i);
  for (auto v : p.values) sink.u16(v);
  return out;
}

inline TopKPacket deserialize_topk(std::span<const std::uint8_t> bytes) {
  wire::ByteSource src(bytes);
  const ContainerHeader h = read_header(src);
  if (h.element_code != kTopKFormatCode) fail(ErrorCode::MalformedHeader, "not a TopK packet");
  TopKPacket p;
  p.shape = h.shape;
  const std::uint64_t k = h.block_size;
  if (k > element_count(p.shape)) fail(ErrorCode::MalformedHeader, "k exceeds the tensor size");
  if (k * kTopKBytesPerEntry > src.remaining()) fail(ErrorCode::TruncatedStream, "TopK payload truncated");
  p.indices.resize(static_cast<std::size_t>(k));
  p.values.resize(static_cast<std::size_t>(k));
  for (auto& i : p.indices) i = src.u32();
  for (auto& v : p.values) v = src.u16();
  if (src.remaining() != 0) fail(ErrorCode::MalformedHeader, "trailing bytes after TopK packet");
  return p;
}

}  // namespace mxcomm
