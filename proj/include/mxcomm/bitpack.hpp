#pragma once

// LSB-first bit packing: the first value written occupies the lowest-order
// bits of the first byte. Streams are padded with zero bits to a byte
// boundary only at the very end.

#include <bit>
#include <cstddef>
#include <cstdint>
#include <cstring>
#include <span>
#include <vector>

#if defined(__BMI2__)
#include <immintrin.h>
#endif

#include "mxcomm/error.hpp"

namespace mxcomm {

constexpr std::size_t packed_bytes(std::size_t count, int bits_per_value) {
  return (count * static_cast<std::size_t>(bits_per_value) + 7) / 8;
}

class BitWriter {
 public:
  explicit BitWriter(std::vector<std::uint8_t>& out) : out_(out) {}
  BitWriter(const BitWriter&) = delete;
  BitWriter& operator=(const BitWriter&) = delete;
  ~BitWriter() { flush(); }

  // bits <= 32
  void put(std::uint32_t value, int bits) {
    acc_ |= static_cast<std::uint64_t>(value & ((1ull << bits) - 1ull)) << fill_;
    fill_ += bits;
    if (fill_ >= 32) {
      for (int i = 0; i < 4; ++i) out_.push_back(static_cast<std::uint8_t>(acc_ >> (8 * i)));
      acc_ >>= 32;
      fill_ -= 32;
    }
  }

  /// Emits the trailing partial byte, if any. Idempotent.
  void flush() {
    while (fill_ > 0) {
      out_.push_back(static_cast<std::uint8_t>(acc_));
      acc_ >>= 8;
      fill_ = fill_ > 8 ? fill_ - 8 : 0;
    }
    acc_ = 0;
  }

 private:
  std::vector<std::uint8_t>& out_;
  std::uint64_t acc_ = 0;
  int fill_ = 0;
};

namespace detail {
// Eight lanes of `bits` low-order ones, one lane per byte.
constexpr std::uint64_t lane_mask(int bits) {
  std::uint64_t m = 0;
  for (int k = 0; k < 8; ++k) m |= ((1ull << bits) - 1ull) << (8 * k);
  return m;
}

inline std::uint64_t load_le(const std::uint8_t* p, std::size_t n) {
  std::uint64_t w = 0;
  if (n == 8) {
    std::memcpy(&w, p, 8);
    if constexpr (std::endian::native == std::endian::big) w = __builtin_bswap64(w);
    return w;
  }
  for (std::size_t b = 0; b < n; ++b) w |= static_cast<std::uint64_t>(p[b]) << (8 * b);
  return w;
}

inline void store_le(std::uint8_t* p, std::uint64_t w, std::size_t n) {
  if (n == 8) {
    if constexpr (std::endian::native == std::endian::big) w = __builtin_bswap64(w);
    std::memcpy(p, &w, 8);
    return;
  }
  for (std::size_t b = 0; b < n; ++b) p[b] = static_cast<std::uint8_t>(w >> (8 * b));
}
}  // namespace detail

/// Packs codes[i] (each < 2^bits, bits in [1, 8]) into exactly
/// packed_bytes(n, bits) bytes at `out`, LSB-first, eight codes (`bits`
/// bytes) at a time.
inline void pack_codes(const std::uint8_t* codes, std::size_t n, int bits, std::uint8_t* out) {
  const auto nb = static_cast<std::size_t>(bits);
  std::uint8_t* const end = out + packed_bytes(n, bits);
  std::size_t i = 0;
#if defined(__BMI2__)
  const std::uint64_t mask = detail::lane_mask(bits);
  for (; i + 8 <= n; i += 8, out += nb) {
    const std::uint64_t word = _pext_u64(detail::load_le(codes + i, 8), mask);
    // A full 8-byte store is fine while it stays inside the output; the
    // spill is overwritten by the next group.
    detail::store_le(out, word, out + 8 <= end ? 8 : nb);
  }
#else
  for (; i + 8 <= n; i += 8, out += nb) {
    std::uint64_t word = 0;
    for (int k = 0; k < 8; ++k) word |= static_cast<std::uint64_t>(codes[i + k]) << (k * bits);
    detail::store_le(out, word, nb);
  }
#endif
  if (i < n) {
    std::uint64_t word = 0;
    for (std::size_t k = 0; i + k < n; ++k) word |= static_cast<std::uint64_t>(codes[i + k]) << (k * nb);
    detail::store_le(out, word, static_cast<std::size_t>(end - out));
  }
}

/// Inverse of pack_codes; `in` must hold packed_bytes(n, bits) bytes.
inline void unpack_codes(const std::uint8_t* in, std::size_t n, int bits, std::uint8_t* codes) {
  const auto nb = static_cast<std::size_t>(bits);
  const std::uint8_t* const end = in + packed_bytes(n, bits);
  const std::uint64_t mask = (1ull << bits) - 1ull;
  std::size_t i = 0;
#if defined(__BMI2__)
  const std::uint64_t lanes = detail::lane_mask(bits);
  for (; i + 8 <= n; i += 8, in += nb) {
    // pdep consumes only the low 8*bits bits, so over-reading is harmless.
    detail::store_le(codes + i, _pdep_u64(detail::load_le(in, in + 8 <= end ? 8 : nb), lanes), 8);
  }
#else
  for (; i + 8 <= n; i += 8, in += nb) {
    const std::uint64_t word = detail::load_le(in, nb);
    for (int k = 0; k < 8; ++k) codes[i + k] = static_cast<std::uint8_t>((word >> (k * bits)) & mask);
  }
#endif
  if (i < n) {
    const std::uint64_t word = detail::load_le(in, static_cast<std::size_t>(end - in));
    for (std::size_t k = 0; i + k < n; ++k) codes[i + k] = static_cast<std::uint8_t>((word >> (k * nb)) & mask);
  }
}

class BitReader {
 public:
  explicit BitReader(std::span<const std::uint8_t> in) : in_(in) {}

  // bits <= 32
  std::uint32_t get(int bits) {
    while (fill_ < bits) {
      if (pos_ >= in_.size()) fail(ErrorCode::TruncatedStream, "bit stream exhausted");
      acc_ |= static_cast<std::uint64_t>(in_[pos_++]) << fill_;
      fill_ += 8;
    }
    const auto value = static_cast<std::uint32_t>(acc_ & ((1ull << bits) - 1ull));
    acc_ >>= bits;
    fill_ -= bits;
    return value;
  }

 private:
  std::span<const std::uint8_t> in_;
  std::size_t pos_ = 0;
  std::uint64_t acc_ = 0;
  int fill_ = 0;
};

}  // namespace mxcomm
