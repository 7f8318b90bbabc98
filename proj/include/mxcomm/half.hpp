#pragma once

// IEEE binary16 conversions (round-to-nearest-even), used for the 16-bit
// uncompressed baseline and for baseline codec payloads.

#include <array>
#include <bit>
#include <cstddef>
#include <cstdint>
#include <span>

#if defined(__F16C__) && defined(__AVX__)
#include <immintrin.h>
#endif

#include "mxcomm/error.hpp"

namespace mxcomm {

inline std::uint16_t float_to_half(float value) {
  constexpr std::uint32_t f32_infinity = 255u << 23;
  constexpr std::uint32_t f16_overflow = (127u + 16u) << 23;
  constexpr std::uint32_t denorm_magic = ((127u - 15u) + (23u - 10u) + 1u) << 23;

  std::uint32_t bits = std::bit_cast<std::uint32_t>(value);
  const std::uint32_t sign = bits & 0x80000000u;
  bits ^= sign;
  std::uint32_t out;
  if (bits >= f16_overflow) {
    out = bits > f32_infinity ? 0x7e00u : 0x7c00u;
  } else if (bits < (113u << 23)) {
    // Subnormal or zero: align the mantissa with an FP add, which rounds RNE.
    const float sum = std::bit_cast<float>(bits) + std::bit_cast<float>(denorm_magic);
    out = std::bit_cast<std::uint32_t>(sum) - denorm_magic;
  } else {
    const std::uint32_t mant_odd = (bits >> 13) & 1u;
    bits += (static_cast<std::uint32_t>(15 - 127) << 23) + 0xfffu;
    bits += mant_odd;
    out = bits >> 13;
  }
  return static_cast<std::uint16_t>(out | (sign >> 16));
}

inline float half_to_float_exact(std::uint16_t h) {
  const std::uint32_t sign = static_cast<std::uint32_t>(h & 0x8000u) << 16;
  const std::uint32_t exp = (h >> 10) & 0x1fu;
  const std::uint32_t mant = h & 0x3ffu;
  if (exp == 0x1f) return std::bit_cast<float>(sign | 0x7f800000u | (mant << 13));
  if (exp == 0) {
    // 2^-24 * mant is exact in binary32.
    const float mag = static_cast<float>(mant) * 0x1p-24f;
    return sign ? -mag : mag;
  }
  return std::bit_cast<float>(sign | ((exp + 112u) << 23) | (mant << 13));
}

namespace detail {
inline const std::array<float, 65536>& half_table() {
  static const auto table = [] {
    std::array<float, 65536> t{};
    for (std::uint32_t i = 0; i < 65536; ++i) t[i] = half_to_float_exact(static_cast<std::uint16_t>(i));
    return t;
  }();
  return table;
}
}  // namespace detail

inline float half_to_float(std::uint16_t h) { return detail::half_table()[h]; }

/// out[i] = float_to_half(in[i]).
inline void floats_to_halves(std::span<const float> in, std::span<std::uint16_t> out) {
  if (in.size() != out.size()) fail(ErrorCode::ShapeMismatch, "half conversion spans differ in length");
  std::size_t i = 0;
#if defined(__F16C__) && defined(__AVX__)
  for (; i + 8 <= in.size(); i += 8) {
    const __m128i h = _mm256_cvtps_ph(_mm256_loadu_ps(in.data() + i), _MM_FROUND_TO_NEAREST_INT | _MM_FROUND_NO_EXC);
    _mm_storeu_si128(reinterpret_cast<__m128i*>(out.data() + i), h);
  }
#endif
  for (; i < in.size(); ++i) out[i] = float_to_half(in[i]);
}

/// out[i] = half_to_float(in[i]).
inline void halves_to_floats(std::span<const std::uint16_t> in, std::span<float> out) {
  if (in.size() != out.size()) fail(ErrorCode::ShapeMismatch, "half conversion spans differ in length");
  std::size_t i = 0;
#if defined(__F16C__) && defined(__AVX__)
  for (; i + 8 <= in.size(); i += 8) {
    _mm256_storeu_ps(out.data() + i, _mm256_cvtph_ps(_mm_loadu_si128(reinterpret_cast<const __m128i*>(in.data() + i))));
  }
#endif
  const auto& table = detail::half_table();
  for (; i < in.size(); ++i) out[i] = table[in[i]];
}

/// acc[i] += half_to_float(in[i]).
inline void accumulate_halves(std::span<const std::uint16_t> in, std::span<float> acc) {
  if (in.size() != acc.size()) fail(ErrorCode::ShapeMismatch, "half accumulate spans differ in length");
  std::size_t i = 0;
#if defined(__F16C__) && defined(__AVX__)
  for (; i + 8 <= in.size(); i += 8) {
    const __m256 v = _mm256_cvtph_ps(_mm_loadu_si128(reinterpret_cast<const __m128i*>(in.data() + i)));
    _mm256_storeu_ps(acc.data() + i, _mm256_add_ps(_mm256_loadu_ps(acc.data() + i), v));
  }
#endif
  const auto& table = detail::half_table();
  for (; i < in.size(); ++i) acc[i] += table[in[i]];
}

/// Rounds a non-negative float up to the next binary16 (never below the
/// input), saturating at the largest finite half.
inline std::uint16_t float_to_half_round_up(float value) {
  std::uint16_t h = float_to_half(value);
  if (half_to_float_exact(h) < value) ++h;
  if (h >= 0x7c00u) h = 0x7bffu;
  return h;
}

}  // namespace mxcomm
