#pragma once

// Block-wise microscaling quantization: each block of consecutive values
// shares one power-of-two scale (an EkM0 code) and every value is stored as
// a low-bit element code.

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdint>
#include <limits>
#include <span>
#include <string>
#include <type_traits>
#include <vector>

#if defined(__AVX512F__) && defined(__AVX512BW__)
#define MXCOMM_HAVE_AVX512 1
#include <immintrin.h>
#endif

#include "mxcomm/bitpack.hpp"
#include "mxcomm/error.hpp"
#include "mxcomm/formats.hpp"
#include "mxcomm/tensor.hpp"

namespace mxcomm {

struct BlockEncoding {
  std::uint32_t scale_code = 0;  // 0: all-zero block
  int shared_exponent = 0;       // valid when scale_code != 0
  bool clamped = false;          // the target exponent fell outside the scale range
};

/// Precomputed encode/decode tables for one scheme. Cheap to build; build
/// once per tensor, not per block.
class BlockQuantizer {
 public:
  explicit BlockQuantizer(const SchemeDescriptor& scheme)
      : scheme_(scheme),
        grid_(enumerate_grid(scheme.element)),
        emax_(emax(scheme.element)),
        max_index_(static_cast<std::uint32_t>(scheme.element.magnitude_count() - 1)),
        sign_bit_(1u << (scheme.element.total_bits() - 1)),
        max_gap_(grid_.largest_gap()),
        saturation_limit_(grid_.max() + max_gap_ / 2.0),
        saturation_mantissa_(std::ldexp(saturation_limit_, -emax_)),
        saturate_at_(std::ldexp(1.0f, emax_ + 1)),
        fast_float_(scheme.element.kind() == ElementKind::FloatMicro &&
                    (scheme.element.mantissa_bits() >= 1 || scheme.element.exponent_bits() == 1)),
        fast_int_(scheme.element.kind() == ElementKind::IntSymmetric) {
    decode_table_.resize(scheme.element.code_count());
    for (std::uint32_t c = 0; c < scheme.element.code_count(); ++c) decode_table_[c] = scheme.element.decode(c);
  }

  const SchemeDescriptor& scheme() const noexcept { return scheme_; }
  const ValueGrid& grid() const noexcept { return grid_; }

  /// Picks the shared exponent for a block whose largest magnitude is
  /// max_abs: floor(log2(max_abs)) - emax, raised by one when the block
  /// maximum would otherwise saturate by more than half the widest grid gap,
  /// then clamped to the scale range.
  BlockEncoding choose_exponent(double max_abs) const {
    BlockEncoding enc;
    if (max_abs == 0.0) return enc;
    int target = std::ilogb(max_abs) - emax_;
    if (std::ldexp(max_abs, -target) > saturation_limit_) ++target;
    const int lo = scheme_.scale.min_exponent();
    const int hi = scheme_.scale.max_exponent();
    enc.clamped = target < lo || target > hi;
    enc.shared_exponent = std::clamp(target, lo, hi);
    enc.scale_code = scheme_.scale.code_for(enc.shared_exponent);
    return enc;
  }

  /// choose_exponent() for the bit pattern of a finite, non-negative float.
  BlockEncoding choose_exponent_bits(std::uint32_t max_bits) const {
    const auto biased = static_cast<int>(max_bits >> 23);
    if (biased == 0) return choose_exponent(static_cast<double>(std::bit_cast<float>(max_bits)));
    BlockEncoding enc;
    int target = biased - 127 - emax_;
    if (static_cast<double>(std::bit_cast<float>((max_bits & 0x7fffffu) | 0x3f800000u)) > saturation_mantissa_) ++target;
    const int lo = scheme_.scale.min_exponent();
    const int hi = scheme_.scale.max_exponent();
    enc.clamped = target < lo || target > hi;
    enc.shared_exponent = std::clamp(target, lo, hi);
    enc.scale_code = scheme_.scale.code_for(enc.shared_exponent);
    return enc;
  }

  /// Encodes up to block_size values into `codes` (one code per value).
  template <typename T>
  BlockEncoding encode(std::span<const T> values, std::span<std::uint8_t> codes) const {
    if constexpr (std::is_same_v<T, float>) {
      if (fast_float_ || fast_int_) return encode_float(values, codes);
    }
    double max_abs = 0.0;
    for (std::size_t i = 0; i < values.size(); ++i) {
      const double a = std::fabs(static_cast<double>(values[i]));
      if (!(a <= std::numeric_limits<double>::max())) {
        fail(ErrorCode::NonFiniteInput, "value " + std::to_string(i) + " of block is not finite");
      }
      max_abs = std::max(max_abs, a);
    }
    BlockEncoding enc = choose_exponent(max_abs);
    if (enc.scale_code == 0) {
      std::fill(codes.begin(), codes.begin() + static_cast<std::ptrdiff_t>(values.size()), std::uint8_t{0});
      return enc;
    }
    const double inv_scale = std::ldexp(1.0, -enc.shared_exponent);
    std::uint32_t any = 0;
    for (std::size_t i = 0; i < values.size(); ++i) {
      const double v = static_cast<double>(values[i]);
      const std::uint32_t index = magnitude_index(std::fabs(v) * inv_scale);
      const std::uint32_t code = index | ((v < 0.0 && index != 0) ? sign_bit_ : 0u);
      codes[i] = static_cast<std::uint8_t>(code);
      any |= code;
    }
    // A block whose values all round to zero is canonically the zero block.
    if (any == 0) enc = BlockEncoding{};
    return enc;
  }

  /// Encodes the blocks of v[0, n) (the last may be short) into codes[0, n)
  /// and scale_codes[0, num_blocks). Float input takes the fast path when
  /// the element format has one.
  template <typename T>
  void encode_blocks(const T* v, std::uint64_t n, std::uint8_t* codes, std::uint8_t* scale_codes) const {
    const std::uint32_t bs = scheme_.block_size;
    for (std::uint64_t start = 0, b = 0; start < n; start += bs, ++b) {
      const auto len = static_cast<std::size_t>(std::min<std::uint64_t>(bs, n - start));
      BlockEncoding enc;
      if constexpr (std::is_same_v<T, float>) {
        if (fast_float_ || fast_int_) {
          enc = encode_float_raw(v + start, len, codes + start);
          scale_codes[b] = static_cast<std::uint8_t>(enc.scale_code);
          continue;
        }
      }
      enc = encode(std::span<const T>(v + start, len), std::span<std::uint8_t>(codes + start, len));
      scale_codes[b] = static_cast<std::uint8_t>(enc.scale_code);
    }
  }

  template <typename T>
  void decode(std::uint32_t scale_code, std::span<const std::uint8_t> codes, std::span<T> out) const {
    check_scale_code(scale_code);
    if (scale_code == 0) {
      std::fill(out.begin(), out.begin() + static_cast<std::ptrdiff_t>(codes.size()), T{0});
      return;
    }
    const double scale = std::ldexp(1.0, scheme_.scale.exponent_for(scale_code));
    for (std::size_t i = 0; i < codes.size(); ++i) {
      if (codes[i] >= decode_table_.size()) {
        fail(ErrorCode::MalformedCode, "code " + std::to_string(codes[i]) + " exceeds " +
                                           std::to_string(scheme_.element.total_bits()) + "-bit range");
      }
      out[i] = static_cast<T>(decode_table_[codes[i]] * scale);
    }
  }

  /// Worst-case absolute error of one block: 2^shared_exp * (largest grid
  /// gap) / 2. Zero blocks are exact. A block clamped at the top of the scale
  /// range may saturate and carries no bound (infinity); clamping at the
  /// bottom only makes the grid finer, so the bound still holds.
  double error_bound(const BlockEncoding& enc) const {
    if (enc.scale_code == 0) return 0.0;
    if (enc.clamped && enc.shared_exponent == scheme_.scale.max_exponent()) {
      return std::numeric_limits<double>::infinity();
    }
    return std::ldexp(max_gap_ / 2.0, enc.shared_exponent);
  }

  double decode_value(std::uint32_t code) const { return decode_table_.at(code); }

  void check_scale_code(std::uint32_t scale_code) const {
    if (scale_code > scheme_.scale.max_code()) {
      fail(ErrorCode::MalformedCode, "scale code " + std::to_string(scale_code) + " exceeds " +
                                         std::to_string(scheme_.scale.exponent_bits()) + "-bit range");
    }
  }

  /// Grid index of the nearest representable magnitude to `scaled`
  /// (ties to the even index), saturating at the largest magnitude.
  std::uint32_t magnitude_index(double scaled) const {
    if (fast_float_) return float_index(scaled);
    if (scheme_.element.kind() == ElementKind::IntSymmetric) {
      if (scaled >= static_cast<double>(max_index_)) return max_index_;
      return static_cast<std::uint32_t>(round_half_even(scaled));
    }
    return grid_search_index(scaled);
  }

 private:
  // encode() for binary32 input without leaving binary32. |v| * 2^-e is exact
  // unless it drops below 2^-126, far under every rounding threshold, so the
  // codes match the double path.
  BlockEncoding encode_float(std::span<const float> values, std::span<std::uint8_t> codes) const {
    return encode_float_raw(values.data(), values.size(), codes.data());
  }

  BlockEncoding encode_float_raw(const float* v, std::size_t len, std::uint8_t* codes) const {
    const std::uint32_t max_bits = max_abs_bits(v, len);
    if (max_bits >= 0x7f800000u) {
      std::size_t i = 0;
      while (std::isfinite(v[i])) ++i;
      fail(ErrorCode::NonFiniteInput, "value " + std::to_string(i) + " of block is not finite");
    }
    BlockEncoding enc = choose_exponent_bits(max_bits);
    if (enc.scale_code == 0) {
      std::fill_n(codes, len, std::uint8_t{0});
      return enc;
    }
    // 2^-e as a float; E8M0's extreme exponents fall outside the normal range.
    const int inv_exp = -enc.shared_exponent;
    const float inv_scale = inv_exp >= -126 && inv_exp <= 127
                                ? std::bit_cast<float>(static_cast<std::uint32_t>(inv_exp + 127) << 23)
                                : static_cast<float>(std::ldexp(1.0, inv_exp));
    std::uint32_t any = 0;
    std::size_t i = 0;
#if MXCOMM_HAVE_AVX512
    any = encode_lanes(v, len / 16 * 16, inv_scale, codes);
    i = len / 16 * 16;
#endif
    for (; i < len; ++i) {
      const std::uint32_t code = encode_one(v[i], inv_scale);
      codes[i] = static_cast<std::uint8_t>(code);
      any |= code;
    }
    if (any == 0) enc = BlockEncoding{};
    return enc;
  }

  static std::uint32_t max_abs_bits(const float* v, std::size_t len) {
    std::uint32_t max_bits = 0;
    std::size_t i = 0;
#if MXCOMM_HAVE_AVX512
    if (len >= 16) {
      __m512i m = _mm512_setzero_si512();
      const __m512i abs_mask = _mm512_set1_epi32(0x7fffffff);
      for (; i + 16 <= len; i += 16) m = _mm512_max_epu32(m, _mm512_and_si512(_mm512_loadu_si512(v + i), abs_mask));
      max_bits = _mm512_reduce_max_epu32(m);
    }
#endif
    for (; i < len; ++i) max_bits = std::max(max_bits, std::bit_cast<std::uint32_t>(v[i]) & 0x7fffffffu);
    return max_bits;
  }

  // One value of encode_float. |v| * inv_scale is exact unless it drops
  // below 2^-126, far under every rounding threshold, so the codes match the
  // double path.
  std::uint32_t encode_one(float value, float inv_scale) const {
    const std::uint32_t u = std::bit_cast<std::uint32_t>(value);
    const float scaled = std::bit_cast<float>(u & 0x7fffffffu) * inv_scale;
    const int max_index = static_cast<int>(max_index_);
    int index;
    if (fast_float_) {
      const int m = scheme_.element.mantissa_bits();
      const int bias = scheme_.element.bias();
      // A block clamped at the top of a narrow scale range can scale far past
      // the grid; 2^(emax+1) already saturates and keeps n small.
      const float capped = std::min(scaled, saturate_at_);
      const int binade = std::max(static_cast<int>(std::bit_cast<std::uint32_t>(capped) >> 23) - 127, 1 - bias);
      const float to_int = std::bit_cast<float>(static_cast<std::uint32_t>(127 + m - binade) << 23);
      const int n = static_cast<int>((capped * to_int + 0x1p23f) - 0x1p23f);
      index = std::min(((binade + bias) << m) + n - (1 << m), max_index);
    } else {
      const float clipped = std::min(scaled, static_cast<float>(max_index));
      index = static_cast<int>((clipped + 0x1p23f) - 0x1p23f);
    }
    // Branch-free sign: random signs would otherwise mispredict half the time.
    const std::uint32_t negative = (u >> 31) & static_cast<std::uint32_t>(index != 0);
    return static_cast<std::uint32_t>(index) | (negative * sign_bit_);
  }

#if MXCOMM_HAVE_AVX512
  // encode_one over 16 lanes at a time; len is a multiple of 16. Float to
  // int conversion uses the MXCSR rounding mode, round-to-nearest-even by
  // default, matching the scalar magic-number rounding.
  std::uint32_t encode_lanes(const float* v, std::size_t len, float inv_scale, std::uint8_t* codes) const {
    const __m512 inv = _mm512_set1_ps(inv_scale);
    const __m512i abs_mask = _mm512_set1_epi32(0x7fffffff);
    const __m512i max_index = _mm512_set1_epi32(static_cast<int>(max_index_));
    const __m512i sign_bit = _mm512_set1_epi32(static_cast<int>(sign_bit_));
    const __m512i zero = _mm512_setzero_si512();
    __m512i any = zero;
    if (fast_float_) {
      const int m = scheme_.element.mantissa_bits();
      const int bias = scheme_.element.bias();
      const __m512i lo = _mm512_set1_epi32(1 - bias);
      const __m512 cap = _mm512_set1_ps(saturate_at_);
      const __m512i exp_bias = _mm512_set1_epi32(127);
      const __m512i to_int_base = _mm512_set1_epi32(127 + m);
      const __m512i vbias = _mm512_set1_epi32(bias);
      const __m512i shift = _mm512_set1_epi32(m);
      const __m512i first = _mm512_set1_epi32(1 << m);
      for (std::size_t i = 0; i < len; i += 16) {
        const __m512i u = _mm512_loadu_si512(v + i);
        const __m512 scaled =
            _mm512_min_ps(_mm512_mul_ps(_mm512_castsi512_ps(_mm512_and_si512(u, abs_mask)), inv), cap);
        __m512i binade = _mm512_sub_epi32(_mm512_srli_epi32(_mm512_castps_si512(scaled), 23), exp_bias);
        binade = _mm512_max_epi32(binade, lo);
        const __m512 to_int = _mm512_castsi512_ps(_mm512_slli_epi32(_mm512_sub_epi32(to_int_base, binade), 23));
        const __m512i n = _mm512_cvtps_epi32(_mm512_mul_ps(scaled, to_int));
        __m512i index = _mm512_add_epi32(_mm512_sllv_epi32(_mm512_add_epi32(binade, vbias), shift),
                                         _mm512_sub_epi32(n, first));
        index = _mm512_min_epi32(index, max_index);
        const __mmask16 neg = _mm512_cmplt_epi32_mask(u, zero) & _mm512_test_epi32_mask(index, index);
        const __m512i code = _mm512_mask_or_epi32(index, neg, index, sign_bit);
        any = _mm512_or_si512(any, code);
        _mm_storeu_si128(reinterpret_cast<__m128i*>(codes + i), _mm512_cvtepi32_epi8(code));
      }
    } else {
      const __m512 top = _mm512_set1_ps(static_cast<float>(max_index_));
      for (std::size_t i = 0; i < len; i += 16) {
        const __m512i u = _mm512_loadu_si512(v + i);
        const __m512 scaled = _mm512_min_ps(_mm512_mul_ps(_mm512_castsi512_ps(_mm512_and_si512(u, abs_mask)), inv), top);
        const __m512i index = _mm512_cvtps_epi32(scaled);
        const __mmask16 neg = _mm512_cmplt_epi32_mask(u, zero) & _mm512_test_epi32_mask(index, index);
        const __m512i code = _mm512_mask_or_epi32(index, neg, index, sign_bit);
        any = _mm512_or_si512(any, code);
        _mm_storeu_si128(reinterpret_cast<__m128i*>(codes + i), _mm512_cvtepi32_epi8(code));
      }
    }
    return static_cast<std::uint32_t>(_mm512_reduce_or_epi32(any));
  }
#endif

  // Exact round-half-even for 0 <= x < 2^52 under the default FP environment.
  static double round_half_even(double x) {
    constexpr double magic = 0x1p52;
    return (x + magic) - magic;
  }

  // Within one binade [2^e, 2^(e+1)) an ExMy grid is uniform with step
  // 2^(e-m), so rounding the scaled mantissa to an integer is exactly grid
  // rounding; mantissa parity equals code-index parity, so RNE there is
  // ties-to-even-index. A carry into the next binade lands on its first code.
  std::uint32_t float_index(double scaled) const {
    const int m = scheme_.element.mantissa_bits();
    const int bias = scheme_.element.bias();
    const auto raw = std::bit_cast<std::uint64_t>(scaled);
    const int binade = std::max(static_cast<int>((raw >> 52) & 0x7ff) - 1023, 1 - bias);
    const double to_int = std::bit_cast<double>(static_cast<std::uint64_t>(1023 + m - binade) << 52);
    const auto n = static_cast<std::int64_t>(round_half_even(scaled * to_int));
    const std::int64_t index = (static_cast<std::int64_t>(binade + bias) << m) + n - (std::int64_t{1} << m);
    return static_cast<std::uint32_t>(std::min<std::int64_t>(index, max_index_));
  }

  std::uint32_t grid_search_index(double scaled) const {
    const auto& g = grid_.values;
    if (scaled >= g.back()) return max_index_;
    const auto hi = static_cast<std::size_t>(std::upper_bound(g.begin(), g.end(), scaled) - g.begin());
    const std::size_t lo = hi - 1;
    const double mid = (g[lo] + g[hi]) / 2.0;
    if (scaled < mid) return static_cast<std::uint32_t>(lo);
    if (scaled > mid) return static_cast<std::uint32_t>(hi);
    return static_cast<std::uint32_t>(lo % 2 == 0 ? lo : hi);
  }

  SchemeDescriptor scheme_;
  ValueGrid grid_;
  int emax_;
  std::uint32_t max_index_;
  std::uint32_t sign_bit_;
  double max_gap_;
  double saturation_limit_;
  double saturation_mantissa_;
  float saturate_at_;
  bool fast_float_;
  bool fast_int_;
  std::vector<double> decode_table_;
};

// ---------------------------------------------------------------------------
// Single-block convenience API

struct QuantizedBlock {
  std::uint32_t scale_code = 0;
  std::vector<std::uint8_t> codes;
  BlockEncoding encoding;
};

template <typename T>
QuantizedBlock quantize_block(std::span<const T> values, const SchemeDescriptor& scheme) {
  if (values.size() > scheme.block_size) {
    fail(ErrorCode::InvalidArgument, "block holds " + std::to_string(values.size()) + " values, block_size is " +
                                         std::to_string(scheme.block_size));
  }
  QuantizedBlock out;
  out.codes.resize(values.size());
  out.encoding = BlockQuantizer(scheme).encode(values, std::span<std::uint8_t>(out.codes));
  out.scale_code = out.encoding.scale_code;
  return out;
}

inline std::vector<double> dequantize_block(std::uint32_t scale_code, std::span<const std::uint8_t> codes,
                                            const SchemeDescriptor& scheme) {
  std::vector<double> out(codes.size());
  BlockQuantizer(scheme).decode(scale_code, codes, std::span<double>(out));
  return out;
}

// ---------------------------------------------------------------------------
// Tensors

/// Packed wire object: one scale code per block, one element code per value,
/// both LSB-first bit streams.
struct CompressedTensor {
  SchemeDescriptor scheme;
  Shape shape;
  std::uint64_t num_blocks = 0;
  std::vector<std::uint8_t> scale_stream;
  std::vector<std::uint8_t> element_stream;

  std::uint64_t element_count() const { return mxcomm::element_count(shape); }

  friend bool operator==(const CompressedTensor&, const CompressedTensor&) = default;
};

/// Non-owning view of the same data, e.g. over a received byte buffer.
struct CompressedView {
  SchemeDescriptor scheme;
  Shape shape;
  std::uint64_t num_blocks = 0;
  std::span<const std::uint8_t> scale_stream;
  std::span<const std::uint8_t> element_stream;

  std::uint64_t element_count() const { return mxcomm::element_count(shape); }
};

inline CompressedView view(const CompressedTensor& ct) {
  return {ct.scheme, ct.shape, ct.num_blocks, ct.scale_stream, ct.element_stream};
}

inline std::uint64_t block_count(std::uint64_t elements, std::uint32_t block_size) {
  return elements / block_size + (elements % block_size != 0 ? 1 : 0);
}

namespace detail {

// Blocks handled per pack/unpack pass. A multiple of 8, so every chunk of
// scale or element codes starts on a byte boundary.
inline constexpr std::uint64_t kChunkBlocks = 256;

// Walks the tensor block by block in row-major order; the last block may be short.
template <typename Fn>
void for_each_block(std::uint64_t elements, std::uint32_t block_size, Fn&& fn) {
  for (std::uint64_t start = 0, b = 0; start < elements; start += block_size, ++b) {
    fn(b, start, static_cast<std::size_t>(std::min<std::uint64_t>(block_size, elements - start)));
  }
}

inline void validate_streams(const CompressedView& ct) {
  const std::uint64_t n = ct.element_count();
  if (ct.num_blocks != block_count(n, ct.scheme.block_size)) {
    fail(ErrorCode::MalformedHeader, "num_blocks " + std::to_string(ct.num_blocks) + " inconsistent with shape " +
                                         shape_string(ct.shape));
  }
  const auto scale_bytes = packed_bytes(ct.num_blocks, ct.scheme.scale.exponent_bits());
  const auto element_bytes = packed_bytes(n, ct.scheme.element.total_bits());
  if (ct.scale_stream.size() < scale_bytes || ct.element_stream.size() < element_bytes) {
    fail(ErrorCode::TruncatedStream, "compressed streams shorter than the shape requires");
  }
  if (ct.scale_stream.size() != scale_bytes || ct.element_stream.size() != element_bytes) {
    fail(ErrorCode::MalformedHeader, "compressed streams longer than the shape requires");
  }
}

inline void validate_streams(const CompressedTensor& ct) { validate_streams(view(ct)); }

}  // namespace detail


namespace detail {

// Writes the scale and element streams for `values` into spans of exactly
// packed_bytes(num_blocks, scale bits) and packed_bytes(n, element bits).
inline void encode_streams(std::span<const float> values, const SchemeDescriptor& scheme,
                           std::span<std::uint8_t> scale_out, std::span<std::uint8_t> element_out) {
  const std::uint64_t n = values.size();
  const std::uint32_t bs = scheme.block_size;
  const std::uint64_t blocks = block_count(n, bs);
  const int scale_bits = scheme.scale.exponent_bits();
  const int element_bits = scheme.element.total_bits();
  if (scale_out.size() != packed_bytes(blocks, scale_bits) || element_out.size() != packed_bytes(n, element_bits)) {
    fail(ErrorCode::InvalidArgument, "stream buffers do not match the tensor size");
  }
  const BlockQuantizer quantizer(scheme);
  std::vector<std::uint8_t> codes(static_cast<std::size_t>(std::min<std::uint64_t>(kChunkBlocks * bs, n)));
  std::vector<std::uint8_t> scale_codes(kChunkBlocks);
  for (std::uint64_t b0 = 0; b0 < blocks; b0 += kChunkBlocks) {
    const std::uint64_t b1 = std::min(blocks, b0 + kChunkBlocks);
    const std::uint64_t v0 = b0 * bs;
    const std::uint64_t v1 = std::min(n, b1 * bs);
    try {
      quantizer.encode_blocks(values.data() + v0, v1 - v0, codes.data(), scale_codes.data());
    } catch (const Error& e) {
      // Locate the offending block for the message.
      std::uint64_t b = b0;
      while (b + 1 < b1 && std::all_of(values.begin() + static_cast<std::ptrdiff_t>(b * bs),
                                       values.begin() + static_cast<std::ptrdiff_t>(std::min(n, (b + 1) * bs)),
                                       [](float x) { return std::isfinite(x); })) {
        ++b;
      }
      rethrow_with_context(e, "block " + std::to_string(b));
    }
    pack_codes(codes.data(), static_cast<std::size_t>(v1 - v0), element_bits,
               element_out.data() + v0 * static_cast<std::uint64_t>(element_bits) / 8);
    pack_codes(scale_codes.data(), static_cast<std::size_t>(b1 - b0), scale_bits,
               scale_out.data() + b0 * static_cast<std::uint64_t>(scale_bits) / 8);
  }
}

}  // namespace detail

inline CompressedTensor compress(std::span<const float> values, Shape shape, const SchemeDescriptor& scheme) {
  if (element_count(shape) != values.size()) {
    fail(ErrorCode::ShapeMismatch, "shape " + shape_string(shape) + " does not hold " + std::to_string(values.size()) +
                                       " values");
  }
  CompressedTensor ct{scheme, std::move(shape), block_count(values.size(), scheme.block_size), {}, {}};
  ct.scale_stream.resize(packed_bytes(ct.num_blocks, scheme.scale.exponent_bits()));
  ct.element_stream.resize(packed_bytes(values.size(), scheme.element.total_bits()));
  detail::encode_streams(values, scheme, ct.scale_stream, ct.element_stream);
  return ct;
}

inline CompressedTensor compress_tensor(const Tensor& tensor, const SchemeDescriptor& scheme) {
  return compress(std::span<const float>(tensor.data), tensor.shape, scheme);
}

namespace detail {

enum class DecodeMode { Store, Accumulate };

template <DecodeMode mode>
inline void emit(float* out, float v) {
  if constexpr (mode == DecodeMode::Store) {
    *out = v;
  } else {
    *out += v;
  }
}

}  // namespace detail

/// Decode tables for one scheme, built once and reused across calls; the
/// netbench reduction decodes many small block ranges per payload.
class StreamDecoder {
 public:
  explicit StreamDecoder(const SchemeDescriptor& scheme)
      : scheme_(scheme), quantizer_(scheme), wide_table_(scheme.element.code_count()) {
    for (std::uint32_t c = 0; c < wide_table_.size(); ++c) {
      wide_table_[c] = static_cast<float>(quantizer_.decode_value(c));
      if (c < 32) table_[c] = wide_table_[c];
    }
    // Per scale code: 2^exponent as double and float, and whether the float
    // is usable. Zero-block scales are 0; anything else outside the normal
    // binary32 range (E8M0 extremes only) takes the double path.
    const std::uint32_t count = scheme.scale.max_code() + 1;
    code_scale_.assign(count, 0.0);
    code_scale_f_.assign(count, 0.0f);
    code_normal_.assign(count, 1);
    for (std::uint32_t c = 1; c < count; ++c) {
      code_scale_[c] = std::ldexp(1.0, scheme.scale.exponent_for(c));
      code_scale_f_[c] = static_cast<float>(code_scale_[c]);
      code_normal_[c] = std::isnormal(code_scale_f_[c]) ? 1 : 0;
    }
  }

  const SchemeDescriptor& scheme() const noexcept { return scheme_; }

  /// out[i] = decoded[i] over blocks [first, last); first must be a multiple of 8.
  void decode_into(const CompressedView& ct, std::span<float> out, std::uint64_t first = 0,
                   std::uint64_t last = std::numeric_limits<std::uint64_t>::max()) const {
    check(ct, out);
    run<detail::DecodeMode::Store>(ct, out.data(), first, last);
  }

  /// acc[i] += decoded[i] over blocks [first, last); first must be a multiple of 8.
  void accumulate(const CompressedView& ct, std::span<float> acc, std::uint64_t first = 0,
                  std::uint64_t last = std::numeric_limits<std::uint64_t>::max()) const {
    check(ct, acc);
    run<detail::DecodeMode::Accumulate>(ct, acc.data(), first, last);
  }

 private:
  void check(const CompressedView& ct, std::span<float> out) const {
    if (!(ct.scheme == scheme_)) fail(ErrorCode::InvalidArgument, "decoder built for a different scheme");
    if (out.size() != ct.element_count()) fail(ErrorCode::ShapeMismatch, "output span does not match compressed shape");
  }

  template <detail::DecodeMode mode>
  void run(const CompressedView& ct, float* out, std::uint64_t first, std::uint64_t last) const {
    detail::validate_streams(ct);
    last = std::min(last, ct.num_blocks);
    if (first % 8 != 0 || first > last) {
      fail(ErrorCode::InvalidArgument, "block range must start at a multiple of 8 and not run backwards");
    }
    const int scale_bits = scheme_.scale.exponent_bits();
    const int element_bits = scheme_.element.total_bits();
    const std::uint32_t bs = scheme_.block_size;
    const std::uint64_t n = ct.element_count();
    const std::uint64_t span_blocks = std::min(last - first, detail::kChunkBlocks);
    std::vector<std::uint8_t> codes(static_cast<std::size_t>(std::min<std::uint64_t>(span_blocks * bs, n)));
    std::uint8_t scale_codes[detail::kChunkBlocks];
    float scales[detail::kChunkBlocks];
#if MXCOMM_HAVE_AVX512
    const bool lanes = wide_table_.size() <= 32 && (bs % 16 == 0 || bs == 8);
    const __m512 t0 = _mm512_load_ps(table_);
    const __m512 t1 = _mm512_load_ps(table_ + 16);
#endif
    for (std::uint64_t b0 = first; b0 < last; b0 += detail::kChunkBlocks) {
      const std::uint64_t b1 = std::min(last, b0 + detail::kChunkBlocks);
      const std::uint64_t v0 = b0 * bs;
      const std::uint64_t v1 = std::min(n, b1 * bs);
      unpack_codes(ct.element_stream.data() + v0 * static_cast<std::uint64_t>(element_bits) / 8,
                   static_cast<std::size_t>(v1 - v0), element_bits, codes.data());
      unpack_codes(ct.scale_stream.data() + b0 * static_cast<std::uint64_t>(scale_bits) / 8,
                   static_cast<std::size_t>(b1 - b0), scale_bits, scale_codes);
      // Scale codes are scale-bits wide, so every one indexes the tables.
      std::uint8_t all_normal = 1;
      for (std::uint64_t b = 0; b < b1 - b0; ++b) {
        scales[b] = code_scale_f_[scale_codes[b]];
        all_normal &= code_normal_[scale_codes[b]];
      }
      std::uint64_t v = v0;
#if MXCOMM_HAVE_AVX512
      if (lanes && all_normal) {
        const std::uint64_t lane_end = v0 + (v1 - v0) / 16 * 16;
        for (; v < lane_end; v += 16) {
          const std::uint64_t b = (v - v0) / bs;
          const __m512 scale = bs == 8 ? _mm512_insertf32x8(_mm512_castps256_ps512(_mm256_set1_ps(scales[b])),
                                                            _mm256_set1_ps(scales[b + 1]), 1)
                                       : _mm512_set1_ps(scales[b]);
          const __m512i idx =
              _mm512_cvtepu8_epi32(_mm_loadu_si128(reinterpret_cast<const __m128i*>(codes.data() + (v - v0))));
          const __m512 val = _mm512_mul_ps(_mm512_permutex2var_ps(t0, idx, t1), scale);
          if constexpr (mode == detail::DecodeMode::Store) {
            _mm512_storeu_ps(out + v, val);
          } else {
            _mm512_storeu_ps(out + v, _mm512_add_ps(_mm512_loadu_ps(out + v), val));
          }
        }
      }
#endif
      for (; v < v1; ++v) {
        const std::uint64_t b = (v - v0) / bs;
        const std::uint8_t c = codes[static_cast<std::size_t>(v - v0)];
        if (all_normal || code_normal_[scale_codes[b]]) {
          detail::emit<mode>(out + v, wide_table_[c] * scales[b]);
        } else {
          detail::emit<mode>(out + v, static_cast<float>(quantizer_.decode_value(c) * code_scale_[scale_codes[b]]));
        }
      }
    }
  }

  SchemeDescriptor scheme_;
  BlockQuantizer quantizer_;
  alignas(64) float table_[32] = {};
  std::vector<float> wide_table_;
  std::vector<double> code_scale_;
  std::vector<float> code_scale_f_;
  std::vector<std::uint8_t> code_normal_;
};

/// out[i] = decoded[i] for the values of blocks [first_block, last_block);
/// first_block must be a multiple of 8.
inline void decompress_into(const CompressedView& ct, std::span<float> out, std::uint64_t first_block = 0,
                            std::uint64_t last_block = std::numeric_limits<std::uint64_t>::max()) {
  StreamDecoder(ct.scheme).decode_into(ct, out, first_block, last_block);
}

/// acc[i] += decoded[i] for the values of blocks [first_block, last_block);
/// first_block must be a multiple of 8.
inline void decompress_accumulate(const CompressedView& ct, std::span<float> acc, std::uint64_t first_block = 0,
                                  std::uint64_t last_block = std::numeric_limits<std::uint64_t>::max()) {
  StreamDecoder(ct.scheme).accumulate(ct, acc, first_block, last_block);
}

inline void decompress_into(const CompressedTensor& ct, std::span<float> out) { decompress_into(view(ct), out); }
inline void decompress_accumulate(const CompressedTensor& ct, std::span<float> acc) {
  decompress_accumulate(view(ct), acc);
}

inline Tensor decompress_tensor(const CompressedTensor& ct) {
  Tensor out(ct.shape);
  decompress_into(ct, std::span<float>(out.data));
  return out;
}

/// Per-value worst-case absolute roundtrip error implied by each value's
/// block (infinity inside blocks clamped at the top of the scale range).
inline std::vector<double> error_bounds(std::span<const float> values, const SchemeDescriptor& scheme) {
  const BlockQuantizer quantizer(scheme);
  std::vector<double> bounds(values.size());
  detail::for_each_block(values.size(), scheme.block_size, [&](std::uint64_t, std::uint64_t start, std::size_t len) {
    double max_abs = 0.0;
    for (std::size_t i = 0; i < len; ++i) max_abs = std::max(max_abs, std::fabs(static_cast<double>(values[start + i])));
    const double bound = quantizer.error_bound(quantizer.choose_exponent(max_abs));
    std::fill_n(bounds.begin() + static_cast<std::ptrdiff_t>(start), len, bound);
  });
  return bounds;
}

}  // namespace mxcomm
