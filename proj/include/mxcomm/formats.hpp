#pragma once

// Low-bit element formats (ExMy floats and sign-magnitude integers), the
// exponent-only EkM0 block scale, and the (element, block, scale) scheme
// triple that the rest of the library is parameterized on.

#include <algorithm>
#include <array>
#include <cmath>
#include <compare>
#include <cstdint>
#include <numeric>
#include <optional>
#include <ostream>
#include <string>
#include <string_view>
#include <vector>

#include "mxcomm/error.hpp"

namespace mxcomm {

/// Exact non-negative rational, used for effective bits so that values such
/// as 4 + 5/8 compare and print without rounding.
struct Rational {
  std::int64_t num = 0;
  std::int64_t den = 1;

  constexpr Rational() = default;
  constexpr Rational(std::int64_t n, std::int64_t d = 1) : num(n), den(d) { normalize(); }

  constexpr double to_double() const { return static_cast<double>(num) / static_cast<double>(den); }

  constexpr Rational operator+(const Rational& o) const { return {num * o.den + o.num * den, den * o.den}; }

  friend constexpr bool operator==(const Rational& a, const Rational& b) {
    return a.num == b.num && a.den == b.den;
  }
  friend constexpr std::strong_ordering operator<=>(const Rational& a, const Rational& b) {
    return a.num * b.den <=> b.num * a.den;
  }

 private:
  constexpr void normalize() {
    if (den < 0) {
      den = -den;
      num = -num;
    }
    const std::int64_t g = std::gcd(num < 0 ? -num : num, den);
    if (g > 1) {
      num /= g;
      den /= g;
    }
  }
};

inline std::ostream& operator<<(std::ostream& os, const Rational& r) {
  return os << r.num << '/' << r.den;
}

enum class ElementKind : std::uint8_t { FloatMicro, IntSymmetric };

/// Sign + exponent + mantissa layout of a low-bit element. FloatMicro codes
/// are all finite (no Inf/NaN); IntSymmetric is sign-magnitude with
/// mantissa_bits magnitude bits.
class ElementFormat {
 public:
  static constexpr int kMaxTotalBits = 8;

  /// Validating constructor; total_bits must equal 1 + exponent + mantissa.
  static ElementFormat make(ElementKind kind, int exponent_bits, int mantissa_bits, int total_bits) {
    if (total_bits != 1 + exponent_bits + mantissa_bits) {
      fail(ErrorCode::InvalidFormat, "sign(1) + exponent(" + std::to_string(exponent_bits) + ") + mantissa(" +
                                         std::to_string(mantissa_bits) + ") != total(" + std::to_string(total_bits) +
                                         ")");
    }
    if (total_bits < 2 || total_bits > kMaxTotalBits) {
      fail(ErrorCode::InvalidFormat, "total_bits must lie in [2, 8], got " + std::to_string(total_bits));
    }
    if (mantissa_bits < 0 || exponent_bits < 0) fail(ErrorCode::InvalidFormat, "negative field width");
    if (kind == ElementKind::FloatMicro && exponent_bits < 1) {
      fail(ErrorCode::InvalidFormat, "floating element formats need at least one exponent bit");
    }
    if (kind == ElementKind::IntSymmetric && exponent_bits != 0) {
      fail(ErrorCode::InvalidFormat, "integer element formats have no exponent bits");
    }
    return ElementFormat(kind, exponent_bits, mantissa_bits);
  }

  static ElementFormat float_micro(int exponent_bits, int mantissa_bits) {
    return make(ElementKind::FloatMicro, exponent_bits, mantissa_bits, 1 + exponent_bits + mantissa_bits);
  }
  static ElementFormat int_symmetric(int total_bits) {
    return make(ElementKind::IntSymmetric, 0, total_bits - 1, total_bits);
  }

  ElementKind kind() const noexcept { return kind_; }
  int sign_bits() const noexcept { return 1; }
  int exponent_bits() const noexcept { return exponent_bits_; }
  int mantissa_bits() const noexcept { return mantissa_bits_; }
  int total_bits() const noexcept { return 1 + exponent_bits_ + mantissa_bits_; }
  /// Exponent bias 2^(x-1) - 1; zero for integers.
  int bias() const noexcept { return exponent_bits_ == 0 ? 0 : (1 << (exponent_bits_ - 1)) - 1; }
  /// Number of distinct non-negative magnitudes, 2^(total_bits - 1).
  int magnitude_count() const noexcept { return 1 << (total_bits() - 1); }
  std::uint32_t code_count() const noexcept { return 1u << total_bits(); }

  /// Magnitude encoded by the low total_bits-1 bits of a code.
  double decode_magnitude(std::uint32_t magnitude_index) const {
    if (kind_ == ElementKind::IntSymmetric) return static_cast<double>(magnitude_index);
    const std::uint32_t mant_mask = (1u << mantissa_bits_) - 1u;
    const int exp_field = static_cast<int>(magnitude_index >> mantissa_bits_);
    const double mant = static_cast<double>(magnitude_index & mant_mask);
    const double frac = std::ldexp(mant, -mantissa_bits_);
    if (exp_field == 0) return std::ldexp(frac, 1 - bias());
    return std::ldexp(1.0 + frac, exp_field - bias());
  }

  /// Signed value of a full code; sign is the top bit, negative zero decodes to 0.
  double decode(std::uint32_t code) const {
    if (code >= code_count()) {
      fail(ErrorCode::MalformedCode, "code " + std::to_string(code) + " exceeds " + std::to_string(total_bits()) +
                                         "-bit range");
    }
    const std::uint32_t sign_bit = 1u << (total_bits() - 1);
    const double mag = decode_magnitude(code & (sign_bit - 1u));
    if (mag == 0.0) return 0.0;
    return (code & sign_bit) ? -mag : mag;
  }

  friend bool operator==(const ElementFormat&, const ElementFormat&) = default;

 private:
  ElementFormat(ElementKind kind, int e, int m) : kind_(kind), exponent_bits_(e), mantissa_bits_(m) {}

  ElementKind kind_;
  int exponent_bits_;
  int mantissa_bits_;
};

/// Exponent-only EkM0 scale. Stored code 0 is reserved for an all-zero block,
/// so the representable unbiased exponents are [1 - bias, 2^k - 1 - bias].
class ScaleFormat {
 public:
  static constexpr int kMinBits = 4;
  static constexpr int kMaxBits = 8;

  explicit ScaleFormat(int exponent_bits) : exponent_bits_(exponent_bits) {
    if (exponent_bits < kMinBits || exponent_bits > kMaxBits) {
      fail(ErrorCode::InvalidFormat, "scale exponent bits must lie in [4, 8], got " + std::to_string(exponent_bits));
    }
  }

  int exponent_bits() const noexcept { return exponent_bits_; }
  int bias() const noexcept { return (1 << (exponent_bits_ - 1)) - 1; }
  int min_exponent() const noexcept { return 1 - bias(); }
  int max_exponent() const noexcept { return (1 << exponent_bits_) - 1 - bias(); }
  std::uint32_t max_code() const noexcept { return (1u << exponent_bits_) - 1u; }

  std::uint32_t code_for(int exponent) const { return static_cast<std::uint32_t>(exponent + bias()); }
  int exponent_for(std::uint32_t code) const { return static_cast<int>(code) - bias(); }

  friend bool operator==(const ScaleFormat&, const ScaleFormat&) = default;

 private:
  int exponent_bits_;
};

struct SchemeDescriptor {
  ElementFormat element;
  std::uint32_t block_size;
  ScaleFormat scale;

  SchemeDescriptor(ElementFormat e, std::uint32_t block, ScaleFormat s) : element(e), block_size(block), scale(s) {
    if (block_size == 0) fail(ErrorCode::InvalidArgument, "block_size must be positive");
  }

  friend bool operator==(const SchemeDescriptor&, const SchemeDescriptor&) = default;
};

/// Average stored bits per value: element bits plus the block's scale bits
/// amortized over the block.
inline Rational effective_bits(const SchemeDescriptor& scheme) {
  return Rational(scheme.element.total_bits()) +
         Rational(scheme.scale.exponent_bits(), static_cast<std::int64_t>(scheme.block_size));
}

/// All non-negative representable magnitudes, ascending, starting at 0.
struct ValueGrid {
  std::vector<double> values;

  double max() const { return values.back(); }
  double largest_gap() const {
    double gap = 0.0;
    for (std::size_t i = 1; i < values.size(); ++i) gap = std::max(gap, values[i] - values[i - 1]);
    return gap;
  }
};

inline ValueGrid enumerate_grid(const ElementFormat& fmt) {
  ValueGrid grid;
  grid.values.reserve(static_cast<std::size_t>(fmt.magnitude_count()));
  for (int i = 0; i < fmt.magnitude_count(); ++i) grid.values.push_back(fmt.decode_magnitude(static_cast<std::uint32_t>(i)));
  return grid;
}

/// Exponent of the largest representable magnitude, floor(log2(max)).
inline int emax(const ElementFormat& fmt) {
  return std::ilogb(fmt.decode_magnitude(static_cast<std::uint32_t>(fmt.magnitude_count() - 1)));
}

// ---------------------------------------------------------------------------
// Registry

struct NamedElementFormat {
  std::string_view name;
  ElementFormat format;
};

/// Canonical element formats; position is the wire format code.
inline const std::vector<NamedElementFormat>& element_registry() {
  static const std::vector<NamedElementFormat> registry = {
      {"fp4_e2m1", ElementFormat::float_micro(2, 1)}, {"fp5_e2m2", ElementFormat::float_micro(2, 2)},
      {"fp5_e3m1", ElementFormat::float_micro(3, 1)}, {"fp5_e1m3", ElementFormat::float_micro(1, 3)},
      {"fp4_e1m2", ElementFormat::float_micro(1, 2)}, {"fp3_e1m1", ElementFormat::float_micro(1, 1)},
      {"fp2_e1m0", ElementFormat::float_micro(1, 0)}, {"int3", ElementFormat::int_symmetric(3)},
      {"int4", ElementFormat::int_symmetric(4)},      {"int5", ElementFormat::int_symmetric(5)},
  };
  return registry;
}

inline constexpr std::array<std::string_view, 5> kScaleNames = {"e4m0", "e5m0", "e6m0", "e7m0", "e8m0"};

inline std::string registry_listing() {
  std::string out = "element formats:";
  for (const auto& entry : element_registry()) out += " " + std::string(entry.name);
  out += "; scale formats:";
  for (auto name : kScaleNames) out += " " + std::string(name);
  return out;
}

inline ElementFormat element_format_by_name(std::string_view name) {
  for (const auto& entry : element_registry()) {
    if (entry.name == name) return entry.format;
  }
  fail(ErrorCode::UnknownScheme, "unknown element format '" + std::string(name) + "' (" + registry_listing() + ")");
}

inline std::optional<std::uint8_t> element_format_code(const ElementFormat& fmt) {
  const auto& reg = element_registry();
  for (std::size_t i = 0; i < reg.size(); ++i) {
    if (reg[i].format == fmt) return static_cast<std::uint8_t>(i);
  }
  return std::nullopt;
}

inline ElementFormat element_format_from_code(std::uint8_t code) {
  const auto& reg = element_registry();
  if (code >= reg.size()) fail(ErrorCode::MalformedHeader, "unknown element format code " + std::to_string(code));
  return reg[code].format;
}

inline std::string element_format_name(const ElementFormat& fmt) {
  if (auto code = element_format_code(fmt)) return std::string(element_registry()[*code].name);
  if (fmt.kind() == ElementKind::IntSymmetric) return "int" + std::to_string(fmt.total_bits());
  return "fp" + std::to_string(fmt.total_bits()) + "_e" + std::to_string(fmt.exponent_bits()) + "m" +
         std::to_string(fmt.mantissa_bits());
}

inline ScaleFormat scale_format_by_name(std::string_view name) {
  for (std::size_t i = 0; i < kScaleNames.size(); ++i) {
    if (kScaleNames[i] == name) return ScaleFormat(static_cast<int>(i) + ScaleFormat::kMinBits);
  }
  fail(ErrorCode::UnknownScheme, "unknown scale format '" + std::string(name) + "' (" + registry_listing() + ")");
}

inline std::uint8_t scale_format_code(const ScaleFormat& s) {
  return static_cast<std::uint8_t>(s.exponent_bits() - ScaleFormat::kMinBits);
}

inline ScaleFormat scale_format_from_code(std::uint8_t code) {
  if (code >= kScaleNames.size()) fail(ErrorCode::MalformedHeader, "unknown scale format code " + std::to_string(code));
  return ScaleFormat(code + ScaleFormat::kMinBits);
}

inline std::string scale_format_name(const ScaleFormat& s) {
  return "e" + std::to_string(s.exponent_bits()) + "m0";
}

/// "element:block:scale", e.g. "fp4_e2m1:32:e8m0".
inline std::string scheme_name(const SchemeDescriptor& s) {
  return element_format_name(s.element) + ":" + std::to_string(s.block_size) + ":" + scale_format_name(s.scale);
}

inline SchemeDescriptor parse_scheme(std::string_view text) {
  const auto first = text.find(':');
  const auto second = first == std::string_view::npos ? first : text.find(':', first + 1);
  if (first == std::string_view::npos || second == std::string_view::npos) {
    fail(ErrorCode::UnknownScheme,
         "scheme must be spelled element:block:scale, got '" + std::string(text) + "' (" + registry_listing() + ")");
  }
  const auto element = element_format_by_name(text.substr(0, first));
  const auto block_text = std::string(text.substr(first + 1, second - first - 1));
  const auto scale = scale_format_by_name(text.substr(second + 1));
  std::size_t consumed = 0;
  unsigned long block = 0;
  try {
    block = std::stoul(block_text, &consumed);
  } catch (const std::exception&) {
    consumed = 0;
  }
  if (consumed != block_text.size() || block == 0 || block > 0xFFFFFFFFul) {
    fail(ErrorCode::UnknownScheme, "invalid block size '" + block_text + "'");
  }
  return SchemeDescriptor(element, static_cast<std::uint32_t>(block), scale);
}

}  // namespace mxcomm
