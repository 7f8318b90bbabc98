#pragma once

// Brute-force reference implementations. Everything here is computed in
// double by exhaustive search over the value grid, independent of the
// library's closed-form and SIMD paths.

#include <cmath>
#include <cstdint>
#include <limits>
#include <span>
#include <vector>

#include "mxcomm/formats.hpp"

namespace oracle {

// Non-negative magnitudes in code order, from the ExMy definition.
inline std::vector<double> magnitudes(const mxcomm::ElementFormat& f) {
  std::vector<double> out;
  if (f.kind() == mxcomm::ElementKind::IntSymmetric) {
    for (int i = 0; i < (1 << (f.total_bits() - 1)); ++i) out.push_back(i);
    return out;
  }
  const int E = f.exponent_bits(), M = f.mantissa_bits();
  const int bias = (1 << (E - 1)) - 1;
  for (int e = 0; e < (1 << E); ++e) {
    for (int m = 0; m < (1 << M); ++m) {
      const double frac = m / std::pow(2.0, M);
      out.push_back(e == 0 ? frac * std::pow(2.0, 1 - bias) : (1.0 + frac) * std::pow(2.0, e - bias));
    }
  }
  return out;
}

inline double largest_gap(const std::vector<double>& g) {
  double gap = 0;
  for (std::size_t i = 1; i < g.size(); ++i) gap = std::max(gap, g[i] - g[i - 1]);
  return gap;
}

struct Block {
  std::uint32_t scale_code = 0;
  int exponent = 0;
  bool clamped_high = false;
  double max_abs = 0.0;
  std::vector<std::uint8_t> codes;
  std::vector<double> decoded;
};

// Smallest exponent e whose scaled block maximum stays within half a gap of
// the top of the grid, clamped to the scale range.
inline int shared_exponent(double max_abs, const std::vector<double>& g, const mxcomm::ScaleFormat& s, bool* high) {
  const double limit = g.back() + largest_gap(g) / 2.0;
  int e = static_cast<int>(std::floor(std::log2(max_abs))) - 64;
  while (max_abs / std::pow(2.0, e) > limit) ++e;
  const int bias = (1 << (s.exponent_bits() - 1)) - 1;
  const int lo = 1 - bias, hi = (1 << s.exponent_bits()) - 1 - bias;
  if (high) *high = e > hi;
  return std::min(std::max(e, lo), hi);
}

// Nearest grid index to `scaled` by linear scan; ties go to the even index.
inline std::uint32_t nearest(double scaled, const std::vector<double>& g) {
  // Far past the top every distance rounds alike; saturation is unambiguous.
  if (scaled >= g.back()) return static_cast<std::uint32_t>(g.size() - 1);
  std::uint32_t best = 0;
  double best_d = std::numeric_limits<double>::infinity();
  for (std::uint32_t i = 0; i < g.size(); ++i) {
    const double d = std::fabs(g[i] - scaled);
    if (d < best_d || (d == best_d && i % 2 == 0)) {
      best = i;
      best_d = d;
    }
  }
  return best;
}

template <typename T>
Block encode(std::span<const T> values, const mxcomm::SchemeDescriptor& scheme) {
  const auto g = magnitudes(scheme.element);
  Block b;
  b.codes.assign(values.size(), 0);
  b.decoded.assign(values.size(), 0.0);
  double max_abs = 0;
  for (T v : values) max_abs = std::max(max_abs, std::fabs(static_cast<double>(v)));
  b.max_abs = max_abs;
  if (max_abs == 0) return b;
  const int e = shared_exponent(max_abs, g, scheme.scale, &b.clamped_high);
  b.exponent = e;
  const std::uint32_t sign = 1u << (scheme.element.total_bits() - 1);
  bool any = false;
  for (std::size_t i = 0; i < values.size(); ++i) {
    const double v = static_cast<double>(values[i]);
    const std::uint32_t idx = nearest(std::fabs(v) / std::pow(2.0, e), g);
    b.codes[i] = static_cast<std::uint8_t>(idx | (v < 0 && idx != 0 ? sign : 0u));
    b.decoded[i] = (v < 0 ? -1.0 : 1.0) * g[idx] * std::pow(2.0, e);
    if (idx != 0) any = true;
  }
  if (!any) {
    b.decoded.assign(values.size(), 0.0);
    return b;
  }
  b.scale_code = static_cast<std::uint32_t>(e + (1 << (scheme.scale.exponent_bits() - 1)) - 1);
  return b;
}

// Per-block bound: half the widest gap at the block's scale. A block whose
// values all round to zero still carries its scale's bound.
inline double bound(const Block& b, const mxcomm::SchemeDescriptor& scheme) {
  if (b.max_abs == 0.0) return 0.0;
  return largest_gap(magnitudes(scheme.element)) / 2.0 * std::pow(2.0, b.exponent);
}

}  // namespace oracle
