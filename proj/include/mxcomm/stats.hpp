#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <random>
#include <span>

#include "mxcomm/error.hpp"
#include "mxcomm/tensor.hpp"

namespace mxcomm {

struct ErrorStats {
  double max_abs_err = 0.0;
  double rel_frob_err = 0.0;
  double sqnr_db = std::numeric_limits<double>::infinity();
  double mse = 0.0;
};

/// 10 log10(signal power / noise power); +inf for a noiseless result.
inline double sqnr_db(double signal_power, double noise_power) {
  if (noise_power == 0.0) return std::numeric_limits<double>::infinity();
  return 10.0 * std::log10(signal_power / noise_power);
}

template <typename A, typename B>
ErrorStats compare(std::span<const A> reference, std::span<const B> approx) {
  if (reference.size() != approx.size()) fail(ErrorCode::ShapeMismatch, "compared spans differ in length");
  double signal = 0.0;
  double noise = 0.0;
  ErrorStats s;
  for (std::size_t i = 0; i < reference.size(); ++i) {
    const double r = static_cast<double>(reference[i]);
    const double d = static_cast<double>(approx[i]) - r;
    signal += r * r;
    noise += d * d;
    s.max_abs_err = std::max(s.max_abs_err, std::fabs(d));
  }
  s.mse = reference.empty() ? 0.0 : noise / static_cast<double>(reference.size());
  s.rel_frob_err = signal == 0.0 ? (noise == 0.0 ? 0.0 : std::numeric_limits<double>::infinity())
                                 : std::sqrt(noise / signal);
  s.sqnr_db = sqnr_db(signal, noise);
  return s;
}

/// Rare large-magnitude entries injected into otherwise Gaussian data.
struct OutlierSpec {
  double fraction = 0.01;
  double scale = 100.0;
};

/// N(0, sigma^2) entries; each entry independently becomes an outlier
/// (multiplied by outliers.scale) with probability outliers.fraction.
inline Tensor gaussian_tensor(Shape shape, std::uint64_t seed, OutlierSpec outliers = {}, double sigma = 1.0) {
  Tensor t(std::move(shape));
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal(0.0, sigma);
  std::bernoulli_distribution is_outlier(outliers.fraction);
  for (auto& v : t.data) {
    double x = normal(rng);
    if (outliers.fraction > 0.0 && is_outlier(rng)) x *= outliers.scale;
    v = static_cast<float>(x);
  }
  return t;
}

}  // namespace mxcomm
