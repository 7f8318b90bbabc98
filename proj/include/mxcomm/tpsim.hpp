#pragma once

// Row-wise tensor-parallel linear layer with a compressed all-gather: each of
// N workers computes a partial product X_i W_i, encodes it, every worker
// decodes all N partials and sums them. The report measures the error of
// that sum against the exact sum of the uncompressed partials.

#include <cmath>
#include <cstdint>
#include <limits>
#include <ostream>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "mxcomm/codec_spec.hpp"
#include "mxcomm/csv.hpp"
#include "mxcomm/error.hpp"
#include "mxcomm/stats.hpp"
#include "mxcomm/tensor.hpp"

namespace mxcomm {

/// Row-major float32 matrix.
struct Matrix {
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::vector<float> data;

  Matrix() = default;
  Matrix(std::size_t r, std::size_t c) : rows(r), cols(c), data(r * c, 0.0f) {}

  float& operator()(std::size_t r, std::size_t c) { return data[r * cols + c]; }
  float operator()(std::size_t r, std::size_t c) const { return data[r * cols + c]; }

  friend bool operator==(const Matrix&, const Matrix&) = default;
};

/// out = a * b, accumulated in float32 in a fixed (i, k, j) order.
inline Matrix matmul(const Matrix& a, const Matrix& b) {
  if (a.cols != b.rows) fail(ErrorCode::ShapeMismatch, "inner dimensions differ");
  Matrix out(a.rows, b.cols);
  for (std::size_t i = 0; i < a.rows; ++i) {
    float* row = &out.data[i * out.cols];
    for (std::size_t k = 0; k < a.cols; ++k) {
      const float x = a(i, k);
      const float* w = &b.data[k * b.cols];
      for (std::size_t j = 0; j < b.cols; ++j) row[j] += x * w[j];
    }
  }
  return out;
}

struct ShardedWeight {
  std::vector<Matrix> shards;
  std::size_t padding = 0;  // zero rows appended so that N divides d_in
};

/// Splits `weight` (d_in x d_out) into N row blocks; shard i holds rows
/// [i*d_in/N, (i+1)*d_in/N) of the zero-padded weight.
inline ShardedWeight shard_rowwise(const Matrix& weight, int n) {
  if (n < 1) fail(ErrorCode::ShapeMismatch, "shard count must be positive");
  if (weight.rows == 0) fail(ErrorCode::ShapeMismatch, "cannot shard a weight with no rows");
  const auto parts = static_cast<std::size_t>(n);
  ShardedWeight out;
  out.padding = (parts - weight.rows % parts) % parts;
  const std::size_t rows_per = (weight.rows + out.padding) / parts;
  for (std::size_t i = 0; i < parts; ++i) {
    Matrix shard(rows_per, weight.cols);
    for (std::size_t r = 0; r < rows_per; ++r) {
      const std::size_t src = i * rows_per + r;
      if (src >= weight.rows) break;
      std::copy_n(&weight.data[src * weight.cols], weight.cols, &shard.data[r * weight.cols]);
    }
    out.shards.push_back(std::move(shard));
  }
  return out;
}

/// Columns [begin, begin + count) of `x`, zero-filled past its last column.
inline Matrix column_slice(const Matrix& x, std::size_t begin, std::size_t count) {
  Matrix out(x.rows, count);
  for (std::size_t r = 0; r < x.rows; ++r) {
    for (std::size_t c = 0; c < count && begin + c < x.cols; ++c) out(r, c) = x(r, begin + c);
  }
  return out;
}

struct TPConfig {
  int degree = 2;
  CodecSpec codec = Passthrough{};
  std::uint64_t seed = 0;
  std::size_t batch = 2;
  std::size_t tokens = 64;
  std::size_t d_in = 1024;
  std::size_t d_out = 1024;
  // When false, each worker adds its own partial exactly and only decodes
  // the N-1 remote ones.
  bool quantize_local = true;
  OutlierSpec outliers{};
};

struct ReductionReport {
  int degree = 0;
  std::string codec;
  double rel_frob_err = 0.0;
  double max_abs_err = 0.0;
  double sqnr_db = std::numeric_limits<double>::infinity();
  std::uint64_t bytes_compressed = 0;    // sent per worker
  std::uint64_t bytes_uncompressed = 0;  // sent per worker at 16 bits per value
  std::size_t padding = 0;
  // Elements where |sum error| > sum |per-partial error| or
  // sum |per-partial error| > sum of per-partial codec bounds.
  std::uint64_t bound_violations = 0;

  friend bool operator==(const ReductionReport&, const ReductionReport&) = default;
};

namespace detail {

inline Matrix random_matrix(std::size_t rows, std::size_t cols, std::mt19937_64& rng, double sigma,
                            const OutlierSpec& outliers) {
  Matrix m(rows, cols);
  std::normal_distribution<double> normal(0.0, sigma);
  std::bernoulli_distribution is_outlier(outliers.fraction);
  for (auto& v : m.data) {
    double x = normal(rng);
    if (outliers.fraction > 0.0 && is_outlier(rng)) x *= outliers.scale;
    v = static_cast<float>(x);
  }
  return m;
}

}  // namespace detail

inline ReductionReport simulate_reduction(const TPConfig& cfg) {
  if (cfg.degree < 2) fail(ErrorCode::MinimumDegreeTwo, "degree " + std::to_string(cfg.degree));
  if (cfg.batch * cfg.tokens == 0 || cfg.d_in == 0 || cfg.d_out == 0) {
    fail(ErrorCode::ShapeMismatch, "empty layer dimensions");
  }
  const auto n = static_cast<std::size_t>(cfg.degree);
  const std::size_t rows = cfg.batch * cfg.tokens;

  // X and W depend only on the seed, so a sweep over degrees shares them.
  std::mt19937_64 rng(cfg.seed);
  const Matrix x = detail::random_matrix(rows, cfg.d_in, rng, 1.0, cfg.outliers);
  const Matrix w = detail::random_matrix(cfg.d_in, cfg.d_out, rng, 1.0 / std::sqrt(static_cast<double>(cfg.d_in)),
                                         OutlierSpec{0.0, 1.0});
  const ShardedWeight sharded = shard_rowwise(w, cfg.degree);
  const std::size_t shard_rows = sharded.shards.front().rows;

  const std::size_t count = rows * cfg.d_out;
  const Shape partial_shape = {cfg.batch, cfg.tokens, cfg.d_out};
  std::vector<double> reference(count, 0.0);
  std::vector<double> err_sum(count, 0.0);
  std::vector<double> abs_err_sum(count, 0.0);
  std::vector<double> bound_sum(count, 0.0);
  std::vector<std::vector<double>> partial_err;  // kept only when local partials stay exact
  std::vector<std::vector<double>> partial_bound;
  std::uint64_t wire_bytes = 0;

  for (std::size_t i = 0; i < n; ++i) {
    const Matrix partial = matmul(column_slice(x, i * shard_rows, shard_rows), sharded.shards[i]);
    Tensor y(partial_shape, partial.data);
    Roundtrip rt;
    try {
      rt = roundtrip(cfg.codec, y);
    } catch (const Error& e) {
      rethrow_with_context(e, "worker " + std::to_string(i));
    }
    if (i == 0) wire_bytes = rt.wire_bytes;
    std::vector<double> d(count);
    for (std::size_t e = 0; e < count; ++e) {
      const double v = static_cast<double>(y.data[e]);
      d[e] = static_cast<double>(rt.decoded.data[e]) - v;
      reference[e] += v;
      err_sum[e] += d[e];
      abs_err_sum[e] += std::fabs(d[e]);
      bound_sum[e] += rt.bounds[e];
    }
    if (!cfg.quantize_local) {
      partial_err.push_back(std::move(d));
      partial_bound.push_back(std::move(rt.bounds));
    }
  }

  ReductionReport report;
  report.degree = cfg.degree;
  report.codec = codec_name(cfg.codec);
  report.padding = sharded.padding;
  report.bytes_compressed = (n - 1) * wire_bytes;
  report.bytes_uncompressed = (n - 1) * static_cast<std::uint64_t>(count) * 2;

  const auto check = [&](std::span<const double> err, std::span<const double> abs_err, std::span<const double> bound) {
    double signal = 0.0;
    double noise = 0.0;
    for (std::size_t e = 0; e < count; ++e) {
      signal += reference[e] * reference[e];
      noise += err[e] * err[e];
      report.max_abs_err = std::max(report.max_abs_err, std::fabs(err[e]));
      if (std::fabs(err[e]) > abs_err[e] || abs_err[e] > bound[e]) ++report.bound_violations;
    }
    const double rel = signal == 0.0 ? 0.0 : std::sqrt(noise / signal);
    report.rel_frob_err = std::max(report.rel_frob_err, rel);
    report.sqnr_db = std::min(report.sqnr_db, mxcomm::sqnr_db(signal, noise));
  };

  if (cfg.quantize_local) {
    check(err_sum, abs_err_sum, bound_sum);
  } else {
    // Worker w's sum differs from the symmetric one by its own exact partial.
    std::vector<double> err(count), abs_err(count), bound(count);
    for (std::size_t wkr = 0; wkr < n; ++wkr) {
      for (std::size_t e = 0; e < count; ++e) {
        double s = 0.0, a = 0.0, b = 0.0;
        for (std::size_t i = 0; i < n; ++i) {
          if (i == wkr) continue;
          s += partial_err[i][e];
          a += std::fabs(partial_err[i][e]);
          b += partial_bound[i][e];
        }
        err[e] = s;
        abs_err[e] = a;
        bound[e] = b;
      }
      check(err, abs_err, bound);
    }
  }
  return report;
}

inline std::vector<ReductionReport> parallelism_sweep(const TPConfig& base, std::span<const int> degrees) {
  if (degrees.empty()) fail(ErrorCode::InvalidArgument, "no degrees given");
  for (int d : degrees) {
    if (d < 2) fail(ErrorCode::MinimumDegreeTwo, "degree " + std::to_string(d));
  }
  std::vector<ReductionReport> out;
  for (int d : degrees) {
    TPConfig cfg = base;
    cfg.degree = d;
    out.push_back(simulate_reduction(cfg));
  }
  return out;
}

inline void write_reduction_csv(std::ostream& os, std::span<const ReductionReport> reports) {
  csv::write_row(os, {"degree", "scheme", "rel_frob_err", "max_abs_err", "sqnr_db", "bytes_compressed",
                      "bytes_uncompressed"});
  for (const auto& r : reports) {
    csv::write_row(os, {std::to_string(r.degree), r.codec, csv::format(r.rel_frob_err), csv::format(r.max_abs_err),
                        csv::format(r.sqnr_db), std::to_string(r.bytes_compressed),
                        std::to_string(r.bytes_uncompressed)});
  }
}

}  // namespace mxcomm
