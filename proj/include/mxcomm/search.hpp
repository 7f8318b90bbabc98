#pragma once

// Compression-scheme grid search. Any scalar "percent degradation versus the
// uncompressed reference" can drive it: the built-in noise metric, or an
// externally measured table (e.g. perplexity increases) loaded from CSV.

#include <algorithm>
#include <cctype>
#include <cmath>
#include <functional>
#include <map>
#include <optional>
#include <ostream>
#include <span>
#include <string>
#include <tuple>
#include <vector>

#include "mxcomm/codec_spec.hpp"
#include "mxcomm/csv.hpp"
#include "mxcomm/error.hpp"
#include "mxcomm/formats.hpp"
#include "mxcomm/stats.hpp"
#include "mxcomm/tpsim.hpp"

namespace mxcomm {

struct CandidateResult {
  SchemeDescriptor scheme;
  Rational effective_bits;
  double metric_increase_pct = 0.0;  // may be negative
};

/// Metric for one candidate, in percent degradation.
using Evaluator = std::function<double(const SchemeDescriptor&)>;

struct SearchConfig {
  std::vector<SchemeDescriptor> grid;
  double threshold_pct = 3.0;
};

inline std::vector<SchemeDescriptor> make_grid(std::span<const ElementFormat> elements,
                                               std::span<const std::uint32_t> block_sizes,
                                               std::span<const ScaleFormat> scales) {
  std::vector<SchemeDescriptor> grid;
  for (const auto& e : elements) {
    for (auto b : block_sizes) {
      for (const auto& s : scales) grid.emplace_back(e, b, s);
    }
  }
  return grid;
}

/// The nine (value type, block size) combinations of the published sweep:
/// {fp3_e1m1, fp4_e2m1, fp5_e2m2} x {8, 16, 32}, E5M0 scales.
inline std::vector<SchemeDescriptor> published_grid() {
  const std::vector<ElementFormat> elements = {element_format_by_name("fp3_e1m1"),
                                               element_format_by_name("fp4_e2m1"),
                                               element_format_by_name("fp5_e2m2")};
  const std::vector<std::uint32_t> blocks = {8, 16, 32};
  const std::vector<ScaleFormat> scales = {ScaleFormat(5)};
  return make_grid(elements, blocks, scales);
}

namespace detail {

// Total order used for reporting and for order-independent selection.
inline auto candidate_key(const CandidateResult& r) {
  return std::make_tuple(r.effective_bits, r.metric_increase_pct, -static_cast<std::int64_t>(r.scheme.block_size),
                         scheme_name(r.scheme));
}

}  // namespace detail

/// Evaluates every candidate once; results sorted by (effective bits,
/// metric) ascending.
inline std::vector<CandidateResult> run_grid(const SearchConfig& cfg, const Evaluator& evaluate) {
  if (cfg.grid.empty()) fail(ErrorCode::EmptyGrid, "no candidates to evaluate");
  if (!(cfg.threshold_pct > 0.0)) fail(ErrorCode::InvalidArgument, "threshold must be positive");
  std::vector<CandidateResult> results;
  results.reserve(cfg.grid.size());
  for (const auto& scheme : cfg.grid) {
    double metric = 0.0;
    try {
      metric = evaluate(scheme);
    } catch (const std::exception& e) {
      fail(ErrorCode::EvaluatorFailure, scheme_name(scheme) + ": " + e.what());
    }
    if (std::isnan(metric)) fail(ErrorCode::EvaluatorFailure, scheme_name(scheme) + ": metric is NaN");
    results.push_back({scheme, effective_bits(scheme), metric});
  }
  std::sort(results.begin(), results.end(),
            [](const auto& a, const auto& b) { return detail::candidate_key(a) < detail::candidate_key(b); });
  return results;
}

struct Selection {
  CandidateResult chosen;
  // No candidate was strictly below the threshold; `chosen` is then the one
  // with the smallest metric.
  bool below_threshold_empty = false;
};

/// Keeps candidates with metric strictly below threshold_pct and returns the
/// one with the fewest effective bits (ties: lower metric, then larger block).
inline Selection select_scheme(std::span<const CandidateResult> results, double threshold_pct) {
  if (results.empty()) fail(ErrorCode::EmptyGrid, "no candidates to select from");
  const CandidateResult* best = nullptr;
  for (const auto& r : results) {
    if (!(r.metric_increase_pct < threshold_pct)) continue;
    if (!best || detail::candidate_key(r) < detail::candidate_key(*best)) best = &r;
  }
  if (best) return {*best, false};
  const auto fallback_key = [](const CandidateResult& r) {
    return std::make_tuple(r.metric_increase_pct, r.effective_bits, -static_cast<std::int64_t>(r.scheme.block_size),
                           scheme_name(r.scheme));
  };
  const auto it = std::min_element(results.begin(), results.end(),
                                   [&](const auto& a, const auto& b) { return fallback_key(a) < fallback_key(b); });
  return {*it, true};
}

// ---------------------------------------------------------------------------
// Evaluators

/// Noise-to-signal power of a tensor roundtrip, in percent:
/// 100 * ||x - x_hat||^2 / ||x||^2 = 100 * 10^(-SQNR/10).
inline double noise_pct(const ErrorStats& s) { return 100.0 * s.rel_frob_err * s.rel_frob_err; }

inline Evaluator tensor_noise_evaluator(Tensor tensor) {
  return [t = std::move(tensor)](const SchemeDescriptor& scheme) {
    const Tensor decoded = decompress_tensor(compress_tensor(t, scheme));
    return noise_pct(compare(std::span<const float>(t.data), std::span<const float>(decoded.data)));
  };
}

/// Runs the TP reduction simulator with the candidate scheme.
inline Evaluator tpsim_evaluator(TPConfig base) {
  return [cfg = std::move(base)](const SchemeDescriptor& scheme) mutable {
    TPConfig run = cfg;
    run.codec = scheme;
    const ReductionReport r = simulate_reduction(run);
    return 100.0 * r.rel_frob_err * r.rel_frob_err;
  };
}

/// Externally measured degradations keyed by scheme.
class MetricTable {
 public:
  void add(const SchemeDescriptor& scheme, double metric_pct) { rows_[scheme_name(scheme)] = metric_pct; }

  std::optional<double> find(const SchemeDescriptor& scheme) const {
    const auto it = rows_.find(scheme_name(scheme));
    if (it == rows_.end()) return std::nullopt;
    return it->second;
  }

  std::vector<SchemeDescriptor> schemes() const {
    std::vector<SchemeDescriptor> out;
    for (const auto& [name, _] : rows_) out.push_back(parse_scheme(name));
    return out;
  }

  std::size_t size() const { return rows_.size(); }

  Evaluator evaluator() const {
    return [table = *this](const SchemeDescriptor& scheme) {
      if (auto v = table.find(scheme)) return *v;
      fail(ErrorCode::EvaluatorFailure, "metric table has no row for " + scheme_name(scheme));
    };
  }

 private:
  std::map<std::string, double> rows_;
};

/// Value-type labels used by published tables map to their sub-variants:
/// FP3 -> E1M1, FP4 -> E2M1, FP5 -> E2M2. Registry names pass through.
inline ElementFormat element_from_table_label(std::string label) {
  std::transform(label.begin(), label.end(), label.begin(), [](unsigned char c) { return std::tolower(c); });
  if (label == "fp3") return element_format_by_name("fp3_e1m1");
  if (label == "fp4") return element_format_by_name("fp4_e2m1");
  if (label == "fp5") return element_format_by_name("fp5_e2m2");
  return element_format_by_name(label);
}

/// Columns dtype, block, metric_pct and optionally scale (default e5m0).
inline MetricTable metric_table_from_csv(const csv::Table& t) {
  const int dtype = t.column("dtype");
  const int block = t.column("block");
  const int metric = t.column("metric_pct");
  const int scale = t.column("scale");
  if (dtype < 0 || block < 0 || metric < 0) {
    fail(ErrorCode::InvalidArgument, "metric table needs columns dtype, block, metric_pct");
  }
  MetricTable table;
  for (const auto& row : t.rows) {
    const double b = csv::parse_double(row[block]);
    if (b < 1 || b != std::floor(b)) fail(ErrorCode::InvalidArgument, "bad block size '" + row[block] + "'");
    const ScaleFormat s = scale >= 0 ? scale_format_by_name(row[scale]) : ScaleFormat(5);
    table.add(SchemeDescriptor(element_from_table_label(row[dtype]), static_cast<std::uint32_t>(b), s),
              csv::parse_double(row[metric]));
  }
  return table;
}

inline MetricTable load_metric_table(const std::string& path) {
  try {
    return metric_table_from_csv(csv::read_file(path));
  } catch (const Error& e) {
    rethrow_with_context(e, path);
  }
}

inline void write_candidates_csv(std::ostream& os, std::span<const CandidateResult> results) {
  csv::write_row(os, {"scheme", "dtype", "block", "scale", "effective_bits", "metric_pct"});
  for (const auto& r : results) {
    csv::write_row(os, {scheme_name(r.scheme), element_format_name(r.scheme.element), std::to_string(r.scheme.block_size),
                        scale_format_name(r.scheme.scale), csv::format(r.effective_bits.to_double()),
                        csv::format(r.metric_increase_pct)});
  }
}

// ---------------------------------------------------------------------------
// One-dimensional ablation

enum class AblationDimension { ScaleBits, ValueDtype, BlockSize, Parallelism };

inline AblationDimension parse_ablation_dimension(std::string_view text) {
  if (text == "scale_bits") return AblationDimension::ScaleBits;
  if (text == "value_dtype") return AblationDimension::ValueDtype;
  if (text == "block_size") return AblationDimension::BlockSize;
  if (text == "parallelism") return AblationDimension::Parallelism;
  fail(ErrorCode::InvalidArgument, "unknown ablation dimension '" + std::string(text) +
                                       "' (scale_bits, value_dtype, block_size, parallelism)");
}

inline std::string_view to_string(AblationDimension d) {
  switch (d) {
    case AblationDimension::ScaleBits: return "scale_bits";
    case AblationDimension::ValueDtype: return "value_dtype";
    case AblationDimension::BlockSize: return "block_size";
    case AblationDimension::Parallelism: return "parallelism";
  }
  return "unknown";
}

struct AblationRow {
  std::string parameter;
  SchemeDescriptor scheme;
  Rational effective_bits;
  double metric_increase_pct = 0.0;
};

struct AblationTable {
  AblationDimension dimension;
  std::vector<AblationRow> rows;
};

/// The nine value types of the published value-type ablation.
inline std::vector<ElementFormat> ablation_value_types() {
  std::vector<ElementFormat> out;
  for (auto name : {"fp3_e1m1", "fp4_e1m2", "fp4_e2m1", "fp5_e1m3", "fp5_e2m2", "fp5_e3m1", "int3", "int4", "int5"}) {
    out.push_back(element_format_by_name(name));
  }
  return out;
}

struct AblationValues {
  std::vector<int> scale_bits = {4, 5, 6, 7, 8};
  std::vector<ElementFormat> value_types = ablation_value_types();
  std::vector<std::uint32_t> block_sizes = {8, 16, 32};
  std::vector<int> degrees = {2, 4, 8, 16, 32};
};

inline std::string ablation_label(AblationDimension dim, const SchemeDescriptor& s) {
  switch (dim) {
    case AblationDimension::ScaleBits: return std::to_string(s.scale.exponent_bits());
    case AblationDimension::ValueDtype: return element_format_name(s.element);
    case AblationDimension::BlockSize: return std::to_string(s.block_size);
    case AblationDimension::Parallelism: break;
  }
  return {};
}

/// Varies exactly one of scale bits, value type or block size around `base`.
inline AblationTable ablate(AblationDimension dim, const SchemeDescriptor& base, const Evaluator& evaluate,
                            const AblationValues& values = {}) {
  if (dim == AblationDimension::Parallelism) {
    fail(ErrorCode::InvalidArgument, "the parallelism ablation runs the TP simulator; use ablate_parallelism");
  }
  std::vector<SchemeDescriptor> grid;
  switch (dim) {
    case AblationDimension::ScaleBits:
      for (int k : values.scale_bits) grid.emplace_back(base.element, base.block_size, ScaleFormat(k));
      break;
    case AblationDimension::ValueDtype:
      for (const auto& e : values.value_types) grid.emplace_back(e, base.block_size, base.scale);
      break;
    case AblationDimension::BlockSize:
      for (auto b : values.block_sizes) grid.emplace_back(base.element, b, base.scale);
      break;
    case AblationDimension::Parallelism: break;
  }
  if (grid.empty()) fail(ErrorCode::EmptyGrid, "no ablation values");
  AblationTable table{dim, {}};
  for (const auto& scheme : grid) {
    double metric = 0.0;
    try {
      metric = evaluate(scheme);
    } catch (const std::exception& e) {
      fail(ErrorCode::EvaluatorFailure, scheme_name(scheme) + ": " + e.what());
    }
    table.rows.push_back({ablation_label(dim, scheme), scheme, effective_bits(scheme), metric});
  }
  return table;
}

/// Parallelism rows come from the TP simulator sweep at a fixed scheme.
inline AblationTable ablate_parallelism(const TPConfig& base, const SchemeDescriptor& scheme,
                                        std::span<const int> degrees) {
  TPConfig cfg = base;
  cfg.codec = scheme;
  AblationTable table{AblationDimension::Parallelism, {}};
  for (const auto& r : parallelism_sweep(cfg, degrees)) {
    table.rows.push_back({std::to_string(r.degree), scheme, effective_bits(scheme), 100.0 * r.rel_frob_err * r.rel_frob_err});
  }
  return table;
}

inline void write_ablation_csv(std::ostream& os, const AblationTable& table) {
  csv::write_row(os, {"dimension", "parameter", "scheme", "effective_bits", "metric_pct"});
  for (const auto& r : table.rows) {
    csv::write_row(os, {std::string(to_string(table.dimension)), r.parameter, scheme_name(r.scheme),
                        csv::format(r.effective_bits.to_double()), csv::format(r.metric_increase_pct)});
  }
}

}  // namespace mxcomm
