// mxcomm: batch entry point over the codec, search, TP simulator and
// all-gather benchmark. Exit codes: 0 ok, 2 bad arguments, 3 runtime failure.

#include <cmath>
#include <cstdint>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"
#include "mxcomm/mxcomm.hpp"

namespace {

using namespace mxcomm;
using nlohmann::json;

enum class Format { Csv, Json };

struct Globals {
  std::uint64_t seed = 0;
  std::string out;
  Format format = Format::Csv;
};

constexpr int kExitValidation = 2;
constexpr int kExitRuntime = 3;

bool is_validation(ErrorCode c) {
  switch (c) {
    case ErrorCode::InvalidFormat:
    case ErrorCode::InvalidArgument:
    case ErrorCode::UnknownScheme:
    case ErrorCode::ShapeMismatch:
    case ErrorCode::MinimumDegreeTwo:
    case ErrorCode::EmptyGrid:
    case ErrorCode::CompressionFactorTooHigh:
      return true;
    default:
      return false;
  }
}

// JSON has no infinity; non-finite values are written as strings.
json number(double v) {
  if (std::isfinite(v)) return v;
  return csv::format(v);
}

// Report sink: the --out file if given, else stdout.
class Report {
 public:
  explicit Report(const std::string& path) {
    if (!path.empty()) {
      file_.open(path, std::ios::trunc);
      if (!file_) fail(ErrorCode::Io, "cannot create " + path);
    }
  }
  std::ostream& os() { return file_.is_open() ? static_cast<std::ostream&>(file_) : std::cout; }
  void finish() {
    os().flush();
    if (file_.is_open() && !file_) fail(ErrorCode::Io, "write error on report");
  }

 private:
  std::ofstream file_;
};

std::vector<SchemeDescriptor> parse_schemes(const std::vector<std::string>& names) {
  std::vector<SchemeDescriptor> out;
  for (const auto& n : names) out.push_back(parse_scheme(n));
  return out;
}

Shape parse_shape(const std::vector<std::uint64_t>& dims) {
  if (dims.empty()) fail(ErrorCode::InvalidArgument, "shape needs at least one dimension");
  return Shape(dims.begin(), dims.end());
}

json candidate_json(const CandidateResult& r) {
  return {{"scheme", scheme_name(r.scheme)},
          {"element", element_format_name(r.scheme.element)},
          {"block", r.scheme.block_size},
          {"scale", scale_format_name(r.scheme.scale)},
          {"effective_bits", r.effective_bits.to_double()},
          {"metric_pct", number(r.metric_increase_pct)}};
}

json bench_json(const BenchResult& r) {
  return {{"codec", r.codec},
          {"transport", r.transport},
          {"workers", r.workers},
          {"tensor_bytes", r.tensor_bytes},
          {"median_s", r.median_s},
          {"stddev_s", r.stddev_s},
          {"bytes_on_wire_per_worker", r.bytes_on_wire_per_worker},
          {"speedup", r.speedup},
          {"repetitions", r.repetitions},
          {"times_s", r.times_s}};
}

void write_bench_csv(std::ostream& os, const std::vector<BenchResult>& rows) {
  csv::write_row(os, {"codec", "transport", "workers", "tensor_bytes", "median_s", "stddev_s",
                      "bytes_on_wire_per_worker", "speedup", "repetitions"});
  for (const auto& r : rows) {
    csv::write_row(os, {r.codec, r.transport, std::to_string(r.workers), std::to_string(r.tensor_bytes),
                        csv::format(r.median_s), csv::format(r.stddev_s), std::to_string(r.bytes_on_wire_per_worker),
                        csv::format(r.speedup), std::to_string(r.repetitions)});
  }
}

// ---------------------------------------------------------------------------

struct CompressArgs {
  std::string in;
  std::string codec = "fp4_e2m1:32:e8m0";
};

void cmd_compress(const Globals& g, const CompressArgs& a) {
  if (g.out.empty()) fail(ErrorCode::InvalidArgument, "compress needs --out");
  const CodecSpec spec = parse_codec(a.codec);
  const Tensor t = read_rtns(a.in);
  std::vector<std::uint8_t> bytes;
  try {
    struct Encoder {
      const Tensor& t;
      std::vector<std::uint8_t> operator()(const Passthrough&) const {
        fail(ErrorCode::InvalidArgument, "compress needs a codec other than none");
      }
      std::vector<std::uint8_t> operator()(const SchemeDescriptor& s) const { return serialize(compress_tensor(t, s)); }
      std::vector<std::uint8_t> operator()(const ChannelIntCodec& c) const {
        return serialize(channelwise_int_compress(t, c.bits));
      }
      std::vector<std::uint8_t> operator()(const TopKCodec& k) const {
        return serialize(topk_compress(t, k.compression_factor));
      }
    };
    bytes = std::visit(Encoder{t}, spec);
  } catch (const Error& e) {
    rethrow_with_context(e, a.in);
  }
  write_file_bytes(g.out, bytes);
  std::cerr << a.in << ": " << 4 * t.size() << " -> " << bytes.size() << " bytes (" << codec_name(spec) << ")\n";
}

void cmd_decompress(const Globals& g, const std::string& in) {
  if (g.out.empty()) fail(ErrorCode::InvalidArgument, "decompress needs --out");
  const auto bytes = read_file_bytes(in);
  Tensor t;
  try {
    const std::uint8_t code = peek_format_code(bytes);
    if (code == kTopKFormatCode) {
      t = topk_decompress(deserialize_topk(bytes));
    } else if (code == kChannelIntFormatCode) {
      t = channelwise_int_decompress(deserialize_channel_int(bytes));
    } else {
      t = decompress_tensor(deserialize(bytes));
    }
  } catch (const Error& e) {
    rethrow_with_context(e, in);
  }
  write_rtns(g.out, t);
}

struct AnalyzeArgs {
  std::string in;
  std::vector<std::uint64_t> shape = {64, 4096};
  double outlier_fraction = 0.0;
  double outlier_scale = 100.0;
  std::vector<std::string> codecs;
};

void cmd_analyze(const Globals& g, const AnalyzeArgs& a) {
  const Tensor t = a.in.empty() ? gaussian_tensor(parse_shape(a.shape), g.seed, {a.outlier_fraction, a.outlier_scale})
                                : read_rtns(a.in);
  std::vector<CodecSpec> codecs;
  if (a.codecs.empty()) {
    codecs.push_back(Passthrough{});
    for (const auto& s : published_grid()) codecs.push_back(s);
  } else {
    for (const auto& c : a.codecs) codecs.push_back(parse_codec(c));
  }
  struct Row {
    std::string codec;
    double bits;
    std::uint64_t wire_bytes;
    ErrorStats stats;
  };
  std::vector<Row> rows;
  for (const auto& spec : codecs) {
    const Roundtrip rt = roundtrip(spec, t);
    const auto stats = compare(std::span<const float>(t.data), std::span<const float>(rt.decoded.data));
    const double bits = std::holds_alternative<SchemeDescriptor>(spec)
                            ? effective_bits(std::get<SchemeDescriptor>(spec)).to_double()
                            : 8.0 * static_cast<double>(rt.wire_bytes) / static_cast<double>(t.size());
    rows.push_back({codec_name(spec), bits, rt.wire_bytes, stats});
  }
  Report report(g.out);
  if (g.format == Format::Json) {
    json j = json::array();
    for (const auto& r : rows) {
      j.push_back({{"codec", r.codec},
                   {"effective_bits", r.bits},
                   {"wire_bytes", r.wire_bytes},
                   {"sqnr_db", number(r.stats.sqnr_db)},
                   {"max_abs_err", r.stats.max_abs_err},
                   {"rel_frob_err", r.stats.rel_frob_err},
                   {"mse", r.stats.mse}});
    }
    report.os() << j.dump(2) << '\n';
  } else {
    csv::write_row(report.os(), {"codec", "effective_bits", "wire_bytes", "sqnr_db", "max_abs_err", "rel_frob_err", "mse"});
    for (const auto& r : rows) {
      csv::write_row(report.os(), {r.codec, csv::format(r.bits), std::to_string(r.wire_bytes),
                                   csv::format(r.stats.sqnr_db), csv::format(r.stats.max_abs_err),
                                   csv::format(r.stats.rel_frob_err), csv::format(r.stats.mse)});
    }
  }
  report.finish();
}

struct SearchArgs {
  std::string metric_table;
  double threshold = 3.0;
  std::string evaluator = "tensor";
  std::vector<std::string> grid;
  std::vector<std::uint64_t> shape = {64, 4096};
  double outlier_fraction = 0.01;
  double outlier_scale = 100.0;
};

Evaluator builtin_evaluator(const Globals& g, const std::string& name, const std::vector<std::uint64_t>& shape,
                            OutlierSpec outliers) {
  if (name == "tensor") return tensor_noise_evaluator(gaussian_tensor(parse_shape(shape), g.seed, outliers));
  if (name == "tpsim") {
    TPConfig cfg;
    cfg.seed = g.seed;
    cfg.outliers = outliers;
    return tpsim_evaluator(cfg);
  }
  fail(ErrorCode::InvalidArgument, "unknown evaluator '" + name + "' (expected tensor or tpsim)");
}

void cmd_search(const Globals& g, const SearchArgs& a) {
  if (!(a.threshold > 0.0)) fail(ErrorCode::InvalidArgument, "threshold must be positive");
  SearchConfig cfg;
  cfg.threshold_pct = a.threshold;
  Evaluator eval;
  if (!a.metric_table.empty()) {
    const MetricTable table = load_metric_table(a.metric_table);
    cfg.grid = a.grid.empty() ? table.schemes() : parse_schemes(a.grid);
    eval = table.evaluator();
  } else {
    cfg.grid = a.grid.empty() ? published_grid() : parse_schemes(a.grid);
    eval = builtin_evaluator(g, a.evaluator, a.shape, {a.outlier_fraction, a.outlier_scale});
  }
  const auto results = run_grid(cfg, eval);
  const Selection sel = select_scheme(results, cfg.threshold_pct);
  const auto& c = sel.chosen;
  std::cout << element_format_name(c.scheme.element) << " block=" << c.scheme.block_size
            << " eff_bits=" << csv::format(c.effective_bits.to_double());
  if (sel.below_threshold_empty) std::cout << " (no candidate below threshold; lowest metric chosen)";
  std::cout << '\n';
  if (g.out.empty()) return;
  Report report(g.out);
  if (g.format == Format::Json) {
    json j = {{"threshold_pct", cfg.threshold_pct},
              {"selected", candidate_json(c)},
              {"below_threshold_empty", sel.below_threshold_empty},
              {"candidates", json::array()}};
    for (const auto& r : results) j["candidates"].push_back(candidate_json(r));
    report.os() << j.dump(2) << '\n';
  } else {
    write_candidates_csv(report.os(), results);
  }
  report.finish();
}

struct AblateArgs {
  std::string dimension = "scale_bits";
  std::string base = "fp4_e2m1:32:e5m0";
  std::string metric_table;
  std::string evaluator = "tensor";
  std::vector<int> degrees = {2, 4, 8, 16, 32};
  std::vector<std::uint64_t> shape = {64, 4096};
  double outlier_fraction = 0.01;
  double outlier_scale = 100.0;
};

void cmd_ablate(const Globals& g, const AblateArgs& a) {
  const AblationDimension dim = parse_ablation_dimension(a.dimension);
  const SchemeDescriptor base = parse_scheme(a.base);
  AblationTable table;
  if (dim == AblationDimension::Parallelism) {
    TPConfig cfg;
    cfg.seed = g.seed;
    cfg.outliers = {a.outlier_fraction, a.outlier_scale};
    table = ablate_parallelism(cfg, base, a.degrees);
  } else {
    const Evaluator eval = a.metric_table.empty()
                               ? builtin_evaluator(g, a.evaluator, a.shape, {a.outlier_fraction, a.outlier_scale})
                               : load_metric_table(a.metric_table).evaluator();
    table = ablate(dim, base, eval);
  }
  Report report(g.out);
  if (g.format == Format::Json) {
    json j = json::array();
    for (const auto& r : table.rows) {
      j.push_back({{"dimension", std::string(to_string(table.dimension))},
                   {"parameter", r.parameter},
                   {"scheme", scheme_name(r.scheme)},
                   {"effective_bits", r.effective_bits.to_double()},
                   {"metric_pct", number(r.metric_increase_pct)}});
    }
    report.os() << j.dump(2) << '\n';
  } else {
    write_ablation_csv(report.os(), table);
  }
  report.finish();
}

struct TpsimArgs {
  std::vector<int> degrees = {2, 4, 8, 16, 32};
  std::string codec = "fp4_e2m1:32:e8m0";
  std::size_t batch = 2;
  std::size_t tokens = 64;
  std::size_t d_in = 1024;
  std::size_t d_out = 1024;
  bool exact_local = false;
  double outlier_fraction = 0.01;
  double outlier_scale = 100.0;
  std::string input;
};

void cmd_tpsim(const Globals& g, const TpsimArgs& a) {
  TPConfig cfg;
  cfg.codec = parse_codec(a.codec);
  cfg.seed = g.seed;
  cfg.batch = a.batch;
  cfg.tokens = a.tokens;
  cfg.d_in = a.d_in;
  cfg.d_out = a.d_out;
  cfg.quantize_local = !a.exact_local;
  cfg.outliers = {a.outlier_fraction, a.outlier_scale};
  const auto reports = parallelism_sweep(cfg, a.degrees);
  Report report(g.out);
  if (g.format == Format::Json) {
    json j = json::array();
    for (const auto& r : reports) {
      j.push_back({{"degree", r.degree},
                   {"scheme", r.codec},
                   {"rel_frob_err", r.rel_frob_err},
                   {"max_abs_err", r.max_abs_err},
                   {"sqnr_db", number(r.sqnr_db)},
                   {"bytes_compressed", r.bytes_compressed},
                   {"bytes_uncompressed", r.bytes_uncompressed},
                   {"bound_violations", r.bound_violations}});
    }
    report.os() << j.dump(2) << '\n';
  } else {
    write_reduction_csv(report.os(), reports);
  }
  report.finish();
}

struct NetbenchArgs {
  int workers = 4;
  double mib = 16.0;
  double bandwidth = 1e9;
  double latency = 0.0;
  std::string scheme = "fp4_e2m1:32:e8m0";
  int repetitions = 5;
  std::string transport = "inproc";
  bool predict = false;
};

std::optional<SchemeDescriptor> optional_scheme(const std::string& name) {
  if (name == "none") return std::nullopt;
  return parse_scheme(name);
}

std::uint64_t elements_for_mib(double mib) {
  if (!(mib > 0.0)) fail(ErrorCode::InvalidArgument, "tensor size must be positive");
  const auto n = static_cast<std::uint64_t>(std::llround(mib * 1024.0 * 1024.0 / 2.0));
  if (n == 0) fail(ErrorCode::InvalidArgument, "tensor size rounds to zero values");
  return n;
}

void cmd_netbench(const Globals& g, const NetbenchArgs& a) {
  BenchConfig cfg;
  cfg.workers = a.workers;
  cfg.shape = {elements_for_mib(a.mib)};
  cfg.scheme = optional_scheme(a.scheme);
  cfg.link.bandwidth = a.bandwidth > 0.0 ? a.bandwidth : std::numeric_limits<double>::infinity();
  cfg.link.latency = a.latency;
  cfg.repetitions = a.repetitions;
  cfg.transport = parse_transport(a.transport);
  cfg.seed = g.seed;
  std::vector<BenchResult> rows;
  if (cfg.scheme) {
    const BenchComparison cmp = compare_allgather(cfg);
    rows = {cmp.uncompressed, cmp.compressed};
  } else {
    rows = {run_allgather_bench(cfg)};
  }
  std::optional<double> predicted;
  if (a.predict) {
    const std::uint64_t sizes[] = {cfg.shape[0]};
    LinkModel link = cfg.link;
    if (cfg.scheme) {
      const auto tp = calibrate_codec_throughput(cfg.scheme, sizes, 5, cfg.workers, g.seed);
      link.compress_values_per_s = tp.compress_values_per_s;
      link.decompress_values_per_s = tp.decompress_values_per_s;
    }
    predicted = predict_comm_time(2 * cfg.shape[0], cfg.scheme, cfg.workers, link);
  }
  Report report(g.out);
  if (g.format == Format::Json) {
    json j = {{"topology", "full-mesh all-gather (stand-in for the collective library's internal topology)"},
              {"results", json::array()},
              {"speedup", rows.back().speedup}};
    for (const auto& r : rows) j["results"].push_back(bench_json(r));
    if (predicted) j["predicted_s"] = *predicted;
    report.os() << j.dump(2) << '\n';
  } else {
    write_bench_csv(report.os(), rows);
    if (predicted) report.os() << "# predicted_s," << csv::format(*predicted) << '\n';
  }
  report.finish();
}

struct CalibrateArgs {
  std::string scheme = "fp4_e2m1:32:e8m0";
  std::vector<std::uint64_t> sizes = {1u << 16, 1u << 20, 1u << 22};
  int runs = 5;
  int concurrency = 1;
};

void cmd_calibrate(const Globals& g, const CalibrateArgs& a) {
  const auto tp = calibrate_codec_throughput(optional_scheme(a.scheme), a.sizes, a.runs, a.concurrency, g.seed);
  Report report(g.out);
  if (g.format == Format::Json) {
    json j = {{"codec", tp.codec},
              {"concurrency", tp.concurrency},
              {"compress_values_per_s", tp.compress_values_per_s},
              {"decompress_values_per_s", tp.decompress_values_per_s},
              {"samples", json::array()}};
    for (const auto& s : tp.samples) {
      j["samples"].push_back({{"values", s.values},
                              {"compress_values_per_s", s.compress_values_per_s},
                              {"decompress_values_per_s", s.decompress_values_per_s}});
    }
    report.os() << j.dump(2) << '\n';
  } else {
    csv::write_row(report.os(), {"codec", "concurrency", "values", "compress_values_per_s", "decompress_values_per_s"});
    for (const auto& s : tp.samples) {
      csv::write_row(report.os(), {tp.codec, std::to_string(tp.concurrency), std::to_string(s.values),
                                   csv::format(s.compress_values_per_s), csv::format(s.decompress_values_per_s)});
    }
  }
  report.finish();
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Microscaling compression for tensor-parallel communication"};
  app.require_subcommand(1);
  app.fallthrough();  // global options may follow the subcommand
  Globals g;
  app.add_option("--seed", g.seed, "RNG seed for synthetic data");
  app.add_option("--out", g.out, "Output path (reports default to stdout)");
  const std::map<std::string, Format> formats = {{"csv", Format::Csv}, {"json", Format::Json}};
  app.add_option("--format", g.format, "Report format")->transform(CLI::CheckedTransformer(formats, CLI::ignore_case));

  CompressArgs compress;
  auto* c = app.add_subcommand("compress", "Encode an RTNS tensor file");
  c->add_option("input", compress.in, "RTNS input")->required()->check(CLI::ExistingFile);
  c->add_option("--scheme", compress.codec, "element:block:scale, channel_int:<bits> or topk:<factor>");

  std::string decompress_in;
  auto* d = app.add_subcommand("decompress", "Decode a container back to an RTNS file");
  d->add_option("input", decompress_in, "Container input")->required()->check(CLI::ExistingFile);

  AnalyzeArgs analyze;
  auto* an = app.add_subcommand("analyze", "Per-codec SQNR, max error and effective bits");
  an->add_option("--in", analyze.in, "RTNS input (default: seeded Gaussian tensor)")->check(CLI::ExistingFile);
  an->add_option("--shape", analyze.shape, "Synthetic tensor shape")->delimiter(',');
  an->add_option("--outlier-fraction", analyze.outlier_fraction);
  an->add_option("--outlier-scale", analyze.outlier_scale);
  an->add_option("--schemes", analyze.codecs, "Codecs to compare (default: none plus the 9-scheme grid)")
      ->delimiter(',');

  SearchArgs search;
  auto* s = app.add_subcommand("search", "Grid search and threshold selection");
  s->add_option("--metric-table", search.metric_table, "CSV with dtype,block,metric_pct[,scale]")
      ->check(CLI::ExistingFile);
  s->add_option("--threshold", search.threshold, "Keep candidates strictly below this degradation (%)");
  s->add_option("--evaluator", search.evaluator, "Built-in metric when no table is given: tensor or tpsim");
  s->add_option("--grid", search.grid, "Candidate schemes (default: table rows or the 9-scheme grid)")->delimiter(',');
  s->add_option("--shape", search.shape, "Synthetic tensor shape")->delimiter(',');
  s->add_option("--outlier-fraction", search.outlier_fraction);
  s->add_option("--outlier-scale", search.outlier_scale);

  AblateArgs ablation;
  auto* ab = app.add_subcommand("ablate", "Vary one scheme parameter around a base scheme");
  ab->add_option("--dimension", ablation.dimension, "scale_bits, value_dtype, block_size or parallelism");
  ab->add_option("--base", ablation.base, "Base scheme");
  ab->add_option("--metric-table", ablation.metric_table)->check(CLI::ExistingFile);
  ab->add_option("--evaluator", ablation.evaluator, "tensor or tpsim");
  ab->add_option("--degrees", ablation.degrees)->delimiter(',');
  ab->add_option("--shape", ablation.shape)->delimiter(',');
  ab->add_option("--outlier-fraction", ablation.outlier_fraction);
  ab->add_option("--outlier-scale", ablation.outlier_scale);

  TpsimArgs tpsim;
  auto* tp = app.add_subcommand("tpsim", "Row-parallel linear layer with compressed reduction");
  tp->add_option("--degrees", tpsim.degrees)->delimiter(',');
  tp->add_option("--scheme", tpsim.codec, "Codec for the exchanged partial sums");
  tp->add_option("--batch", tpsim.batch);
  tp->add_option("--tokens", tpsim.tokens);
  tp->add_option("--d-in", tpsim.d_in);
  tp->add_option("--d-out", tpsim.d_out);
  tp->add_flag("--exact-local", tpsim.exact_local, "Add the worker's own partial unquantized");
  tp->add_option("--outlier-fraction", tpsim.outlier_fraction);
  tp->add_option("--outlier-scale", tpsim.outlier_scale);

  NetbenchArgs netbench;
  auto* nb = app.add_subcommand("netbench", "Throttled all-gather wall time with and without compression");
  nb->add_option("--workers", netbench.workers);
  nb->add_option("--mib", netbench.mib, "fp16 tensor size per worker");
  nb->add_option("--bandwidth", netbench.bandwidth, "Bytes/s per sender; 0 disables the throttle");
  nb->add_option("--latency", netbench.latency, "Seconds per message (model only)");
  nb->add_option("--scheme", netbench.scheme, "Scheme or none");
  nb->add_option("--repetitions", netbench.repetitions);
  nb->add_option("--transport", netbench.transport, "inproc or tcp");
  nb->add_flag("--predict", netbench.predict, "Calibrate codec throughput and add the model prediction");

  CalibrateArgs calibrate;
  auto* cal = app.add_subcommand("calibrate", "Codec throughput in values per second");
  cal->add_option("--scheme", calibrate.scheme, "Scheme or none");
  cal->add_option("--sizes", calibrate.sizes)->delimiter(',');
  cal->add_option("--runs", calibrate.runs);
  cal->add_option("--concurrency", calibrate.concurrency);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : kExitValidation;
  }

  try {
    if (*c) cmd_compress(g, compress);
    if (*d) cmd_decompress(g, decompress_in);
    if (*an) cmd_analyze(g, analyze);
    if (*s) cmd_search(g, search);
    if (*ab) cmd_ablate(g, ablation);
    if (*tp) cmd_tpsim(g, tpsim);
    if (*nb) cmd_netbench(g, netbench);
    if (*cal) cmd_calibrate(g, calibrate);
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << '\n';
    return is_validation(e.code()) ? kExitValidation : kExitRuntime;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitRuntime;
  }
  return 0;
}
