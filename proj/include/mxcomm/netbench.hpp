#pragma once

// All-gather benchmark: N workers each encode a tensor, exchange it with
// every peer over a throttled transport, decode all N payloads and sum them
// in rank order. Also an analytic model of the same exchange.

#include <algorithm>
#include <atomic>
#include <bit>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <exception>
#include <latch>
#include <limits>
#include <memory>
#include <mutex>
#include <optional>
#include <span>
#include <string>
#include <thread>
#include <vector>

#include "mxcomm/codec.hpp"
#include "mxcomm/error.hpp"
#include "mxcomm/formats.hpp"
#include "mxcomm/half.hpp"
#include "mxcomm/stats.hpp"
#include "mxcomm/tensor.hpp"
#include "mxcomm/transport.hpp"
#include "mxcomm/wire.hpp"

namespace mxcomm {

static_assert(std::endian::native == std::endian::little, "raw fp16 payloads assume a little-endian host");

struct LinkModel {
  double bandwidth = 1e9;  // bytes/s per sender; infinity: unthrottled
  double latency = 0.0;    // seconds per message
  double compress_values_per_s = std::numeric_limits<double>::infinity();
  double decompress_values_per_s = std::numeric_limits<double>::infinity();
};

inline void validate(const LinkModel& link) {
  if (!(link.bandwidth > 0.0) || !(link.latency >= 0.0) || !(link.compress_values_per_s > 0.0) ||
      !(link.decompress_values_per_s > 0.0)) {
    fail(ErrorCode::InvalidArgument, "link bandwidth and codec throughputs must be positive, latency non-negative");
  }
}

/// Wire bytes one worker sends to one peer: raw fp16, or the serialized
/// container for a scheme.
inline std::uint64_t payload_bytes(const Shape& shape, const std::optional<SchemeDescriptor>& scheme) {
  return scheme ? serialized_size(shape, *scheme) : 2 * element_count(shape);
}

/// Seconds for one all-gather of a tensor_bytes fp16 tensor among n workers.
inline double predict_comm_time(std::uint64_t tensor_bytes, const std::optional<SchemeDescriptor>& scheme, int n,
                                const LinkModel& link) {
  if (n < 2) fail(ErrorCode::MinimumDegreeTwo, "all-gather needs at least 2 workers, got " + std::to_string(n));
  validate(link);
  const double peers = n - 1;
  const std::uint64_t elements = tensor_bytes / 2;
  const double wire = static_cast<double>(payload_bytes(Shape{elements}, scheme));
  double t = link.latency * peers + peers * wire / link.bandwidth;
  if (scheme) {
    const auto v = static_cast<double>(elements);
    t += v / link.compress_values_per_s + peers * v / link.decompress_values_per_s;
  }
  return t;
}

struct BenchConfig {
  int workers = 4;
  Shape shape{std::uint64_t{8} << 20};  // 16 MiB at 16 bits per value
  std::optional<SchemeDescriptor> scheme;
  LinkModel link{};  // bandwidth and latency throttle the senders
  int repetitions = 5;
  TransportKind transport = TransportKind::InProcess;
  std::uint64_t seed = 0;
  std::size_t chunk_bytes = 64 * 1024;
  double burst_ms = 2.0;  // token bucket capacity, in milliseconds of bandwidth
};

struct BenchResult {
  std::string codec;
  std::string transport;
  int workers = 0;
  std::uint64_t tensor_bytes = 0;
  double median_s = 0.0;
  double stddev_s = 0.0;
  std::uint64_t bytes_on_wire_per_worker = 0;
  double speedup = 1.0;  // uncompressed median / this median
  int repetitions = 0;
  std::vector<double> times_s;
};

namespace detail {

inline double median(std::vector<double> v) {
  if (v.empty()) return 0.0;
  std::sort(v.begin(), v.end());
  const std::size_t h = v.size() / 2;
  return v.size() % 2 ? v[h] : (v[h - 1] + v[h]) / 2.0;
}

inline double stddev(const std::vector<double>& v) {
  if (v.size() < 2) return 0.0;
  double mean = 0.0;
  for (double x : v) mean += x;
  mean /= static_cast<double>(v.size());
  double ss = 0.0;
  for (double x : v) ss += (x - mean) * (x - mean);
  return std::sqrt(ss / static_cast<double>(v.size() - 1));
}

// Worker inputs: Gaussian with outliers, rounded to fp16 so that the
// uncompressed exchange is lossless.
inline std::vector<float> bench_input(std::uint64_t n, std::uint64_t seed) {
  Tensor t = gaussian_tensor(Shape{n}, seed);
  for (float& v : t.data) v = half_to_float(float_to_half(v));
  return std::move(t.data);
}

// Byte view over 16-bit storage; receive buffers are uint16_t so the fp16
// path can read them without a copy.
inline std::span<std::uint8_t> as_bytes(std::vector<std::uint16_t>& v, std::uint64_t bytes) {
  return {reinterpret_cast<std::uint8_t*>(v.data()), static_cast<std::size_t>(bytes)};
}

class FirstError {
 public:
  void record(std::exception_ptr e) {
    std::lock_guard lock(mu_);
    if (!first_) first_ = std::move(e);
  }
  void rethrow() const {
    if (first_) std::rethrow_exception(first_);
  }

 private:
  std::mutex mu_;
  std::exception_ptr first_;
};

// One repetition's shared state.
struct Round {
  int n;
  std::uint64_t payload;
  std::vector<std::vector<std::atomic<std::uint64_t>>> progress;  // [worker][source] bytes received
  std::atomic<bool> failed{false};
  FirstError error;

  Round(int workers, std::uint64_t payload_bytes) : n(workers), payload(payload_bytes) {
    progress.resize(static_cast<std::size_t>(n));
    for (auto& p : progress) p = std::vector<std::atomic<std::uint64_t>>(static_cast<std::size_t>(n));
  }

  void wait_for(int worker, int source, std::uint64_t bytes) {
    auto& a = progress[static_cast<std::size_t>(worker)][static_cast<std::size_t>(source)];
    for (std::uint64_t seen = a.load(std::memory_order_acquire); seen < bytes; seen = a.load(std::memory_order_acquire)) {
      if (failed) fail(ErrorCode::TransportFailure, "peer failed");
      a.wait(seen, std::memory_order_acquire);
    }
    if (failed) fail(ErrorCode::TransportFailure, "peer failed");
  }

  void publish(int worker, int source, std::uint64_t bytes) {
    auto& a = progress[static_cast<std::size_t>(worker)][static_cast<std::size_t>(source)];
    a.store(bytes, std::memory_order_release);
    a.notify_all();
  }

  void abort(Transport& transport, std::exception_ptr e) {
    error.record(std::move(e));
    failed = true;
    transport.abort();
    for (auto& row : progress) {
      for (auto& a : row) {
        a.store(std::numeric_limits<std::uint64_t>::max(), std::memory_order_release);
        a.notify_all();
      }
    }
  }
};

// Values reduced per step: whole groups of 8 blocks keep both streams
// byte-aligned, and 64 Ki floats of accumulator stay cache resident.
inline std::uint64_t reduce_step_blocks(std::uint32_t block_size) {
  return std::max<std::uint64_t>(8, ((std::uint64_t{1} << 16) / block_size) / 8 * 8);
}

}  // namespace detail

class AllGatherBench {
 public:
  explicit AllGatherBench(BenchConfig cfg) : cfg_(std::move(cfg)) {
    if (cfg_.workers < 2) fail(ErrorCode::MinimumDegreeTwo, "all-gather needs at least 2 workers");
    if (cfg_.repetitions < 3) fail(ErrorCode::InvalidArgument, "at least 3 repetitions required");
    if (cfg_.chunk_bytes == 0) fail(ErrorCode::InvalidArgument, "chunk size must be positive");
    validate(cfg_.link);
    elements_ = element_count(cfg_.shape);
    if (elements_ == 0) fail(ErrorCode::ShapeMismatch, "empty tensor");
    payload_ = payload_bytes(cfg_.shape, cfg_.scheme);
    const auto n = static_cast<std::size_t>(cfg_.workers);
    inputs_.resize(n);
    for (std::size_t w = 0; w < n; ++w) inputs_[w] = detail::bench_input(elements_, cfg_.seed + w);
    // Buffers are allocated and touched once so page faults stay out of the timings.
    recv_.assign(n, std::vector<std::vector<std::uint16_t>>(n));
    for (auto& row : recv_) {
      for (auto& b : row) b.assign(static_cast<std::size_t>((payload_ + 1) / 2), 0);
    }
    acc_.assign(n, std::vector<float>(static_cast<std::size_t>(elements_), 0.0f));
  }

  BenchResult run() {
    BenchResult r;
    r.codec = cfg_.scheme ? scheme_name(*cfg_.scheme) : "none";
    r.transport = to_string(cfg_.transport);
    r.workers = cfg_.workers;
    r.tensor_bytes = 2 * elements_;
    r.repetitions = cfg_.repetitions;
    for (int rep = 0; rep < cfg_.repetitions; ++rep) {
      const auto transport = make_transport(cfg_.transport, cfg_.workers);
      const double t = run_round(*transport, r.bytes_on_wire_per_worker);
      r.times_s.push_back(t);
      check_agreement(rep == 0);
    }
    r.median_s = detail::median(r.times_s);
    r.stddev_s = detail::stddev(r.times_s);
    return r;
  }

  /// Worker w's reduced tensor from the last repetition.
  std::span<const float> result(int w) const { return acc_.at(static_cast<std::size_t>(w)); }

 private:
  using Clock = std::chrono::steady_clock;

  double run_round(Transport& transport, std::uint64_t& wire_bytes) {
    const int n = cfg_.workers;
    detail::Round round(n, payload_);
    std::vector<std::atomic<std::uint64_t>> sent(static_cast<std::size_t>(n));
    std::latch start(1);
    std::vector<std::thread> threads;
    for (int w = 0; w < n; ++w) {
      threads.emplace_back([&, w] {
        start.wait();
        try {
          worker(w, transport, round, sent[static_cast<std::size_t>(w)]);
        } catch (...) {
          round.abort(transport, std::current_exception());
        }
      });
    }
    const auto t0 = Clock::now();
    start.count_down();
    for (auto& t : threads) t.join();
    const auto t1 = Clock::now();
    round.error.rethrow();
    wire_bytes = sent[0];
    for (auto& s : sent) {
      if (s != static_cast<std::uint64_t>(n - 1) * payload_) {
        fail(ErrorCode::TransportFailure, "worker sent " + std::to_string(s.load()) + " bytes, expected " +
                                              std::to_string(static_cast<std::uint64_t>(n - 1) * payload_));
      }
    }
    return std::chrono::duration<double>(t1 - t0).count();
  }

  void worker(int w, Transport& transport, detail::Round& round, std::atomic<std::uint64_t>& sent) {
    const int n = cfg_.workers;
    const auto self = static_cast<std::size_t>(w);
    std::vector<std::thread> helpers;
    const auto guarded = [&](auto fn) {
      return [&round, &transport, fn] {
        try {
          fn();
        } catch (...) {
          round.abort(transport, std::current_exception());
        }
      };
    };
    for (int k = 1; k < n; ++k) {
      const int peer = (w + k) % n;
      helpers.emplace_back(guarded([&, peer] { receive(w, peer, transport, round); }));
    }

    // Encode into this worker's own slot so the reduction reads all N
    // payloads the same way.
    auto& own = recv_[self][self];
    if (cfg_.scheme) {
      compress_serialized_into(inputs_[self], cfg_.shape, *cfg_.scheme, detail::as_bytes(own, payload_));
    } else {
      floats_to_halves(inputs_[self], std::span<std::uint16_t>(own.data(), static_cast<std::size_t>(elements_)));
    }
    round.publish(w, w, payload_);
    helpers.emplace_back(guarded([&] { send_all(w, transport, sent); }));

    reduce(w, round);
    for (auto& t : helpers) t.join();
  }

  void send_all(int w, Transport& transport, std::atomic<std::uint64_t>& sent) {
    const int n = cfg_.workers;
    const auto payload = detail::as_bytes(recv_[static_cast<std::size_t>(w)][static_cast<std::size_t>(w)], payload_);
    std::optional<TokenBucket> bucket;
    if (std::isfinite(cfg_.link.bandwidth)) {
      const double capacity = std::max(static_cast<double>(cfg_.chunk_bytes), cfg_.link.bandwidth * cfg_.burst_ms * 1e-3);
      bucket.emplace(cfg_.link.bandwidth, capacity);
    }
    // Chunks go round-robin over peers so every receiver progresses evenly.
    for (std::uint64_t off = 0; off < payload_; off += cfg_.chunk_bytes) {
      const auto len = static_cast<std::size_t>(std::min<std::uint64_t>(cfg_.chunk_bytes, payload_ - off));
      for (int k = 1; k < n; ++k) {
        if (off == 0 && cfg_.link.latency > 0.0) {
          std::this_thread::sleep_for(std::chrono::duration<double>(cfg_.link.latency));
        }
        if (bucket) bucket->acquire(len);
        transport.send(w, (w + k) % n, payload.subspan(static_cast<std::size_t>(off), len));
        sent += len;
      }
    }
  }

  void receive(int w, int peer, Transport& transport, detail::Round& round) {
    auto buf = detail::as_bytes(recv_[static_cast<std::size_t>(w)][static_cast<std::size_t>(peer)], payload_);
    for (std::uint64_t off = 0; off < payload_; off += cfg_.chunk_bytes) {
      const auto len = static_cast<std::size_t>(std::min<std::uint64_t>(cfg_.chunk_bytes, payload_ - off));
      transport.recv(w, peer, buf.subspan(static_cast<std::size_t>(off), len));
      round.publish(w, peer, off + len);
    }
  }

  // Sums the N payloads in rank order (rank 0's values, then += the rest),
  // one cache-sized step at a time, waiting only for the bytes each step
  // needs.
  void reduce(int w, detail::Round& round) {
    const int n = cfg_.workers;
    const auto self = static_cast<std::size_t>(w);
    auto& acc = acc_[self];
    if (!cfg_.scheme) {
      const std::uint64_t step = std::uint64_t{1} << 16;
      for (std::uint64_t v0 = 0; v0 < elements_; v0 += step) {
        const std::uint64_t v1 = std::min(elements_, v0 + step);
        const auto len = static_cast<std::size_t>(v1 - v0);
        std::span<float> out(acc.data() + v0, len);
        for (int r = 0; r < n; ++r) {
          round.wait_for(w, r, 2 * v1);
          const std::span<const std::uint16_t> in(recv_[self][static_cast<std::size_t>(r)].data() + v0, len);
          if (r == 0) {
            halves_to_floats(in, out);
          } else {
            accumulate_halves(in, out);
          }
        }
      }
      return;
    }
    const SchemeDescriptor& s = *cfg_.scheme;
    const std::uint64_t header = header_bytes(cfg_.shape.size());
    const std::uint64_t blocks = block_count(elements_, s.block_size);
    const std::uint64_t scales = packed_bytes(blocks, s.scale.exponent_bits());
    std::vector<std::optional<CompressedView>> views(static_cast<std::size_t>(n));
    const StreamDecoder decoder(s);
    const std::uint64_t step = detail::reduce_step_blocks(s.block_size);
    for (std::uint64_t b0 = 0; b0 < blocks; b0 += step) {
      const std::uint64_t b1 = std::min(blocks, b0 + step);
      const std::uint64_t v1 = std::min(elements_, b1 * s.block_size);
      const std::uint64_t need = header + scales + packed_bytes(v1, s.element.total_bits());
      for (int r = 0; r < n; ++r) {
        const auto src = static_cast<std::size_t>(r);
        round.wait_for(w, r, need);
        if (!views[src]) {
          views[src] = parse_serialized(detail::as_bytes(recv_[self][src], payload_));
          if (views[src]->shape != cfg_.shape || !(views[src]->scheme == s)) {
            fail(ErrorCode::ResultMismatch, "worker " + std::to_string(r) + " sent a different tensor layout");
          }
        }
        if (r == 0) {
          decoder.decode_into(*views[src], acc, b0, b1);
        } else {
          decoder.accumulate(*views[src], acc, b0, b1);
        }
      }
    }
  }

  void check_agreement(bool full_check) {
    const std::size_t bytes = acc_[0].size() * sizeof(float);
    for (std::size_t w = 1; w < acc_.size(); ++w) {
      if (std::memcmp(acc_[w].data(), acc_[0].data(), bytes) != 0) {
        fail(ErrorCode::ResultMismatch, "worker " + std::to_string(w) + " reduced a different tensor than worker 0");
      }
    }
    if (!full_check) return;
    // Independent serial reduction of the same payloads.
    std::vector<float> expect(static_cast<std::size_t>(elements_), 0.0f);
    for (std::size_t r = 0; r < inputs_.size(); ++r) {
      const std::vector<float> decoded =
          cfg_.scheme ? decompress_tensor(compress(inputs_[r], cfg_.shape, *cfg_.scheme)).data : inputs_[r];
      for (std::size_t i = 0; i < expect.size(); ++i) expect[i] = r == 0 ? decoded[i] : expect[i] + decoded[i];
    }
    if (std::memcmp(expect.data(), acc_[0].data(), bytes) != 0) {
      fail(ErrorCode::ResultMismatch, "all-gather reduction differs from the serial reduction");
    }
  }

  BenchConfig cfg_;
  std::uint64_t elements_ = 0;
  std::uint64_t payload_ = 0;
  std::vector<std::vector<float>> inputs_;
  std::vector<std::vector<std::vector<std::uint16_t>>> recv_;  // [worker][source]; [w][w] is w's own payload
  std::vector<std::vector<float>> acc_;
};

inline BenchResult run_allgather_bench(const BenchConfig& cfg) { return AllGatherBench(cfg).run(); }

struct BenchComparison {
  BenchResult uncompressed;
  BenchResult compressed;
};

/// Runs the same configuration without and with cfg.scheme; the compressed
/// result's speedup is the ratio of the medians.
inline BenchComparison compare_allgather(const BenchConfig& cfg) {
  if (!cfg.scheme) fail(ErrorCode::InvalidArgument, "comparison needs a scheme");
  BenchConfig base = cfg;
  base.scheme.reset();
  BenchComparison out{run_allgather_bench(base), run_allgather_bench(cfg)};
  out.compressed.speedup = out.uncompressed.median_s / out.compressed.median_s;
  return out;
}

struct ThroughputSample {
  std::uint64_t values = 0;
  double compress_values_per_s = 0.0;
  double decompress_values_per_s = 0.0;
};

struct CodecThroughput {
  std::string codec;
  int concurrency = 1;
  std::vector<ThroughputSample> samples;
  double compress_values_per_s = 0.0;    // median over sample sizes
  double decompress_values_per_s = 0.0;  // median over sample sizes
};

/// Times compress (encode + serialize) and decompress-accumulate on random
/// data, median of `runs` runs per size. With concurrency > 1 that many
/// threads run the same work at once and the per-thread rate is reported,
/// matching what each of that many workers sees.
inline CodecThroughput calibrate_codec_throughput(const std::optional<SchemeDescriptor>& scheme,
                                                  std::span<const std::uint64_t> sizes, int runs = 5,
                                                  int concurrency = 1, std::uint64_t seed = 0) {
  if (sizes.empty()) fail(ErrorCode::InvalidArgument, "no sample sizes given");
  if (runs < 5) fail(ErrorCode::InvalidArgument, "at least 5 runs required");
  if (concurrency < 1) fail(ErrorCode::InvalidArgument, "concurrency must be positive");
  using Clock = std::chrono::steady_clock;
  CodecThroughput out;
  out.codec = scheme ? scheme_name(*scheme) : "none";
  out.concurrency = concurrency;
  std::vector<double> comp_rates, decomp_rates;
  for (const std::uint64_t size : sizes) {
    if (size == 0) fail(ErrorCode::InvalidArgument, "sample size must be positive");
    const auto c = static_cast<std::size_t>(concurrency);
    std::vector<std::vector<float>> data(c), acc(c);
    std::vector<std::vector<std::uint8_t>> payload(c);
    std::vector<std::vector<std::uint16_t>> halves(c);
    for (std::size_t t = 0; t < c; ++t) {
      data[t] = detail::bench_input(size, seed + t);
      acc[t].assign(static_cast<std::size_t>(size), 0.0f);
      halves[t].assign(static_cast<std::size_t>(size), 0);
      if (scheme) payload[t].assign(static_cast<std::size_t>(serialized_size(Shape{size}, *scheme)), 0);
    }
    const Shape shape{size};
    // Each phase is timed from a common start until the last thread
    // finishes, so c threads sharing fewer cores show the per-worker rate.
    std::vector<double> comp_times, decomp_times;
    for (int run = 0; run < runs; ++run) {
      // One-shot latches per phase; the main thread stamps the clock between them.
      const auto workers = static_cast<std::ptrdiff_t>(c);
      std::latch ready(workers), go_compress(1), compressed(workers), go_decompress(1), decompressed(workers);
      std::vector<std::thread> threads;
      for (std::size_t t = 0; t < c; ++t) {
        threads.emplace_back([&, t] {
          ready.count_down();
          go_compress.wait();
          if (scheme) {
            compress_serialized_into(data[t], shape, *scheme, payload[t]);
          } else {
            floats_to_halves(data[t], halves[t]);
          }
          compressed.count_down();
          go_decompress.wait();
          if (scheme) {
            decompress_accumulate(parse_serialized(payload[t]), acc[t]);
          } else {
            accumulate_halves(halves[t], acc[t]);
          }
          decompressed.count_down();
        });
      }
      ready.wait();
      const auto t0 = Clock::now();
      go_compress.count_down();
      compressed.wait();
      const auto t1 = Clock::now();
      const auto t2 = Clock::now();
      go_decompress.count_down();
      decompressed.wait();
      const auto t3 = Clock::now();
      for (auto& th : threads) th.join();
      comp_times.push_back(std::chrono::duration<double>(t1 - t0).count());
      decomp_times.push_back(std::chrono::duration<double>(t3 - t2).count());
    }
    ThroughputSample s;
    s.values = size;
    s.compress_values_per_s = static_cast<double>(size) / detail::median(comp_times);
    s.decompress_values_per_s = static_cast<double>(size) / detail::median(decomp_times);
    out.samples.push_back(s);
    comp_rates.push_back(s.compress_values_per_s);
    decomp_rates.push_back(s.decompress_values_per_s);
  }
  out.compress_values_per_s = detail::median(comp_rates);
  out.decompress_values_per_s = detail::median(decomp_rates);
  return out;
}

}  // namespace mxcomm
