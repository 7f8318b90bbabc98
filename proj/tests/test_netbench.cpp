#include <gtest/gtest.h>

#include <chrono>
#include <cmath>
#include <thread>

#include "mxcomm/netbench.hpp"

using namespace mxcomm;

namespace {

const SchemeDescriptor kFp4 = parse_scheme("fp4_e2m1:32:e8m0");

ErrorCode code_of(auto&& fn) {
  try {
    fn();
  } catch (const Error& e) {
    return e.code();
  }
  ADD_FAILURE() << "no exception";
  return ErrorCode::Io;
}

}  // namespace

TEST(Predict, BandwidthOnlyLimitIsBitRatio) {
  LinkModel link;
  link.bandwidth = 1e9;
  const std::uint64_t bytes = std::uint64_t{1} << 34;
  const double none = predict_comm_time(bytes, std::nullopt, 4, link);
  EXPECT_DOUBLE_EQ(none, 3.0 * static_cast<double>(bytes) / 1e9);
  const double fp4 = predict_comm_time(bytes, kFp4, 4, link);
  EXPECT_NEAR(none / fp4, 16.0 / 4.25, 1e-6);
}

TEST(Predict, CodecAndLatencyTerms) {
  LinkModel link{1e9, 1e-5, 1e9, 2e9};
  const std::uint64_t bytes = 16u << 20;
  const double v = 8u << 20;
  const double wire = static_cast<double>(serialized_size(Shape{8u << 20}, kFp4));
  EXPECT_DOUBLE_EQ(predict_comm_time(bytes, kFp4, 4, link), 3 * 1e-5 + 3 * wire / 1e9 + v / 1e9 + 3 * v / 2e9);
  EXPECT_DOUBLE_EQ(predict_comm_time(bytes, std::nullopt, 2, link), 1e-5 + bytes / 1e9);
  // More workers, more peers to send to.
  EXPECT_LT(predict_comm_time(bytes, kFp4, 2, link), predict_comm_time(bytes, kFp4, 8, link));
  EXPECT_EQ(code_of([&] { predict_comm_time(bytes, kFp4, 1, link); }), ErrorCode::MinimumDegreeTwo);
  link.bandwidth = 0;
  EXPECT_EQ(code_of([&] { predict_comm_time(bytes, kFp4, 2, link); }), ErrorCode::InvalidArgument);
}

TEST(TokenBucket, HoldsConfiguredRate) {
  TokenBucket bucket(50e6, 100e3);  // 50 MB/s, 2 ms burst
  const auto t0 = std::chrono::steady_clock::now();
  for (int i = 0; i < 100; ++i) bucket.acquire(25'000);  // 2.5 MB
  const double s = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  // (2.5 MB - 100 KB burst) / 50 MB/s = 48 ms
  EXPECT_GT(s, 0.045);
  EXPECT_LT(s, 0.2);
  EXPECT_THROW(bucket.acquire(200'000), Error);
  EXPECT_THROW(TokenBucket(0, 1), Error);
}

class TransportTest : public ::testing::TestWithParam<TransportKind> {};

TEST_P(TransportTest, DeliversInOrderPerPair) {
  const int n = 3;
  auto t = make_transport(GetParam(), n);
  ASSERT_EQ(t->size(), n);
  std::vector<std::thread> th;
  std::vector<std::vector<std::uint8_t>> got(n * n);
  for (int from = 0; from < n; ++from) {
    th.emplace_back([&, from] {
      for (int to = 0; to < n; ++to) {
        if (to == from) continue;
        std::vector<std::uint8_t> msg(300'000);
        for (std::size_t i = 0; i < msg.size(); ++i) msg[i] = static_cast<std::uint8_t>(i * 7 + from * 31 + to);
        t->send(from, to, std::span<const std::uint8_t>(msg).first(100'000));
        t->send(from, to, std::span<const std::uint8_t>(msg).subspan(100'000));
      }
    });
    th.emplace_back([&, to = from] {
      for (int from2 = 0; from2 < n; ++from2) {
        if (from2 == to) continue;
        auto& buf = got[from2 * n + to];
        buf.resize(300'000);
        t->recv(to, from2, buf);
      }
    });
  }
  for (auto& x : th) x.join();
  for (int from = 0; from < n; ++from) {
    for (int to = 0; to < n; ++to) {
      if (from == to) continue;
      const auto& buf = got[from * n + to];
      for (std::size_t i = 0; i < buf.size(); i += 997) {
        ASSERT_EQ(buf[i], static_cast<std::uint8_t>(i * 7 + from * 31 + to));
      }
    }
  }
}

INSTANTIATE_TEST_SUITE_P(Kinds, TransportTest, ::testing::Values(TransportKind::InProcess, TransportKind::Tcp),
                         [](const auto& info) { return to_string(info.param); });

TEST(AllGather, SmallRunAgreesAndCountsBytes) {
  for (auto kind : {TransportKind::InProcess, TransportKind::Tcp}) {
    BenchConfig cfg;
    cfg.workers = 3;
    cfg.shape = Shape{1u << 16};
    cfg.link.bandwidth = std::numeric_limits<double>::infinity();
    cfg.repetitions = 3;
    cfg.transport = kind;
    const BenchResult none = run_allgather_bench(cfg);
    EXPECT_EQ(none.bytes_on_wire_per_worker, 2u * 2 * (1u << 16));
    EXPECT_EQ(none.times_s.size(), 3u);
    cfg.scheme = kFp4;
    const BenchResult fp4 = run_allgather_bench(cfg);
    EXPECT_EQ(fp4.bytes_on_wire_per_worker, 2 * serialized_size(cfg.shape, kFp4));
    EXPECT_EQ(fp4.codec, "fp4_e2m1:32:e8m0");
    EXPECT_EQ(fp4.tensor_bytes, 2u << 16);
  }
}

TEST(AllGather, ThrottleShapesTime) {
  BenchConfig cfg;
  cfg.workers = 2;
  cfg.shape = Shape{1u << 20};  // 2 MiB fp16
  cfg.link.bandwidth = 100e6;
  cfg.repetitions = 3;
  const BenchResult r = run_allgather_bench(cfg);
  EXPECT_GT(r.median_s, 0.8 * (2u << 20) / 100e6);
}

TEST(AllGather, Validation) {
  BenchConfig cfg;
  cfg.workers = 1;
  EXPECT_EQ(code_of([&] { run_allgather_bench(cfg); }), ErrorCode::MinimumDegreeTwo);
  cfg.workers = 2;
  cfg.repetitions = 0;
  EXPECT_EQ(code_of([&] { run_allgather_bench(cfg); }), ErrorCode::InvalidArgument);
  cfg.repetitions = 3;
  EXPECT_EQ(code_of([&] { compare_allgather(cfg); }), ErrorCode::InvalidArgument);
}

TEST(Calibrate, ReportsPositiveFiniteRates) {
  const std::uint64_t sizes[] = {1u << 16, 1u << 18};
  const auto c = calibrate_codec_throughput(kFp4, sizes, 5, 2);
  EXPECT_EQ(c.samples.size(), 2u);
  EXPECT_EQ(c.concurrency, 2);
  EXPECT_TRUE(std::isfinite(c.compress_values_per_s) && c.compress_values_per_s > 0);
  EXPECT_TRUE(std::isfinite(c.decompress_values_per_s) && c.decompress_values_per_s > 0);
  EXPECT_LT(c.compress_values_per_s, 1e11);
  EXPECT_THROW(calibrate_codec_throughput(kFp4, sizes, 4), Error);
  EXPECT_THROW(calibrate_codec_throughput(kFp4, {}, 5), Error);
}
