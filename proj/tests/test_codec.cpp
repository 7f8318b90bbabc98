#include <gtest/gtest.h>

#include <cmath>
#include <limits>
#include <random>
#include <vector>

#include "mxcomm/codec.hpp"
#include "mxcomm/stats.hpp"
#include "oracle.hpp"

using namespace mxcomm;

namespace {

std::vector<SchemeDescriptor> all_schemes(std::vector<std::uint32_t> blocks, std::vector<int> scales = {4, 5, 8}) {
  std::vector<SchemeDescriptor> out;
  for (const auto& e : element_registry()) {
    for (auto b : blocks) {
      for (int s : scales) out.emplace_back(e.format, b, ScaleFormat(s));
    }
  }
  return out;
}

// Mixed-regime blocks: plain Gaussian, heavy outliers, float denormals,
// extreme magnitudes, exact grid points and exact grid midpoints.
std::vector<float> random_block(std::mt19937_64& rng, std::size_t n, const SchemeDescriptor& s) {
  std::normal_distribution<double> normal;
  std::uniform_int_distribution<int> kind(0, 6);
  std::vector<float> v(n);
  const auto g = oracle::magnitudes(s.element);
  std::uniform_int_distribution<std::size_t> pick(0, g.size() - 1);
  std::uniform_int_distribution<int> exp(-20, 20);
  switch (kind(rng)) {
    case 0:
      for (auto& x : v) x = static_cast<float>(normal(rng));
      break;
    case 1:
      for (auto& x : v) x = static_cast<float>(normal(rng) * (rng() % 16 == 0 ? 1000.0 : 1.0));
      break;
    case 2:
      for (auto& x : v) x = static_cast<float>(normal(rng) * 1e-40);
      break;
    case 3:
      for (auto& x : v) x = static_cast<float>(normal(rng) * 1e37);
      break;
    case 4: {
      const int e = exp(rng);
      for (auto& x : v) x = static_cast<float>(std::ldexp(g[pick(rng)], e) * (rng() % 2 ? -1 : 1));
      break;
    }
    case 5: {
      // Midpoints between neighbours, with the grid max pinned so the scale is 2^e.
      const int e = exp(rng);
      for (auto& x : v) {
        const std::size_t i = 1 + pick(rng) % (g.size() - 1);
        x = static_cast<float>(std::ldexp((g[i] + g[i - 1]) / 2.0, e) * (rng() % 2 ? -1 : 1));
      }
      v[0] = static_cast<float>(std::ldexp(g.back(), e));
      break;
    }
    default:
      for (auto& x : v) x = static_cast<float>(normal(rng) * std::ldexp(1.0, exp(rng)));
      if (rng() % 2) v[rng() % n] = 0.0f;
  }
  return v;
}

void expect_matches_oracle(const BlockQuantizer& q, const std::vector<float>& v, const SchemeDescriptor& s) {
  const oracle::Block want = oracle::encode(std::span<const float>(v), s);
  std::vector<std::uint8_t> got_f(v.size()), got_d(v.size());
  const BlockEncoding enc_f = q.encode(std::span<const float>(v), std::span<std::uint8_t>(got_f));
  std::vector<double> vd(v.begin(), v.end());
  const BlockEncoding enc_d = q.encode(std::span<const double>(vd), std::span<std::uint8_t>(got_d));
  ASSERT_EQ(enc_f.scale_code, want.scale_code) << scheme_name(s) << " v[0]=" << v[0];
  ASSERT_EQ(enc_d.scale_code, want.scale_code) << scheme_name(s);
  ASSERT_EQ(got_f, want.codes) << scheme_name(s) << " v[0]=" << v[0];
  ASSERT_EQ(got_d, want.codes) << scheme_name(s);
}

}  // namespace

TEST(BlockQuantizer, MatchesBruteForceOracle) {
  std::mt19937_64 rng(1);
  for (const auto& s : all_schemes({8, 16, 32, 7})) {
    const BlockQuantizer q(s);
    for (int t = 0; t < 300; ++t) {
      expect_matches_oracle(q, random_block(rng, s.block_size, s), s);
      if (HasFatalFailure()) return;
    }
  }
}

TEST(BlockQuantizer, TiesGoToEvenIndex) {
  const SchemeDescriptor s = parse_scheme("fp4_e2m1:8:e8m0");
  const BlockQuantizer q(s);
  // Grid {0, .5, 1, 1.5, 2, 3, 4, 6}; 6 pins the shared exponent at 0.
  const std::vector<float> v = {6.0f, 0.25f, 0.75f, 1.25f, 1.75f, 2.5f, 3.5f, 5.0f};
  std::vector<std::uint8_t> codes(8);
  const auto enc = q.encode(std::span<const float>(v), std::span<std::uint8_t>(codes));
  EXPECT_EQ(enc.shared_exponent, 0);
  EXPECT_EQ(codes, (std::vector<std::uint8_t>{7, 0, 2, 2, 4, 4, 6, 6}));
}

TEST(BlockQuantizer, SaturationThresholdIsHalfGapAboveMax) {
  const SchemeDescriptor s = parse_scheme("fp4_e2m1:8:e8m0");
  const BlockQuantizer q(s);
  EXPECT_EQ(q.choose_exponent(7.0).shared_exponent, 0);
  EXPECT_EQ(q.choose_exponent(std::nextafter(7.0, 8.0)).shared_exponent, 1);
  EXPECT_EQ(q.choose_exponent(3.5).shared_exponent, -1);
  EXPECT_EQ(q.choose_exponent(std::nextafter(3.5, 4.0)).shared_exponent, 0);
  const float max7 = 7.0f;
  const std::uint32_t bits7 = std::bit_cast<std::uint32_t>(max7);
  EXPECT_EQ(q.choose_exponent_bits(bits7).shared_exponent, 0);
  EXPECT_EQ(q.choose_exponent_bits(bits7 + 1).shared_exponent, 1);
}

TEST(BlockQuantizer, ZeroBlocksAreCanonical) {
  for (const auto& s : all_schemes({8})) {
    const BlockQuantizer q(s);
    std::vector<float> v(8, 0.0f);
    v[3] = -0.0f;
    std::vector<std::uint8_t> codes(8, 0xff);
    EXPECT_EQ(q.encode(std::span<const float>(v), std::span<std::uint8_t>(codes)).scale_code, 0u);
    EXPECT_EQ(codes, std::vector<std::uint8_t>(8, 0));
    std::vector<float> out(8, 1.0f);
    q.decode(0, codes, std::span<float>(out));
    EXPECT_EQ(out, std::vector<float>(8, 0.0f));
  }
}

TEST(BlockQuantizer, RepresentableValuesAreFixpoints) {
  std::mt19937_64 rng(2);
  for (const auto& s : all_schemes({8, 32}, {5, 8})) {
    const BlockQuantizer q(s);
    const auto g = oracle::magnitudes(s.element);
    for (int e : {-10, 0, 3, 10}) {
      std::vector<float> v(s.block_size);
      for (auto& x : v) x = static_cast<float>(std::ldexp(g[rng() % g.size()], e) * (rng() % 2 ? -1 : 1));
      v[0] = static_cast<float>(std::ldexp(g.back(), e));
      std::vector<std::uint8_t> codes(v.size());
      const auto enc = q.encode(std::span<const float>(v), std::span<std::uint8_t>(codes));
      std::vector<float> out(v.size());
      q.decode(enc.scale_code, codes, std::span<float>(out));
      EXPECT_EQ(out, v) << scheme_name(s) << " e=" << e;
    }
  }
}

TEST(BlockQuantizer, ExtremeMagnitudes) {
  for (const auto& s : all_schemes({8}, {4, 8})) {
    const BlockQuantizer q(s);
    for (float big : {std::numeric_limits<float>::max(), 1e30f, std::numeric_limits<float>::denorm_min(), 1e-42f}) {
      std::vector<float> v = {big, -big, big / 3, 0.0f, -big / 7, big / 2, big / 5, -big};
      expect_matches_oracle(q, v, s);
    }
  }
}

TEST(BlockQuantizer, RejectsNonFinite) {
  for (const char* name : {"fp4_e2m1:32:e8m0", "int4:32:e5m0", "fp2_e1m0:32:e5m0"}) {
    const BlockQuantizer q(parse_scheme(name));
    for (float bad : {std::numeric_limits<float>::infinity(), std::numeric_limits<float>::quiet_NaN()}) {
      std::vector<float> v(32, 1.0f);
      v[17] = bad;
      std::vector<std::uint8_t> codes(32);
      try {
        q.encode(std::span<const float>(v), std::span<std::uint8_t>(codes));
        FAIL() << name;
      } catch (const Error& e) {
        EXPECT_EQ(e.code(), ErrorCode::NonFiniteInput);
        EXPECT_NE(std::string(e.what()).find("17"), std::string::npos);
      }
    }
  }
}

TEST(BlockQuantizer, DecodeRejectsOutOfRangeCodes) {
  const BlockQuantizer q(parse_scheme("fp4_e2m1:8:e5m0"));
  std::vector<std::uint8_t> codes(8, 0);
  std::vector<float> out(8);
  EXPECT_THROW(q.decode(32, codes, std::span<float>(out)), Error);
  codes[2] = 16;
  EXPECT_THROW(q.decode(1, codes, std::span<float>(out)), Error);
}

TEST(BlockQuantizer, ErrorBoundHoldsAndIsTight) {
  std::mt19937_64 rng(3);
  for (const auto& s : all_schemes({8, 32})) {
    const BlockQuantizer q(s);
    double worst_ratio = 0.0;
    for (int t = 0; t < 200; ++t) {
      const auto v = random_block(rng, s.block_size, s);
      std::vector<std::uint8_t> codes(v.size());
      const auto enc = q.encode(std::span<const float>(v), std::span<std::uint8_t>(codes));
      std::vector<double> out(v.size());
      q.decode(enc.scale_code, codes, std::span<double>(out));
      double max_abs = 0;
      for (float x : v) max_abs = std::max(max_abs, std::fabs(static_cast<double>(x)));
      const double bound = q.error_bound(q.choose_exponent(max_abs));
      const auto want = oracle::encode(std::span<const float>(v), s);
      if (!want.clamped_high) EXPECT_EQ(bound, oracle::bound(want, s)) << scheme_name(s);
      for (std::size_t i = 0; i < v.size(); ++i) {
        const double err = std::fabs(out[i] - v[i]);
        ASSERT_LE(err, bound) << scheme_name(s) << " value " << v[i];
        if (bound > 0 && std::isfinite(bound)) worst_ratio = std::max(worst_ratio, err / bound);
      }
    }
    EXPECT_GT(worst_ratio, 0.5) << scheme_name(s);
  }
}

TEST(Tensor, CompressDecompressMatchesBlockwiseOracle) {
  std::mt19937_64 rng(4);
  for (const char* name : {"fp4_e2m1:32:e8m0", "fp5_e2m2:16:e5m0", "fp3_e1m1:8:e5m0", "int5:7:e6m0", "fp2_e1m0:5:e4m0"}) {
    const SchemeDescriptor s = parse_scheme(name);
    const std::uint64_t n = 3 * 256 * s.block_size + 3;  // ragged tail, several chunks
    std::vector<float> x(n);
    for (std::uint64_t b = 0; b * s.block_size < n; ++b) {
      const auto blk = random_block(rng, s.block_size, s);
      for (std::uint64_t i = 0; i < s.block_size && b * s.block_size + i < n; ++i) x[b * s.block_size + i] = blk[i];
    }
    const CompressedTensor ct = compress(x, {n}, s);
    EXPECT_EQ(ct.num_blocks, (n + s.block_size - 1) / s.block_size);
    EXPECT_EQ(ct.scale_stream.size(), packed_bytes(ct.num_blocks, s.scale.exponent_bits()));
    EXPECT_EQ(ct.element_stream.size(), packed_bytes(n, s.element.total_bits()));
    std::vector<float> out(n);
    decompress_into(ct, out);
    for (std::uint64_t start = 0; start < n; start += s.block_size) {
      const auto len = std::min<std::uint64_t>(s.block_size, n - start);
      const auto want = oracle::encode(std::span<const float>(x.data() + start, len), s);
      for (std::uint64_t i = 0; i < len; ++i) {
        ASSERT_EQ(out[start + i], static_cast<float>(want.decoded[i])) << name << " at " << start + i;
      }
    }
  }
}

TEST(Tensor, StreamsMatchBitByBitReference) {
  const SchemeDescriptor s = parse_scheme("fp5_e2m2:8:e5m0");
  const Tensor t = gaussian_tensor({1001}, 5);
  const CompressedTensor ct = compress_tensor(t, s);
  const BlockQuantizer q(s);
  std::vector<std::uint8_t> scales, elems;
  {
    BitWriter ws(scales), we(elems);
    for (std::size_t start = 0; start < t.size(); start += 8) {
      const std::size_t len = std::min<std::size_t>(8, t.size() - start);
      std::vector<std::uint8_t> codes(len);
      const auto enc = q.encode(std::span<const float>(t.data.data() + start, len), std::span<std::uint8_t>(codes));
      ws.put(enc.scale_code, 5);
      for (auto c : codes) we.put(c, 5);
    }
  }
  EXPECT_EQ(ct.scale_stream, scales);
  EXPECT_EQ(ct.element_stream, elems);
}

TEST(StreamDecoder, RangesAndAccumulation) {
  const SchemeDescriptor s = parse_scheme("fp4_e2m1:8:e8m0");
  const Tensor t = gaussian_tensor({8 * 1000 + 5}, 6);
  const CompressedTensor ct = compress_tensor(t, s);
  const StreamDecoder dec(s);
  std::vector<float> full(t.size());
  dec.decode_into(view(ct), full);

  std::vector<float> pieces(t.size(), -1.0f);
  const std::uint64_t cuts[] = {0, 8, 264, 512, 800, ct.num_blocks};
  for (std::size_t i = 0; i + 1 < std::size(cuts); ++i) dec.decode_into(view(ct), pieces, cuts[i], cuts[i + 1]);
  EXPECT_EQ(pieces, full);

  std::vector<float> acc(t.size(), 0.5f);
  dec.accumulate(view(ct), acc);
  for (std::size_t i = 0; i < acc.size(); ++i) ASSERT_EQ(acc[i], 0.5f + full[i]);

  EXPECT_THROW(dec.decode_into(view(ct), pieces, 3, 16), Error);
  std::vector<float> short_out(10);
  try {
    dec.decode_into(view(ct), short_out);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::ShapeMismatch);
  }
  const StreamDecoder other(parse_scheme("fp4_e2m1:8:e5m0"));
  try {
    other.decode_into(view(ct), full);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::InvalidArgument);
  }
}

TEST(StreamDecoder, AgreesWithScalarDecodeForEveryScheme) {
  for (const auto& s : all_schemes({8, 16, 32, 5})) {
    const Tensor t = gaussian_tensor({4099}, 7, {0.05, 1e4});
    const CompressedTensor ct = compress_tensor(t, s);
    std::vector<float> fast(t.size());
    StreamDecoder(s).decode_into(view(ct), fast);
    const BlockQuantizer q(s);
    BitReader rs(ct.scale_stream), re(ct.element_stream);
    for (std::size_t start = 0; start < t.size(); start += s.block_size) {
      const std::size_t len = std::min<std::size_t>(s.block_size, t.size() - start);
      const std::uint32_t sc = rs.get(s.scale.exponent_bits());
      std::vector<std::uint8_t> codes(len);
      for (auto& c : codes) c = static_cast<std::uint8_t>(re.get(s.element.total_bits()));
      std::vector<float> ref(len);
      q.decode(sc, codes, std::span<float>(ref));
      for (std::size_t i = 0; i < len; ++i) ASSERT_EQ(fast[start + i], ref[i]) << scheme_name(s);
    }
  }
}

TEST(Tensor, CorruptStreamsAreRejected) {
  const SchemeDescriptor s = parse_scheme("fp4_e2m1:32:e8m0");
  CompressedTensor ct = compress_tensor(gaussian_tensor({1024}, 8), s);
  std::vector<float> out(1024);
  CompressedTensor truncated = ct;
  truncated.element_stream.pop_back();
  EXPECT_THROW(decompress_into(truncated, out), Error);
  CompressedTensor bad_blocks = ct;
  bad_blocks.num_blocks += 1;
  EXPECT_THROW(decompress_into(bad_blocks, out), Error);
  EXPECT_THROW(compress(std::vector<float>(10), {11}, s), Error);
}
