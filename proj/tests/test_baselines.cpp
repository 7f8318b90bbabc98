#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <numeric>

#include "mxcomm/baselines.hpp"
#include "mxcomm/codec_spec.hpp"
#include "mxcomm/stats.hpp"

using namespace mxcomm;

TEST(ChannelInt, PerChannelScalesAndBound) {
  const Tensor t = gaussian_tensor({64, 48}, 1, {0.02, 50.0});
  const auto p = channelwise_int_compress(t, 4);
  ASSERT_EQ(p.scales.size(), 48u);
  const Tensor back = channelwise_int_decompress(deserialize_channel_int(serialize(p)));
  for (std::size_t i = 0; i < t.size(); ++i) {
    const double scale = p.scale(i % 48);
    ASSERT_LE(std::fabs(back.data[i] - t.data[i]), scale / 2 + 1e-6 * scale) << i;
  }
  for (std::size_t c = 0; c < 48; ++c) {
    float m = 0;
    for (std::size_t r = 0; r < 64; ++r) m = std::max(m, std::fabs(t.data[r * 48 + c]));
    EXPECT_GE(p.scale(c) * 7.0f, m);                       // never clips
    EXPECT_LT(p.scale(c) * 7.0f, m * (1.0f + 1.0f / 512));  // rounded up by at most one half ulp step
  }
  EXPECT_EQ(serialize(p).size(), channel_int_serialized_size(t.shape, 4));
}

TEST(ChannelInt, ZeroChannelAndErrors) {
  Tensor t({4, 2});
  t.data = {0, 1, 0, -2, 0, 3, 0, 0.5};
  const Tensor back = channelwise_int_decompress(channelwise_int_compress(t, 3));
  for (std::size_t r = 0; r < 4; ++r) EXPECT_EQ(back.data[r * 2], 0.0f);
  EXPECT_THROW(channelwise_int_compress(t, 1), Error);
  t.data[3] = NAN;
  EXPECT_THROW(channelwise_int_compress(t, 4), Error);
}

TEST(TopK, KeepsLargestMagnitudes) {
  const Tensor t = gaussian_tensor({1000}, 2, {0.0, 1.0});
  const std::uint64_t k = topk_k_for_factor(t.shape, 3.0);
  EXPECT_EQ(k, (2000 / 3 - header_bytes(1)) / 6);
  const auto p = topk_compress(t, 3.0);
  ASSERT_EQ(p.k(), k);
  EXPECT_TRUE(std::is_sorted(p.indices.begin(), p.indices.end()));
  std::vector<float> mags(t.size());
  for (std::size_t i = 0; i < t.size(); ++i) mags[i] = std::fabs(t.data[i]);
  std::vector<float> sorted = mags;
  std::sort(sorted.rbegin(), sorted.rend());
  const float threshold = sorted[k - 1];
  for (auto i : p.indices) EXPECT_GE(mags[i], threshold);
  const auto bytes = serialize(p);
  EXPECT_EQ(bytes.size(), topk_serialized_size(t.shape, k));
  EXPECT_LE(bytes.size(), 2000 / 3.0);
  const Tensor back = topk_decompress(deserialize_topk(bytes));
  std::size_t kept = 0;
  for (std::size_t i = 0; i < t.size(); ++i) {
    if (back.data[i] != 0.0f) {
      ++kept;
      EXPECT_EQ(back.data[i], half_to_float(float_to_half(t.data[i])));
    }
  }
  EXPECT_EQ(kept, k);
}

TEST(TopK, FactorErrors) {
  const Tensor t = gaussian_tensor({10}, 3);
  EXPECT_THROW(topk_k_for_factor(t.shape, 1.0), Error);
  try {
    topk_k_for_factor(t.shape, 3.0);  // 6.7 bytes budget < header
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::CompressionFactorTooHigh);
  }
}

TEST(CodecSpec, ParseAndName) {
  for (const char* name : {"none", "fp4_e2m1:32:e8m0", "channel_int:4", "topk:3", "topk:2.5"}) {
    EXPECT_EQ(codec_name(parse_codec(name)), name);
  }
  EXPECT_THROW(parse_codec("topk:x"), Error);
  EXPECT_THROW(parse_codec("channel_int:4b"), Error);
}

namespace {

double mse_of(const CodecSpec& c, const Tensor& t) {
  const auto rt = roundtrip(c, t);
  return compare(std::span<const float>(t.data), std::span<const float>(rt.decoded.data)).mse;
}

}  // namespace

TEST(CodecSpec, QualityOrderingWithModerateOutliers) {
  const Tensor t = gaussian_tensor({64, 1024}, 4, {0.01, 10.0});
  const double mx = mse_of(parse_scheme("fp4_e2m1:8:e5m0"), t);
  const double ci = mse_of(ChannelIntCodec{4}, t);
  const double tk = mse_of(TopKCodec{3.0}, t);
  EXPECT_LT(mx, ci);
  EXPECT_LT(ci, tk);
  EXPECT_EQ(mse_of(Passthrough{}, t), 0.0);
}

// With x100 outliers the MX error is dominated by rounding the outliers
// themselves, which TopK keeps at 16-bit precision.
TEST(CodecSpec, LargeOutliersFavourTopK) {
  const Tensor t = gaussian_tensor({64, 1024}, 4, {0.01, 100.0});
  EXPECT_GT(mse_of(parse_scheme("fp4_e2m1:8:e5m0"), t), mse_of(TopKCodec{3.0}, t));
}
