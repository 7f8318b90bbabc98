#include <gtest/gtest.h>

#include <cmath>
#include <string>

#include "mxcomm/formats.hpp"
#include "oracle.hpp"

using namespace mxcomm;

namespace {

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

TEST(ElementFormat, RegistryDecodesMatchDefinition) {
  for (const auto& entry : element_registry()) {
    const auto expected = oracle::magnitudes(entry.format);
    const auto grid = enumerate_grid(entry.format);
    ASSERT_EQ(grid.values, expected) << entry.name;
    const std::uint32_t sign = 1u << (entry.format.total_bits() - 1);
    for (std::uint32_t i = 0; i < expected.size(); ++i) {
      EXPECT_EQ(entry.format.decode(i), expected[i]);
      EXPECT_EQ(entry.format.decode(i | sign), i == 0 ? 0.0 : -expected[i]);
    }
  }
}

TEST(ElementFormat, KnownGrids) {
  EXPECT_EQ(enumerate_grid(element_format_by_name("fp4_e2m1")).values,
            (std::vector<double>{0, 0.5, 1, 1.5, 2, 3, 4, 6}));
  EXPECT_EQ(enumerate_grid(element_format_by_name("fp3_e1m1")).values, (std::vector<double>{0, 1, 2, 3}));
  EXPECT_EQ(enumerate_grid(element_format_by_name("int4")).values, (std::vector<double>{0, 1, 2, 3, 4, 5, 6, 7}));
  EXPECT_EQ(enumerate_grid(element_format_by_name("fp2_e1m0")).values, (std::vector<double>{0, 2}));
  EXPECT_DOUBLE_EQ(enumerate_grid(element_format_by_name("fp5_e2m2")).max(), 7.0);
  EXPECT_DOUBLE_EQ(enumerate_grid(element_format_by_name("fp5_e3m1")).max(), 24.0);
  EXPECT_EQ(emax(element_format_by_name("fp4_e2m1")), 2);
  EXPECT_EQ(emax(element_format_by_name("int5")), 3);
}

TEST(ElementFormat, IntAndE1FloatGridsAreScaledCopies) {
  for (int n : {3, 4, 5}) {
    const auto i = enumerate_grid(ElementFormat::int_symmetric(n)).values;
    const auto f = enumerate_grid(ElementFormat::float_micro(1, n - 2)).values;
    ASSERT_EQ(i.size(), f.size());
    const double ratio = std::ldexp(1.0, n - 3);
    for (std::size_t k = 0; k < i.size(); ++k) EXPECT_EQ(i[k], f[k] * ratio);
  }
}

TEST(ElementFormat, RejectsInconsistentWidths) {
  EXPECT_EQ(code_of([] { ElementFormat::make(ElementKind::FloatMicro, 1, 1, 2); }), ErrorCode::InvalidFormat);
  EXPECT_EQ(code_of([] { ElementFormat::make(ElementKind::FloatMicro, 4, 4, 9); }), ErrorCode::InvalidFormat);
  EXPECT_EQ(code_of([] { ElementFormat::make(ElementKind::FloatMicro, 0, 3, 4); }), ErrorCode::InvalidFormat);
  EXPECT_EQ(code_of([] { ElementFormat::make(ElementKind::IntSymmetric, 1, 2, 4); }), ErrorCode::InvalidFormat);
  EXPECT_EQ(code_of([] { ScaleFormat(3); }), ErrorCode::InvalidFormat);
  EXPECT_EQ(code_of([] { ScaleFormat(9); }), ErrorCode::InvalidFormat);
  EXPECT_EQ(code_of([] { element_format_by_name("fp4_e2m1").decode(16); }), ErrorCode::MalformedCode);
}

TEST(ScaleFormat, RangeExcludesZeroCode) {
  const ScaleFormat e8(8);
  EXPECT_EQ(e8.bias(), 127);
  EXPECT_EQ(e8.min_exponent(), -126);
  EXPECT_EQ(e8.max_exponent(), 128);
  EXPECT_EQ(e8.code_for(0), 127u);
  const ScaleFormat e5(5);
  EXPECT_EQ(e5.min_exponent(), -14);
  EXPECT_EQ(e5.max_exponent(), 16);
}

TEST(EffectiveBits, ExactRationals) {
  EXPECT_EQ(effective_bits(parse_scheme("fp4_e2m1:32:e8m0")), Rational(17, 4));
  EXPECT_EQ(effective_bits(parse_scheme("fp3_e1m1:8:e5m0")), Rational(29, 8));
  EXPECT_EQ(effective_bits(parse_scheme("fp5_e2m2:16:e5m0")), Rational(85, 16));
  EXPECT_DOUBLE_EQ(effective_bits(parse_scheme("fp4_e2m1:8:e5m0")).to_double(), 4.625);
}

TEST(SchemeParsing, RoundTripsNames) {
  for (const auto& e : element_registry()) {
    for (auto s : kScaleNames) {
      const std::string name = std::string(e.name) + ":16:" + std::string(s);
      EXPECT_EQ(scheme_name(parse_scheme(name)), name);
    }
  }
}

TEST(SchemeParsing, UnknownNamesListRegistry) {
  try {
    parse_scheme("fp6_e3m2:32:e8m0");
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::UnknownScheme);
    EXPECT_NE(std::string(e.what()).find("fp4_e2m1"), std::string::npos);
  }
  EXPECT_EQ(code_of([] { parse_scheme("fp4_e2m1:0:e8m0"); }), ErrorCode::UnknownScheme);
  EXPECT_EQ(code_of([] { parse_scheme("fp4_e2m1:32"); }), ErrorCode::UnknownScheme);
  EXPECT_EQ(code_of([] { parse_scheme("fp4_e2m1:3x:e8m0"); }), ErrorCode::UnknownScheme);
  EXPECT_EQ(code_of([] { parse_scheme("fp4_e2m1:32:e9m0"); }), ErrorCode::UnknownScheme);
}

TEST(WireCodes, ElementAndScaleCodesRoundTrip) {
  for (std::uint8_t c = 0; c < element_registry().size(); ++c) {
    EXPECT_EQ(element_format_code(element_format_from_code(c)), c);
  }
  for (int k = 4; k <= 8; ++k) EXPECT_EQ(scale_format_from_code(scale_format_code(ScaleFormat(k))), ScaleFormat(k));
  EXPECT_THROW(element_format_from_code(200), Error);
  EXPECT_THROW(scale_format_from_code(5), Error);
}
