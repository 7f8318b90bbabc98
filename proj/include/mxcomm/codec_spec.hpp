#pragma once

// One value type naming any codec the harnesses can run: no compression, a
// microscaling scheme, or one of the two baselines.

#include <cstdint>
#include <limits>
#include <string>
#include <string_view>
#include <variant>
#include <vector>

#include "mxcomm/baselines.hpp"
#include "mxcomm/codec.hpp"
#include "mxcomm/formats.hpp"
#include "mxcomm/tensor.hpp"
#include "mxcomm/wire.hpp"

namespace mxcomm {

/// Values pass unchanged; wire size is accounted at 16 bits per value.
struct Passthrough {
  friend bool operator==(const Passthrough&, const Passthrough&) = default;
};
struct ChannelIntCodec {
  int bits = 4;
  friend bool operator==(const ChannelIntCodec&, const ChannelIntCodec&) = default;
};
struct TopKCodec {
  double compression_factor = 3.0;
  friend bool operator==(const TopKCodec&, const TopKCodec&) = default;
};

using CodecSpec = std::variant<Passthrough, SchemeDescriptor, ChannelIntCodec, TopKCodec>;

inline std::string codec_name(const CodecSpec& spec) {
  struct Namer {
    std::string operator()(const Passthrough&) const { return "none"; }
    std::string operator()(const SchemeDescriptor& s) const { return scheme_name(s); }
    std::string operator()(const ChannelIntCodec& c) const { return "channel_int:" + std::to_string(c.bits); }
    std::string operator()(const TopKCodec& t) const {
      std::string f = std::to_string(t.compression_factor);
      f.erase(f.find_last_not_of('0') + 1);
      if (!f.empty() && f.back() == '.') f.pop_back();
      return "topk:" + f;
    }
  };
  return std::visit(Namer{}, spec);
}

/// "none", "element:block:scale", "channel_int:<bits>", or "topk:<factor>".
inline CodecSpec parse_codec(std::string_view text) {
  if (text == "none" || text == "passthrough") return Passthrough{};
  const auto suffix = [&](std::string_view prefix) { return std::string(text.substr(prefix.size())); };
  try {
    if (text.starts_with("channel_int:")) {
      std::size_t used = 0;
      const std::string arg = suffix("channel_int:");
      const int bits = std::stoi(arg, &used);
      if (used != arg.size()) throw std::invalid_argument(arg);
      return ChannelIntCodec{bits};
    }
    if (text.starts_with("topk:")) {
      std::size_t used = 0;
      const std::string arg = suffix("topk:");
      const double factor = std::stod(arg, &used);
      if (used != arg.size()) throw std::invalid_argument(arg);
      return TopKCodec{factor};
    }
  } catch (const std::logic_error&) {
    fail(ErrorCode::UnknownScheme, "cannot parse codec '" + std::string(text) + "'");
  }
  return parse_scheme(text);
}

struct Roundtrip {
  Tensor decoded;
  std::uint64_t wire_bytes = 0;
  std::vector<double> bounds;  // per-value absolute error bound (inf: none)
};

/// Encodes, serializes and decodes `tensor`, reporting the serialized size and
/// the codec's per-value error bound.
inline Roundtrip roundtrip(const CodecSpec& spec, const Tensor& tensor) {
  struct Runner {
    const Tensor& t;
    Roundtrip operator()(const Passthrough&) const {
      return {t, 2 * static_cast<std::uint64_t>(t.size()), std::vector<double>(t.size(), 0.0)};
    }
    Roundtrip operator()(const SchemeDescriptor& s) const {
      const auto bytes = serialize(compress_tensor(t, s));
      return {decompress_tensor(deserialize(bytes)), bytes.size(), error_bounds(std::span<const float>(t.data), s)};
    }
    Roundtrip operator()(const ChannelIntCodec& c) const {
      const auto bytes = serialize(channelwise_int_compress(t, c.bits));
      const auto packet = deserialize_channel_int(bytes);
      std::vector<double> bounds(t.size());
      const std::uint64_t channels = packet.channels();
      for (std::size_t i = 0; i < t.size(); ++i) bounds[i] = static_cast<double>(packet.scale(i % channels)) / 2.0;
      return {channelwise_int_decompress(packet), bytes.size(), std::move(bounds)};
    }
    Roundtrip operator()(const TopKCodec& k) const {
      const auto bytes = serialize(topk_compress(t, k.compression_factor));
      return {topk_decompress(deserialize_topk(bytes)), bytes.size(),
              std::vector<double>(t.size(), std::numeric_limits<double>::infinity())};
    }
  };
  return std::visit(Runner{tensor}, spec);
}

}  // namespace mxcomm
