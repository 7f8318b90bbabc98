#pragma once

#include <cmath>
#include <cstdint>
#include <limits>
#include <span>
#include <string>
#include <vector>

#include "mxcomm/error.hpp"

namespace mxcomm {

using Shape = std::vector<std::uint64_t>;

inline std::uint64_t element_count(const Shape& shape) {
  std::uint64_t n = 1;
  for (auto d : shape) {
    if (d != 0 && n > std::numeric_limits<std::uint64_t>::max() / d) {
      fail(ErrorCode::MalformedHeader, "shape element count overflows 64 bits");
    }
    n *= d;
  }
  return n;
}

inline std::string shape_string(const Shape& shape) {
  std::string out = "[";
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) out += ",";
    out += std::to_string(shape[i]);
  }
  return out + "]";
}

/// Dense row-major float32 tensor.
struct Tensor {
  Shape shape;
  std::vector<float> data;

  Tensor() = default;
  explicit Tensor(Shape s) : shape(std::move(s)), data(static_cast<std::size_t>(element_count(shape)), 0.0f) {}
  Tensor(Shape s, std::vector<float> values) : shape(std::move(s)), data(std::move(values)) {
    if (element_count(shape) != data.size()) {
      fail(ErrorCode::ShapeMismatch, "shape " + shape_string(shape) + " does not hold " + std::to_string(data.size()) +
                                         " values");
    }
  }

  std::size_t size() const noexcept { return data.size(); }
  /// Extent of the trailing (channel) dimension; 1 for scalars.
  std::uint64_t channels() const noexcept { return shape.empty() ? 1 : shape.back(); }

  friend bool operator==(const Tensor&, const Tensor&) = default;
};

/// Throws NonFiniteInput naming the first offending position.
template <typename T>
void require_finite(std::span<const T> values, const std::string& what) {
  for (std::size_t i = 0; i < values.size(); ++i) {
    if (!std::isfinite(values[i])) fail(ErrorCode::NonFiniteInput, what + ": value " + std::to_string(i) + " is not finite");
  }
}

}  // namespace mxcomm
