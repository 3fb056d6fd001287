#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <numeric>
#include <span>
#include <string>
#include <type_traits>
#include <utility>
#include <vector>

#include "iast/error.hpp"

namespace iast {

enum class DType : std::uint8_t { Float32 = 1, Int32 = 2, UInt8 = 3 };

template <typename T>
struct dtype_of;
template <>
struct dtype_of<float> {
  static constexpr DType value = DType::Float32;
};
template <>
struct dtype_of<std::int32_t> {
  static constexpr DType value = DType::Int32;
};
template <>
struct dtype_of<std::uint8_t> {
  static constexpr DType value = DType::UInt8;
};

inline std::size_t dtype_size(DType d) {
  switch (d) {
    case DType::Float32:
    case DType::Int32:
      return 4;
    case DType::UInt8:
      return 1;
  }
  throw UnknownDtype("unknown dtype code " + std::to_string(static_cast<int>(d)));
}

using Shape = std::vector<std::size_t>;

inline std::size_t shape_numel(const Shape& s) {
  return std::accumulate(s.begin(), s.end(), std::size_t{1}, std::multiplies<>{});
}

inline std::string shape_str(const Shape& s) {
  std::string out = "[";
  for (std::size_t i = 0; i < s.size(); ++i) {
    if (i) out += ",";
    out += std::to_string(s[i]);
  }
  return out + "]";
}

/// Dense row-major array. The element type doubles as the on-disk dtype for
/// float/int32/uint8; `double` instantiations exist for numerical checks and
/// are never serialised.
template <typename T>
class Array {
 public:
  using value_type = T;

  Array() = default;
  explicit Array(Shape shape, T fill = T{})
      : shape_(std::move(shape)), data_(shape_numel(shape_), fill) {}
  Array(Shape shape, std::vector<T> data) : shape_(std::move(shape)), data_(std::move(data)) {
    if (shape_numel(shape_) != data_.size())
      throw ShapeError("array payload of " + std::to_string(data_.size()) +
                       " values does not match shape " + shape_str(shape_));
  }

  const Shape& shape() const { return shape_; }
  std::size_t ndim() const { return shape_.size(); }
  std::size_t dim(std::size_t i) const { return shape_.at(i); }
  std::size_t size() const { return data_.size(); }
  bool empty() const { return data_.empty(); }

  std::span<T> values() { return data_; }
  std::span<const T> values() const { return data_; }
  T* data() { return data_.data(); }
  const T* data() const { return data_.data(); }

  T& operator[](std::size_t i) { return data_[i]; }
  const T& operator[](std::size_t i) const { return data_[i]; }

  // [C,H,W] / [H,W] accessors.
  T& at(std::size_t c, std::size_t h, std::size_t w) {
    return data_[(c * shape_[1] + h) * shape_[2] + w];
  }
  const T& at(std::size_t c, std::size_t h, std::size_t w) const {
    return data_[(c * shape_[1] + h) * shape_[2] + w];
  }
  T& at(std::size_t h, std::size_t w) { return data_[h * shape_[1] + w]; }
  const T& at(std::size_t h, std::size_t w) const { return data_[h * shape_[1] + w]; }

  /// Contiguous plane `c` of a [C,...] array.
  std::span<const T> plane(std::size_t c) const {
    const std::size_t n = data_.size() / shape_[0];
    return std::span<const T>(data_).subspan(c * n, n);
  }
  std::span<T> plane(std::size_t c) {
    const std::size_t n = data_.size() / shape_[0];
    return std::span<T>(data_).subspan(c * n, n);
  }

  template <typename U>
  Array<U> cast() const {
    std::vector<U> out(data_.begin(), data_.end());
    return Array<U>(shape_, std::move(out));
  }

  friend bool operator==(const Array&, const Array&) = default;

 private:
  Shape shape_;
  std::vector<T> data_;
};

inline constexpr std::int32_t kVoid = 255;

/// Per-pixel class probabilities, shape [C,H,W].
template <typename Scalar = float>
using ProbMap = Array<Scalar>;

/// Per-pixel labels, shape [H,W], values in {0..C-1} or kVoid.
using LabelMask = Array<std::int32_t>;

/// Input image, shape [F,H,W].
template <typename Scalar = float>
using Image = Array<Scalar>;

inline void check_label_mask(const LabelMask& m, std::size_t num_classes) {
  if (m.ndim() != 2) throw ShapeError("label mask must be [H,W], got " + shape_str(m.shape()));
  for (auto v : m.values())
    if (v != kVoid && (v < 0 || static_cast<std::size_t>(v) >= num_classes))
      throw ShapeError("label value " + std::to_string(v) + " outside {0.." +
                       std::to_string(num_classes - 1) + "} and not VOID");
}

}  // namespace iast
