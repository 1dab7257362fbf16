#pragma once

#include <algorithm>
#include <cstddef>
#include <functional>
#include <initializer_list>
#include <numeric>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "u3d/errors.hpp"

namespace u3d {

using Shape = std::vector<std::size_t>;

inline std::string shape_string(std::span<const std::size_t> shape) {
  std::string s = "[";
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) s += ",";
    s += std::to_string(shape[i]);
  }
  return s + "]";
}

inline std::size_t shape_product(std::span<const std::size_t> shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

/// Dense row-major array (last axis fastest). Every extent is at least one.
template <typename T>
class Tensor {
 public:
  using value_type = T;

  Tensor() = default;

  explicit Tensor(Shape shape, T fill = T{}) : shape_(std::move(shape)) {
    validate_shape();
    data_.assign(shape_product(shape_), fill);
  }

  Tensor(Shape shape, std::vector<T> data) : shape_(std::move(shape)), data_(std::move(data)) {
    validate_shape();
    if (data_.size() != shape_product(shape_)) {
      throw ShapeError("tensor data length " + std::to_string(data_.size()) +
                       " does not match shape " + shape_string(shape_));
    }
  }

  const Shape& shape() const noexcept { return shape_; }
  std::size_t rank() const noexcept { return shape_.size(); }
  std::size_t extent(std::size_t axis) const { return shape_.at(axis); }
  std::size_t size() const noexcept { return data_.size(); }
  bool empty() const noexcept { return data_.empty(); }

  std::span<T> data() noexcept { return data_; }
  std::span<const T> data() const noexcept { return data_; }
  const std::vector<T>& storage() const noexcept { return data_; }

  T& operator[](std::size_t offset) noexcept { return data_[offset]; }
  const T& operator[](std::size_t offset) const noexcept { return data_[offset]; }

  Shape strides() const {
    Shape s(shape_.size(), 1);
    for (std::size_t i = shape_.size(); i-- > 1;) s[i - 1] = s[i] * shape_[i];
    return s;
  }

  std::size_t offset(std::span<const std::size_t> index) const {
    if (index.size() != shape_.size()) {
      throw IndexError("index rank " + std::to_string(index.size()) + " != tensor rank " +
                       std::to_string(shape_.size()));
    }
    std::size_t off = 0;
    for (std::size_t i = 0; i < index.size(); ++i) {
      if (index[i] >= shape_[i]) {
        throw IndexError("index " + std::to_string(index[i]) + " out of range on axis " +
                         std::to_string(i) + " of shape " + shape_string(shape_));
      }
      off = off * shape_[i] + index[i];
    }
    return off;
  }

  Shape unravel(std::size_t offset) const {
    if (offset >= data_.size()) throw IndexError("offset out of range");
    Shape index(shape_.size());
    for (std::size_t i = shape_.size(); i-- > 0;) {
      index[i] = offset % shape_[i];
      offset /= shape_[i];
    }
    return index;
  }

  T& at(std::initializer_list<std::size_t> index) { return data_[offset(index)]; }
  const T& at(std::initializer_list<std::size_t> index) const { return data_[offset(index)]; }

  void fill(T value) { std::fill(data_.begin(), data_.end(), value); }

  /// Same data viewed under a new shape of equal element count.
  Tensor reshaped(Shape shape) const& { return Tensor(std::move(shape), data_); }
  Tensor reshaped(Shape shape) && { return Tensor(std::move(shape), std::move(data_)); }

  template <typename U>
  Tensor<U> cast() const {
    return Tensor<U>(shape_, std::vector<U>(data_.begin(), data_.end()));
  }

  friend bool operator==(const Tensor&, const Tensor&) = default;

 private:
  void validate_shape() const {
    if (shape_.empty()) throw ShapeError("tensor shape must have at least one axis");
    for (auto e : shape_) {
      if (e == 0) throw ShapeError("tensor extents must be positive, got " + shape_string(shape_));
    }
  }

  Shape shape_;
  std::vector<T> data_;
};

using TensorF = Tensor<float>;
using TensorD = Tensor<double>;

enum class VoxelUnits { HounsfieldUnits, Normalized, Arbitrary };

inline const char* to_string(VoxelUnits u) {
  switch (u) {
    case VoxelUnits::HounsfieldUnits: return "hu";
    case VoxelUnits::Normalized: return "normalized";
    case VoxelUnits::Arbitrary: return "arbitrary";
  }
  return "?";
}

/// A [W, H, D] scalar grid. With row-major storage the depth axis is the
/// fastest-varying one, so every (x, y) depth line is contiguous.
struct Volume {
  TensorF tensor;
  VoxelUnits units = VoxelUnits::HounsfieldUnits;
  std::string source_id;

  Volume() = default;
  Volume(TensorF t, VoxelUnits u, std::string id = {})
      : tensor(std::move(t)), units(u), source_id(std::move(id)) {
    if (tensor.rank() != 3) {
      throw ShapeError("volume tensor must be rank 3, got " + shape_string(tensor.shape()));
    }
  }

  std::size_t width() const { return tensor.extent(0); }
  std::size_t height() const { return tensor.extent(1); }
  std::size_t depth() const { return tensor.extent(2); }

  float& operator()(std::size_t x, std::size_t y, std::size_t z) {
    return tensor[(x * height() + y) * depth() + z];
  }
  float operator()(std::size_t x, std::size_t y, std::size_t z) const {
    return tensor[(x * height() + y) * depth() + z];
  }
};

/// Copy of depth plane z as a [W, H] tensor.
inline TensorF tensor_slice_z(const Volume& v, std::size_t z) {
  const std::size_t w = v.width(), h = v.height(), d = v.depth();
  if (z >= d) {
    throw IndexError("slice " + std::to_string(z) + " out of range for depth " + std::to_string(d));
  }
  TensorF plane({w, h});
  const auto src = v.tensor.data();
  auto dst = plane.data();
  for (std::size_t i = 0; i < w * h; ++i) dst[i] = src[i * d + z];
  return plane;
}

/// Depthwise stack of [W, H] planes into a volume; plane k becomes depth k.
inline Volume stack_z(std::span<const TensorF> planes, VoxelUnits units = VoxelUnits::HounsfieldUnits,
                      std::string source_id = {}) {
  if (planes.empty()) throw EmptyInputError("stack_z needs at least one plane");
  const Shape& ref = planes.front().shape();
  if (ref.size() != 2) throw ShapeError("planes must be rank 2, got " + shape_string(ref));
  for (const auto& p : planes) {
    if (p.shape() != ref) {
      throw ShapeError("plane shape " + shape_string(p.shape()) + " != " + shape_string(ref));
    }
  }
  const std::size_t wh = ref[0] * ref[1], d = planes.size();
  TensorF t({ref[0], ref[1], d});
  auto dst = t.data();
  for (std::size_t k = 0; k < d; ++k) {
    const auto src = planes[k].data();
    for (std::size_t i = 0; i < wh; ++i) dst[i * d + k] = src[i];
  }
  return Volume(std::move(t), units, std::move(source_id));
}

/// Gathers the given depth indices (repeats allowed) into a new volume.
inline Volume gather_z(const Volume& v, std::span<const std::size_t> indices) {
  if (indices.empty()) throw EmptyInputError("gather_z needs at least one index");
  const std::size_t d = v.depth(), n = indices.size(), lines = v.width() * v.height();
  for (auto z : indices) {
    if (z >= d) throw IndexError("slice " + std::to_string(z) + " out of range for depth " + std::to_string(d));
  }
  TensorF t({v.width(), v.height(), n});
  const auto src = v.tensor.data();
  auto dst = t.data();
  for (std::size_t l = 0; l < lines; ++l) {
    for (std::size_t k = 0; k < n; ++k) dst[l * n + k] = src[l * d + indices[k]];
  }
  return Volume(std::move(t), v.units, v.source_id);
}

}  // namespace u3d
