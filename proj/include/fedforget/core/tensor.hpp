#pragma once

#include <algorithm>
#include <cstddef>
#include <functional>
#include <numeric>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "fedforget/core/error.hpp"

namespace ff {

using Shape = std::vector<std::size_t>;

inline std::size_t numel(const Shape& s) {
  return std::accumulate(s.begin(), s.end(), std::size_t{1},
                         std::multiplies<>());
}

inline std::string shape_str(const Shape& s) {
  std::string out = "(";
  for (std::size_t i = 0; i < s.size(); ++i) {
    if (i) out += ",";
    out += std::to_string(s[i]);
  }
  return out + ")";
}

// Aligned storage keeps vectorized reductions independent of where the heap
// happened to place a buffer, so repeated runs agree bit for bit.
template <typename T>
using Buffer = std::vector<T, Eigen::aligned_allocator<T>>;

// Dense row-major array. Deliberately thin: storage plus shape.
template <typename T>
struct Tensor {
  Shape shape;
  Buffer<T> data;

  Tensor() = default;
  explicit Tensor(Shape s, T fill = T(0))
      : shape(std::move(s)), data(ff::numel(shape), fill) {}
  Tensor(Shape s, Buffer<T> d) : shape(std::move(s)), data(std::move(d)) {
    FF_EXPECT(data.size() == ff::numel(shape), ContractError,
              "tensor data does not match shape " + shape_str(shape));
  }
  Tensor(Shape s, const std::vector<T>& d) : shape(std::move(s)), data(d.begin(), d.end()) {
    FF_EXPECT(data.size() == ff::numel(shape), ContractError,
              "tensor data does not match shape " + shape_str(shape));
  }

  std::size_t numel() const { return data.size(); }
  std::size_t rank() const { return shape.size(); }
  std::size_t dim(std::size_t i) const { return shape.at(i); }
  // Elements per leading index (per sample for batched tensors).
  std::size_t stride0() const { return shape.empty() ? 0 : numel() / shape[0]; }

  T* ptr() { return data.data(); }
  const T* ptr() const { return data.data(); }
  std::span<T> row(std::size_t i) { return {data.data() + i * stride0(), stride0()}; }
  std::span<const T> row(std::size_t i) const {
    return {data.data() + i * stride0(), stride0()};
  }

  void fill(T v) { std::fill(data.begin(), data.end(), v); }
  Tensor reshaped(Shape s) const {
    FF_EXPECT(ff::numel(s) == numel(), ContractError,
              "reshape " + shape_str(shape) + " -> " + shape_str(s));
    return Tensor(std::move(s), data);
  }

  template <typename U>
  Tensor<U> cast() const {
    Tensor<U> out;
    out.shape = shape;
    out.data.assign(data.begin(), data.end());
    return out;
  }

  bool operator==(const Tensor&) const = default;
};

}  // namespace ff
