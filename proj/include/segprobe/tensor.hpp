#pragma once

#include <cstddef>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace segprobe {

/// Dense row-major array. Scalar is float for training and storage; the
/// double instantiation exists for finite-difference verification.
template <typename T>
class BasicTensor {
 public:
  using value_type = T;

  BasicTensor() = default;

  explicit BasicTensor(std::vector<std::size_t> shape, T fill = T{0})
      : shape_(std::move(shape)), data_(product(shape_), fill) {}

  BasicTensor(std::vector<std::size_t> shape, std::vector<T> data)
      : shape_(std::move(shape)), data_(std::move(data)) {
    if (product(shape_) != data_.size()) {
      throw std::invalid_argument("tensor: shape product " + std::to_string(product(shape_)) +
                                  " != data length " + std::to_string(data_.size()));
    }
  }

  const std::vector<std::size_t>& shape() const noexcept { return shape_; }
  std::size_t rank() const noexcept { return shape_.size(); }
  std::size_t extent(std::size_t axis) const { return shape_.at(axis); }
  std::size_t size() const noexcept { return data_.size(); }
  bool empty() const noexcept { return data_.empty(); }

  std::span<T> data() noexcept { return data_; }
  std::span<const T> data() const noexcept { return data_; }
  const std::vector<T>& values() const noexcept { return data_; }

  T& operator[](std::size_t i) { return data_[i]; }
  const T& operator[](std::size_t i) const { return data_[i]; }

  T& operator()(std::size_t i, std::size_t j) { return data_[i * shape_[1] + j]; }
  const T& operator()(std::size_t i, std::size_t j) const { return data_[i * shape_[1] + j]; }

  T& operator()(std::size_t i, std::size_t j, std::size_t k) {
    return data_[(i * shape_[1] + j) * shape_[2] + k];
  }
  const T& operator()(std::size_t i, std::size_t j, std::size_t k) const {
    return data_[(i * shape_[1] + j) * shape_[2] + k];
  }

  /// Contiguous trailing-axis slice at (i, j) of a rank-3 tensor.
  std::span<T> row(std::size_t i, std::size_t j) {
    return std::span<T>(data_).subspan((i * shape_[1] + j) * shape_[2], shape_[2]);
  }
  std::span<const T> row(std::size_t i, std::size_t j) const {
    return std::span<const T>(data_).subspan((i * shape_[1] + j) * shape_[2], shape_[2]);
  }

  template <typename U>
  BasicTensor<U> cast() const {
    return BasicTensor<U>(shape_, std::vector<U>(data_.begin(), data_.end()));
  }

  bool all_finite() const;
  /// Throws std::domain_error naming `what` if any entry is NaN or infinite.
  void require_finite(std::string_view what) const;

  friend bool operator==(const BasicTensor&, const BasicTensor&) = default;

 private:
  static std::size_t product(const std::vector<std::size_t>& shape) {
    std::size_t n = 1;
    for (auto e : shape) n *= e;
    return n;
  }

  std::vector<std::size_t> shape_;
  std::vector<T> data_;
};

using Tensor = BasicTensor<float>;
using TensorD = BasicTensor<double>;

/// One output coordinate of an align-corners resample along one axis:
/// value = (1 - frac) * in[lo] + frac * in[hi].
struct AxisTap {
  std::size_t lo;
  std::size_t hi;
  double frac;
};

/// Align-corners sampling: output 0 maps to input 0 and output out-1 maps to
/// input in-1. A single output sample reads input 0. Every resample in the
/// project (forward, gradient, crops) goes through this table.
std::vector<AxisTap> align_corners_taps(std::size_t in, std::size_t out);

/// Bilinear align-corners resize of an H'×W'×C tensor to out_h×out_w×C.
template <typename T>
BasicTensor<T> bilinear_resize(const BasicTensor<T>& t, std::size_t out_h, std::size_t out_w);

/// Adjoint of bilinear_resize: maps an out_h×out_w×C gradient back onto the
/// in_h×in_w×C source grid.
template <typename T>
BasicTensor<T> bilinear_resize_transpose(const BasicTensor<T>& grad, std::size_t in_h,
                                         std::size_t in_w);

/// Numerically stable softmax (max-subtracted).
template <typename T>
std::vector<T> softmax(std::span<const T> v);

template <typename T>
void softmax_inplace(std::span<T> v);

/// Index of the first maximal entry.
template <typename T>
std::size_t argmax(std::span<const T> v);

}  // namespace segprobe
