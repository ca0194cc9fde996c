#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace edcnn {

/// Extent of a rank-4 (batch, channel, height, width) tensor.
struct Shape {
  int n = 0;
  int c = 0;
  int h = 0;
  int w = 0;

  std::size_t numel() const {
    return static_cast<std::size_t>(n) * static_cast<std::size_t>(c) *
           static_cast<std::size_t>(h) * static_cast<std::size_t>(w);
  }
  std::size_t plane() const { return static_cast<std::size_t>(h) * static_cast<std::size_t>(w); }
  std::size_t sample() const { return static_cast<std::size_t>(c) * plane(); }

  friend bool operator==(const Shape&, const Shape&) = default;
};

std::string to_string(const Shape& s);

/// Raised when tensor extents disagree. The message names the offending dimension.
class ShapeError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// Raised when a computation produces or receives NaN/Inf.
class NonFiniteError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Dense NCHW array. Storage is contiguous and row-major in (n, c, h, w).
template <typename T>
class BasicTensor {
 public:
  using value_type = T;

  BasicTensor() = default;
  explicit BasicTensor(Shape shape, T fill = T(0));
  BasicTensor(Shape shape, std::vector<T> data);

  const Shape& shape() const { return shape_; }
  int n() const { return shape_.n; }
  int c() const { return shape_.c; }
  int h() const { return shape_.h; }
  int w() const { return shape_.w; }
  std::size_t size() const { return data_.size(); }
  bool empty() const { return data_.empty(); }

  std::span<T> data() { return data_; }
  std::span<const T> data() const { return data_; }
  T* ptr() { return data_.data(); }
  const T* ptr() const { return data_.data(); }

  T* plane(int n, int c) { return data_.data() + offset(n, c, 0, 0); }
  const T* plane(int n, int c) const { return data_.data() + offset(n, c, 0, 0); }
  T* sample(int n) { return plane(n, 0); }
  const T* sample(int n) const { return plane(n, 0); }

  T& operator()(int n, int c, int y, int x) { return data_[offset(n, c, y, x)]; }
  T operator()(int n, int c, int y, int x) const { return data_[offset(n, c, y, x)]; }

  void fill(T value);

  template <typename U>
  BasicTensor<U> cast() const {
    std::vector<U> out(data_.begin(), data_.end());
    return BasicTensor<U>(shape_, std::move(out));
  }

  /// Copies samples [first, first + count) into a new tensor.
  BasicTensor slice_batch(int first, int count) const;

  bool all_finite() const;

 private:
  std::size_t offset(int n, int c, int y, int x) const {
    return ((static_cast<std::size_t>(n) * shape_.c + c) * shape_.h + y) * shape_.w + x;
  }

  Shape shape_{};
  std::vector<T> data_;
};

using Tensor = BasicTensor<float>;
using TensorD = BasicTensor<double>;

/// Bitwise comparison of shape and element bytes (distinguishes +0/-0, NaN payloads).
template <typename T>
bool bit_equal(const BasicTensor<T>& a, const BasicTensor<T>& b);

void require_same_shape(const Shape& a, const Shape& b, const char* what);

}  // namespace edcnn
