#include "edcnn/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>

namespace edcnn {

std::string to_string(const Shape& s) {
  return "(" + std::to_string(s.n) + "," + std::to_string(s.c) + "," + std::to_string(s.h) + "," +
         std::to_string(s.w) + ")";
}

namespace {

void validate_shape(const Shape& s) {
  if (s.n < 0) throw ShapeError("negative batch dimension n=" + std::to_string(s.n));
  if (s.c < 0) throw ShapeError("negative channel dimension c=" + std::to_string(s.c));
  if (s.h < 0) throw ShapeError("negative height h=" + std::to_string(s.h));
  if (s.w < 0) throw ShapeError("negative width w=" + std::to_string(s.w));
}

}  // namespace

template <typename T>
BasicTensor<T>::BasicTensor(Shape shape, T fill) : shape_(shape) {
  validate_shape(shape_);
  data_.assign(shape_.numel(), fill);
}

template <typename T>
BasicTensor<T>::BasicTensor(Shape shape, std::vector<T> data) : shape_(shape), data_(std::move(data)) {
  validate_shape(shape_);
  if (data_.size() != shape_.numel()) {
    throw ShapeError("data length " + std::to_string(data_.size()) + " does not match shape " +
                     to_string(shape_));
  }
}

template <typename T>
void BasicTensor<T>::fill(T value) {
  std::fill(data_.begin(), data_.end(), value);
}

template <typename T>
BasicTensor<T> BasicTensor<T>::slice_batch(int first, int count) const {
  if (first < 0 || count < 0 || first + count > shape_.n) {
    throw ShapeError("batch slice [" + std::to_string(first) + ", " + std::to_string(first + count) +
                     ") outside n=" + std::to_string(shape_.n));
  }
  BasicTensor out(Shape{count, shape_.c, shape_.h, shape_.w});
  if (count > 0) {
    std::copy_n(data_.begin() + static_cast<std::ptrdiff_t>(first * shape_.sample()),
                static_cast<std::ptrdiff_t>(count * shape_.sample()), out.data_.begin());
  }
  return out;
}

template <typename T>
bool BasicTensor<T>::all_finite() const {
  return std::all_of(data_.begin(), data_.end(), [](T v) { return std::isfinite(v); });
}

template <typename T>
bool bit_equal(const BasicTensor<T>& a, const BasicTensor<T>& b) {
  if (!(a.shape() == b.shape())) return false;
  return a.size() == 0 || std::memcmp(a.ptr(), b.ptr(), a.size() * sizeof(T)) == 0;
}

void require_same_shape(const Shape& a, const Shape& b, const char* what) {
  if (a.n != b.n) throw ShapeError(std::string(what) + ": batch mismatch n " + std::to_string(a.n) + " vs " + std::to_string(b.n));
  if (a.c != b.c) throw ShapeError(std::string(what) + ": channel mismatch c " + std::to_string(a.c) + " vs " + std::to_string(b.c));
  if (a.h != b.h) throw ShapeError(std::string(what) + ": height mismatch h " + std::to_string(a.h) + " vs " + std::to_string(b.h));
  if (a.w != b.w) throw ShapeError(std::string(what) + ": width mismatch w " + std::to_string(a.w) + " vs " + std::to_string(b.w));
}

template class BasicTensor<float>;
template class BasicTensor<double>;
template bool bit_equal(const BasicTensor<float>&, const BasicTensor<float>&);
template bool bit_equal(const BasicTensor<double>&, const BasicTensor<double>&);

}  // namespace edcnn
