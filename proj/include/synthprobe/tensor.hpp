#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <initializer_list>
#include <new>
#include <numeric>
#include <span>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "synthprobe/errors.hpp"

namespace synthprobe {

using Shape = std::vector<std::size_t>;

inline std::string shape_str(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << 'x';
    os << shape[i];
  }
  os << ']';
  return os.str();
}

inline std::size_t shape_numel(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>{});
}

/// Cache-line aligned storage. Vectorized reductions split head/body by address,
/// so a fixed alignment keeps float results independent of heap layout.
template <typename T, std::size_t Align = 64>
struct AlignedAllocator {
  using value_type = T;
  template <typename U>
  struct rebind {
    using other = AlignedAllocator<U, Align>;
  };

  AlignedAllocator() = default;
  template <typename U>
  AlignedAllocator(const AlignedAllocator<U, Align>&) noexcept {}

  T* allocate(std::size_t n) { return static_cast<T*>(::operator new(n * sizeof(T), std::align_val_t{Align})); }
  void deallocate(T* p, std::size_t) noexcept { ::operator delete(p, std::align_val_t{Align}); }

  friend bool operator==(const AlignedAllocator&, const AlignedAllocator&) { return true; }
};

/// Dense row-major array. Value type: copies are deep.
template <typename T>
class BasicTensor {
 public:
  using value_type = T;
  using Storage = std::vector<T, AlignedAllocator<T>>;

  BasicTensor() = default;

  explicit BasicTensor(Shape shape, T fill = T{0})
      : shape_(std::move(shape)), data_(shape_numel(shape_), fill) {}

  BasicTensor(Shape shape, const std::vector<T>& data) : BasicTensor(std::move(shape), Storage(data.begin(), data.end())) {}

  BasicTensor(Shape shape, std::initializer_list<T> data) : BasicTensor(std::move(shape), Storage(data)) {}

  BasicTensor(Shape shape, Storage data) : shape_(std::move(shape)), data_(std::move(data)) {
    if (shape_numel(shape_) != data_.size()) {
      throw DimensionError("tensor shape " + shape_str(shape_) + " does not match " +
                           std::to_string(data_.size()) + " values");
    }
  }

  /// Builds a rank-2 tensor from nested rows.
  static BasicTensor matrix(std::initializer_list<std::initializer_list<T>> rows) {
    const std::size_t r = rows.size();
    const std::size_t c = r ? rows.begin()->size() : 0;
    std::vector<T> data;
    data.reserve(r * c);
    for (const auto& row : rows) {
      if (row.size() != c) throw DimensionError("ragged matrix literal");
      data.insert(data.end(), row.begin(), row.end());
    }
    return BasicTensor({r, c}, std::move(data));
  }

  static BasicTensor vector(std::initializer_list<T> values) {
    return BasicTensor({values.size()}, std::vector<T>(values));
  }

  /// Same shape and values, converted to another scalar type.
  template <typename U>
  BasicTensor<U> cast() const {
    typename BasicTensor<U>::Storage out(data_.begin(), data_.end());
    return BasicTensor<U>(shape_, std::move(out));
  }

  [[nodiscard]] const Shape& shape() const noexcept { return shape_; }
  [[nodiscard]] std::size_t rank() const noexcept { return shape_.size(); }
  [[nodiscard]] std::size_t size() const noexcept { return data_.size(); }
  [[nodiscard]] bool empty() const noexcept { return data_.empty(); }
  [[nodiscard]] std::size_t dim(std::size_t axis) const { return shape_.at(axis); }
  [[nodiscard]] std::size_t rows() const { return shape_.at(0); }
  [[nodiscard]] std::size_t cols() const { return rank() == 1 ? 1 : shape_.at(1); }

  [[nodiscard]] std::span<T> data() noexcept { return data_; }
  [[nodiscard]] std::span<const T> data() const noexcept { return data_; }
  [[nodiscard]] T* raw() noexcept { return data_.data(); }
  [[nodiscard]] const T* raw() const noexcept { return data_.data(); }

  T& operator[](std::size_t i) { return data_[i]; }
  const T& operator[](std::size_t i) const { return data_[i]; }
  T& operator()(std::size_t r, std::size_t c) { return data_[r * shape_[1] + c]; }
  const T& operator()(std::size_t r, std::size_t c) const { return data_[r * shape_[1] + c]; }

  void fill(T value) { std::fill(data_.begin(), data_.end(), value); }

  /// Reinterprets the payload under a new shape with the same element count.
  [[nodiscard]] BasicTensor reshaped(Shape shape) const {
    return BasicTensor(std::move(shape), data_);
  }

  [[nodiscard]] bool all_finite() const {
    return std::all_of(data_.begin(), data_.end(), [](T v) { return std::isfinite(v); });
  }

  [[nodiscard]] T max_abs() const {
    T m{0};
    for (T v : data_) m = std::max(m, std::abs(v));
    return m;
  }

  friend bool operator==(const BasicTensor& a, const BasicTensor& b) {
    return a.shape_ == b.shape_ && a.data_ == b.data_;
  }

 private:
  Shape shape_;
  Storage data_;
};

using Tensor = BasicTensor<float>;

/// Largest elementwise |a - b|; shapes must agree.
template <typename T>
T max_abs_diff(const BasicTensor<T>& a, const BasicTensor<T>& b) {
  if (a.shape() != b.shape()) {
    throw DimensionError("max_abs_diff: " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
  }
  T m{0};
  for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
  return m;
}

}  // namespace synthprobe
