#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstddef>
#include <initializer_list>
#include <new>
#include <span>
#include <sstream>
#include <string>
#include <vector>

#include "siamdepth/error.hpp"

namespace siamdepth {

/// Cache-line aligned allocation. Vectorised kernels split their work by
/// pointer alignment, so a fixed alignment keeps results identical from one
/// process to the next.
template <typename T>
struct AlignedAllocator {
  using value_type = T;
  static constexpr std::align_val_t kAlign{64};

  AlignedAllocator() = default;
  template <typename U>
  AlignedAllocator(const AlignedAllocator<U>&) noexcept {}

  T* allocate(std::size_t n) { return static_cast<T*>(::operator new(n * sizeof(T), kAlign)); }
  void deallocate(T* p, std::size_t) noexcept { ::operator delete(p, kAlign); }

  template <typename U>
  bool operator==(const AlignedAllocator<U>&) const noexcept {
    return true;
  }
};

template <typename T>
using AlignedVector = std::vector<T, AlignedAllocator<T>>;

/// [batch, channel, height, width]
struct Shape {
  int n = 0;
  int c = 0;
  int h = 0;
  int w = 0;

  constexpr std::size_t numel() const {
    return static_cast<std::size_t>(n) * static_cast<std::size_t>(c) *
           static_cast<std::size_t>(h) * static_cast<std::size_t>(w);
  }
  constexpr std::size_t plane() const {
    return static_cast<std::size_t>(h) * static_cast<std::size_t>(w);
  }
  constexpr bool operator==(const Shape&) const = default;

  std::string str() const {
    std::ostringstream os;
    os << '[' << n << ',' << c << ',' << h << ',' << w << ']';
    return os.str();
  }
};

inline constexpr Shape kScalarShape{1, 1, 1, 1};

/// Dense row-major 4-D array. A plain value: it carries no link to any tape.
template <typename T>
class Tensor {
 public:
  using value_type = T;

  Tensor() = default;
  explicit Tensor(Shape shape, T fill = T(0)) : shape_(check(shape)), data_(shape.numel(), fill) {}
  Tensor(Shape shape, AlignedVector<T> values) : shape_(check(shape)), data_(std::move(values)) {
    check_size();
  }
  Tensor(Shape shape, const std::vector<T>& values) : shape_(check(shape)), data_(values.begin(), values.end()) {
    check_size();
  }
  Tensor(Shape shape, std::initializer_list<T> values) : shape_(check(shape)), data_(values) { check_size(); }

  static Tensor scalar(T v) { return Tensor(kScalarShape, v); }

  const Shape& shape() const { return shape_; }
  std::size_t size() const { return data_.size(); }
  bool empty() const { return data_.empty(); }

  std::span<T> data() { return data_; }
  std::span<const T> data() const { return data_; }
  AlignedVector<T>& storage() { return data_; }
  const AlignedVector<T>& storage() const { return data_; }

  T& operator[](std::size_t i) { return data_[i]; }
  const T& operator[](std::size_t i) const { return data_[i]; }

  std::size_t index(int n, int c, int y, int x) const {
    return ((static_cast<std::size_t>(n) * shape_.c + c) * shape_.h + y) * shape_.w + x;
  }
  T& operator()(int n, int c, int y, int x) { return data_[index(n, c, y, x)]; }
  const T& operator()(int n, int c, int y, int x) const { return data_[index(n, c, y, x)]; }

  /// Pointer to row y of plane (n, c).
  T* row(int n, int c, int y) { return data_.data() + index(n, c, y, 0); }
  const T* row(int n, int c, int y) const { return data_.data() + index(n, c, y, 0); }

  T item() const {
    if (data_.size() != 1) throw ShapeError("item() on non-scalar tensor " + shape_.str());
    return data_[0];
  }

  bool all_finite() const {
    return std::all_of(data_.begin(), data_.end(), [](T v) { return std::isfinite(v); });
  }

  void fill(T v) { std::fill(data_.begin(), data_.end(), v); }

  /// Elements [n0, n0 + count) along the batch axis.
  Tensor slice_batch(int n0, int count) const {
    if (n0 < 0 || count < 0 || n0 + count > shape_.n) throw ShapeError("batch slice out of range");
    Shape s = shape_;
    s.n = count;
    const std::size_t per = static_cast<std::size_t>(shape_.c) * shape_.plane();
    AlignedVector<T> v(data_.begin() + n0 * per, data_.begin() + (n0 + count) * per);
    return Tensor(s, std::move(v));
  }

  template <typename U>
  Tensor<U> cast() const {
    AlignedVector<U> v(data_.size());
    std::transform(data_.begin(), data_.end(), v.begin(), [](T x) { return static_cast<U>(x); });
    return Tensor<U>(shape_, std::move(v));
  }

  bool operator==(const Tensor&) const = default;

 private:
  void check_size() const {
    if (data_.size() != shape_.numel()) {
      throw ShapeError("tensor of shape " + shape_.str() + " needs " + std::to_string(shape_.numel()) +
                       " values, got " + std::to_string(data_.size()));
    }
  }

  static Shape check(Shape s) {
    if (s.n < 0 || s.c < 0 || s.h < 0 || s.w < 0) throw ShapeError("negative dimension in " + s.str());
    return s;
  }

  Shape shape_{};
  AlignedVector<T> data_;
};

/// Stacks tensors along the batch axis. All inputs must share C, H, W.
template <typename T>
Tensor<T> stack_batch(std::span<const Tensor<T>> parts) {
  if (parts.empty()) throw ShapeError("stack_batch of zero tensors");
  Shape s = parts.front().shape();
  s.n = 0;
  for (const auto& p : parts) {
    if (p.shape().c != s.c || p.shape().h != s.h || p.shape().w != s.w) {
      throw ShapeError("stack_batch: " + p.shape().str() + " does not match " + parts.front().shape().str());
    }
    s.n += p.shape().n;
  }
  AlignedVector<T> v;
  v.reserve(s.numel());
  for (const auto& p : parts) v.insert(v.end(), p.storage().begin(), p.storage().end());
  return Tensor<T>(s, std::move(v));
}

}  // namespace siamdepth
