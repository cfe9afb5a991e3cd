#pragma once

// Rank <= 4 dense tensor with an optional gradient slot.
//
// Layout: row-major over the stored shape. Images and feature maps are stored
// channel-major as [C, H, W], so the feature element F(w, h, c) lives at index (c * H + h) * W + w. Use `at(c, h, w)` for that
// access pattern; it is the only 3-d accessor in the library.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <initializer_list>
#include <numeric>
#include <span>
#include <sstream>
#include <string>
#include <vector>

#include "amen/error.hpp"

namespace amen {

using Shape = std::vector<std::size_t>;

inline std::string shape_str(const Shape& s) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < s.size(); ++i) {
    if (i) os << 'x';
    os << s[i];
  }
  os << ']';
  return os.str();
}

inline std::size_t shape_numel(const Shape& s) {
  return std::accumulate(s.begin(), s.end(), std::size_t{1}, std::multiplies<>{});
}

template <class T>
class Tensor {
 public:
  using value_type = T;

  Tensor() = default;

  explicit Tensor(Shape shape, T fill = T{0}) : shape_(std::move(shape)) {
    check_rank();
    values_.assign(shape_numel(shape_), fill);
  }

  Tensor(Shape shape, std::vector<T> values) : shape_(std::move(shape)), values_(std::move(values)) {
    check_rank();
    if (values_.size() != shape_numel(shape_)) {
      throw ShapeError("tensor of shape " + shape_str(shape_) + " given " +
                       std::to_string(values_.size()) + " values");
    }
  }

  static Tensor vector(std::initializer_list<T> v) {
    return Tensor({v.size()}, std::vector<T>(v));
  }

  const Shape& shape() const noexcept { return shape_; }
  std::size_t rank() const noexcept { return shape_.size(); }
  std::size_t dim(std::size_t i) const { return shape_.at(i); }
  std::size_t size() const noexcept { return values_.size(); }
  bool empty() const noexcept { return values_.empty(); }

  std::span<T> values() noexcept { return values_; }
  std::span<const T> values() const noexcept { return values_; }
  T* data() noexcept { return values_.data(); }
  const T* data() const noexcept { return values_.data(); }

  T& operator[](std::size_t i) { return values_[i]; }
  const T& operator[](std::size_t i) const { return values_[i]; }

  // [C, H, W] access.
  T& at(std::size_t c, std::size_t h, std::size_t w) {
    return values_[(c * shape_[1] + h) * shape_[2] + w];
  }
  const T& at(std::size_t c, std::size_t h, std::size_t w) const {
    return values_[(c * shape_[1] + h) * shape_[2] + w];
  }

  // Gradient slot. Absent until first requested.
  bool has_grad() const noexcept { return !values_.empty() && grad_.size() == values_.size(); }
  std::span<T> grad() {
    ensure_grad();
    return grad_;
  }
  std::span<const T> grad() const noexcept { return grad_; }
  void ensure_grad() {
    if (grad_.size() != values_.size()) grad_.assign(values_.size(), T{0});
  }
  void zero_grad() { grad_.assign(values_.size(), T{0}); }
  void drop_grad() { grad_.clear(); }

  void fill(T v) { std::fill(values_.begin(), values_.end(), v); }

  Tensor reshaped(Shape s) const {
    if (shape_numel(s) != values_.size()) {
      throw ShapeError("cannot reshape " + shape_str(shape_) + " to " + shape_str(s));
    }
    return Tensor(std::move(s), values_);
  }

  bool all_finite() const {
    return std::all_of(values_.begin(), values_.end(), [](T v) { return std::isfinite(v); }) &&
           std::all_of(grad_.begin(), grad_.end(), [](T v) { return std::isfinite(v); });
  }

  template <class U>
  Tensor<U> cast() const {
    return Tensor<U>(shape_, std::vector<U>(values_.begin(), values_.end()));
  }

  // Values only; the gradient slot does not take part in equality.
  friend bool operator==(const Tensor& a, const Tensor& b) {
    return a.shape_ == b.shape_ && a.values_ == b.values_;
  }

 private:
  void check_rank() const {
    if (shape_.empty() || shape_.size() > 4) {
      throw ShapeError("tensor rank must be 1..4, got " + std::to_string(shape_.size()));
    }
    for (auto d : shape_) {
      if (d == 0) throw ShapeError("zero extent in shape " + shape_str(shape_));
    }
  }

  Shape shape_;
  std::vector<T> values_;
  std::vector<T> grad_;
};

template <class T>
Tensor<T> scaled(const Tensor<T>& t, T alpha) {
  Tensor<T> out = t;
  out.drop_grad();
  for (auto& v : out.values()) v *= alpha;
  return out;
}

template <class T>
T max_abs_diff(const Tensor<T>& a, const Tensor<T>& b) {
  if (a.shape() != b.shape()) {
    throw ShapeError("shape mismatch " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
  }
  T m = 0;
  for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
  return m;
}

}  // namespace amen
