#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <random>
#include <sstream>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace lego {

using i64 = std::int64_t;
using Shape = std::vector<i64>;

// Thrown for rejected inputs: bad shapes, bad configs, out-of-range ids.
struct invalid_input : std::invalid_argument {
  using std::invalid_argument::invalid_argument;
};

// Thrown for file-format and filesystem failures.
struct io_error : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Thrown when training produces non-finite values.
struct numeric_error : std::runtime_error {
  using std::runtime_error::runtime_error;
};

inline i64 shape_numel(const Shape& s) {
  i64 n = 1;
  for (i64 d : s) n *= d;
  return n;
}

inline std::string shape_str(const Shape& s) {
  std::ostringstream out;
  out << '(';
  for (std::size_t i = 0; i < s.size(); ++i) {
    if (i) out << ',';
    out << s[i];
  }
  out << ')';
  return out.str();
}

// Dense row-major n-d array. T is float for training/inference and double
// for gradient checking. `grad`, when allocated, always matches `data` in
// length.
template <class T>
class Tensor {
 public:
  using value_type = T;

  Tensor() = default;

  explicit Tensor(Shape shape) : shape_(std::move(shape)) {
    check_shape();
    data_.assign(static_cast<std::size_t>(shape_numel(shape_)), T(0));
    init_strides();
  }

  Tensor(Shape shape, std::vector<T> values)
      : shape_(std::move(shape)), data_(std::move(values)) {
    check_shape();
    if (static_cast<i64>(data_.size()) != shape_numel(shape_)) {
      throw invalid_input("tensor: " + std::to_string(data_.size()) +
                          " values do not fill shape " + shape_str(shape_));
    }
    init_strides();
  }

  static Tensor zeros(Shape shape) { return Tensor(std::move(shape)); }

  static Tensor full(Shape shape, T value) {
    Tensor t(std::move(shape));
    t.fill(value);
    return t;
  }

  i64 ndim() const { return static_cast<i64>(shape_.size()); }
  i64 dim(int axis) const { return shape_[static_cast<std::size_t>(axis)]; }
  i64 numel() const { return static_cast<i64>(data_.size()); }
  const Shape& shape() const { return shape_; }

  T* data() { return data_.data(); }
  const T* data() const { return data_.data(); }
  std::vector<T>& buffer() { return data_; }
  const std::vector<T>& buffer() const { return data_; }

  T& operator[](i64 flat) { return data_[static_cast<std::size_t>(flat)]; }
  const T& operator[](i64 flat) const { return data_[static_cast<std::size_t>(flat)]; }

  T& operator()(i64 i) { return data_[static_cast<std::size_t>(i)]; }
  const T& operator()(i64 i) const { return data_[static_cast<std::size_t>(i)]; }
  T& operator()(i64 i, i64 j) { return data_[static_cast<std::size_t>(i * strides_[0] + j)]; }
  const T& operator()(i64 i, i64 j) const {
    return data_[static_cast<std::size_t>(i * strides_[0] + j)];
  }
  T& operator()(i64 i, i64 j, i64 k) {
    return data_[static_cast<std::size_t>(i * strides_[0] + j * strides_[1] + k)];
  }
  const T& operator()(i64 i, i64 j, i64 k) const {
    return data_[static_cast<std::size_t>(i * strides_[0] + j * strides_[1] + k)];
  }
  T& operator()(i64 i, i64 j, i64 k, i64 l) {
    return data_[static_cast<std::size_t>(i * strides_[0] + j * strides_[1] + k * strides_[2] + l)];
  }
  const T& operator()(i64 i, i64 j, i64 k, i64 l) const {
    return data_[static_cast<std::size_t>(i * strides_[0] + j * strides_[1] + k * strides_[2] + l)];
  }

  void fill(T value) { std::fill(data_.begin(), data_.end(), value); }

  // Reinterprets the buffer under a new shape of equal element count.
  void reshape(Shape shape) {
    if (shape_numel(shape) != numel()) {
      throw invalid_input("tensor: cannot reshape " + shape_str(shape_) + " to " +
                          shape_str(shape));
    }
    shape_ = std::move(shape);
    init_strides();
  }

  Tensor reshaped(Shape shape) const {
    Tensor t = *this;
    t.reshape(std::move(shape));
    return t;
  }

  bool all_finite() const {
    for (T v : data_) {
      if (!std::isfinite(static_cast<double>(v))) return false;
    }
    return true;
  }

  void check_finite(const std::string& what) const {
    if (!all_finite()) throw numeric_error(what + ": non-finite value in tensor");
  }

  // Gradient buffer, allocated on demand. Kept as a flat vector so tensors
  // without gradients cost nothing extra.
  bool requires_grad = false;
  std::vector<T> grad;

  void alloc_grad() {
    requires_grad = true;
    if (grad.size() != data_.size()) grad.assign(data_.size(), T(0));
  }

  void zero_grad() {
    if (grad.size() != data_.size()) grad.assign(data_.size(), T(0));
    std::fill(grad.begin(), grad.end(), T(0));
  }

 private:
  void check_shape() const {
    for (i64 d : shape_) {
      if (d <= 0) throw invalid_input("tensor: non-positive dimension in shape " + shape_str(shape_));
    }
  }

  void init_strides() {
    strides_.assign(shape_.size(), 1);
    for (int i = static_cast<int>(shape_.size()) - 2; i >= 0; --i) {
      strides_[static_cast<std::size_t>(i)] =
          strides_[static_cast<std::size_t>(i) + 1] * shape_[static_cast<std::size_t>(i) + 1];
    }
  }

  Shape shape_;
  std::vector<i64> strides_;
  std::vector<T> data_;
};

template <class T>
void fill_uniform(Tensor<T>& t, std::mt19937& rng, T lo, T hi) {
  std::uniform_real_distribution<T> dist(lo, hi);
  for (T& v : t.buffer()) v = dist(rng);
}

template <class T>
void fill_normal(Tensor<T>& t, std::mt19937& rng, T mean, T stddev) {
  std::normal_distribution<T> dist(mean, stddev);
  for (T& v : t.buffer()) v = dist(rng);
}

// Uniform init scaled by 1/sqrt(fan_in), the usual choice for conv/dense
// weights feeding a ReLU stack.
template <class T>
void fill_fan_in_uniform(Tensor<T>& t, std::mt19937& rng, i64 fan_in) {
  T bound = std::sqrt(T(1) / static_cast<T>(fan_in));
  fill_uniform(t, rng, -bound, bound);
}

}  // namespace lego
