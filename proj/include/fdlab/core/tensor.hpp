#pragma once

#include <algorithm>
#include <cstddef>
#include <numeric>
#include <span>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Core>

#include "fdlab/core/error.hpp"

namespace fdlab {

using Shape = std::vector<std::size_t>;

/// Packet-aligned buffer. Eigen peels unaligned heads in reductions, so the
/// base address must not vary between runs for sums to be reproducible.
template <typename T>
using AlignedVector = std::vector<T, Eigen::aligned_allocator<T>>;

inline std::size_t numel(const Shape& s) {
  return std::accumulate(s.begin(), s.end(), std::size_t{1}, std::multiplies<>());
}

inline std::string shape_str(const Shape& s) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < s.size(); ++i) os << (i ? "," : "") << s[i];
  os << ']';
  return os.str();
}

/// Dense row-major tensor. For batches the leading dimension is the sample index.
template <typename T>
class Tensor {
 public:
  using value_type = T;

  Tensor() = default;
  explicit Tensor(Shape shape, T fill = T{0}) : shape_(std::move(shape)), data_(numel(shape_), fill) {}
  Tensor(Shape shape, AlignedVector<T> data) : shape_(std::move(shape)), data_(std::move(data)) {
    require(data_.size() == numel(shape_), "tensor data size does not match shape " + shape_str(shape_));
  }
  Tensor(Shape shape, const std::vector<T>& data) : shape_(std::move(shape)), data_(data.begin(), data.end()) {
    require(data_.size() == numel(shape_), "tensor data size does not match shape " + shape_str(shape_));
  }

  const Shape& shape() const { return shape_; }
  std::size_t rank() const { return shape_.size(); }
  std::size_t dim(std::size_t i) const { return shape_.at(i); }
  std::size_t size() const { return data_.size(); }
  bool empty() const { return data_.empty(); }

  T* data() { return data_.data(); }
  const T* data() const { return data_.data(); }
  std::span<T> values() { return data_; }
  std::span<const T> values() const { return data_; }

  T& operator[](std::size_t i) { return data_[i]; }
  const T& operator[](std::size_t i) const { return data_[i]; }

  auto begin() { return data_.begin(); }
  auto end() { return data_.end(); }
  auto begin() const { return data_.begin(); }
  auto end() const { return data_.end(); }

  std::size_t batch() const { return shape_.empty() ? 0 : shape_[0]; }
  std::size_t sample_size() const { return shape_.empty() || shape_[0] == 0 ? 0 : data_.size() / shape_[0]; }
  /// Shape of one sample (all but the leading dimension).
  Shape sample_shape() const { return Shape(shape_.begin() + (shape_.empty() ? 0 : 1), shape_.end()); }

  std::span<T> sample(std::size_t n) { return {data_.data() + n * sample_size(), sample_size()}; }
  std::span<const T> sample(std::size_t n) const { return {data_.data() + n * sample_size(), sample_size()}; }

  void reshape(Shape s) {
    require(numel(s) == data_.size(), "cannot reshape " + shape_str(shape_) + " to " + shape_str(s));
    shape_ = std::move(s);
  }
  void fill(T v) { std::fill(data_.begin(), data_.end(), v); }
  /// Resize to `s` and zero every element.
  void reset(Shape s) {
    shape_ = std::move(s);
    data_.assign(numel(shape_), T{0});
  }

  template <typename U>
  Tensor<U> cast() const {
    AlignedVector<U> out(data_.begin(), data_.end());
    return Tensor<U>(shape_, std::move(out));
  }

  friend bool operator==(const Tensor& a, const Tensor& b) { return a.shape_ == b.shape_ && a.data_ == b.data_; }

 private:
  Shape shape_;
  AlignedVector<T> data_;
};

/// Stacks rows of `src` selected by `rows` into a new batch.
template <typename T>
Tensor<T> gather_rows(const Tensor<T>& src, std::span<const std::size_t> rows) {
  Shape s = src.shape();
  s[0] = rows.size();
  Tensor<T> out(s);
  const std::size_t d = src.sample_size();
  for (std::size_t i = 0; i < rows.size(); ++i)
    std::copy_n(src.data() + rows[i] * d, d, out.data() + i * d);
  return out;
}

template <typename T>
Tensor<T> slice_rows(const Tensor<T>& src, std::size_t begin, std::size_t end) {
  Shape s = src.shape();
  s[0] = end - begin;
  const std::size_t d = src.sample_size();
  return Tensor<T>(s, AlignedVector<T>(src.data() + begin * d, src.data() + end * d));
}

template <typename T>
T max_abs_diff(std::span<const T> a, std::span<const T> b) {
  require(a.size() == b.size(), "max_abs_diff: size mismatch");
  T m{0};
  for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, static_cast<T>(a[i] > b[i] ? a[i] - b[i] : b[i] - a[i]));
  return m;
}

}  // namespace fdlab
