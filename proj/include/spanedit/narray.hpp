#pragma once

#include <algorithm>
#include <array>
#include <cstddef>
#include <initializer_list>
#include <limits>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "spanedit/errors.hpp"

namespace spanedit {

inline constexpr double kNegInf = -std::numeric_limits<double>::infinity();

// Dense shape of rank 0..4.
class Shape {
 public:
  static constexpr std::size_t kMaxRank = 4;

  Shape() = default;
  Shape(std::initializer_list<std::size_t> dims) {
    if (dims.size() > kMaxRank) throw ShapeError("rank exceeds " + std::to_string(kMaxRank));
    for (std::size_t d : dims) dims_[rank_++] = d;
  }
  explicit Shape(std::span<const std::size_t> dims) {
    if (dims.size() > kMaxRank) throw ShapeError("rank exceeds " + std::to_string(kMaxRank));
    for (std::size_t d : dims) dims_[rank_++] = d;
  }

  std::size_t rank() const { return rank_; }
  std::size_t operator[](std::size_t axis) const { return dims_[axis]; }
  std::size_t numel() const {
    std::size_t n = 1;
    for (std::size_t i = 0; i < rank_; ++i) n *= dims_[i];
    return n;
  }
  std::span<const std::size_t> dims() const { return {dims_.data(), rank_}; }

  friend bool operator==(const Shape& a, const Shape& b) {
    if (a.rank_ != b.rank_) return false;
    for (std::size_t i = 0; i < a.rank_; ++i)
      if (a.dims_[i] != b.dims_[i]) return false;
    return true;
  }

  std::string str() const {
    std::string s = "[";
    for (std::size_t i = 0; i < rank_; ++i) {
      if (i) s += ", ";
      s += std::to_string(dims_[i]);
    }
    return s + "]";
  }

 private:
  std::array<std::size_t, kMaxRank> dims_{};
  std::size_t rank_ = 0;
};

// Row-major dense array of doubles.
class NArray {
 public:
  NArray() = default;
  explicit NArray(Shape shape, double fill = 0.0) : shape_(shape), data_(shape.numel(), fill) {}
  NArray(Shape shape, std::vector<double> data) : shape_(shape), data_(std::move(data)) {
    if (data_.size() != shape_.numel())
      throw ShapeError("payload of " + std::to_string(data_.size()) + " values does not fit shape " +
                       shape_.str());
  }

  static NArray scalar(double v) { return NArray(Shape{}, std::vector<double>{v}); }
  static NArray vector(std::vector<double> v) {
    const std::size_t n = v.size();
    return NArray(Shape{n}, std::move(v));
  }
  static NArray matrix(std::size_t rows, std::size_t cols, std::vector<double> v) {
    return NArray(Shape{rows, cols}, std::move(v));
  }

  const Shape& shape() const { return shape_; }
  std::size_t rank() const { return shape_.rank(); }
  std::size_t size() const { return data_.size(); }
  bool empty() const { return data_.empty(); }

  // For rank 2 arrays; a rank 1 array is treated as a single row.
  std::size_t rows() const { return shape_.rank() == 2 ? shape_[0] : 1; }
  std::size_t cols() const {
    if (shape_.rank() == 0) return 1;
    return shape_[shape_.rank() - 1];
  }

  double* data() { return data_.data(); }
  const double* data() const { return data_.data(); }
  std::span<double> values() { return data_; }
  std::span<const double> values() const { return data_; }

  double& operator[](std::size_t i) { return data_[i]; }
  double operator[](std::size_t i) const { return data_[i]; }
  double& at(std::size_t r, std::size_t c) { return data_[r * cols() + c]; }
  double at(std::size_t r, std::size_t c) const { return data_[r * cols() + c]; }
  double item() const {
    if (data_.size() != 1) throw ShapeError("item() on shape " + shape_.str());
    return data_[0];
  }

  void fill(double v) { std::fill(data_.begin(), data_.end(), v); }
  void reshape(Shape s) {
    if (s.numel() != data_.size())
      throw ShapeError("cannot reshape " + shape_.str() + " to " + s.str());
    shape_ = s;
  }

  friend bool operator==(const NArray& a, const NArray& b) {
    return a.shape_ == b.shape_ && a.data_ == b.data_;
  }

 private:
  Shape shape_;
  std::vector<double> data_;
};

}  // namespace spanedit
