#pragma once

#include <cstddef>
#include <span>
#include <string>
#include <vector>

namespace scdd {

using Real = double;

/// Dense row-major tensor. Image batches use NCHW.
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(std::vector<int> shape, Real fill = Real{0});
  Tensor(std::vector<int> shape, std::vector<Real> values);

  static Tensor zeros_like(const Tensor& other) { return Tensor(other.shape_); }

  const std::vector<int>& shape() const noexcept { return shape_; }
  int dim(std::size_t axis) const { return shape_.at(axis); }
  std::size_t rank() const noexcept { return shape_.size(); }
  std::size_t size() const noexcept { return data_.size(); }
  bool empty() const noexcept { return data_.empty(); }

  Real* data() noexcept { return data_.data(); }
  const Real* data() const noexcept { return data_.data(); }
  std::span<Real> span() noexcept { return data_; }
  std::span<const Real> span() const noexcept { return data_; }
  std::vector<Real>& values() noexcept { return data_; }
  const std::vector<Real>& values() const noexcept { return data_; }

  Real& operator[](std::size_t i) noexcept { return data_[i]; }
  Real operator[](std::size_t i) const noexcept { return data_[i]; }

  Real& at(int n, int c, int h, int w) noexcept {
    return data_[((static_cast<std::size_t>(n) * shape_[1] + c) * shape_[2] + h) * shape_[3] + w];
  }
  Real at(int n, int c, int h, int w) const noexcept {
    return data_[((static_cast<std::size_t>(n) * shape_[1] + c) * shape_[2] + h) * shape_[3] + w];
  }

  /// Number of elements per leading-axis slice (C*H*W for an image batch).
  std::size_t stride0() const noexcept {
    return shape_.empty() || shape_[0] == 0 ? 0 : data_.size() / static_cast<std::size_t>(shape_[0]);
  }

  void fill(Real v);
  void zero() { fill(Real{0}); }
  void reshape(std::vector<int> shape);
  bool same_shape(const Tensor& other) const noexcept { return shape_ == other.shape_; }

  /// Copies leading-axis slices [begin, end) into a new tensor.
  Tensor slice(int begin, int end) const;

 private:
  std::vector<int> shape_;
  std::vector<Real> data_;
};

std::size_t shape_size(const std::vector<int>& shape);
std::string shape_string(const std::vector<int>& shape);

/// Stacks equally-shaped tensors along a new leading axis.
Tensor stack(std::span<const Tensor> items);

}  // namespace scdd
