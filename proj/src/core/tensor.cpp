#include "scdd/core/tensor.hpp"

#include <algorithm>
#include <sstream>

#include "scdd/core/errors.hpp"

namespace scdd {

std::size_t shape_size(const std::vector<int>& shape) {
  std::size_t n = 1;
  for (int d : shape) {
    if (d < 0) throw ShapeError("negative dimension in " + shape_string(shape));
    n *= static_cast<std::size_t>(d);
  }
  return n;
}

std::string shape_string(const std::vector<int>& shape) {
  std::ostringstream os;
  os << '(';
  for (std::size_t i = 0; i < shape.size(); ++i) os << (i ? ", " : "") << shape[i];
  os << ')';
  return os.str();
}

Tensor::Tensor(std::vector<int> shape, Real fill)
    : shape_(std::move(shape)), data_(shape_size(shape_), fill) {}

Tensor::Tensor(std::vector<int> shape, std::vector<Real> values)
    : shape_(std::move(shape)), data_(std::move(values)) {
  if (data_.size() != shape_size(shape_))
    throw ShapeError("value count " + std::to_string(data_.size()) + " does not match shape " +
                     shape_string(shape_));
}

void Tensor::fill(Real v) { std::fill(data_.begin(), data_.end(), v); }

void Tensor::reshape(std::vector<int> shape) {
  if (shape_size(shape) != data_.size())
    throw ShapeError("cannot reshape " + shape_string(shape_) + " to " + shape_string(shape));
  shape_ = std::move(shape);
}

Tensor Tensor::slice(int begin, int end) const {
  if (shape_.empty() || begin < 0 || end > shape_[0] || begin > end)
    throw ShapeError("slice [" + std::to_string(begin) + ", " + std::to_string(end) +
                     ") out of range for " + shape_string(shape_));
  std::vector<int> shape = shape_;
  shape[0] = end - begin;
  const std::size_t s = stride0();
  std::vector<Real> values(data_.begin() + static_cast<std::ptrdiff_t>(begin * s),
                           data_.begin() + static_cast<std::ptrdiff_t>(end * s));
  return Tensor(std::move(shape), std::move(values));
}

Tensor stack(std::span<const Tensor> items) {
  if (items.empty()) return Tensor();
  std::vector<int> shape{static_cast<int>(items.size())};
  shape.insert(shape.end(), items[0].shape().begin(), items[0].shape().end());
  Tensor out(shape);
  const std::size_t s = items[0].size();
  for (std::size_t i = 0; i < items.size(); ++i) {
    if (!items[i].same_shape(items[0])) throw ShapeError("stack: mismatched item shapes");
    std::copy(items[i].data(), items[i].data() + s, out.data() + i * s);
  }
  return out;
}

}  // namespace scdd
