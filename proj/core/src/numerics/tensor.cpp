#include "objtx/numerics/tensor.hpp"

#include <cmath>

namespace objtx::num {

Shape::Shape(std::initializer_list<std::size_t> dims)
    : Shape(std::span<const std::size_t>(dims.begin(), dims.size())) {}

Shape::Shape(std::span<const std::size_t> dims) {
  if (dims.empty() || dims.size() > kMaxRank) {
    throw DimensionError("tensor rank must be 1..3, got " + std::to_string(dims.size()));
  }
  for (std::size_t i = 0; i < dims.size(); ++i) {
    if (dims[i] == 0) throw DimensionError("tensor extents must be positive");
    dims_[i] = dims[i];
  }
  rank_ = dims.size();
}

std::size_t Shape::numel() const noexcept {
  if (rank_ == 0) return 0;
  std::size_t n = 1;
  for (std::size_t i = 0; i < rank_; ++i) n *= dims_[i];
  return n;
}

std::size_t Shape::rows() const noexcept {
  if (rank_ == 0) return 0;
  return numel() / dims_[rank_ - 1];
}

std::string Shape::str() const {
  std::string s = "[";
  for (std::size_t i = 0; i < rank_; ++i) {
    if (i) s += "x";
    s += std::to_string(dims_[i]);
  }
  return s + "]";
}

template <typename Real>
Tensor<Real>::Tensor(Shape shape, Real fill) : shape_(shape), data_(shape.numel(), fill) {}

template <typename Real>
Tensor<Real>::Tensor(Shape shape, std::vector<Real> data)
    : shape_(shape), data_(std::move(data)) {
  if (data_.size() != shape_.numel()) {
    throw DimensionError("buffer of " + std::to_string(data_.size()) +
                         " scalars does not match shape " + shape_.str());
  }
}

template <typename Real>
Tensor<Real> Tensor<Real>::row(std::span<const Real> values) {
  return Tensor(Shape{values.size()}, std::vector<Real>(values.begin(), values.end()));
}

template <typename Real>
Tensor<Real> Tensor<Real>::matrix(std::size_t rows, std::size_t cols,
                                  std::initializer_list<Real> values) {
  return Tensor(Shape{rows, cols}, std::vector<Real>(values));
}

template <typename Real>
void Tensor<Real>::fill(Real v) {
  for (auto& x : data_) x = v;
}

template <typename Real>
bool Tensor<Real>::all_finite() const noexcept {
  for (Real x : data_) {
    if (!std::isfinite(x)) return false;
  }
  return true;
}

template <typename Real>
Tensor<Real> Tensor<Real>::reshaped(Shape shape) const {
  if (shape.numel() != numel()) {
    throw DimensionError("cannot reshape " + shape_.str() + " to " + shape.str());
  }
  Tensor out(shape, data_);
  out.requires_grad_ = requires_grad_;
  return out;
}

template class Tensor<float>;
template class Tensor<double>;

}  // namespace objtx::num
