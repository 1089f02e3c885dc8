#include "convlstm/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

#include "convlstm/errors.hpp"

namespace convlstm {

std::size_t shape_size(const Shape& shape) {
  std::size_t n = 1;
  for (auto d : shape) n *= d;
  return n;
}

std::string shape_string(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << ',';
    os << shape[i];
  }
  os << ']';
  return os.str();
}

Tensor::Tensor(Shape shape, double fill)
    : shape_(std::move(shape)), data_(shape_size(shape_), fill) {
  for (auto d : shape_)
    if (d == 0) throw ConfigError("tensor dimensions must be positive: " + shape_string(shape_));
}

Tensor::Tensor(Shape shape, std::vector<double> data)
    : shape_(std::move(shape)), data_(std::move(data)) {
  if (shape_size(shape_) != data_.size())
    throw ConfigError("tensor data length " + std::to_string(data_.size()) +
                      " does not match shape " + shape_string(shape_));
}

Tensor Tensor::slice(std::size_t i) const {
  if (shape_.empty() || i >= shape_[0]) throw UsageError("slice index out of range");
  Shape sub(shape_.begin() + 1, shape_.end());
  if (sub.empty()) sub = {1};
  std::size_t n = data_.size() / shape_[0];
  return Tensor(sub, std::vector<double>(data_.begin() + i * n, data_.begin() + (i + 1) * n));
}

void Tensor::set_slice(std::size_t i, const Tensor& part) {
  std::size_t n = data_.size() / shape_.at(0);
  if (i >= shape_[0] || part.size() != n) throw UsageError("set_slice: bad index or size");
  std::copy(part.data_.begin(), part.data_.end(), data_.begin() + i * n);
}

Tensor Tensor::reshaped(Shape shape) const {
  if (shape_size(shape) != data_.size())
    throw ConfigError("cannot reshape " + shape_string(shape_) + " to " + shape_string(shape));
  return Tensor(std::move(shape), data_);
}

void Tensor::fill(double v) { std::fill(data_.begin(), data_.end(), v); }

bool Tensor::all_finite() const {
  return std::all_of(data_.begin(), data_.end(), [](double v) { return std::isfinite(v); });
}

Tensor stack(std::span<const Tensor> parts) {
  if (parts.empty()) throw UsageError("stack of zero tensors");
  Shape shape{parts.size()};
  shape.insert(shape.end(), parts[0].shape().begin(), parts[0].shape().end());
  Tensor out(shape);
  for (std::size_t i = 0; i < parts.size(); ++i) {
    require_same_shape(parts[0], parts[i], "stack");
    out.set_slice(i, parts[i]);
  }
  return out;
}

double max_abs_diff(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "max_abs_diff");
  double m = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
  return m;
}

void require_same_shape(const Tensor& a, const Tensor& b, const char* what) {
  if (a.shape() != b.shape())
    throw ConfigError(std::string(what) + ": shape mismatch " + shape_string(a.shape()) +
                      " vs " + shape_string(b.shape()));
}

}  // namespace convlstm
