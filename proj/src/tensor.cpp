#include "anatomap/tensor.hpp"

#include <algorithm>
#include <sstream>

namespace anatomap::nn {

std::size_t shape_numel(const std::vector<int>& shape) {
  std::size_t n = 1;
  for (int d : shape) {
    if (d < 0) throw Error(ErrorCode::ShapeMismatch, "negative tensor dimension");
    n *= std::size_t(d);
  }
  return n;
}

std::string shape_string(const std::vector<int>& shape) {
  std::ostringstream os;
  os << '(';
  for (std::size_t i = 0; i < shape.size(); ++i) os << (i ? "," : "") << shape[i];
  os << ')';
  return os.str();
}

Tensor::Tensor(std::vector<int> shape, float fill) : shape_(std::move(shape)), values_(shape_numel(shape_), fill) {
  if (shape_.size() > 5) throw Error(ErrorCode::ShapeMismatch, "tensor rank exceeds 5");
}

Tensor::Tensor(std::vector<int> shape, std::vector<float> values) : shape_(std::move(shape)), values_(std::move(values)) {
  if (shape_.size() > 5) throw Error(ErrorCode::ShapeMismatch, "tensor rank exceeds 5");
  if (values_.size() != shape_numel(shape_)) {
    throw Error(ErrorCode::ShapeMismatch, "value count does not match shape " + shape_string(shape_));
  }
}

Tensor Tensor::reshaped(std::vector<int> shape) const {
  if (shape_numel(shape) != numel()) {
    throw Error(ErrorCode::ShapeMismatch, "cannot reshape " + shape_string(shape_) + " to " + shape_string(shape));
  }
  return Tensor(std::move(shape), values_);
}

void Tensor::fill(float v) { std::fill(values_.begin(), values_.end(), v); }

}  // namespace anatomap::nn
