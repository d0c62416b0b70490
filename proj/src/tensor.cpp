#include "pafforge/tensor.hpp"

#include <functional>
#include <numeric>

#include "pafforge/errors.hpp"

namespace pafforge {

std::size_t shape_size(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

std::string shape_string(const Shape& shape) {
  std::string s = "[";
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) s += ", ";
    s += std::to_string(shape[i]);
  }
  return s + "]";
}

Tensor::Tensor(Shape s, double fill) : shape(std::move(s)), data(shape_size(shape), fill) {}

Tensor::Tensor(Shape s, std::vector<double> values) : shape(std::move(s)), data(std::move(values)) {
  if (data.size() != shape_size(shape)) {
    throw DataError("tensor data length " + std::to_string(data.size()) +
                    " does not match shape " + shape_string(shape));
  }
}

std::size_t Tensor::sample_size() const {
  if (shape.empty()) return 0;
  return shape_size(Shape(shape.begin() + 1, shape.end()));
}

Tensor Tensor::rows(std::size_t begin, std::size_t end) const {
  if (begin > end || end > batch()) throw DataError("row range out of bounds");
  Shape s = shape;
  s[0] = end - begin;
  const std::size_t k = sample_size();
  return Tensor(s, std::vector<double>(data.begin() + static_cast<std::ptrdiff_t>(begin * k),
                                       data.begin() + static_cast<std::ptrdiff_t>(end * k)));
}

Tensor Tensor::gather(const std::vector<std::size_t>& indices) const {
  Shape s = shape;
  s[0] = indices.size();
  const std::size_t k = sample_size();
  Tensor out(s);
  for (std::size_t i = 0; i < indices.size(); ++i) {
    if (indices[i] >= batch()) throw DataError("gather index out of bounds");
    std::copy_n(data.begin() + static_cast<std::ptrdiff_t>(indices[i] * k), k,
                out.data.begin() + static_cast<std::ptrdiff_t>(i * k));
  }
  return out;
}

}  // namespace pafforge
