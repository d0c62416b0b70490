#pragma once

#include <cstddef>
#include <string>
#include <vector>

namespace pafforge {

using Shape = std::vector<std::size_t>;

std::size_t shape_size(const Shape& shape);
std::string shape_string(const Shape& shape);

/// Dense row-major tensor of doubles. Dimension 0 is the batch.
struct Tensor {
  Shape shape;
  std::vector<double> data;

  Tensor() = default;
  explicit Tensor(Shape s, double fill = 0.0);
  Tensor(Shape s, std::vector<double> values);

  std::size_t size() const { return data.size(); }
  std::size_t rank() const { return shape.size(); }
  std::size_t batch() const { return shape.empty() ? 0 : shape[0]; }
  /// Elements per sample (product of all but the first dimension).
  std::size_t sample_size() const;

  double& operator[](std::size_t i) { return data[i]; }
  double operator[](std::size_t i) const { return data[i]; }

  /// Samples [begin, end) along dimension 0.
  Tensor rows(std::size_t begin, std::size_t end) const;
  /// Samples at the given indices along dimension 0.
  Tensor gather(const std::vector<std::size_t>& indices) const;

  bool operator==(const Tensor&) const = default;
};

}  // namespace pafforge
