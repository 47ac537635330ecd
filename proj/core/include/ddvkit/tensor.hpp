#pragma once

#include <cstddef>
#include <initializer_list>
#include <span>
#include <string>
#include <vector>

namespace ddv {

using Shape = std::vector<std::size_t>;

std::size_t numel(const Shape& shape);
std::string to_string(const Shape& shape);

// Prepends a batch dimension.
Shape batched(std::size_t n, const Shape& sample_shape);

/// Dense row-major float32 array. The first dimension is treated as the
/// batch dimension by row().
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(Shape shape, float fill = 0.0f);
  Tensor(Shape shape, std::vector<float> data);
  Tensor(Shape shape, std::initializer_list<float> data)
      : Tensor(std::move(shape), std::vector<float>(data)) {}

  const Shape& shape() const noexcept { return shape_; }
  std::size_t size() const noexcept { return data_.size(); }
  bool empty() const noexcept { return data_.empty(); }

  std::span<float> data() noexcept { return data_; }
  std::span<const float> data() const noexcept { return data_; }
  const std::vector<float>& values() const noexcept { return data_; }

  float& operator[](std::size_t i) { return data_[i]; }
  float operator[](std::size_t i) const { return data_[i]; }

  std::size_t rows() const;
  std::size_t row_size() const;
  std::span<float> row(std::size_t i);
  std::span<const float> row(std::size_t i) const;

  Tensor reshaped(Shape shape) const;
  // Copies the given rows (in order) into a new tensor.
  Tensor gather_rows(std::span<const std::size_t> indices) const;

  bool all_finite() const;

  // Bitwise-equal shapes and payloads.
  bool identical(const Tensor& other) const;

 private:
  Shape shape_;
  std::vector<float> data_;
};

double l2_distance(std::span<const float> a, std::span<const float> b);
double dot(std::span<const float> a, std::span<const float> b);

}  // namespace ddv
