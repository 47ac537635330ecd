#include "ddvkit/tensor.hpp"

#include <cmath>
#include <cstring>
#include <sstream>

#include "ddvkit/error.hpp"

namespace ddv {

std::size_t numel(const Shape& shape) {
  std::size_t n = 1;
  for (auto d : shape) n *= d;
  return n;
}

std::string to_string(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << ',';
    os << shape[i];
  }
  os << ']';
  return os.str();
}

Shape batched(std::size_t n, const Shape& sample_shape) {
  Shape s;
  s.reserve(sample_shape.size() + 1);
  s.push_back(n);
  s.insert(s.end(), sample_shape.begin(), sample_shape.end());
  return s;
}

Tensor::Tensor(Shape shape, float fill) : shape_(std::move(shape)), data_(numel(shape_), fill) {}

Tensor::Tensor(Shape shape, std::vector<float> data)
    : shape_(std::move(shape)), data_(std::move(data)) {
  if (numel(shape_) != data_.size()) {
    throw ShapeError("tensor shape " + to_string(shape_) + " holds " +
                     std::to_string(numel(shape_)) + " values, got " +
                     std::to_string(data_.size()));
  }
}

std::size_t Tensor::rows() const { return shape_.empty() ? 0 : shape_[0]; }

std::size_t Tensor::row_size() const {
  if (shape_.empty() || shape_[0] == 0) return 0;
  return data_.size() / shape_[0];
}

std::span<float> Tensor::row(std::size_t i) {
  const auto w = row_size();
  return std::span<float>(data_).subspan(i * w, w);
}

std::span<const float> Tensor::row(std::size_t i) const {
  const auto w = row_size();
  return std::span<const float>(data_).subspan(i * w, w);
}

Tensor Tensor::reshaped(Shape shape) const {
  if (numel(shape) != data_.size()) {
    throw ShapeError("cannot reshape " + to_string(shape_) + " to " + to_string(shape));
  }
  return Tensor(std::move(shape), data_);
}

Tensor Tensor::gather_rows(std::span<const std::size_t> indices) const {
  Shape s = shape_;
  if (s.empty()) throw ShapeError("gather_rows on a rank-0 tensor");
  s[0] = indices.size();
  Tensor out(std::move(s));
  const auto w = row_size();
  for (std::size_t k = 0; k < indices.size(); ++k) {
    if (indices[k] >= rows()) throw ShapeError("row index out of range");
    std::memcpy(out.data_.data() + k * w, data_.data() + indices[k] * w, w * sizeof(float));
  }
  return out;
}

bool Tensor::all_finite() const {
  for (float v : data_) {
    if (!std::isfinite(v)) return false;
  }
  return true;
}

bool Tensor::identical(const Tensor& other) const {
  return shape_ == other.shape_ && data_.size() == other.data_.size() &&
         (data_.empty() ||
          std::memcmp(data_.data(), other.data_.data(), data_.size() * sizeof(float)) == 0);
}

double l2_distance(std::span<const float> a, std::span<const float> b) {
  double acc = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double d = static_cast<double>(a[i]) - b[i];
    acc += d * d;
  }
  return std::sqrt(acc);
}

double dot(std::span<const float> a, std::span<const float> b) {
  double acc = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) acc += static_cast<double>(a[i]) * b[i];
  return acc;
}

}  // namespace ddv
