#pragma once

#include "ddvkit/model.hpp"

namespace ddv::testing {

// forward(x) == x for flat inputs of width n
inline Model identity_dense(std::size_t n, const std::string& id = "identity") {
  Layer l = dense_layer(n, n);
  for (std::size_t i = 0; i < n; ++i) l.weights[i * n + i] = 1.0f;
  return Model(id, {n}, {l});
}

// Ignores its input entirely.
inline Model constant_model(const Shape& input, std::size_t out, const std::string& id = "constant") {
  Layer l = dense_layer(numel(input), out);
  for (std::size_t k = 0; k < out; ++k) l.bias[k] = 0.25f * static_cast<float>(k + 1);
  return Model(id, input, {l, softmax_layer()});
}

}  // namespace ddv::testing
