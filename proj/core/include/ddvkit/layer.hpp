#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "ddvkit/tensor.hpp"

namespace ddv {

enum class LayerKind { dense, conv2d, relu, maxpool, softmax };

std::string_view to_string(LayerKind kind);
// Throws UnsupportedOperation for unknown names.
LayerKind layer_kind_from_string(std::string_view name);

/// Per-layer affine int8 weight quantization. The layer's float weights are
/// always the dequantized view of `codes`.
struct QuantParams {
  double scale = 1.0;
  std::int32_t zero_point = 0;
  std::vector<std::int8_t> codes;

  float dequantize(std::int8_t code) const {
    return static_cast<float>(scale * (static_cast<double>(code) - zero_point));
  }
};

struct Layer {
  LayerKind kind = LayerKind::relu;

  // dense
  std::size_t in_features = 0;
  std::size_t out_features = 0;

  // conv2d: weights [out_channels, in_channels, kernel, kernel]
  std::size_t in_channels = 0;
  std::size_t out_channels = 0;
  std::size_t kernel = 0;
  std::size_t stride = 1;
  std::size_t padding = 0;

  // maxpool: square window, stride == window
  std::size_t pool = 2;

  Tensor weights;
  Tensor bias;
  std::optional<QuantParams> quant;

  bool has_params() const noexcept {
    return kind == LayerKind::dense || kind == LayerKind::conv2d;
  }

  // Shape of one sample after this layer; throws ShapeError when `input`
  // does not fit.
  Shape output_shape(const Shape& input) const;

  // Same structure and bit-identical parameters.
  bool identical(const Layer& other) const;
  bool same_structure(const Layer& other) const;
};

Layer dense_layer(std::size_t in_features, std::size_t out_features);
Layer conv2d_layer(std::size_t in_channels, std::size_t out_channels, std::size_t kernel,
                   std::size_t stride = 1, std::size_t padding = 0);
Layer relu_layer();
Layer maxpool_layer(std::size_t window = 2);
Layer softmax_layer();

}  // namespace ddv
