#include "ddvkit/layer.hpp"

#include "ddvkit/error.hpp"

namespace ddv {

std::string_view to_string(LayerKind kind) {
  switch (kind) {
    case LayerKind::dense: return "dense";
    case LayerKind::conv2d: return "conv2d";
    case LayerKind::relu: return "relu";
    case LayerKind::maxpool: return "maxpool";
    case LayerKind::softmax: return "softmax";
  }
  return "unknown";
}

LayerKind layer_kind_from_string(std::string_view name) {
  if (name == "dense") return LayerKind::dense;
  if (name == "conv2d") return LayerKind::conv2d;
  if (name == "relu") return LayerKind::relu;
  if (name == "maxpool") return LayerKind::maxpool;
  if (name == "softmax") return LayerKind::softmax;
  throw UnsupportedOperation("unsupported layer kind '" + std::string(name) + "'");
}

Shape Layer::output_shape(const Shape& input) const {
  switch (kind) {
    case LayerKind::dense: {
      if (numel(input) != in_features) {
        throw ShapeError("dense layer expects " + std::to_string(in_features) +
                         " input features, got " + to_string(input));
      }
      if (weights.shape() != Shape{out_features, in_features} ||
          bias.shape() != Shape{out_features}) {
        throw ShapeError("dense layer parameters do not match [" + std::to_string(out_features) +
                         "," + std::to_string(in_features) + "]");
      }
      return {out_features};
    }
    case LayerKind::conv2d: {
      if (input.size() != 3 || input[0] != in_channels) {
        throw ShapeError("conv2d expects [" + std::to_string(in_channels) + ",H,W], got " +
                         to_string(input));
      }
      if (stride < 1) throw ShapeError("conv2d stride must be >= 1");
      const auto h = input[1] + 2 * padding;
      const auto w = input[2] + 2 * padding;
      if (kernel == 0 || kernel > h || kernel > w) {
        throw ShapeError("conv2d kernel " + std::to_string(kernel) +
                         " does not fit padded input " + to_string(input));
      }
      if (weights.shape() != Shape{out_channels, in_channels, kernel, kernel} ||
          bias.shape() != Shape{out_channels}) {
        throw ShapeError("conv2d parameters do not match declared channels/kernel");
      }
      return {out_channels, (h - kernel) / stride + 1, (w - kernel) / stride + 1};
    }
    case LayerKind::maxpool: {
      if (input.size() != 3) throw ShapeError("maxpool expects [C,H,W], got " + to_string(input));
      if (pool == 0 || input[1] < pool || input[2] < pool) {
        throw ShapeError("maxpool window " + std::to_string(pool) + " does not fit " +
                         to_string(input));
      }
      return {input[0], input[1] / pool, input[2] / pool};
    }
    case LayerKind::relu:
    case LayerKind::softmax:
      return input;
  }
  throw UnsupportedOperation("unknown layer kind");
}

bool Layer::same_structure(const Layer& other) const {
  return kind == other.kind && in_features == other.in_features &&
         out_features == other.out_features && in_channels == other.in_channels &&
         out_channels == other.out_channels && kernel == other.kernel &&
         stride == other.stride && padding == other.padding &&
         (kind != LayerKind::maxpool || pool == other.pool);
}

bool Layer::identical(const Layer& other) const {
  return same_structure(other) && weights.identical(other.weights) && bias.identical(other.bias);
}

Layer dense_layer(std::size_t in_features, std::size_t out_features) {
  Layer l;
  l.kind = LayerKind::dense;
  l.in_features = in_features;
  l.out_features = out_features;
  l.weights = Tensor({out_features, in_features});
  l.bias = Tensor({out_features});
  return l;
}

Layer conv2d_layer(std::size_t in_channels, std::size_t out_channels, std::size_t kernel,
                   std::size_t stride, std::size_t padding) {
  Layer l;
  l.kind = LayerKind::conv2d;
  l.in_channels = in_channels;
  l.out_channels = out_channels;
  l.kernel = kernel;
  l.stride = stride;
  l.padding = padding;
  l.weights = Tensor({out_channels, in_channels, kernel, kernel});
  l.bias = Tensor({out_channels});
  return l;
}

Layer relu_layer() {
  Layer l;
  l.kind = LayerKind::relu;
  return l;
}

Layer maxpool_layer(std::size_t window) {
  Layer l;
  l.kind = LayerKind::maxpool;
  l.pool = window;
  return l;
}

Layer softmax_layer() {
  Layer l;
  l.kind = LayerKind::softmax;
  return l;
}

}  // namespace ddv
