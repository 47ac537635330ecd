#include "ddvkit/model.hpp"

#include <cmath>

#include "ddvkit/error.hpp"
#include "ddvkit/rng.hpp"
#include "kernels.hpp"

namespace ddv {

std::string_view to_string(Access access) {
  return access == Access::whitebox ? "whitebox" : "blackbox";
}

Access access_from_string(std::string_view name) {
  if (name == "whitebox") return Access::whitebox;
  if (name == "blackbox") return Access::blackbox;
  throw InvalidArgument("unknown access mode '" + std::string(name) + "'");
}

void to_json(nlohmann::json& j, const LineageRecord& r) {
  j = nlohmann::json{{"op", r.op}, {"parent", r.parent}, {"params", r.params}};
}

void from_json(const nlohmann::json& j, LineageRecord& r) {
  r.op = j.at("op").get<std::string>();
  r.parent = j.value("parent", std::string{});
  r.params = j.value("params", nlohmann::json::object());
}

Model::Model(std::string id, Shape input_shape, std::vector<Layer> layers, Access access)
    : id_(std::move(id)),
      input_shape_(std::move(input_shape)),
      layers_(std::move(layers)),
      access_(access) {
  validate();
}

void Model::validate() {
  if (input_shape_.empty() || numel(input_shape_) == 0) {
    throw ShapeError("model '" + id_ + "' has an empty input shape");
  }
  if (layers_.empty()) throw ShapeError("model '" + id_ + "' has no layers");
  shapes_.clear();
  Shape current = input_shape_;
  for (std::size_t i = 0; i < layers_.size(); ++i) {
    try {
      current = layers_[i].output_shape(current);
    } catch (const ShapeError& e) {
      throw ShapeError("layer " + std::to_string(i) + " (" +
                       std::string(to_string(layers_[i].kind)) + "): " + e.what());
    }
    shapes_.push_back(current);
  }
  if (current.size() != 1) {
    throw ShapeError("final layer of model '" + id_ + "' must produce a vector, got " +
                     to_string(current));
  }
  output_dim_ = current[0];
}

void Model::require_whitebox(std::string_view operation) const {
  if (access_ != Access::whitebox) {
    throw UnsupportedOperation(std::string(operation) + " requires white-box access; model '" +
                               id_ + "' is black-box");
  }
}

Tensor Model::forward(const Tensor& batch) const {
  return detail::run_forward(*this, batch, layers_.size() - 1);
}

Tensor Model::forward_until(const Tensor& batch, std::size_t last) const {
  require_whitebox("forward_until");
  if (last >= layers_.size()) throw InvalidArgument("layer index out of range");
  return detail::run_forward(*this, batch, last);
}

std::vector<std::size_t> Model::param_layer_indices() const {
  std::vector<std::size_t> idx;
  for (std::size_t i = 0; i < layers_.size(); ++i) {
    if (layers_[i].has_params()) idx.push_back(i);
  }
  return idx;
}

std::optional<std::size_t> Model::last_conv_index() const {
  for (std::size_t i = layers_.size(); i-- > 0;) {
    if (layers_[i].kind == LayerKind::conv2d) return i;
  }
  return std::nullopt;
}

bool Model::ends_with_softmax() const {
  return !layers_.empty() && layers_.back().kind == LayerKind::softmax;
}

std::size_t Model::logits_index() const {
  if (ends_with_softmax()) {
    if (layers_.size() < 2) throw ShapeError("model '" + id_ + "' is a bare softmax");
    return layers_.size() - 2;
  }
  return layers_.size() - 1;
}

std::size_t Model::parameter_count() const {
  std::size_t n = 0;
  for (const auto& l : layers_) n += l.weights.size() + l.bias.size();
  return n;
}

void init_layer(Layer& layer, std::uint64_t seed) {
  if (!layer.has_params()) return;
  const std::size_t fan_in = layer.kind == LayerKind::dense
                                 ? layer.in_features
                                 : layer.in_channels * layer.kernel * layer.kernel;
  const double k = std::sqrt(1.0 / static_cast<double>(fan_in));
  Rng rng(seed);
  for (float& w : layer.weights.data()) w = static_cast<float>(rng.uniform(-k, k));
  for (float& b : layer.bias.data()) b = static_cast<float>(rng.uniform(-k, k));
  layer.quant.reset();
}

void init_weights(Model& model, std::uint64_t seed) {
  auto& layers = model.mutable_layers();
  for (std::size_t i = 0; i < layers.size(); ++i) {
    init_layer(layers[i], derive_seed(seed, "layer" + std::to_string(i)));
  }
}

bool is_known_architecture(const std::string& arch) {
  return arch == "convnetA" || arch == "convnetB";
}

Model make_architecture(const std::string& arch, std::size_t num_classes, std::uint64_t seed,
                        std::string id, Shape input_shape) {
  if (input_shape.size() != 3) throw ShapeError("architectures expect [C,H,W] inputs");
  const std::size_t c = input_shape[0];
  const std::size_t h = input_shape[1];
  const std::size_t w = input_shape[2];
  std::vector<Layer> layers;
  if (arch == "convnetA") {
    layers.push_back(conv2d_layer(c, 8, 3, 1, 1));
    layers.push_back(relu_layer());
    layers.push_back(maxpool_layer(2));
    layers.push_back(conv2d_layer(8, 16, 3, 1, 1));
    layers.push_back(relu_layer());
    layers.push_back(dense_layer(16 * (h / 2) * (w / 2), 32));
    layers.push_back(relu_layer());
    layers.push_back(dense_layer(32, num_classes));
    layers.push_back(softmax_layer());
  } else if (arch == "convnetB") {
    const std::size_t h1 = (h + 2 - 3) / 2 + 1;
    const std::size_t w1 = (w + 2 - 3) / 2 + 1;
    const std::size_t h2 = (h1 + 2 - 3) / 2 + 1;
    const std::size_t w2 = (w1 + 2 - 3) / 2 + 1;
    layers.push_back(conv2d_layer(c, 8, 3, 2, 1));
    layers.push_back(relu_layer());
    layers.push_back(conv2d_layer(8, 16, 3, 1, 1));
    layers.push_back(relu_layer());
    layers.push_back(conv2d_layer(16, 16, 3, 2, 1));
    layers.push_back(relu_layer());
    layers.push_back(dense_layer(16 * h2 * w2, num_classes));
    layers.push_back(softmax_layer());
  } else {
    throw InvalidArgument("unknown architecture '" + arch + "'");
  }
  Model m(std::move(id), std::move(input_shape), std::move(layers));
  init_weights(m, seed);
  return m;
}

}  // namespace ddv
