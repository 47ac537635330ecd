#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "ddvkit/layer.hpp"
#include "ddvkit/tensor.hpp"

namespace ddv {

enum class Access { whitebox, blackbox };

std::string_view to_string(Access access);
Access access_from_string(std::string_view name);

/// One reuse step that produced a model, e.g. {op: "prune", parent: <id>,
/// params: {ratio: 0.5}}. Source models carry a "train" record with no parent.
struct LineageRecord {
  std::string op;
  std::string parent;
  nlohmann::json params = nlohmann::json::object();

  bool operator==(const LineageRecord&) const = default;
};

void to_json(nlohmann::json& j, const LineageRecord& r);
void from_json(const nlohmann::json& j, LineageRecord& r);

/// Anything that maps a batch of inputs to a batch of output vectors.
/// Implementations must make forward() safe to call concurrently.
class Classifier {
 public:
  virtual ~Classifier() = default;

  virtual const std::string& id() const = 0;
  virtual const Shape& input_shape() const = 0;
  virtual std::size_t output_dim() const = 0;
  // batch: [n] + input_shape  ->  [n, output_dim]
  virtual Tensor forward(const Tensor& batch) const = 0;
};

class Model final : public Classifier {
 public:
  Model() = default;
  Model(std::string id, Shape input_shape, std::vector<Layer> layers,
        Access access = Access::whitebox);

  const std::string& id() const override { return id_; }
  const Shape& input_shape() const override { return input_shape_; }
  std::size_t output_dim() const override { return output_dim_; }
  Tensor forward(const Tensor& batch) const override;

  // Output of layer `last` (inclusive) for every sample; whitebox only.
  Tensor forward_until(const Tensor& batch, std::size_t last) const;

  Access access() const noexcept { return access_; }
  bool whitebox() const noexcept { return access_ == Access::whitebox; }
  // Throws UnsupportedOperation naming `operation` for black-box models.
  void require_whitebox(std::string_view operation) const;

  const std::vector<Layer>& layers() const noexcept { return layers_; }
  // Mutable access re-validates nothing; callers keep shapes intact.
  std::vector<Layer>& mutable_layers() noexcept { return layers_; }

  // Per-sample shape after each layer; element i is the output of layer i.
  const std::vector<Shape>& activation_shapes() const noexcept { return shapes_; }

  std::vector<std::size_t> param_layer_indices() const;
  std::size_t param_layer_count() const { return param_layer_indices().size(); }
  std::optional<std::size_t> last_conv_index() const;
  // Index of the layer producing logits (the layer before a trailing softmax).
  std::size_t logits_index() const;
  bool ends_with_softmax() const;

  const std::vector<LineageRecord>& lineage() const noexcept { return lineage_; }
  void set_lineage(std::vector<LineageRecord> lineage) { lineage_ = std::move(lineage); }
  void add_lineage(LineageRecord record) { lineage_.push_back(std::move(record)); }

  void set_id(std::string id) { id_ = std::move(id); }
  void set_access(Access access) { access_ = access; }

  // Re-checks shape composition after layers were replaced.
  void validate();

  std::size_t parameter_count() const;

 private:
  std::string id_;
  Shape input_shape_;
  std::vector<Layer> layers_;
  std::vector<Shape> shapes_;
  std::size_t output_dim_ = 0;
  Access access_ = Access::whitebox;
  std::vector<LineageRecord> lineage_;
};

// Uniform [-k, k] with k = sqrt(1/fan_in) for every parameterized layer.
void init_weights(Model& model, std::uint64_t seed);
void init_layer(Layer& layer, std::uint64_t seed);

// Desk-scale architectures over [1, 16, 16] inputs:
//  convnetA: conv-relu-pool-conv-relu-dense-relu-dense-softmax
//  convnetB: conv-relu-conv-relu-conv-relu-dense-softmax
Model make_architecture(const std::string& arch, std::size_t num_classes, std::uint64_t seed,
                        std::string id, Shape input_shape = {1, 16, 16});
bool is_known_architecture(const std::string& arch);

}  // namespace ddv
