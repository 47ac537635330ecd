#pragma once

#include <cstdint>
#include <string>

#include "ddvkit/dataset.hpp"
#include "ddvkit/model.hpp"
#include "ddvkit/runtime.hpp"

#include <nlohmann/json.hpp>

namespace ddv {

struct TrainRecipe {
  std::size_t epochs = 10;
  double learning_rate = 0.05;
  std::size_t batch_size = 32;

  TrainOptions options(std::uint64_t seed) const;
};

void to_json(nlohmann::json& j, const TrainRecipe& r);
void from_json(const nlohmann::json& j, TrainRecipe& r);

// Trains a fresh `arch` model from scratch; lineage gets a root record `op`
// ("train" for pretrained sources, "retrain" for reference models).
Model train_from_scratch(const std::string& arch, const ShapesDataset& data, const TrainRecipe& recipe,
                         std::uint64_t seed, std::string id, const std::string& op = "train");

/// Fine-tuning transfer: the head is replaced by a fresh layer sized for
/// `data`'s classes and the last max(1, ceil(fraction * L)) of the L
/// parameterized layers are trained; all other layers stay bit-identical.
Model transfer(const Model& teacher, const ShapesDataset& data, double fraction,
               const TrainRecipe& recipe, std::uint64_t seed);

std::size_t transfer_trainable_layers(std::size_t param_layers, double fraction);

/// Global magnitude pruning of conv/dense weights followed by masked
/// fine-tuning on `finetune` (skipped when recipe.epochs == 0).
Model prune(const Model& model, double ratio, const LabeledData& finetune, const TrainRecipe& recipe,
            std::uint64_t seed);

// Fraction of conv/dense weights that are exactly zero.
double weight_sparsity(const Model& model);

/// Post-training per-layer affine int8 weight quantization (codes in
/// [-127, 127] before zero-point shift, clamped to int8).
Model quantize(const Model& model);
QuantParams quantize_weights(std::span<const float> weights, bool* constant = nullptr);

struct DistillOptions {
  double temperature = 4.0;
  double feature_weight = 0.5;
};

/// Trains a freshly initialized `student_arch` on the teacher's softened
/// outputs, plus an MSE term on the last conv feature map when the teacher's
/// and student's shapes agree.
Model distill(const Model& teacher, const std::string& student_arch, const ShapesDataset& data,
              const TrainRecipe& recipe, std::uint64_t seed, const DistillOptions& options = {});

/// Trains a fresh `student_arch` on the teacher's hard labels for
/// `query_set`. The teacher is queried once per image, in one batch.
Model steal(const Classifier& teacher, const std::string& student_arch, const Tensor& query_set,
            const TrainRecipe& recipe, std::uint64_t seed, const std::string& task_id);

}  // namespace ddv
