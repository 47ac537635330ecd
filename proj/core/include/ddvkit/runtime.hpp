#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <span>
#include <vector>

#include "ddvkit/model.hpp"
#include "ddvkit/tensor.hpp"

namespace ddv {

/// Scalar objective over a whole output batch [n, output_dim]. Returns the
/// objective value and writes d(objective)/d(output) into `grad` (same shape,
/// zero-initialized by the caller).
using OutputObjective = std::function<double(const Tensor& output, Tensor& grad)>;

/// d(objective)/d(x). `x` is either one sample (input_shape) or a batch
/// ([n] + input_shape); the result has the same shape as `x`.
Tensor input_gradient(const Model& model, const Tensor& x, const OutputObjective& objective,
                      double* objective_value = nullptr);

struct LabeledData {
  Tensor inputs;                 // [n] + input_shape
  std::vector<int> labels;       // n entries
};

/// Per-sample loss on the logits (pre-softmax output). Writes dL/dlogits.
using LogitLoss =
    std::function<double(std::size_t sample, std::span<const float> logits, std::span<float> grad)>;

/// Optional extra loss attached to an intermediate activation.
struct FeatureLoss {
  std::size_t layer = 0;
  std::function<double(std::size_t sample, std::span<const float> feature, std::span<float> grad)>
      loss;
};

struct TrainOptions {
  std::size_t epochs = 10;
  double learning_rate = 0.05;
  std::size_t batch_size = 32;
  // One flag per parameterized layer; empty means all trainable.
  std::vector<bool> trainable;
  // One mask per parameterized layer over its weights (1 = keep). Masked
  // positions are held at exactly zero. Empty means unmasked.
  std::vector<std::vector<std::uint8_t>> weight_masks;
  std::uint64_t seed = 0;
};

struct TrainLog {
  std::vector<double> epoch_loss;  // mean loss per epoch
};

/// Minibatch SGD on an arbitrary logit loss. Operates on a private copy.
Model fit(Model model, const Tensor& inputs, const LogitLoss& loss, const TrainOptions& options,
          const FeatureLoss* feature_loss = nullptr, TrainLog* log = nullptr);

/// Cross-entropy training on labeled data.
Model train(Model model, const LabeledData& data, const TrainOptions& options,
            TrainLog* log = nullptr);

std::vector<int> predict_labels(const Classifier& model, const Tensor& inputs);
double accuracy(const Classifier& model, const LabeledData& data);
double agreement(const Classifier& a, const Classifier& b, const Tensor& inputs);

}  // namespace ddv
