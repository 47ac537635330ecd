#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

#include "ddvkit/model.hpp"

namespace ddv::detail {

// Activations of one sample: acts[0] is the input, acts[i + 1] the output of
// layer i. argmax[i] holds the winning input offset per maxpool output.
struct Trace {
  std::vector<std::vector<float>> acts;
  std::vector<std::vector<std::uint32_t>> argmax;
};

// Parameter gradients, one slot per layer (empty for parameterless layers).
struct ParamGrads {
  std::vector<std::vector<double>> weights;
  std::vector<std::vector<double>> bias;

  void reset(const Model& model);
};

void forward_sample(const Model& model, std::span<const float> x, std::size_t last, Trace& trace);

struct Injection {
  std::size_t layer = 0;           // gradient w.r.t. the output of this layer
  std::span<const float> grad;
};

// Back-propagates `grad_top` (gradient w.r.t. the output of layer `top`).
// `trainable` (indexed by layer) limits which layers accumulate parameter
// gradients; `dinput` receives d/d(input) when non-empty.
void backward_sample(const Model& model, const Trace& trace, std::size_t top,
                     std::span<const float> grad_top, ParamGrads* grads,
                     const std::vector<bool>* trainable, std::span<float> dinput,
                     const Injection* injection = nullptr);

void check_batch(const Model& model, const Tensor& batch);

Tensor run_forward(const Model& model, const Tensor& batch, std::size_t last);

}  // namespace ddv::detail
