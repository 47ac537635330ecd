#include "ddvkit/runtime.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "ddvkit/error.hpp"
#include "ddvkit/rng.hpp"
#include "kernels.hpp"

namespace ddv {

Tensor input_gradient(const Model& model, const Tensor& x, const OutputObjective& objective,
                      double* objective_value) {
  model.require_whitebox("input_gradient");
  const bool single = x.shape() == model.input_shape();
  const Tensor batch = single ? x.reshaped(batched(1, x.shape())) : x;
  detail::check_batch(model, batch);

  const std::size_t n = batch.rows();
  const std::size_t top = model.layers().size() - 1;
  std::vector<detail::Trace> traces(n);
  Tensor out({n, model.output_dim()});
  for (std::size_t s = 0; s < n; ++s) {
    detail::forward_sample(model, batch.row(s), top, traces[s]);
    std::copy(traces[s].acts.back().begin(), traces[s].acts.back().end(), out.row(s).begin());
  }
  Tensor grad_out(out.shape());
  const double value = objective(out, grad_out);
  if (objective_value) *objective_value = value;

  Tensor grad(batch.shape());
  for (std::size_t s = 0; s < n; ++s) {
    detail::backward_sample(model, traces[s], top, grad_out.row(s), nullptr, nullptr,
                            grad.row(s));
  }
  return single ? grad.reshaped(x.shape()) : grad;
}

namespace {

void validate_options(const Model& model, std::size_t n, const TrainOptions& o) {
  if (n == 0) throw InvalidArgument("training set is empty");
  if (!std::isfinite(o.learning_rate) || o.learning_rate < 0.0) {
    throw InvalidArgument("learning rate must be a finite non-negative number");
  }
  if (o.batch_size == 0) throw InvalidArgument("batch size must be positive");
  const std::size_t params = model.param_layer_count();
  if (!o.trainable.empty() && o.trainable.size() != params) {
    throw InvalidArgument("trainable mask has " + std::to_string(o.trainable.size()) +
                          " entries for " + std::to_string(params) + " parameterized layers");
  }
  if (!o.weight_masks.empty() && o.weight_masks.size() != params) {
    throw InvalidArgument("weight mask count does not match parameterized layers");
  }
}

}  // namespace

Model fit(Model model, const Tensor& inputs, const LogitLoss& loss, const TrainOptions& options,
          const FeatureLoss* feature_loss, TrainLog* log) {
  model.require_whitebox("train");
  detail::check_batch(model, inputs);
  const std::size_t n = inputs.rows();
  validate_options(model, n, options);

  const auto param_idx = model.param_layer_indices();
  std::vector<bool> trainable(model.layers().size(), false);
  std::vector<const std::vector<std::uint8_t>*> masks(model.layers().size(), nullptr);
  bool any_trainable = false;
  for (std::size_t p = 0; p < param_idx.size(); ++p) {
    const bool t = options.trainable.empty() || options.trainable[p];
    trainable[param_idx[p]] = t;
    any_trainable = any_trainable || t;
    if (!options.weight_masks.empty()) {
      const auto& m = options.weight_masks[p];
      if (m.size() != model.layers()[param_idx[p]].weights.size()) {
        throw InvalidArgument("weight mask size mismatch at layer " + std::to_string(param_idx[p]));
      }
      masks[param_idx[p]] = &m;
    }
  }
  const std::size_t logit_layer = model.logits_index();
  if (feature_loss && feature_loss->layer > logit_layer) {
    throw InvalidArgument("feature loss layer lies above the logits");
  }
  const bool update = any_trainable && options.learning_rate > 0.0;

  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  Rng rng(options.seed);
  detail::Trace trace;
  detail::ParamGrads grads;
  std::vector<float> dlogits(model.activation_shapes()[logit_layer][0]);
  std::vector<float> dfeature;

  for (std::size_t epoch = 0; epoch < options.epochs; ++epoch) {
    rng.shuffle(order);
    double epoch_loss = 0.0;
    for (std::size_t start = 0; start < n; start += options.batch_size) {
      const std::size_t end = std::min(n, start + options.batch_size);
      grads.reset(model);
      for (std::size_t k = start; k < end; ++k) {
        const std::size_t s = order[k];
        detail::forward_sample(model, inputs.row(s), logit_layer, trace);
        std::fill(dlogits.begin(), dlogits.end(), 0.0f);
        epoch_loss += loss(s, trace.acts[logit_layer + 1], dlogits);
        detail::Injection injection;
        const detail::Injection* inj = nullptr;
        if (feature_loss) {
          const auto& feat = trace.acts[feature_loss->layer + 1];
          dfeature.assign(feat.size(), 0.0f);
          epoch_loss += feature_loss->loss(s, feat, dfeature);
          injection = {feature_loss->layer, dfeature};
          inj = &injection;
        }
        if (update) {
          detail::backward_sample(model, trace, logit_layer, dlogits, &grads, &trainable, {}, inj);
        }
      }
      if (!update) continue;
      const double step = options.learning_rate / static_cast<double>(end - start);
      auto& layers = model.mutable_layers();
      for (std::size_t i : param_idx) {
        if (!trainable[i]) continue;
        auto w = layers[i].weights.data();
        auto b = layers[i].bias.data();
        const auto* mask = masks[i];
        for (std::size_t k = 0; k < w.size(); ++k) {
          if (mask && !(*mask)[k]) {
            w[k] = 0.0f;
            continue;
          }
          w[k] = static_cast<float>(w[k] - step * grads.weights[i][k]);
        }
        for (std::size_t k = 0; k < b.size(); ++k) {
          b[k] = static_cast<float>(b[k] - step * grads.bias[i][k]);
        }
        layers[i].quant.reset();
      }
    }
    if (log) log->epoch_loss.push_back(epoch_loss / static_cast<double>(n));
  }
  return model;
}

Model train(Model model, const LabeledData& data, const TrainOptions& options, TrainLog* log) {
  if (data.labels.size() != data.inputs.rows()) {
    throw InvalidArgument("label count does not match input count");
  }
  const std::size_t classes = model.output_dim();
  for (int y : data.labels) {
    if (y < 0 || static_cast<std::size_t>(y) >= classes) {
      throw InvalidArgument("label " + std::to_string(y) + " outside [0," +
                            std::to_string(classes) + ")");
    }
  }
  const LogitLoss ce = [&](std::size_t s, std::span<const float> logits, std::span<float> grad) {
    const float mx = *std::max_element(logits.begin(), logits.end());
    double sum = 0.0;
    for (float z : logits) sum += std::exp(static_cast<double>(z) - mx);
    const auto y = static_cast<std::size_t>(data.labels[s]);
    for (std::size_t k = 0; k < logits.size(); ++k) {
      const double p = std::exp(static_cast<double>(logits[k]) - mx) / sum;
      grad[k] = static_cast<float>(p - (k == y ? 1.0 : 0.0));
    }
    return std::log(sum) - (static_cast<double>(logits[y]) - mx);
  };
  return fit(std::move(model), data.inputs, ce, options, nullptr, log);
}

std::vector<int> predict_labels(const Classifier& model, const Tensor& inputs) {
  const Tensor out = model.forward(inputs);
  std::vector<int> labels(out.rows());
  for (std::size_t i = 0; i < out.rows(); ++i) {
    const auto r = out.row(i);
    labels[i] = static_cast<int>(std::max_element(r.begin(), r.end()) - r.begin());
  }
  return labels;
}

double accuracy(const Classifier& model, const LabeledData& data) {
  const auto pred = predict_labels(model, data.inputs);
  if (pred.empty()) return 0.0;
  std::size_t hit = 0;
  for (std::size_t i = 0; i < pred.size(); ++i) hit += pred[i] == data.labels[i];
  return static_cast<double>(hit) / static_cast<double>(pred.size());
}

double agreement(const Classifier& a, const Classifier& b, const Tensor& inputs) {
  const auto pa = predict_labels(a, inputs);
  const auto pb = predict_labels(b, inputs);
  if (pa.empty()) return 0.0;
  std::size_t same = 0;
  for (std::size_t i = 0; i < pa.size(); ++i) same += pa[i] == pb[i];
  return static_cast<double>(same) / static_cast<double>(pa.size());
}

}  // namespace ddv
