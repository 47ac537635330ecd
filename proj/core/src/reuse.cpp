#include "ddvkit/reuse.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>

#include "ddvkit/error.hpp"
#include "ddvkit/rng.hpp"

namespace ddv {

using nlohmann::json;

TrainOptions TrainRecipe::options(std::uint64_t seed) const {
  TrainOptions o;
  o.epochs = epochs;
  o.learning_rate = learning_rate;
  o.batch_size = batch_size;
  o.seed = seed;
  return o;
}

void to_json(json& j, const TrainRecipe& r) {
  j = json{{"epochs", r.epochs}, {"learning_rate", r.learning_rate}, {"batch_size", r.batch_size}};
}

void from_json(const json& j, TrainRecipe& r) {
  r.epochs = j.value("epochs", r.epochs);
  r.learning_rate = j.value("learning_rate", r.learning_rate);
  r.batch_size = j.value("batch_size", r.batch_size);
}

namespace {

std::string fmt_number(double v) {
  std::ostringstream os;
  os << v;
  return os.str();
}

Model derived(const Model& parent, Model child, const std::string& suffix, LineageRecord record) {
  child.set_id(parent.id() + "-" + suffix);
  auto lineage = parent.lineage();
  record.parent = parent.id();
  lineage.push_back(std::move(record));
  child.set_lineage(std::move(lineage));
  return child;
}

}  // namespace

Model train_from_scratch(const std::string& arch, const ShapesDataset& data, const TrainRecipe& recipe,
                         std::uint64_t seed, std::string id, const std::string& op) {
  Model m = make_architecture(arch, data.num_classes, derive_seed(seed, "init"), std::move(id));
  const auto [train_split, test_split] = data.split();
  m = train(std::move(m), train_split, recipe.options(derive_seed(seed, "sgd")));
  m.set_lineage({{op, "", json{{"arch", arch}, {"task", data.task_id}, {"recipe", recipe}}}});
  return m;
}

std::size_t transfer_trainable_layers(std::size_t param_layers, double fraction) {
  const auto k = static_cast<std::size_t>(std::ceil(fraction * static_cast<double>(param_layers) - 1e-9));
  return std::clamp<std::size_t>(k, 1, param_layers);
}

Model transfer(const Model& teacher, const ShapesDataset& data, double fraction,
               const TrainRecipe& recipe, std::uint64_t seed) {
  teacher.require_whitebox("transfer");
  if (!(fraction > 0.0 && fraction <= 1.0)) {
    throw InvalidArgument("tune fraction must lie in (0, 1], got " + fmt_number(fraction));
  }
  const auto idx = teacher.param_layer_indices();
  if (idx.empty()) throw InvalidArgument("teacher has no parameterized layers");
  const std::size_t head = idx.back();
  auto layers = teacher.layers();
  if (layers[head].kind != LayerKind::dense) throw InvalidArgument("teacher head must be dense");
  layers[head] = dense_layer(layers[head].in_features, data.num_classes);
  init_layer(layers[head], derive_seed(seed, "head"));
  Model student(teacher.id(), teacher.input_shape(), std::move(layers));

  const std::size_t tuned = transfer_trainable_layers(idx.size(), fraction);
  TrainOptions o = recipe.options(derive_seed(seed, "sgd"));
  o.trainable.assign(idx.size(), false);
  for (std::size_t p = idx.size() - tuned; p < idx.size(); ++p) o.trainable[p] = true;
  const auto [train_split, test_split] = data.split();
  student = train(std::move(student), train_split, o);
  return derived(teacher, std::move(student),
                 "transfer(" + data.task_id + "," + fmt_number(fraction) + ")",
                 {"transfer", "",
                  json{{"task", data.task_id}, {"fraction", fraction}, {"trained_layers", tuned},
                       {"recipe", recipe}}});
}

double weight_sparsity(const Model& model) {
  std::size_t total = 0, zeros = 0;
  for (const auto& l : model.layers()) {
    if (!l.has_params()) continue;
    total += l.weights.size();
    for (float w : l.weights.data()) zeros += w == 0.0f;
  }
  return total ? static_cast<double>(zeros) / static_cast<double>(total) : 0.0;
}

Model prune(const Model& model, double ratio, const LabeledData& finetune, const TrainRecipe& recipe,
            std::uint64_t seed) {
  model.require_whitebox("prune");
  if (!(ratio > 0.0 && ratio < 1.0)) {
    throw InvalidArgument("prune ratio must lie in (0, 1), got " + fmt_number(ratio));
  }
  const auto idx = model.param_layer_indices();
  struct Entry {
    float magnitude;
    std::uint32_t layer;
    std::uint32_t offset;
  };
  std::vector<Entry> all;
  for (std::size_t p = 0; p < idx.size(); ++p) {
    const auto w = model.layers()[idx[p]].weights.data();
    for (std::size_t k = 0; k < w.size(); ++k) {
      all.push_back({std::abs(w[k]), static_cast<std::uint32_t>(p), static_cast<std::uint32_t>(k)});
    }
  }
  const auto cut = static_cast<std::size_t>(std::llround(ratio * static_cast<double>(all.size())));
  const auto less = [](const Entry& a, const Entry& b) {
    if (a.magnitude != b.magnitude) return a.magnitude < b.magnitude;
    if (a.layer != b.layer) return a.layer < b.layer;
    return a.offset < b.offset;
  };
  if (cut > 0 && cut < all.size()) {
    std::nth_element(all.begin(), all.begin() + static_cast<std::ptrdiff_t>(cut), all.end(), less);
  }
  std::vector<std::vector<std::uint8_t>> masks(idx.size());
  for (std::size_t p = 0; p < idx.size(); ++p) {
    masks[p].assign(model.layers()[idx[p]].weights.size(), 1);
  }
  for (std::size_t k = 0; k < cut; ++k) masks[all[k].layer][all[k].offset] = 0;

  Model pruned = model;
  for (std::size_t p = 0; p < idx.size(); ++p) {
    auto& layer = pruned.mutable_layers()[idx[p]];
    auto w = layer.weights.data();
    for (std::size_t k = 0; k < w.size(); ++k) {
      if (!masks[p][k]) w[k] = 0.0f;
    }
    layer.quant.reset();
  }
  if (recipe.epochs > 0) {
    TrainOptions o = recipe.options(derive_seed(seed, "sgd"));
    o.weight_masks = std::move(masks);
    pruned = train(std::move(pruned), finetune, o);
  }
  return derived(model, std::move(pruned), "prune(" + fmt_number(ratio) + ")",
                 {"prune", "",
                  json{{"ratio", ratio}, {"finetune", recipe}, {"sparsity", weight_sparsity(pruned)}}});
}

QuantParams quantize_weights(std::span<const float> weights, bool* constant) {
  QuantParams q;
  if (weights.empty()) return q;
  const auto [lo_it, hi_it] = std::minmax_element(weights.begin(), weights.end());
  const double lo = *lo_it;
  const double hi = *hi_it;
  q.scale = (hi - lo) / 254.0;
  if (constant) *constant = q.scale == 0.0;
  if (q.scale == 0.0) q.scale = 1.0;
  q.zero_point = static_cast<std::int32_t>(std::clamp(std::round(-127.0 - lo / q.scale), -128.0, 127.0));
  q.codes.reserve(weights.size());
  for (float w : weights) {
    const double code = std::round(static_cast<double>(w) / q.scale) + q.zero_point;
    q.codes.push_back(static_cast<std::int8_t>(std::clamp(code, -128.0, 127.0)));
  }
  return q;
}

namespace {
bool on_grid(const Layer& layer) {
  const auto w = layer.weights.data();
  if (layer.quant->codes.size() != w.size()) return false;
  for (std::size_t k = 0; k < w.size(); ++k) {
    if (w[k] != layer.quant->dequantize(layer.quant->codes[k])) return false;
  }
  return true;
}
}  // namespace

Model quantize(const Model& model) {
  model.require_whitebox("quantize");
  Model q = model;
  std::vector<std::size_t> constant_layers;
  json scales = json::array();
  for (std::size_t i : q.param_layer_indices()) {
    auto& layer = q.mutable_layers()[i];
    // Already on its own grid: keep the stored codes rather than refitting min/max.
    if (layer.quant && on_grid(layer)) {
      scales.push_back({{"layer", i}, {"scale", layer.quant->scale}, {"zero_point", layer.quant->zero_point}});
      continue;
    }
    bool constant = false;
    QuantParams params = quantize_weights(layer.weights.data(), &constant);
    if (constant) constant_layers.push_back(i);
    auto w = layer.weights.data();
    for (std::size_t k = 0; k < w.size(); ++k) w[k] = params.dequantize(params.codes[k]);
    scales.push_back({{"layer", i}, {"scale", params.scale}, {"zero_point", params.zero_point}});
    layer.quant = std::move(params);
  }
  json params{{"bits", 8}, {"layers", std::move(scales)}};
  if (!constant_layers.empty()) params["constant_layers_scale_forced_to_1"] = constant_layers;
  return derived(model, std::move(q), "quant", {"quantize", "", std::move(params)});
}

Model distill(const Model& teacher, const std::string& student_arch, const ShapesDataset& data,
              const TrainRecipe& recipe, std::uint64_t seed, const DistillOptions& options) {
  teacher.require_whitebox("distill");
  if (!(options.temperature > 0.0)) throw InvalidArgument("distillation temperature must be positive");
  Model student = make_architecture(student_arch, teacher.output_dim(), derive_seed(seed, "init"),
                                    teacher.id(), teacher.input_shape());
  const auto [train_split, test_split] = data.split();
  const Tensor& inputs = train_split.inputs;
  const Tensor teacher_logits = teacher.forward_until(inputs, teacher.logits_index());

  const auto t_feat_idx = teacher.last_conv_index();
  const auto s_feat_idx = student.last_conv_index();
  const bool feature_term = options.feature_weight > 0.0 && t_feat_idx && s_feat_idx &&
                            teacher.activation_shapes()[*t_feat_idx] ==
                                student.activation_shapes()[*s_feat_idx];
  Tensor teacher_features;
  if (feature_term) teacher_features = teacher.forward_until(inputs, *t_feat_idx);

  const double T = options.temperature;
  const LogitLoss kd = [&](std::size_t s, std::span<const float> logits, std::span<float> grad) {
    const auto tl = teacher_logits.row(s);
    const std::size_t k = logits.size();
    std::vector<double> ps(k), pt(k);
    const double ms = *std::max_element(logits.begin(), logits.end());
    const double mt = *std::max_element(tl.begin(), tl.end());
    double zs = 0.0, zt = 0.0;
    for (std::size_t i = 0; i < k; ++i) {
      zs += ps[i] = std::exp((logits[i] - ms) / T);
      zt += pt[i] = std::exp((tl[i] - mt) / T);
    }
    double loss = 0.0;
    for (std::size_t i = 0; i < k; ++i) {
      ps[i] /= zs;
      pt[i] /= zt;
      if (pt[i] > 0.0) loss += pt[i] * (std::log(pt[i]) - std::log(std::max(ps[i], 1e-300)));
      // d/dz of T^2 * KL(pt || ps)
      grad[i] = static_cast<float>(T * (ps[i] - pt[i]));
    }
    return T * T * loss;
  };
  FeatureLoss feat;
  if (feature_term) {
    feat.layer = *s_feat_idx;
    // Squared distance of the channel vectors, averaged over spatial positions.
    const std::size_t positions = numel(student.activation_shapes()[*s_feat_idx]) /
                                  student.activation_shapes()[*s_feat_idx].front();
    feat.loss = [&, positions](std::size_t s, std::span<const float> f, std::span<float> grad) {
      const auto target = teacher_features.row(s);
      const double scale = options.feature_weight / static_cast<double>(positions);
      double loss = 0.0;
      for (std::size_t i = 0; i < f.size(); ++i) {
        const double d = static_cast<double>(f[i]) - target[i];
        loss += scale * d * d;
        grad[i] = static_cast<float>(2.0 * scale * d);
      }
      return loss;
    };
  }
  student = fit(std::move(student), inputs, kd, recipe.options(derive_seed(seed, "sgd")),
                feature_term ? &feat : nullptr);
  return derived(teacher, std::move(student), "distill(" + student_arch + ")",
                 {"distill", "",
                  json{{"student_arch", student_arch},
                       {"temperature", T},
                       {"feature_weight", options.feature_weight},
                       {"feature_loss", feature_term},
                       {"task", data.task_id},
                       {"recipe", recipe}}});
}

Model steal(const Classifier& teacher, const std::string& student_arch, const Tensor& query_set,
            const TrainRecipe& recipe, std::uint64_t seed, const std::string& task_id) {
  LabeledData data{query_set, predict_labels(teacher, query_set)};
  Model student = make_architecture(student_arch, teacher.output_dim(), derive_seed(seed, "init"),
                                    teacher.id(), teacher.input_shape());
  student = train(std::move(student), data, recipe.options(derive_seed(seed, "sgd")));
  LineageRecord record{"steal", "",
                       json{{"student_arch", student_arch},
                            {"queries", query_set.rows()},
                            {"task", task_id},
                            {"recipe", recipe}}};
  if (const auto* m = dynamic_cast<const Model*>(&teacher)) {
    return derived(*m, std::move(student), "steal(" + student_arch + ")", std::move(record));
  }
  student.set_id(teacher.id() + "-steal(" + student_arch + ")");
  record.parent = teacher.id();
  student.set_lineage({std::move(record)});
  return student;
}

}  // namespace ddv
