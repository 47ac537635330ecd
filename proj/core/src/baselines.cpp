#include "ddvkit/baselines.hpp"

#include <cmath>

#include "ddvkit/container.hpp"
#include "ddvkit/error.hpp"
#include "ddvkit/runtime.hpp"
#include "ddvkit/similarity.hpp"

namespace ddv {

using nlohmann::json;

const Model* as_whitebox(const Classifier& c) {
  const auto* m = dynamic_cast<const Model*>(&c);
  return (m && m->access() == Access::whitebox) ? m : nullptr;
}

namespace {

bool close_enough(const Tensor& a, const Tensor& b, double tolerance) {
  if (tolerance == 0.0) return a.identical(b);
  if (a.shape() != b.shape()) return false;
  for (std::size_t i = 0; i < a.size(); ++i) {
    if (!(std::fabs(static_cast<double>(a[i]) - b[i]) <= tolerance)) return false;
  }
  return true;
}

// Same layer sequence; the head may differ only in its class count.
bool same_architecture(const Model& a, const Model& b) {
  const auto& la = a.layers();
  const auto& lb = b.layers();
  if (la.size() != lb.size() || a.input_shape() != b.input_shape()) return false;
  const auto head_a = a.logits_index();
  const auto head_b = b.logits_index();
  for (std::size_t i = 0; i < la.size(); ++i) {
    if (i == head_a && i == head_b && la[i].kind == LayerKind::dense && lb[i].kind == LayerKind::dense) {
      if (la[i].in_features != lb[i].in_features) return false;
      continue;
    }
    if (!la[i].same_structure(lb[i])) return false;
  }
  return true;
}

}  // namespace

BaselineScore weight_compare(const Classifier& f, const Classifier& g, double tolerance) {
  const Model* mf = as_whitebox(f);
  const Model* mg = as_whitebox(g);
  if (!mf || !mg) return BaselineScore::infeasible("weights not accessible (black-box model)");
  if (!same_architecture(*mf, *mg)) return BaselineScore::infeasible("architectures differ");
  const auto lf = mf->param_layer_indices();
  const auto lg = mg->param_layer_indices();
  const std::size_t count = std::min(lf.size(), lg.size());
  if (count == 0) return BaselineScore::infeasible("no parameterized layers");
  std::size_t same = 0;
  for (std::size_t k = 0; k < count; ++k) {
    const Layer& a = mf->layers()[lf[k]];
    const Layer& b = mg->layers()[lg[k]];
    if (a.same_structure(b) && close_enough(a.weights, b.weights, tolerance) &&
        close_enough(a.bias, b.bias, tolerance)) {
      ++same;
    }
  }
  return BaselineScore::ok(static_cast<double>(same) / static_cast<double>(count));
}

BaselineScore feature_compare(const Classifier& f, const Classifier& g, const Tensor& inputs) {
  const Model* mf = as_whitebox(f);
  const Model* mg = as_whitebox(g);
  if (!mf || !mg) return BaselineScore::infeasible("features not accessible (black-box model)");
  const auto cf = mf->last_conv_index();
  const auto cg = mg->last_conv_index();
  if (!cf || !cg) return BaselineScore::infeasible("model has no conv layer");
  const auto shapes_f = mf->activation_shapes();
  const auto shapes_g = mg->activation_shapes();
  if (shapes_f[*cf] != shapes_g[*cg]) {
    return BaselineScore::infeasible("feature shapes differ: " + to_string(shapes_f[*cf]) + " vs " +
                                     to_string(shapes_g[*cg]));
  }
  if (inputs.empty()) throw InvalidArgument("feature comparison needs inputs");
  const Tensor a = mf->forward_until(inputs, *cf);
  const Tensor b = mg->forward_until(inputs, *cg);
  double sum = 0.0;
  for (std::size_t i = 0; i < a.rows(); ++i) sum += 1.0 - cosine_distance(a.row(i), b.row(i));
  return BaselineScore::ok(sum / static_cast<double>(a.rows()));
}

Fingerprint fingerprint(const Classifier& f, const InputPairSet& pairs) {
  Fingerprint fp;
  fp.inputs = pairs.adversarial;
  fp.labels = predict_labels(f, pairs.adversarial);
  fp.model_id = f.id();
  fp.label_space = f.output_dim();
  return fp;
}

BaselineScore fingerprint_match(const Fingerprint& fp, const Classifier& g) {
  if (g.output_dim() != fp.label_space) {
    return BaselineScore::infeasible("label spaces differ (" + std::to_string(fp.label_space) + " vs " +
                                     std::to_string(g.output_dim()) + " classes)");
  }
  if (fp.labels.empty()) throw InvalidArgument("empty fingerprint");
  const auto labels = predict_labels(g, fp.inputs);
  std::size_t agree = 0;
  for (std::size_t i = 0; i < labels.size(); ++i) agree += labels[i] == fp.labels[i];
  return BaselineScore::ok(static_cast<double>(agree) / static_cast<double>(labels.size()));
}

void save_fingerprint(const Fingerprint& fp, const std::filesystem::path& path) {
  Container c;
  c.header = json{{"format", kFingerprintFormat},
                  {"model_id", fp.model_id},
                  {"shape", fp.inputs.shape()},
                  {"label_space", fp.label_space},
                  {"labels", fp.labels}};
  c.blob = fp.inputs.values();
  write_container(path, c);
}

Fingerprint load_fingerprint(const std::filesystem::path& path) {
  const Container c = read_container(path);
  if (c.header.value("format", std::string{}) != kFingerprintFormat) {
    throw ParseError("'" + path.string() + "' is not a fingerprint file", 0);
  }
  try {
    Fingerprint fp;
    fp.model_id = c.header.at("model_id").get<std::string>();
    fp.label_space = c.header.at("label_space").get<std::size_t>();
    fp.labels = c.header.at("labels").get<std::vector<int>>();
    fp.inputs = Tensor(c.header.at("shape").get<Shape>(), c.blob);
    if (fp.labels.size() != fp.inputs.rows()) throw ParseError("fingerprint label count mismatch", 0);
    for (int l : fp.labels) {
      if (l < 0 || static_cast<std::size_t>(l) >= fp.label_space) {
        throw ParseError("fingerprint label out of range", 0);
      }
    }
    return fp;
  } catch (const json::exception& e) {
    throw ParseError(std::string("bad fingerprint header: ") + e.what(), 0);
  } catch (const ShapeError& e) {
    throw ParseError(std::string("bad fingerprint payload: ") + e.what(), 0);
  }
}

}  // namespace ddv
