#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "ddvkit/model.hpp"
#include "ddvkit/probe.hpp"

namespace ddv {

/// A baseline similarity, or the reason it cannot be computed for the pair.
struct BaselineScore {
  bool feasible = false;
  double value = 0.0;
  std::string reason;

  static BaselineScore ok(double v) { return {true, v, {}}; }
  static BaselineScore infeasible(std::string why) { return {false, 0.0, std::move(why)}; }
};

// Needs model internals; black-box classifiers are infeasible.
const Model* as_whitebox(const Classifier& c);

/// Fraction of positionally matched parameterized layers that are identical
/// (same structure, parameters equal), over the smaller layer count.
/// tolerance 0 means bit-exact; otherwise |a - b| <= tolerance per value.
/// Infeasible when the layer sequences differ (the output head may differ in
/// its class count).
BaselineScore weight_compare(const Classifier& f, const Classifier& g, double tolerance = 0.0);

/// Mean cosine similarity of the flattened last-conv outputs over `inputs`.
BaselineScore feature_compare(const Classifier& f, const Classifier& g, const Tensor& inputs);

inline constexpr std::string_view kFingerprintFormat = "ddvkit-fingerprint/1";

struct Fingerprint {
  Tensor inputs;
  std::vector<int> labels;
  std::string model_id;
  std::size_t label_space = 0;
};

Fingerprint fingerprint(const Classifier& f, const InputPairSet& pairs);
BaselineScore fingerprint_match(const Fingerprint& fp, const Classifier& g);

void save_fingerprint(const Fingerprint& fp, const std::filesystem::path& path);
Fingerprint load_fingerprint(const std::filesystem::path& path);

}  // namespace ddv
