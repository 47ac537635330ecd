#pragma once

#include <optional>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "ddvkit/model.hpp"
#include "ddvkit/probe.hpp"

namespace ddv {

/// Decision distance vector of one model on one probe set.
struct Ddv {
  std::vector<double> values;
  std::string pairset_id;
  std::string model_id;
  // Set when some output vector was all-zero (see cosine_distance).
  bool zero_output = false;
};

/// 1 - cos(a, b). Zero vectors: distance 0 if both are zero, 1 if only one
/// is; `degenerate` is set in either case.
double cosine_distance(std::span<const float> a, std::span<const float> b, bool* degenerate = nullptr);

/// One batched forward over the seeds and one over the adversarial inputs.
Ddv compute_ddv(const Classifier& f, const InputPairSet& pairs);

/// Cosine similarity of two DDVs from the same probe set. Two all-zero DDVs
/// are similarity 1, one all-zero DDV gives 0 (`degenerate` is set).
double similarity(const Ddv& a, const Ddv& b, bool* degenerate = nullptr);

/// Max similarity to the target over the references; empty -> nullopt.
std::optional<double> calibrate_threshold(const Ddv& target, const std::vector<Ddv>& references);
std::optional<double> calibrate_threshold(const Classifier& target,
                                          const std::vector<const Classifier*>& references,
                                          const InputPairSet& pairs);

enum class Verdict { reused, not_reused, undecided };
std::string to_string(Verdict v);
Verdict verdict_from_string(const std::string& s);

struct ComparisonReport {
  std::string target_id;
  std::string suspect_id;
  double similarity = 0.0;
  std::optional<double> threshold;
  Verdict verdict = Verdict::undecided;
  std::string pairset_id;
  GenConfig config;
  std::vector<std::string> reference_ids;
  std::vector<std::string> notes;  // degenerate-case flags

  nlohmann::json to_json() const;
  static ComparisonReport from_json(const nlohmann::json& j);
};

Verdict decide(double similarity, const std::optional<double>& threshold);

/// Picks the white-box model as the probe generator; if neither (or both)
/// are white-box the first argument is used. Returns 0 or 1.
std::size_t choose_target(const Classifier& a, const Classifier& b);

/// Full pipeline. When `pairs` is null a probe set is generated on the
/// target from `seeds` per cfg.mode; otherwise the given set is reused.
ComparisonReport compare(const Classifier& target, const Classifier& suspect, const Tensor& seeds,
                         const GenConfig& cfg, const std::vector<const Classifier*>& references = {},
                         const InputPairSet* pairs = nullptr);

}  // namespace ddv
