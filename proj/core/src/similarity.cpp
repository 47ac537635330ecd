#include "ddvkit/similarity.hpp"

#include <algorithm>
#include <cmath>

#include "ddvkit/error.hpp"
#include "ddvkit/rng.hpp"
#include "ddvkit/version.hpp"

namespace ddv {

using nlohmann::json;

double cosine_distance(std::span<const float> a, std::span<const float> b, bool* degenerate) {
  if (a.size() != b.size() || a.empty()) {
    throw ShapeError("cosine distance needs equal non-empty vectors (" + std::to_string(a.size()) +
                     " vs " + std::to_string(b.size()) + ")");
  }
  if (std::equal(a.begin(), a.end(), b.begin())) {
    // identical rows are distance 0 exactly, unless both are zero (flagged below)
    if (std::any_of(a.begin(), a.end(), [](float v) { return v != 0.0f; })) return 0.0;
  }
  const double na = std::sqrt(dot(a, a));
  const double nb = std::sqrt(dot(b, b));
  if (na == 0.0 || nb == 0.0) {
    if (degenerate) *degenerate = true;
    return (na == 0.0 && nb == 0.0) ? 0.0 : 1.0;
  }
  const double c = std::clamp(dot(a, b) / (na * nb), -1.0, 1.0);
  return 1.0 - c;
}

Ddv compute_ddv(const Classifier& f, const InputPairSet& pairs) {
  const Shape expect = batched(pairs.size(), f.input_shape());
  if (pairs.seeds.shape() != expect || pairs.adversarial.shape() != expect) {
    throw ShapeError("probe inputs " + to_string(pairs.seeds.shape()) + " do not match model '" + f.id() +
                     "' input " + to_string(f.input_shape()));
  }
  const Tensor y = f.forward(pairs.seeds);
  const Tensor y_adv = f.forward(pairs.adversarial);
  Ddv d;
  d.pairset_id = pairs.id;
  d.model_id = f.id();
  d.values.resize(pairs.size());
  for (std::size_t i = 0; i < pairs.size(); ++i) {
    bool degenerate = false;
    d.values[i] = cosine_distance(y.row(i), y_adv.row(i), &degenerate);
    d.zero_output = d.zero_output || degenerate;
  }
  return d;
}

double similarity(const Ddv& a, const Ddv& b, bool* degenerate) {
  if (a.pairset_id != b.pairset_id) {
    throw InvalidArgument("DDVs come from different probe sets ('" + a.pairset_id + "' vs '" +
                          b.pairset_id + "') and are not comparable");
  }
  if (a.values.size() != b.values.size()) throw ShapeError("DDV lengths differ");
  double ab = 0.0, aa = 0.0, bb = 0.0;
  for (std::size_t i = 0; i < a.values.size(); ++i) {
    ab += a.values[i] * b.values[i];
    aa += a.values[i] * a.values[i];
    bb += b.values[i] * b.values[i];
  }
  if (aa == 0.0 || bb == 0.0) {
    if (degenerate) *degenerate = true;
    return (aa == 0.0 && bb == 0.0) ? 1.0 : 0.0;
  }
  return std::clamp(ab / (std::sqrt(aa) * std::sqrt(bb)), -1.0, 1.0);
}

std::optional<double> calibrate_threshold(const Ddv& target, const std::vector<Ddv>& references) {
  std::optional<double> best;
  for (const auto& r : references) {
    const double s = similarity(target, r);
    if (!best || s > *best) best = s;
  }
  return best;
}

std::optional<double> calibrate_threshold(const Classifier& target,
                                          const std::vector<const Classifier*>& references,
                                          const InputPairSet& pairs) {
  const Ddv t = compute_ddv(target, pairs);
  std::vector<Ddv> refs;
  refs.reserve(references.size());
  for (const Classifier* r : references) refs.push_back(compute_ddv(*r, pairs));
  return calibrate_threshold(t, refs);
}

std::string to_string(Verdict v) {
  switch (v) {
    case Verdict::reused: return "reused";
    case Verdict::not_reused: return "not_reused";
    case Verdict::undecided: return "undecided";
  }
  return "undecided";
}

Verdict verdict_from_string(const std::string& s) {
  if (s == "reused") return Verdict::reused;
  if (s == "not_reused") return Verdict::not_reused;
  if (s == "undecided") return Verdict::undecided;
  throw ParseError("unknown verdict '" + s + "'", 0);
}

Verdict decide(double similarity, const std::optional<double>& threshold) {
  if (!threshold) return Verdict::undecided;
  return similarity > *threshold ? Verdict::reused : Verdict::not_reused;
}

json ComparisonReport::to_json() const {
  json j{{"target_id", target_id},
         {"suspect_id", suspect_id},
         {"similarity", similarity},
         {"threshold", threshold ? json(*threshold) : json(nullptr)},
         {"verdict", to_string(verdict)},
         {"pairset_id", pairset_id},
         {"config", config.to_json()},
         {"config_hash", hex64(config.hash())},
         {"reference_ids", reference_ids},
         {"notes", notes},
         {"tool_version", std::string(tool_version())}};
  return j;
}

ComparisonReport ComparisonReport::from_json(const json& j) {
  ComparisonReport r;
  try {
    r.target_id = j.at("target_id").get<std::string>();
    r.suspect_id = j.at("suspect_id").get<std::string>();
    r.similarity = j.at("similarity").get<double>();
    if (j.contains("threshold") && !j.at("threshold").is_null()) r.threshold = j.at("threshold").get<double>();
    r.verdict = verdict_from_string(j.at("verdict").get<std::string>());
    r.pairset_id = j.at("pairset_id").get<std::string>();
    r.config = GenConfig::from_json(j.at("config"));
    r.reference_ids = j.value("reference_ids", std::vector<std::string>{});
    r.notes = j.value("notes", std::vector<std::string>{});
  } catch (const json::exception& e) {
    throw ParseError(std::string("bad comparison report: ") + e.what(), 0);
  }
  return r;
}

std::size_t choose_target(const Classifier& a, const Classifier& b) {
  auto white = [](const Classifier& c) {
    const auto* m = dynamic_cast<const Model*>(&c);
    return m && m->access() == Access::whitebox;
  };
  return (!white(a) && white(b)) ? 1 : 0;
}

ComparisonReport compare(const Classifier& target, const Classifier& suspect, const Tensor& seeds,
                         const GenConfig& cfg, const std::vector<const Classifier*>& references,
                         const InputPairSet* pairs) {
  if (target.input_shape() != suspect.input_shape()) {
    throw ShapeError("models take different inputs: " + to_string(target.input_shape()) + " vs " +
                     to_string(suspect.input_shape()));
  }
  InputPairSet generated;
  if (!pairs) {
    if (cfg.mode == GenMode::whitebox) {
      const auto* m = dynamic_cast<const Model*>(&target);
      if (!m) throw UnsupportedOperation("white-box generation needs a local white-box target");
      generated = gen_whitebox(*m, seeds, cfg);
    } else {
      generated = gen_blackbox(target, seeds, cfg);
    }
    pairs = &generated;
  }
  ComparisonReport r;
  r.target_id = target.id();
  r.suspect_id = suspect.id();
  r.pairset_id = pairs->id;
  r.config = pairs->config;

  const Ddv dt = compute_ddv(target, *pairs);
  const Ddv ds = compute_ddv(suspect, *pairs);
  if (dt.zero_output || ds.zero_output) r.notes.push_back("zero output vector in cosine distance");
  bool degenerate = false;
  r.similarity = similarity(dt, ds, &degenerate);
  if (degenerate) r.notes.push_back("all-zero DDV in similarity");
  if (!references.empty()) {
    std::vector<Ddv> refs;
    for (const Classifier* c : references) {
      refs.push_back(compute_ddv(*c, *pairs));
      r.reference_ids.push_back(c->id());
    }
    r.threshold = calibrate_threshold(dt, refs);
  }
  r.verdict = decide(r.similarity, r.threshold);
  return r;
}

}  // namespace ddv
