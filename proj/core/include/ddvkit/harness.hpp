#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "ddvkit/bench.hpp"
#include "ddvkit/probe.hpp"

namespace ddv {

enum class Method { modeldiff, weight, feature, fingerprint };
std::string to_string(Method m);
Method method_from_string(const std::string& s);
inline const std::vector<Method> kAllMethods = {Method::modeldiff, Method::weight, Method::feature,
                                                Method::fingerprint};

struct EvalOptions {
  GenConfig gen;                   // probe generation on each target
  std::uint64_t seed = 2021;       // seed selection
  std::size_t threads = 1;
  bool stratified_seeds = true;
  double weight_tolerance = 0.0;   // 0 = bit-exact WeightCompare

  nlohmann::json to_json() const;
  std::uint64_t hash() const;
};

struct PairScore {
  std::string pair_id;
  std::string model_a;
  std::string model_b;
  Relation relation = Relation::reused;
  std::string category;
  bool combined = false;
  bool feasible = false;
  double score = 0.0;
  std::string note;       // infeasibility reason
};

struct CategoryRow {
  std::string name;
  std::size_t n_pairs = 0;
  std::size_t n_feasible = 0;
  std::size_t n_correct = 0;
  double feasibility = 0.0;
  double correctness = 0.0;   // over feasible pairs
};

struct PairOutcome {
  std::string pair_id;
  bool feasible = false;
  bool correct = false;
  double score = 0.0;
  std::optional<double> threshold;   // max feasible reference score
  std::size_t n_references = 0;
};

struct EvalResult {
  std::string method;
  std::vector<CategoryRow> categories;
  std::vector<CategoryRow> families;
  CategoryRow direct;
  CategoryRow combined;
  CategoryRow overall;
  std::vector<PairOutcome> outcomes;     // one per reused pair, in pair order
  std::vector<PairScore> scores;         // raw scores, reused then reference
  std::vector<PairScore> self_scores;    // (target, target) sanity rows
  bool self_scores_maximal = true;
  std::optional<double> min_gap;         // over correctly detected pairs
  std::uint64_t config_hash = 0;

  const CategoryRow* family(const std::string& name) const;
  const CategoryRow* category(const std::string& name) const;

  nlohmann::json to_json() const;
  std::string to_csv() const;
  std::string to_table() const;
};

/// Correct iff the reused pair is feasible and scores strictly above every
/// feasible reference pair.
EvalResult summarize(const std::string& method, const MiniBench& bench, std::vector<PairScore> scores);

EvalResult evaluate(const MiniBench& bench, Method method, const EvalOptions& options = {});

struct Gate {
  std::string name;
  bool passed = false;
  std::string detail;
};

/// Pass/fail checks for one evaluated method. ModelDiff: quantize 100%,
/// prune and transfer >= 90%, combined >= 80%, every pair feasible, self rows
/// maximal. Baselines: the expected infeasibility pattern (weight and feature
/// on cross-architecture pairs, fingerprint on transfer-derived pairs).
std::vector<Gate> acceptance_gates(const MiniBench& bench, const EvalResult& result);

// Seed pool for a target: held-out split of its task's dataset.
LabeledData seed_pool(const MiniBench& bench, const std::string& target_id);
LabeledData task_pool(const MiniBench& bench, const std::string& task);

inline const std::vector<std::string> kAblationVariants = {
    "default",          "all-normal",  "all-adversarial", "no-diversity",
    "noise-seeds",      "fewer-seeds", "irrelevant-seeds"};

struct AblationRow {
  std::string variant;
  double correctness = 0.0;
  double relative = 0.0;   // correctness / default correctness
  std::size_t n_pairs = 0;
};

/// ModelDiff on direct-reuse pairs under each probe-set variant.
std::vector<AblationRow> ablate(const MiniBench& bench, const std::vector<std::string>& variants,
                                const EvalOptions& options = {});

struct SweepRow {
  std::size_t iteration = 0;
  double correctness = 0.0;
  double mean_score = 0.0;   // generation objective, averaged over targets
};

/// Black-box generation with correctness measured at every `every`
/// iterations up to options.gen.iterations (checkpoint 0 = pure seeds).
std::vector<SweepRow> mutation_sweep(const MiniBench& bench, std::size_t every, const EvalOptions& options = {});

std::string ablation_table(const std::vector<AblationRow>& rows);
std::string sweep_table(const std::vector<SweepRow>& rows);
std::string sweep_csv(const std::vector<SweepRow>& rows);

}  // namespace ddv
