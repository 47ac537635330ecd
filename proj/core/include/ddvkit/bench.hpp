#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "ddvkit/dataset.hpp"
#include "ddvkit/model.hpp"
#include "ddvkit/reuse.hpp"

namespace ddv {

inline constexpr std::string_view kBenchFormat = "ddvkit-minibench/1";

/// Recipe for the desk-scale benchmark. Every generator listed in
/// kRequiredGenerators must be enabled.
struct BenchConfig {
  std::uint64_t seed = 2021;
  std::string source_task = "taskA";
  std::vector<std::string> transfer_tasks = {"taskB", "taskC"};
  std::vector<std::string> architectures = {"convnetA", "convnetB"};
  std::size_t dataset_size = 2000;
  std::vector<double> tune_fractions = {0.1, 0.5, 1.0};
  std::vector<double> prune_ratios = {0.2, 0.5, 0.8};
  double combined_tune_fraction = 0.5;
  std::size_t retrain_replicas = 1;  // per (architecture, task)
  std::size_t steal_queries = 2000;
  std::size_t references_per_pair = 0;  // 0 = every unrelated model
  std::vector<std::string> generators = {"train",   "transfer", "prune",    "quantize",
                                         "distill", "steal",    "combined", "retrain"};
  TrainRecipe source_recipe{20, 0.1, 32};
  TrainRecipe transfer_recipe{6, 0.05, 32};
  TrainRecipe prune_recipe{3, 0.02, 32};
  TrainRecipe distill_recipe{20, 0.025, 32};
  TrainRecipe steal_recipe{20, 0.1, 32};
  DistillOptions distill_options{};

  void validate() const;
  nlohmann::json to_json() const;
  static BenchConfig from_json(const nlohmann::json& j);
  std::uint64_t hash() const;

  // Reused-pair counts implied by the config.
  std::size_t expected_direct_pairs() const;
  std::size_t expected_combined_pairs() const;
  std::size_t expected_models() const;
};

inline const std::vector<std::string> kRequiredGenerators = {
    "train", "transfer", "prune", "quantize", "distill", "steal", "combined", "retrain"};

enum class Relation { reused, reference };

struct BenchPair {
  std::string id;
  std::string model_a;  // the target (teacher side)
  std::string model_b;
  Relation relation = Relation::reused;
  std::string reuse_chain;   // e.g. "transfer(taskB,0.5)-prune(0.5)"
  std::string category;      // e.g. "prune-0.5", "transfer+prune"
  bool combined = false;
  std::string for_pair;      // reference pairs: id of the reused pair they test
};

struct BenchModel {
  std::string id;
  std::string file;          // relative to the bench root
  std::string arch;
  std::string task;
  std::string role;          // source | student | retrained
};

class MiniBench {
 public:
  BenchConfig config;
  std::vector<BenchModel> models;
  std::vector<BenchPair> pairs;   // reused pairs first, then reference pairs

  const Model& model(const std::string& id) const;
  const BenchModel& info(const std::string& id) const;
  bool has_model(const std::string& id) const { return loaded_.count(id) > 0; }
  void add_model(BenchModel info, Model model);

  std::vector<const BenchPair*> reused_pairs() const;
  std::vector<const BenchPair*> references_for(const BenchPair& reused) const;

  // Directed lineage path from `ancestor` to `descendant`.
  bool descends(const std::string& descendant, const std::string& ancestor) const;
  bool reachable(const std::string& a, const std::string& b) const {
    return descends(a, b) || descends(b, a);
  }
  // Share any lineage (same connected component of the lineage graph).
  bool connected(const std::string& a, const std::string& b) const;
  std::optional<std::string> parent_of(const std::string& id) const;

 private:
  std::map<std::string, Model> loaded_;
  std::map<std::string, std::size_t> index_;
};

using ProgressFn = std::function<void(const std::string& message)>;

MiniBench build_bench(const BenchConfig& config, const ProgressFn& progress = {});

void save_bench(const MiniBench& bench, const std::filesystem::path& root);
MiniBench load_bench(const std::filesystem::path& root);

std::string category_family(const std::string& category);
std::string to_string(Relation relation);

}  // namespace ddv
