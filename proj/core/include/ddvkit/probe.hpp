#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "ddvkit/dataset.hpp"
#include "ddvkit/model.hpp"
#include "ddvkit/tensor.hpp"

namespace ddv {

enum class GenMode { whitebox, blackbox };

std::string to_string(GenMode mode);
GenMode gen_mode_from_string(const std::string& s);

struct GenConfig {
  double lambda = 0.5;
  double epsilon = 0.06;               // black-box mutation step
  std::size_t iterations = 20000;      // black-box mutation budget
  double low_diversity_ratio = 0.5;
  std::size_t n_inputs = 100;
  GenMode mode = GenMode::whitebox;
  std::uint64_t rng_seed = 0;
  double box_epsilon = 0.15;           // white-box L-inf budget
  std::size_t pgd_steps = 300;

  void validate() const;
  nlohmann::json to_json() const;
  static GenConfig from_json(const nlohmann::json& j);
  std::uint64_t hash() const;
};

inline constexpr std::string_view kPairSetFormat = "ddvkit-pairset/1";

struct InputPairSet {
  std::string id;                 // content hash, see pairset_id()
  Tensor seeds;                   // X   [n] + input_shape
  Tensor adversarial;             // X'  same shape
  std::string target_model_id;
  GenConfig config;
  std::vector<double> score_trace;

  std::size_t size() const { return seeds.rows(); }
};

std::string pairset_id(const Tensor& seeds, const Tensor& adversarial, const std::string& target_id);
// Builds a set around externally supplied inputs (ablations, checkpoints).
InputPairSet make_pairset(Tensor seeds, Tensor adversarial, std::string target_id, GenConfig config,
                          std::vector<double> trace = {});

void save_pairset(const InputPairSet& set, const std::filesystem::path& path);
InputPairSet load_pairset(const std::filesystem::path& path);

/// n samples without replacement; when labels are given, classes are
/// visited round-robin so per-class counts differ by at most one (as long
/// as no class runs out).
Tensor select_seeds(const Tensor& images, const std::vector<int>* labels, std::size_t n,
                    std::uint64_t seed);
Tensor select_seeds(const ShapesDataset& data, std::size_t n, std::uint64_t seed,
                    bool stratified = true);

// Output-space quantities. Y, Y2 are [n, d].
double divergence(const Tensor& y, const Tensor& y_adv);
double diversity(const Tensor& y_adv);
double score(const Tensor& y, const Tensor& y_adv, double lambda);

double divergence(const Classifier& f, const Tensor& x, const Tensor& x_adv);
double diversity(const Classifier& f, const Tensor& x_adv);
double score(const Classifier& f, const Tensor& x, const Tensor& x_adv, double lambda);

/// Inputs chosen for mutation in one black-box iteration.
struct MutationIndices {
  std::vector<std::size_t> low_divergence;
  std::vector<std::size_t> low_diversity;
  std::vector<std::size_t> merged;  // sorted union
};
MutationIndices select_mutation_indices(const Tensor& y, const Tensor& y_adv, double ratio);

/// Called with the current X' at iteration 0 and every `every` iterations
/// (and after the last one).
struct Checkpoints {
  std::size_t every = 0;
  std::function<void(std::size_t iteration, const Tensor& x_adv, double score)> fn;
};

InputPairSet gen_whitebox(const Model& f, const Tensor& seeds, const GenConfig& cfg);
InputPairSet gen_blackbox(const Classifier& f, const Tensor& seeds, const GenConfig& cfg,
                          const Checkpoints& checkpoints = {});
// Dispatches on cfg.mode.
InputPairSet generate(const Model& f, const Tensor& seeds, const GenConfig& cfg);

}  // namespace ddv
