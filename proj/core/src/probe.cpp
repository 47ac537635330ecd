#include "ddvkit/probe.hpp"

#include <algorithm>
#include <cmath>
#include <map>

#include "ddvkit/container.hpp"
#include "ddvkit/error.hpp"
#include "ddvkit/rng.hpp"
#include "ddvkit/runtime.hpp"

namespace ddv {

using nlohmann::json;

std::string to_string(GenMode mode) { return mode == GenMode::whitebox ? "whitebox" : "blackbox"; }

GenMode gen_mode_from_string(const std::string& s) {
  if (s == "whitebox") return GenMode::whitebox;
  if (s == "blackbox") return GenMode::blackbox;
  throw InvalidArgument("unknown generation mode '" + s + "' (expected whitebox|blackbox)");
}

void GenConfig::validate() const {
  if (!(lambda >= 0.0) || !std::isfinite(lambda)) throw ConfigError("lambda must be >= 0");
  if (!(epsilon > 0.0 && epsilon < 1.0)) throw ConfigError("epsilon must be in (0, 1)");
  if (!(low_diversity_ratio > 0.0 && low_diversity_ratio <= 1.0)) {
    throw ConfigError("low_diversity_ratio must be in (0, 1]");
  }
  if (n_inputs == 0) throw ConfigError("n_inputs must be positive");
  if (!(box_epsilon > 0.0 && box_epsilon <= 1.0)) throw ConfigError("box_epsilon must be in (0, 1]");
}

json GenConfig::to_json() const {
  return json{{"lambda", lambda},
              {"epsilon", epsilon},
              {"iterations", iterations},
              {"low_diversity_ratio", low_diversity_ratio},
              {"n_inputs", n_inputs},
              {"mode", to_string(mode)},
              {"rng_seed", rng_seed},
              {"box_epsilon", box_epsilon},
              {"pgd_steps", pgd_steps}};
}

GenConfig GenConfig::from_json(const json& j) {
  GenConfig c;
  try {
    c.lambda = j.value("lambda", c.lambda);
    c.epsilon = j.value("epsilon", c.epsilon);
    c.iterations = j.value("iterations", c.iterations);
    c.low_diversity_ratio = j.value("low_diversity_ratio", c.low_diversity_ratio);
    c.n_inputs = j.value("n_inputs", c.n_inputs);
    c.mode = gen_mode_from_string(j.value("mode", to_string(c.mode)));
    c.rng_seed = j.value("rng_seed", c.rng_seed);
    c.box_epsilon = j.value("box_epsilon", c.box_epsilon);
    c.pgd_steps = j.value("pgd_steps", c.pgd_steps);
  } catch (const json::exception& e) {
    throw ConfigError(std::string("malformed generation config: ") + e.what());
  }
  c.validate();
  return c;
}

std::uint64_t GenConfig::hash() const { return fnv1a(to_json().dump()); }

std::string pairset_id(const Tensor& seeds, const Tensor& adversarial, const std::string& target_id) {
  const std::string key = target_id + "|" + to_string(seeds.shape()) + "|" +
                          hex64(fnv1a(seeds.data())) + "|" + hex64(fnv1a(adversarial.data()));
  return hex64(fnv1a(key));
}

InputPairSet make_pairset(Tensor seeds, Tensor adversarial, std::string target_id, GenConfig config,
                          std::vector<double> trace) {
  if (seeds.shape() != adversarial.shape()) {
    throw ShapeError("seed shape " + to_string(seeds.shape()) + " != adversarial shape " +
                     to_string(adversarial.shape()));
  }
  InputPairSet set;
  set.id = pairset_id(seeds, adversarial, target_id);
  set.seeds = std::move(seeds);
  set.adversarial = std::move(adversarial);
  set.target_model_id = std::move(target_id);
  set.config = config;
  set.score_trace = std::move(trace);
  return set;
}

void save_pairset(const InputPairSet& set, const std::filesystem::path& path) {
  Container c;
  c.header = json{{"format", kPairSetFormat},
                  {"id", set.id},
                  {"target_model_id", set.target_model_id},
                  {"shape", set.seeds.shape()},
                  {"config", set.config.to_json()},
                  {"config_hash", hex64(set.config.hash())},
                  {"score_trace", set.score_trace}};
  c.blob.reserve(2 * set.seeds.size());
  c.blob.insert(c.blob.end(), set.seeds.values().begin(), set.seeds.values().end());
  c.blob.insert(c.blob.end(), set.adversarial.values().begin(), set.adversarial.values().end());
  write_container(path, c);
}

InputPairSet load_pairset(const std::filesystem::path& path) {
  Container c = read_container(path);
  const json& h = c.header;
  if (h.value("format", std::string{}) != kPairSetFormat) {
    throw ParseError("'" + path.string() + "' is not a probe-set file", 0);
  }
  try {
    const Shape shape = h.at("shape").get<Shape>();
    const std::size_t count = numel(shape);
    if (c.blob.size() != 2 * count) {
      throw ParseError("probe-set blob holds " + std::to_string(c.blob.size()) + " floats, expected " +
                           std::to_string(2 * count),
                       0);
    }
    Tensor seeds(shape, std::vector<float>(c.blob.begin(), c.blob.begin() + count));
    Tensor adv(shape, std::vector<float>(c.blob.begin() + count, c.blob.end()));
    InputPairSet set = make_pairset(std::move(seeds), std::move(adv), h.at("target_model_id").get<std::string>(),
                                    GenConfig::from_json(h.at("config")),
                                    h.value("score_trace", std::vector<double>{}));
    if (set.id != h.value("id", std::string{})) {
      throw ParseError("probe-set id does not match its contents", 0);
    }
    return set;
  } catch (const json::exception& e) {
    throw ParseError(std::string("bad probe-set header: ") + e.what(), 0);
  }
}

Tensor select_seeds(const Tensor& images, const std::vector<int>* labels, std::size_t n,
                    std::uint64_t seed) {
  const std::size_t total = images.empty() ? 0 : images.rows();
  if (total == 0) throw InvalidArgument("cannot select seeds from an empty dataset");
  if (n > total) {
    throw InvalidArgument("requested " + std::to_string(n) + " seeds from a dataset of " +
                          std::to_string(total));
  }
  if (labels && labels->size() != total) throw InvalidArgument("label count does not match images");
  Rng rng(seed);
  std::vector<std::size_t> picked;
  picked.reserve(n);
  if (!labels) {
    std::vector<std::size_t> order(total);
    for (std::size_t i = 0; i < total; ++i) order[i] = i;
    rng.shuffle(order);
    picked.assign(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(n));
  } else {
    std::map<int, std::vector<std::size_t>> by_class;
    for (std::size_t i = 0; i < total; ++i) by_class[(*labels)[i]].push_back(i);
    std::vector<std::vector<std::size_t>> pools;
    for (auto& [cls, idx] : by_class) {
      rng.shuffle(idx);
      pools.push_back(std::move(idx));
    }
    rng.shuffle(pools);
    std::vector<std::size_t> cursor(pools.size(), 0);
    while (picked.size() < n) {
      for (std::size_t c = 0; c < pools.size() && picked.size() < n; ++c) {
        if (cursor[c] < pools[c].size()) picked.push_back(pools[c][cursor[c]++]);
      }
    }
  }
  return images.gather_rows(picked);
}

Tensor select_seeds(const ShapesDataset& data, std::size_t n, std::uint64_t seed, bool stratified) {
  return select_seeds(data.images, stratified ? &data.labels : nullptr, n, seed);
}

namespace {

void check_outputs(const Tensor& y, const Tensor& y_adv) {
  if (y.shape() != y_adv.shape()) {
    throw ShapeError("output shapes differ: " + to_string(y.shape()) + " vs " + to_string(y_adv.shape()));
  }
  if (y.empty() || y.rows() == 0) throw InvalidArgument("divergence needs at least one pair");
}

double diversity_sum(const Tensor& y_adv) {
  const std::size_t n = y_adv.rows();
  double sum = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = i + 1; j < n; ++j) sum += l2_distance(y_adv.row(i), y_adv.row(j));
  }
  return sum;
}

double pair_count(std::size_t n) { return 0.5 * static_cast<double>(n) * static_cast<double>(n - 1); }

void check_inputs(const Classifier& f, const Tensor& seeds) {
  if (seeds.shape() != batched(seeds.empty() ? 0 : seeds.rows(), f.input_shape()) || seeds.empty()) {
    throw ShapeError("seeds of shape " + to_string(seeds.shape()) + " do not match model input " +
                     to_string(f.input_shape()));
  }
}

}  // namespace

double divergence(const Tensor& y, const Tensor& y_adv) {
  check_outputs(y, y_adv);
  double sum = 0.0;
  for (std::size_t i = 0; i < y.rows(); ++i) sum += l2_distance(y.row(i), y_adv.row(i));
  return sum / static_cast<double>(y.rows());
}

double diversity(const Tensor& y_adv) {
  if (y_adv.empty() || y_adv.rows() < 2) throw InvalidArgument("diversity needs at least two inputs");
  return diversity_sum(y_adv) / pair_count(y_adv.rows());
}

double score(const Tensor& y, const Tensor& y_adv, double lambda) {
  return divergence(y, y_adv) + lambda * diversity(y_adv);
}

double divergence(const Classifier& f, const Tensor& x, const Tensor& x_adv) {
  if (x.shape() != x_adv.shape()) throw ShapeError("X and X' shapes differ");
  return divergence(f.forward(x), f.forward(x_adv));
}

double diversity(const Classifier& f, const Tensor& x_adv) { return diversity(f.forward(x_adv)); }

double score(const Classifier& f, const Tensor& x, const Tensor& x_adv, double lambda) {
  if (x.shape() != x_adv.shape()) throw ShapeError("X and X' shapes differ");
  return score(f.forward(x), f.forward(x_adv), lambda);
}

MutationIndices select_mutation_indices(const Tensor& y, const Tensor& y_adv, double ratio) {
  check_outputs(y, y_adv);
  const std::size_t n = y.rows();
  MutationIndices out;
  std::vector<double> d(n);
  double mean = 0.0;
  for (std::size_t j = 0; j < n; ++j) {
    d[j] = l2_distance(y.row(j), y_adv.row(j));
    mean += d[j];
  }
  mean /= static_cast<double>(n);
  for (std::size_t j = 0; j < n; ++j) {
    if (d[j] < mean) out.low_divergence.push_back(j);
  }

  const auto take = static_cast<std::size_t>(std::floor(ratio * static_cast<double>(n)));
  struct PairDist {
    double dist;
    std::size_t i, j;
  };
  std::vector<PairDist> pairs;
  pairs.reserve(n * (n - 1) / 2);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = i + 1; j < n; ++j) pairs.push_back({l2_distance(y_adv.row(i), y_adv.row(j)), i, j});
  }
  const std::size_t k = std::min(take, pairs.size());
  auto less = [](const PairDist& a, const PairDist& b) {
    if (a.dist != b.dist) return a.dist < b.dist;
    return a.i != b.i ? a.i < b.i : a.j < b.j;
  };
  std::partial_sort(pairs.begin(), pairs.begin() + static_cast<std::ptrdiff_t>(k), pairs.end(), less);
  for (std::size_t p = 0; p < k; ++p) out.low_diversity.push_back(pairs[p].i);
  std::sort(out.low_diversity.begin(), out.low_diversity.end());
  out.low_diversity.erase(std::unique(out.low_diversity.begin(), out.low_diversity.end()),
                          out.low_diversity.end());

  std::set_union(out.low_divergence.begin(), out.low_divergence.end(), out.low_diversity.begin(),
                 out.low_diversity.end(), std::back_inserter(out.merged));
  return out;
}

InputPairSet gen_whitebox(const Model& f, const Tensor& seeds, const GenConfig& cfg) {
  f.require_whitebox("white-box input generation");
  cfg.validate();
  check_inputs(f, seeds);
  const std::size_t n = seeds.rows();
  if (n < 2) throw InvalidArgument("input generation needs at least two seeds");

  const Tensor y = f.forward(seeds);
  const double lambda = cfg.lambda;
  const double m = pair_count(n);
  const OutputObjective objective = [&](const Tensor& out, Tensor& grad) {
    const std::size_t d = out.row_size();
    double value = 0.0;
    std::vector<double> g(out.size(), 0.0);
    for (std::size_t i = 0; i < n; ++i) {
      const auto a = out.row(i);
      const auto b = y.row(i);
      const double norm = l2_distance(a, b);
      value += norm / static_cast<double>(n);
      if (norm > 0.0) {
        for (std::size_t k = 0; k < d; ++k) g[i * d + k] += (a[k] - b[k]) / (norm * static_cast<double>(n));
      }
    }
    if (lambda > 0.0) {
      for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t j = i + 1; j < n; ++j) {
          const auto a = out.row(i);
          const auto b = out.row(j);
          const double norm = l2_distance(a, b);
          value += lambda * norm / m;
          if (norm > 0.0) {
            const double s = lambda / (norm * m);
            for (std::size_t k = 0; k < d; ++k) {
              const double gk = s * (a[k] - b[k]);
              g[i * d + k] += gk;
              g[j * d + k] -= gk;
            }
          }
        }
      }
    }
    for (std::size_t k = 0; k < g.size(); ++k) grad[k] = static_cast<float>(g[k]);
    return value;
  };

  Tensor best = seeds;
  double best_score = score(y, y, lambda);
  std::vector<double> trace{best_score};
  if (cfg.pgd_steps == 0) return make_pairset(seeds, best, f.id(), cfg, std::move(trace));

  const double box = cfg.box_epsilon;
  const double step = box / 10.0;
  auto project = [&](Tensor& x) {
    for (std::size_t k = 0; k < x.size(); ++k) {
      const double lo = std::max(0.0, static_cast<double>(seeds[k]) - box);
      const double hi = std::min(1.0, static_cast<double>(seeds[k]) + box);
      x[k] = static_cast<float>(std::clamp(static_cast<double>(x[k]), lo, hi));
    }
  };

  // Random start inside half the budget: at X' = X the divergence term has
  // no gradient, and with lambda = 0 nothing would move.
  Rng rng(derive_seed(cfg.rng_seed, "pgd-start"));
  Tensor x = seeds;
  for (std::size_t k = 0; k < x.size(); ++k) x[k] += static_cast<float>(rng.uniform(-box / 2, box / 2));
  project(x);

  for (std::size_t t = 0; t <= cfg.pgd_steps; ++t) {
    double value = 0.0;
    const Tensor grad = input_gradient(f, x, objective, &value);
    trace.push_back(value);
    if (value > best_score) {
      best_score = value;
      best = x;
    }
    if (t == cfg.pgd_steps) break;
    for (std::size_t k = 0; k < x.size(); ++k) {
      const float g = grad[k];
      if (g > 0.0f) x[k] += static_cast<float>(step);
      else if (g < 0.0f) x[k] -= static_cast<float>(step);
    }
    project(x);
  }
  return make_pairset(seeds, std::move(best), f.id(), cfg, std::move(trace));
}

InputPairSet gen_blackbox(const Classifier& f, const Tensor& seeds, const GenConfig& cfg,
                          const Checkpoints& checkpoints) {
  cfg.validate();
  check_inputs(f, seeds);
  const std::size_t n = seeds.rows();
  if (n < 2) throw InvalidArgument("input generation needs at least two seeds");
  const std::size_t dim = seeds.row_size();
  const double lambda = cfg.lambda;
  const auto eps = static_cast<float>(cfg.epsilon);

  const Tensor y = f.forward(seeds);
  Tensor y_adv = y;
  Tensor x = seeds;
  double current = score(y, y_adv, lambda);
  std::vector<double> trace{current};
  trace.reserve(cfg.iterations + 1);
  Rng rng(derive_seed(cfg.rng_seed, "mutation"));

  auto checkpoint = [&](std::size_t it) {
    if (checkpoints.fn && checkpoints.every > 0 && (it % checkpoints.every == 0 || it == cfg.iterations)) {
      checkpoints.fn(it, x, current);
    }
  };
  checkpoint(0);

  Shape cand_shape = seeds.shape();
  for (std::size_t it = 1; it <= cfg.iterations; ++it) {
    const std::vector<std::size_t> idx = select_mutation_indices(y, y_adv, cfg.low_diversity_ratio).merged;
    const std::size_t pos = rng.below(dim);
    if (!idx.empty()) {
      const std::size_t m = idx.size();
      cand_shape[0] = 2 * m;
      Tensor cand(cand_shape);
      for (std::size_t c = 0; c < m; ++c) {
        const auto src = x.row(idx[c]);
        auto left = cand.row(c);
        auto right = cand.row(m + c);
        std::copy(src.begin(), src.end(), left.begin());
        std::copy(src.begin(), src.end(), right.begin());
        left[pos] = std::clamp(src[pos] - eps, 0.0f, 1.0f);
        right[pos] = std::clamp(src[pos] + eps, 0.0f, 1.0f);
      }
      const Tensor out = f.forward(cand);
      Tensor y_left = y_adv;
      Tensor y_right = y_adv;
      for (std::size_t c = 0; c < m; ++c) {
        std::copy(out.row(c).begin(), out.row(c).end(), y_left.row(idx[c]).begin());
        std::copy(out.row(m + c).begin(), out.row(m + c).end(), y_right.row(idx[c]).begin());
      }
      const double s_left = score(y, y_left, lambda);
      const double s_right = score(y, y_right, lambda);
      std::size_t take = 0;  // 0 none, 1 left, 2 right
      if (s_left > current && s_left > s_right) take = 1;
      else if (s_right > current) take = 2;
      if (take != 0) {
        for (std::size_t c = 0; c < m; ++c) {
          const auto src = cand.row(take == 1 ? c : m + c);
          std::copy(src.begin(), src.end(), x.row(idx[c]).begin());
        }
        y_adv = take == 1 ? std::move(y_left) : std::move(y_right);
        current = take == 1 ? s_left : s_right;
      }
    }
    trace.push_back(current);
    checkpoint(it);
  }
  return make_pairset(seeds, std::move(x), f.id(), cfg, std::move(trace));
}

InputPairSet generate(const Model& f, const Tensor& seeds, const GenConfig& cfg) {
  return cfg.mode == GenMode::whitebox ? gen_whitebox(f, seeds, cfg) : gen_blackbox(f, seeds, cfg);
}

}  // namespace ddv
