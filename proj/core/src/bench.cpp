#include "ddvkit/bench.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <set>
#include <sstream>

#include "ddvkit/container.hpp"
#include "ddvkit/error.hpp"
#include "ddvkit/rng.hpp"
#include "ddvkit/serialize.hpp"

namespace ddv {

using nlohmann::json;

namespace {

std::string fmt_number(double v) {
  std::ostringstream os;
  os << v;
  return os.str();
}

std::string file_name_for(const std::string& id) {
  std::string s;
  for (char c : id) {
    const bool keep = std::isalnum(static_cast<unsigned char>(c)) || c == '.' || c == '-' || c == '_';
    s.push_back(keep ? c : '_');
  }
  return "models/" + s + ".bin";
}

std::string pair_id(char prefix, std::size_t i, int width) {
  std::string digits = std::to_string(i);
  if (static_cast<int>(digits.size()) < width) digits.insert(0, width - digits.size(), '0');
  return std::string(1, prefix) + digits;
}

}  // namespace

std::string to_string(Relation relation) {
  return relation == Relation::reused ? "reused" : "reference";
}

std::string category_family(const std::string& category) {
  if (category.find('+') != std::string::npos) return "combined";
  const auto dash = category.find('-');
  return dash == std::string::npos ? category : category.substr(0, dash);
}

void BenchConfig::validate() const {
  for (const auto& g : kRequiredGenerators) {
    if (std::find(generators.begin(), generators.end(), g) == generators.end()) {
      throw ConfigError("bench config is missing required generator '" + g + "'");
    }
  }
  for (const auto& g : generators) {
    if (std::find(kRequiredGenerators.begin(), kRequiredGenerators.end(), g) ==
        kRequiredGenerators.end()) {
      throw ConfigError("unknown generator '" + g + "'");
    }
  }
  if (architectures.size() < 2) {
    throw ConfigError("at least two architectures are required (stealing uses a different one)");
  }
  for (const auto& a : architectures) {
    if (!is_known_architecture(a)) throw ConfigError("unknown architecture '" + a + "'");
  }
  if (!is_known_task(source_task)) throw ConfigError("unknown source task '" + source_task + "'");
  if (transfer_tasks.empty()) throw ConfigError("at least one transfer task is required");
  for (const auto& t : transfer_tasks) {
    if (!is_known_task(t) || t == source_task) throw ConfigError("invalid transfer task '" + t + "'");
  }
  if (dataset_size < 200) throw ConfigError("dataset_size must be >= 200");
  if (tune_fractions.empty() || prune_ratios.empty()) {
    throw ConfigError("tune_fractions and prune_ratios must be non-empty");
  }
  for (double f : tune_fractions) {
    if (!(f > 0.0 && f <= 1.0)) throw ConfigError("tune fraction outside (0, 1]");
  }
  if (!(combined_tune_fraction > 0.0 && combined_tune_fraction <= 1.0)) {
    throw ConfigError("combined_tune_fraction outside (0, 1]");
  }
  for (double r : prune_ratios) {
    if (!(r > 0.0 && r < 1.0)) throw ConfigError("prune ratio outside (0, 1)");
  }
  if (retrain_replicas == 0) throw ConfigError("retrain_replicas must be >= 1");
  if (steal_queries < 200) throw ConfigError("steal_queries must be >= 200");
}

json BenchConfig::to_json() const {
  return json{{"seed", seed},
              {"source_task", source_task},
              {"transfer_tasks", transfer_tasks},
              {"architectures", architectures},
              {"dataset_size", dataset_size},
              {"tune_fractions", tune_fractions},
              {"prune_ratios", prune_ratios},
              {"combined_tune_fraction", combined_tune_fraction},
              {"retrain_replicas", retrain_replicas},
              {"steal_queries", steal_queries},
              {"references_per_pair", references_per_pair},
              {"generators", generators},
              {"source_recipe", source_recipe},
              {"transfer_recipe", transfer_recipe},
              {"prune_recipe", prune_recipe},
              {"distill_recipe", distill_recipe},
              {"steal_recipe", steal_recipe},
              {"distill_temperature", distill_options.temperature},
              {"distill_feature_weight", distill_options.feature_weight}};
}

BenchConfig BenchConfig::from_json(const json& j) {
  BenchConfig c;
  try {
    c.seed = j.value("seed", c.seed);
    c.source_task = j.value("source_task", c.source_task);
    c.transfer_tasks = j.value("transfer_tasks", c.transfer_tasks);
    c.architectures = j.value("architectures", c.architectures);
    c.dataset_size = j.value("dataset_size", c.dataset_size);
    c.tune_fractions = j.value("tune_fractions", c.tune_fractions);
    c.prune_ratios = j.value("prune_ratios", c.prune_ratios);
    c.combined_tune_fraction = j.value("combined_tune_fraction", c.combined_tune_fraction);
    c.retrain_replicas = j.value("retrain_replicas", c.retrain_replicas);
    c.steal_queries = j.value("steal_queries", c.steal_queries);
    c.references_per_pair = j.value("references_per_pair", c.references_per_pair);
    c.generators = j.value("generators", c.generators);
    c.source_recipe = j.value("source_recipe", c.source_recipe);
    c.transfer_recipe = j.value("transfer_recipe", c.transfer_recipe);
    c.prune_recipe = j.value("prune_recipe", c.prune_recipe);
    c.distill_recipe = j.value("distill_recipe", c.distill_recipe);
    c.steal_recipe = j.value("steal_recipe", c.steal_recipe);
    c.distill_options.temperature = j.value("distill_temperature", c.distill_options.temperature);
    c.distill_options.feature_weight =
        j.value("distill_feature_weight", c.distill_options.feature_weight);
  } catch (const json::exception& e) {
    throw ConfigError(std::string("malformed bench config: ") + e.what());
  }
  c.validate();
  return c;
}

std::uint64_t BenchConfig::hash() const { return fnv1a(to_json().dump()); }

std::size_t BenchConfig::expected_direct_pairs() const {
  // transfers + prunes + quantize + distill + steal, per source architecture
  return architectures.size() *
         (transfer_tasks.size() * tune_fractions.size() + prune_ratios.size() + 3);
}

std::size_t BenchConfig::expected_combined_pairs() const {
  return architectures.size() * transfer_tasks.size() * (prune_ratios.size() + 2);
}

std::size_t BenchConfig::expected_models() const {
  const bool extra_base = std::find(tune_fractions.begin(), tune_fractions.end(),
                                    combined_tune_fraction) == tune_fractions.end();
  const std::size_t per_source = 1 + expected_direct_pairs() / architectures.size() +
                                 expected_combined_pairs() / architectures.size() +
                                 (extra_base ? transfer_tasks.size() : 0);
  return architectures.size() * per_source +
         architectures.size() * (1 + transfer_tasks.size()) * retrain_replicas;
}

const Model& MiniBench::model(const std::string& id) const {
  const auto it = loaded_.find(id);
  if (it == loaded_.end()) throw InvalidArgument("bench has no model '" + id + "'");
  return it->second;
}

const BenchModel& MiniBench::info(const std::string& id) const {
  const auto it = index_.find(id);
  if (it == index_.end()) throw InvalidArgument("bench has no model '" + id + "'");
  return models[it->second];
}

void MiniBench::add_model(BenchModel info, Model model) {
  if (loaded_.count(info.id)) throw InvalidArgument("duplicate model id '" + info.id + "'");
  index_[info.id] = models.size();
  loaded_.emplace(info.id, std::move(model));
  models.push_back(std::move(info));
}

std::optional<std::string> MiniBench::parent_of(const std::string& id) const {
  const auto& lineage = model(id).lineage();
  if (lineage.empty() || lineage.back().parent.empty()) return std::nullopt;
  if (!loaded_.count(lineage.back().parent)) return std::nullopt;
  return lineage.back().parent;
}

bool MiniBench::descends(const std::string& descendant, const std::string& ancestor) const {
  std::optional<std::string> cur = parent_of(descendant);
  while (cur) {
    if (*cur == ancestor) return true;
    cur = parent_of(*cur);
  }
  return false;
}

bool MiniBench::connected(const std::string& a, const std::string& b) const {
  auto root = [&](std::string id) {
    while (auto p = parent_of(id)) id = *p;
    return id;
  };
  return root(a) == root(b);
}

std::vector<const BenchPair*> MiniBench::reused_pairs() const {
  std::vector<const BenchPair*> out;
  for (const auto& p : pairs) {
    if (p.relation == Relation::reused) out.push_back(&p);
  }
  return out;
}

std::vector<const BenchPair*> MiniBench::references_for(const BenchPair& reused) const {
  std::vector<const BenchPair*> out;
  for (const auto& p : pairs) {
    if (p.relation == Relation::reference && p.for_pair == reused.id) out.push_back(&p);
  }
  return out;
}

MiniBench build_bench(const BenchConfig& config, const ProgressFn& progress) {
  config.validate();
  MiniBench bench;
  bench.config = config;
  auto say = [&](const std::string& m) {
    if (progress) progress(m);
  };

  std::map<std::string, ShapesDataset> data;
  std::vector<std::string> tasks{config.source_task};
  tasks.insert(tasks.end(), config.transfer_tasks.begin(), config.transfer_tasks.end());
  for (const auto& t : tasks) {
    data.emplace(t, make_dataset(t, derive_seed(config.seed, "data:" + t), config.dataset_size));
  }
  const Tensor queries =
      make_dataset(config.source_task, derive_seed(config.seed, "steal-queries"), config.steal_queries)
          .images;

  std::vector<BenchPair> reused;
  auto add = [&](Model m, const std::string& arch, const std::string& task, const std::string& role) {
    say("built " + m.id());
    BenchModel info{m.id(), file_name_for(m.id()), arch, task, role};
    const std::string id = m.id();
    bench.add_model(std::move(info), std::move(m));
    return id;
  };
  auto add_pair = [&](const std::string& a, const std::string& b, const std::string& category,
                      bool combined) {
    BenchPair p;
    p.id = pair_id('r', reused.size(), 3);
    p.model_a = a;
    p.model_b = b;
    p.relation = Relation::reused;
    p.reuse_chain = b.substr(a.size() + 1);
    p.category = category;
    p.combined = combined;
    reused.push_back(std::move(p));
  };
  auto seed_for = [&](const std::string& label) { return derive_seed(config.seed, label); };

  const auto& src_data = data.at(config.source_task);
  const auto [src_train, src_test] = src_data.split();
  for (std::size_t a = 0; a < config.architectures.size(); ++a) {
    const std::string& arch = config.architectures[a];
    const std::string& other_arch = config.architectures[(a + 1) % config.architectures.size()];
    const std::string source_id = "train(" + arch + "," + config.source_task + ")";
    const Model source = train_from_scratch(arch, src_data, config.source_recipe, seed_for(source_id),
                                            source_id, "train");
    add(source, arch, config.source_task, "source");

    std::map<std::string, Model> combined_base;
    for (const auto& task : config.transfer_tasks) {
      for (double f : config.tune_fractions) {
        Model t = transfer(source, data.at(task), f, config.transfer_recipe,
                           seed_for(source_id + ":transfer:" + task + ":" + fmt_number(f)));
        if (f == config.combined_tune_fraction) combined_base.emplace(task, t);
        add_pair(source_id, add(std::move(t), arch, task, "student"), "transfer-" + fmt_number(f), false);
      }
    }
    for (double r : config.prune_ratios) {
      Model p = prune(source, r, src_train, config.prune_recipe,
                      seed_for(source_id + ":prune:" + fmt_number(r)));
      add_pair(source_id, add(std::move(p), arch, config.source_task, "student"),
               "prune-" + fmt_number(r), false);
    }
    add_pair(source_id, add(quantize(source), arch, config.source_task, "student"), "quantize", false);
    add_pair(source_id,
             add(distill(source, arch, src_data, config.distill_recipe, seed_for(source_id + ":distill"),
                         config.distill_options),
                 arch, config.source_task, "student"),
             "distill", false);
    add_pair(source_id,
             add(steal(source, other_arch, queries, config.steal_recipe, seed_for(source_id + ":steal"),
                       config.source_task),
                 other_arch, config.source_task, "student"),
             "steal", false);

    for (const auto& task : config.transfer_tasks) {
      if (!combined_base.count(task)) {
        Model t = transfer(source, data.at(task), config.combined_tune_fraction, config.transfer_recipe,
                           seed_for(source_id + ":transfer:" + task + ":" +
                                    fmt_number(config.combined_tune_fraction)));
        combined_base.emplace(task, t);
        add(std::move(t), arch, task, "student");
      }
      const Model& base = combined_base.at(task);
      const auto [task_train, task_test] = data.at(task).split();
      for (double r : config.prune_ratios) {
        Model p = prune(base, r, task_train, config.prune_recipe,
                        seed_for(base.id() + ":prune:" + fmt_number(r)));
        add_pair(source_id, add(std::move(p), arch, task, "student"), "transfer+prune", true);
      }
      add_pair(source_id, add(quantize(base), arch, task, "student"), "transfer+quantize", true);
      add_pair(source_id,
               add(distill(base, arch, data.at(task), config.distill_recipe,
                           seed_for(base.id() + ":distill"), config.distill_options),
                   arch, task, "student"),
               "transfer+distill", true);
    }
  }

  for (const auto& arch : config.architectures) {
    for (const auto& task : tasks) {
      for (std::size_t rep = 0; rep < config.retrain_replicas; ++rep) {
        const std::string id = "retrain(" + arch + "," + task + "," + std::to_string(rep) + ")";
        add(train_from_scratch(arch, data.at(task), config.source_recipe, seed_for(id), id, "retrain"),
            arch, task, "retrained");
      }
    }
  }

  // Reference pairs: replace the suspect with a model sharing no lineage with the target.
  std::vector<BenchPair> references;
  for (const auto& p : reused) {
    std::vector<std::string> unrelated;
    for (const auto& m : bench.models) {
      if (!bench.connected(p.model_a, m.id)) unrelated.push_back(m.id);
    }
    if (config.references_per_pair > 0 && unrelated.size() > config.references_per_pair) {
      Rng rng(seed_for("references:" + p.id));
      rng.shuffle(unrelated);
      unrelated.resize(config.references_per_pair);
      std::sort(unrelated.begin(), unrelated.end());
    }
    for (const auto& u : unrelated) {
      BenchPair r;
      r.id = pair_id('f', references.size(), 5);
      r.model_a = p.model_a;
      r.model_b = u;
      r.relation = Relation::reference;
      r.category = p.category;
      r.combined = p.combined;
      r.for_pair = p.id;
      references.push_back(std::move(r));
    }
  }
  bench.pairs = std::move(reused);
  bench.pairs.insert(bench.pairs.end(), references.begin(), references.end());
  return bench;
}

namespace {

json pair_to_json(const BenchPair& p) {
  json j{{"id", p.id},
         {"model_a", p.model_a},
         {"model_b", p.model_b},
         {"relation", to_string(p.relation)},
         {"category", p.category},
         {"combined", p.combined}};
  if (p.relation == Relation::reused) j["reuse_chain"] = p.reuse_chain;
  if (!p.for_pair.empty()) j["for_pair"] = p.for_pair;
  return j;
}

BenchPair pair_from_json(const json& j) {
  BenchPair p;
  p.id = j.at("id").get<std::string>();
  p.model_a = j.at("model_a").get<std::string>();
  p.model_b = j.at("model_b").get<std::string>();
  p.relation = j.at("relation").get<std::string>() == "reused" ? Relation::reused : Relation::reference;
  p.reuse_chain = j.value("reuse_chain", std::string{});
  p.category = j.value("category", std::string{});
  p.combined = j.value("combined", false);
  p.for_pair = j.value("for_pair", std::string{});
  return p;
}

}  // namespace

void save_bench(const MiniBench& bench, const std::filesystem::path& root) {
  std::filesystem::create_directories(root / "models");
  json models = json::array();
  json edges = json::array();
  for (const auto& m : bench.models) {
    save_model(bench.model(m.id), root / m.file);
    models.push_back({{"id", m.id}, {"file", m.file}, {"arch", m.arch}, {"task", m.task}, {"role", m.role}});
    if (auto parent = bench.parent_of(m.id)) {
      edges.push_back({{"parent", *parent}, {"child", m.id}, {"op", bench.model(m.id).lineage().back().op}});
    }
  }
  json reused = json::array();
  json refs = json::array();
  for (const auto& p : bench.pairs) {
    (p.relation == Relation::reused ? reused : refs).push_back(pair_to_json(p));
  }
  const json manifest{{"format", kBenchFormat},
                      {"config", bench.config.to_json()},
                      {"config_hash", hex64(bench.config.hash())},
                      {"models", std::move(models)},
                      {"lineage_edges", std::move(edges)},
                      {"reused_pairs", std::move(reused)},
                      {"reference_pairs", std::move(refs)}};
  write_file(root / "manifest.json", manifest.dump(2) + "\n");
}

MiniBench load_bench(const std::filesystem::path& root) {
  const auto manifest_path = root / "manifest.json";
  if (!std::filesystem::exists(manifest_path)) {
    throw IoError("no manifest.json under '" + root.string() + "'");
  }
  json manifest;
  try {
    manifest = json::parse(read_file(manifest_path));
  } catch (const json::parse_error& e) {
    throw ParseError(std::string("malformed bench manifest: ") + e.what(), e.byte);
  }
  if (manifest.value("format", std::string{}) != kBenchFormat) {
    throw ParseError("not a MiniBench manifest", 0);
  }
  MiniBench bench;
  bench.config = BenchConfig::from_json(manifest.at("config"));
  for (const auto& mj : manifest.at("models")) {
    BenchModel info{mj.at("id").get<std::string>(), mj.at("file").get<std::string>(),
                    mj.value("arch", std::string{}), mj.value("task", std::string{}),
                    mj.value("role", std::string{})};
    const auto path = root / info.file;
    if (!std::filesystem::exists(path)) throw IoError("missing model file '" + path.string() + "'");
    Model m = load_model(path);
    if (m.id() != info.id) throw ParseError("model file '" + info.file + "' holds id '" + m.id() + "'", 0);
    bench.add_model(std::move(info), std::move(m));
  }
  for (const auto& pj : manifest.at("reused_pairs")) bench.pairs.push_back(pair_from_json(pj));
  for (const auto& pj : manifest.at("reference_pairs")) bench.pairs.push_back(pair_from_json(pj));
  return bench;
}

}  // namespace ddv
