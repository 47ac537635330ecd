#include "ddvkit/harness.hpp"

#include <algorithm>
#include <cmath>
#include <iomanip>
#include <limits>
#include <mutex>
#include <set>
#include <sstream>

#include "ddvkit/baselines.hpp"
#include "ddvkit/error.hpp"
#include "ddvkit/parallel.hpp"
#include "ddvkit/rng.hpp"
#include "ddvkit/similarity.hpp"

namespace ddv {

using nlohmann::json;

std::string to_string(Method m) {
  switch (m) {
    case Method::modeldiff: return "modeldiff";
    case Method::weight: return "weight";
    case Method::feature: return "feature";
    case Method::fingerprint: return "fingerprint";
  }
  return "modeldiff";
}

Method method_from_string(const std::string& s) {
  for (Method m : kAllMethods) {
    if (to_string(m) == s) return m;
  }
  throw InvalidArgument("unknown method '" + s + "' (expected modeldiff|weight|feature|fingerprint)");
}

json EvalOptions::to_json() const {
  return json{{"gen", gen.to_json()},
              {"seed", seed},
              {"stratified_seeds", stratified_seeds},
              {"weight_tolerance", weight_tolerance}};
}

std::uint64_t EvalOptions::hash() const { return fnv1a(to_json().dump()); }

LabeledData task_pool(const MiniBench& bench, const std::string& task) {
  const auto data = make_dataset(task, derive_seed(bench.config.seed, "data:" + task), bench.config.dataset_size);
  return data.split().second;
}

LabeledData seed_pool(const MiniBench& bench, const std::string& target_id) {
  return task_pool(bench, bench.info(target_id).task);
}

namespace {

std::vector<std::string> targets_of(const MiniBench& bench) {
  std::vector<std::string> out;
  for (const auto& p : bench.pairs) {
    if (std::find(out.begin(), out.end(), p.model_a) == out.end()) out.push_back(p.model_a);
  }
  return out;
}

Tensor target_seeds(const MiniBench& bench, const std::string& target, const EvalOptions& o, std::size_t n) {
  const LabeledData pool = seed_pool(bench, target);
  return select_seeds(pool.inputs, o.stratified_seeds ? &pool.labels : nullptr, n,
                      derive_seed(o.seed, "seeds:" + target));
}

InputPairSet default_pairset(const MiniBench& bench, const std::string& target, const EvalOptions& o) {
  const Tensor seeds = target_seeds(bench, target, o, o.gen.n_inputs);
  GenConfig cfg = o.gen;
  cfg.rng_seed = derive_seed(o.gen.rng_seed, target);
  return generate(bench.model(target), seeds, cfg);
}

CategoryRow make_row(std::string name, const std::vector<const PairOutcome*>& outcomes) {
  CategoryRow r;
  r.name = std::move(name);
  r.n_pairs = outcomes.size();
  for (const auto* o : outcomes) {
    r.n_feasible += o->feasible;
    r.n_correct += o->feasible && o->correct;
  }
  r.feasibility = r.n_pairs ? static_cast<double>(r.n_feasible) / static_cast<double>(r.n_pairs) : 0.0;
  r.correctness = r.n_feasible ? static_cast<double>(r.n_correct) / static_cast<double>(r.n_feasible) : 0.0;
  return r;
}

PairScore blank_score(const BenchPair& p) {
  PairScore s;
  s.pair_id = p.id;
  s.model_a = p.model_a;
  s.model_b = p.model_b;
  s.relation = p.relation;
  s.category = p.category;
  s.combined = p.combined;
  return s;
}

// ModelDiff scores for `pairs` given one probe set per target.
std::vector<PairScore> modeldiff_scores(const MiniBench& bench, const std::vector<const BenchPair*>& pairs,
                                        const std::map<std::string, InputPairSet>& probes, std::size_t threads) {
  // DDVs are per (target, model); compute each once.
  std::vector<std::pair<std::string, std::string>> jobs;
  std::set<std::pair<std::string, std::string>> seen;
  for (const auto* p : pairs) {
    for (const auto& m : {p->model_a, p->model_b}) {
      if (seen.insert({p->model_a, m}).second) jobs.emplace_back(p->model_a, m);
    }
  }
  std::vector<Ddv> ddvs(jobs.size());
  parallel_for(jobs.size(), threads, [&](std::size_t i) {
    ddvs[i] = compute_ddv(bench.model(jobs[i].second), probes.at(jobs[i].first));
  });
  std::map<std::pair<std::string, std::string>, const Ddv*> lookup;
  for (std::size_t i = 0; i < jobs.size(); ++i) lookup[jobs[i]] = &ddvs[i];

  std::vector<PairScore> out;
  out.reserve(pairs.size());
  for (const auto* p : pairs) {
    PairScore s = blank_score(*p);
    s.feasible = true;
    s.score = similarity(*lookup.at({p->model_a, p->model_a}), *lookup.at({p->model_a, p->model_b}));
    out.push_back(std::move(s));
  }
  return out;
}

std::vector<const BenchPair*> all_pairs(const MiniBench& bench) {
  std::vector<const BenchPair*> out;
  for (const auto& p : bench.pairs) out.push_back(&p);
  return out;
}

// Self pairs (t, t) for each target, used as sanity rows.
std::vector<BenchPair> self_pairs(const MiniBench& bench) {
  std::vector<BenchPair> out;
  for (const auto& t : targets_of(bench)) {
    BenchPair p;
    p.id = "self:" + t;
    p.model_a = t;
    p.model_b = t;
    p.relation = Relation::reused;
    p.category = "self";
    out.push_back(std::move(p));
  }
  return out;
}

std::string fmt(double v, int precision = 3) {
  std::ostringstream os;
  os << std::fixed << std::setprecision(precision) << v;
  return os.str();
}

std::string aligned(const std::vector<std::vector<std::string>>& rows) {
  std::vector<std::size_t> width;
  for (const auto& r : rows) {
    width.resize(std::max(width.size(), r.size()), 0);
    for (std::size_t c = 0; c < r.size(); ++c) width[c] = std::max(width[c], r[c].size());
  }
  std::ostringstream os;
  for (const auto& r : rows) {
    std::string line;
    for (std::size_t c = 0; c < r.size(); ++c) {
      std::string cell = r[c];
      if (c + 1 < r.size()) cell.resize(width[c], ' ');
      line += (c ? "  " : "") + cell;
    }
    os << line << "\n";
  }
  return os.str();
}

json row_json(const CategoryRow& r) {
  return json{{"name", r.name},           {"n_pairs", r.n_pairs},
              {"n_feasible", r.n_feasible}, {"n_correct", r.n_correct},
              {"feasibility", r.feasibility}, {"correctness", r.correctness}};
}

json score_json(const PairScore& s) {
  json j{{"pair_id", s.pair_id},   {"model_a", s.model_a},   {"model_b", s.model_b},
         {"relation", to_string(s.relation)}, {"category", s.category}, {"combined", s.combined},
         {"feasible", s.feasible}};
  j["score"] = s.feasible ? json(s.score) : json(nullptr);
  if (!s.note.empty()) j["note"] = s.note;
  return j;
}

}  // namespace

const CategoryRow* EvalResult::family(const std::string& name) const {
  for (const auto& r : families) {
    if (r.name == name) return &r;
  }
  return nullptr;
}

const CategoryRow* EvalResult::category(const std::string& name) const {
  for (const auto& r : categories) {
    if (r.name == name) return &r;
  }
  return nullptr;
}

EvalResult summarize(const std::string& method, const MiniBench& bench, std::vector<PairScore> scores) {
  EvalResult result;
  result.method = method;
  std::map<std::string, const PairScore*> by_id;
  for (const auto& s : scores) by_id[s.pair_id] = &s;

  std::map<std::string, std::vector<const PairScore*>> refs;
  for (const auto& s : scores) {
    if (s.relation == Relation::reference) {
      const auto& p = std::find_if(bench.pairs.begin(), bench.pairs.end(),
                                   [&](const BenchPair& b) { return b.id == s.pair_id; });
      if (p != bench.pairs.end()) refs[p->for_pair].push_back(&s);
    }
  }

  std::vector<std::string> category_order, family_order;
  for (const auto& s : scores) {
    if (s.relation != Relation::reused) continue;
    PairOutcome o;
    o.pair_id = s.pair_id;
    o.feasible = s.feasible;
    o.score = s.score;
    for (const auto* r : refs[s.pair_id]) {
      if (!r->feasible) continue;
      ++o.n_references;
      if (!o.threshold || r->score > *o.threshold) o.threshold = r->score;
    }
    o.correct = o.feasible && (!o.threshold || o.score > *o.threshold);
    result.outcomes.push_back(o);
    if (std::find(category_order.begin(), category_order.end(), s.category) == category_order.end()) {
      category_order.push_back(s.category);
    }
    const auto fam = category_family(s.category);
    if (std::find(family_order.begin(), family_order.end(), fam) == family_order.end()) family_order.push_back(fam);
  }

  auto collect = [&](auto pred) {
    std::vector<const PairOutcome*> out;
    for (const auto& o : result.outcomes) {
      if (pred(*by_id.at(o.pair_id))) out.push_back(&o);
    }
    return out;
  };
  for (const auto& c : category_order) {
    result.categories.push_back(make_row(c, collect([&](const PairScore& s) { return s.category == c; })));
  }
  for (const auto& f : family_order) {
    result.families.push_back(
        make_row(f, collect([&](const PairScore& s) { return category_family(s.category) == f; })));
  }
  result.direct = make_row("direct", collect([](const PairScore& s) { return !s.combined; }));
  result.combined = make_row("combined", collect([](const PairScore& s) { return s.combined; }));
  result.overall = make_row("overall", collect([](const PairScore&) { return true; }));

  for (const auto& o : result.outcomes) {
    if (o.correct && o.threshold) {
      const double gap = o.score - *o.threshold;
      if (!result.min_gap || gap < *result.min_gap) result.min_gap = gap;
    }
  }
  result.scores = std::move(scores);
  return result;
}

EvalResult evaluate(const MiniBench& bench, Method method, const EvalOptions& options) {
  const auto targets = targets_of(bench);
  const auto pairs = all_pairs(bench);
  const std::vector<BenchPair> selfs = self_pairs(bench);
  std::vector<const BenchPair*> with_self = pairs;
  for (const auto& s : selfs) with_self.push_back(&s);

  std::map<std::string, InputPairSet> probes;
  std::map<std::string, Tensor> normals;
  if (method != Method::weight) {
    std::vector<InputPairSet> generated(targets.size());
    parallel_for(targets.size(), options.threads,
                 [&](std::size_t i) { generated[i] = default_pairset(bench, targets[i], options); });
    for (std::size_t i = 0; i < targets.size(); ++i) {
      normals[targets[i]] = generated[i].seeds;
      probes.emplace(targets[i], std::move(generated[i]));
    }
  }

  std::vector<PairScore> scores;
  if (method == Method::modeldiff) {
    scores = modeldiff_scores(bench, with_self, probes, options.threads);
  } else {
    std::map<std::string, Fingerprint> prints;
    if (method == Method::fingerprint) {
      for (const auto& t : targets) prints.emplace(t, fingerprint(bench.model(t), probes.at(t)));
    }
    scores.resize(with_self.size());
    parallel_for(with_self.size(), options.threads, [&](std::size_t i) {
      const BenchPair& p = *with_self[i];
      const Model& a = bench.model(p.model_a);
      const Model& b = bench.model(p.model_b);
      BaselineScore bs;
      switch (method) {
        case Method::weight: bs = weight_compare(a, b, options.weight_tolerance); break;
        case Method::feature: bs = feature_compare(a, b, normals.at(p.model_a)); break;
        case Method::fingerprint: bs = fingerprint_match(prints.at(p.model_a), b); break;
        case Method::modeldiff: break;
      }
      PairScore s = blank_score(p);
      s.feasible = bs.feasible;
      s.score = bs.value;
      s.note = bs.reason;
      scores[i] = std::move(s);
    });
  }

  std::vector<PairScore> self_rows(scores.end() - static_cast<std::ptrdiff_t>(selfs.size()), scores.end());
  scores.resize(scores.size() - selfs.size());
  EvalResult result = summarize(to_string(method), bench, std::move(scores));
  for (const auto& s : self_rows) {
    for (const auto& other : result.scores) {
      if (other.model_a == s.model_a && other.feasible && s.feasible && other.score > s.score + 1e-9) {
        result.self_scores_maximal = false;
      }
    }
    if (!s.feasible) result.self_scores_maximal = false;
  }
  result.self_scores = std::move(self_rows);
  result.config_hash = options.hash();
  return result;
}

json EvalResult::to_json() const {
  json cats = json::array(), fams = json::array(), outs = json::array(), raw = json::array(),
       selfs = json::array();
  for (const auto& r : categories) cats.push_back(row_json(r));
  for (const auto& r : families) fams.push_back(row_json(r));
  for (const auto& o : outcomes) {
    outs.push_back({{"pair_id", o.pair_id},
                    {"feasible", o.feasible},
                    {"correct", o.correct},
                    {"score", o.score},
                    {"threshold", o.threshold ? json(*o.threshold) : json(nullptr)},
                    {"n_references", o.n_references}});
  }
  for (const auto& s : scores) raw.push_back(score_json(s));
  for (const auto& s : self_scores) selfs.push_back(score_json(s));
  return json{{"method", method},
              {"config_hash", hex64(config_hash)},
              {"categories", cats},
              {"families", fams},
              {"direct", row_json(direct)},
              {"combined", row_json(combined)},
              {"overall", row_json(overall)},
              {"outcomes", outs},
              {"self_scores", selfs},
              {"self_scores_maximal", self_scores_maximal},
              {"min_gap", min_gap ? json(*min_gap) : json(nullptr)},
              {"scores", raw}};
}

std::string EvalResult::to_csv() const {
  std::ostringstream os;
  os << "pair_id,model_a,model_b,relation,category,combined,feasible,score\n";
  os << std::setprecision(9);
  for (const auto& s : scores) {
    os << s.pair_id << ",\"" << s.model_a << "\",\"" << s.model_b << "\"," << to_string(s.relation) << ","
       << s.category << "," << (s.combined ? 1 : 0) << "," << (s.feasible ? 1 : 0) << ",";
    if (s.feasible) os << s.score;
    os << "\n";
  }
  return os.str();
}

std::string EvalResult::to_table() const {
  std::vector<std::vector<std::string>> rows{{"reuse", "pairs", "feas.", "corr."}};
  auto add = [&](const CategoryRow& r) {
    rows.push_back({r.name, std::to_string(r.n_pairs), fmt(r.feasibility * 100, 1) + "%",
                    r.n_feasible ? fmt(r.correctness * 100, 1) + "%" : "-"});
  };
  for (const auto& r : categories) add(r);
  rows.push_back({"--", "", "", ""});
  for (const auto& r : families) add(r);
  rows.push_back({"--", "", "", ""});
  add(direct);
  add(combined);
  add(overall);
  std::string out = "method " + method + " (config " + hex64(config_hash) + ")\n" + aligned(rows);
  if (min_gap) out += "min threshold gap " + fmt(*min_gap, 4) + "\n";
  return out;
}

namespace {

// Sattolo shuffle: a single cycle, so no index maps to itself.
std::vector<std::size_t> derangement(std::size_t n, std::uint64_t seed) {
  std::vector<std::size_t> p(n);
  for (std::size_t i = 0; i < n; ++i) p[i] = i;
  Rng rng(seed);
  for (std::size_t i = n; i > 1; --i) std::swap(p[i - 1], p[rng.below(i - 1)]);
  return p;
}

InputPairSet variant_pairset(const MiniBench& bench, const std::string& target, const std::string& variant,
                             const EvalOptions& o) {
  const Model& f = bench.model(target);
  GenConfig cfg = o.gen;
  cfg.rng_seed = derive_seed(o.gen.rng_seed, target);
  const std::size_t n = cfg.n_inputs;
  if (variant == "default") return default_pairset(bench, target, o);
  if (variant == "all-normal") {
    const Tensor x = target_seeds(bench, target, o, n);
    const auto perm = derangement(n, derive_seed(o.seed, "derangement:" + target));
    return make_pairset(x, x.gather_rows(perm), target, cfg);
  }
  if (variant == "all-adversarial") {
    const InputPairSet base = default_pairset(bench, target, o);
    const auto perm = derangement(n, derive_seed(o.seed, "derangement:" + target));
    return make_pairset(base.adversarial, base.adversarial.gather_rows(perm), target, cfg);
  }
  if (variant == "no-diversity") {
    EvalOptions v = o;
    v.gen.lambda = 0.0;
    v.stratified_seeds = false;
    return default_pairset(bench, target, v);
  }
  if (variant == "noise-seeds") {
    const Tensor noise = noise_images(n, derive_seed(o.seed, "noise:" + target));
    return generate(f, noise.reshaped(batched(n, f.input_shape())), cfg);
  }
  if (variant == "fewer-seeds") {
    EvalOptions v = o;
    v.gen.n_inputs = std::max<std::size_t>(2, n / 5);
    return default_pairset(bench, target, v);
  }
  if (variant == "irrelevant-seeds") {
    const std::string own = bench.info(target).task;
    std::string other;
    for (const auto& t : bench.config.transfer_tasks) {
      if (t != own) {
        other = t;
        break;
      }
    }
    if (other.empty()) other = bench.config.source_task;
    const LabeledData pool = task_pool(bench, other);
    const Tensor seeds = select_seeds(pool.inputs, &pool.labels, n, derive_seed(o.seed, "irrelevant:" + target));
    return generate(f, seeds, cfg);
  }
  throw InvalidArgument("unknown ablation variant '" + variant + "'");
}

}  // namespace

std::vector<AblationRow> ablate(const MiniBench& bench, const std::vector<std::string>& variants,
                                const EvalOptions& options) {
  for (const auto& v : variants) {
    if (std::find(kAblationVariants.begin(), kAblationVariants.end(), v) == kAblationVariants.end()) {
      throw InvalidArgument("unknown ablation variant '" + v + "'");
    }
  }
  std::vector<const BenchPair*> direct;
  std::set<std::string> direct_ids;
  for (const auto& p : bench.pairs) {
    if (p.relation == Relation::reused && !p.combined) direct_ids.insert(p.id);
  }
  for (const auto& p : bench.pairs) {
    if (!p.combined && (direct_ids.count(p.id) || direct_ids.count(p.for_pair))) direct.push_back(&p);
  }
  const auto targets = targets_of(bench);

  auto run = [&](const std::string& variant) {
    std::vector<InputPairSet> sets(targets.size());
    parallel_for(targets.size(), options.threads,
                 [&](std::size_t i) { sets[i] = variant_pairset(bench, targets[i], variant, options); });
    std::map<std::string, InputPairSet> probes;
    for (std::size_t i = 0; i < targets.size(); ++i) probes.emplace(targets[i], std::move(sets[i]));
    const EvalResult r = summarize("modeldiff", bench, modeldiff_scores(bench, direct, probes, options.threads));
    return std::make_pair(r.overall.correctness, r.overall.n_pairs);
  };

  const double base = run("default").first;
  std::vector<AblationRow> rows;
  for (const auto& v : variants) {
    AblationRow row;
    row.variant = v;
    std::tie(row.correctness, row.n_pairs) = run(v);
    if (base > 0.0) row.relative = row.correctness / base;
    else row.relative = row.correctness == 0.0 ? 1.0 : std::numeric_limits<double>::infinity();
    rows.push_back(row);
  }
  return rows;
}

std::vector<SweepRow> mutation_sweep(const MiniBench& bench, std::size_t every, const EvalOptions& options) {
  if (every == 0) throw InvalidArgument("checkpoint interval must be positive");
  const auto targets = targets_of(bench);
  GenConfig cfg = options.gen;
  cfg.mode = GenMode::blackbox;

  // snapshots[t][k]: probe set of target t at checkpoint k.
  std::vector<std::vector<InputPairSet>> snapshots(targets.size());
  std::vector<std::vector<std::pair<std::size_t, double>>> marks(targets.size());
  parallel_for(targets.size(), options.threads, [&](std::size_t t) {
    const Model& f = bench.model(targets[t]);
    const Tensor seeds = target_seeds(bench, targets[t], options, cfg.n_inputs);
    GenConfig c = cfg;
    c.rng_seed = derive_seed(cfg.rng_seed, targets[t]);
    Checkpoints cp;
    cp.every = every;
    cp.fn = [&](std::size_t it, const Tensor& x_adv, double s) {
      snapshots[t].push_back(make_pairset(seeds, x_adv, f.id(), c));
      marks[t].emplace_back(it, s);
    };
    gen_blackbox(f, seeds, c, cp);
  });

  const auto pairs = all_pairs(bench);
  std::vector<SweepRow> rows;
  for (std::size_t k = 0; k < marks.front().size(); ++k) {
    std::map<std::string, InputPairSet> probes;
    SweepRow row;
    row.iteration = marks.front()[k].first;
    for (std::size_t t = 0; t < targets.size(); ++t) {
      probes.emplace(targets[t], snapshots[t][k]);
      row.mean_score += marks[t][k].second / static_cast<double>(targets.size());
    }
    const EvalResult r = summarize("modeldiff", bench, modeldiff_scores(bench, pairs, probes, options.threads));
    row.correctness = r.overall.correctness;
    rows.push_back(row);
  }
  return rows;
}

std::string ablation_table(const std::vector<AblationRow>& rows) {
  std::vector<std::vector<std::string>> t{{"variant", "pairs", "corr.", "relative"}};
  for (const auto& r : rows) {
    t.push_back({r.variant, std::to_string(r.n_pairs), fmt(r.correctness * 100, 1) + "%", fmt(r.relative, 2)});
  }
  return aligned(t);
}

std::string sweep_table(const std::vector<SweepRow>& rows) {
  std::vector<std::vector<std::string>> t{{"iteration", "corr.", "score"}};
  for (const auto& r : rows) {
    t.push_back({std::to_string(r.iteration), fmt(r.correctness * 100, 1) + "%", fmt(r.mean_score, 4)});
  }
  return aligned(t);
}

std::string sweep_csv(const std::vector<SweepRow>& rows) {
  std::ostringstream os;
  os << "iteration,correctness,mean_score\n" << std::setprecision(9);
  for (const auto& r : rows) os << r.iteration << "," << r.correctness << "," << r.mean_score << "\n";
  return os.str();
}

namespace {

bool transfer_derived(const Model& m) {
  return std::any_of(m.lineage().begin(), m.lineage().end(),
                     [](const LineageRecord& r) { return r.op == "transfer"; });
}

std::string pct(double v) {
  std::ostringstream os;
  os << std::fixed << std::setprecision(1) << 100.0 * v << "%";
  return os.str();
}

}  // namespace

std::vector<Gate> acceptance_gates(const MiniBench& bench, const EvalResult& r) {
  std::vector<Gate> gates;
  if (r.method == "modeldiff") {
    auto at_least = [&](const std::string& fam, double bound) {
      const CategoryRow* row = fam == "combined" ? &r.combined : r.family(fam);
      if (!row || row->n_pairs == 0) {
        gates.push_back({fam + " >= " + pct(bound), false, "no pairs"});
        return;
      }
      gates.push_back({fam + " >= " + pct(bound), row->n_feasible == row->n_pairs && row->correctness >= bound,
                       pct(row->correctness) + " of " + std::to_string(row->n_pairs)});
    };
    at_least("quantize", 1.0);
    at_least("prune", 0.9);
    at_least("transfer", 0.9);
    at_least("combined", 0.8);
    std::size_t infeasible = 0;
    for (const auto& s : r.scores) infeasible += !s.feasible;
    gates.push_back({"all pairs feasible", infeasible == 0,
                     std::to_string(infeasible) + " infeasible of " + std::to_string(r.scores.size())});
    gates.push_back({"self rows maximal", r.self_scores_maximal, std::to_string(r.self_scores.size()) + " rows"});
    return gates;
  }
  std::size_t expected = 0, matched = 0;
  std::string first_miss;
  for (const auto& s : r.scores) {
    if (s.relation != Relation::reused) continue;
    bool must_fail = false;
    if (r.method == "weight" || r.method == "feature") {
      must_fail = bench.info(s.model_a).arch != bench.info(s.model_b).arch;
    } else if (r.method == "fingerprint") {
      must_fail = transfer_derived(bench.model(s.model_b));
    }
    if (!must_fail) continue;
    ++expected;
    if (!s.feasible) {
      ++matched;
    } else if (first_miss.empty()) {
      first_miss = s.pair_id;
    }
  }
  const std::string what = r.method == "fingerprint" ? "transfer-derived" : "cross-architecture";
  gates.push_back({"infeasible on " + what + " pairs", expected > 0 && matched == expected,
                   std::to_string(matched) + "/" + std::to_string(expected) +
                       (first_miss.empty() ? "" : ", first feasible: " + first_miss)});
  return gates;
}

}  // namespace ddv
