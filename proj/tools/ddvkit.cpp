// ddvkit command-line tool.

#include <csignal>
#include <filesystem>
#include <iomanip>
#include <iostream>
#include <memory>
#include <sstream>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "ddvkit/adapter.hpp"
#include "ddvkit/bench.hpp"
#include "ddvkit/container.hpp"
#include "ddvkit/error.hpp"
#include "ddvkit/harness.hpp"
#include "ddvkit/rng.hpp"
#include "ddvkit/run_config.hpp"
#include "ddvkit/serialize.hpp"
#include "ddvkit/similarity.hpp"
#include "ddvkit/version.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace ddv;

namespace {

// Flags shared by every command. Values land in a RunConfig once parsing is
// done so that env overrides and hashing see the final state.
struct Common {
  bool json_out = false;
  std::optional<std::uint64_t> seed;
  std::optional<std::size_t> threads;
  bool quiet = false;
};

struct GenFlags {
  std::optional<double> lambda, epsilon, box_epsilon, low_div;
  std::optional<std::size_t> iterations, n_inputs, pgd_steps;
  std::optional<std::string> mode;
  std::optional<std::uint64_t> gen_seed;

  void apply(GenConfig& g) const {
    if (lambda) g.lambda = *lambda;
    if (epsilon) g.epsilon = *epsilon;
    if (box_epsilon) g.box_epsilon = *box_epsilon;
    if (low_div) g.low_diversity_ratio = *low_div;
    if (iterations) g.iterations = *iterations;
    if (n_inputs) g.n_inputs = *n_inputs;
    if (pgd_steps) g.pgd_steps = *pgd_steps;
    if (mode) g.mode = gen_mode_from_string(*mode);
    if (gen_seed) g.rng_seed = *gen_seed;
  }
};

void add_common(CLI::App* app, Common& c) {
  app->add_flag("--json", c.json_out, "Print one JSON object instead of text");
  app->add_option("--seed", c.seed, "Seed for seed selection (env DDVKIT_SEED)");
  app->add_option("--threads", c.threads, "Worker threads (env DDVKIT_THREADS)")->check(CLI::PositiveNumber);
  app->add_flag("-q,--quiet", c.quiet, "No progress on stderr");
}

void add_gen(CLI::App* app, GenFlags& g) {
  app->add_option("--lambda", g.lambda, "Diversity weight");
  app->add_option("--epsilon", g.epsilon, "Black-box mutation step");
  app->add_option("--iterations", g.iterations, "Black-box mutation budget");
  app->add_option("--low-div-ratio", g.low_div, "Share of pairs treated as low diversity");
  app->add_option("--n-inputs", g.n_inputs, "Probe pairs per target");
  app->add_option("--box-epsilon", g.box_epsilon, "White-box L-inf budget");
  app->add_option("--pgd-steps", g.pgd_steps, "White-box gradient steps");
  app->add_option("--gen-seed", g.gen_seed, "Seed for the generators");
}

RunConfig make_run(const std::string& command, const Common& c, const GenFlags* g) {
  RunConfig r;
  r.command = command;
  apply_env_overrides(r);
  if (c.seed) r.seed = *c.seed;
  if (c.threads) r.threads = *c.threads;
  if (g) g->apply(r.gen);
  r.gen.validate();
  return r;
}

void progress(const Common& c, const std::string& msg) {
  if (!c.quiet) std::cerr << msg << std::endl;
}

std::string fmt(double v, int digits = 6) {
  std::ostringstream os;
  os << std::fixed << std::setprecision(digits) << v;
  return os.str();
}

// Output documents always carry the run config and its hash.
json envelope(const RunConfig& run, json result) {
  return json{{"command", run.command},
              {"config_hash", run.hash_hex()},
              {"tool_version", tool_version()},
              {"config", run.to_json()},
              {"result", std::move(result)}};
}

void write_json(const fs::path& path, const json& doc) { write_file(path, doc.dump(2) + "\n"); }

void emit(const Common& c, const RunConfig& run, const json& result, const std::string& text) {
  if (c.json_out) {
    std::cout << envelope(run, result).dump() << "\n";
  } else {
    std::cout << text << "config_hash " << run.hash_hex() << "\n";
  }
}

// A loaded or remote classifier; keeps ownership in one place.
struct Suspect {
  std::optional<Model> model;
  std::unique_ptr<RemoteModel> remote;
  const Classifier& get() const {
    if (model) return *model;
    return *remote;
  }
};

Suspect open_classifier(const std::string& spec, const AdapterOptions& adapter) {
  Suspect s;
  if (is_endpoint(spec)) {
    s.remote = open_endpoint(spec, adapter);
  } else {
    if (!fs::exists(spec)) throw IoError("model file '" + spec + "' does not exist");
    s.model = load_model(spec);
  }
  return s;
}

std::optional<std::string> lineage_task(const Classifier& c) {
  const auto* m = dynamic_cast<const Model*>(&c);
  if (!m) return std::nullopt;
  for (auto it = m->lineage().rbegin(); it != m->lineage().rend(); ++it) {
    if (it->params.contains("task")) return it->params["task"].get<std::string>();
  }
  return std::nullopt;
}

// In-distribution seeds for a target: held-out split of its task's data.
Tensor cli_seeds(const Classifier& target, const std::optional<std::string>& task_flag, const RunConfig& run,
                 std::size_t dataset_size) {
  const auto task = task_flag ? task_flag : lineage_task(target);
  if (!task) throw InvalidArgument("cannot infer the seed task of '" + target.id() + "'; pass --seed-task");
  if (!is_known_task(*task)) throw InvalidArgument("unknown seed task '" + *task + "'");
  const auto data = make_dataset(*task, derive_seed(run.seed, "data:" + *task), dataset_size);
  const auto pool = data.split().second;
  if (pool.inputs.shape().size() != target.input_shape().size() + 1) {
    throw ShapeError("seed task '" + *task + "' does not match the target input shape");
  }
  return select_seeds(pool.inputs, &pool.labels, run.gen.n_inputs, derive_seed(run.seed, "seeds:" + target.id()));
}

GenMode default_mode(const Classifier& target, const GenFlags& g) {
  if (g.mode) return gen_mode_from_string(*g.mode);
  const auto* m = dynamic_cast<const Model*>(&target);
  return m && m->whitebox() ? GenMode::whitebox : GenMode::blackbox;
}

EvalOptions eval_options(const RunConfig& run) {
  EvalOptions o;
  o.gen = run.gen;
  o.seed = run.seed;
  o.threads = run.threads;
  return o;
}

// ---- commands ------------------------------------------------------------

int cmd_bench_build(const Common& c, const std::string& config_path, const std::string& out_dir) {
  json cfg_json = json::object();
  if (config_path != "default") {
    try {
      cfg_json = json::parse(read_file(config_path));
    } catch (const json::parse_error& e) {
      throw ParseError(std::string("bench config is not JSON: ") + e.what(), e.byte);
    }
  }
  const BenchConfig cfg = BenchConfig::from_json(cfg_json);
  RunConfig run = make_run("bench build", c, nullptr);
  run.paths = {{"config", config_path}, {"out", out_dir}};
  run.params = cfg.to_json();
  const MiniBench bench = build_bench(cfg, [&](const std::string& m) { progress(c, m); });
  save_bench(bench, out_dir);
  std::size_t reused = bench.reused_pairs().size();
  json result{{"bench", out_dir},
              {"bench_config_hash", hex64(cfg.hash())},
              {"models", bench.models.size()},
              {"reused_pairs", reused},
              {"reference_pairs", bench.pairs.size() - reused}};
  emit(c, run, result,
       "bench " + out_dir + "\nmodels " + std::to_string(bench.models.size()) + "\nreused_pairs " +
           std::to_string(reused) + "\nreference_pairs " + std::to_string(bench.pairs.size() - reused) + "\n");
  return 0;
}

struct CompareArgs {
  std::string target, suspect, refs, pairs_in, pairs_out, out;
  std::optional<std::string> seed_task;
  std::size_t batch = 200;
  double timeout_s = 30.0;
  std::size_t dataset_size = 2000;
};

AdapterOptions adapter_options(const CompareArgs& a) {
  AdapterOptions o;
  o.batch_size = a.batch;
  o.timeout = std::chrono::milliseconds(static_cast<long long>(a.timeout_s * 1000.0));
  return o;
}

int cmd_compare(const Common& c, const GenFlags& g, const CompareArgs& a) {
  RunConfig run = make_run("compare", c, &g);
  const auto adapter = adapter_options(a);
  const Suspect target = open_classifier(a.target, adapter);
  const Suspect suspect = open_classifier(a.suspect, adapter);
  run.gen.mode = default_mode(target.get(), g);
  run.paths = {{"target", a.target}, {"suspect", a.suspect}};
  if (!a.refs.empty()) run.paths["refs"] = a.refs;
  if (!a.pairs_in.empty()) run.paths["pairs"] = a.pairs_in;
  if (a.seed_task) run.params["seed_task"] = *a.seed_task;

  const auto* tm = dynamic_cast<const Model*>(&target.get());
  if (run.gen.mode == GenMode::whitebox && a.pairs_in.empty() && (!tm || !tm->whitebox())) {
    throw UnsupportedOperation("white-box generation needs a white-box target; use --mode blackbox");
  }

  std::vector<Model> refs;
  if (!a.refs.empty()) {
    std::vector<fs::path> files;
    for (const auto& e : fs::directory_iterator(a.refs)) {
      if (e.is_regular_file() && e.path().extension() == ".bin") files.push_back(e.path());
    }
    std::sort(files.begin(), files.end());
    for (const auto& f : files) {
      Model m = load_model(f);
      if (m.id() == target.get().id() || m.id() == suspect.get().id()) continue;
      refs.push_back(std::move(m));
    }
    if (refs.empty()) throw InvalidArgument("no reference models found in '" + a.refs + "'");
  }
  std::vector<const Classifier*> ref_ptrs;
  for (const auto& m : refs) ref_ptrs.push_back(&m);

  std::optional<InputPairSet> pairs;
  Tensor seeds;
  if (!a.pairs_in.empty()) {
    pairs = load_pairset(a.pairs_in);
    seeds = pairs->seeds;
  } else {
    seeds = cli_seeds(target.get(), a.seed_task, run, a.dataset_size);
    progress(c, "generating " + std::to_string(run.gen.n_inputs) + " probe pairs (" + to_string(run.gen.mode) +
                    ") on " + target.get().id());
    GenConfig cfg = run.gen;
    cfg.rng_seed = derive_seed(run.gen.rng_seed, target.get().id());
    if (cfg.mode == GenMode::whitebox) {
      pairs = gen_whitebox(*tm, seeds, cfg);
    } else {
      pairs = gen_blackbox(target.get(), seeds, cfg);
    }
  }
  if (!a.pairs_out.empty()) save_pairset(*pairs, a.pairs_out);
  const ComparisonReport report = compare(target.get(), suspect.get(), seeds, run.gen, ref_ptrs, &*pairs);
  json rj = report.to_json();
  rj["config_hash"] = run.hash_hex();
  if (!a.out.empty()) write_json(a.out, envelope(run, rj));
  std::string text = "target " + report.target_id + "\nsuspect " + report.suspect_id + "\nsimilarity " +
                     fmt(report.similarity) + "\n";
  if (report.threshold) text += "threshold " + fmt(*report.threshold) + "\n";
  text += "verdict " + to_string(report.verdict) + "\n";
  for (const auto& n : report.notes) text += "note " + n + "\n";
  emit(c, run, rj, text);
  return 0;
}

int cmd_inputs_gen(const Common& c, const GenFlags& g, const CompareArgs& a) {
  RunConfig run = make_run("inputs gen", c, &g);
  const Suspect target = open_classifier(a.target, adapter_options(a));
  run.gen.mode = default_mode(target.get(), g);
  run.paths = {{"target", a.target}, {"out", a.pairs_out}};
  if (a.seed_task) run.params["seed_task"] = *a.seed_task;
  const auto* tm = dynamic_cast<const Model*>(&target.get());
  if (run.gen.mode == GenMode::whitebox && (!tm || !tm->whitebox())) {
    throw UnsupportedOperation("white-box generation needs a white-box target; use --mode blackbox");
  }
  const Tensor seeds = cli_seeds(target.get(), a.seed_task, run, a.dataset_size);
  GenConfig cfg = run.gen;
  cfg.rng_seed = derive_seed(run.gen.rng_seed, target.get().id());
  InputPairSet set;
  if (cfg.mode == GenMode::whitebox) {
    set = gen_whitebox(*tm, seeds, cfg);
  } else {
    set = gen_blackbox(target.get(), seeds, cfg);
  }
  save_pairset(set, a.pairs_out);
  const double first = set.score_trace.empty() ? 0.0 : set.score_trace.front();
  const double last = set.score_trace.empty() ? 0.0 : set.score_trace.back();
  json result{{"pairset_id", set.id}, {"pairs", set.size()}, {"file", a.pairs_out},
              {"score_initial", first}, {"score_final", last}};
  emit(c, run, result,
       "pairset " + set.id + "\npairs " + std::to_string(set.size()) + "\nscore " + fmt(first) + " -> " +
           fmt(last) + "\nfile " + a.pairs_out + "\n");
  return 0;
}

struct EvalArgs {
  std::string bench, method = "modeldiff", out, csv;
  bool check = false;
  std::vector<std::string> variants;
  std::size_t every = 1000;
};

int cmd_eval(const Common& c, const GenFlags& g, const EvalArgs& a) {
  RunConfig run = make_run("eval", c, &g);
  run.method = a.method;
  run.paths = {{"bench", a.bench}};
  std::vector<Method> methods;
  if (a.method == "all") {
    methods = kAllMethods;
  } else {
    methods.push_back(method_from_string(a.method));
  }
  const MiniBench bench = load_bench(a.bench);
  json results = json::array();
  std::string text;
  bool all_passed = true;
  for (Method m : methods) {
    progress(c, "evaluating " + to_string(m));
    const EvalResult r = evaluate(bench, m, eval_options(run));
    json rj = r.to_json();
    text += r.to_table();
    if (a.check) {
      json gj = json::array();
      for (const auto& gate : acceptance_gates(bench, r)) {
        all_passed = all_passed && gate.passed;
        gj.push_back({{"gate", gate.name}, {"passed", gate.passed}, {"detail", gate.detail}});
        text += std::string(gate.passed ? "PASS " : "FAIL ") + to_string(m) + ": " + gate.name + " (" +
                gate.detail + ")\n";
      }
      rj["gates"] = gj;
    }
    if (!a.csv.empty()) {
      const fs::path p = methods.size() == 1 ? fs::path(a.csv) : fs::path(a.csv + "." + to_string(m) + ".csv");
      write_file(p, "# config_hash " + run.hash_hex() + "\n" + r.to_csv());
    }
    results.push_back(std::move(rj));
    text += "\n";
  }
  const json result = methods.size() == 1 ? results[0] : results;
  const fs::path out = a.out.empty() ? fs::path(a.bench) / ("eval-" + a.method + ".json") : fs::path(a.out);
  write_json(out, envelope(run, result));
  text += "result " + out.string() + "\n";
  emit(c, run, json{{"file", out.string()}, {"evaluations", result}}, text);
  return a.check && !all_passed ? 3 : 0;
}

int cmd_ablate(const Common& c, const GenFlags& g, const EvalArgs& a) {
  RunConfig run = make_run("ablate", c, &g);
  run.paths = {{"bench", a.bench}};
  const auto variants = a.variants.empty() ? kAblationVariants : a.variants;
  run.params["variants"] = variants;
  const MiniBench bench = load_bench(a.bench);
  progress(c, "running " + std::to_string(variants.size()) + " ablation variants");
  const auto rows = ablate(bench, variants, eval_options(run));
  json rj = json::array();
  for (const auto& r : rows) {
    rj.push_back({{"variant", r.variant}, {"correctness", r.correctness}, {"relative", r.relative},
                  {"n_pairs", r.n_pairs}});
  }
  if (!a.out.empty()) write_json(a.out, envelope(run, rj));
  emit(c, run, rj, ablation_table(rows));
  return 0;
}

int cmd_sweep(const Common& c, const GenFlags& g, const EvalArgs& a) {
  RunConfig run = make_run("sweep", c, &g);
  run.gen.mode = GenMode::blackbox;
  run.paths = {{"bench", a.bench}};
  run.params["every"] = a.every;
  if (a.every == 0) throw InvalidArgument("--every must be positive");
  const MiniBench bench = load_bench(a.bench);
  progress(c, "mutation sweep to " + std::to_string(run.gen.iterations) + " iterations");
  const auto rows = mutation_sweep(bench, a.every, eval_options(run));
  json rj = json::array();
  for (const auto& r : rows) {
    rj.push_back({{"iteration", r.iteration}, {"correctness", r.correctness}, {"mean_score", r.mean_score}});
  }
  if (!a.csv.empty()) write_file(a.csv, "# config_hash " + run.hash_hex() + "\n" + sweep_csv(rows));
  if (!a.out.empty()) write_json(a.out, envelope(run, rj));
  emit(c, run, rj, sweep_table(rows));
  return 0;
}

struct ServeArgs {
  std::string model, socket;
  bool echo = false;
  std::vector<std::size_t> input_shape;
  std::size_t out_dim = 0;
  std::size_t sessions = 0;
};

int cmd_serve(const ServeArgs& a) {
  std::unique_ptr<Classifier> owned;
  if (a.echo) {
    if (a.input_shape.empty() || a.out_dim == 0) throw InvalidArgument("--echo needs --input-shape and --out-dim");
    owned = std::make_unique<EchoClassifier>(Shape(a.input_shape.begin(), a.input_shape.end()), a.out_dim);
  } else {
    if (a.model.empty()) throw InvalidArgument("serve needs --model or --echo");
    owned = std::make_unique<Model>(load_model(a.model));
  }
  if (!a.socket.empty()) {
    serve_unix(*owned, a.socket, a.sessions);
    return 0;
  }
  Channel stdio(STDIN_FILENO, STDOUT_FILENO, false);
  serve_session(*owned, stdio);
  return 0;
}

void print_error(const std::string& kind, const std::string& message) {
  std::cerr << json{{"error", kind}, {"message", message}}.dump() << std::endl;
}

}  // namespace

int main(int argc, char** argv) {
  std::signal(SIGPIPE, SIG_IGN);
  CLI::App app{"ddvkit: model reuse detection through decision distance vectors"};
  app.require_subcommand(1);
  app.set_version_flag("--version", std::string(tool_version()));

  Common common;
  GenFlags gen;
  CompareArgs cmp;
  EvalArgs ev;
  ServeArgs sv;
  std::string bench_config, bench_out;
  std::function<int()> run;

  auto* bench = app.add_subcommand("bench", "MiniBench construction");
  bench->require_subcommand(1);
  auto* build = bench->add_subcommand("build", "Build every model and pair of a MiniBench");
  build->add_option("config", bench_config, "Bench config JSON, or 'default'")->required();
  build->add_option("-o,--out", bench_out, "Output directory")->required();
  add_common(build, common);
  build->callback([&] { run = [&] { return cmd_bench_build(common, bench_config, bench_out); }; });

  auto* compare = app.add_subcommand("compare", "Similarity of a suspect to a target");
  compare->add_option("--target", cmp.target, "Model file or endpoint (unix:<path>, exec:<cmd>)")->required();
  compare->add_option("--suspect", cmp.suspect, "Model file or endpoint")->required();
  compare->add_option("--mode", gen.mode, "whitebox or blackbox")->check(CLI::IsMember({"whitebox", "blackbox"}));
  compare->add_option("--refs", cmp.refs, "Directory of reference model files")->check(CLI::ExistingDirectory);
  compare->add_option("--pairs", cmp.pairs_in, "Reuse a saved probe set")->check(CLI::ExistingFile);
  compare->add_option("--save-pairs", cmp.pairs_out, "Write the probe set here");
  compare->add_option("--seed-task", cmp.seed_task, "Task to draw seeds from (default: the target's task)");
  compare->add_option("--batch", cmp.batch, "Adapter batch size")->check(CLI::PositiveNumber);
  compare->add_option("--timeout", cmp.timeout_s, "Adapter timeout per batch, seconds")->check(CLI::PositiveNumber);
  compare->add_option("-o,--out", cmp.out, "Write the report JSON here");
  add_common(compare, common);
  add_gen(compare, gen);
  compare->callback([&] { run = [&] { return cmd_compare(common, gen, cmp); }; });

  auto* inputs = app.add_subcommand("inputs", "Probe set generation");
  inputs->require_subcommand(1);
  auto* igen = inputs->add_subcommand("gen", "Generate a probe set on a target");
  igen->add_option("--target", cmp.target, "Model file or endpoint")->required();
  igen->add_option("-o,--out", cmp.pairs_out, "Probe set file")->required();
  igen->add_option("--mode", gen.mode, "whitebox or blackbox")->check(CLI::IsMember({"whitebox", "blackbox"}));
  igen->add_option("--seed-task", cmp.seed_task, "Task to draw seeds from");
  igen->add_option("--batch", cmp.batch, "Adapter batch size")->check(CLI::PositiveNumber);
  igen->add_option("--timeout", cmp.timeout_s, "Adapter timeout per batch, seconds")->check(CLI::PositiveNumber);
  add_common(igen, common);
  add_gen(igen, gen);
  igen->callback([&] { run = [&] { return cmd_inputs_gen(common, gen, cmp); }; });

  auto* eval = app.add_subcommand("eval", "Evaluate a comparator over a MiniBench");
  eval->add_option("--bench", ev.bench, "Bench directory")->required()->check(CLI::ExistingDirectory);
  eval->add_option("--method", ev.method, "modeldiff, weight, feature, fingerprint or all")
      ->check(CLI::IsMember({"modeldiff", "weight", "feature", "fingerprint", "all"}));
  eval->add_flag("--check", ev.check, "Exit 3 if an acceptance gate fails");
  eval->add_option("-o,--out", ev.out, "Result JSON (default <bench>/eval-<method>.json)");
  eval->add_option("--csv", ev.csv, "Also write per-pair scores as CSV");
  add_common(eval, common);
  add_gen(eval, gen);
  eval->callback([&] { run = [&] { return cmd_eval(common, gen, ev); }; });

  auto* abl = app.add_subcommand("ablate", "Probe-set ablations on direct-reuse pairs");
  abl->add_option("--bench", ev.bench, "Bench directory")->required()->check(CLI::ExistingDirectory);
  abl->add_option("--variants", ev.variants, "Subset of variants")->delimiter(',');
  abl->add_option("-o,--out", ev.out, "Result JSON");
  add_common(abl, common);
  add_gen(abl, gen);
  abl->callback([&] { run = [&] { return cmd_ablate(common, gen, ev); }; });

  auto* sw = app.add_subcommand("sweep", "Correctness against the black-box mutation budget");
  sw->add_option("--bench", ev.bench, "Bench directory")->required()->check(CLI::ExistingDirectory);
  sw->add_option("--every", ev.every, "Checkpoint spacing in iterations");
  sw->add_option("--csv", ev.csv, "Curve as CSV");
  sw->add_option("-o,--out", ev.out, "Curve as JSON");
  add_common(sw, common);
  add_gen(sw, gen);
  sw->callback([&] { run = [&] { return cmd_sweep(common, gen, ev); }; });

  auto* serve = app.add_subcommand("serve", "Expose a model over the adapter protocol (stdio by default)");
  serve->add_option("--model", sv.model, "Model file")->check(CLI::ExistingFile);
  serve->add_flag("--echo", sv.echo, "Serve the echo model instead");
  serve->add_option("--input-shape", sv.input_shape, "Echo sample shape, e.g. 3,4")->delimiter(',');
  serve->add_option("--out-dim", sv.out_dim, "Echo output width");
  serve->add_option("--socket", sv.socket, "Listen on a unix socket instead of stdio");
  serve->add_option("--sessions", sv.sessions, "Stop after this many socket sessions (0 = never)");
  serve->callback([&] { run = [&] { return cmd_serve(sv); }; });

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForVersion& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    print_error("usage", e.what());
    return 2;
  }
  try {
    return run();
  } catch (const Error& e) {
    print_error(e.kind(), e.what());
  } catch (const std::exception& e) {
    print_error("internal", e.what());
  }
  return 1;
}
