// Acceptance suite: one PASS/FAIL line per criterion, exit 0 iff all pass.
#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <functional>
#include <iostream>
#include <map>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "ddvkit/adapter.hpp"
#include "ddvkit/bench.hpp"
#include "ddvkit/container.hpp"
#include "ddvkit/error.hpp"
#include "ddvkit/harness.hpp"
#include "ddvkit/probe.hpp"
#include "ddvkit/rng.hpp"
#include "ddvkit/serialize.hpp"
#include "ddvkit/similarity.hpp"
#include "support/gradient_check.hpp"
#include "support/oracles.hpp"
#include "support/random_models.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace ddv;

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) {
  return std::chrono::duration<double>(Clock::now() - t0).count();
}

std::string fmt(const char* f, double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, f, v);
  return buf;
}

std::string pct(double v) { return fmt("%.1f%%", 100.0 * v); }

struct Outcome {
  bool passed = false;
  std::string detail;
};

struct Settings {
  fs::path bench_dir;
  fs::path out_dir;
  std::string cli;
  std::size_t sweep_iterations = 3000;
  std::size_t sweep_every = 250;
};

// Shared state: the bench and the per-method evaluations are computed once.
class Context {
 public:
  explicit Context(Settings s) : s_(std::move(s)) {}

  const Settings& settings() const { return s_; }

  const MiniBench& bench() {
    if (bench_) return *bench_;
    const BenchConfig cfg;
    const fs::path timing = s_.bench_dir / "build_seconds.json";
    if (fs::exists(s_.bench_dir / "manifest.json")) {
      try {
        MiniBench b = load_bench(s_.bench_dir);
        if (b.config.hash() == cfg.hash() && fs::exists(timing)) {
          build_seconds_ = json::parse(read_file(timing)).at("seconds").get<double>();
          std::cout << "  using cached bench " << s_.bench_dir.string() << "\n" << std::flush;
          bench_ = std::move(b);
          return *bench_;
        }
      } catch (const std::exception& e) {
        std::cout << "  cached bench unusable (" << e.what() << "), rebuilding\n";
      }
    }
    std::cout << "  building default bench into " << s_.bench_dir.string() << "\n" << std::flush;
    const auto t0 = Clock::now();
    MiniBench b = build_bench(cfg, [](const std::string& m) { std::cout << "    " << m << "\n" << std::flush; });
    build_seconds_ = seconds_since(t0);
    fs::remove_all(s_.bench_dir);
    save_bench(b, s_.bench_dir);
    write_file(timing, json{{"seconds", build_seconds_}}.dump());
    bench_ = load_bench(s_.bench_dir);
    return *bench_;
  }

  double build_seconds() const { return build_seconds_; }

  const EvalResult& eval(Method m) {
    auto it = evals_.find(m);
    if (it != evals_.end()) return it->second;
    const MiniBench& b = bench();
    const auto t0 = Clock::now();
    EvalResult r = evaluate(b, m, EvalOptions{});
    eval_seconds_[m] = seconds_since(t0);
    write_file(s_.out_dir / ("eval-" + to_string(m) + ".json"), r.to_json().dump(2));
    write_file(s_.out_dir / ("eval-" + to_string(m) + ".csv"), r.to_csv());
    std::cout << r.to_table() << std::flush;
    return evals_.emplace(m, std::move(r)).first->second;
  }

  double eval_seconds(Method m) const { return eval_seconds_.at(m); }

 private:
  Settings s_;
  std::optional<MiniBench> bench_;
  double build_seconds_ = 0.0;
  std::map<Method, EvalResult> evals_;
  std::map<Method, double> eval_seconds_;
};

// 1
Outcome gradient_oracle(Context&) {
  const auto t0 = Clock::now();
  double worst = 0.0;
  std::size_t coords = 0, skipped = 0, empty_cases = 0;
  for (std::uint64_t c = 0; c < 100; ++c) {
    Model m = c % 10 == 9 ? make_architecture(c % 20 == 9 ? "convnetA" : "convnetB", 2 + c % 4,
                                              derive_seed(7001, std::to_string(c)), "conv-" + std::to_string(c))
                          : testing::random_small_model(1000 + c);
    const Tensor x = testing::random_input(m.input_shape(), 2000 + c, 1);
    const auto g = testing::check_gradient(m, x, c % m.output_dim());
    worst = std::max(worst, g.relative_error);
    coords += g.coordinates;
    skipped += g.skipped;
    if (g.coordinates == 0) ++empty_cases;
  }
  const double secs = seconds_since(t0);
  return {worst < 1e-3 && secs < 60.0 && empty_cases == 0,
          "max rel err " + fmt("%.2e", worst) + " over 100 cases, " + std::to_string(coords) +
              " coordinates (" + std::to_string(skipped) + " at kinks skipped), " + fmt("%.1f s", secs)};
}

// 2
Outcome oracle_equivalence(Context&) {
  Rng rng(90210);
  double worst = 0.0;
  for (int t = 0; t < 50; ++t) {
    const std::size_t n = 2 + rng.below(40);
    const std::size_t d = 1 + rng.below(12);
    testing::Rows y(n, std::vector<double>(d)), y2(n, std::vector<double>(d));
    Tensor ty({n, d}), ty2({n, d});
    for (std::size_t i = 0; i < n; ++i) {
      for (std::size_t k = 0; k < d; ++k) {
        // stored as float on both sides so the oracle sees the same numbers
        ty.row(i)[k] = static_cast<float>(rng.uniform(-3, 3));
        ty2.row(i)[k] = static_cast<float>(rng.uniform(-3, 3));
        y[i][k] = ty.row(i)[k];
        y2[i][k] = ty2.row(i)[k];
      }
    }
    worst = std::max(worst, std::abs(divergence(ty, ty2) - testing::brute_divergence(y, y2)));
    worst = std::max(worst, std::abs(diversity(ty2) - testing::brute_diversity(y2)));
  }
  return {worst <= 1e-6, "max abs diff " + fmt("%.2e", worst) + " over 50 random output sets"};
}

// 3
Outcome monotone_trace(Context&) {
  std::size_t steps = 0, decreases = 0, improved = 0;
  for (std::uint64_t run = 0; run < 10; ++run) {
    const Model m = run % 2 == 0 ? testing::random_small_model(300 + run)
                                 : make_architecture("convnetA", 4, 300 + run, "toy-" + std::to_string(run));
    const Tensor x = testing::random_input(m.input_shape(), 400 + run, 8);
    GenConfig cfg;
    cfg.mode = GenMode::blackbox;
    cfg.iterations = 500;
    cfg.n_inputs = x.rows();
    cfg.rng_seed = run;
    const auto set = gen_blackbox(m, x, cfg);
    for (std::size_t k = 1; k < set.score_trace.size(); ++k) {
      ++steps;
      if (set.score_trace[k] < set.score_trace[k - 1]) ++decreases;
    }
    if (set.score_trace.back() > set.score_trace.front()) ++improved;
  }
  return {decreases == 0, std::to_string(decreases) + " decreases in " + std::to_string(steps) +
                              " steps over 10 runs; " + std::to_string(improved) + "/10 runs improved"};
}

// 4
Outcome self_comparison(Context& ctx) {
  const MiniBench& b = ctx.bench();
  const auto t0 = Clock::now();
  double worst = 0.0;
  std::string worst_id;
  for (const auto& info : b.models) {
    const LabeledData pool = seed_pool(b, info.id);
    const GenConfig cfg;
    const Tensor seeds = select_seeds(pool.inputs, &pool.labels, cfg.n_inputs, derive_seed(2021, "seeds:" + info.id));
    const Model& m = b.model(info.id);
    const auto report = compare(m, m, seeds, cfg);
    const double dev = std::abs(report.similarity - 1.0);
    if (dev >= worst) {
      worst = dev;
      worst_id = info.id;
    }
  }
  return {worst <= 1e-6, std::to_string(b.models.size()) + " models, max |sim - 1| " + fmt("%.2e", worst) +
                             " (" + worst_id + "), " + fmt("%.0f s", seconds_since(t0))};
}

std::string gate_summary(const std::vector<Gate>& gates, bool* all) {
  std::string out;
  *all = true;
  for (const auto& g : gates) {
    *all = *all && g.passed;
    if (!out.empty()) out += "; ";
    out += g.name + (g.passed ? " ok" : " FAILED") + " (" + g.detail + ")";
  }
  return out;
}

// 5
Outcome separation(Context& ctx) {
  const EvalResult& r = ctx.eval(Method::modeldiff);
  std::vector<Gate> gates;
  for (const auto& g : acceptance_gates(ctx.bench(), r)) {
    if (g.name != "all pairs feasible") gates.push_back(g);
  }
  const double total = ctx.build_seconds() + ctx.eval_seconds(Method::modeldiff);
  gates.push_back({"runtime < 2 h", total < 7200.0,
                   fmt("build %.0f s", ctx.build_seconds()) + fmt(" + eval %.0f s", ctx.eval_seconds(Method::modeldiff))});
  bool all = false;
  std::string detail = gate_summary(gates, &all);
  if (const CategoryRow* steal = r.family("steal")) {
    detail += "; steal " + pct(steal->correctness) + " (reported only)";
  }
  return {all, detail};
}

// 6
Outcome threshold_gap(Context& ctx) {
  const EvalResult& r = ctx.eval(Method::modeldiff);
  std::size_t correct = 0, violations = 0;
  double min_gap = INFINITY;
  std::string at;
  for (const auto& o : r.outcomes) {
    if (!o.correct) continue;
    ++correct;
    if (!o.threshold || !(o.score > *o.threshold)) {
      ++violations;
      continue;
    }
    if (o.score - *o.threshold < min_gap) {
      min_gap = o.score - *o.threshold;
      at = o.pair_id;
    }
  }
  return {correct > 0 && violations == 0,
          std::to_string(correct) + " correctly detected pairs, " + std::to_string(violations) +
              " at or below threshold, min gap " + fmt("%.4f", min_gap) + " (" + at + ")"};
}

// 7
Outcome feasibility_pattern(Context& ctx) {
  std::vector<Gate> gates;
  for (const auto& g : acceptance_gates(ctx.bench(), ctx.eval(Method::modeldiff))) {
    if (g.name == "all pairs feasible") gates.push_back({"modeldiff " + g.name, g.passed, g.detail});
  }
  for (Method m : {Method::weight, Method::feature, Method::fingerprint}) {
    for (auto g : acceptance_gates(ctx.bench(), ctx.eval(m))) {
      g.name = to_string(m) + " " + g.name;
      gates.push_back(std::move(g));
    }
  }
  bool all = false;
  const std::string detail = gate_summary(gates, &all);
  return {all, detail};
}

// 8
Outcome ablation(Context& ctx) {
  const auto rows = ablate(ctx.bench(), {"default", "all-normal", "no-diversity"});
  std::cout << ablation_table(rows) << std::flush;
  json j = json::array();
  for (const auto& r : rows) j.push_back({{"variant", r.variant}, {"correctness", r.correctness}, {"relative", r.relative}});
  write_file(ctx.settings().out_dir / "ablation.json", j.dump(2));
  bool ok = true;
  std::string detail;
  for (const auto& r : rows) {
    if (!detail.empty()) detail += ", ";
    detail += r.variant + " " + pct(r.correctness) + fmt(" (rel %.2f)", r.relative);
    if (r.variant != "default") ok = ok && r.relative < 1.0;
  }
  return {ok, detail};
}

// 9
Outcome mutation_curve(Context& ctx) {
  EvalOptions o;
  o.gen.mode = GenMode::blackbox;
  o.gen.iterations = ctx.settings().sweep_iterations;
  const auto rows = mutation_sweep(ctx.bench(), ctx.settings().sweep_every, o);
  std::cout << sweep_table(rows) << std::flush;
  write_file(ctx.settings().out_dir / "sweep.csv", sweep_csv(rows));
  if (rows.empty()) return {false, "no checkpoints"};
  const auto best = std::max_element(rows.begin(), rows.end(),
                                     [](const SweepRow& a, const SweepRow& b) { return a.correctness < b.correctness; });
  std::string curve;
  for (const auto& r : rows) curve += (curve.empty() ? "" : " ") + std::to_string(r.iteration) + ":" + pct(r.correctness);
  return {best->correctness > rows.front().correctness,
          "checkpoint 0 " + pct(rows.front().correctness) + ", best " + pct(best->correctness) + " at " +
              std::to_string(best->iteration) + "; curve " + curve};
}

// 10
Outcome adapter_equivalence(Context& ctx) {
  const MiniBench& b = ctx.bench();
  const Settings& s = ctx.settings();
  // One probe set per distinct input shape, generated on the first model with it.
  std::map<Shape, InputPairSet> probes;
  for (const auto& info : b.models) {
    const Model& m = b.model(info.id);
    if (probes.count(m.input_shape())) continue;
    const LabeledData pool = seed_pool(b, info.id);
    GenConfig cfg;
    cfg.pgd_steps = 50;
    const Tensor seeds = select_seeds(pool.inputs, &pool.labels, cfg.n_inputs, derive_seed(2021, "wire:" + info.id));
    probes.emplace(m.input_shape(), gen_whitebox(m, seeds, cfg));
  }
  double worst = 0.0;
  std::size_t compared = 0;
  for (const auto& info : b.models) {
    const Model& m = b.model(info.id);
    const InputPairSet& set = probes.at(m.input_shape());
    const auto remote = spawn_adapter({s.cli, "serve", "--model", (s.bench_dir / info.file).string()});
    const Ddv local = compute_ddv(m, set);
    const Ddv wire = compute_ddv(*remote, set);
    if (local.values.size() != wire.values.size()) return {false, info.id + ": DDV length differs"};
    for (std::size_t i = 0; i < local.values.size(); ++i) {
      worst = std::max(worst, std::abs(local.values[i] - wire.values[i]));
    }
    ++compared;
  }
  return {worst <= 1e-6, std::to_string(compared) + " models served over exec: adapters, max |DDV diff| " +
                             fmt("%.2e", worst)};
}

struct Criterion {
  int number;
  std::string name;
  std::function<Outcome(Context&)> run;
};

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"ddvkit acceptance suite"};
  Settings s;
  std::string bench = "acceptance-bench";
  std::string out = "acceptance-out";
  std::vector<int> only;
  s.cli = DDVKIT_CLI_PATH;
  app.add_option("--bench", bench, "Cached default bench directory (built if missing or stale)");
  app.add_option("--out", out, "Directory for reports");
  app.add_option("--cli", s.cli, "ddvkit executable used for the adapter check");
  app.add_option("--sweep-iterations", s.sweep_iterations, "Black-box budget for the mutation sweep");
  app.add_option("--sweep-every", s.sweep_every, "Checkpoint spacing for the mutation sweep");
  app.add_option("--only", only, "Run only these criteria")->delimiter(',');
  CLI11_PARSE(app, argc, argv);
  s.bench_dir = fs::absolute(bench);
  s.out_dir = fs::absolute(out);
  fs::create_directories(s.out_dir);

  const std::vector<Criterion> criteria = {
      {1, "gradient oracle", gradient_oracle},
      {2, "divergence/diversity oracle", oracle_equivalence},
      {3, "black-box score monotonicity", monotone_trace},
      {4, "self-comparison", self_comparison},
      {5, "MiniBench separation", separation},
      {6, "threshold gap", threshold_gap},
      {7, "feasibility pattern", feasibility_pattern},
      {8, "ablation directionality", ablation},
      {9, "mutation sweep", mutation_curve},
      {10, "adapter equivalence", adapter_equivalence},
  };

  Context ctx(s);
  std::vector<std::string> lines;
  json report = json::array();
  bool all = true;
  for (const auto& c : criteria) {
    if (!only.empty() && std::find(only.begin(), only.end(), c.number) == only.end()) continue;
    std::cout << "== criterion " << c.number << ": " << c.name << "\n" << std::flush;
    const auto t0 = Clock::now();
    Outcome o;
    try {
      o = c.run(ctx);
    } catch (const std::exception& e) {
      o = {false, std::string("error: ") + e.what()};
    }
    const double secs = seconds_since(t0);
    all = all && o.passed;
    std::ostringstream line;
    line << (o.passed ? "PASS" : "FAIL") << "  " << c.number << "  " << c.name << ": " << o.detail;
    lines.push_back(line.str());
    std::cout << lines.back() << "\n" << std::flush;
    report.push_back({{"criterion", c.number}, {"name", c.name}, {"passed", o.passed}, {"detail", o.detail},
                      {"seconds", secs}});
  }
  write_file(s.out_dir / "acceptance.json", report.dump(2));

  std::cout << "\n== summary\n";
  for (const auto& l : lines) std::cout << l << "\n";
  return all ? 0 : 1;
}
