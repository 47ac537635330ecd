#include <gtest/gtest.h>

#include <atomic>
#include <stdexcept>

#include "ddvkit/error.hpp"
#include "ddvkit/harness.hpp"
#include "ddvkit/parallel.hpp"

namespace ddv {
namespace {

// Two reused pairs with two references each; no models needed.
MiniBench synthetic() {
  MiniBench b;
  auto pair = [](std::string id, Relation rel, std::string category, bool combined, std::string for_pair) {
    BenchPair p;
    p.id = std::move(id);
    p.model_a = "t";
    p.model_b = "m-" + p.id;
    p.relation = rel;
    p.category = std::move(category);
    p.combined = combined;
    p.for_pair = std::move(for_pair);
    return p;
  };
  b.pairs = {pair("r0", Relation::reused, "prune-0.5", false, ""),
             pair("r1", Relation::reused, "transfer+prune", true, ""),
             pair("f0", Relation::reference, "prune-0.5", false, "r0"),
             pair("f1", Relation::reference, "prune-0.5", false, "r0"),
             pair("f2", Relation::reference, "transfer+prune", true, "r1"),
             pair("f3", Relation::reference, "transfer+prune", true, "r1")};
  return b;
}

std::vector<PairScore> scored(const MiniBench& b, auto fn) {
  std::vector<PairScore> out;
  for (const auto& p : b.pairs) {
    PairScore s;
    s.pair_id = p.id;
    s.model_a = p.model_a;
    s.model_b = p.model_b;
    s.relation = p.relation;
    s.category = p.category;
    s.combined = p.combined;
    s.feasible = true;
    s.score = fn(p);
    out.push_back(s);
  }
  return out;
}

TEST(Summarize, PerfectSeparation) {
  const MiniBench b = synthetic();
  const auto r = summarize("x", b, scored(b, [](const BenchPair& p) {
    return p.relation == Relation::reused ? 1.0 : 0.0;
  }));
  EXPECT_EQ(r.overall.correctness, 1.0);
  EXPECT_EQ(r.overall.feasibility, 1.0);
  EXPECT_EQ(r.direct.n_pairs, 1u);
  EXPECT_EQ(r.combined.n_pairs, 1u);
  ASSERT_TRUE(r.min_gap);
  EXPECT_DOUBLE_EQ(*r.min_gap, 1.0);
  ASSERT_NE(r.family("combined"), nullptr);
  EXPECT_EQ(r.family("combined")->n_correct, 1u);
}

TEST(Summarize, ConstantScoreIsNeverCorrect) {
  const MiniBench b = synthetic();
  const auto r = summarize("x", b, scored(b, [](const BenchPair&) { return 0.7; }));
  EXPECT_EQ(r.overall.correctness, 0.0);
  EXPECT_FALSE(r.min_gap);
}

TEST(Summarize, InfeasiblePairsExcludedFromCorrectness) {
  const MiniBench b = synthetic();
  auto scores = scored(b, [](const BenchPair& p) { return p.relation == Relation::reused ? 0.9 : 0.1; });
  scores[1].feasible = false;  // r1
  scores[2].feasible = false;  // f0: r0 still beats f1
  const auto r = summarize("x", b, scores);
  EXPECT_EQ(r.overall.n_feasible, 1u);
  EXPECT_DOUBLE_EQ(r.overall.feasibility, 0.5);
  EXPECT_DOUBLE_EQ(r.overall.correctness, 1.0);
  EXPECT_EQ(r.outcomes[0].n_references, 1u);
  const auto csv = r.to_csv();
  EXPECT_NE(csv.find("r1,"), std::string::npos);
  EXPECT_NE(r.to_table().find("overall"), std::string::npos);
  EXPECT_EQ(r.to_json().at("overall").at("n_feasible").get<int>(), 1);
}

TEST(Parallel, DeterministicSlotsAndErrors) {
  std::vector<int> out(100, -1);
  parallel_for(out.size(), 4, [&](std::size_t i) { out[i] = static_cast<int>(i * i); });
  for (std::size_t i = 0; i < out.size(); ++i) EXPECT_EQ(out[i], static_cast<int>(i * i));
  EXPECT_THROW(parallel_for(10, 3,
                            [](std::size_t i) {
                              if (i == 7) throw std::runtime_error("boom");
                            }),
               std::runtime_error);
  EXPECT_GE(default_threads(), 1u);
}

BenchConfig tiny_config() {
  BenchConfig c;
  c.dataset_size = 200;
  c.steal_queries = 200;
  for (TrainRecipe* r : {&c.source_recipe, &c.transfer_recipe, &c.prune_recipe, &c.distill_recipe,
                         &c.steal_recipe}) {
    r->epochs = 1;
  }
  return c;
}

EvalOptions quick_options() {
  EvalOptions o;
  o.gen.n_inputs = 12;
  o.gen.pgd_steps = 4;
  o.gen.iterations = 40;
  return o;
}

class TinyEval : public ::testing::Test {
 protected:
  static void SetUpTestSuite() { bench_ = new MiniBench(build_bench(tiny_config())); }
  static void TearDownTestSuite() { delete bench_; }
  static MiniBench* bench_;
};
MiniBench* TinyEval::bench_ = nullptr;

TEST_F(TinyEval, ModelDiffDeterministicAndSane) {
  const auto a = evaluate(*bench_, Method::modeldiff, quick_options());
  const auto b = evaluate(*bench_, Method::modeldiff, quick_options());
  EXPECT_EQ(a.to_json(), b.to_json());
  EXPECT_EQ(a.overall.feasibility, 1.0);
  EXPECT_TRUE(a.self_scores_maximal);
  for (const auto& s : a.self_scores) EXPECT_NEAR(s.score, 1.0, 1e-6);
  for (const auto& row : a.categories) {
    EXPECT_GE(row.correctness, 0.0);
    EXPECT_LE(row.correctness, 1.0);
  }
}

TEST_F(TinyEval, BaselineFeasibilityPattern) {
  const auto weight = evaluate(*bench_, Method::weight, quick_options());
  const auto feature = evaluate(*bench_, Method::feature, quick_options());
  const auto fp = evaluate(*bench_, Method::fingerprint, quick_options());
  for (const auto* r : {&weight, &feature, &fp}) {
    EXPECT_TRUE(r->self_scores_maximal) << r->method;
  }
  for (const auto& s : weight.scores) {
    if (s.relation != Relation::reused) continue;
    const bool cross_arch = bench_->info(s.model_a).arch != bench_->info(s.model_b).arch;
    EXPECT_EQ(weight.scores.size(), feature.scores.size());
    EXPECT_EQ(s.feasible, !cross_arch) << s.pair_id;
  }
  for (const auto& s : feature.scores) {
    if (s.relation != Relation::reused) continue;
    const bool cross_arch = bench_->info(s.model_a).arch != bench_->info(s.model_b).arch;
    EXPECT_EQ(s.feasible, !cross_arch) << s.pair_id;
  }
  for (const auto& s : fp.scores) {
    if (s.relation != Relation::reused) continue;
    const bool transferred = s.category.find("transfer") != std::string::npos;
    EXPECT_EQ(s.feasible, !transferred) << s.pair_id;
  }
}

TEST_F(TinyEval, AblationDefaultIsUnity) {
  const auto rows = ablate(*bench_, {"default", "all-normal"}, quick_options());
  ASSERT_EQ(rows.size(), 2u);
  EXPECT_DOUBLE_EQ(rows[0].relative, 1.0);
  EXPECT_THROW(ablate(*bench_, {"bogus"}, quick_options()), InvalidArgument);
}

TEST_F(TinyEval, SweepHasOneRowPerCheckpoint) {
  const auto rows = mutation_sweep(*bench_, 10, quick_options());
  ASSERT_EQ(rows.size(), 5u);
  for (std::size_t k = 0; k < rows.size(); ++k) {
    EXPECT_EQ(rows[k].iteration, 10 * k);
    EXPECT_GE(rows[k].correctness, 0.0);
    EXPECT_LE(rows[k].correctness, 1.0);
  }
  EXPECT_LE(rows[0].mean_score, rows.back().mean_score);
  EXPECT_EQ(sweep_csv(rows).substr(0, 9), "iteration");
}

}  // namespace
}  // namespace ddv
