#include <gtest/gtest.h>

#include <cmath>

#include "ddvkit/error.hpp"
#include "ddvkit/rng.hpp"
#include "ddvkit/similarity.hpp"
#include "support/oracles.hpp"
#include "support/random_models.hpp"
#include "support/toy_models.hpp"

namespace ddv {
namespace {

Ddv ddv_of(std::vector<double> v, std::string set = "p") { return Ddv{std::move(v), std::move(set), "m"}; }

std::vector<float> f(std::initializer_list<float> v) { return v; }

TEST(CosineDistance, HandValues) {
  EXPECT_NEAR(cosine_distance(f({1, 2, 3}), f({1, 2, 3})), 0.0, 1e-12);
  EXPECT_NEAR(cosine_distance(f({1, 0}), f({0, 1})), 1.0, 1e-12);
  EXPECT_NEAR(cosine_distance(f({1, 2, 3}), f({3, 2, 1})), 1.0 - 10.0 / 14.0, 1e-6);
  EXPECT_NEAR(cosine_distance(f({1, 0}), f({-2, 0})), 2.0, 1e-12);
}

TEST(CosineDistance, ZeroVectorConvention) {
  bool flagged = false;
  EXPECT_EQ(cosine_distance(f({0, 0}), f({0, 0}), &flagged), 0.0);
  EXPECT_TRUE(flagged);
  flagged = false;
  EXPECT_EQ(cosine_distance(f({0, 0}), f({1, 0}), &flagged), 1.0);
  EXPECT_TRUE(flagged);
  EXPECT_THROW(cosine_distance(f({1}), f({1, 2})), ShapeError);
}

TEST(Ddv, HandSetPairsOnIdentityModel) {
  const Model id = testing::identity_dense(3);
  const Tensor x({3, 3}, {1, 2, 3, 1, 0, 0, 2, 2, 2});
  const Tensor x2({3, 3}, {3, 2, 1, 0, 1, 0, 4, 4, 4});
  const auto set = make_pairset(x, x2, id.id(), GenConfig{});
  const Ddv d = compute_ddv(id, set);
  ASSERT_EQ(d.values.size(), 3u);
  EXPECT_NEAR(d.values[0], 1.0 - 10.0 / 14.0, 1e-6);
  EXPECT_NEAR(d.values[1], 1.0, 1e-6);
  EXPECT_NEAR(d.values[2], 0.0, 1e-6);
  EXPECT_EQ(d.pairset_id, set.id);
}

TEST(Ddv, SameInputsGiveZeroVector) {
  const Model m = testing::random_small_model(12);
  const Tensor x = testing::random_input(m.input_shape(), 3, 5);
  const auto set = make_pairset(x, x, m.id(), GenConfig{});
  const Ddv d = compute_ddv(m, set);
  for (double v : d.values) EXPECT_EQ(v, 0.0);
  const Ddv again = compute_ddv(m, set);
  EXPECT_EQ(d.values, again.values);
}

TEST(Ddv, ElementsInRangeAndShapeChecked) {
  for (std::uint64_t s = 0; s < 10; ++s) {
    const Model m = testing::random_small_model(300 + s);
    const auto set = make_pairset(testing::random_input(m.input_shape(), s, 6),
                                  testing::random_input(m.input_shape(), s + 99, 6), m.id(), GenConfig{});
    for (double v : compute_ddv(m, set).values) {
      EXPECT_GE(v, 0.0);
      EXPECT_LE(v, 2.0);
    }
  }
  const Model id = testing::identity_dense(3);
  const auto wrong = make_pairset(Tensor({2, 4}), Tensor({2, 4}), "x", GenConfig{});
  EXPECT_THROW(compute_ddv(id, wrong), ShapeError);
}

TEST(Similarity, Definitions) {
  const Ddv d = ddv_of({0.2, 0.9, 0.4});
  EXPECT_NEAR(similarity(d, d), 1.0, 1e-12);
  EXPECT_NEAR(similarity(d, ddv_of({0.4, 1.8, 0.8})), 1.0, 1e-12);
  EXPECT_NEAR(similarity(ddv_of({1, 0, 1}), ddv_of({0, 1, 0})), 0.0, 1e-12);
  bool flagged = false;
  EXPECT_EQ(similarity(ddv_of({0, 0}), ddv_of({0, 0}), &flagged), 1.0);
  EXPECT_TRUE(flagged);
  EXPECT_EQ(similarity(ddv_of({0, 0}), ddv_of({0, 1})), 0.0);
  EXPECT_THROW(similarity(ddv_of({1, 2}, "a"), ddv_of({1, 2}, "b")), InvalidArgument);
  EXPECT_THROW(similarity(ddv_of({1, 2}), ddv_of({1, 2, 3})), ShapeError);
}

TEST(Similarity, MatchesOracleAndStaysInRange) {
  Rng rng(17);
  for (int t = 0; t < 50; ++t) {
    std::vector<double> a(1 + rng.below(50)), b(a.size());
    for (std::size_t i = 0; i < a.size(); ++i) {
      a[i] = rng.uniform(0, 2);
      b[i] = rng.uniform(0, 2);
    }
    const double s = similarity(ddv_of(a), ddv_of(b));
    EXPECT_NEAR(s, testing::brute_cosine_similarity(a, b), 1e-9);
    EXPECT_GE(s, -1.0);
    EXPECT_LE(s, 1.0);
  }
}

TEST(Threshold, MaxOverReferences) {
  const Ddv t = ddv_of({1, 0, 0});
  const Ddv r1 = ddv_of({1, 1, 1});
  const Ddv r2 = ddv_of({1, 0.1, 0});
  const auto thr = calibrate_threshold(t, {r1, r2});
  ASSERT_TRUE(thr.has_value());
  EXPECT_NEAR(*thr, similarity(t, r2), 1e-12);
  EXPECT_GT(similarity(t, r2), similarity(t, r1));
  EXPECT_FALSE(calibrate_threshold(t, {}).has_value());
  EXPECT_EQ(decide(0.9, std::nullopt), Verdict::undecided);
  EXPECT_EQ(decide(0.9, 0.9), Verdict::not_reused);
  EXPECT_EQ(decide(0.91, 0.9), Verdict::reused);
}

TEST(Threshold, IdenticalReferenceBlocksEverything) {
  const Model m = testing::random_small_model(21);
  const Tensor x = testing::random_input(m.input_shape(), 22, 8);
  GenConfig cfg;
  cfg.pgd_steps = 10;
  const auto set = gen_whitebox(m, x, cfg);
  const auto thr = calibrate_threshold(m, {&m}, set);
  ASSERT_TRUE(thr);
  EXPECT_NEAR(*thr, 1.0, 1e-9);
  const auto report = compare(m, m, x, cfg, {&m}, &set);
  EXPECT_EQ(report.verdict, Verdict::not_reused);
}

TEST(Compare, SelfSimilarityIsOne) {
  for (std::uint64_t s = 0; s < 5; ++s) {
    const Model m = testing::random_small_model(500 + s);
    const Tensor x = testing::random_input(m.input_shape(), s, 8);
    GenConfig cfg;
    cfg.pgd_steps = 10;
    const auto r = compare(m, m, x, cfg);
    EXPECT_NEAR(r.similarity, 1.0, 1e-6);
    EXPECT_EQ(r.verdict, Verdict::undecided);
  }
}

TEST(Compare, DifferentOutputWidthsAreComparable) {
  const Model a = make_architecture("convnetA", 4, 1, "a");
  const Model b = make_architecture("convnetB", 8, 2, "b");
  const Tensor x = testing::random_input(a.input_shape(), 3, 6);
  GenConfig cfg;
  cfg.pgd_steps = 5;
  const auto r = compare(a, b, x, cfg);
  EXPECT_GE(r.similarity, -1.0);
  EXPECT_LE(r.similarity, 1.0);
  const Model other = testing::identity_dense(4);
  EXPECT_THROW(compare(a, other, x, cfg), ShapeError);
}

TEST(Compare, BlackBoxModeAndTargetChoice) {
  Model a = testing::random_small_model(31);
  Model b = a;
  b.set_id("copy");
  b.set_access(Access::blackbox);
  EXPECT_EQ(choose_target(b, a), 1u);
  EXPECT_EQ(choose_target(a, b), 0u);
  a.set_access(Access::blackbox);
  EXPECT_EQ(choose_target(a, b), 0u);
  GenConfig cfg;
  cfg.mode = GenMode::whitebox;
  const Tensor x = testing::random_input(a.input_shape(), 1, 4);
  EXPECT_THROW(compare(a, b, x, cfg), UnsupportedOperation);
  cfg.mode = GenMode::blackbox;
  cfg.iterations = 50;
  EXPECT_NEAR(compare(a, b, x, cfg).similarity, 1.0, 1e-6);
}

TEST(Report, JsonRoundTrip) {
  ComparisonReport r;
  r.target_id = "t";
  r.suspect_id = "s";
  r.similarity = 0.8125;
  r.threshold = 0.5;
  r.verdict = Verdict::reused;
  r.pairset_id = "abc";
  r.reference_ids = {"r1", "r2"};
  r.notes = {"n"};
  const auto j = r.to_json();
  EXPECT_TRUE(j.contains("tool_version"));
  EXPECT_TRUE(j.contains("config_hash"));
  const auto back = ComparisonReport::from_json(nlohmann::json::parse(j.dump()));
  EXPECT_EQ(back.to_json(), j);
  r.threshold.reset();
  r.verdict = Verdict::undecided;
  EXPECT_EQ(ComparisonReport::from_json(r.to_json()).to_json(), r.to_json());
}

}  // namespace
}  // namespace ddv
