#include <gtest/gtest.h>

#include <atomic>
#include <cmath>
#include <filesystem>
#include <map>
#include <set>

#include "ddvkit/bench.hpp"
#include "ddvkit/error.hpp"
#include "ddvkit/reuse.hpp"
#include "ddvkit/rng.hpp"

namespace ddv {
namespace {

TEST(Dataset, DeterministicBalancedInRange) {
  for (const std::string task : {"taskA", "taskB", "taskC"}) {
    const auto a = make_dataset(task, 42, 1000);
    const auto b = make_dataset(task, 42, 1000);
    EXPECT_TRUE(a.images.identical(b.images));
    EXPECT_EQ(a.labels, b.labels);
    EXPECT_GE(a.num_classes, 4u);
    std::map<int, int> hist;
    for (int l : a.labels) ++hist[l];
    EXPECT_EQ(hist.size(), a.num_classes);
    const double expected = 1000.0 / static_cast<double>(a.num_classes);
    for (auto [cls, count] : hist) {
      EXPECT_GE(count, expected * 0.9) << task << " class " << cls;
      EXPECT_LE(count, expected * 1.1) << task << " class " << cls;
    }
    for (float v : a.images.data()) {
      ASSERT_GE(v, 0.0f);
      ASSERT_LE(v, 1.0f);
    }
    EXPECT_FALSE(a.images.identical(make_dataset(task, 43, 1000).images));
  }
  EXPECT_THROW(make_dataset("taskA", 1, 199), InvalidArgument);
  EXPECT_THROW(make_dataset("taskZ", 1, 200), InvalidArgument);
}

TEST(Dataset, TaskAHistogramWithinBand) {
  const auto d = make_dataset("taskA", 7, 1000);
  std::map<int, int> hist;
  for (int l : d.labels) ++hist[l];
  for (auto [cls, count] : hist) {
    EXPECT_GE(count, 225);
    EXPECT_LE(count, 275);
  }
}

// One trained teacher shared by the measured-quality tests.
class Trained : public ::testing::Test {
 protected:
  static void SetUpTestSuite() {
    data_ = new ShapesDataset(make_dataset("taskA", 5, 1500));
    teacher_ = new Model(train_from_scratch("convnetA", *data_, {15, 0.1, 32}, 9, "teacher"));
  }
  static void TearDownTestSuite() {
    delete teacher_;
    delete data_;
  }
  static LabeledData held_out() { return data_->split().second; }
  static ShapesDataset* data_;
  static Model* teacher_;
};
ShapesDataset* Trained::data_ = nullptr;
Model* Trained::teacher_ = nullptr;

TEST_F(Trained, TransferFreezesAndRecordsLineage) {
  const auto target = make_dataset("taskC", 6, 400);
  const Model t = transfer(*teacher_, target, 0.1, {1, 0.05, 32}, 3);
  EXPECT_EQ(t.output_dim(), target.num_classes);
  const auto idx = t.param_layer_indices();
  const std::size_t trained = transfer_trainable_layers(idx.size(), 0.1);
  EXPECT_EQ(trained, 1u);
  for (std::size_t p = 0; p + trained < idx.size(); ++p) {
    EXPECT_TRUE(t.layers()[idx[p]].identical(teacher_->layers()[idx[p]])) << "layer " << idx[p];
  }
  ASSERT_FALSE(t.lineage().empty());
  EXPECT_EQ(t.lineage().back().op, "transfer");
  EXPECT_EQ(t.lineage().back().parent, "teacher");
  EXPECT_DOUBLE_EQ(t.lineage().back().params.at("fraction").get<double>(), 0.1);
  EXPECT_THROW(transfer(*teacher_, target, 0.0, {1, 0.05, 32}, 3), InvalidArgument);
  EXPECT_THROW(transfer(*teacher_, target, 1.5, {1, 0.05, 32}, 3), InvalidArgument);
}

TEST(Transfer, TenLayerModelTrainsOneLayer) {
  EXPECT_EQ(transfer_trainable_layers(10, 0.1), 1u);
  EXPECT_EQ(transfer_trainable_layers(10, 0.5), 5u);
  EXPECT_EQ(transfer_trainable_layers(10, 1.0), 10u);
  EXPECT_EQ(transfer_trainable_layers(4, 0.1), 1u);
}

TEST_F(Trained, TransferToSameTaskKeepsAccuracy) {
  const Model t = transfer(*teacher_, *data_, 1.0, {4, 0.02, 32}, 4);
  EXPECT_NEAR(accuracy(t, held_out()), accuracy(*teacher_, held_out()), 0.05);
}

TEST_F(Trained, PruneSparsityMaskAndDrop) {
  const auto [train_split, test_split] = data_->split();
  const Model p5 = prune(*teacher_, 0.5, train_split, {2, 0.02, 32}, 1);
  EXPECT_GE(weight_sparsity(p5), 0.49);
  EXPECT_LE(weight_sparsity(p5), 0.51);
  const Model p2 = prune(*teacher_, 0.2, train_split, {0, 0.02, 32}, 1);
  const Model p8 = prune(*teacher_, 0.8, train_split, {0, 0.02, 32}, 1);
  // 300 test rows are too coarse to resolve the drop; use a large independent set
  const auto big = make_dataset("taskA", 99, 4000).labeled();
  const double base = accuracy(*teacher_, big);
  EXPECT_LT(base - accuracy(p2, big), base - accuracy(p8, big));
  EXPECT_THROW(prune(*teacher_, 0.0, train_split, {0, 0.02, 32}, 1), InvalidArgument);
  EXPECT_THROW(prune(*teacher_, 1.0, train_split, {0, 0.02, 32}, 1), InvalidArgument);
  EXPECT_EQ(p5.lineage().back().op, "prune");
}

TEST_F(Trained, PruneZerosSurviveFineTuning) {
  const auto [train_split, test_split] = data_->split();
  const Model once = prune(*teacher_, 0.5, train_split, {0, 0.02, 32}, 2);
  const Model tuned = prune(*teacher_, 0.5, train_split, {2, 0.05, 32}, 2);
  for (std::size_t l : once.param_layer_indices()) {
    const auto& a = once.layers()[l].weights;
    const auto& b = tuned.layers()[l].weights;
    for (std::size_t i = 0; i < a.size(); ++i) {
      if (a[i] == 0.0f) ASSERT_EQ(b[i], 0.0f);
    }
  }
}

TEST_F(Trained, QuantizeBoundAgreementIdempotence) {
  const Model q = quantize(*teacher_);
  for (std::size_t l : q.param_layer_indices()) {
    const Layer& ql = q.layers()[l];
    ASSERT_TRUE(ql.quant.has_value());
    const Layer& orig = teacher_->layers()[l];
    for (std::size_t i = 0; i < orig.weights.size(); ++i) {
      EXPECT_LE(std::fabs(orig.weights[i] - ql.weights[i]), ql.quant->scale / 2 + 1e-7);
    }
  }
  const Tensor probe = make_dataset("taskA", 77, 500).images;
  EXPECT_GE(agreement(*teacher_, q, probe), 0.95);
  const Model qq = quantize(q);
  for (std::size_t l : q.param_layer_indices()) {
    EXPECT_EQ(qq.layers()[l].quant->codes, q.layers()[l].quant->codes);
    EXPECT_TRUE(qq.layers()[l].weights.identical(q.layers()[l].weights));
  }
}

TEST(Quantize, UnitGridIsExactAndConstantLayersFlagged) {
  const std::vector<float> w{-1, 0, 1, 1, -1, 0};
  const QuantParams q = quantize_weights(w);
  for (std::size_t i = 0; i < w.size(); ++i) EXPECT_EQ(q.dequantize(q.codes[i]), w[i]);
  bool constant = false;
  const std::vector<float> flat(5, 0.3f);
  const QuantParams c = quantize_weights(flat, &constant);
  EXPECT_TRUE(constant);
  EXPECT_EQ(c.scale, 1.0);

  Layer l = dense_layer(2, 2);
  l.weights = Tensor({2, 2}, {0.5f, 0.5f, 0.5f, 0.5f});
  const Model m("const", {2}, {l});
  const Model qm = quantize(m);
  EXPECT_TRUE(qm.lineage().back().params.contains("constant_layers_scale_forced_to_1"));
}

TEST_F(Trained, DistillAgreesWithoutCopyingWeights) {
  const Model s = distill(*teacher_, "convnetA", *data_, {10, 0.025, 32}, 12);
  EXPECT_GE(agreement(*teacher_, s, held_out().inputs), 0.85);
  EXPECT_FALSE(s.layers()[0].weights.identical(teacher_->layers()[0].weights));
  EXPECT_EQ(s.lineage().back().op, "distill");
  EXPECT_EQ(s.lineage().back().parent, "teacher");
  EXPECT_TRUE(s.lineage().back().params.at("feature_loss").get<bool>());
  const Model other = distill(*teacher_, "convnetB", *data_, {1, 0.025, 32}, 12);
  EXPECT_FALSE(other.lineage().back().params.at("feature_loss").get<bool>());
}

class CountingClassifier : public Classifier {
 public:
  explicit CountingClassifier(const Model& m) : m_(m) {}
  const std::string& id() const override { return m_.id(); }
  const Shape& input_shape() const override { return m_.input_shape(); }
  std::size_t output_dim() const override { return m_.output_dim(); }
  Tensor forward(const Tensor& batch) const override {
    queried += batch.rows();
    return m_.forward(batch);
  }
  mutable std::atomic<std::size_t> queried{0};

 private:
  const Model& m_;
};

TEST_F(Trained, StealQueriesOncePerImageAndAgrees) {
  const CountingClassifier api(*teacher_);
  const Tensor queries = make_dataset("taskA", 31, 1000).images;
  const Model s = steal(api, "convnetB", queries, {10, 0.1, 32}, 8, "taskA");
  EXPECT_EQ(api.queried.load(), 1000u);
  EXPECT_GE(agreement(*teacher_, s, held_out().inputs), 0.70);
  EXPECT_EQ(s.lineage().back().op, "steal");
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

class TinyBench : public ::testing::Test {
 protected:
  static void SetUpTestSuite() { bench_ = new MiniBench(build_bench(tiny_config())); }
  static void TearDownTestSuite() { delete bench_; }
  static MiniBench* bench_;
};
MiniBench* TinyBench::bench_ = nullptr;

TEST_F(TinyBench, CountsFollowConfig) {
  const auto& c = bench_->config;
  std::size_t direct = 0, combined = 0;
  for (const auto* p : bench_->reused_pairs()) (p->combined ? combined : direct)++;
  const std::size_t archs = c.architectures.size(), tasks = c.transfer_tasks.size();
  EXPECT_EQ(direct, archs * (tasks * c.tune_fractions.size() + c.prune_ratios.size() + 3));
  EXPECT_EQ(combined, archs * tasks * (c.prune_ratios.size() + 2));
  EXPECT_EQ(direct, c.expected_direct_pairs());
  EXPECT_EQ(combined, c.expected_combined_pairs());
  EXPECT_EQ(bench_->models.size(), c.expected_models());
  std::size_t retrained = 0;
  for (const auto& m : bench_->models) retrained += m.role == "retrained";
  EXPECT_GE(retrained, 6u);
}

TEST_F(TinyBench, RelationMatchesLineage) {
  std::set<std::string> ids;
  for (const auto& p : bench_->pairs) {
    EXPECT_TRUE(ids.insert(p.id).second);
    if (p.relation == Relation::reused) {
      EXPECT_TRUE(bench_->descends(p.model_b, p.model_a)) << p.id;
      EXPECT_FALSE(bench_->references_for(p).empty());
    } else {
      EXPECT_FALSE(bench_->reachable(p.model_a, p.model_b)) << p.id;
      EXPECT_FALSE(bench_->connected(p.model_a, p.model_b)) << p.id;
    }
  }
}

TEST_F(TinyBench, StealUsesOtherArchitecture) {
  for (const auto* p : bench_->reused_pairs()) {
    if (p->category != "steal") continue;
    EXPECT_NE(bench_->info(p->model_a).arch, bench_->info(p->model_b).arch);
  }
}

TEST_F(TinyBench, RegenerationIsBitIdentical) {
  const MiniBench again = build_bench(tiny_config());
  ASSERT_EQ(again.models.size(), bench_->models.size());
  for (std::size_t i = 0; i < again.models.size(); ++i) {
    ASSERT_EQ(again.models[i].id, bench_->models[i].id);
    const auto& a = again.model(again.models[i].id).layers();
    const auto& b = bench_->model(again.models[i].id).layers();
    for (std::size_t l = 0; l < a.size(); ++l) EXPECT_TRUE(a[l].identical(b[l]));
  }
}

TEST_F(TinyBench, ManifestRoundTrip) {
  const auto dir = std::filesystem::temp_directory_path() / "ddvkit_tiny_bench";
  std::filesystem::remove_all(dir);
  save_bench(*bench_, dir);
  const MiniBench back = load_bench(dir);
  EXPECT_EQ(back.pairs.size(), bench_->pairs.size());
  EXPECT_EQ(back.config.hash(), bench_->config.hash());
  for (const auto& m : bench_->models) {
    EXPECT_TRUE(std::filesystem::path(m.file).is_relative());
    const auto& a = back.model(m.id).layers();
    const auto& b = bench_->model(m.id).layers();
    for (std::size_t l = 0; l < a.size(); ++l) EXPECT_TRUE(a[l].identical(b[l]));
  }
  std::filesystem::remove(dir / bench_->models.front().file);
  EXPECT_THROW(load_bench(dir), IoError);
  std::filesystem::remove_all(dir);
}

TEST(BenchConfig, MissingGeneratorRejected) {
  BenchConfig c;
  c.generators.erase(std::find(c.generators.begin(), c.generators.end(), "steal"));
  EXPECT_THROW(c.validate(), ConfigError);
  EXPECT_THROW(build_bench(c), ConfigError);
  BenchConfig one_arch;
  one_arch.architectures = {"convnetA"};
  EXPECT_THROW(one_arch.validate(), ConfigError);
  EXPECT_EQ(BenchConfig::from_json(BenchConfig{}.to_json()).hash(), BenchConfig{}.hash());
}

TEST(BenchCategories, Families) {
  EXPECT_EQ(category_family("transfer-0.5"), "transfer");
  EXPECT_EQ(category_family("prune-0.8"), "prune");
  EXPECT_EQ(category_family("quantize"), "quantize");
  EXPECT_EQ(category_family("transfer+distill"), "combined");
}

}  // namespace
}  // namespace ddv
