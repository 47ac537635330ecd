#include <array>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>

#include <gtest/gtest.h>
#include <nlohmann/json.hpp>
#include <sys/wait.h>

#include "ddvkit/container.hpp"
#include "ddvkit/dataset.hpp"
#include "ddvkit/reuse.hpp"
#include "ddvkit/serialize.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace ddv;

namespace {

struct CliRun {
  int status = -1;
  std::string out;
  std::string err;
};

CliRun run(const std::string& args, const std::string& env = "") {
  static int counter = 0;
  const fs::path err_file = fs::temp_directory_path() / ("ddvkit_cli_err_" + std::to_string(::getpid()) + "_" +
                                                         std::to_string(counter++));
  const std::string cmd = env + " " + std::string(DDVKIT_CLI) + " " + args + " 2>" + err_file.string();
  CliRun r;
  FILE* p = ::popen(cmd.c_str(), "r");
  if (!p) return r;
  std::array<char, 4096> buf{};
  while (std::size_t k = std::fread(buf.data(), 1, buf.size(), p)) r.out.append(buf.data(), k);
  const int st = ::pclose(p);
  r.status = WIFEXITED(st) ? WEXITSTATUS(st) : -1;
  r.err = read_file(err_file);
  fs::remove(err_file);
  return r;
}

std::string line_value(const std::string& out, const std::string& key) {
  std::istringstream in(out);
  for (std::string line; std::getline(in, line);) {
    if (line.rfind(key + " ", 0) == 0) return line.substr(key.size() + 1);
  }
  return {};
}

bool single_json_error(const std::string& err, const std::string& kind) {
  if (std::count(err.begin(), err.end(), '\n') != 1) return false;
  const json j = json::parse(err, nullptr, false);
  return !j.is_discarded() && j.value("error", "") == kind && j.contains("message");
}

const std::string kQuick = "-q --n-inputs 24 --pgd-steps 40";

class Cli : public ::testing::Test {
 protected:
  static void SetUpTestSuite() {
    dir_ = fs::temp_directory_path() / ("ddvkit_cli_" + std::to_string(::getpid()));
    fs::remove_all(dir_);
    fs::create_directories(dir_ / "refs");
    const auto data = make_dataset("taskA", 3, 800);
    const Model src = train_from_scratch("convnetA", data, {8, 0.1, 32}, 1, "src");
    save_model(src, dir_ / "src.bin");
    save_model(quantize(src), dir_ / "quant.bin");
    save_model(train_from_scratch("convnetA", data, {8, 0.1, 32}, 2, "ref-a"), dir_ / "refs" / "a.bin");
    save_model(train_from_scratch("convnetA", data, {8, 0.1, 32}, 3, "ref-b"), dir_ / "refs" / "b.bin");
    save_model(train_from_scratch("convnetB", data, {8, 0.1, 32}, 4, "ref-c"), dir_ / "refs" / "c.bin");
  }
  static void TearDownTestSuite() { fs::remove_all(dir_); }
  static std::string path(const std::string& name) { return (dir_ / name).string(); }
  static fs::path dir_;
};
fs::path Cli::dir_;

}  // namespace

TEST_F(Cli, SelfCompareIsOne) {
  const CliRun r = run("compare " + kQuick + " --target " + path("src.bin") + " --suspect " + path("src.bin"));
  ASSERT_EQ(r.status, 0) << r.err;
  EXPECT_NEAR(std::stod(line_value(r.out, "similarity")), 1.0, 1e-6);
  EXPECT_EQ(line_value(r.out, "config_hash").size(), 16u);
}

TEST_F(Cli, JsonOutputCarriesConfigHash) {
  const CliRun r = run("compare --json " + kQuick + " --target " + path("src.bin") + " --suspect " + path("src.bin"));
  ASSERT_EQ(r.status, 0) << r.err;
  const json j = json::parse(r.out);
  EXPECT_NEAR(j["result"]["similarity"].get<double>(), 1.0, 1e-6);
  EXPECT_EQ(j["config_hash"], j["result"]["config_hash"]);
  EXPECT_EQ(j["config"]["gen"]["n_inputs"], 24);
}

TEST_F(Cli, QuantizedSuspectIsReusedAgainstRetrainedRefs) {
  const CliRun r = run("compare " + kQuick + " --target " + path("src.bin") + " --suspect " + path("quant.bin") +
                    " --refs " + path("refs") + " -o " + path("report.json"));
  ASSERT_EQ(r.status, 0) << r.err;
  EXPECT_EQ(line_value(r.out, "verdict"), "reused") << r.out;
  EXPECT_FALSE(line_value(r.out, "threshold").empty());
  const json report = json::parse(read_file(path("report.json")));
  EXPECT_EQ(report["result"]["reference_ids"].size(), 3u);
  EXPECT_EQ(report["config_hash"].get<std::string>(), line_value(r.out, "config_hash"));
}

TEST_F(Cli, AdapterSuspectMatchesFileSuspect) {
  const CliRun gen = run("inputs gen " + kQuick + " --target " + path("src.bin") + " -o " + path("pairs.bin"));
  ASSERT_EQ(gen.status, 0) << gen.err;
  const CliRun file = run("compare -q --target " + path("src.bin") + " --suspect " + path("quant.bin") + " --pairs " +
                       path("pairs.bin"));
  const CliRun wire = run("compare -q --target " + path("src.bin") + " --suspect \"exec:" + std::string(DDVKIT_CLI) +
                       " serve --model " + path("quant.bin") + "\" --pairs " + path("pairs.bin"));
  ASSERT_EQ(file.status, 0) << file.err;
  ASSERT_EQ(wire.status, 0) << wire.err;
  EXPECT_NEAR(std::stod(line_value(file.out, "similarity")), std::stod(line_value(wire.out, "similarity")), 1e-6);
}

TEST_F(Cli, ErrorsAreSingleLineJson) {
  CliRun r = run("compare --bogus-flag 1 --target a --suspect b");
  EXPECT_EQ(r.status, 2);
  EXPECT_TRUE(single_json_error(r.err, "usage")) << r.err;

  r = run("compare -q --target " + path("missing.bin") + " --suspect " + path("src.bin"));
  EXPECT_EQ(r.status, 1);
  EXPECT_TRUE(single_json_error(r.err, "io")) << r.err;

  r = run("compare -q --mode whitebox --target \"exec:" + std::string(DDVKIT_CLI) + " serve --model " +
          path("src.bin") + "\" --suspect " + path("src.bin"));
  EXPECT_EQ(r.status, 1);
  EXPECT_TRUE(single_json_error(r.err, "unsupported")) << r.err;

  r = run("compare " + kQuick + " --target " + path("src.bin") + " --suspect " + path("src.bin"),
          "DDVKIT_THREADS=lots");
  EXPECT_EQ(r.status, 1);
  EXPECT_TRUE(single_json_error(r.err, "config")) << r.err;

  r = run("eval --bench " + path("no-such-bench"));
  EXPECT_EQ(r.status, 2);
  EXPECT_TRUE(single_json_error(r.err, "usage")) << r.err;
}

TEST_F(Cli, EnvSeedChangesConfigHash) {
  const std::string args = "compare " + kQuick + " --target " + path("src.bin") + " --suspect " + path("src.bin");
  const CliRun a = run(args);
  const CliRun b = run(args, "DDVKIT_SEED=5");
  ASSERT_EQ(a.status, 0);
  ASSERT_EQ(b.status, 0);
  EXPECT_NE(line_value(a.out, "config_hash"), line_value(b.out, "config_hash"));
}

TEST_F(Cli, BenchBuildThenEval) {
  const json cfg{{"dataset_size", 200},
                 {"steal_queries", 200},
                 {"source_recipe", {{"epochs", 1}, {"learning_rate", 0.1}, {"batch_size", 32}}},
                 {"transfer_recipe", {{"epochs", 1}, {"learning_rate", 0.05}, {"batch_size", 32}}},
                 {"prune_recipe", {{"epochs", 1}, {"learning_rate", 0.02}, {"batch_size", 32}}},
                 {"distill_recipe", {{"epochs", 1}, {"learning_rate", 0.025}, {"batch_size", 32}}},
                 {"steal_recipe", {{"epochs", 1}, {"learning_rate", 0.1}, {"batch_size", 32}}}};
  write_file(path("tiny.json"), cfg.dump());
  const CliRun b = run("bench build -q " + path("tiny.json") + " -o " + path("bench"));
  ASSERT_EQ(b.status, 0) << b.err;
  EXPECT_TRUE(fs::exists(path("bench/manifest.json")));

  const std::string eval = "eval -q --bench " + path("bench") + " --method modeldiff --n-inputs 8 --pgd-steps 3";
  const CliRun e1 = run(eval + " -o " + path("e1.json"));
  ASSERT_EQ(e1.status, 0) << e1.err;
  const CliRun e2 = run(eval + " -o " + path("e2.json") + " --threads 2");
  ASSERT_EQ(e2.status, 0) << e2.err;
  const json j1 = json::parse(read_file(path("e1.json")));
  const json j2 = json::parse(read_file(path("e2.json")));
  EXPECT_EQ(j1["config_hash"], j2["config_hash"]);
  EXPECT_EQ(j1["result"], j2["result"]);
  EXPECT_EQ(j1["result"]["method"], "modeldiff");

  const CliRun bad = run("bench build -q " + path("missing.json") + " -o " + path("bench2"));
  EXPECT_EQ(bad.status, 1);
  EXPECT_TRUE(single_json_error(bad.err, "io")) << bad.err;
  write_file(path("bad.json"), R"({"generators": ["train"]})");
  const CliRun cfg_err = run("bench build -q " + path("bad.json") + " -o " + path("bench2"));
  EXPECT_EQ(cfg_err.status, 1);
  EXPECT_TRUE(single_json_error(cfg_err.err, "config")) << cfg_err.err;
}
