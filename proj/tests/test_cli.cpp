// Copyright (c) 2026 The hybridbert authors
// SPDX-License-Identifier: Apache-2.0

#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>
#include <sstream>

#include "hybridbert/cli.hpp"
#include "hybridbert/errors.hpp"
#include "json.hpp"

using namespace hybridbert;
namespace fs = std::filesystem;

namespace {

struct CliResult {
  int code;
  std::string out, err;
};

CliResult cli(std::vector<std::string> args) {
  std::ostringstream out, err;
  const int code = run_cli(args, out, err);
  return {code, out.str(), err.str()};
}

std::vector<std::string> read_lines(const fs::path& p) {
  std::ifstream in(p);
  std::vector<std::string> lines;
  for (std::string line; std::getline(in, line);) lines.push_back(line);
  return lines;
}

class CliRun : public ::testing::Test {
 protected:
  static void SetUpTestSuite() {
    root_ = fs::temp_directory_path() / "hybridbert_cli_test";
    fs::remove_all(root_);
    fs::create_directories(root_);
    SyntheticCorpusConfig sc;
    sc.documents = 40;
    sc.words = 50;
    std::ofstream(root_ / "corpus.txt") << generate_bigram_corpus(sc);
  }
  static void TearDownTestSuite() { fs::remove_all(root_); }

  static std::vector<std::string> pretrain_args(const std::string& out_dir) {
    return {"pretrain",         "--corpus",       (root_ / "corpus.txt").string(),
            "--out-dir",        out_dir,          "--hidden",
            "16",               "--heads",        "2",
            "--ffn",            "32",             "--max-len",
            "32",               "--layer-plan",   "B1A+T1P",
            "--total-steps",    "6",              "--warmup-steps",
            "2",                "--batch-size",   "3",
            "--eval-every",     "3",              "--eval-batches",
            "1",                "--timing-metrics", "false",
            "--seed",           "7"};
  }

  static fs::path root_;
};

fs::path CliRun::root_;

}  // namespace

TEST(Config, ParsesFlatKeyValueText) {
  RunConfig cfg;
  std::istringstream text("# comment\n  lr = 0.002  \n\nlayer_plan=B4P+T8A # trailing\ndropmask = true\n");
  apply_config_text(cfg, text, "run.cfg");
  finalize_config(cfg);
  EXPECT_DOUBLE_EQ(cfg.train.lr, 0.002);
  EXPECT_EQ(format_layer_plan(cfg.model.plan), "B4P+T8A");
  EXPECT_EQ(cfg.model.num_layers, 12u);
  EXPECT_TRUE(cfg.model.dropmask.enabled);
}

TEST(Config, ErrorsNameSourceLineAndKey) {
  RunConfig cfg;
  std::istringstream unknown("lr = 1\nbogus = 3\n");
  try {
    apply_config_text(cfg, unknown, "run.cfg");
    FAIL();
  } catch (const ConfigError& e) {
    EXPECT_EQ(e.key(), "run.cfg:2: bogus");
  }
  std::istringstream bad_value("total_steps = many\n");
  EXPECT_THROW(apply_config_text(cfg, bad_value, "run.cfg"), ConfigError);
  std::istringstream no_equals("lr 0.1\n");
  EXPECT_THROW(apply_config_text(cfg, no_equals, "run.cfg"), ConfigError);
  EXPECT_THROW(set_config_value(cfg, "layer_plan", "B8X"), ConfigError);
  EXPECT_THROW(set_config_value(cfg, "dtype", "f16"), ConfigError);
}

TEST(Config, ExplicitNumLayersMustMatchPlan) {
  RunConfig cfg;
  set_config_value(cfg, "layer_plan", "12P");
  set_config_value(cfg, "num_layers", "8");
  try {
    finalize_config(cfg);
    FAIL();
  } catch (const ConfigError& e) {
    EXPECT_EQ(e.key(), "num_layers");
  }
}

TEST(Config, EchoReadsBackToSameConfig) {
  RunConfig cfg;
  set_config_value(cfg, "lr", "0.1");
  set_config_value(cfg, "layer_plan", "B8P+T4A");
  set_config_value(cfg, "mask_rate", "0.3");
  set_config_value(cfg, "corpus", "data/corpus.txt");
  finalize_config(cfg);
  const std::string echo = format_config(cfg);
  RunConfig back;
  std::istringstream in(echo);
  apply_config_text(back, in, "echo");
  finalize_config(back);
  EXPECT_EQ(format_config(back), echo);
  EXPECT_EQ(std::count(echo.begin(), echo.end(), '\n'), static_cast<long>(config_keys().size()));
}

TEST(Cli, UsageErrorsExitTwo) {
  EXPECT_EQ(cli({}).code, 2);
  EXPECT_EQ(cli({"train"}).code, 2);
  EXPECT_EQ(cli({"pretrain", "--no-such-flag", "1"}).code, 2);
  const auto plan = cli({"pretrain", "--corpus", "x.txt", "--layer-plan", "B8X"});
  EXPECT_EQ(plan.code, 2);
  EXPECT_NE(plan.err.find("layer_plan"), std::string::npos);
  EXPECT_EQ(cli({"pretrain"}).code, 2);  // corpus has no default
  EXPECT_EQ(cli({"gradcheck", "--dtype", "f32"}).code, 2);
  EXPECT_EQ(cli({"bench", "--bench-reps", "3"}).code, 2);
  EXPECT_EQ(cli({"pretrain", "--help"}).code, 0);
}

TEST(Cli, RuntimeFailureExitsOne) {
  const auto r = cli({"pretrain", "--corpus", "/nonexistent/corpus.txt", "--out-dir",
                      (fs::temp_directory_path() / "hybridbert_cli_missing").string()});
  EXPECT_EQ(r.code, 1);
  fs::remove_all(fs::temp_directory_path() / "hybridbert_cli_missing");
}

TEST_F(CliRun, PretrainWritesLogsConfigAndCheckpoint) {
  const fs::path dir = root_ / "a";
  const auto r = cli(pretrain_args(dir.string()));
  ASSERT_EQ(r.code, 0) << r.err;
  const auto metrics = read_lines(dir / "metrics.jsonl");
  ASSERT_EQ(metrics.size(), 6u);
  for (std::size_t i = 0; i < metrics.size(); ++i) {
    const auto j = nlohmann::json::parse(metrics[i]);
    EXPECT_EQ(j["step"].get<std::size_t>(), i + 1);
    EXPECT_NEAR(j["loss_total"].get<double>(), j["loss_mlm"].get<double>() + j["loss_sso"].get<double>(), 1e-6);
  }
  EXPECT_EQ(read_lines(dir / "eval.jsonl").size(), 2u);
  EXPECT_TRUE(fs::exists(dir / "checkpoint.hbck"));
  EXPECT_TRUE(fs::exists(dir / "vocab.txt"));
  const auto echo = read_lines(dir / "config.cfg");
  EXPECT_NE(std::find(echo.begin(), echo.end(), "layer_plan = B1A+T1P"), echo.end());
  EXPECT_NE(std::find(echo.begin(), echo.end(), "num_layers = 2"), echo.end());

  // Same effective config, same metrics.
  const fs::path again = root_ / "a2";
  ASSERT_EQ(cli(pretrain_args(again.string())).code, 0);
  EXPECT_EQ(read_lines(again / "metrics.jsonl"), metrics);

  // The echoed config alone reproduces the run.
  const fs::path echoed = root_ / "a3";
  ASSERT_EQ(cli({"pretrain", "--config", (dir / "config.cfg").string(), "--out-dir", echoed.string()}).code, 0);
  EXPECT_EQ(read_lines(echoed / "metrics.jsonl"), metrics);

  const auto ev = cli({"eval", "--checkpoint", (dir / "checkpoint.hbck").string()});
  ASSERT_EQ(ev.code, 0) << ev.err;
  const auto j = nlohmann::json::parse(ev.out);
  EXPECT_EQ(j["step"].get<int>(), 6);
  EXPECT_EQ(ev.out, cli({"eval", "--checkpoint", (dir / "checkpoint.hbck").string()}).out);

  const auto info = cli({"inspect", "--checkpoint", (dir / "checkpoint.hbck").string()});
  ASSERT_EQ(info.code, 0);
  EXPECT_NE(info.out.find("meta.step i64 [1] 1 = 6"), std::string::npos);
  EXPECT_NE(info.out.find("layers.1.pooling.local.weight f32 [16,16] 256"), std::string::npos);
}

TEST_F(CliRun, ResumeContinuesTheSameTrajectory) {
  const fs::path full = root_ / "full";
  auto args = pretrain_args(full.string());
  args.insert(args.end(), {"--checkpoint-every", "3"});
  ASSERT_EQ(cli(args).code, 0);
  const fs::path resumed = root_ / "resumed";
  auto rargs = pretrain_args(resumed.string());
  rargs.insert(rargs.end(), {"--resume", (full / "checkpoint_step3.hbck").string()});
  ASSERT_EQ(cli(rargs).code, 0);
  const auto all = read_lines(full / "metrics.jsonl");
  const auto tail = read_lines(resumed / "metrics.jsonl");
  ASSERT_EQ(tail.size(), 3u);
  EXPECT_EQ(std::vector<std::string>(all.begin() + 3, all.end()), tail);
}

TEST_F(CliRun, BenchWritesCsvAndJson) {
  const fs::path dir = root_ / "bench";
  const auto r = cli({"bench", "--out-dir", dir.string(), "--hidden", "16", "--heads", "2", "--bench-lengths", "8,16,32"});
  ASSERT_EQ(r.code, 0) << r.err;
  const auto csv = read_lines(dir / "bench.csv");
  ASSERT_EQ(csv.size(), 7u);
  EXPECT_EQ(csv[0], "mixer,l,median_s,iqr_s,activation_elements");
  std::ifstream js(dir / "bench.json");
  const auto j = nlohmann::json::parse(js);
  EXPECT_EQ(j["mixers"].size(), 2u);
}

TEST(Cli, GradcheckPassesInDoublePrecision) {
  const auto r = cli({"gradcheck", "--dtype", "f64"});
  EXPECT_EQ(r.code, 0) << r.out;
  EXPECT_NE(r.out.find("model:B1A+T1P"), std::string::npos) << r.out;
}
