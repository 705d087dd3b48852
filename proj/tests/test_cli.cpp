#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>
#include <sstream>

#include <json.hpp>

#include "cli.hpp"

namespace fs = std::filesystem;
using objtx::cli::run_cli;

namespace {

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream s;
  s << in.rdbuf();
  return s.str();
}

struct Run {
  int code;
  std::string out, err;
};

Run cli(std::vector<std::string> args) {
  args.insert(args.begin(), "objtx");
  std::ostringstream out, err;
  const int code = run_cli(args, out, err);
  return {code, out.str(), err.str()};
}

class CliTest : public ::testing::Test {
 protected:
  void SetUp() override {
    dir_ = fs::temp_directory_path() /
           ("objtx_cli_" + std::string(::testing::UnitTest::GetInstance()->current_test_info()->name()));
    fs::remove_all(dir_);
    fs::create_directories(dir_);
    std::ofstream(dir_ / "small.cfg") << "# small run\n"
                                         "gen.n_movies=6\n"
                                         "gen.segments_per_movie=2\n"
                                         "model.hidden=16\n"
                                         "model.heads=2\n"
                                         "model.head_dim=8\n"
                                         "model.ffn_dim=32\n"
                                         "model.layers=1\n"
                                         "pretrain.iterations=20\n"
                                         "pretrain.batch=4\n"
                                         "finetune.epochs=1,2\n"
                                         "finetune.batches=4\n"
                                         "fusion.iterations=20\n";
  }
  void TearDown() override { fs::remove_all(dir_); }

  std::string cfg() const { return (dir_ / "small.cfg").string(); }
  std::string path(const std::string& name) const { return (dir_ / name).string(); }

  void generate() {
    auto r = cli({"gen-synth", "--config", cfg(), "--seed", "3", "--out", path("g")});
    ASSERT_EQ(r.code, 0) << r.err;
  }

  fs::path dir_;
};

}  // namespace

TEST_F(CliTest, GradcheckPasses) {
  auto r = cli({"gradcheck", "--out", path("gc")});
  EXPECT_EQ(r.code, 0) << r.out << r.err;
  EXPECT_NE(r.out.find("model.masked_prediction"), std::string::npos);
  EXPECT_EQ(r.out.find("FAIL"), std::string::npos);
}

TEST_F(CliTest, SameSeedPretrainingIsIdentical) {
  generate();
  const auto corpus = path("g/corpus.jsonl");
  for (const char* out : {"p1", "p2"}) {
    auto r = cli({"pretrain", "--config", cfg(), "--corpus", corpus, "--seed", "9", "--out", path(out)});
    ASSERT_EQ(r.code, 0) << r.err;
  }
  EXPECT_EQ(slurp(path("p1/metrics.jsonl")), slurp(path("p2/metrics.jsonl")));
  EXPECT_EQ(slurp(path("p1/checkpoint.bin")), slurp(path("p2/checkpoint.bin")));
  EXPECT_FALSE(slurp(path("p1/metrics.jsonl")).empty());
  auto r = cli({"pretrain", "--config", cfg(), "--corpus", corpus, "--seed", "10", "--out", path("p3")});
  ASSERT_EQ(r.code, 0);
  EXPECT_NE(slurp(path("p1/checkpoint.bin")), slurp(path("p3/checkpoint.bin")));
}

TEST_F(CliTest, FinetuneReportNamesTheChosenCell) {
  generate();
  const auto corpus = path("g/corpus.jsonl");
  ASSERT_EQ(cli({"pretrain", "--config", cfg(), "--corpus", corpus, "--out", path("p")}).code, 0);
  auto r = cli({"finetune", "--config", cfg(), "--corpus", corpus, "--task", "harmony", "--checkpoint",
                path("p/checkpoint.bin"), "--out", path("f")});
  ASSERT_EQ(r.code, 0) << r.err;
  auto report = nlohmann::json::parse(slurp(path("f/report.json")));
  EXPECT_EQ(report["task"], "harmony");
  ASSERT_TRUE(report.contains("chosen"));
  EXPECT_TRUE(report["chosen"].contains("epochs"));
  EXPECT_TRUE(report["test"].is_number());
  EXPECT_EQ(report["cells"].size(), 2u);

  // only the chosen cell has a test record
  std::istringstream metrics(slurp(path("f/metrics.jsonl")));
  std::size_t test_records = 0;
  for (std::string line; std::getline(metrics, line);) {
    auto j = nlohmann::json::parse(line);
    if (j.value("split", "") == "test") ++test_records;
  }
  EXPECT_EQ(test_records, 1u);

  auto e = cli({"eval", "--config", cfg(), "--corpus", corpus, "--task", "harmony", "--checkpoint",
                path("f/checkpoint.bin"), "--out", path("e")});
  ASSERT_EQ(e.code, 0) << e.err;
  auto eval_report = nlohmann::json::parse(slurp(path("e/report.json")));
  EXPECT_EQ(eval_report["task"], "harmony");
}

TEST_F(CliTest, PreprocessAndBaselineRun) {
  generate();
  auto p = cli({"preprocess", "--config", cfg(), "--raw", path("g/raw.jsonl"), "--out", path("pp")});
  ASSERT_EQ(p.code, 0) << p.err;
  EXPECT_TRUE(fs::exists(path("pp/corpus.jsonl")));
  EXPECT_TRUE(fs::exists(path("pp/spans.jsonl")));
  auto b = cli({"baseline", "--config", cfg(), "--corpus", path("g/corpus.jsonl"), "--task", "theme", "--backbone",
                "max-pool", "--out", path("b")});
  EXPECT_EQ(b.code, 0) << b.err;
  auto bad = cli({"baseline", "--config", cfg(), "--corpus", path("g/corpus.jsonl"), "--task", "theme",
                  "--backbone", "transformer", "--out", path("b2")});
  EXPECT_EQ(bad.code, 2);
}

TEST_F(CliTest, InputsAreNotModified) {
  generate();
  const auto corpus = path("g/corpus.jsonl");
  const auto raw = path("g/raw.jsonl");
  const auto corpus_bytes = slurp(corpus), raw_bytes = slurp(raw), cfg_bytes = slurp(cfg());
  ASSERT_EQ(cli({"pretrain", "--config", cfg(), "--corpus", corpus, "--out", path("p")}).code, 0);
  const auto ckpt = slurp(path("p/checkpoint.bin"));
  ASSERT_EQ(cli({"preprocess", "--config", cfg(), "--raw", raw, "--out", path("pp")}).code, 0);
  ASSERT_EQ(cli({"finetune", "--config", cfg(), "--corpus", corpus, "--task", "role", "--checkpoint",
                 path("p/checkpoint.bin"), "--out", path("f")})
                .code,
            0);
  EXPECT_EQ(slurp(corpus), corpus_bytes);
  EXPECT_EQ(slurp(raw), raw_bytes);
  EXPECT_EQ(slurp(cfg()), cfg_bytes);
  EXPECT_EQ(slurp(path("p/checkpoint.bin")), ckpt);
}

TEST_F(CliTest, ExitCodes) {
  EXPECT_EQ(cli({"frobnicate"}).code, 2);
  EXPECT_EQ(cli({"gen-synth"}).code, 2);  // --out missing
  EXPECT_EQ(cli({"gen-synth", "--bogus", "--out", path("x")}).code, 2);
  std::ofstream(path("bad.cfg")) << "gen.n_movie=3\n";
  auto r = cli({"gen-synth", "--config", path("bad.cfg"), "--out", path("x")});
  EXPECT_EQ(r.code, 1);
  EXPECT_NE(r.err.find("gen.n_movie"), std::string::npos) << r.err;
  EXPECT_EQ(cli({"pretrain", "--corpus", path("missing.jsonl"), "--out", path("y")}).code, 2);
  std::ofstream(path("broken.jsonl")) << "{\"kind\":\"video\",\n";
  auto broken = cli({"pretrain", "--corpus", path("broken.jsonl"), "--out", path("y")});
  EXPECT_EQ(broken.code, 1);
  EXPECT_NE(broken.err.find("line 1"), std::string::npos) << broken.err;
}
