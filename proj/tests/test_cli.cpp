// SPDX-FileCopyrightText: 2026 The thoughtpatch Authors
// SPDX-License-Identifier: Apache-2.0

#include <gtest/gtest.h>

#include <cstdlib>
#include <sstream>

#include "reference.hpp"
#include "tpatch/cli.hpp"
#include "tpatch/io.hpp"

using namespace tpatch;
namespace fs = std::filesystem;

namespace {

struct CliRun {
  int code = 0;
  std::string out;
  std::string err;
};

CliRun run(std::vector<std::string> args) {
  std::ostringstream out, err;
  CliRun r;
  r.code = run_cli(args, out, err);
  r.out = out.str();
  r.err = err.str();
  return r;
}

class CliTest : public ::testing::Test {
 protected:
  void SetUp() override {
    dir_ = ref::scratch_dir(::testing::UnitTest::GetInstance()->current_test_info()->name());
    ::setenv("TPATCH_OUT_DIR", dir_.c_str(), 1);
  }
  void TearDown() override { ::unsetenv("TPATCH_OUT_DIR"); }

  std::string at(const std::string& name) const { return (dir_ / name).string(); }

  void make_model(const std::string& name = "model.json", const std::string& seed = "1") {
    const CliRun r = run({"init-model", "--d-model", "16", "--blocks", "2", "--heads", "2", "--d-ff", "16",
                       "--vocab", "40", "--seed", seed, "-o", name});
    ASSERT_EQ(r.code, 0) << r.err;
  }

  fs::path dir_;
};

}  // namespace

TEST_F(CliTest, HelpAndUsageErrors) {
  EXPECT_EQ(run({"--help"}).code, 0);
  EXPECT_EQ(run({}).code, 1);
  EXPECT_EQ(run({"frobnicate"}).code, 1);
  EXPECT_EQ(run({"verify", "--model", at("model.json")}).code, 1);  // missing required flags
}

TEST_F(CliTest, InitModelValidatesHeads) {
  const CliRun r = run({"init-model", "--d-model", "10", "--heads", "3", "-o", "bad.json"});
  EXPECT_EQ(r.code, 1);
  EXPECT_FALSE(fs::exists(at("bad.json")));
  make_model();
  EXPECT_TRUE(fs::exists(at("model.json")));
}

TEST_F(CliTest, InitModelFromConfigFile) {
  io::write_file_atomic(at("cfg.json"), R"({"d_model": 8, "n_blocks": 1, "n_heads": 2, "d_ff": 8, "vocab_size": 40})");
  ASSERT_EQ(run({"init-model", "--config", at("cfg.json"), "-o", "m.json"}).code, 0);
  EXPECT_EQ(io::load_model(at("m.json")).config.d_model, 8u);
  io::write_file_atomic(at("cfg2.json"), R"({"d_model": 8, "layers": 1})");
  EXPECT_EQ(run({"init-model", "--config", at("cfg2.json"), "-o", "m2.json"}).code, 1);
}

TEST_F(CliTest, VerifyPassesAndDetectsFaults) {
  make_model();
  const CliRun ok = run({"verify", "--model", at("model.json"), "--chunk", "35 36 37", "--retained", "33 4 31 5 32"});
  EXPECT_EQ(ok.code, 0) << ok.err;
  const io::CsvTable t = io::parse_csv(io::read_file(at("verify.csv")));
  EXPECT_EQ(t.header, (std::vector<std::string>{"layer", "position", "max_abs_dev", "pass"}));
  EXPECT_EQ(t.rows.size(), 2u);
  for (const auto& row : t.rows) EXPECT_EQ(row[3], "true");

  const CliRun bad = run({"verify", "--model", at("model.json"), "--chunk", "35 36 37", "--retained", "33 4 31 5",
                       "--inject-fault", "1:1e-6", "-o", "fault.csv"});
  EXPECT_EQ(bad.code, 3);
  EXPECT_NE(bad.out.find("FAIL"), std::string::npos);
}

TEST_F(CliTest, CorruptCheckpointIsInputError) {
  make_model();
  std::string text = io::read_file(at("model.json"));
  text[text.size() / 2] = text[text.size() / 2] == '1' ? '2' : '1';
  io::write_file_atomic(at("corrupt.json"), text);
  const CliRun r = run({"verify", "--model", at("corrupt.json"), "--chunk", "1", "--retained", "2"});
  EXPECT_EQ(r.code, 1);
  EXPECT_FALSE(r.err.empty());
  EXPECT_EQ(run({"verify", "--model", at("nope.json"), "--chunk", "1", "--retained", "2"}).code, 1);
  EXPECT_EQ(run({"verify", "--model", at("model.json"), "--chunk", "1", "--retained", "99"}).code, 1);
}

TEST_F(CliTest, DegenerateAttentionIsNumericalError) {
  ModelConfig c;
  c.d_model = 8;
  c.d_ff = 8;
  c.n_blocks = 2;
  c.vocab_size = 40;
  ToyTransformer model = init_model(c);
  for (std::size_t k = 0; k < 8; ++k) model.embedding(0, k) = 0.0;
  model.blocks[0].attn.value = Mat(8, 8);
  io::save_model(model, at("deg.json"), {"test", 0, {}});
  const CliRun v = run({"verify", "--model", at("deg.json"), "--chunk", "35 36", "--retained", "0 5"});
  EXPECT_EQ(v.code, 2);
  EXPECT_NE(v.err.find("layer 0"), std::string::npos) << v.err;

  io::write_file_atomic(at("deg.txt"), "0 5 6\n");
  EXPECT_EQ(run({"extract", "--model", at("deg.json"), "--data", at("deg.txt"), "--layers", "0:1", "--strict"}).code,
            2);
  // Without --strict the position is skipped and logged.
  const CliRun lax = run({"extract", "--model", at("deg.json"), "--data", at("deg.txt"), "--layers", "0:1"});
  EXPECT_EQ(lax.code, 0) << lax.err;
  EXPECT_NE(io::read_file(at("extraction_log.csv")).find("skipped_positions"), std::string::npos);
}

TEST_F(CliTest, EmptyDatasetIsInputError) {
  make_model();
  ASSERT_EQ(run({"gen-dataset", "--count", "5", "-o", "data.txt"}).code, 0);
  const CliRun r = run({"extract", "--model", at("model.json"), "--data", at("data.txt"), "--steps", "0"});
  EXPECT_EQ(r.code, 1);
  EXPECT_NE(r.err.find("empty dataset"), std::string::npos);
  io::write_file_atomic(at("blank.txt"), "# nothing\n");
  EXPECT_EQ(run({"extract", "--model", at("model.json"), "--data", at("blank.txt")}).code, 1);
}

TEST_F(CliTest, PipelineWritesArtifacts) {
  make_model();
  ASSERT_EQ(run({"gen-dataset", "--count", "40", "--seed", "3", "-o", "data.txt"}).code, 0);
  const CliRun ex = run({"extract", "--model", at("model.json"), "--data", at("data.txt"), "--layers", "0:2",
                      "--schedule", "fixed:300", "--c2", "1"});
  ASSERT_EQ(ex.code, 0) << ex.err;
  const io::CsvTable log = io::parse_csv(io::read_file(at("extraction_log.csv")));
  ASSERT_EQ(log.rows.size(), 80u);
  const auto col = [&](const std::string& name) {
    return static_cast<std::size_t>(std::find(log.header.begin(), log.header.end(), name) - log.header.begin());
  };
  for (const auto& row : log.rows) {
    const double step = std::stod(row[col("step")]);
    EXPECT_NEAR(std::stod(row[col("effective_c1")]), 0.015 * step / 300.0, 1e-15);
  }

  ASSERT_EQ(run({"apply", "--model", at("model.json"), "--bundle", at("bundle.json")}).code, 0);
  const ToyTransformer patched = io::load_model(at("patched_model.json"));
  EXPECT_NE(patched, io::load_model(at("model.json")));

  const CliRun ev = run({"eval", "--model", at("model.json"), "--bundle", at("bundle.json"), "--data",
                      at("data.txt"), "--batch", "10"});
  ASSERT_EQ(ev.code, 0) << ev.err;
  const io::CsvTable rep = io::parse_csv(io::read_file(at("eval.csv")));
  EXPECT_EQ(rep.rows.size(), 10u * 4 * 3);

  const CliRun sw = run({"sweep", "--model", at("model.json"), "--data", at("data.txt"), "--param", "c1",
                      "--grid", "0,0.015,0.5", "--held-out", "5"});
  ASSERT_EQ(sw.code, 0) << sw.err;
  EXPECT_EQ(io::parse_csv(io::read_file(at("sweep.csv"))).rows.size(), 3u);

  // A bundle for a different model is refused.
  make_model("other.json", "2");
  EXPECT_EQ(run({"apply", "--model", at("other.json"), "--bundle", at("bundle.json"), "-o", "x.json"}).code, 1);
}

TEST_F(CliTest, LemmaCheck) {
  const CliRun ok = run({"lemma-check", "--spherical-samples", "20000"});
  EXPECT_EQ(ok.code, 0) << ok.out;
  std::size_t lines = 0;
  for (std::size_t p = ok.out.find("PASS"); p != std::string::npos; p = ok.out.find("PASS", p + 1)) ++lines;
  EXPECT_GE(lines, 7u);
  const CliRun bad = run({"lemma-check", "--spherical-samples", "20000", "--inject-rank-deficiency"});
  EXPECT_EQ(bad.code, 3);
  EXPECT_NE(bad.out.find("FAIL basis_inverse"), std::string::npos) << bad.out;
}

TEST_F(CliTest, RerunsAreByteIdentical) {
  const auto pipeline = [&](const std::string& tag) {
    std::vector<std::string> files;
    const auto out = [&](const std::string& f) {
      files.push_back(tag + f);
      return tag + f;
    };
    EXPECT_EQ(run({"init-model", "--d-model", "8", "--blocks", "2", "--d-ff", "8", "--vocab", "40", "--seed",
                   "5", "-o", out("model.json")})
                  .code,
              0);
    EXPECT_EQ(run({"gen-dataset", "--count", "20", "--seed", "5", "-o", out("data.txt")}).code, 0);
    EXPECT_EQ(run({"extract", "--model", at(tag + "model.json"), "--data", at(tag + "data.txt"), "-o",
                   out("bundle.json"), "--log", out("log.csv")})
                  .code,
              0);
    EXPECT_EQ(run({"apply", "--model", at(tag + "model.json"), "--bundle", at(tag + "bundle.json"), "-o",
                   out("patched.json")})
                  .code,
              0);
    EXPECT_EQ(run({"eval", "--model", at(tag + "model.json"), "--bundle", at(tag + "bundle.json"), "--data",
                   at(tag + "data.txt"), "--batch", "5", "-o", out("eval.csv")})
                  .code,
              0);
    EXPECT_EQ(run({"verify", "--model", at(tag + "model.json"), "--chunk", "35 36 37", "--retained", "1 2",
                   "-o", out("verify.csv")})
                  .code,
              0);
    EXPECT_EQ(run({"lemma-check", "--spherical-samples", "20000", "-o", out("lemmas.csv")}).code, 0);
    return files;
  };
  const auto first = pipeline("a_");
  pipeline("b_");
  for (const std::string& f : first) {
    const std::string twin = "b_" + f.substr(2);
    EXPECT_EQ(io::read_file(at(f)), io::read_file(at(twin))) << f;
  }
}
