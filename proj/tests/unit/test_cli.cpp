/* Copyright 2026 The NRDM Authors

Licensed under the Apache License, Version 2.0 (the "License");
you may not use this file except in compliance with the License.
You may obtain a copy of the License at

        https://www.apache.org/licenses/LICENSE-2.0

Unless required by applicable law or agreed to in writing, software
distributed under the License is distributed on an "AS IS" BASIS,
WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
See the License for the specific language governing permissions and
        limitations under the License.
==============================================================================*/


#include <gtest/gtest.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "json.hpp"
#include "nrdm/app/commands.hpp"
#include "nrdm/app/config.hpp"
#include "nrdm/app/run.hpp"
#include "nrdm/csv.hpp"
#include "nrdm/training.hpp"

namespace nrdm::app {
namespace {

namespace fs = std::filesystem;

const fs::path kData = NRDM_TEST_DATA_DIR;
const std::string kTiny = (kData / "tiny.toml").string();

struct Outcome {
  int code = 0;
  std::string out;
  std::string err;
  fs::path run_dir;
};

class Cli : public ::testing::Test {
 protected:
  void SetUp() override {
    const auto* info = ::testing::UnitTest::GetInstance()->current_test_info();
    root_ = fs::temp_directory_path() / "nrdm_cli_tests" / info->name();
    fs::remove_all(root_);
    fs::create_directories(root_);
  }

  Outcome run(std::vector<std::string> args, bool with_out = true) const {
    if (with_out) {
      args.push_back("--out");
      args.push_back(root_.string());
    }
    args.insert(args.begin(), "nrdm");
    std::vector<const char*> argv;
    for (const auto& a : args) argv.push_back(a.c_str());
    std::ostringstream out, err;
    Outcome o;
    o.code = run_cli(static_cast<int>(argv.size()), argv.data(), out, err);
    o.out = out.str();
    o.err = err.str();
    const std::string key = "run directory: ";
    const auto pos = o.out.find(key);
    if (pos != std::string::npos) {
      const auto end = o.out.find_first_of(" \n", pos + key.size());
      o.run_dir = o.out.substr(pos + key.size(), end - pos - key.size());
    }
    return o;
  }

  fs::path root_;
};

std::string bytes(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), {}};
}

std::vector<double> column(const CsvTable& t, const std::string& name) {
  std::vector<double> v;
  const std::size_t c = t.column(name);
  for (const auto& row : t.rows) v.push_back(std::stod(row[c]));
  return v;
}

TEST_F(Cli, MissingConfigNamesPath) {
  const Outcome o = run({"train", "--config", "/nonexistent/cfg.toml"});
  EXPECT_EQ(o.code, kUsage);
  EXPECT_NE(o.err.find("/nonexistent/cfg.toml"), std::string::npos) << o.err;
}

TEST_F(Cli, ConfigRequired) {
  EXPECT_EQ(run({"train"}).code, kUsage);
  EXPECT_EQ(run({"sample"}).code, kUsage);
}

TEST_F(Cli, UnknownKeyRejected) {
  const Outcome o = run({"train", "--config", kTiny, "--set", "model.dpth=3"});
  EXPECT_EQ(o.code, kUsage);
  EXPECT_NE(o.err.find("model.dpth"), std::string::npos) << o.err;
}

TEST_F(Cli, UnknownCommandAndFlags) {
  EXPECT_EQ(run({"fly"}, false).code, kUsage);
  EXPECT_EQ(run({"train", "--config", kTiny, "--jobs", "0"}).code, kUsage);
  EXPECT_EQ(run({"--version"}, false).code, kOk);
}

TEST_F(Cli, TrainZeroStepsKeepsInitialization) {
  const Outcome o = run({"train", "--config", kTiny, "--set", "train.steps=0"});
  ASSERT_EQ(o.code, kOk) << o.err;
  const Checkpoint ckpt = load_checkpoint(o.run_dir / "checkpoint.nrdm");
  RunConfig c = load_config(kTiny);
  apply_override(c, "train.steps=0");
  ScoreNetwork init = make_network(c);
  ScoreNetwork restored = make_network(c);
  restored.stack().set_all_gates(0.3, 0.3);
  restore_parameters(restored, ckpt);
  const auto a = parameter_values(init);
  const auto b = parameter_values(restored);
  ASSERT_EQ(a.size(), b.size());
  for (std::size_t i = 0; i < a.size(); ++i) EXPECT_TRUE(a[i].bit_identical(b[i]));
}

TEST_F(Cli, TrainWritesManifestWithHashes) {
  const Outcome o = run({"train", "--config", kTiny, "--set", "train.steps=2"});
  ASSERT_EQ(o.code, kOk) << o.err;
  const auto manifest = nlohmann::json::parse(bytes(o.run_dir / "manifest.json"));
  EXPECT_EQ(manifest.at("command"), "train");
  EXPECT_EQ(manifest.at("seed"), 3);
  std::vector<std::string> names;
  for (const auto& f : manifest.at("files")) {
    const fs::path p = o.run_dir / f.at("path").get<std::string>();
    names.push_back(f.at("path"));
    EXPECT_EQ(f.at("sha256").get<std::string>(), sha256_file(p));
    EXPECT_EQ(f.at("bytes").get<std::uintmax_t>(), fs::file_size(p));
  }
  for (const char* want : {"metrics.csv", "summary.csv", "checkpoint.nrdm", "loss.svg"}) {
    EXPECT_NE(std::find(names.begin(), names.end(), want), names.end()) << want;
  }
}

TEST_F(Cli, TrainRerunIsByteIdentical) {
  const Outcome a = run({"train", "--config", kTiny});
  const Outcome b = run({"train", "--config", kTiny});
  ASSERT_EQ(a.code, kOk) << a.err;
  ASSERT_EQ(b.code, kOk) << b.err;
  EXPECT_NE(a.run_dir, b.run_dir);
  for (const char* f : {"metrics.csv", "summary.csv", "checkpoint.nrdm", "loss.svg"}) {
    EXPECT_EQ(bytes(a.run_dir / f), bytes(b.run_dir / f)) << f;
  }
}

TEST_F(Cli, SeedFlagChangesRun) {
  const Outcome a = run({"train", "--config", kTiny, "--set", "train.steps=3"});
  const Outcome b = run({"train", "--config", kTiny, "--set", "train.steps=3", "--seed", "4"});
  ASSERT_EQ(b.code, kOk) << b.err;
  EXPECT_NE(bytes(a.run_dir / "metrics.csv"), bytes(b.run_dir / "metrics.csv"));
  EXPECT_NE(b.run_dir.filename().string().find("-s4"), std::string::npos);
}

TEST_F(Cli, DivergenceExitsWithNumericalCodeAndNoManifest) {
  const Outcome o = run({"train", "--config", kTiny, "--set", "train.divergence_threshold=1e-12"});
  EXPECT_EQ(o.code, kNumerical);
  ASSERT_FALSE(o.run_dir.empty());
  EXPECT_FALSE(fs::exists(o.run_dir / "manifest.json"));
}

TEST_F(Cli, OutputRootFromEnvironment) {
  const fs::path env_root = root_ / "env";
  ::setenv("NRDM_OUT_ROOT", env_root.c_str(), 1);
  const Outcome o = run({"train", "--config", kTiny, "--set", "train.steps=0"}, false);
  ::unsetenv("NRDM_OUT_ROOT");
  ASSERT_EQ(o.code, kOk) << o.err;
  EXPECT_EQ(o.run_dir.parent_path(), env_root);
}

class CliWithCheckpoint : public Cli {
 protected:
  void SetUp() override {
    Cli::SetUp();
    const Outcome o = run({"train", "--config", kTiny});
    ASSERT_EQ(o.code, kOk) << o.err;
    ckpt_ = (o.run_dir / "checkpoint.nrdm").string();
  }
  std::string ckpt_;
};

TEST_F(CliWithCheckpoint, SampleRowCount) {
  const Outcome o = run({"sample", "--checkpoint", ckpt_, "--n", "1000", "--solver", "euler", "--steps", "200"});
  ASSERT_EQ(o.code, kOk) << o.err;
  const CsvTable t = read_csv(o.run_dir / "samples.csv");
  EXPECT_EQ(t.rows.size(), 1000u);
  EXPECT_EQ(t.header, (std::vector<std::string>{"x0", "x1"}));
  EXPECT_EQ(read_csv(o.run_dir / "metrics.csv").rows.size(), 1u);
}

TEST_F(CliWithCheckpoint, SampleIsReproducible) {
  const Outcome a = run({"sample", "--checkpoint", ckpt_, "--n", "300"});
  const Outcome b = run({"sample", "--checkpoint", ckpt_, "--n", "300"});
  ASSERT_EQ(a.code, kOk) << a.err;
  EXPECT_EQ(bytes(a.run_dir / "samples.csv"), bytes(b.run_dir / "samples.csv"));
  EXPECT_EQ(bytes(a.run_dir / "metrics.csv"), bytes(b.run_dir / "metrics.csv"));
}

TEST_F(CliWithCheckpoint, UnknownSolver) {
  const Outcome o = run({"sample", "--checkpoint", ckpt_, "--solver", "rk4"});
  EXPECT_EQ(o.code, kUsage);
  EXPECT_NE(o.err.find("rk4"), std::string::npos) << o.err;
}

TEST_F(Cli, SampleMissingCheckpoint) {
  const Outcome o = run({"sample", "--config", kTiny});
  EXPECT_EQ(o.code, kUsage);
  EXPECT_NE(o.err.find("missing.nrdm"), std::string::npos) << o.err;
}

TEST_F(Cli, SampleCorruptCheckpoint) {
  const fs::path bad = root_ / "bad.nrdm";
  std::ofstream(bad) << "garbage";
  EXPECT_EQ(run({"sample", "--checkpoint", bad.string()}).code, kUsage);
}

TEST_F(Cli, SensitivityIdentityModelIsFlat) {
  const Outcome o = run({"sensitivity", "--config", kTiny, "--set", "report.checkpoint=\"\"", "--set",
                         "model.init_alpha=0", "--set", "model.init_beta=0"});
  ASSERT_EQ(o.code, kOk) << o.err;
  const CsvTable t = read_csv(o.run_dir / "sensitivity.csv");
  ASSERT_EQ(t.rows.size(), 4u);
  for (double v : column(t, "normalized")) EXPECT_EQ(v, 1.0);
  EXPECT_TRUE(fs::exists(o.run_dir / "sensitivity.svg"));
}

TEST_F(Cli, SensitivityContractiveUngatedIsMonotone) {
  const Outcome o = run({"sensitivity", "--config", kTiny, "--set", "report.checkpoint=\"\"", "--set",
                         "model.mapper=\"linear-scalar\"", "--set", "model.linear_init=-0.5", "--set",
                         "model.variant=\"v3\""});
  ASSERT_EQ(o.code, kOk) << o.err;
  const std::vector<double> v = column(read_csv(o.run_dir / "sensitivity.csv"), "normalized");
  ASSERT_EQ(v.size(), 4u);
  for (std::size_t i = 1; i < v.size(); ++i) EXPECT_LT(v[i - 1], v[i]);
}

TEST_F(Cli, SensitivityBothSeriesAndDepthFilter) {
  const Outcome o = run({"sensitivity", "--config", kTiny, "--set", "report.checkpoint=\"\"", "--set",
                         "report.series=\"both\"", "--set", "report.depths=[1, 3]"});
  ASSERT_EQ(o.code, kOk) << o.err;
  const CsvTable t = read_csv(o.run_dir / "sensitivity.csv");
  EXPECT_EQ(t.header.front(), "series");
  ASSERT_EQ(t.rows.size(), 4u);
  EXPECT_EQ(t.rows[0][0], "gated");
  EXPECT_EQ(t.rows[2][0], "ungated");
  EXPECT_EQ(t.rows[1][t.column("depth")], "3");
}

TEST_F(CliWithCheckpoint, SensitivityFromCheckpoint) {
  const Outcome o = run({"sensitivity", "--checkpoint", ckpt_});
  ASSERT_EQ(o.code, kOk) << o.err;
  const CsvTable t = read_csv(o.run_dir / "sensitivity.csv");
  EXPECT_EQ(t.rows[0][t.column("step")], "40");
}

TEST_F(Cli, VariantsTableSchema) {
  const Outcome o = run({"variants", "--config", kTiny, "--set", "train.steps=5", "--set", "eval.seeds=2"});
  ASSERT_EQ(o.code, kOk) << o.err;
  const CsvTable t = read_csv(o.run_dir / "variants.csv");
  EXPECT_EQ(t.header, (std::vector<std::string>{"variant", "seed", "steps", "final_loss", "sw", "mmd"}));
  EXPECT_EQ(t.rows.size(), 10u);
  EXPECT_TRUE(fs::exists(o.run_dir / "runs" / "v2-s4" / "metrics.csv"));
}

TEST_F(Cli, VariantsFrozenIdentityGatesMatchUngated) {
  const Outcome o =
      run({"variants", "--config", kTiny, "--set", "train.steps=10", "--set", "model.freeze_gates=true"});
  ASSERT_EQ(o.code, kOk) << o.err;
  const CsvTable t = read_csv(o.run_dir / "variants.csv");
  const std::size_t loss = t.column("final_loss");
  std::string v0, v3;
  for (const auto& row : t.rows) {
    if (row[0] == "v0") v0 = row[loss];
    if (row[0] == "v3") v3 = row[loss];
  }
  ASSERT_FALSE(v0.empty());
  EXPECT_EQ(v0, v3);
}

TEST_F(Cli, VariantsParallelMatchesSerial) {
  const Outcome a = run({"variants", "--config", kTiny, "--set", "train.steps=5"});
  const Outcome b = run({"variants", "--config", kTiny, "--set", "train.steps=5", "--jobs", "3"});
  ASSERT_EQ(b.code, kOk) << b.err;
  EXPECT_EQ(bytes(a.run_dir / "variants.csv"), bytes(b.run_dir / "variants.csv"));
}

TEST_F(Cli, PfodeMissingSchedule) {
  const Outcome o = run({"pfode-check", "--config", (kData / "no_schedule.toml").string()});
  EXPECT_EQ(o.code, kUsage);
  EXPECT_NE(o.err.find("schedule"), std::string::npos) << o.err;
}

TEST_F(Cli, PfodeDeterministicFlowWithinSolverTolerance) {
  const Outcome o = run({"pfode-check", "--config", kTiny, "--set", "schedule.sigma=0"});
  ASSERT_EQ(o.code, kOk) << o.err;
  const CsvTable t = read_csv(o.run_dir / "pfode.csv");
  EXPECT_EQ(t.header, (std::vector<std::string>{"t", "mean_diff", "cov_diff", "solver_tol", "mc_tol"}));
  ASSERT_EQ(t.rows.size(), 4u);
  const auto mean = column(t, "mean_diff"), cov = column(t, "cov_diff"), tol = column(t, "solver_tol");
  for (std::size_t i = 0; i < mean.size(); ++i) {
    EXPECT_LE(mean[i], tol[i]);
    EXPECT_LE(cov[i], tol[i]);
  }
}

TEST_F(Cli, PfodeStationaryGaussian) {
  const Outcome o = run({"pfode-check", "--config", kTiny, "--set", "eval.pfode_p0=\"gaussian\"", "--set",
                         "eval.pfode_n=10000", "--set", "eval.pfode_steps=40"});
  ASSERT_EQ(o.code, kOk) << o.err;
  for (double m : column(read_csv(o.run_dir / "pfode.csv"), "mean_diff")) EXPECT_LT(m, 0.05);
}

TEST_F(Cli, DepthScalingRows) {
  const Outcome o = run({"depth-scaling", "--config", kTiny, "--set", "train.steps=3"});
  ASSERT_EQ(o.code, kOk) << o.err;
  const CsvTable t = read_csv(o.run_dir / "depth_scaling.csv");
  ASSERT_EQ(t.rows.size(), 4u);
  EXPECT_EQ(t.rows[0][t.column("depth")], "2");
  EXPECT_EQ(t.rows[0][t.column("gated")], "1");
  EXPECT_EQ(t.rows[1][t.column("variant")], "v3");
  EXPECT_EQ(t.rows[3][t.column("depth")], "4");
}

TEST_F(Cli, DepthScalingSingleDepth) {
  const Outcome o = run({"depth-scaling", "--config", kTiny, "--set", "train.steps=3", "--set", "eval.depths=[2]"});
  ASSERT_EQ(o.code, kOk) << o.err;
  EXPECT_EQ(read_csv(o.run_dir / "depth_scaling.csv").rows.size(), 2u);
}

TEST(Config, OverrideParsing) {
  RunConfig c = parse_config("[model]\ndepth = 4\n");
  apply_override(c, "model.depth=12");
  apply_override(c, "model.variant=v2");
  apply_override(c, "seed=9");
  EXPECT_EQ(c.model.depth, 12);
  EXPECT_EQ(c.model.variant, "v2");
  EXPECT_EQ(c.seed, 9);
  EXPECT_THROW(apply_override(c, "model.depth"), ConfigError);
  EXPECT_THROW(apply_override(c, "model.depth=\"deep\""), ConfigError);
}

TEST(Config, ValidationRejectsBadValues) {
  EXPECT_THROW(validate(parse_config("[model]\nvariant = \"v9\"\n")), ConfigError);
  EXPECT_THROW(validate(parse_config("[train]\nlr = -1.0\n")), ConfigError);
  EXPECT_THROW(parse_config("[modle]\ndepth = 2\n"), ConfigError);
}

TEST(Config, TomlRoundTrip) {
  RunConfig c = load_config(kTiny);
  const RunConfig back = parse_config(to_toml(c), c.base_dir);
  EXPECT_EQ(to_toml(back), to_toml(c));
}

}  // namespace
}  // namespace nrdm::app
