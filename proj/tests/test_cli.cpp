#include <gtest/gtest.h>

#include <sys/wait.h>

#include <cstdlib>
#include <sstream>

#include "oracles.hpp"
#include "vem/vem.hpp"

namespace fs = std::filesystem;

namespace {

struct RunResult {
  int code = -1;
  std::string output;
};

RunResult vem_run(const std::string& args, const fs::path& scratch) {
  const auto out = scratch / "cli_output.txt";
  const std::string cmd = std::string("\"") + VEM_CLI_PATH + "\" " + args + " > \"" + out.string() + "\" 2>&1";
  const int status = std::system(cmd.c_str());
  RunResult r;
  r.code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
  r.output = vem::io::read_text(out);
  return r;
}

std::string q(const fs::path& p) { return "\"" + p.string() + "\""; }

std::size_t count_lines(const std::string& text) {
  return static_cast<std::size_t>(std::count(text.begin(), text.end(), '\n'));
}

// Shared fixture: one generated benchmark and one stage-1 checkpoint.
class Cli : public ::testing::Test {
 protected:
  static void SetUpTestSuite() {
    dir_ = new oracle::TempDir("cli");
    const auto gen = vem_run("gen-synth --out " + q(data()), dir_->path);
    ASSERT_EQ(gen.code, 0) << gen.output;
    const auto train = vem_run("train --stage 1 --data " + q(data()) + " --out " + q(stage1()), dir_->path);
    ASSERT_EQ(train.code, 0) << train.output;
  }
  static void TearDownTestSuite() {
    delete dir_;
    dir_ = nullptr;
  }
  static fs::path root() { return dir_->path; }
  static fs::path data() { return dir_->path / "synth"; }
  static fs::path stage1() { return dir_->path / "stage1"; }
  static RunResult run(const std::string& args) { return vem_run(args, dir_->path); }

  static oracle::TempDir* dir_;
};

oracle::TempDir* Cli::dir_ = nullptr;

}  // namespace

TEST_F(Cli, GeneratedDataPassesValidation) {
  const auto r = run("validate-data " + q(data()));
  EXPECT_EQ(r.code, 0) << r.output;
  EXPECT_TRUE(fs::exists(data() / "ground_truth" / "ground_truth.json"));
  EXPECT_NO_THROW(vem::load_ground_truth(data() / "ground_truth"));
}

TEST_F(Cli, GenSynthIsDeterministic) {
  ASSERT_EQ(run("gen-synth --seed 5 --n-samples 50 --out " + q(root() / "a")).code, 0);
  ASSERT_EQ(run("gen-synth --seed 5 --n-samples 50 --out " + q(root() / "b")).code, 0);
  EXPECT_EQ(oracle::tree_bytes(root() / "a"), oracle::tree_bytes(root() / "b"));
}

TEST_F(Cli, ZeroVoxelNoiseGivesUnitCeiling) {
  ASSERT_EQ(run("gen-synth --noise-std-voxel 0 --n-samples 20 --out " + q(root() / "clean")).code, 0);
  const auto ds = vem::load_dataset(root() / "clean");
  for (Eigen::Index j = 0; j < ds.noise_ceiling.size(); ++j) EXPECT_EQ(ds.noise_ceiling(j), 1.0);
}

TEST_F(Cli, UsageErrorsExitTwo) {
  EXPECT_EQ(run("").code, 2);
  EXPECT_EQ(run("frobnicate").code, 2);
  EXPECT_EQ(run("gen-synth --out " + q(root() / "x") + " --no-such-flag 1").code, 2);
  EXPECT_EQ(run("gen-synth").code, 2);
  EXPECT_EQ(run("train --data " + q(data()) + " --out " + q(root() / "s1") + " --set epoch=3").code, 2);
  EXPECT_EQ(run("ablate --data " + q(data()) + " --out " + q(root() / "a.csv") + " --lambdas 1,x").code, 2);
}

TEST_F(Cli, CorruptDatasetFailsValidation) {
  ASSERT_EQ(run("gen-synth --n-samples 20 --out " + q(root() / "broken")).code, 0);
  fs::resize_file(root() / "broken" / "voxels.bin", 100);
  const auto r = run("validate-data " + q(root() / "broken"));
  EXPECT_EQ(r.code, 1);
  EXPECT_NE(r.output.find("voxels.bin"), std::string::npos) << r.output;
}

TEST_F(Cli, StageOneWritesCheckpointAndLog) {
  EXPECT_TRUE(fs::exists(stage1() / "checkpoint.json"));
  const auto log = vem::io::read_text(fs::path(stage1().string() + ".log"));
  EXPECT_EQ(count_lines(log), 40u);
  EXPECT_EQ(vem::load_checkpoint(stage1()).stage, 1);

  const auto custom = root() / "short.log";
  const auto r = run("train --data " + q(data()) + " --out " + q(root() / "short") + " --set epochs=3 --log " +
                     q(custom));
  ASSERT_EQ(r.code, 0) << r.output;
  EXPECT_EQ(count_lines(vem::io::read_text(custom)), 3u);
}

TEST_F(Cli, StageTwoRequiresFrom) {
  EXPECT_EQ(run("train --stage 2 --data " + q(data()) + " --out " + q(root() / "s2")).code, 2);
}

TEST_F(Cli, StageTwoEndToEndKeepsScore) {
  const auto before = oracle::tree_bytes(data());
  const auto r = run("train --stage 2 --set lambda=1e-3 --from " + q(stage1()) + " --data " + q(data()) + " --out " +
                     q(root() / "stage2"));
  ASSERT_EQ(r.code, 0) << r.output;
  const double m1 = vem::load_checkpoint(stage1()).best_validation_score;
  const auto s2 = vem::load_checkpoint(root() / "stage2");
  EXPECT_EQ(s2.stage, 2);
  EXPECT_EQ(s2.config.lambda, 1e-3);
  EXPECT_GE(s2.best_validation_score, m1 - 0.01);
  EXPECT_EQ(oracle::tree_bytes(data()), before);
}

TEST_F(Cli, StageTwoRejectsStageTwoCheckpoint) {
  const auto s2 = root() / "stage2_once";
  ASSERT_EQ(run("train --stage 2 --set epochs=1 --from " + q(stage1()) + " --data " + q(data()) + " --out " + q(s2))
                .code,
            0);
  EXPECT_EQ(run("train --stage 2 --from " + q(s2) + " --data " + q(data()) + " --out " + q(root() / "s3")).code, 1);
}

TEST_F(Cli, EvalIsReproducibleAndConsistent) {
  const auto a = root() / "eval_a.json", b = root() / "eval_b.json";
  const auto ra = run("eval --checkpoint " + q(stage1()) + " --data " + q(data()) + " --format json --out " + q(a));
  const auto rb = run("eval --checkpoint " + q(stage1()) + " --data " + q(data()) + " --format json --out " + q(b));
  ASSERT_EQ(ra.code, 0) << ra.output;
  ASSERT_EQ(rb.code, 0);
  EXPECT_EQ(oracle::file_bytes(a), oracle::file_bytes(b));

  const auto report = vem::load_report(a, vem::ReportFormat::json);
  std::istringstream out(ra.output);
  std::string key;
  double printed = 0.0;
  out >> key >> printed;
  EXPECT_EQ(key, "overall_m");
  EXPECT_EQ(printed, report.overall_m);
  // The val split is what training selected on.
  EXPECT_EQ(report.overall_m, vem::load_checkpoint(stage1()).best_validation_score);
}

TEST_F(Cli, EvalCsvOnTestSplit) {
  const auto path = root() / "eval_test.csv";
  const auto r = run("eval --checkpoint " + q(stage1()) + " --data " + q(data()) + " --split test --out " + q(path));
  ASSERT_EQ(r.code, 0) << r.output;
  const auto rep = vem::load_report(path, vem::ReportFormat::csv);
  EXPECT_EQ(rep.per_vertex_r2.size(), 64u);
  EXPECT_EQ(rep.per_roi_median.size(), 4u);
}

TEST_F(Cli, EvalNamesMismatchedDimensions) {
  ASSERT_EQ(run("gen-synth --n-vertices 48 --n-samples 40 --out " + q(root() / "narrow")).code, 0);
  const auto r = run("eval --checkpoint " + q(stage1()) + " --data " + q(root() / "narrow"));
  EXPECT_EQ(r.code, 1);
  EXPECT_NE(r.output.find("n_vertices=64"), std::string::npos) << r.output;
  EXPECT_NE(r.output.find("n_vertices=48"), std::string::npos) << r.output;
}

TEST_F(Cli, AblateGridRowsAndMedians) {
  const auto csv = root() / "ablation.csv";
  const auto r = run("ablate --from " + q(stage1()) + " --data " + q(data()) +
                     " --lambdas 1,0.1,1e-2,1e-3 --seeds 1,2 --set epochs=1 --out " + q(csv));
  ASSERT_EQ(r.code, 0) << r.output;
  std::istringstream in(vem::io::read_text(csv));
  std::string line;
  std::getline(in, line);
  EXPECT_EQ(line, "lambda,seed,m");
  std::map<double, std::vector<double>> rows;
  std::map<double, double> medians;
  while (std::getline(in, line)) {
    std::vector<std::string> f;
    std::stringstream ss(line);
    for (std::string x; std::getline(ss, x, ',');) f.push_back(x);
    ASSERT_EQ(f.size(), 3u);
    if (f[0] == "#median") medians[std::stod(f[1])] = std::stod(f[2]);
    else rows[std::stod(f[0])].push_back(std::stod(f[2]));
  }
  std::size_t n_rows = 0;
  for (const auto& [_, ms] : rows) n_rows += ms.size();
  EXPECT_EQ(n_rows, 8u);
  ASSERT_EQ(medians.size(), 4u);
  for (const auto& [l, ms] : rows) EXPECT_EQ(medians.at(l), oracle::brute_median(ms));
}

TEST_F(Cli, AblateSinglePair) {
  const auto csv = root() / "single.csv";
  ASSERT_EQ(run("ablate --from " + q(stage1()) + " --data " + q(data()) +
                " --lambdas 0.001 --seeds 4 --set epochs=1 --out " + q(csv))
                .code,
            0);
  EXPECT_EQ(count_lines(vem::io::read_text(csv)), 3u);
}

TEST_F(Cli, GradCheckPassesAndCatchesCorruption) {
  const auto ok = run("grad-check --data " + q(data()));
  EXPECT_EQ(ok.code, 0) << ok.output;
  EXPECT_NE(ok.output.find("stage2 align.weight"), std::string::npos) << ok.output;
  const auto bad = run("grad-check --data " + q(data()) + " --corrupt-gradient 1.01");
  EXPECT_EQ(bad.code, 1) << bad.output;
  EXPECT_NE(bad.output.find("failed"), std::string::npos);
}

TEST_F(Cli, GradCheckWithSingleSampleBatch) {
  const auto r = run("grad-check --batch 1 --data " + q(data()));
  EXPECT_EQ(r.code, 0) << r.output;
}
