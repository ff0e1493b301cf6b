#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include <gtest/gtest.h>
#include <json.hpp>

#include "clfd/cli.hpp"

namespace {

namespace fs = std::filesystem;

struct CliResult {
  int code = -1;
  std::string out, err;
};

// Runs the CLI entry point in-process with captured stdout/stderr.
CliResult run_cli(const std::vector<std::string>& args) {
  std::vector<const char*> argv;
  argv.push_back("clfd");
  for (const auto& a : args) argv.push_back(a.c_str());

  std::ostringstream out, err;
  std::streambuf* old_out = std::cout.rdbuf(out.rdbuf());
  std::streambuf* old_err = std::cerr.rdbuf(err.rdbuf());
  CliResult r;
  r.code = clfd::cli::run(int(argv.size()), argv.data());
  std::cout.rdbuf(old_out);
  std::cerr.rdbuf(old_err);
  r.out = out.str();
  r.err = err.str();
  return r;
}

bool contains(const std::string& hay, const std::string& needle) {
  return hay.find(needle) != std::string::npos;
}

std::string read_text(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

const fs::path& work_root() {
  static const fs::path root = [] {
    const fs::path p = fs::temp_directory_path() / "clfd_cli_t";
    fs::remove_all(p);
    fs::create_directories(p);
    return p;
  }();
  return root;
}

// One small dataset generated through the CLI itself and shared by the
// pipeline tests below.
const fs::path& shared_dataset() {
  static const fs::path ds = [] {
    const fs::path p = work_root() / "ds";
    const CliResult r = run_cli({"gen-data", "--out", p.string(), "--seed",
                                 "1", "--demos", "6", "--frames", "40"});
    EXPECT_EQ(r.code, 0) << r.err;
    return p;
  }();
  return ds;
}

// A tiny trained encoder checkpoint directory shared by the eval tests.
const fs::path& shared_train_dir() {
  static const fs::path dir = [] {
    const fs::path p = work_root() / "train";
    const CliResult r = run_cli({"train", "--out", p.string(), "--dataset",
                                 shared_dataset().string(), "--epochs", "2",
                                 "--batch-size", "16", "--validation-every",
                                 "2", "--seed", "1"});
    EXPECT_EQ(r.code, 0) << r.err;
    return p;
  }();
  return dir;
}

TEST(GenDataT, GeneratesAndReportsManifest) {
  const CliResult r = run_cli(
      {"gen-data", "--out", (work_root() / "gen1").string(), "--seed", "1",
       "--demos", "6", "--frames", "40"});
  ASSERT_EQ(r.code, 0) << r.err;
  EXPECT_TRUE(contains(r.out, "demos: 6 (train 4, val 1, test 1)")) << r.out;
  EXPECT_TRUE(contains(r.out, "content hash: 677788e3cc6f933e")) << r.out;

  const nlohmann::json cfg = nlohmann::json::parse(
      read_text(work_root() / "gen1" / "gen_config.json"));
  EXPECT_EQ(cfg.at("seed").get<int>(), 1);
  EXPECT_EQ(cfg.at("demos").get<int>(), 6);
  EXPECT_EQ(cfg.at("frames").get<int>(), 40);
}

TEST(GenDataT, RefusesNonEmptyDirWithoutForce) {
  const fs::path out = work_root() / "gen2";
  ASSERT_EQ(run_cli({"gen-data", "--out", out.string(), "--demos", "2",
                     "--frames", "40"})
                .code,
            0);
  const CliResult blocked =
      run_cli({"gen-data", "--out", out.string(), "--demos", "2", "--frames",
               "40"});
  EXPECT_EQ(blocked.code, 1);
  EXPECT_TRUE(contains(blocked.err, "error: usage: gen-data:")) << blocked.err;
  EXPECT_TRUE(contains(blocked.err, "--force")) << blocked.err;

  const CliResult forced =
      run_cli({"gen-data", "--out", out.string(), "--demos", "2", "--frames",
               "40", "--force"});
  EXPECT_EQ(forced.code, 0) << forced.err;
}

TEST(GenDataT, UsageAndConfigErrors) {
  // Missing required option, unknown subcommand, unknown flag, bad value:
  // all parse errors with exit code 2.
  EXPECT_EQ(run_cli({"gen-data"}).code, 2);
  EXPECT_EQ(run_cli({}).code, 2);
  EXPECT_EQ(run_cli({"frobnicate"}).code, 2);
  EXPECT_EQ(run_cli({"gen-data", "--out", "x", "--wat"}).code, 2);
  EXPECT_EQ(run_cli({"gen-data", "--out", "x", "--demos", "abc"}).code, 2);
  const CliResult r = run_cli({"gen-data"});
  EXPECT_TRUE(contains(r.err, "error: usage:")) << r.err;

  // A structurally valid but rejected configuration exits 1.
  const CliResult bad = run_cli(
      {"gen-data", "--out", (work_root() / "gen3").string(), "--demos", "0"});
  EXPECT_EQ(bad.code, 1);
  EXPECT_TRUE(contains(bad.err, "error: config:")) << bad.err;
}

TEST(TrainT, TrainsAndWritesArtifacts) {
  const fs::path dir = shared_train_dir();
  const CliResult dup = run_cli({"train", "--out", dir.string(), "--dataset",
                                 shared_dataset().string(), "--epochs", "1"});
  EXPECT_EQ(dup.code, 1);  // non-empty output directory without --force
  EXPECT_TRUE(contains(dup.err, "error: usage: train:")) << dup.err;

  EXPECT_TRUE(fs::exists(dir / "checkpoint_best.bin"));
  EXPECT_TRUE(fs::exists(dir / "checkpoint_last.bin"));
  EXPECT_TRUE(fs::exists(dir / "metrics.csv"));
  EXPECT_TRUE(fs::exists(dir / "train_config.json"));
}

TEST(TrainT, ReportsObjectiveAndBestValidation) {
  const fs::path dir = work_root() / "train_triplet";
  const CliResult r = run_cli({"train", "--out", dir.string(), "--dataset",
                               shared_dataset().string(), "--objective",
                               "triplet", "--epochs", "2", "--batch-size",
                               "16", "--validation-every", "2", "--seed",
                               "1"});
  ASSERT_EQ(r.code, 0) << r.err;
  EXPECT_TRUE(contains(r.out, "trained: 2 epochs (triplet)")) << r.out;
  EXPECT_TRUE(contains(r.out, "best validation alignment: ")) << r.out;
  EXPECT_TRUE(contains(r.out, "% (epoch 2)")) << r.out;
}

TEST(TrainT, ResumeRejectsConfigFlagsAndContinues) {
  const CliResult bad = run_cli(
      {"train", "--out", (work_root() / "r1").string(), "--resume",
       (shared_train_dir() / "checkpoint_last.bin").string(), "--epochs",
       "5"});
  EXPECT_EQ(bad.code, 1);
  EXPECT_TRUE(contains(bad.err,
                       "error: usage: train: --resume takes its "
                       "configuration from the checkpoint"))
      << bad.err;

  const CliResult ok = run_cli(
      {"train", "--out", (work_root() / "r2").string(), "--resume",
       (shared_train_dir() / "checkpoint_last.bin").string(),
       "--extra-epochs", "1"});
  ASSERT_EQ(ok.code, 0) << ok.err;
  EXPECT_TRUE(contains(ok.out, "resumed: +1 epochs")) << ok.out;
  EXPECT_TRUE(fs::exists(work_root() / "r2" / "checkpoint_last.bin"));
}

TEST(EvalAlignT, ReportsAndValidatesEncoderSource) {
  const fs::path report = work_root() / "align.json";
  const CliResult r = run_cli(
      {"eval-align", "--checkpoint",
       (shared_train_dir() / "checkpoint_best.bin").string(), "--dataset",
       shared_dataset().string(), "--split", "val", "--out",
       report.string()});
  ASSERT_EQ(r.code, 0) << r.err;
  EXPECT_TRUE(contains(r.out, "alignment error (val): ")) << r.out;

  const nlohmann::json j = nlohmann::json::parse(read_text(report));
  EXPECT_EQ(j.at("split").get<std::string>(), "val");
  EXPECT_EQ(j.at("pair_count").get<int>(), 20);
  const double mean = j.at("mean").get<double>();
  EXPECT_GE(mean, 0.0);
  EXPECT_LE(mean, 1.0);
  EXPECT_DOUBLE_EQ(j.at("mean_percent").get<double>(), mean * 100.0);
  EXPECT_EQ(j.at("demo_ids").size(), 1u);   // the val split holds one demo
  EXPECT_EQ(j.at("per_demo").size(), 1u);

  // Without --out the report is printed to stdout.
  const CliResult direct = run_cli({"eval-align", "--random-init",
                                    "--dataset", shared_dataset().string()});
  ASSERT_EQ(direct.code, 0) << direct.err;
  EXPECT_TRUE(contains(direct.out, "\"encoder\": \"random-init\"")) <<
      direct.out;

  // Exactly one encoder source must be given.
  const CliResult both = run_cli(
      {"eval-align", "--random-init", "--checkpoint", "x.bin", "--dataset",
       shared_dataset().string()});
  EXPECT_EQ(both.code, 1);
  EXPECT_TRUE(contains(both.err, "exactly one of")) << both.err;
  const CliResult neither =
      run_cli({"eval-align", "--dataset", shared_dataset().string()});
  EXPECT_EQ(neither.code, 1);
  EXPECT_TRUE(contains(neither.err, "exactly one of")) << neither.err;

  // A missing checkpoint file is an I/O error.
  const CliResult missing = run_cli(
      {"eval-align", "--checkpoint", (work_root() / "nope.bin").string(),
       "--dataset", shared_dataset().string()});
  EXPECT_EQ(missing.code, 1);
  EXPECT_TRUE(contains(missing.err, "error: io:")) << missing.err;
}

TEST(EvalStageT, ProbeReportAndCounts) {
  const fs::path report = work_root() / "stage.json";
  const CliResult r = run_cli(
      {"eval-stage", "--checkpoint",
       (shared_train_dir() / "checkpoint_best.bin").string(), "--dataset",
       shared_dataset().string(), "--views-train", "seen", "--views-test",
       "unseen", "--train-per-class", "8", "--test-per-class", "4",
       "--probe-epochs", "20", "--seed", "1", "--out", report.string()});
  ASSERT_EQ(r.code, 0) << r.err;
  EXPECT_TRUE(contains(r.out, "stage accuracy (train views seen, test views "
                              "unseen): "))
      << r.out;

  const nlohmann::json j = nlohmann::json::parse(read_text(report));
  EXPECT_EQ(j.at("train_count").get<int>(), 16);
  EXPECT_EQ(j.at("test_count").get<int>(), 8);
  EXPECT_FALSE(j.at("shuffled_labels").get<bool>());
  const double acc = j.at("accuracy").get<double>();
  EXPECT_GE(acc, 0.0);
  EXPECT_LE(acc, 1.0);

  // The shuffled-label control is reported as such.
  const CliResult shuffled = run_cli(
      {"eval-stage", "--checkpoint",
       (shared_train_dir() / "checkpoint_best.bin").string(), "--dataset",
       shared_dataset().string(), "--train-per-class", "8",
       "--test-per-class", "4", "--probe-epochs", "20", "--shuffled-labels"});
  ASSERT_EQ(shuffled.code, 0) << shuffled.err;
  EXPECT_TRUE(contains(shuffled.out, ", shuffled labels): ")) << shuffled.out;

  // Unparseable view specs are usage errors.
  const CliResult bad = run_cli(
      {"eval-stage", "--checkpoint",
       (shared_train_dir() / "checkpoint_best.bin").string(), "--dataset",
       shared_dataset().string(), "--views-train", "sideways"});
  EXPECT_EQ(bad.code, 1);
  EXPECT_TRUE(contains(bad.err, "error: usage: invalid view spec")) << bad.err;
}

TEST(TrainRlT, TrainsEvaluatesAndValidates) {
  const fs::path out = work_root() / "rl";
  const CliResult r = run_cli(
      {"train-rl", "--random-init", "--dataset", shared_dataset().string(),
       "--out", out.string(), "--stage", "pick", "--episodes", "1",
       "--warmup", "1000000", "--hidden", "8", "--batch-size", "8", "--her-k",
       "1", "--seed", "3"});
  ASSERT_EQ(r.code, 0) << r.err;
  EXPECT_TRUE(contains(r.out, "episodes: 1 (stage pick, guidance demo 0)"))
      << r.out;
  EXPECT_TRUE(contains(r.out, "policy: ")) << r.out;
  ASSERT_TRUE(fs::exists(out / "policy.bin"));
  ASSERT_TRUE(fs::exists(out / "episodes.csv"));
  ASSERT_TRUE(fs::exists(out / "rl_config.json"));

  // The policy round-trips through eval-rl for every policy kind flag.
  const fs::path report = work_root() / "rl_eval.json";
  const CliResult ev = run_cli(
      {"eval-rl", "--policy", (out / "policy.bin").string(), "--policy-kind",
       "random", "--episodes", "1", "--seed", "5", "--out",
       report.string()});
  ASSERT_EQ(ev.code, 0) << ev.err;
  EXPECT_TRUE(contains(ev.out, "success rate (random): ")) << ev.out;
  const nlohmann::json j = nlohmann::json::parse(read_text(report));
  EXPECT_EQ(j.at("episodes").get<int>(), 1);
  EXPECT_TRUE(j.at("success_rate").is_number());
  EXPECT_TRUE(j.at("mean_return").is_number());

  const CliResult actor = run_cli(
      {"eval-rl", "--policy", (out / "policy.bin").string(), "--episodes",
       "1", "--seed", "5"});
  ASSERT_EQ(actor.code, 0) << actor.err;
  EXPECT_TRUE(contains(actor.out, "success rate (actor): ")) << actor.out;

  const CliResult badkind = run_cli(
      {"eval-rl", "--policy", (out / "policy.bin").string(), "--policy-kind",
       "oracle"});
  EXPECT_EQ(badkind.code, 1);
  EXPECT_TRUE(contains(badkind.err, "unknown policy kind")) << badkind.err;

  // Encoder-source XOR and stage validation.
  const CliResult both = run_cli(
      {"train-rl", "--random-init", "--checkpoint", "x.bin", "--dataset",
       shared_dataset().string(), "--out", (work_root() / "rl2").string(),
       "--stage", "pick"});
  EXPECT_EQ(both.code, 1);
  EXPECT_TRUE(contains(both.err, "exactly one of")) << both.err;

  const CliResult badstage = run_cli(
      {"train-rl", "--random-init", "--dataset", shared_dataset().string(),
       "--out", (work_root() / "rl3").string(), "--stage", "lift",
       "--episodes", "1"});
  EXPECT_EQ(badstage.code, 1);
  EXPECT_TRUE(contains(badstage.err, "unknown stage")) << badstage.err;

  // A policy checkpoint is not a valid encoder checkpoint for train-rl.
  const CliResult wrongkind = run_cli(
      {"train-rl", "--checkpoint", (out / "policy.bin").string(),
       "--dataset", shared_dataset().string(), "--out",
       (work_root() / "rl4").string(), "--stage", "pick", "--episodes",
       "1"});
  EXPECT_EQ(wrongkind.code, 1);
  EXPECT_TRUE(contains(wrongkind.err, "not a training checkpoint"))
      << wrongkind.err;
}

TEST(PlotExportT, ExportsSeriesWithSmoothing) {
  const fs::path metrics = work_root() / "metrics_in.csv";
  {
    std::ofstream out(metrics, std::ios::binary);
    out << "epoch,train loss,val\n"
        << "1,4,\n"
        << "2,2,0.5\n"
        << "3,3,\n";
  }
  const fs::path out1 = work_root() / "plots1";
  const CliResult r = run_cli(
      {"plot-export", "--metrics", metrics.string(), "--out",
       out1.string()});
  ASSERT_EQ(r.code, 0) << r.err;
  // Non-alphanumeric header characters are sanitized in file names.
  EXPECT_EQ(read_text(out1 / "train_loss.csv"), "x,y\n1,4\n2,2\n3,3\n");
  EXPECT_EQ(read_text(out1 / "val.csv"), "x,y\n2,0.5\n");
  EXPECT_TRUE(contains(r.out, "series: ")) << r.out;

  // Trailing moving average with window 2.
  const fs::path out2 = work_root() / "plots2";
  ASSERT_EQ(run_cli({"plot-export", "--metrics", metrics.string(), "--out",
                     out2.string(), "--smooth", "2"})
                .code,
            0);
  EXPECT_EQ(read_text(out2 / "train_loss.csv"), "x,y\n1,4\n2,3\n3,2.5\n");
}

TEST(PlotExportT, InputValidation) {
  const CliResult smooth0 = run_cli(
      {"plot-export", "--metrics", "whatever.csv", "--out",
       (work_root() / "p").string(), "--smooth", "0"});
  EXPECT_EQ(smooth0.code, 1);
  EXPECT_TRUE(contains(smooth0.err, "--smooth must be >= 1")) << smooth0.err;

  const CliResult missing = run_cli(
      {"plot-export", "--metrics", (work_root() / "nope.csv").string(),
       "--out", (work_root() / "p").string()});
  EXPECT_EQ(missing.code, 1);
  EXPECT_TRUE(contains(missing.err, "error: io:")) << missing.err;

  auto write_and_run = [&](const std::string& name, const std::string& body) {
    const fs::path p = work_root() / name;
    std::ofstream(p, std::ios::binary) << body;
    return run_cli({"plot-export", "--metrics", p.string(), "--out",
                    (work_root() / "p").string()});
  };
  const CliResult empty = write_and_run("empty.csv", "");
  EXPECT_EQ(empty.code, 1);
  EXPECT_TRUE(contains(empty.err, "error: data:")) << empty.err;

  const CliResult header_only = write_and_run("header.csv", "epoch,loss\n");
  EXPECT_EQ(header_only.code, 1);
  EXPECT_TRUE(contains(header_only.err, "empty input")) << header_only.err;

  const CliResult ragged =
      write_and_run("ragged.csv", "epoch,loss\n1,2\n3\n");
  EXPECT_EQ(ragged.code, 1);
  EXPECT_TRUE(contains(ragged.err, "expected 2")) << ragged.err;

  const CliResult no_series =
      write_and_run("empty_col.csv", "epoch,loss\n1,\n2,\n");
  EXPECT_EQ(no_series.code, 1);
  EXPECT_TRUE(contains(no_series.err, "no numeric series found"))
      << no_series.err;

  const CliResult one_col = write_and_run("one_col.csv", "epoch\n1\n");
  EXPECT_EQ(one_col.code, 1);
  EXPECT_TRUE(contains(one_col.err, "at least two columns")) << one_col.err;
}

TEST(GlobalT, ThreadsOptionAppliesBeforeSubcommand) {
  const CliResult r = run_cli(
      {"--threads", "2", "gen-data", "--out",
       (work_root() / "gen_threads").string(), "--demos", "2", "--frames",
       "40"});
  EXPECT_EQ(r.code, 0) << r.err;
  clfd::set_thread_count(0);

  const CliResult help = run_cli({"--help"});
  EXPECT_EQ(help.code, 0);
  EXPECT_TRUE(contains(help.out, "gen-data")) << help.out;
}

}  // namespace
