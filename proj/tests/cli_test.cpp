// End-to-end checks of the radflow executable.

#include <gtest/gtest.h>
#include <sys/wait.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>
#include <string>

#include "radflow/checkpoint.hpp"
#include "radflow/data.hpp"
#include "radflow/report.hpp"
#include "radflow/train.hpp"

namespace radflow {
namespace {

namespace fs = std::filesystem;

struct CliRun {
  int code = -1;
  std::string output;  // stdout and stderr
};

class CliTest : public ::testing::Test {
 protected:
  void SetUp() override {
    dir_ = fs::temp_directory_path() /
           ("radflow-cli-test-" + std::string(::testing::UnitTest::GetInstance()->current_test_info()->name()));
    fs::remove_all(dir_);
    fs::create_directories(dir_);
  }
  void TearDown() override { fs::remove_all(dir_); }

  // Runs the executable with `args` from inside the scratch directory.
  CliRun radflow(const std::string& args) const {
    const auto log = dir_ / "cli-output.txt";
    const std::string cmd =
        "cd \"" + dir_.string() + "\" && \"" RADFLOW_CLI "\" " + args + " > \"" + log.string() + "\" 2>&1";
    const int status = std::system(cmd.c_str());
    CliRun r;
    r.code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
    r.output = read(log);
    fs::remove(log);
    return r;
  }

  static std::string read(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    std::ostringstream s;
    s << in.rdbuf();
    return s.str();
  }

  static std::map<std::string, std::string> key_values(const fs::path& p) {
    std::map<std::string, std::string> kv;
    std::ifstream in(p);
    for (std::string line; std::getline(in, line);) {
      const auto eq = line.find('=');
      if (eq != std::string::npos) kv[line.substr(0, eq)] = line.substr(eq + 1);
    }
    return kv;
  }

  fs::path dir_;
};

TEST_F(CliTest, UnknownFlagIsAUsageError) {
  const auto r = radflow("train --bogus");
  EXPECT_EQ(r.code, 1);
  EXPECT_NE(r.output.find("--bogus"), std::string::npos);
  EXPECT_NE(r.output.find("Usage:"), std::string::npos);
}

TEST_F(CliTest, MissingOrUnknownCommandIsAUsageError) {
  EXPECT_EQ(radflow("").code, 1);
  EXPECT_EQ(radflow("fly").code, 1);
  EXPECT_EQ(radflow("train --problem moons").code, 1);
  EXPECT_EQ(radflow("--help").code, 0);
}

TEST_F(CliTest, TrainWritesCheckpointLogAndManifest) {
  const auto r = radflow("train --problem ring-gmm --model rad --steps 1000 --log-every 500 --seed 0 --out runs/r0");
  ASSERT_EQ(r.code, 0) << r.output;
  EXPECT_NE(r.output.find("618 parameters"), std::string::npos);
  const auto run = dir_ / "runs" / "r0";
  EXPECT_NO_THROW(load_checkpoint((run / "model.ckpt").string()));
  std::ifstream log(run / "train_log.csv");
  const auto records = read_train_log(log);
  ASSERT_EQ(records.size(), 3u);
  EXPECT_GT(records.back().train_ll, records.front().train_ll);
  const auto manifest = key_values(run / "manifest.txt");
  EXPECT_EQ(manifest.at("command"), "train");
  EXPECT_EQ(manifest.at("problem"), "ring-gmm");
  EXPECT_EQ(manifest.at("steps"), "1000");
  EXPECT_EQ(manifest.at("hidden-resolved"), "8");
  EXPECT_EQ(manifest.at("param-count"), "618");
  EXPECT_TRUE(manifest.count("compiler"));
  EXPECT_TRUE(manifest.count("radflow_version"));

  // The manifest and checkpoint are enough to reproduce the logged test LL.
  const auto e = radflow("eval --checkpoint runs/r0/model.ckpt --problem " + manifest.at("problem") + " --seed " +
                         manifest.at("seed") + " --n " + manifest.at("test-size") + " --out runs/e0");
  ASSERT_EQ(e.code, 0) << e.output;
  EXPECT_EQ(std::stod(key_values(dir_ / "runs" / "e0" / "eval.txt").at("test_ll")), records.back().test_ll);
  EXPECT_TRUE(key_values(dir_ / "runs" / "e0" / "eval.txt").count("true_ll"));
}

TEST_F(CliTest, ConfigFileSuppliesDefaultsAndFlagsWin) {
  std::ofstream(dir_ / "run.cfg") << "# smoke\nproblem = spiral\nsteps=30\nlog-every=10\nseed=4\nlayers=2\n";
  const auto r = radflow("train --config run.cfg --seed 5 --out c");
  ASSERT_EQ(r.code, 0) << r.output;
  const auto manifest = key_values(dir_ / "c" / "manifest.txt");
  EXPECT_EQ(manifest.at("problem"), "spiral");
  EXPECT_EQ(manifest.at("steps"), "30");
  EXPECT_EQ(manifest.at("layers"), "2");
  EXPECT_EQ(manifest.at("seed"), "5");

  std::ofstream(dir_ / "bad.cfg") << "steps=30\nwings=2\n";
  EXPECT_EQ(radflow("train --config bad.cfg --out d").code, 1);
  std::ofstream(dir_ / "worse.cfg") << "steps 30\n";
  EXPECT_EQ(radflow("train --config worse.cfg --out d").code, 1);
  EXPECT_EQ(radflow("train --config missing.cfg --out d").code, 1);
}

TEST_F(CliTest, GenDataIsDeterministic) {
  ASSERT_EQ(radflow("gen-data --problem two-circles --n 500 --seed 3 --out a").code, 0);
  ASSERT_EQ(radflow("gen-data --problem two-circles --n 500 --seed 3 --out b").code, 0);
  EXPECT_EQ(read(dir_ / "a" / "data.csv"), read(dir_ / "b" / "data.csv"));
  const auto points = load_csv((dir_ / "a" / "data.csv").string());
  EXPECT_EQ(points, generate({Problem::kTwoCircles, 500, 3, std::nullopt}).points);
  ASSERT_EQ(radflow("gen-data --problem two-circles --n 5 --noise 0 --out z").code, 0);
  for (const auto& p : load_csv((dir_ / "z" / "data.csv").string())) {
    const double r = std::hypot(p[0], p[1]);
    EXPECT_TRUE(std::abs(r - 1.0) < 1e-12 || std::abs(r - 0.5) < 1e-12);
  }
}

TEST_F(CliTest, SampleAndVizWriteFigures) {
  ASSERT_EQ(radflow("train --problem two-moons --steps 20 --log-every 10 --layers 2 --out m").code, 0);
  const auto s = radflow("sample --checkpoint m/model.ckpt --n 250 --seed 1 --out s");
  ASSERT_EQ(s.code, 0) << s.output;
  EXPECT_EQ(load_csv((dir_ / "s" / "samples.csv").string()).size(), 250u);
  EXPECT_TRUE(fs::exists(dir_ / "s" / "figures" / "samples.svg"));
  for (const std::string kind : {"samples", "gaussianization", "folding", "data"}) {
    const auto v = radflow("viz --checkpoint m/model.ckpt --kind " + kind + " --problem two-moons --n 300 --out v");
    EXPECT_EQ(v.code, 0) << kind << ": " << v.output;
  }
  EXPECT_TRUE(fs::exists(dir_ / "v" / "figures" / "folding-two-moons-layer0-output.svg"));
  EXPECT_TRUE(fs::exists(dir_ / "v" / "figures" / "gaussianization-two-moons.csv"));
  EXPECT_EQ(radflow("viz --kind gaussianization --out v").code, 1);
  EXPECT_EQ(radflow("viz --checkpoint m/model.ckpt --kind folding --layer 9 --out v").code, 2);
}

TEST_F(CliTest, RuntimeFaultsExitWithTwo) {
  std::ofstream(dir_ / "broken.ckpt") << "radflow-checkpoint 1\ndim 2\nlayers 1\nrad 8 pass 0 transform 1\nparams 3\n";
  const auto r = radflow("eval --checkpoint broken.ckpt --out e");
  EXPECT_EQ(r.code, 2);
  EXPECT_NE(r.output.find("checkpoint"), std::string::npos);
  ASSERT_EQ(radflow("train --model realnvp --steps 5 --log-every 5 --layers 2 --out n").code, 0);
  EXPECT_EQ(radflow("viz --checkpoint n/model.ckpt --kind folding --out v").code, 2);
}

TEST_F(CliTest, ReproTabulatesResumesAndStaysInsideOut) {
  const std::string args =
      "repro --steps 10 --log-every 5 --layers 2 --train-size 200 --test-size 200 --problems two-moons,ring-gmm "
      "--seeds 0,1 --out table";
  const auto r = radflow(args);
  ASSERT_EQ(r.code, 0) << r.output;
  for (const auto& entry : fs::directory_iterator(dir_)) EXPECT_EQ(entry.path().filename(), "table");
  const auto table = read(dir_ / "table" / "table.txt");
  EXPECT_NE(table.find("two-moons"), std::string::npos);
  const auto spiral = table.substr(table.find("spiral"), table.find('\n', table.find("spiral")) - table.find("spiral"));
  std::size_t missing = 0;
  for (auto pos = spiral.find(kMissingCell); pos != std::string::npos; pos = spiral.find(kMissingCell, pos + 1)) ++missing;
  EXPECT_EQ(missing, 3u) << table;
  std::ifstream results(dir_ / "table" / "results.csv");
  std::string line;
  std::size_t rows = 0;
  std::getline(results, line);
  EXPECT_EQ(line, "problem,model,seed,param_count,train_ll,test_ll,true_ll");
  while (std::getline(results, line)) ++rows;
  EXPECT_EQ(rows, 8u);
  EXPECT_TRUE(fs::exists(dir_ / "table" / "runs" / "ring-gmm" / "realnvp" / "seed1" / "model.ckpt"));
  EXPECT_TRUE(fs::exists(dir_ / "table" / "figures" / "ring-gmm-rad-gaussianization.svg"));

  const auto again = radflow(args);
  ASSERT_EQ(again.code, 0);
  EXPECT_NE(again.output.find("reusing"), std::string::npos);
  EXPECT_EQ(read(dir_ / "table" / "table.txt"), table);
}

}  // namespace
}  // namespace radflow
