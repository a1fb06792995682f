// End-to-end tests for the command-line front end: exit codes per error
// category, the self-verification suites (including fault injection), the
// parameter-count report, and the synth -> train -> eval -> predict pipeline.
//
// The binary under test is passed as argv[1] (see tests/CMakeLists.txt).

#include <gtest/gtest.h>
#include <sys/wait.h>
#include <unistd.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "tdl/serialize.hpp"

namespace fs = std::filesystem;

namespace {

std::string g_tdl_bin;

struct CliResult {
  int exit_code = -1;
  std::string output;  // stdout and stderr combined
};

std::string read_text_file(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

int count_lines(const std::string& text) {
  int n = 0;
  for (char c : text)
    if (c == '\n') ++n;
  return n;
}

class CliTest : public ::testing::Test {
 protected:
  void SetUp() override {
    ASSERT_FALSE(g_tdl_bin.empty()) << "pass the tdl binary path as argv[1]";
    const auto* info = ::testing::UnitTest::GetInstance()->current_test_info();
    dir_ = fs::temp_directory_path() /
           (std::string("tdl_cli_") + info->name() + "_" +
            std::to_string(::getpid()));
    fs::remove_all(dir_);
    fs::create_directories(dir_);
  }

  void TearDown() override { fs::remove_all(dir_); }

  // Runs "tdl <args>" with stdout+stderr captured to a file in the temp dir.
  CliResult run(const std::string& args) {
    const fs::path cap = dir_ / "capture.txt";
    const std::string cmd =
        "'" + g_tdl_bin + "' " + args + " > '" + cap.string() + "' 2>&1";
    const int status = std::system(cmd.c_str());
    CliResult r;
    r.exit_code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
    r.output = read_text_file(cap);
    return r;
  }

  // A small but complete run config that trains in well under a second.
  std::string write_config(const std::string& extra_lines = "") {
    const fs::path p = dir_ / "run.cfg";
    std::ofstream out(p);
    out << "img_size = 16\n"
        << "in_channels = 3\n"
        << "num_classes = 2\n"
        << "embed_dim = 8\n"
        << "depths = 2,2\n"
        << "num_heads = 2,2\n"
        << "window_size = 4\n"
        << "sspp_level = 2\n"
        << "seed = 5\n"
        << "steps = 2\n"
        << "batch_size = 2\n"
        << "base_lr = 0.05\n"
        << "augment = 0\n"
        << "checkpoint_interval = 0\n"
        << "dataset_root = " << (dir_ / "data").string() << "\n"
        << "out_dir = " << (dir_ / "out").string() << "\n"
        << extra_lines;
    return p.string();
  }

  void make_dataset(int64_t n, int64_t img, int64_t k, uint64_t seed) {
    CliResult r = run("synth --n " + std::to_string(n) + " --img " +
                      std::to_string(img) + " --classes " + std::to_string(k) +
                      " --seed " + std::to_string(seed) + " --out '" +
                      (dir_ / "data").string() + "'");
    ASSERT_EQ(r.exit_code, 0) << r.output;
  }

  fs::path dir_;
};

TEST_F(CliTest, TrainRejectsBadConfigValue) {
  const std::string cfg = write_config("fusion = bogus\n");
  CliResult r = run("train --config '" + cfg + "'");
  EXPECT_EQ(r.exit_code, 2);
  EXPECT_NE(r.output.find("config error"), std::string::npos) << r.output;
}

TEST_F(CliTest, TrainRejectsMissingConfigFile) {
  CliResult r = run("train --config '" + (dir_ / "nope.cfg").string() + "'");
  EXPECT_EQ(r.exit_code, 2);
  EXPECT_NE(r.output.find("config error"), std::string::npos) << r.output;
}

TEST_F(CliTest, TrainRejectsMissingDataset) {
  const std::string cfg = write_config();  // dataset_root never created
  CliResult r = run("train --config '" + cfg + "'");
  EXPECT_EQ(r.exit_code, 3);
  EXPECT_NE(r.output.find("dataset error"), std::string::npos) << r.output;
}

TEST_F(CliTest, TrainRejectsDatasetWithTooManyClasses) {
  make_dataset(2, 16, 3, 1);  // labels reach 2, but the model only has 2 classes
  const std::string cfg = write_config();
  CliResult r = run("train --config '" + cfg + "'");
  EXPECT_EQ(r.exit_code, 4);
  EXPECT_NE(r.output.find("mismatch error"), std::string::npos) << r.output;
}

TEST_F(CliTest, EvalRejectsCorruptCheckpoint) {
  const fs::path bad = dir_ / "bad.tdlc";
  std::ofstream(bad, std::ios::binary) << "this is not a checkpoint";
  CliResult r = run("eval --checkpoint '" + bad.string() + "'");
  EXPECT_EQ(r.exit_code, 5);
  EXPECT_NE(r.output.find("checkpoint error"), std::string::npos) << r.output;
}

TEST_F(CliTest, VerifySuitesAllPass) {
  CliResult r = run("verify");
  EXPECT_EQ(r.exit_code, 0) << r.output;
  EXPECT_NE(r.output.find("PASS gradcheck"), std::string::npos) << r.output;
  EXPECT_NE(r.output.find("PASS swin-oracle"), std::string::npos) << r.output;
  EXPECT_NE(r.output.find("PASS metrics-oracle"), std::string::npos) << r.output;
  EXPECT_EQ(r.output.find("FAIL"), std::string::npos) << r.output;
}

TEST_F(CliTest, VerifyDetectsInjectedGradientFault) {
  CliResult r = run("verify --suite gradcheck --inject-fault");
  EXPECT_EQ(r.exit_code, 1) << r.output;
  EXPECT_NE(r.output.find("FAIL gradcheck"), std::string::npos) << r.output;
}

TEST_F(CliTest, VerifyRejectsUnknownSuite) {
  CliResult r = run("verify --suite no-such-suite");
  EXPECT_EQ(r.exit_code, 2);
  EXPECT_NE(r.output.find("config error"), std::string::npos) << r.output;
}

TEST_F(CliTest, CountParamsReportsFrozenTotals) {
  {
    const fs::path p = dir_ / "tiny.cfg";
    std::ofstream(p) << "img_size = 32\nembed_dim = 8\ndepths = 2,2\n"
                     << "num_heads = 2,2\nwindow_size = 4\nsspp_level = 2\n"
                     << "num_classes = 2\n";
    CliResult r = run("count-params --config '" + p.string() + "'");
    EXPECT_EQ(r.exit_code, 0) << r.output;
    EXPECT_NE(r.output.find("total: 26975"), std::string::npos) << r.output;
    EXPECT_NE(r.output.find("encoder:"), std::string::npos) << r.output;
    EXPECT_NE(r.output.find("sspp:"), std::string::npos) << r.output;
    EXPECT_NE(r.output.find("fusion:"), std::string::npos) << r.output;
    EXPECT_NE(r.output.find("decoder:"), std::string::npos) << r.output;
  }
  {
    const fs::path p = dir_ / "default.cfg";
    std::ofstream(p) << "# all defaults\n";
    CliResult r = run("count-params --config '" + p.string() + "'");
    EXPECT_EQ(r.exit_code, 0) << r.output;
    EXPECT_NE(r.output.find("total: 20714511"), std::string::npos) << r.output;
  }
}

TEST_F(CliTest, SynthTrainEvalPredictPipeline) {
  make_dataset(2, 16, 2, 3);
  const std::string cfg = write_config();
  CliResult train = run("train --config '" + cfg + "'");
  ASSERT_EQ(train.exit_code, 0) << train.output;

  const fs::path out_dir = dir_ / "out";
  const std::string log = read_text_file(out_dir / "loss_log.csv");
  EXPECT_EQ(count_lines(log), 3) << log;  // header + one row per step
  EXPECT_EQ(log.rfind("step, lr, dice_loss, ce_loss, total", 0), 0u) << log;
  ASSERT_TRUE(fs::exists(out_dir / "final.tdlc"));

  CliResult ev = run("eval --checkpoint '" + (out_dir / "final.tdlc").string() +
                     "' --dataset '" + (dir_ / "data").string() + "' --out '" +
                     out_dir.string() + "'");
  ASSERT_EQ(ev.exit_code, 0) << ev.output;
  EXPECT_NE(ev.output.find("mean_dice:"), std::string::npos) << ev.output;
  const std::string metrics = read_text_file(out_dir / "metrics.csv");
  EXPECT_EQ(count_lines(metrics), 4) << metrics;  // header + class 0, 1, macro
  EXPECT_EQ(metrics.rfind("class, dice, hausdorff, sensitivity, specificity, accuracy", 0), 0u)
      << metrics;

  const fs::path map_path = dir_ / "pred.tdl1";
  CliResult pred = run("predict --checkpoint '" +
                       (out_dir / "final.tdlc").string() + "' --image '" +
                       (dir_ / "data" / "images" / "000000.tdl").string() +
                       "' --out '" + map_path.string() + "'");
  ASSERT_EQ(pred.exit_code, 0) << pred.output;
  tdl::Tdl1Data map = tdl::load_tdl1_file(map_path.string());
  ASSERT_EQ(map.shape, (std::vector<int64_t>{16, 16}));
  for (float v : map.data) EXPECT_TRUE(v == 0.0f || v == 1.0f) << v;
}

TEST_F(CliTest, PredictRejectsWrongImageGeometry) {
  make_dataset(2, 16, 2, 3);
  const std::string cfg = write_config();
  ASSERT_EQ(run("train --config '" + cfg + "'").exit_code, 0);
  // A bare 2-D tensor is not a [channels, H, W] image.
  std::vector<float> flat(16 * 16, 0.0f);
  tdl::save_tdl1_file((dir_ / "flat.tdl1").string(), {16, 16}, flat.data());
  CliResult r = run("predict --checkpoint '" +
                    (dir_ / "out" / "final.tdlc").string() + "' --image '" +
                    (dir_ / "flat.tdl1").string() + "' --out '" +
                    (dir_ / "pred.tdl1").string() + "'");
  EXPECT_EQ(r.exit_code, 4);
  EXPECT_NE(r.output.find("mismatch error"), std::string::npos) << r.output;
}

TEST_F(CliTest, TrainLogsAreSeedDeterministic) {
  make_dataset(2, 16, 2, 3);
  const std::string cfg = write_config();
  ASSERT_EQ(run("train --config '" + cfg + "' --seed 9 --out '" +
                (dir_ / "a").string() + "'")
                .exit_code,
            0);
  ASSERT_EQ(run("train --config '" + cfg + "' --seed 9 --out '" +
                (dir_ / "b").string() + "'")
                .exit_code,
            0);
  const std::string log_a = read_text_file(dir_ / "a" / "loss_log.csv");
  const std::string log_b = read_text_file(dir_ / "b" / "loss_log.csv");
  EXPECT_FALSE(log_a.empty());
  EXPECT_EQ(log_a, log_b);
}

}  // namespace

int main(int argc, char** argv) {
  ::testing::InitGoogleTest(&argc, argv);
  if (argc > 1) g_tdl_bin = argv[1];
  if (g_tdl_bin.empty())
    if (const char* env = std::getenv("TDL_BIN")) g_tdl_bin = env;
  return RUN_ALL_TESTS();
}
