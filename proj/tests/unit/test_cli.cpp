// SPDX-License-Identifier: Apache-2.0

#include <gtest/gtest.h>

#include <chrono>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>

#include <sys/wait.h>

#include "ltn/cli.hpp"
#include "ltn/ltn.hpp"

using namespace ltn;
namespace fs = std::filesystem;

namespace {

class Cli : public ::testing::Test {
 protected:
  void SetUp() override {
    const auto stamp = std::chrono::steady_clock::now().time_since_epoch().count();
    dir_ = fs::temp_directory_path() / ("ltn_cli_" + std::to_string(stamp));
    fs::create_directories(dir_);
  }
  void TearDown() override { fs::remove_all(dir_); }

  int run(const std::string& args) {
    const std::string cmd = std::string(LTN_CLI_PATH) + " " + args + " >" + (dir_ / "stdout.txt").string() + " 2>" +
                            (dir_ / "stderr.txt").string();
    const int rc = std::system(cmd.c_str());
    return WIFEXITED(rc) ? WEXITSTATUS(rc) : -1;
  }

  std::string read(const fs::path& p) const {
    std::ifstream in(p);
    std::stringstream ss;
    ss << in.rdbuf();
    return ss.str();
  }

  std::string path(const std::string& name) const { return (dir_ / name).string(); }

  fs::path dir_;
};

const char* kSmallModel =
    " --history_hidden 12 --neighbor_hidden 4 --future_hidden 8 --encoder_layers 1 --encoder_rounds 0"
    " --attention_dim 4 --latent_dim 5 --latent_hidden 8 --decoder_hidden 12 --decoder_rounds 2"
    " --classifier_hidden 6 --classifier_head_hidden 6 --n_proposals 6 --eval_samples 6";

}  // namespace

TEST_F(Cli, RejectsUnknownSubcommandAndFlag) {
  EXPECT_NE(run("frobnicate"), 0);
  EXPECT_NE(run("synth-gen --out " + path("s") + " --no-such-flag 3"), 0);
  EXPECT_NE(run(""), 0);
  EXPECT_NE(run("train --data " + path("missing") + " --out " + path("t")), 0);
  EXPECT_NE(read(dir_ / "stderr.txt").find("error"), std::string::npos);
  EXPECT_EQ(run("--help"), 0);
}

TEST_F(Cli, EvaluatePerfectPredictionsIsZero) {
  ASSERT_EQ(run("synth-gen --out " + path("data") + " --scenes 3 --agents 3 --dynamics turning --seed 4"), 0);
  RunConfig c;
  const auto instances = scene_instances(load_scene_paths({path("data")}, {}), c);
  ASSERT_FALSE(instances.empty());
  json arr = json::array();
  for (const auto& inst : instances) {
    Prediction p;
    p.instance_id = inst.id;
    p.most_likely = inst.future;
    TrajectoryProposal q;
    q.positions = inst.future;
    q.score = 1.0;
    p.proposals = {q};
    arr.push_back(to_json(p));
  }
  std::ofstream(path("preds.json")) << json{{"units", "m"}, {"instances", arr}}.dump();
  ASSERT_EQ(run("evaluate --data " + path("data") + " --predictions " + path("preds.json") + " --out " + path("eval")), 0)
      << read(dir_ / "stderr.txt");
  const json r = json::parse(read(dir_ / "eval" / "report.json"));
  EXPECT_EQ(r["selected"]["ade"].get<double>(), 0.0);
  EXPECT_EQ(r["selected"]["fde"].get<double>(), 0.0);
  EXPECT_EQ(r["selected"]["count"].get<std::size_t>(), instances.size());
  const std::string csv = read(dir_ / "eval" / "metrics.csv");
  EXPECT_EQ(csv.rfind("instance_id,ade,fde", 0), 0u);
  EXPECT_EQ(static_cast<std::size_t>(std::count(csv.begin(), csv.end(), '\n')), instances.size() + 1);
}

TEST_F(Cli, ZeroEpochCheckpointEqualsInitialization) {
  ASSERT_EQ(run("synth-gen --out " + path("data") + " --scenes 2 --agents 3 --seed 1"), 0);
  ASSERT_EQ(run("train --data " + path("data") + " --out " + path("run") + " --epochs 0 --seed 17" + kSmallModel), 0)
      << read(dir_ / "stderr.txt");
  const auto ck = load_checkpoint(path("run/model.ckpt"));
  EXPECT_EQ(ck.config.train.seed, 17u);
  EXPECT_EQ(ck.config.model.decoder_rounds, 2u);
  const Model ref = Model::init(ck.config.model, 17);
  const auto a = ck.model.parameters(), b = ref.parameters();
  ASSERT_EQ(a.size(), b.size());
  for (std::size_t k = 0; k < a.size(); ++k) {
    const auto x = a[k].data(), y = b[k].data();
    EXPECT_TRUE(std::equal(x.begin(), x.end(), y.begin(), y.end())) << a[k].name();
  }
  const json report = json::parse(read(dir_ / "run" / "train_report.json"));
  EXPECT_TRUE(report["epochs"].empty());
}

TEST_F(Cli, TrainedModelBeatsConstantPosition) {
  ASSERT_EQ(run("synth-gen --out " + path("train") + " --scenes 200 --agents 3 --dynamics constant_velocity --seed 2"), 0);
  ASSERT_EQ(run("synth-gen --out " + path("test") + " --scenes 20 --agents 3 --dynamics constant_velocity --seed 99"), 0);
  ASSERT_EQ(run("train --data " + path("train") + " --out " + path("run") + " --epochs 3 --seed 3" + kSmallModel), 0)
      << read(dir_ / "stderr.txt");
  ASSERT_EQ(run("predict --checkpoint " + path("run/model.ckpt") + " --data " + path("test") + " --out " +
                path("preds.json") + " --svg " + path("svg") + " --svg-limit 2"),
            0)
      << read(dir_ / "stderr.txt");
  EXPECT_EQ(std::distance(fs::directory_iterator(dir_ / "svg"), fs::directory_iterator{}), 2);
  ASSERT_EQ(run("evaluate --data " + path("test") + " --predictions " + path("preds.json") + " --out " + path("eval") +
                " --eval_samples 6"),
            0)
      << read(dir_ / "stderr.txt");
  const json r = json::parse(read(dir_ / "eval" / "report.json"));
  const double model_fde = r["most_likely"]["fde"].get<double>();
  const double still_fde = r["constant_position"]["fde"].get<double>();
  EXPECT_LT(model_fde, still_fde) << "model " << model_fde << " constant position " << still_fde;
  EXPECT_LT(r["selected"]["fde"].get<double>(), still_fde);
}
