#include "mohba/cli.hpp"

#include <gtest/gtest.h>

#include <sys/wait.h>

#include <chrono>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>

using namespace mohba;
namespace fs = std::filesystem;

namespace {

struct Outcome {
  int code;
  std::string out;
  std::string err;
};

Outcome run_cli(std::vector<std::string> args) {
  args.insert(args.begin(), "mohba");
  std::vector<const char*> argv;
  for (const auto& a : args) argv.push_back(a.c_str());
  std::ostringstream out, err;
  const int code = cli::run(static_cast<int>(argv.size()), argv.data(), out, err);
  return {code, out.str(), err.str()};
}

std::string slurp(const fs::path& p) {
  std::ifstream f(p, std::ios::binary);
  std::ostringstream s;
  s << f.rdbuf();
  return s.str();
}

nlohmann::json read_json(const fs::path& p) { return nlohmann::json::parse(slurp(p)); }

class CliTest : public ::testing::Test {
 protected:
  void SetUp() override {
    const auto* info = ::testing::UnitTest::GetInstance()->current_test_info();
    dir_ = fs::temp_directory_path() / (std::string("mohba_cli_") + info->name());
    fs::remove_all(dir_);
    fs::create_directories(dir_);
  }
  void TearDown() override { fs::remove_all(dir_); }

  fs::path write_config(const std::string& name, const nlohmann::json& j) {
    const fs::path p = dir_ / name;
    std::ofstream(p) << j.dump(2);
    return p;
  }

  static nlohmann::json tiny_config(long steps) {
    return {{"corpus",
             {{"domain", "hill"},
              {"n_runs", 3},
              {"trajectories_per_run", 4},
              {"seed", 4},
              {"hill", {{"episode_len", 10}}}}},
            {"model", {{"d_omega", 2}, {"d_alpha", 2}, {"rnn_hidden", 8}, {"mlp_hidden", 8}, {"policy_hidden", 8}}},
            {"train", {{"steps", steps}, {"batch_size", 4}, {"anneal_period", 20}, {"log_every", 5}, {"seed", 9}}},
            {"concepts", {{"m", 3}, {"head_steps", 200}, {"n_classes", 2}}}};
  }

  // gen-data + train with the tiny config; returns {dataset, checkpoint}.
  std::pair<std::string, std::string> tiny_pipeline() {
    const auto cfg = write_config("tiny.json", tiny_config(20)).string();
    const auto data = dir_ / "data";
    EXPECT_EQ(run_cli({"gen-data", "--config", cfg, "--out", data.string()}).code, 0);
    const auto model = dir_ / "model";
    const auto tr = run_cli({"train", "--config", cfg, "--data", (data / "dataset.jsonl").string(), "--out", model.string()});
    EXPECT_EQ(tr.code, 0) << tr.err;
    return {(data / "dataset.jsonl").string(), (model / "checkpoint.bin").string()};
  }

  fs::path dir_;
};

}  // namespace

TEST_F(CliTest, MissingOutIsUsageErrorInTheBinary) {
  const std::string cmd = std::string("\"") + MOHBA_CLI_PATH + "\" gen-data > /dev/null 2>&1";
  const int status = std::system(cmd.c_str());
  ASSERT_TRUE(WIFEXITED(status));
  EXPECT_EQ(WEXITSTATUS(status), 2);
}

TEST_F(CliTest, UsageErrors) {
  EXPECT_EQ(run_cli({"gen-data"}).code, 2);
  EXPECT_EQ(run_cli({}).code, 2);
  EXPECT_EQ(run_cli({"baseline", "--method", "gru", "--data", "x", "--out", dir_.string()}).code, 2);
  EXPECT_EQ(run_cli({"frobnicate"}).code, 2);
  const auto bad = write_config("bad.json", {{"corpus", {{"n_rns", 3}}}});
  const auto o = run_cli({"gen-data", "--config", bad.string(), "--out", dir_.string()});
  EXPECT_EQ(o.code, 2);
  EXPECT_NE(o.err.find("corpus.n_rns"), std::string::npos) << o.err;
}

TEST_F(CliTest, GenDataCountsAndIsByteIdentical) {
  const auto cfg = write_config("c.json", tiny_config(1)).string();
  ASSERT_EQ(run_cli({"gen-data", "--config", cfg, "--out", (dir_ / "a").string()}).code, 0);
  ASSERT_EQ(run_cli({"gen-data", "--config", cfg, "--out", (dir_ / "b").string(), "--workers", "2"}).code, 0);
  const std::string a = slurp(dir_ / "a" / "dataset.jsonl");
  EXPECT_EQ(a, slurp(dir_ / "b" / "dataset.jsonl"));
  EXPECT_EQ(slurp(dir_ / "a" / "stats.json"), slurp(dir_ / "b" / "stats.json"));
  EXPECT_EQ(load_dataset((dir_ / "a" / "dataset.jsonl").string()).size(), 12u);
  const auto stats = read_json(dir_ / "a" / "stats.json");
  EXPECT_EQ(stats["returns"]["n_trajectories"], 12);
  EXPECT_TRUE(stats["returns"].contains("fraction_below_half_max"));
  EXPECT_TRUE(fs::exists(dir_ / "a" / "gen-data.meta.json"));
}

TEST_F(CliTest, SeedEnvironmentOverride) {
  const auto cfg = write_config("c.json", tiny_config(1)).string();
  ASSERT_EQ(run_cli({"gen-data", "--config", cfg, "--out", (dir_ / "a").string()}).code, 0);
  ::setenv("MOHBA_SEED", "77", 1);
  const auto o = run_cli({"gen-data", "--config", cfg, "--out", (dir_ / "b").string()});
  ::unsetenv("MOHBA_SEED");
  ASSERT_EQ(o.code, 0);
  EXPECT_NE(slurp(dir_ / "a" / "dataset.jsonl"), slurp(dir_ / "b" / "dataset.jsonl"));
}

TEST_F(CliTest, TinyTrainIsFastAndResumeMatchesStraightRun) {
  const auto full = write_config("full.json", tiny_config(20)).string();
  const auto half = write_config("half.json", tiny_config(10)).string();
  ASSERT_EQ(run_cli({"gen-data", "--config", full, "--out", (dir_ / "data").string()}).code, 0);
  const std::string data = (dir_ / "data" / "dataset.jsonl").string();

  const auto t0 = std::chrono::steady_clock::now();
  const auto straight = run_cli({"train", "--config", full, "--data", data, "--out", (dir_ / "straight").string()});
  const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  ASSERT_EQ(straight.code, 0) << straight.err;
  EXPECT_LT(secs, 60.0);

  ASSERT_EQ(run_cli({"train", "--config", half, "--data", data, "--out", (dir_ / "first").string()}).code, 0);
  const auto resumed = run_cli({"train", "--config", full, "--data", data, "--out", (dir_ / "second").string(), "--resume",
                                (dir_ / "first" / "checkpoint.bin").string()});
  ASSERT_EQ(resumed.code, 0) << resumed.err;
  EXPECT_EQ(slurp(dir_ / "straight" / "checkpoint.bin"), slurp(dir_ / "second" / "checkpoint.bin"));
  EXPECT_EQ(slurp(dir_ / "straight" / "metrics.csv"), slurp(dir_ / "second" / "metrics.csv"));

  ASSERT_EQ(run_cli({"train", "--config", full, "--data", data, "--out", (dir_ / "again").string()}).code, 0);
  EXPECT_EQ(slurp(dir_ / "straight" / "checkpoint.bin"), slurp(dir_ / "again" / "checkpoint.bin"));
}

TEST_F(CliTest, BaselinesTrainAndReportApl) {
  const auto cfg = write_config("c.json", tiny_config(10)).string();
  ASSERT_EQ(run_cli({"gen-data", "--config", cfg, "--out", (dir_ / "data").string()}).code, 0);
  const std::string data = (dir_ / "data" / "dataset.jsonl").string();
  for (const std::string m : {"lstm", "vae"}) {
    const fs::path out = dir_ / m;
    const auto o = run_cli({"baseline", "--method", m, "--config", cfg, "--data", data, "--out", out.string()});
    ASSERT_EQ(o.code, 0) << o.err;
    const auto a = run_cli({"analyze", "--checkpoint", (out / "checkpoint.bin").string(), "--data", data, "--out",
                            out.string(), "apl"});
    ASSERT_EQ(a.code, 0) << a.err;
    const auto j = read_json(out / "apl.json");
    EXPECT_EQ(j["model"], m == "vae" ? "flat_vae" : "lstm");
    EXPECT_GT(j["apl"].get<double>(), 0.0);
  }
}

TEST_F(CliTest, AnalyzeSubactions) {
  const auto [data, ck] = tiny_pipeline();
  const std::string out = (dir_ / "an").string();
  auto analyze = [&](std::vector<std::string> extra) {
    std::vector<std::string> args{"analyze", "--checkpoint", ck, "--data", data, "--out", out};
    args.insert(args.end(), extra.begin(), extra.end());
    return run_cli(args);
  };

  ASSERT_EQ(analyze({"embed"}).code, 0);
  const std::string csv = slurp(dir_ / "an" / "embeddings.csv");
  EXPECT_EQ(std::count(csv.begin(), csv.end(), '\n'), 13);

  ASSERT_EQ(analyze({"cluster", "--k", "3"}).code, 0);
  const auto clusters = read_json(dir_ / "an" / "clusters.json");
  EXPECT_EQ(clusters["labels"].size(), 12u);
  for (const auto& l : clusters["labels"]) EXPECT_TRUE(l.get<int>() >= 0 && l.get<int>() < 3);

  ASSERT_EQ(analyze({"cluster", "--k", "2", "--space", "alpha:1"}).code, 0);
  EXPECT_EQ(read_json(dir_ / "an" / "clusters.json")["space"], "alpha:1");
  EXPECT_EQ(analyze({"cluster", "--space", "alpha:9"}).code, 2);

  ASSERT_EQ(analyze({"ictd", "--k", "2"}).code, 0);
  EXPECT_GE(read_json(dir_ / "an" / "ictd.json")["ictd"].get<double>(), 0.0);

  ASSERT_EQ(analyze({"apl"}).code, 0);
  EXPECT_EQ(read_json(dir_ / "an" / "apl.json")["model"], "mohba");

  const std::string run_id = load_dataset(data)[0].run_id;
  ASSERT_EQ(analyze({"track", "--run-id", run_id, "--k", "1"}).code, 0);
  const auto track = read_json(dir_ / "an" / "track.json");
  EXPECT_EQ(track["traj_ids"].size(), 4u);
  EXPECT_TRUE(track["changepoints"].empty());
  EXPECT_EQ(analyze({"track", "--run-id", "no-such-run"}).code, 1);

  ASSERT_EQ(analyze({"project"}).code, 0);
  const std::string proj = slurp(dir_ / "an" / "projection.csv");
  EXPECT_EQ(proj.substr(0, 8), "pc1,pc2\n");
  EXPECT_EQ(std::count(proj.begin(), proj.end(), '\n'), 13);
  const std::string png = slurp(dir_ / "an" / "projection.png");
  ASSERT_GT(png.size(), 8u);
  EXPECT_EQ(png.substr(1, 3), "PNG");

  EXPECT_EQ(run_cli({"analyze", "--checkpoint", (dir_ / "nope.bin").string(), "--data", data, "--out", out, "apl"}).code, 1);
}

TEST_F(CliTest, AnalyzeOutputsAreReproducible) {
  const auto [data, ck] = tiny_pipeline();
  for (const std::string d : {"x", "y"}) {
    ASSERT_EQ(run_cli({"analyze", "--checkpoint", ck, "--data", data, "--out", (dir_ / d).string(), "embed"}).code, 0);
    ASSERT_EQ(run_cli({"analyze", "--checkpoint", ck, "--data", data, "--out", (dir_ / d).string(), "cluster"}).code, 0);
  }
  EXPECT_EQ(slurp(dir_ / "x" / "embeddings.csv"), slurp(dir_ / "y" / "embeddings.csv"));
  EXPECT_EQ(slurp(dir_ / "x" / "clusters.json"), slurp(dir_ / "y" / "clusters.json"));
}

TEST_F(CliTest, ConceptsReportHonoursOverrides) {
  const auto [data, ck] = tiny_pipeline();
  const auto o = run_cli({"concepts", "--config", (dir_ / "tiny.json").string(), "--checkpoint", ck, "--data", data, "--out",
                          (dir_ / "co").string(), "--target", "return", "--kappa", "0.25", "--m", "2", "--method", "sampled"});
  ASSERT_EQ(o.code, 0) << o.err;
  const auto j = read_json(dir_ / "co" / "concepts.json");
  EXPECT_EQ(j["target"], "return");
  EXPECT_DOUBLE_EQ(j["kappa"].get<double>(), 0.25);
  EXPECT_EQ(j["m"], 2);
  EXPECT_EQ(j["classes"].size(), 2u);
  bool any_png = false;
  for (const auto& e : fs::directory_iterator(dir_ / "co")) any_png |= e.path().extension() == ".png";
  EXPECT_TRUE(any_png);
}

TEST_F(CliTest, ReturnTargetNeedsRewards) {
  const auto [data, ck] = tiny_pipeline();
  TrajectoryDataset ds = load_dataset(data);
  DatasetMeta meta = ds.meta();
  meta.has_rewards = false;
  TrajectoryDataset bare(meta);
  for (Trajectory t : ds) {
    t.rewards.reset();
    bare.append(t);
  }
  const std::string bare_path = (dir_ / "bare.jsonl").string();
  save_dataset(bare, bare_path);
  const auto o = run_cli({"concepts", "--checkpoint", ck, "--data", bare_path, "--out", (dir_ / "co").string(), "--target",
                          "return"});
  EXPECT_EQ(o.code, 1);
  EXPECT_NE(o.err.find("rewards"), std::string::npos) << o.err;
}
