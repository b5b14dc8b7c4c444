#include "mohba/behaviorgen.hpp"
#include "mohba/training.hpp"

#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <fstream>

using namespace mohba;

namespace {

std::string temp_path(const std::string& name) {
  return (std::filesystem::temp_directory_path() / ("mohba_training_" + name)).string();
}

TrajectoryDataset toy_corpus(int runs, int per_run, std::uint64_t seed) {
  CorpusConfig c;
  c.n_runs = runs;
  c.trajectories_per_run = per_run;
  c.noise_start = 0.3;
  c.noise_end = 0.05;
  c.seed = seed;
  c.hill.episode_len = 12;
  return generate_corpus(c);
}

ModelConfig small_model() {
  ModelConfig m;
  m.d_omega = 2;
  m.d_alpha = 2;
  m.gmm_components = 2;
  m.rnn_hidden = 8;
  m.mlp_hidden = 8;
  m.policy_hidden = 8;
  return m;
}

TrainConfig small_train(long steps) {
  TrainConfig t;
  t.steps = steps;
  t.batch_size = 4;
  t.anneal_period = 40;
  t.log_every = 10;
  t.seed = 5;
  return t;
}

bool same_store(const ad::ParameterStore<double>& a, const ad::ParameterStore<double>& b) {
  if (a.size() != b.size()) return false;
  for (int k = 0; k < a.size(); ++k)
    if (a[k].name != b[k].name || a[k].value != b[k].value) return false;
  return true;
}

}  // namespace

TEST(BetaSchedule, RampThenPlateauAndPeriodic) {
  TrainConfig c;
  c.beta_max = 0.01;
  c.anneal_period = 10000;
  EXPECT_EQ(beta_schedule(0, c), 0.0);
  EXPECT_EQ(beta_schedule(5000, c), 0.01);
  EXPECT_NEAR(beta_schedule(2500, c), 0.005, 1e-15);
  EXPECT_EQ(beta_schedule(9999, c), 0.01);
  EXPECT_EQ(beta_schedule(10000, c), 0.0);
  for (long s = 0; s < 30000; s += 137) {
    const double b = beta_schedule(s, c);
    EXPECT_GE(b, 0.0);
    EXPECT_LE(b, c.beta_max);
    EXPECT_EQ(b, beta_schedule(s + c.anneal_period, c));
  }
  EXPECT_THROW(beta_schedule(-1, c), std::invalid_argument);
}

TEST(ClipGlobalNorm, HandCases) {
  std::vector<Eigen::MatrixXd> g{Eigen::MatrixXd::Constant(1, 1, 3.0), Eigen::MatrixXd::Constant(1, 1, 4.0)};
  EXPECT_EQ(clip_global_norm(g, 10.0), 5.0);
  EXPECT_EQ(g[0](0, 0), 3.0);
  std::vector<Eigen::MatrixXd> h{Eigen::MatrixXd::Constant(1, 1, 12.0), Eigen::MatrixXd::Constant(1, 1, 16.0)};
  EXPECT_EQ(clip_global_norm(h, 10.0), 20.0);
  EXPECT_NEAR(std::hypot(h[0](0, 0), h[1](0, 0)), 10.0, 1e-12);
  std::vector<Eigen::MatrixXd> z{Eigen::MatrixXd::Zero(2, 2)};
  clip_global_norm(z, 1.0);
  EXPECT_TRUE(z[0].isZero());
  EXPECT_THROW(clip_global_norm(z, 0.0), std::invalid_argument);
}

TEST(ClipGlobalNorm, PostClipNormNeverExceedsThreshold) {
  Rng rng(3);
  for (int rep = 0; rep < 100; ++rep) {
    ad::ParameterStore<double> s;
    const int a = s.add("a", 3, 2), b = s.add("b", 4, 1);
    const double scale = std::exp(4.0 * rng.normal());
    for (int k : {a, b})
      for (Eigen::Index i = 0; i < s[k].grad.size(); ++i) s[k].grad.data()[i] = scale * rng.normal();
    const double clip = 0.1 + 10.0 * rng.uniform();
    clip_global_norm(s, clip);
    EXPECT_LE(global_grad_norm(s), clip + 1e-9);
  }
}

TEST(Adam, FirstStepMovesEachParameterByLearningRate) {
  ad::ParameterStore<double> s;
  const int k = s.add("p", 1, 3);
  s[k].grad << 2.0, -0.5, 1e3;
  Adam<double> adam;
  TrainConfig c;
  c.learning_rate = 0.01;
  adam.update(s, c);
  // With bias correction the first update is lr * g / (|g| + eps').
  EXPECT_NEAR(s[k].value(0, 0), -0.01, 1e-9);
  EXPECT_NEAR(s[k].value(0, 1), 0.01, 1e-9);
  EXPECT_NEAR(s[k].value(0, 2), -0.01, 1e-9);
}

TEST(Adam, MinimizesQuadratic) {
  ad::ParameterStore<double> s;
  const int k = s.add("x", 2, 1);
  s[k].value << 3.0, -2.0;
  Adam<double> adam;
  TrainConfig c;
  c.learning_rate = 0.05;
  for (int it = 0; it < 2000; ++it) {
    s[k].grad = 2.0 * s[k].value;
    adam.update(s, c);
  }
  EXPECT_LT(s[k].value.norm(), 1e-2);
}

TEST(Train, ZeroStepsLeavesParametersUnchanged) {
  const auto ds = toy_corpus(2, 3, 1);
  ModelConfig mc = small_model();
  mc.adopt(ds.meta());
  const auto init = MohbaModel<double>::create(mc, init_seed(small_train(0)));
  auto [model, state] = train_new<double>(small_model(), ds, small_train(0));
  EXPECT_TRUE(same_store(model.store, init.store));
  EXPECT_TRUE(state.log.rows.empty());
}

TEST(Train, ReconImprovesOnSingleModeToyCorpus) {
  const auto ds = toy_corpus(1, 10, 2);
  TrainConfig tc = small_train(300);
  tc.log_every = 1;
  tc.learning_rate = 3e-3;
  auto [model, state] = train_new<double>(small_model(), ds, tc);
  const auto& rows = state.log.rows;
  ASSERT_EQ(rows.size(), 300u);
  double first = 0, last = 0;
  for (int k = 0; k < 30; ++k) {
    first += *rows[static_cast<std::size_t>(k)].recon;
    last += *rows[rows.size() - 1 - static_cast<std::size_t>(k)].recon;
  }
  EXPECT_GT(last / 30, first / 30);
}

TEST(Train, SameSeedSameMetricsLog) {
  const auto ds = toy_corpus(2, 4, 3);
  auto a = train_new<double>(small_model(), ds, small_train(40));
  auto b = train_new<double>(small_model(), ds, small_train(40));
  EXPECT_EQ(a.second.log, b.second.log);
  EXPECT_EQ(a.second.log.rows.front().step, 0);
  EXPECT_TRUE(same_store(a.first.store, b.first.store));
}

TEST(Train, MetaMismatchRejected) {
  const auto ds = toy_corpus(1, 2, 4);
  ModelConfig mc = small_model();
  mc.adopt(ds.meta());
  mc.state_dim += 1;
  auto model = MohbaModel<double>::create(mc, 1);
  auto state = fresh_trainer(small_train(1), model.store);
  EXPECT_THROW(train(model, state, ds, small_train(1)), DataError);
}

TEST(Train, NonFiniteLossRaisesNumericalError) {
  const auto ds = toy_corpus(1, 2, 5);
  ad::ParameterStore<double> store;
  store.add("p", 1, 1);
  auto state = fresh_trainer(small_train(3), store);
  const LossFn<double> bad = [](std::span<const Trajectory* const>, double, Rng&) {
    return LossParts{NAN, 1.0, 0.0, 0.0};
  };
  try {
    train_loop(store, state, ds, small_train(3), bad);
    FAIL() << "expected NumericalError";
  } catch (const NumericalError& e) {
    EXPECT_NE(std::string(e.what()).find("step 0"), std::string::npos) << e.what();
  }
}

TEST(Checkpoint, RoundTripIsElementwiseIdentical) {
  const auto ds = toy_corpus(2, 3, 6);
  auto [model, state] = train_new<double>(small_model(), ds, small_train(20));
  const auto path = temp_path("roundtrip.bin");
  save_checkpoint(path, model, state, small_train(20));
  const auto loaded = load_mohba_checkpoint<double>(path);
  EXPECT_TRUE(same_store(loaded.model.store, model.store));
  EXPECT_EQ(loaded.model.config, model.config);
  EXPECT_EQ(loaded.state.step, state.step);
  EXPECT_TRUE(loaded.state.rng == state.rng);
  ASSERT_EQ(loaded.state.adam.m.size(), state.adam.m.size());
  for (std::size_t k = 0; k < state.adam.m.size(); ++k) {
    EXPECT_EQ(loaded.state.adam.m[k], state.adam.m[k]);
    EXPECT_EQ(loaded.state.adam.v[k], state.adam.v[k]);
  }
  EXPECT_EQ(loaded.state.log, state.log);
  EXPECT_EQ(loaded.config, small_train(20));
}

TEST(Checkpoint, ResumeMatchesStraightRun) {
  const auto ds = toy_corpus(2, 4, 7);
  auto straight = train_new<double>(small_model(), ds, small_train(60));

  auto half = train_new<double>(small_model(), ds, small_train(30));
  const auto path = temp_path("resume.bin");
  save_checkpoint(path, half.first, half.second, small_train(30));
  auto loaded = load_mohba_checkpoint<double>(path);
  train(loaded.model, loaded.state, ds, small_train(60));

  EXPECT_TRUE(same_store(loaded.model.store, straight.first.store));
  EXPECT_EQ(loaded.state.log, straight.second.log);
}

TEST(Checkpoint, MismatchedConfigAndCorruptFilesRejected) {
  const auto ds = toy_corpus(1, 2, 8);
  auto [model, state] = train_new<double>(small_model(), ds, small_train(2));
  const auto path = temp_path("mismatch.bin");
  save_checkpoint(path, model, state, small_train(2));
  ModelConfig other = model.config;
  other.d_alpha = 3;
  EXPECT_THROW(load_mohba_checkpoint<double>(path, &other), CheckpointError);
  EXPECT_THROW(load_mohba_checkpoint<double>(temp_path("does-not-exist.bin")), CheckpointError);

  std::string bytes;
  {
    std::ifstream f(path, std::ios::binary);
    bytes.assign(std::istreambuf_iterator<char>(f), {});
  }
  const auto truncated = temp_path("truncated.bin");
  {
    std::ofstream f(truncated, std::ios::binary);
    f << bytes.substr(0, bytes.size() / 2);
  }
  EXPECT_THROW(load_mohba_checkpoint<double>(truncated), CheckpointError);
  EXPECT_THROW(deserialize_checkpoint("garbage"), CheckpointError);
}

TEST(Checkpoint, FloatModelStoresAsFloat64AndReloads) {
  const auto ds = toy_corpus(1, 3, 9);
  TrainConfig tc = small_train(5);
  tc.float32 = true;
  auto [model, state] = train_new<float>(small_model(), ds, tc);
  const auto path = temp_path("float.bin");
  save_checkpoint(path, model, state, tc);
  const auto loaded = load_mohba_checkpoint<float>(path);
  for (int k = 0; k < model.store.size(); ++k) EXPECT_EQ(loaded.model.store[k].value, model.store[k].value);
}

TEST(MetricsLog, CsvHeaderAndRows) {
  MetricsLog log;
  log.rows.push_back({0, 1.5, -1.0, 0.25, std::nullopt, 0.0});
  log.rows.push_back({100, 0.5, -0.5, 0.125, 0.0625, 0.01});
  const std::string csv = log.to_csv();
  EXPECT_EQ(csv.substr(0, csv.find('\n')), "step,loss,recon,kl_local,kl_joint,beta");
  EXPECT_NE(csv.find("\n0,1.5,-1,0.25,,0\n"), std::string::npos) << csv;
  EXPECT_NE(csv.find("\n100,0.5,-0.5,0.125,0.0625,0.01"), std::string::npos) << csv;
  EXPECT_EQ(metrics_row_from_json(to_json(log.rows[0])), log.rows[0]);
}

TEST(TrainConfigIo, RejectsBadValues) {
  EXPECT_EQ(train_config_from_json(to_json(small_train(7))), small_train(7));
  EXPECT_THROW(train_config_from_json({{"learning_rate", -1.0}}), ConfigError);
  EXPECT_THROW(train_config_from_json({{"stepz", 3}}), ConfigError);
}
