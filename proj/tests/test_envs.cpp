#include "mohba/envs.hpp"
#include "mohba/rng.hpp"

#include <gtest/gtest.h>

#include <cmath>
#include <numbers>

using namespace mohba;

TEST(HillWorld, CentersOnCircleStartingAtNinetyDegrees) {
  HillWorldConfig c;
  const Positions h = c.hill_centers();
  ASSERT_EQ(h.rows(), 3);
  EXPECT_NEAR(h(0, 0), 0.0, 1e-15);
  EXPECT_NEAR(h(0, 1), 1.0, 1e-15);
  for (int k = 0; k < 3; ++k) EXPECT_NEAR(h.row(k).norm(), 1.0, 1e-15);
  EXPECT_NEAR((h.row(0) - h.row(1)).norm(), std::sqrt(3.0), 1e-12);
}

TEST(HillWorld, RewardOnCenterIsScale) {
  HillWorldConfig c;
  c.reward_scale = 2.5;
  Positions p(3, 2);
  p = c.hill_centers();
  const Eigen::VectorXd r = hill_reward(p, c);
  for (int i = 0; i < 3; ++i) EXPECT_DOUBLE_EQ(r(i), 2.5);
}

TEST(HillWorld, RewardAtOriginMatchesFormula) {
  HillWorldConfig c;
  const Eigen::VectorXd r = hill_reward(Positions::Zero(3, 2), c);
  const double expected = std::exp(-1.0 / (2 * 0.09));
  for (int i = 0; i < 3; ++i) EXPECT_NEAR(r(i), expected, 1e-15);
  EXPECT_NEAR(expected, 3.87e-3, 1e-5);
}

TEST(HillWorld, PermutingAgentsAcrossHillsPermutesRewards) {
  HillWorldConfig c;
  const Positions h = c.hill_centers();
  Positions p(3, 2);
  for (int i = 0; i < 3; ++i) p.row(i) = h.row(i) + Eigen::RowVector2d(0.05 * (i + 1), -0.02 * i);
  // Rotating every agent by 120 degrees maps each hill onto the next.
  const double a = 2.0 * std::numbers::pi / 3.0;
  Eigen::Matrix2d rot;
  rot << std::cos(a), -std::sin(a), std::sin(a), std::cos(a);
  const Positions rotated = (rot * p.transpose()).transpose();
  const Eigen::VectorXd r = hill_reward(p, c), rr = hill_reward(rotated, c);
  for (int i = 0; i < 3; ++i) EXPECT_NEAR(r(i), rr(i), 1e-12);
}

TEST(CoordGame, RegionsUseClosedDiscs) {
  CoordGameConfig c;
  EXPECT_EQ(coord_region(c.center_a, c), Region::A);
  EXPECT_EQ(coord_region(c.center_b, c), Region::B);
  EXPECT_EQ(coord_region(Eigen::Vector2d(1.4, 1.4), c), Region::C);
  EXPECT_EQ(coord_region(c.center_a + Eigen::Vector2d(0.0, c.radius_a), c), Region::A);
  EXPECT_EQ(coord_region(Eigen::Vector2d::Zero(), c), Region::C);
}

TEST(CoordGame, PayoffTableHasAllNineEntries) {
  CoordGameConfig c;
  const std::pair<double, double> expected[3][3] = {
      {{1, 1}, {1, 1}, {0, 0}},
      {{1, 1}, {0, 0}, {0, 0}},
      {{0, 0}, {0, 0}, {0, 0}},
  };
  for (int a = 0; a < 3; ++a)
    for (int b = 0; b < 3; ++b)
      EXPECT_EQ(coord_reward(static_cast<Region>(a), static_cast<Region>(b), c), expected[a][b]) << a << "," << b;
}

TEST(CoordGame, ValidationRejectsOverlapAndOutOfArena) {
  CoordGameConfig c;
  c.center_b = Eigen::Vector2d(-0.3, 0.0);
  EXPECT_THROW(c.validate(), std::invalid_argument);
  c = CoordGameConfig{};
  c.center_a = Eigen::Vector2d(-1.4, 0.0);
  EXPECT_THROW(c.validate(), std::invalid_argument);
  EXPECT_NO_THROW(CoordGameConfig{}.validate());
}

TEST(EnvStep, ZeroActionKeepsPositions) {
  HillWorldConfig c;
  Positions p(3, 2);
  p << 0.1, 0.2, -0.3, 0.4, 1.0, -1.0;
  EXPECT_EQ(env_step(p, Positions::Zero(3, 2), c), p);
}

TEST(EnvStep, ActionSaturatesAtMaxStep) {
  HillWorldConfig c;
  Positions p = Positions::Zero(3, 2);
  Positions a(3, 2);
  a << 5, -5, 0.05, 0.2, -0.2, 0;
  Positions expected(3, 2);
  expected << 0.1, -0.1, 0.05, 0.1, -0.1, 0;
  EXPECT_TRUE(env_step(p, a, c).isApprox(expected));
}

TEST(EnvStep, StaysInsideArena) {
  HillWorldConfig c;
  Positions p = Positions::Constant(3, 2, c.arena_halfwidth);
  const Positions next = env_step(p, Positions::Constant(3, 2, 0.1), c);
  EXPECT_EQ(next, p);
  Rng rng(1);
  Positions q = Positions::Zero(3, 2);
  for (int t = 0; t < 500; ++t) {
    Positions a(3, 2);
    for (int k = 0; k < 6; ++k) a.data()[k] = rng.normal() * 0.5;
    q = env_step(q, a, c);
    ASSERT_LE(q.cwiseAbs().maxCoeff(), c.arena_halfwidth);
  }
  EXPECT_THROW(env_step(Positions::Zero(2, 2), Positions::Zero(2, 2), c), std::invalid_argument);
}

TEST(Dispersion, HandComputedCases) {
  EXPECT_NEAR(agent_dispersion(Positions::Constant(3, 2, 0.7)), 0.0, 1e-12);
  Positions two(2, 2);
  two << 1, 0, -1, 0;
  EXPECT_DOUBLE_EQ(agent_dispersion(two), 2.0);
  Positions three(3, 2);
  three << 1, 0, 0, 1, -1, -1;
  EXPECT_NEAR(agent_dispersion(three), 2.0 + std::sqrt(2.0), 1e-12);
}

TEST(Dispersion, TranslationInvariantAndNonnegative) {
  Rng rng(2);
  for (int rep = 0; rep < 20; ++rep) {
    Positions p(4, 2);
    for (int k = 0; k < 8; ++k) p.data()[k] = rng.normal();
    const Eigen::RowVector2d shift(rng.normal() * 10, rng.normal() * 10);
    const double d = agent_dispersion(p);
    EXPECT_GE(d, 0.0);
    EXPECT_NEAR(agent_dispersion(p.rowwise() + shift), d, 1e-10);
  }
}

TEST(Returns, SumsPerAgentAndTotal) {
  Trajectory t;
  t.states = Eigen::MatrixXd::Zero(51, 6);
  t.rewards = Eigen::MatrixXd::Ones(50, 3);
  const auto r = trajectory_return(t);
  for (int i = 0; i < 3; ++i) EXPECT_EQ(r.per_agent(i), 50.0);
  EXPECT_EQ(r.total, 150.0);
  t.rewards = Eigen::MatrixXd::Zero(50, 3);
  EXPECT_EQ(trajectory_return(t).total, 0.0);
  t.rewards.reset();
  EXPECT_THROW(trajectory_return(t), DataError);
}

TEST(Returns, BothAgentsInAForFiftyStepsTotalHundred) {
  CoordGameConfig c;
  Eigen::MatrixXd states(51, 4);
  for (int t = 0; t <= 50; ++t) states.row(t) << c.center_a.x(), c.center_a.y(), c.center_a.x(), c.center_a.y();
  Trajectory tr;
  tr.states = states;
  tr.rewards = coord_rewards_from_states(states, c);
  EXPECT_EQ(trajectory_return(tr).total, 100.0);
}

TEST(States, PositionsRoundTrip) {
  Positions p(3, 2);
  p << 1, 2, 3, 4, 5, 6;
  const Eigen::RowVectorXd s = positions_state(p);
  EXPECT_EQ(s(2), 3);
  EXPECT_EQ(state_positions(s), p);
  EXPECT_THROW(state_positions(Eigen::RowVectorXd::Zero(3)), std::invalid_argument);
}
