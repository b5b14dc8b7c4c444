#pragma once

// The two toy domains: multi-agent hill climbing and the two-agent
// coordination game. Both use 2-D point agents whose state is the stacked
// positions [x_0, y_0, x_1, y_1, ...] and whose actions are per-axis
// displacements.

#include "mohba/trajdata.hpp"

#include <Eigen/Dense>

#include <algorithm>
#include <array>
#include <cmath>
#include <numbers>
#include <stdexcept>
#include <string>
#include <utility>

namespace mohba {

using Positions = Eigen::Matrix<double, Eigen::Dynamic, 2>;  // N x 2

struct HillWorldConfig {
  int n_agents = 3;
  int n_hills = 3;
  double hill_radius = 1.0;
  double hill_width = 0.3;
  double reward_scale = 1.0;
  double arena_halfwidth = 1.5;
  double max_step = 0.1;
  int episode_len = 50;

  /// Hill centers on a circle of radius hill_radius, the first at 90 degrees.
  Positions hill_centers() const {
    Positions c(n_hills, 2);
    for (int h = 0; h < n_hills; ++h) {
      const double angle = std::numbers::pi / 2.0 + 2.0 * std::numbers::pi * h / n_hills;
      c(h, 0) = hill_radius * std::cos(angle);
      c(h, 1) = hill_radius * std::sin(angle);
    }
    return c;
  }

  void validate() const {
    if (n_agents < 1 || n_hills < 1) throw std::invalid_argument("hill world: n_agents and n_hills must be >= 1");
    if (!(hill_width > 0) || !(arena_halfwidth > 0) || !(max_step > 0) || episode_len < 1)
      throw std::invalid_argument("hill world: widths, bounds and episode length must be positive");
  }
};

enum class Region { A = 0, B = 1, C = 2 };

inline char region_name(Region r) { return "ABC"[static_cast<int>(r)]; }

using Payoff = std::array<std::array<std::pair<double, double>, 3>, 3>;

/// Coordination payoffs indexed [region of agent 0][region of agent 1].
inline Payoff default_coordination_payoff() {
  Payoff p{};
  for (auto& row : p) row.fill({0.0, 0.0});
  p[0][0] = {1.0, 1.0};  // (A, A)
  p[0][1] = {1.0, 1.0};  // (A, B)
  p[1][0] = {1.0, 1.0};  // (B, A)
  return p;
}

struct CoordGameConfig {
  Eigen::Vector2d center_a{-0.6, 0.0};
  Eigen::Vector2d center_b{0.6, 0.0};
  double radius_a = 0.3;
  double radius_b = 0.3;
  Payoff payoff = default_coordination_payoff();
  double arena_halfwidth = 1.5;
  double max_step = 0.1;
  int episode_len = 50;
  static constexpr int n_agents = 2;

  void validate() const {
    if (!(radius_a > 0) || !(radius_b > 0)) throw std::invalid_argument("coord game: radii must be positive");
    if ((center_a - center_b).norm() <= radius_a + radius_b)
      throw std::invalid_argument("coord game: circles A and B must be disjoint");
    auto inside = [&](const Eigen::Vector2d& c, double r) {
      return (c.array().abs() + r <= arena_halfwidth).all();
    };
    if (!inside(center_a, radius_a) || !inside(center_b, radius_b))
      throw std::invalid_argument("coord game: circles must lie inside the arena");
    if (!(max_step > 0) || episode_len < 1) throw std::invalid_argument("coord game: bad step bound or episode length");
  }
};

/// r_i = scale * max_h exp(-|p_i - c_h|^2 / (2 w^2)).
inline Eigen::VectorXd hill_reward(const Positions& positions, const HillWorldConfig& config) {
  const Positions centers = config.hill_centers();
  const double denom = 2.0 * config.hill_width * config.hill_width;
  Eigen::VectorXd r(positions.rows());
  for (Eigen::Index i = 0; i < positions.rows(); ++i) {
    double best = 0.0;
    for (Eigen::Index h = 0; h < centers.rows(); ++h)
      best = std::max(best, std::exp(-(positions.row(i) - centers.row(h)).squaredNorm() / denom));
    r(i) = config.reward_scale * best;
  }
  return r;
}

/// Closed discs; A wins if the discs were configured to overlap.
inline Region coord_region(const Eigen::Vector2d& position, const CoordGameConfig& config) {
  if ((position - config.center_a).norm() <= config.radius_a) return Region::A;
  if ((position - config.center_b).norm() <= config.radius_b) return Region::B;
  return Region::C;
}

inline std::pair<double, double> coord_reward(Region agent0, Region agent1, const CoordGameConfig& config) {
  return config.payoff[static_cast<std::size_t>(agent0)][static_cast<std::size_t>(agent1)];
}

/// p' = clamp(p + clamp(a, +-max_step), +-arena_halfwidth), element-wise.
inline Positions env_step(const Positions& positions, const Positions& joint_action, double max_step,
                          double arena_halfwidth) {
  if (positions.rows() != joint_action.rows()) throw std::invalid_argument("env_step: shape mismatch");
  Positions next = positions + joint_action.cwiseMax(-max_step).cwiseMin(max_step);
  return next.cwiseMax(-arena_halfwidth).cwiseMin(arena_halfwidth);
}

template <typename Config>
Positions env_step(const Positions& positions, const Positions& joint_action, const Config& config) {
  if (positions.rows() != config.n_agents) throw std::invalid_argument("env_step: agent count mismatch");
  return env_step(positions, joint_action, config.max_step, config.arena_halfwidth);
}

/// Sum of agents' distances from their centroid.
inline double agent_dispersion(const Positions& final_positions) {
  if (final_positions.rows() < 1) throw std::invalid_argument("agent_dispersion: no agents");
  const Eigen::RowVector2d centroid = final_positions.colwise().mean();
  return (final_positions.rowwise() - centroid).rowwise().norm().sum();
}

/// Reshapes a stacked-position state row into N x 2.
inline Positions state_positions(const Eigen::Ref<const Eigen::RowVectorXd>& state) {
  if (state.size() % 2 != 0) throw std::invalid_argument("state is not a stack of 2-D positions");
  Positions p(state.size() / 2, 2);
  for (Eigen::Index i = 0; i < p.rows(); ++i) p.row(i) = state.segment(2 * i, 2);
  return p;
}

inline Eigen::RowVectorXd positions_state(const Positions& p) {
  Eigen::RowVectorXd s(2 * p.rows());
  for (Eigen::Index i = 0; i < p.rows(); ++i) s.segment(2 * i, 2) = p.row(i);
  return s;
}

inline Positions final_positions(const Trajectory& traj) { return state_positions(traj.states.row(traj.states.rows() - 1)); }

struct TrajectoryReturn {
  Eigen::VectorXd per_agent;
  double total = 0.0;
};

inline TrajectoryReturn trajectory_return(const Trajectory& traj) {
  if (!traj.rewards) throw DataError("trajectory_return: trajectory has no rewards");
  TrajectoryReturn r;
  r.per_agent = traj.rewards->colwise().sum().transpose();
  r.total = r.per_agent.sum();
  return r;
}

/// Per-step rewards from a state sequence; the reward for step t is
/// evaluated at the post-step state s_{t+1}.
inline Eigen::MatrixXd hill_rewards_from_states(const Eigen::MatrixXd& states, const HillWorldConfig& config) {
  Eigen::MatrixXd r(states.rows() - 1, config.n_agents);
  for (Eigen::Index t = 0; t + 1 < states.rows(); ++t)
    r.row(t) = hill_reward(state_positions(states.row(t + 1)), config).transpose();
  return r;
}

inline Eigen::MatrixXd coord_rewards_from_states(const Eigen::MatrixXd& states, const CoordGameConfig& config) {
  Eigen::MatrixXd r(states.rows() - 1, 2);
  for (Eigen::Index t = 0; t + 1 < states.rows(); ++t) {
    const Positions p = state_positions(states.row(t + 1));
    const auto [r0, r1] = coord_reward(coord_region(p.row(0).transpose(), config),
                                       coord_region(p.row(1).transpose(), config), config);
    r(t, 0) = r0;
    r(t, 1) = r1;
  }
  return r;
}

}  // namespace mohba
