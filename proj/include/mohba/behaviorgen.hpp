#pragma once

// Scripted behavior corpora. Each "run" fixes a per-agent goal (a hill, or a
// circle of the coordination game) and emits trajectories whose exploration
// noise anneals linearly from noise_start to noise_end, mimicking snapshots
// of a policy taken at fixed intervals while it trains.

#include "mohba/config.hpp"
#include "mohba/envs.hpp"
#include "mohba/rng.hpp"
#include "mohba/trajdata.hpp"

#include <Eigen/Dense>

#include <algorithm>
#include <cstdint>
#include <optional>
#include <sstream>
#include <stdexcept>
#include <string>
#include <thread>
#include <vector>

namespace mohba {

enum class Domain { hill, coord };
enum class ModeAssignment { uniform_random, enumerated };

inline std::string to_string(Domain d) { return d == Domain::hill ? "hill" : "coord"; }

inline Domain parse_domain(const std::string& s) {
  if (s == "hill") return Domain::hill;
  if (s == "coord") return Domain::coord;
  throw std::invalid_argument("unknown domain '" + s + "' (expected hill or coord)");
}

inline ModeAssignment parse_mode_assignment(const std::string& s) {
  if (s == "uniform-random") return ModeAssignment::uniform_random;
  if (s == "enumerated") return ModeAssignment::enumerated;
  throw std::invalid_argument("unknown mode_assignment '" + s + "' (expected uniform-random or enumerated)");
}

struct BehaviorPolicy {
  Eigen::Vector2d target = Eigen::Vector2d::Zero();
  double noise_scale = 0.0;
  double gain = 0.5;
  std::uint64_t rng_seed = 0;
};

struct CorpusConfig {
  Domain domain = Domain::hill;
  int n_runs = 50;
  int trajectories_per_run = 40;
  double noise_start = 1.0;
  double noise_end = 0.0;
  ModeAssignment mode_assignment = ModeAssignment::uniform_random;
  std::uint64_t seed = 0;
  double gain = 0.5;
  int checkpoint_interval = 200;
  bool include_miscoordination = false;  // coord only: also draw (B, B) runs
  HillWorldConfig hill;
  CoordGameConfig coord;

  int n_agents() const { return domain == Domain::hill ? hill.n_agents : CoordGameConfig::n_agents; }
  int episode_len() const { return domain == Domain::hill ? hill.episode_len : coord.episode_len; }

  void validate() const {
    if (n_runs < 1) throw std::invalid_argument("corpus: n_runs must be >= 1");
    if (trajectories_per_run < 1) throw std::invalid_argument("corpus: trajectories_per_run must be >= 1");
    if (!(noise_start >= noise_end && noise_end >= 0.0))
      throw std::invalid_argument("corpus: need noise_start >= noise_end >= 0");
    if (domain == Domain::hill)
      hill.validate();
    else
      coord.validate();
  }
};

inline void read_corpus_config(ConfigReader r, CorpusConfig& c) {
  std::string domain = to_string(c.domain);
  std::string assignment = c.mode_assignment == ModeAssignment::enumerated ? "enumerated" : "uniform-random";
  r.get("domain", domain);
  r.get("n_runs", c.n_runs);
  r.get("trajectories_per_run", c.trajectories_per_run);
  r.get("noise_start", c.noise_start);
  r.get("noise_end", c.noise_end);
  r.get("mode_assignment", assignment);
  r.get("seed", c.seed);
  r.get("gain", c.gain);
  r.get("checkpoint_interval", c.checkpoint_interval);
  r.get("include_miscoordination", c.include_miscoordination);
  {
    ConfigReader h = r.child("hill");
    h.get("n_agents", c.hill.n_agents);
    h.get("n_hills", c.hill.n_hills);
    h.get("hill_radius", c.hill.hill_radius);
    h.get("hill_width", c.hill.hill_width);
    h.get("reward_scale", c.hill.reward_scale);
    h.get("arena_halfwidth", c.hill.arena_halfwidth);
    h.get("max_step", c.hill.max_step);
    h.get("episode_len", c.hill.episode_len);
    h.finish();
  }
  {
    ConfigReader g = r.child("coord");
    std::vector<double> a{c.coord.center_a.x(), c.coord.center_a.y()};
    std::vector<double> b{c.coord.center_b.x(), c.coord.center_b.y()};
    g.get("center_a", a);
    g.get("center_b", b);
    g.require(a.size() == 2, "center_a", "expected [x, y]");
    g.require(b.size() == 2, "center_b", "expected [x, y]");
    c.coord.center_a = {a[0], a[1]};
    c.coord.center_b = {b[0], b[1]};
    g.get("radius_a", c.coord.radius_a);
    g.get("radius_b", c.coord.radius_b);
    g.get("arena_halfwidth", c.coord.arena_halfwidth);
    g.get("max_step", c.coord.max_step);
    g.get("episode_len", c.coord.episode_len);
    g.finish();
  }
  r.finish();
  try {
    c.domain = parse_domain(domain);
  } catch (const std::exception& e) {
    throw ConfigError(r.key_path("domain") + ": " + e.what());
  }
  try {
    c.mode_assignment = parse_mode_assignment(assignment);
  } catch (const std::exception& e) {
    throw ConfigError(r.key_path("mode_assignment") + ": " + e.what());
  }
  r.require(c.checkpoint_interval >= 1, "checkpoint_interval", "must be >= 1");
  try {
    c.validate();
  } catch (const std::invalid_argument& e) {
    throw ConfigError((r.path().empty() ? std::string("corpus") : r.path()) + ": " + e.what());
  }
}

inline nlohmann::json to_json(const CorpusConfig& c) {
  return {{"domain", to_string(c.domain)},
          {"n_runs", c.n_runs},
          {"trajectories_per_run", c.trajectories_per_run},
          {"noise_start", c.noise_start},
          {"noise_end", c.noise_end},
          {"mode_assignment", c.mode_assignment == ModeAssignment::enumerated ? "enumerated" : "uniform-random"},
          {"seed", c.seed},
          {"gain", c.gain},
          {"checkpoint_interval", c.checkpoint_interval},
          {"include_miscoordination", c.include_miscoordination},
          {"hill",
           {{"n_agents", c.hill.n_agents},
            {"n_hills", c.hill.n_hills},
            {"hill_radius", c.hill.hill_radius},
            {"hill_width", c.hill.hill_width},
            {"reward_scale", c.hill.reward_scale},
            {"arena_halfwidth", c.hill.arena_halfwidth},
            {"max_step", c.hill.max_step},
            {"episode_len", c.hill.episode_len}}},
          {"coord",
           {{"center_a", {c.coord.center_a.x(), c.coord.center_a.y()}},
            {"center_b", {c.coord.center_b.x(), c.coord.center_b.y()}},
            {"radius_a", c.coord.radius_a},
            {"radius_b", c.coord.radius_b},
            {"arena_halfwidth", c.coord.arena_halfwidth},
            {"max_step", c.coord.max_step},
            {"episode_len", c.coord.episode_len}}}};
}

/// Joint modes of the coordination game, as per-agent region indices.
inline std::vector<std::vector<int>> coordination_modes(bool include_miscoordination) {
  std::vector<std::vector<int>> modes{{0, 0}, {0, 1}, {1, 0}};
  if (include_miscoordination) modes.push_back({1, 1});
  return modes;
}

/// Per-run, per-agent goal labels: hill indices for the hill domain, region
/// indices (0 = A, 1 = B) for the coordination game.
inline std::vector<std::vector<int>> assign_run_modes(const CorpusConfig& config, Rng& rng) {
  std::vector<std::vector<int>> modes(static_cast<std::size_t>(config.n_runs));
  if (config.domain == Domain::hill) {
    const int n = config.hill.n_agents;
    const int h = config.hill.n_hills;
    for (int r = 0; r < config.n_runs; ++r) {
      auto& m = modes[static_cast<std::size_t>(r)];
      m.resize(static_cast<std::size_t>(n));
      if (config.mode_assignment == ModeAssignment::enumerated) {
        int code = r;
        for (int i = n - 1; i >= 0; --i) {
          m[static_cast<std::size_t>(i)] = code % h;
          code /= h;
        }
      } else {
        for (int i = 0; i < n; ++i) m[static_cast<std::size_t>(i)] = static_cast<int>(rng.uniform_index(static_cast<std::size_t>(h)));
      }
    }
  } else {
    const auto joint = coordination_modes(config.include_miscoordination);
    for (int r = 0; r < config.n_runs; ++r) {
      const std::size_t k = config.mode_assignment == ModeAssignment::enumerated
                                ? static_cast<std::size_t>(r) % joint.size()
                                : rng.uniform_index(joint.size());
      modes[static_cast<std::size_t>(r)] = joint[k];
    }
  }
  return modes;
}

inline Eigen::Vector2d mode_target(const CorpusConfig& config, int label) {
  if (config.domain == Domain::hill) return config.hill.hill_centers().row(label).transpose();
  return label == 0 ? config.coord.center_a : config.coord.center_b;
}

inline std::string format_run_id(int run, const std::vector<int>& modes, Domain domain) {
  std::string s = "run" + std::to_string(run) + ":modes={";
  for (std::size_t i = 0; i < modes.size(); ++i) {
    if (i) s += ",";
    if (domain == Domain::coord)
      s += (modes[i] == 0 ? "A" : "B");
    else
      s += std::to_string(modes[i]);
  }
  return s + "}";
}

struct RunLabel {
  int run = -1;
  std::vector<int> modes;  // letters A/B map to 0/1
};

/// Parses "run{r}:modes={m1,..,mN}"; nullopt for ids in any other form.
inline std::optional<RunLabel> parse_run_id(const std::string& id) {
  if (id.rfind("run", 0) != 0) return std::nullopt;
  const auto colon = id.find(":modes={");
  if (colon == std::string::npos || id.back() != '}') return std::nullopt;
  RunLabel label;
  try {
    label.run = std::stoi(id.substr(3, colon - 3));
  } catch (const std::exception&) {
    return std::nullopt;
  }
  std::stringstream body(id.substr(colon + 8, id.size() - colon - 9));
  std::string tok;
  while (std::getline(body, tok, ',')) {
    if (tok == "A")
      label.modes.push_back(0);
    else if (tok == "B")
      label.modes.push_back(1);
    else {
      try {
        label.modes.push_back(std::stoi(tok));
      } catch (const std::exception&) {
        return std::nullopt;
      }
    }
  }
  return label;
}

namespace detail {

inline Trajectory rollout_impl(const std::vector<BehaviorPolicy>& policies, double max_step, double arena, int steps) {
  const auto n = static_cast<Eigen::Index>(policies.size());
  std::vector<Rng> streams;
  streams.reserve(policies.size());
  for (const auto& p : policies) streams.emplace_back(p.rng_seed);

  Trajectory traj;
  traj.states.resize(steps + 1, 2 * n);
  traj.actions.assign(policies.size(), Eigen::MatrixXd(steps, 2));
  Positions pos = Positions::Zero(n, 2);  // agents spawn at the origin
  traj.states.row(0) = positions_state(pos);
  for (int t = 0; t < steps; ++t) {
    Positions act(n, 2);
    for (Eigen::Index i = 0; i < n; ++i) {
      const auto& pol = policies[static_cast<std::size_t>(i)];
      Rng& rng = streams[static_cast<std::size_t>(i)];
      for (int d = 0; d < 2; ++d) {
        const double raw = pol.gain * (pol.target(d) - pos(i, d)) + pol.noise_scale * rng.normal();
        act(i, d) = std::clamp(raw, -max_step, max_step);
      }
      traj.actions[static_cast<std::size_t>(i)].row(t) = act.row(i);
    }
    pos = env_step(pos, act, max_step, arena);
    traj.states.row(t + 1) = positions_state(pos);
  }
  return traj;
}

inline std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t salt) {
  std::uint64_t z = seed + 0x9E3779B97F4A7C15ULL * (salt + 1);
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
  return z ^ (z >> 31);
}

}  // namespace detail

/// Rolls out one episode in the hill domain; rewards come from the env.
inline Trajectory rollout(const std::vector<BehaviorPolicy>& policies, const HillWorldConfig& env, int steps) {
  if (static_cast<int>(policies.size()) != env.n_agents) throw std::invalid_argument("rollout: policy count != n_agents");
  Trajectory traj = detail::rollout_impl(policies, env.max_step, env.arena_halfwidth, steps);
  traj.rewards = hill_rewards_from_states(traj.states, env);
  return traj;
}

inline Trajectory rollout(const std::vector<BehaviorPolicy>& policies, const CoordGameConfig& env, int steps) {
  if (static_cast<int>(policies.size()) != CoordGameConfig::n_agents)
    throw std::invalid_argument("rollout: coordination game needs 2 policies");
  Trajectory traj = detail::rollout_impl(policies, env.max_step, env.arena_halfwidth, steps);
  traj.rewards = coord_rewards_from_states(traj.states, env);
  return traj;
}

/// Noise level of trajectory k (of `count`) within a run.
inline double noise_at(const CorpusConfig& config, int k) {
  if (config.trajectories_per_run == 1) return config.noise_start;
  const double frac = static_cast<double>(k) / (config.trajectories_per_run - 1);
  return config.noise_start + (config.noise_end - config.noise_start) * frac;
}

/// A trajectory counts as converged once its exploration noise no longer
/// exceeds the per-axis action bound, i.e. the scripted goal dominates.
inline bool is_converged(const CorpusConfig& config, const Trajectory& traj) {
  const double max_step = config.domain == Domain::hill ? config.hill.max_step : config.coord.max_step;
  const auto k = static_cast<int>(traj.train_step / config.checkpoint_interval);
  return noise_at(config, k) <= max_step;
}

inline DatasetMeta corpus_meta(const CorpusConfig& config) {
  DatasetMeta meta;
  meta.n_agents = config.n_agents();
  meta.state_dim = 2 * meta.n_agents;
  meta.action_dims.assign(static_cast<std::size_t>(meta.n_agents), 2);
  meta.episode_len = config.episode_len();
  meta.has_rewards = true;
  return meta;
}

/// Generates every run; runs are independent and may be produced by
/// `workers` threads, merged in run order.
inline TrajectoryDataset generate_corpus(const CorpusConfig& config, int workers = 1) {
  config.validate();
  Rng master(config.seed);
  const auto modes = assign_run_modes(config, master);
  const int n = config.n_agents();

  std::vector<std::vector<Trajectory>> per_run(static_cast<std::size_t>(config.n_runs));
  auto make_run = [&](int r) {
    const auto& m = modes[static_cast<std::size_t>(r)];
    Rng run_rng(detail::mix_seed(config.seed, static_cast<std::uint64_t>(r)));
    const std::string run_id = format_run_id(r, m, config.domain);
    auto& out = per_run[static_cast<std::size_t>(r)];
    for (int k = 0; k < config.trajectories_per_run; ++k) {
      const std::uint64_t traj_seed = run_rng.split();
      std::vector<BehaviorPolicy> policies(static_cast<std::size_t>(n));
      for (int i = 0; i < n; ++i) {
        auto& p = policies[static_cast<std::size_t>(i)];
        p.target = mode_target(config, m[static_cast<std::size_t>(i)]);
        p.noise_scale = noise_at(config, k);
        p.gain = config.gain;
        p.rng_seed = detail::mix_seed(traj_seed, static_cast<std::uint64_t>(i));
      }
      Trajectory traj = config.domain == Domain::hill ? rollout(policies, config.hill, config.episode_len())
                                                      : rollout(policies, config.coord, config.episode_len());
      traj.run_id = run_id;
      traj.train_step = static_cast<std::int64_t>(k) * config.checkpoint_interval;
      traj.seed = static_cast<std::int64_t>(traj_seed >> 1);
      out.push_back(std::move(traj));
    }
  };

  workers = std::clamp(workers, 1, config.n_runs);
  if (workers == 1) {
    for (int r = 0; r < config.n_runs; ++r) make_run(r);
  } else {
    std::vector<std::thread> pool;
    for (int w = 0; w < workers; ++w)
      pool.emplace_back([&, w] {
        for (int r = w; r < config.n_runs; r += workers) make_run(r);
      });
    for (auto& th : pool) th.join();
  }

  TrajectoryDataset dataset(corpus_meta(config));
  for (auto& run : per_run)
    for (auto& traj : run) dataset.append(std::move(traj));
  return dataset;
}

struct ReturnStats {
  std::vector<double> totals;
  double max_return = 0.0;
  double min_return = 0.0;
  double fraction_below_half_max = 0.0;  // share of trajectories with total < 0.5 * max
  std::vector<double> bin_edges;
  std::vector<std::size_t> bin_counts;
};

inline ReturnStats return_statistics(const TrajectoryDataset& dataset, int n_bins = 20) {
  if (!dataset.meta().has_rewards) throw DataError("return_statistics: dataset has no rewards");
  ReturnStats s;
  for (const auto& traj : dataset) s.totals.push_back(trajectory_return(traj).total);
  if (s.totals.empty()) return s;
  s.max_return = *std::max_element(s.totals.begin(), s.totals.end());
  s.min_return = *std::min_element(s.totals.begin(), s.totals.end());
  std::size_t below = 0;
  for (double v : s.totals)
    if (v < 0.5 * s.max_return) ++below;
  s.fraction_below_half_max = static_cast<double>(below) / static_cast<double>(s.totals.size());
  const double lo = s.min_return;
  const double width = (s.max_return - lo) / n_bins;
  s.bin_counts.assign(static_cast<std::size_t>(n_bins), 0);
  for (int b = 0; b <= n_bins; ++b) s.bin_edges.push_back(lo + width * b);
  for (double v : s.totals) {
    int b = width > 0 ? static_cast<int>((v - lo) / width) : 0;
    b = std::clamp(b, 0, n_bins - 1);
    ++s.bin_counts[static_cast<std::size_t>(b)];
  }
  return s;
}

}  // namespace mohba
