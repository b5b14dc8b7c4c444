#pragma once

// Trajectory data model and the JSON-lines dataset format.
//
//   line 1:   {"meta": {"n_agents": N, "state_dim": D, "action_dims": [..],
//              "episode_len": T, "has_rewards": bool}}
//   line k+1: {"run_id": str, "seed": int, "train_step": int,
//              "states": [[..]..], "actions": [[[..]..]..],
//              "rewards": [[..]..] | null}
//
// Floats are written with 17 significant digits so a save/load round trip
// reproduces every double bit for bit.

#include "mohba/rng.hpp"

#include <Eigen/Dense>
#include <nlohmann/json.hpp>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <fstream>
#include <numeric>
#include <optional>
#include <sstream>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace mohba {

class DataError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct DatasetMeta {
  int n_agents = 1;
  int state_dim = 1;
  std::vector<int> action_dims{1};
  int episode_len = 1;
  bool has_rewards = false;

  void validate() const {
    if (n_agents < 1) throw DataError("meta: n_agents must be >= 1");
    if (state_dim < 1) throw DataError("meta: state_dim must be >= 1");
    if (episode_len < 1) throw DataError("meta: episode_len must be >= 1");
    if (static_cast<int>(action_dims.size()) != n_agents)
      throw DataError("meta: action_dims has " + std::to_string(action_dims.size()) + " entries, expected " +
                      std::to_string(n_agents));
    for (int a : action_dims)
      if (a < 1) throw DataError("meta: every action dim must be >= 1");
  }

  int total_action_dim() const { return std::accumulate(action_dims.begin(), action_dims.end(), 0); }
  int max_action_dim() const { return *std::max_element(action_dims.begin(), action_dims.end()); }

  bool operator==(const DatasetMeta&) const = default;
};

struct Trajectory {
  Eigen::MatrixXd states;                  // (T+1) x state_dim, rows s_0..s_T
  std::vector<Eigen::MatrixXd> actions;    // one T x action_dims[i] matrix per agent
  std::optional<Eigen::MatrixXd> rewards;  // T x N
  std::string run_id = "unknown";
  std::int64_t train_step = 0;
  std::int64_t seed = 0;

  int episode_len() const { return static_cast<int>(states.rows()) - 1; }
  int n_agents() const { return static_cast<int>(actions.size()); }

  bool operator==(const Trajectory& o) const {
    if (run_id != o.run_id || train_step != o.train_step || seed != o.seed) return false;
    if (states.rows() != o.states.rows() || states.cols() != o.states.cols() || states != o.states) return false;
    if (actions.size() != o.actions.size()) return false;
    for (std::size_t i = 0; i < actions.size(); ++i) {
      if (actions[i].rows() != o.actions[i].rows() || actions[i].cols() != o.actions[i].cols()) return false;
      if (actions[i] != o.actions[i]) return false;
    }
    if (rewards.has_value() != o.rewards.has_value()) return false;
    if (rewards && (rewards->rows() != o.rewards->rows() || rewards->cols() != o.rewards->cols() || *rewards != *o.rewards))
      return false;
    return true;
  }
};

/// Returns an empty string when `traj` conforms to `meta`, else the reason.
inline std::string conformance_error(const Trajectory& traj, const DatasetMeta& meta) {
  const int t_len = meta.episode_len;
  if (traj.states.rows() != t_len + 1)
    return "expected " + std::to_string(t_len + 1) + " state rows, got " + std::to_string(traj.states.rows());
  if (traj.states.cols() != meta.state_dim)
    return "expected state_dim " + std::to_string(meta.state_dim) + ", got " + std::to_string(traj.states.cols());
  if (static_cast<int>(traj.actions.size()) != meta.n_agents)
    return "expected actions for " + std::to_string(meta.n_agents) + " agents, got " + std::to_string(traj.actions.size());
  for (int i = 0; i < meta.n_agents; ++i) {
    const auto& a = traj.actions[static_cast<std::size_t>(i)];
    if (a.rows() != t_len)
      return "agent " + std::to_string(i) + ": expected " + std::to_string(t_len) + " action rows, got " +
             std::to_string(a.rows());
    if (a.cols() != meta.action_dims[static_cast<std::size_t>(i)])
      return "agent " + std::to_string(i) + ": expected action dim " +
             std::to_string(meta.action_dims[static_cast<std::size_t>(i)]) + ", got " + std::to_string(a.cols());
    if (!a.allFinite()) return "agent " + std::to_string(i) + ": non-finite action";
  }
  if (!traj.states.allFinite()) return "non-finite state";
  if (meta.has_rewards) {
    if (!traj.rewards) return "missing rewards";
    if (traj.rewards->rows() != t_len || traj.rewards->cols() != meta.n_agents)
      return "rewards must be " + std::to_string(t_len) + " x " + std::to_string(meta.n_agents);
    if (!traj.rewards->allFinite()) return "non-finite reward";
  } else if (traj.rewards) {
    return "rewards present but meta.has_rewards is false";
  }
  return {};
}

class TrajectoryDataset {
 public:
  TrajectoryDataset() = default;
  explicit TrajectoryDataset(DatasetMeta meta) : meta_(std::move(meta)) { meta_.validate(); }

  const DatasetMeta& meta() const { return meta_; }
  const std::vector<Trajectory>& trajectories() const { return trajectories_; }
  std::size_t size() const { return trajectories_.size(); }
  bool empty() const { return trajectories_.empty(); }
  const Trajectory& operator[](std::size_t i) const { return trajectories_.at(i); }
  auto begin() const { return trajectories_.begin(); }
  auto end() const { return trajectories_.end(); }

  void append(Trajectory traj) {
    const std::string err = conformance_error(traj, meta_);
    if (!err.empty()) throw DataError("trajectory " + std::to_string(trajectories_.size()) + ": " + err);
    trajectories_.push_back(std::move(traj));
  }

  void validate() const {
    meta_.validate();
    for (std::size_t k = 0; k < trajectories_.size(); ++k) {
      const std::string err = conformance_error(trajectories_[k], meta_);
      if (!err.empty()) throw DataError("trajectory " + std::to_string(k) + ": " + err);
    }
  }

  bool operator==(const TrajectoryDataset& o) const { return meta_ == o.meta_ && trajectories_ == o.trajectories_; }

 private:
  DatasetMeta meta_;
  std::vector<Trajectory> trajectories_;
};

namespace detail {

inline void write_double(std::string& out, double v) {
  char buf[32];
  const int n = std::snprintf(buf, sizeof(buf), "%.17g", v);
  out.append(buf, static_cast<std::size_t>(n));
}

inline void write_row(std::string& out, const Eigen::MatrixXd& m, Eigen::Index r) {
  out.push_back('[');
  for (Eigen::Index c = 0; c < m.cols(); ++c) {
    if (c) out.push_back(',');
    write_double(out, m(r, c));
  }
  out.push_back(']');
}

inline void write_matrix(std::string& out, const Eigen::MatrixXd& m) {
  out.push_back('[');
  for (Eigen::Index r = 0; r < m.rows(); ++r) {
    if (r) out.push_back(',');
    write_row(out, m, r);
  }
  out.push_back(']');
}

inline Eigen::MatrixXd parse_matrix(const nlohmann::json& j, const char* what) {
  if (!j.is_array()) throw DataError(std::string(what) + " must be a list of rows");
  const auto rows = static_cast<Eigen::Index>(j.size());
  const auto cols = rows > 0 ? static_cast<Eigen::Index>(j[0].size()) : 0;
  Eigen::MatrixXd m(rows, cols);
  for (Eigen::Index r = 0; r < rows; ++r) {
    const auto& row = j[static_cast<std::size_t>(r)];
    if (!row.is_array() || static_cast<Eigen::Index>(row.size()) != cols)
      throw DataError(std::string(what) + ": ragged row " + std::to_string(r));
    for (Eigen::Index c = 0; c < cols; ++c) m(r, c) = row[static_cast<std::size_t>(c)].get<double>();
  }
  return m;
}

}  // namespace detail

inline std::string meta_line(const DatasetMeta& meta) {
  nlohmann::json j = {{"meta",
                       {{"n_agents", meta.n_agents},
                        {"state_dim", meta.state_dim},
                        {"action_dims", meta.action_dims},
                        {"episode_len", meta.episode_len},
                        {"has_rewards", meta.has_rewards}}}};
  return j.dump();
}

inline std::string trajectory_line(const Trajectory& traj) {
  std::string out;
  out.reserve(64 + static_cast<std::size_t>(traj.states.size()) * 24);
  out += "{\"run_id\":";
  out += nlohmann::json(traj.run_id).dump();
  out += ",\"seed\":" + std::to_string(traj.seed);
  out += ",\"train_step\":" + std::to_string(traj.train_step);
  out += ",\"states\":";
  detail::write_matrix(out, traj.states);
  out += ",\"actions\":[";
  const Eigen::Index t_len = traj.actions.empty() ? 0 : traj.actions.front().rows();
  for (Eigen::Index t = 0; t < t_len; ++t) {
    if (t) out.push_back(',');
    out.push_back('[');
    for (std::size_t i = 0; i < traj.actions.size(); ++i) {
      if (i) out.push_back(',');
      detail::write_row(out, traj.actions[i], t);
    }
    out.push_back(']');
  }
  out += "],\"rewards\":";
  if (traj.rewards)
    detail::write_matrix(out, *traj.rewards);
  else
    out += "null";
  out += "}";
  return out;
}

inline void save_dataset(const TrajectoryDataset& dataset, const std::string& path) {
  dataset.validate();
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw DataError("cannot open " + path + " for writing");
  out << meta_line(dataset.meta()) << '\n';
  for (const auto& traj : dataset) out << trajectory_line(traj) << '\n';
  out.flush();
  if (!out) throw DataError("write failed: " + path);
}

inline DatasetMeta parse_meta(const nlohmann::json& j) {
  if (!j.is_object() || !j.contains("meta")) throw DataError("first record must be a meta record");
  const auto& m = j.at("meta");
  DatasetMeta meta;
  meta.n_agents = m.at("n_agents").get<int>();
  meta.state_dim = m.at("state_dim").get<int>();
  meta.action_dims = m.at("action_dims").get<std::vector<int>>();
  meta.episode_len = m.at("episode_len").get<int>();
  meta.has_rewards = m.at("has_rewards").get<bool>();
  meta.validate();
  return meta;
}

inline Trajectory parse_trajectory(const nlohmann::json& j) {
  Trajectory traj;
  if (!j.is_object()) throw DataError("trajectory record must be an object");
  traj.run_id = j.value("run_id", std::string("unknown"));
  traj.seed = j.value("seed", std::int64_t{0});
  traj.train_step = j.value("train_step", std::int64_t{0});
  traj.states = detail::parse_matrix(j.at("states"), "states");
  const auto& acts = j.at("actions");
  if (!acts.is_array()) throw DataError("actions must be a list of timesteps");
  const std::size_t t_len = acts.size();
  const std::size_t n = t_len > 0 ? acts[0].size() : 0;
  traj.actions.resize(n);
  for (std::size_t i = 0; i < n; ++i) {
    const std::size_t dim = acts[0][i].size();
    traj.actions[i].resize(static_cast<Eigen::Index>(t_len), static_cast<Eigen::Index>(dim));
  }
  for (std::size_t t = 0; t < t_len; ++t) {
    if (!acts[t].is_array() || acts[t].size() != n)
      throw DataError("actions row " + std::to_string(t) + " has the wrong agent count");
    for (std::size_t i = 0; i < n; ++i) {
      const auto& a = acts[t][i];
      if (!a.is_array() || static_cast<Eigen::Index>(a.size()) != traj.actions[i].cols())
        throw DataError("action (" + std::to_string(t) + ", " + std::to_string(i) + ") has the wrong dimension");
      for (std::size_t d = 0; d < a.size(); ++d)
        traj.actions[i](static_cast<Eigen::Index>(t), static_cast<Eigen::Index>(d)) = a[d].get<double>();
    }
  }
  if (j.contains("rewards") && !j.at("rewards").is_null()) traj.rewards = detail::parse_matrix(j.at("rewards"), "rewards");
  return traj;
}

/// Loads and validates a dataset. Errors name the offending line number.
inline TrajectoryDataset load_dataset(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open " + path);
  std::string line;
  std::size_t line_no = 0;
  std::optional<TrajectoryDataset> dataset;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty() || line == "\r") continue;
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(line);
    } catch (const nlohmann::json::exception& e) {
      throw DataError(path + ":" + std::to_string(line_no) + ": malformed line: " + e.what());
    }
    try {
      if (!dataset) {
        dataset.emplace(parse_meta(j));
        continue;
      }
      Trajectory traj = parse_trajectory(j);
      const std::string err = conformance_error(traj, dataset->meta());
      if (!err.empty())
        throw DataError("trajectory " + std::to_string(dataset->size()) + " (run_id " + traj.run_id +
                        "): shape mismatch: " + err);
      dataset->append(std::move(traj));
    } catch (const nlohmann::json::exception& e) {
      throw DataError(path + ":" + std::to_string(line_no) + ": " + e.what());
    } catch (const DataError& e) {
      throw DataError(path + ":" + std::to_string(line_no) + ": " + e.what());
    }
  }
  if (!dataset) throw DataError(path + ": missing meta record");
  return std::move(*dataset);
}

/// Number of validation items for a split of `n` items.
inline std::size_t validation_count(std::size_t n, double val_fraction) {
  return static_cast<std::size_t>(std::ceil(static_cast<double>(n) * val_fraction - 1e-9));
}

/// Deterministic shuffled partition of [0, n) into (train, validation)
/// index lists, each sorted ascending.
inline std::pair<std::vector<std::size_t>, std::vector<std::size_t>> split_indices(std::size_t n, double val_fraction,
                                                                                   std::uint64_t seed) {
  if (!(val_fraction > 0.0 && val_fraction < 1.0)) throw std::invalid_argument("val_fraction must lie in (0, 1)");
  std::vector<std::size_t> perm(n);
  std::iota(perm.begin(), perm.end(), std::size_t{0});
  Rng rng(seed);
  rng.shuffle(perm.begin(), perm.end());
  const std::size_t n_val = validation_count(n, val_fraction);
  std::vector<std::size_t> val(perm.begin(), perm.begin() + static_cast<std::ptrdiff_t>(n_val));
  std::vector<std::size_t> train(perm.begin() + static_cast<std::ptrdiff_t>(n_val), perm.end());
  std::sort(val.begin(), val.end());
  std::sort(train.begin(), train.end());
  return {std::move(train), std::move(val)};
}

inline std::pair<TrajectoryDataset, TrajectoryDataset> split_dataset(const TrajectoryDataset& dataset,
                                                                     double val_fraction, std::uint64_t seed) {
  if (dataset.empty()) throw std::invalid_argument("split_dataset: empty dataset");
  auto [train_idx, val_idx] = split_indices(dataset.size(), val_fraction, seed);
  TrajectoryDataset train(dataset.meta());
  TrajectoryDataset val(dataset.meta());
  for (auto k : train_idx) train.append(dataset[k]);
  for (auto k : val_idx) val.append(dataset[k]);
  return {std::move(train), std::move(val)};
}

}  // namespace mohba
