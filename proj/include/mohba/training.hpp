#pragma once

// Optimization protocol shared by the hierarchical model and the baselines:
// uniform-with-replacement minibatches, cyclical beta annealing, global-norm
// clipping and Adam. Checkpoints capture everything needed for a resumed run
// to continue bit-for-bit: parameters, Adam moments, step, rng state, log.

#include "mohba/autodiff.hpp"
#include "mohba/config.hpp"
#include "mohba/hvae.hpp"
#include "mohba/rng.hpp"
#include "mohba/trajdata.hpp"

#include <Eigen/Dense>
#include <nlohmann/json.hpp>

#include <cmath>
#include <cstdint>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <functional>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace mohba {

class NumericalError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct TrainConfig {
  long steps = 100000;
  int batch_size = 128;
  double learning_rate = 1e-3;
  double beta_max = 1e-2;
  long anneal_period = 10000;
  double clip_norm = 10.0;
  double adam_beta1 = 0.9;
  double adam_beta2 = 0.999;
  double adam_eps = 1e-8;
  std::uint64_t seed = 0;
  int log_every = 100;
  bool float32 = false;

  void validate() const {
    if (steps < 0) throw std::invalid_argument("train: steps must be >= 0");
    if (batch_size < 1) throw std::invalid_argument("train: batch_size must be >= 1");
    if (!(learning_rate > 0) || !(clip_norm > 0) || anneal_period < 1 || log_every < 1)
      throw std::invalid_argument("train: learning_rate, clip_norm, anneal_period and log_every must be positive");
    if (!(beta_max >= 0)) throw std::invalid_argument("train: beta_max must be >= 0");
    if (!(adam_beta1 >= 0 && adam_beta1 < 1 && adam_beta2 >= 0 && adam_beta2 < 1 && adam_eps > 0))
      throw std::invalid_argument("train: Adam coefficients out of range");
  }

  bool operator==(const TrainConfig&) const = default;
};

inline nlohmann::json to_json(const TrainConfig& c) {
  return {{"steps", c.steps},         {"batch_size", c.batch_size}, {"learning_rate", c.learning_rate},
          {"beta_max", c.beta_max},   {"anneal_period", c.anneal_period}, {"clip_norm", c.clip_norm},
          {"adam_beta1", c.adam_beta1}, {"adam_beta2", c.adam_beta2}, {"adam_eps", c.adam_eps},
          {"seed", c.seed},           {"log_every", c.log_every},   {"float32", c.float32}};
}

inline void read_train_config(ConfigReader r, TrainConfig& c) {
  r.get("steps", c.steps);
  r.get("batch_size", c.batch_size);
  r.get("learning_rate", c.learning_rate);
  r.get("beta_max", c.beta_max);
  r.get("anneal_period", c.anneal_period);
  r.get("clip_norm", c.clip_norm);
  r.get("adam_beta1", c.adam_beta1);
  r.get("adam_beta2", c.adam_beta2);
  r.get("adam_eps", c.adam_eps);
  r.get("seed", c.seed);
  r.get("log_every", c.log_every);
  r.get("float32", c.float32);
  r.finish();
  r.require(c.steps >= 0, "steps", "must be >= 0");
  r.require(c.batch_size >= 1, "batch_size", "must be >= 1");
  r.require(c.learning_rate > 0, "learning_rate", "must be positive");
  r.require(c.beta_max >= 0, "beta_max", "must be >= 0");
  r.require(c.anneal_period >= 1, "anneal_period", "must be >= 1");
  r.require(c.clip_norm > 0, "clip_norm", "must be positive");
  r.require(c.log_every >= 1, "log_every", "must be >= 1");
}

inline TrainConfig train_config_from_json(const nlohmann::json& j) {
  TrainConfig c;
  read_train_config(ConfigReader(j, "train_config"), c);
  c.validate();
  return c;
}

/// Linear ramp 0 -> beta_max over the first half of each cycle, then flat.
inline double beta_schedule(long step, const TrainConfig& config) {
  if (step < 0) throw std::invalid_argument("beta_schedule: step must be >= 0");
  const long period = config.anneal_period;
  const double pos = static_cast<double>(step % period);
  const double ramp = 0.5 * static_cast<double>(period);
  return pos >= ramp ? config.beta_max : config.beta_max * pos / ramp;
}

template <typename S>
double global_grad_norm(const ad::ParameterStore<S>& store) {
  double sq = 0.0;
  for (const auto& p : store) sq += p.grad.template cast<double>().squaredNorm();
  return std::sqrt(sq);
}

/// Rescales every gradient when their joint norm exceeds clip_norm; returns
/// the norm before clipping.
template <typename S>
double clip_global_norm(ad::ParameterStore<S>& store, double clip_norm) {
  if (!(clip_norm > 0)) throw std::invalid_argument("clip_global_norm: clip_norm must be positive");
  const double norm = global_grad_norm(store);
  if (norm > clip_norm) {
    const S factor = static_cast<S>(clip_norm / norm);
    for (auto& p : store) p.grad *= factor;
  }
  return norm;
}

inline double clip_global_norm(std::vector<Eigen::MatrixXd>& grads, double clip_norm) {
  if (!(clip_norm > 0)) throw std::invalid_argument("clip_global_norm: clip_norm must be positive");
  double sq = 0.0;
  for (const auto& g : grads) sq += g.squaredNorm();
  const double norm = std::sqrt(sq);
  if (norm > clip_norm)
    for (auto& g : grads) g *= clip_norm / norm;
  return norm;
}

template <typename S>
class Adam {
 public:
  long step = 0;
  std::vector<ad::Matrix<S>> m;
  std::vector<ad::Matrix<S>> v;

  void reset(const ad::ParameterStore<S>& store) {
    step = 0;
    m.clear();
    v.clear();
    for (const auto& p : store) {
      m.push_back(ad::Matrix<S>::Zero(p.value.rows(), p.value.cols()));
      v.push_back(ad::Matrix<S>::Zero(p.value.rows(), p.value.cols()));
    }
  }

  void update(ad::ParameterStore<S>& store, const TrainConfig& c) {
    if (static_cast<int>(m.size()) != store.size()) reset(store);
    ++step;
    const double bc1 = 1.0 - std::pow(c.adam_beta1, static_cast<double>(step));
    const double bc2 = 1.0 - std::pow(c.adam_beta2, static_cast<double>(step));
    const S b1 = static_cast<S>(c.adam_beta1);
    const S b2 = static_cast<S>(c.adam_beta2);
    const S lr = static_cast<S>(c.learning_rate / bc1);
    const S inv_bc2 = static_cast<S>(1.0 / bc2);
    const S eps = static_cast<S>(c.adam_eps);
    for (int k = 0; k < store.size(); ++k) {
      auto& p = store[k];
      auto& mk = m[static_cast<std::size_t>(k)];
      auto& vk = v[static_cast<std::size_t>(k)];
      mk = b1 * mk + (S(1) - b1) * p.grad;
      vk = b2 * vk + (S(1) - b2) * p.grad.cwiseProduct(p.grad);
      p.value.array() -= lr * mk.array() / ((vk.array() * inv_bc2).sqrt() + eps);
    }
  }
};

// ---------------------------------------------------------------------------
// Metrics

struct LossParts {
  double loss = 0.0;
  std::optional<double> recon;
  std::optional<double> kl_local;
  std::optional<double> kl_joint;
};

struct MetricsRow {
  long step = 0;
  double loss = 0.0;
  std::optional<double> recon;
  std::optional<double> kl_local;
  std::optional<double> kl_joint;
  double beta = 0.0;

  bool operator==(const MetricsRow&) const = default;
};

struct MetricsLog {
  std::vector<MetricsRow> rows;

  std::string to_csv() const {
    std::string out = "step,loss,recon,kl_local,kl_joint,beta\n";
    char buf[40];
    auto field = [&](std::optional<double> v) {
      out += ',';
      if (v) {
        std::snprintf(buf, sizeof buf, "%.17g", *v);
        out += buf;
      }
    };
    for (const auto& r : rows) {
      out += std::to_string(r.step);
      field(r.loss);
      field(r.recon);
      field(r.kl_local);
      field(r.kl_joint);
      field(r.beta);
      out += '\n';
    }
    return out;
  }

  void write_csv(const std::string& path) const {
    std::ofstream f(path, std::ios::binary);
    if (!f) throw std::runtime_error("cannot open " + path + " for writing");
    f << to_csv();
    if (!f) throw std::runtime_error("write failed: " + path);
  }

  bool operator==(const MetricsLog&) const = default;
};

inline nlohmann::json to_json(const MetricsRow& r) {
  auto opt = [](std::optional<double> v) { return v ? nlohmann::json(*v) : nlohmann::json(nullptr); };
  return {{"step", r.step}, {"loss", r.loss}, {"recon", opt(r.recon)}, {"kl_local", opt(r.kl_local)},
          {"kl_joint", opt(r.kl_joint)}, {"beta", r.beta}};
}

inline MetricsRow metrics_row_from_json(const nlohmann::json& j) {
  auto opt = [&](const char* k) -> std::optional<double> {
    if (j.at(k).is_null()) return std::nullopt;
    return j.at(k).get<double>();
  };
  MetricsRow r;
  r.step = j.at("step").get<long>();
  r.loss = j.at("loss").get<double>();
  r.recon = opt("recon");
  r.kl_local = opt("kl_local");
  r.kl_joint = opt("kl_joint");
  r.beta = j.at("beta").get<double>();
  return r;
}

// ---------------------------------------------------------------------------
// Training loop

template <typename S>
struct TrainerState {
  long step = 0;
  Rng rng;
  Adam<S> adam;
  MetricsLog log;
};

/// Trainer rng derived from the config seed; model init uses a separate stream.
inline std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t salt) {
  std::uint64_t z = seed + 0x9E3779B97F4A7C15ULL * (salt + 1);
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
  return z ^ (z >> 31);
}

inline std::uint64_t init_seed(const TrainConfig& c) { return derive_seed(c.seed, 1); }

template <typename S>
TrainerState<S> fresh_trainer(const TrainConfig& c, const ad::ParameterStore<S>& store) {
  TrainerState<S> st;
  st.rng = Rng(derive_seed(c.seed, 2));
  st.adam.reset(store);
  return st;
}

/// Accumulates gradients of the loss into the store and returns its parts.
template <typename S>
using LossFn = std::function<LossParts(std::span<const Trajectory* const> batch, double beta, Rng& rng)>;

/// Runs until state.step == config.steps. `on_log` (optional) sees every
/// logged row as it is produced.
template <typename S>
void train_loop(ad::ParameterStore<S>& store, TrainerState<S>& state, const TrajectoryDataset& dataset,
                const TrainConfig& config, const LossFn<S>& loss_fn,
                const std::function<void(const MetricsRow&)>& on_log = {}) {
  config.validate();
  if (dataset.empty()) throw DataError("train: dataset is empty");
  if (static_cast<int>(state.adam.m.size()) != store.size()) state.adam.reset(store);
  std::vector<const Trajectory*> batch(static_cast<std::size_t>(config.batch_size));
  while (state.step < config.steps) {
    const double beta = beta_schedule(state.step, config);
    for (auto& p : batch) p = &dataset[state.rng.uniform_index(dataset.size())];
    store.zero_grad();
    const LossParts parts = loss_fn(batch, beta, state.rng);
    if (!std::isfinite(parts.loss)) {
      char msg[256];
      std::snprintf(msg, sizeof msg, "non-finite loss at step %ld (loss=%g recon=%g kl_local=%g kl_joint=%g beta=%g)",
                    state.step, parts.loss, parts.recon.value_or(NAN), parts.kl_local.value_or(NAN),
                    parts.kl_joint.value_or(NAN), beta);
      throw NumericalError(msg);
    }
    const double norm = clip_global_norm(store, config.clip_norm);
    if (!std::isfinite(norm)) throw NumericalError("non-finite gradient norm at step " + std::to_string(state.step));
    state.adam.update(store, config);
    if (state.step % config.log_every == 0) {
      MetricsRow row{state.step, parts.loss, parts.recon, parts.kl_local, parts.kl_joint, beta};
      state.log.rows.push_back(row);
      if (on_log) on_log(row);
    }
    ++state.step;
  }
}

// ---------------------------------------------------------------------------
// Checkpoint archive
//
//   "MOHBACKP" | u32 version | u64 header length | header JSON (UTF-8)
//   u64 tensor count, then per tensor:
//     u32 name length | name | u32 ndim (= 2) | u64 rows | u64 cols |
//     rows*cols little-endian float64, row-major

class CheckpointError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct NamedTensor {
  std::string name;
  Eigen::MatrixXd value;
};

struct Checkpoint {
  nlohmann::json header;  // kind, model_config, train_config, trainer state, metrics
  std::vector<NamedTensor> tensors;

  const NamedTensor* find(const std::string& name) const {
    for (const auto& t : tensors)
      if (t.name == name) return &t;
    return nullptr;
  }
};

inline constexpr std::uint32_t kCheckpointVersion = 1;

namespace detail {

template <typename T>
void put(std::string& out, T v) {
  char buf[sizeof(T)];
  std::memcpy(buf, &v, sizeof(T));
  out.append(buf, sizeof(T));
}

template <typename T>
T take(const std::string& in, std::size_t& pos) {
  if (pos + sizeof(T) > in.size()) throw CheckpointError("checkpoint truncated");
  T v;
  std::memcpy(&v, in.data() + pos, sizeof(T));
  pos += sizeof(T);
  return v;
}

}  // namespace detail

inline std::string serialize_checkpoint(const Checkpoint& ckpt) {
  std::string out = "MOHBACKP";
  detail::put<std::uint32_t>(out, kCheckpointVersion);
  const std::string header = ckpt.header.dump();
  detail::put<std::uint64_t>(out, header.size());
  out += header;
  detail::put<std::uint64_t>(out, ckpt.tensors.size());
  for (const auto& t : ckpt.tensors) {
    detail::put<std::uint32_t>(out, static_cast<std::uint32_t>(t.name.size()));
    out += t.name;
    detail::put<std::uint32_t>(out, 2);
    detail::put<std::uint64_t>(out, static_cast<std::uint64_t>(t.value.rows()));
    detail::put<std::uint64_t>(out, static_cast<std::uint64_t>(t.value.cols()));
    for (Eigen::Index r = 0; r < t.value.rows(); ++r)
      for (Eigen::Index c = 0; c < t.value.cols(); ++c) detail::put<double>(out, t.value(r, c));
  }
  return out;
}

inline Checkpoint deserialize_checkpoint(const std::string& in) {
  if (in.size() < 8 || in.compare(0, 8, "MOHBACKP") != 0) throw CheckpointError("not a checkpoint (bad magic)");
  std::size_t pos = 8;
  const auto version = detail::take<std::uint32_t>(in, pos);
  if (version != kCheckpointVersion) throw CheckpointError("unsupported checkpoint version " + std::to_string(version));
  const auto hlen = detail::take<std::uint64_t>(in, pos);
  if (pos + hlen > in.size()) throw CheckpointError("checkpoint truncated");
  Checkpoint ckpt;
  try {
    ckpt.header = nlohmann::json::parse(in.substr(pos, hlen));
  } catch (const nlohmann::json::exception& e) {
    throw CheckpointError(std::string("corrupt checkpoint header: ") + e.what());
  }
  pos += hlen;
  const auto count = detail::take<std::uint64_t>(in, pos);
  for (std::uint64_t k = 0; k < count; ++k) {
    NamedTensor t;
    const auto nlen = detail::take<std::uint32_t>(in, pos);
    if (pos + nlen > in.size()) throw CheckpointError("checkpoint truncated");
    t.name = in.substr(pos, nlen);
    pos += nlen;
    if (detail::take<std::uint32_t>(in, pos) != 2) throw CheckpointError("tensor " + t.name + ": only 2-D tensors supported");
    const auto rows = detail::take<std::uint64_t>(in, pos);
    const auto cols = detail::take<std::uint64_t>(in, pos);
    if (rows * cols * sizeof(double) > in.size() - pos) throw CheckpointError("checkpoint truncated in " + t.name);
    t.value.resize(static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(cols));
    for (Eigen::Index r = 0; r < t.value.rows(); ++r)
      for (Eigen::Index c = 0; c < t.value.cols(); ++c) t.value(r, c) = detail::take<double>(in, pos);
    ckpt.tensors.push_back(std::move(t));
  }
  if (pos != in.size()) throw CheckpointError("trailing bytes after checkpoint payload");
  return ckpt;
}

inline void write_checkpoint(const std::string& path, const Checkpoint& ckpt) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw CheckpointError("cannot open " + path + " for writing");
  const std::string bytes = serialize_checkpoint(ckpt);
  f.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!f) throw CheckpointError("write failed: " + path);
}

inline Checkpoint read_checkpoint(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw CheckpointError("cannot open checkpoint " + path);
  std::string bytes((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
  return deserialize_checkpoint(bytes);
}

template <typename S>
void append_store(Checkpoint& ckpt, const ad::ParameterStore<S>& store, const std::string& prefix = "") {
  for (const auto& p : store) ckpt.tensors.push_back({prefix + p.name, p.value.template cast<double>()});
}

/// Fills every parameter of `store` from the checkpoint, checking names and shapes.
template <typename S>
void restore_store(const Checkpoint& ckpt, ad::ParameterStore<S>& store, const std::string& prefix = "") {
  for (auto& p : store) {
    const NamedTensor* t = ckpt.find(prefix + p.name);
    if (!t) throw CheckpointError("checkpoint is missing tensor " + prefix + p.name);
    if (t->value.rows() != p.value.rows() || t->value.cols() != p.value.cols())
      throw CheckpointError("tensor " + prefix + p.name + " has shape " + std::to_string(t->value.rows()) + "x" +
                            std::to_string(t->value.cols()) + ", model expects " + std::to_string(p.value.rows()) + "x" +
                            std::to_string(p.value.cols()));
    p.value = t->value.template cast<S>();
  }
}

template <typename S>
void append_trainer(Checkpoint& ckpt, const TrainerState<S>& st, const ad::ParameterStore<S>& store) {
  ckpt.header["trainer"] = {{"step", st.step}, {"rng", st.rng.state()}, {"adam_step", st.adam.step}};
  nlohmann::json rows = nlohmann::json::array();
  for (const auto& r : st.log.rows) rows.push_back(to_json(r));
  ckpt.header["metrics"] = rows;
  for (int k = 0; k < store.size(); ++k) {
    if (static_cast<std::size_t>(k) >= st.adam.m.size()) break;
    ckpt.tensors.push_back({"adam.m/" + store[k].name, st.adam.m[static_cast<std::size_t>(k)].template cast<double>()});
    ckpt.tensors.push_back({"adam.v/" + store[k].name, st.adam.v[static_cast<std::size_t>(k)].template cast<double>()});
  }
}

template <typename S>
TrainerState<S> restore_trainer(const Checkpoint& ckpt, const ad::ParameterStore<S>& store) {
  TrainerState<S> st;
  if (!ckpt.header.contains("trainer")) throw CheckpointError("checkpoint has no trainer state");
  const auto& tr = ckpt.header.at("trainer");
  st.step = tr.at("step").get<long>();
  st.rng.set_state(tr.at("rng").get<std::string>());
  st.adam.reset(store);
  st.adam.step = tr.at("adam_step").get<long>();
  for (int k = 0; k < store.size(); ++k) {
    const NamedTensor* m = ckpt.find("adam.m/" + store[k].name);
    const NamedTensor* v = ckpt.find("adam.v/" + store[k].name);
    if (!m || !v) throw CheckpointError("checkpoint is missing Adam moments for " + store[k].name);
    st.adam.m[static_cast<std::size_t>(k)] = m->value.template cast<S>();
    st.adam.v[static_cast<std::size_t>(k)] = v->value.template cast<S>();
  }
  for (const auto& r : ckpt.header.value("metrics", nlohmann::json::array())) st.log.rows.push_back(metrics_row_from_json(r));
  return st;
}

// ---------------------------------------------------------------------------
// The hierarchical model

inline LossParts to_loss_parts(const ElboParts& p) { return {p.loss, p.recon, p.kl_local, p.kl_joint}; }

template <typename S>
void train(MohbaModel<S>& model, TrainerState<S>& state, const TrajectoryDataset& dataset, const TrainConfig& config,
           const std::function<void(const MetricsRow&)>& on_log = {}) {
  model.config.check_meta(dataset.meta());
  const LossFn<S> loss = [&model](std::span<const Trajectory* const> batch, double beta, Rng& rng) {
    return to_loss_parts(elbo_backward(model, batch, beta, rng));
  };
  train_loop(model.store, state, dataset, config, loss, on_log);
}

/// Fresh model initialized from the config seed and trained for config.steps.
template <typename S>
std::pair<MohbaModel<S>, TrainerState<S>> train_new(const ModelConfig& model_config, const TrajectoryDataset& dataset,
                                                     const TrainConfig& config,
                                                     const std::function<void(const MetricsRow&)>& on_log = {}) {
  ModelConfig mc = model_config;
  mc.adopt(dataset.meta());
  auto model = MohbaModel<S>::create(mc, init_seed(config));
  auto state = fresh_trainer(config, model.store);
  train(model, state, dataset, config, on_log);
  return {std::move(model), std::move(state)};
}

inline void check_kind(const Checkpoint& ckpt, const std::string& kind) {
  const std::string found = ckpt.header.value("kind", std::string("?"));
  if (found != kind) throw CheckpointError("checkpoint holds a '" + found + "' model, expected '" + kind + "'");
}

template <typename S>
Checkpoint make_checkpoint(const MohbaModel<S>& model, const TrainerState<S>& state, const TrainConfig& config) {
  Checkpoint ckpt;
  ckpt.header["kind"] = "mohba";
  ckpt.header["model_config"] = to_json(model.config);
  ckpt.header["train_config"] = to_json(config);
  append_store(ckpt, model.store);
  append_trainer(ckpt, state, model.store);
  return ckpt;
}

template <typename S>
void save_checkpoint(const std::string& path, const MohbaModel<S>& model, const TrainerState<S>& state,
                     const TrainConfig& config) {
  write_checkpoint(path, make_checkpoint(model, state, config));
}

template <typename S>
struct LoadedMohba {
  MohbaModel<S> model;
  TrainerState<S> state;
  TrainConfig config;
};

/// Rebuilds the model from the stored config and fills parameters and
/// optimizer state. If `expected` is given its config must match exactly.
template <typename S>
LoadedMohba<S> load_mohba_checkpoint(const Checkpoint& ckpt, const ModelConfig* expected = nullptr) {
  check_kind(ckpt, "mohba");
  LoadedMohba<S> out;
  ModelConfig mc;
  try {
    mc = model_config_from_json(ckpt.header.at("model_config"));
    out.config = train_config_from_json(ckpt.header.at("train_config"));
  } catch (const std::exception& e) {
    throw CheckpointError(std::string("checkpoint config unreadable: ") + e.what());
  }
  if (expected && !(*expected == mc)) throw CheckpointError("checkpoint model_config does not match the requested model");
  out.model = MohbaModel<S>::create(mc, 0);
  restore_store(ckpt, out.model.store);
  out.state = restore_trainer(ckpt, out.model.store);
  return out;
}

template <typename S>
LoadedMohba<S> load_mohba_checkpoint(const std::string& path, const ModelConfig* expected = nullptr) {
  return load_mohba_checkpoint<S>(read_checkpoint(path), expected);
}

}  // namespace mohba
