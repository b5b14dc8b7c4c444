#pragma once

// Comparison models. LstmBaseline is a causal next-joint-action predictor
// whose final hidden state is used as the trajectory embedding. FlatVae
// keeps the joint encoder and prior of the hierarchical model but feeds
// z_omega straight into the shared policy, with no local latents.
//
// Both reuse ModelConfig: the LSTM reads rnn_hidden and policy_hidden, the
// flat VAE reads everything except d_alpha.

#include "mohba/autodiff.hpp"
#include "mohba/hvae.hpp"
#include "mohba/nn.hpp"
#include "mohba/training.hpp"

#include <Eigen/Dense>

#include <span>
#include <string>
#include <vector>

namespace mohba {

// ---------------------------------------------------------------------------
// LSTM next-action predictor

template <typename S>
struct LstmInputs {
  Eigen::Index batch = 0;
  Eigen::Index steps = 0;  // T; the recurrence runs T+1 steps
  ad::Matrix<S> x;         // (D + sum A) x (T+1)*B, column t*B + b holds [s_t ; a_{t-1}]
  ad::Matrix<S> target;    // sum A x T*B, column t*B + b holds a_t
};

template <typename S>
LstmInputs<S> make_lstm_inputs(const ModelConfig& cfg, std::span<const Trajectory* const> batch) {
  if (batch.empty()) throw std::invalid_argument("batch is empty");
  LstmInputs<S> in;
  const Eigen::Index nb = static_cast<Eigen::Index>(batch.size());
  const Eigen::Index steps = batch.front()->episode_len();
  const Eigen::Index d = cfg.state_dim;
  const Eigen::Index atot = cfg.total_action_dim();
  in.batch = nb;
  in.steps = steps;
  in.x.setZero(d + atot, (steps + 1) * nb);
  in.target.resize(atot, steps * nb);
  for (Eigen::Index b = 0; b < nb; ++b) {
    const Trajectory& tr = *batch[static_cast<std::size_t>(b)];
    if (tr.episode_len() != steps || tr.states.cols() != d || tr.n_agents() != cfg.n_agents)
      throw DataError("trajectory shape does not match the model");
    for (Eigen::Index t = 0; t <= steps; ++t) {
      in.x.col(t * nb + b).head(d) = tr.states.row(t).transpose().cast<S>();
      Eigen::Index off = d;
      for (const auto& a : tr.actions) {
        if (t > 0) in.x.col(t * nb + b).segment(off, a.cols()) = a.row(t - 1).transpose().cast<S>();
        if (t < steps) in.target.col(t * nb + b).segment(off - d, a.cols()) = a.row(t).transpose().cast<S>();
        off += a.cols();
      }
    }
  }
  return in;
}

template <typename S = double>
class LstmBaseline {
 public:
  using Scalar = S;

  ModelConfig config;
  ad::ParameterStore<S> store;
  nn::Lstm<S> rnn;
  nn::Mlp<S> head;

  static LstmBaseline create(const ModelConfig& cfg, std::uint64_t seed) {
    cfg.validate();
    LstmBaseline m;
    m.config = cfg;
    Rng rng(seed);
    const Eigen::Index in = cfg.state_dim + cfg.total_action_dim();
    m.rnn = nn::Lstm<S>::create(m.store, "lstm.rnn", in, cfg.rnn_hidden, rng);
    m.head = nn::Mlp<S>::create(m.store, "lstm.head", cfg.rnn_hidden, {cfg.policy_hidden, cfg.policy_hidden},
                                cfg.total_action_dim(), rng);
    return m;
  }

  struct Forward {
    ad::Var<S> hidden;       // H x (T+1)*B
    ad::Var<S> prediction;   // sum A x T*B
  };

  template <typename Store>
  Forward forward(ad::Tape<S>& tape, Store& st, const LstmInputs<S>& in) const {
    ad::Var<S> h = rnn(tape, st, tape.constant(in.x), in.steps + 1);
    ad::Var<S> pred = head(tape, st, ad::slice_cols(h, 0, in.steps * in.batch));
    return {h, pred};
  }

  /// Sum of squared errors per trajectory, averaged over the batch.
  template <typename Store>
  std::pair<double, ad::Var<S>> loss_on_tape(ad::Tape<S>& tape, Store& st, const LstmInputs<S>& in) const {
    const Forward f = forward(tape, st, in);
    ad::Var<S> loss = ad::scale(ad::sum(ad::squared_error(f.prediction, in.target)), S(1) / static_cast<S>(in.batch));
    return {static_cast<double>(loss.scalar()), loss};
  }
};

template <typename S>
double lstm_loss_backward(LstmBaseline<S>& model, std::span<const Trajectory* const> batch) {
  const auto in = make_lstm_inputs<S>(model.config, batch);
  ad::Tape<S> tape;
  auto [value, loss] = model.loss_on_tape(tape, model.store, in);
  tape.backward(loss);
  return value;
}

template <typename S>
double lstm_loss(const LstmBaseline<S>& model, std::span<const Trajectory* const> batch) {
  const auto in = make_lstm_inputs<S>(model.config, batch);
  ad::Tape<S> tape;
  return model.loss_on_tape(tape, model.store, in).first;
}

/// Predicted actions, [trajectory][agent] -> T x A_i.
template <typename S>
std::vector<std::vector<Eigen::MatrixXd>> lstm_predict(const LstmBaseline<S>& model,
                                                       std::span<const Trajectory* const> trajs, std::size_t chunk = 128) {
  std::vector<std::vector<Eigen::MatrixXd>> out;
  const auto& c = model.config;
  for (std::size_t start = 0; start < trajs.size(); start += chunk) {
    const auto part = trajs.subspan(start, std::min(chunk, trajs.size() - start));
    const auto in = make_lstm_inputs<S>(c, part);
    ad::Tape<S> tape;
    const auto f = model.forward(tape, model.store, in);
    for (Eigen::Index b = 0; b < in.batch; ++b) {
      std::vector<Eigen::MatrixXd> agents;
      Eigen::Index off = 0;
      for (int i = 0; i < c.n_agents; ++i) {
        const Eigen::Index ai = c.action_dims[static_cast<std::size_t>(i)];
        Eigen::MatrixXd a(in.steps, ai);
        for (Eigen::Index t = 0; t < in.steps; ++t)
          a.row(t) = f.prediction.value().col(t * in.batch + b).segment(off, ai).transpose().template cast<double>();
        off += ai;
        agents.push_back(std::move(a));
      }
      out.push_back(std::move(agents));
    }
  }
  return out;
}

/// Final hidden state, i.e. after consuming [s_T ; a_{T-1}]. One row per trajectory.
template <typename S>
Eigen::MatrixXd lstm_embed(const LstmBaseline<S>& model, std::span<const Trajectory* const> trajs, std::size_t chunk = 256) {
  Eigen::MatrixXd out(static_cast<Eigen::Index>(trajs.size()), model.config.rnn_hidden);
  for (std::size_t start = 0; start < trajs.size(); start += chunk) {
    const auto part = trajs.subspan(start, std::min(chunk, trajs.size() - start));
    const auto in = make_lstm_inputs<S>(model.config, part);
    ad::Tape<S> tape;
    const auto f = model.forward(tape, model.store, in);
    const auto last = f.hidden.value().middleCols(in.steps * in.batch, in.batch);
    out.middleRows(static_cast<Eigen::Index>(start), in.batch) = last.transpose().template cast<double>();
  }
  return out;
}

template <typename S>
Eigen::VectorXd lstm_embed(const LstmBaseline<S>& model, const Trajectory& traj) {
  const Trajectory* p = &traj;
  return lstm_embed(model, std::span<const Trajectory* const>(&p, 1)).row(0).transpose();
}

// ---------------------------------------------------------------------------
// Flat VAE

template <typename S = double>
class FlatVae {
 public:
  using Scalar = S;

  ModelConfig config;
  ad::ParameterStore<S> store;
  JointBlock<S> joint;
  nn::Mlp<S> policy;

  static FlatVae create(const ModelConfig& cfg, std::uint64_t seed) {
    cfg.validate();
    FlatVae m;
    m.config = cfg;
    Rng rng(seed);
    m.joint = JointBlock<S>::create(m.store, cfg, rng);
    m.policy = nn::Mlp<S>::create(m.store, "policy", cfg.state_dim + cfg.d_omega + cfg.n_agents,
                                  {cfg.policy_hidden, cfg.policy_hidden}, 2 * cfg.max_action_dim(), rng);
    return m;
  }

  /// Policy over every (step, agent, trajectory) column; z_omega is D_omega x B.
  template <typename Store>
  typename MohbaModel<S>::Gaussian policy_batch(ad::Tape<S>& tape, Store& st, const BatchTensors<S>& bt,
                                                 ad::Var<S> z_omega) const {
    std::vector<Eigen::Index> idx(bt.repeat_over_steps.size());
    for (std::size_t c = 0; c < idx.size(); ++c) idx[c] = bt.repeat_over_steps[c] % bt.batch;
    ad::Var<S> in =
        ad::concat_rows<S>({tape.constant(bt.states), ad::gather_cols(z_omega, idx), tape.constant(bt.step_onehot)});
    return MohbaModel<S>::split_head(policy(tape, st, in), config.max_action_dim());
  }

  template <typename Store>
  std::pair<ElboParts, ad::Var<S>> elbo_on_tape(ad::Tape<S>& tape, Store& st, const BatchTensors<S>& bt, double beta,
                                                Rng& rng) const {
    const JointGmm<S> q = joint.encode(tape, st, bt.joint_x, bt.steps);
    const JointSample<S> js = joint.sample(tape, st, q, config.kl_samples, rng);
    const auto pi = policy_batch(tape, st, bt, js.z_first);
    ad::Var<S> recon = ad::sum(ad::gaussian_log_prob(bt.actions, pi.mean, pi.log_std, bt.mask));
    ad::Var<S> loss = ad::scale(ad::add(ad::scale(recon, S(-1)), ad::scale(js.kl_total, static_cast<S>(beta))),
                                S(1) / static_cast<S>(bt.batch));
    ElboParts parts;
    parts.recon = static_cast<double>(recon.scalar()) / static_cast<double>(bt.batch);
    parts.kl_joint = static_cast<double>(js.kl_total.scalar()) / static_cast<double>(bt.batch);
    parts.loss = -(parts.recon - beta * parts.kl_joint);
    return {parts, loss};
  }
};

inline LossParts flat_loss_parts(const ElboParts& p) { return {p.loss, p.recon, std::nullopt, p.kl_joint}; }

template <typename S>
LossParts flat_vae_elbo(const FlatVae<S>& model, std::span<const Trajectory* const> batch, double beta, Rng& rng) {
  if (batch.empty()) throw std::invalid_argument("elbo: empty batch");
  const auto bt = make_batch<S>(model.config, batch);
  ad::Tape<S> tape;
  return flat_loss_parts(model.elbo_on_tape(tape, model.store, bt, beta, rng).first);
}

template <typename S>
LossParts flat_vae_elbo_backward(FlatVae<S>& model, std::span<const Trajectory* const> batch, double beta, Rng& rng) {
  if (batch.empty()) throw std::invalid_argument("elbo: empty batch");
  const auto bt = make_batch<S>(model.config, batch);
  ad::Tape<S> tape;
  auto [parts, loss] = model.elbo_on_tape(tape, model.store, bt, beta, rng);
  tape.backward(loss);
  return flat_loss_parts(parts);
}

/// Policy means given the posterior-mean z_omega, [trajectory][agent] -> T x A_i.
template <typename S>
std::vector<std::vector<Eigen::MatrixXd>> flat_vae_reconstruct(const FlatVae<S>& model,
                                                               std::span<const Trajectory* const> trajs,
                                                               std::size_t chunk = 128) {
  std::vector<std::vector<Eigen::MatrixXd>> out;
  const auto& c = model.config;
  for (std::size_t start = 0; start < trajs.size(); start += chunk) {
    const auto part = trajs.subspan(start, std::min(chunk, trajs.size() - start));
    const auto bt = make_batch<S>(c, part);
    ad::Tape<S> tape;
    const JointGmm<S> q = model.joint.encode(tape, model.store, bt.joint_x, bt.steps);
    ad::Matrix<S> zbar(c.d_omega, bt.batch);
    for (Eigen::Index b = 0; b < bt.batch; ++b) zbar.col(b) = model.joint.posterior_column(q, b).mean().template cast<S>();
    const auto pi = model.policy_batch(tape, model.store, bt, tape.constant(zbar));
    for (Eigen::Index b = 0; b < bt.batch; ++b) {
      std::vector<Eigen::MatrixXd> agents;
      for (Eigen::Index i = 0; i < bt.agents; ++i) {
        const Eigen::Index ai = c.action_dims[static_cast<std::size_t>(i)];
        Eigen::MatrixXd a(bt.steps, ai);
        for (Eigen::Index t = 0; t < bt.steps; ++t)
          a.row(t) = pi.mean.value().col(t * bt.agents * bt.batch + i * bt.batch + b).head(ai).transpose().template cast<double>();
        agents.push_back(std::move(a));
      }
      out.push_back(std::move(agents));
    }
  }
  return out;
}

template <typename S>
std::vector<GMMParams> flat_vae_posteriors(const FlatVae<S>& model, std::span<const Trajectory* const> trajs,
                                           std::size_t chunk = 256) {
  std::vector<GMMParams> out;
  for (std::size_t start = 0; start < trajs.size(); start += chunk) {
    const auto part = trajs.subspan(start, std::min(chunk, trajs.size() - start));
    const auto bt = make_batch<S>(model.config, part);
    ad::Tape<S> tape;
    const JointGmm<S> q = model.joint.encode(tape, model.store, bt.joint_x, bt.steps);
    for (Eigen::Index b = 0; b < bt.batch; ++b) out.push_back(model.joint.posterior_column(q, b));
  }
  return out;
}

// ---------------------------------------------------------------------------
// Training and checkpoints

template <typename S>
void train(LstmBaseline<S>& model, TrainerState<S>& state, const TrajectoryDataset& dataset, const TrainConfig& config,
           const std::function<void(const MetricsRow&)>& on_log = {}) {
  model.config.check_meta(dataset.meta());
  const LossFn<S> loss = [&model](std::span<const Trajectory* const> batch, double, Rng&) {
    return LossParts{lstm_loss_backward(model, batch), std::nullopt, std::nullopt, std::nullopt};
  };
  train_loop(model.store, state, dataset, config, loss, on_log);
}

template <typename S>
void train(FlatVae<S>& model, TrainerState<S>& state, const TrajectoryDataset& dataset, const TrainConfig& config,
           const std::function<void(const MetricsRow&)>& on_log = {}) {
  model.config.check_meta(dataset.meta());
  const LossFn<S> loss = [&model](std::span<const Trajectory* const> batch, double beta, Rng& rng) {
    return flat_vae_elbo_backward(model, batch, beta, rng);
  };
  train_loop(model.store, state, dataset, config, loss, on_log);
}

template <typename S>
std::pair<LstmBaseline<S>, TrainerState<S>> lstm_train(const ModelConfig& model_config, const TrajectoryDataset& dataset,
                                                       const TrainConfig& config,
                                                       const std::function<void(const MetricsRow&)>& on_log = {}) {
  ModelConfig mc = model_config;
  mc.adopt(dataset.meta());
  auto model = LstmBaseline<S>::create(mc, init_seed(config));
  auto state = fresh_trainer(config, model.store);
  train(model, state, dataset, config, on_log);
  return {std::move(model), std::move(state)};
}

template <typename S>
std::pair<FlatVae<S>, TrainerState<S>> flat_vae_train(const ModelConfig& model_config, const TrajectoryDataset& dataset,
                                                      const TrainConfig& config,
                                                      const std::function<void(const MetricsRow&)>& on_log = {}) {
  ModelConfig mc = model_config;
  mc.adopt(dataset.meta());
  auto model = FlatVae<S>::create(mc, init_seed(config));
  auto state = fresh_trainer(config, model.store);
  train(model, state, dataset, config, on_log);
  return {std::move(model), std::move(state)};
}

template <typename Model, typename S>
Checkpoint make_baseline_checkpoint(const std::string& kind, const Model& model, const TrainerState<S>& state,
                                    const TrainConfig& config) {
  Checkpoint ckpt;
  ckpt.header["kind"] = kind;
  ckpt.header["model_config"] = to_json(model.config);
  ckpt.header["train_config"] = to_json(config);
  append_store(ckpt, model.store);
  append_trainer(ckpt, state, model.store);
  return ckpt;
}

template <typename S>
Checkpoint make_checkpoint(const LstmBaseline<S>& model, const TrainerState<S>& state, const TrainConfig& config) {
  return make_baseline_checkpoint("lstm", model, state, config);
}

template <typename S>
Checkpoint make_checkpoint(const FlatVae<S>& model, const TrainerState<S>& state, const TrainConfig& config) {
  return make_baseline_checkpoint("flat_vae", model, state, config);
}

template <typename Model>
struct LoadedBaseline {
  Model model;
  TrainerState<typename Model::Scalar> state;
  TrainConfig config;
};

template <typename Model>
LoadedBaseline<Model> load_baseline_checkpoint(const Checkpoint& ckpt, const std::string& kind) {
  check_kind(ckpt, kind);
  LoadedBaseline<Model> out;
  ModelConfig mc;
  try {
    mc = model_config_from_json(ckpt.header.at("model_config"));
    out.config = train_config_from_json(ckpt.header.at("train_config"));
  } catch (const std::exception& e) {
    throw CheckpointError(std::string("checkpoint config unreadable: ") + e.what());
  }
  out.model = Model::create(mc, 0);
  restore_store(ckpt, out.model.store);
  out.state = restore_trainer(ckpt, out.model.store);
  return out;
}

}  // namespace mohba
