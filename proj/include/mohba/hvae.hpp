#pragma once

// Hierarchical behavior model: a joint latent z_omega with a mixture
// posterior and a free mixture prior, per-agent latents z_alpha^i whose
// prior is conditioned on z_omega, and latent-conditioned Gaussian policies.
// Local encoder, local prior and policy are shared across agents; the agent
// one-hot is always the last N rows of their inputs.

#include "mohba/autodiff.hpp"
#include "mohba/config.hpp"
#include "mohba/distributions.hpp"
#include "mohba/nn.hpp"
#include "mohba/rng.hpp"
#include "mohba/trajdata.hpp"

#include <Eigen/Dense>
#include <nlohmann/json.hpp>

#include <algorithm>
#include <numeric>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace mohba {

struct ModelConfig {
  int d_omega = 4;
  int d_alpha = 4;
  int gmm_components = 8;
  int rnn_hidden = 64;
  int mlp_hidden = 64;
  int policy_hidden = 32;
  int kl_samples = 1;
  int n_agents = 1;
  int state_dim = 1;
  std::vector<int> action_dims{1};

  int max_action_dim() const { return *std::max_element(action_dims.begin(), action_dims.end()); }
  int total_action_dim() const { return std::accumulate(action_dims.begin(), action_dims.end(), 0); }

  void adopt(const DatasetMeta& meta) {
    n_agents = meta.n_agents;
    state_dim = meta.state_dim;
    action_dims = meta.action_dims;
  }

  void validate() const {
    if (d_omega < 1 || d_alpha < 1 || gmm_components < 1) throw std::invalid_argument("model: latent sizes must be >= 1");
    if (rnn_hidden < 1 || mlp_hidden < 1 || policy_hidden < 1) throw std::invalid_argument("model: hidden sizes must be >= 1");
    if (kl_samples < 1) throw std::invalid_argument("model: kl_samples must be >= 1");
    if (n_agents < 1 || state_dim < 1 || static_cast<int>(action_dims.size()) != n_agents)
      throw std::invalid_argument("model: agent/state/action dims inconsistent");
  }

  void check_meta(const DatasetMeta& meta) const {
    if (meta.n_agents != n_agents || meta.state_dim != state_dim || meta.action_dims != action_dims)
      throw DataError("dataset meta does not match the model (n_agents/state_dim/action_dims)");
  }

  bool operator==(const ModelConfig&) const = default;
};

inline nlohmann::json to_json(const ModelConfig& c) {
  return {{"d_omega", c.d_omega},         {"d_alpha", c.d_alpha},       {"gmm_components", c.gmm_components},
          {"rnn_hidden", c.rnn_hidden},   {"mlp_hidden", c.mlp_hidden}, {"policy_hidden", c.policy_hidden},
          {"kl_samples", c.kl_samples},   {"n_agents", c.n_agents},     {"state_dim", c.state_dim},
          {"action_dims", c.action_dims}};
}

/// Reads the hyperparameter fields; agent/state/action dims are accepted
/// too but normally come from the dataset.
inline void read_model_config(ConfigReader r, ModelConfig& c) {
  r.get("d_omega", c.d_omega);
  r.get("d_alpha", c.d_alpha);
  r.get("gmm_components", c.gmm_components);
  r.get("rnn_hidden", c.rnn_hidden);
  r.get("mlp_hidden", c.mlp_hidden);
  r.get("policy_hidden", c.policy_hidden);
  r.get("kl_samples", c.kl_samples);
  r.get("n_agents", c.n_agents);
  r.get("state_dim", c.state_dim);
  r.get("action_dims", c.action_dims);
  r.finish();
  r.require(c.d_omega >= 1, "d_omega", "must be >= 1");
  r.require(c.d_alpha >= 1, "d_alpha", "must be >= 1");
  r.require(c.gmm_components >= 1, "gmm_components", "must be >= 1");
  r.require(c.rnn_hidden >= 1 && c.mlp_hidden >= 1 && c.policy_hidden >= 1, "rnn_hidden", "hidden sizes must be >= 1");
  r.require(c.kl_samples >= 1, "kl_samples", "must be >= 1");
}

inline ModelConfig model_config_from_json(const nlohmann::json& j) {
  ModelConfig c;
  read_model_config(ConfigReader(j, "model_config"), c);
  c.validate();
  return c;
}

// ---------------------------------------------------------------------------
// Batch layout

/// Dense tensors for a batch of B trajectories of length T with N agents.
///
/// Joint columns are t*B + b. Agent-level columns are t*N*B + i*B + b, and
/// per-agent summaries (one column per agent and trajectory) are i*B + b.
template <typename S>
struct BatchTensors {
  Eigen::Index batch = 0;
  Eigen::Index steps = 0;
  Eigen::Index agents = 0;
  ad::Matrix<S> joint_x;      // (D + sum A_i) x T*B
  ad::Matrix<S> local_x;      // (D + A_max + N) x T*N*B
  ad::Matrix<S> states;       // D x T*N*B
  ad::Matrix<S> step_onehot;  // N x T*N*B
  ad::Matrix<S> agent_onehot;  // N x N*B
  ad::Matrix<S> actions;      // A_max x T*N*B, zero padded
  ad::Matrix<S> mask;         // same shape as actions; empty when every agent has A_max dims
  std::vector<Eigen::Index> repeat_over_steps;  // T*N*B -> N*B
};

template <typename S>
BatchTensors<S> make_batch(const ModelConfig& cfg, std::span<const Trajectory* const> batch) {
  if (batch.empty()) throw std::invalid_argument("batch is empty");
  BatchTensors<S> bt;
  const Eigen::Index nb = static_cast<Eigen::Index>(batch.size());
  const Eigen::Index steps = batch.front()->episode_len();
  const Eigen::Index n = cfg.n_agents;
  const Eigen::Index d = cfg.state_dim;
  const Eigen::Index amax = cfg.max_action_dim();
  const Eigen::Index atot = cfg.total_action_dim();
  bt.batch = nb;
  bt.steps = steps;
  bt.agents = n;
  for (const Trajectory* tr : batch) {
    if (tr->episode_len() != steps || tr->states.cols() != d || tr->n_agents() != n)
      throw DataError("trajectory shape does not match the model");
    for (Eigen::Index i = 0; i < n; ++i)
      if (tr->actions[static_cast<std::size_t>(i)].cols() != cfg.action_dims[static_cast<std::size_t>(i)])
        throw DataError("trajectory action dims do not match the model");
  }

  const bool ragged = atot != amax * n;
  const Eigen::Index agent_cols = steps * n * nb;
  bt.joint_x.resize(d + atot, steps * nb);
  bt.local_x.setZero(d + amax + n, agent_cols);
  bt.states.resize(d, agent_cols);
  bt.step_onehot.setZero(n, agent_cols);
  bt.agent_onehot.setZero(n, n * nb);
  bt.actions.setZero(amax, agent_cols);
  if (ragged) bt.mask.setZero(amax, agent_cols);
  bt.repeat_over_steps.resize(static_cast<std::size_t>(agent_cols));

  for (Eigen::Index b = 0; b < nb; ++b) {
    const Trajectory& tr = *batch[static_cast<std::size_t>(b)];
    for (Eigen::Index t = 0; t < steps; ++t) {
      auto jc = bt.joint_x.col(t * nb + b);
      jc.head(d) = tr.states.row(t).transpose().cast<S>();
      Eigen::Index off = d;
      for (Eigen::Index i = 0; i < n; ++i) {
        const auto& a = tr.actions[static_cast<std::size_t>(i)];
        const Eigen::Index ai = a.cols();
        jc.segment(off, ai) = a.row(t).transpose().cast<S>();
        off += ai;
        const Eigen::Index c = t * n * nb + i * nb + b;
        bt.local_x.col(c).head(d) = tr.states.row(t).transpose().cast<S>();
        bt.local_x.col(c).segment(d, ai) = a.row(t).transpose().cast<S>();
        bt.local_x(d + amax + i, c) = S(1);
        bt.states.col(c) = tr.states.row(t).transpose().cast<S>();
        bt.step_onehot(i, c) = S(1);
        bt.actions.col(c).head(ai) = a.row(t).transpose().cast<S>();
        if (ragged) bt.mask.col(c).head(ai).setOnes();
        bt.repeat_over_steps[static_cast<std::size_t>(c)] = i * nb + b;
      }
    }
    for (Eigen::Index i = 0; i < n; ++i) bt.agent_onehot(i, i * nb + b) = S(1);
  }
  return bt;
}

// ---------------------------------------------------------------------------
// Joint latent block, shared with the flat VAE baseline

template <typename S>
struct JointGmm {
  ad::Var<S> logits;    // M x B
  ad::Var<S> means;     // M*D x B
  ad::Var<S> log_stds;  // M*D x B, clamped
};

template <typename S>
struct JointSample {
  ad::Var<S> z_first;   // D x B, the first draw per trajectory
  ad::Var<S> kl_total;  // 1x1, sum over the batch of the per-trajectory MC estimate
};

template <typename S>
struct JointBlock {
  nn::BiLstm<S> encoder;
  nn::Mlp<S> head;
  int prior_logits = -1;
  int prior_means = -1;
  int prior_log_stds = -1;
  Eigen::Index components = 0;
  Eigen::Index dim = 0;

  static JointBlock create(ad::ParameterStore<S>& store, const ModelConfig& cfg, Rng& rng) {
    JointBlock j;
    j.components = cfg.gmm_components;
    j.dim = cfg.d_omega;
    const Eigen::Index in = cfg.state_dim + cfg.total_action_dim();
    j.encoder = nn::BiLstm<S>::create(store, "joint_encoder.rnn", in, cfg.rnn_hidden, rng);
    j.head = nn::Mlp<S>::create(store, "joint_encoder.head", j.encoder.out_dim(), {cfg.mlp_hidden, cfg.mlp_hidden},
                                j.components * (1 + 2 * j.dim), rng);
    j.prior_logits = store.add("joint_prior.logits", j.components, 1);
    j.prior_means = store.add("joint_prior.means", j.components * j.dim, 1);
    j.prior_log_stds = store.add("joint_prior.log_stds", j.components * j.dim, 1);
    // Spread the prior components so they do not start out identical.
    auto& mu = store[j.prior_means].value;
    for (Eigen::Index r = 0; r < mu.rows(); ++r) mu(r, 0) = static_cast<S>(2.0 * rng.uniform() - 1.0);
    return j;
  }

  template <typename Store>
  JointGmm<S> encode(ad::Tape<S>& tape, Store& store, const ad::Matrix<S>& joint_x, Eigen::Index steps) const {
    ad::Var<S> x = tape.constant(joint_x);
    ad::Var<S> out = head(tape, store, encoder.summary(tape, store, x, steps));
    const Eigen::Index md = components * dim;
    return {ad::slice_rows(out, 0, components), ad::slice_rows(out, components, md),
            ad::clamp(ad::slice_rows(out, components + md, md), S(kLogStdMin), S(kLogStdMax))};
  }

  template <typename Store>
  JointGmm<S> prior(ad::Tape<S>& tape, Store& store) const {
    return {tape.parameter(store, prior_logits), tape.parameter(store, prior_means),
            ad::clamp(tape.parameter(store, prior_log_stds), S(kLogStdMin), S(kLogStdMax))};
  }

  /// Draws kl_samples latents per trajectory (per draw: one uniform for the
  /// component, then D normals) and forms the MC estimate of KL(q || prior).
  template <typename Store>
  JointSample<S> sample(ad::Tape<S>& tape, Store& store, const JointGmm<S>& q, int kl_samples, Rng& rng) const {
    const Eigen::Index nb = q.logits.cols();
    const Eigen::Index cols = nb * kl_samples;
    std::vector<Eigen::Index> rep(static_cast<std::size_t>(cols));
    std::vector<int> comp(static_cast<std::size_t>(cols));
    ad::Matrix<S> eps(dim, cols);
    for (Eigen::Index b = 0; b < nb; ++b) {
      const auto lg = q.logits.value().col(b).template cast<double>();
      const Eigen::ArrayXd e = (lg.array() - lg.maxCoeff()).exp();
      const Eigen::VectorXd w = (e / e.sum()).matrix();
      for (int s = 0; s < kl_samples; ++s) {
        const Eigen::Index c = b * kl_samples + s;
        rep[static_cast<std::size_t>(c)] = b;
        comp[static_cast<std::size_t>(c)] =
            static_cast<int>(rng.categorical(std::span<const double>(w.data(), static_cast<std::size_t>(w.size()))));
        for (Eigen::Index k = 0; k < dim; ++k) eps(k, c) = static_cast<S>(rng.normal());
      }
    }
    const bool repeated = kl_samples > 1;
    auto expand = [&](ad::Var<S> v) { return repeated ? ad::gather_cols(v, rep) : v; };
    ad::Var<S> logits = expand(q.logits);
    ad::Var<S> means = expand(q.means);
    ad::Var<S> log_stds = expand(q.log_stds);
    ad::Var<S> z = ad::reparameterize(ad::select_block_rows(means, comp, dim), ad::select_block_rows(log_stds, comp, dim), eps);

    const JointGmm<S> p = prior(tape, store);
    ad::Var<S> log_q = ad::gmm_log_prob(z, logits, means, log_stds);
    ad::Var<S> log_p = ad::gmm_log_prob(z, ad::broadcast_cols(p.logits, cols), ad::broadcast_cols(p.means, cols),
                                        ad::broadcast_cols(p.log_stds, cols));
    ad::Var<S> kl = ad::scale(ad::sum(ad::add(log_q, ad::scale(log_p, S(-1)))), S(1) / static_cast<S>(kl_samples));

    ad::Var<S> z_first = z;
    if (repeated) {
      std::vector<Eigen::Index> first(static_cast<std::size_t>(nb));
      for (Eigen::Index b = 0; b < nb; ++b) first[static_cast<std::size_t>(b)] = b * kl_samples;
      z_first = ad::gather_cols(z, first);
    }
    return {z_first, kl};
  }

  GMMParams posterior_column(const JointGmm<S>& q, Eigen::Index b) const {
    Eigen::MatrixXd means(components, dim);
    Eigen::MatrixXd log_stds(components, dim);
    for (Eigen::Index m = 0; m < components; ++m) {
      means.row(m) = q.means.value().col(b).segment(m * dim, dim).transpose().template cast<double>();
      log_stds.row(m) = q.log_stds.value().col(b).segment(m * dim, dim).transpose().template cast<double>();
    }
    return {q.logits.value().col(b).template cast<double>(), means, log_stds};
  }

  GMMParams prior_params(const ad::ParameterStore<S>& store) const {
    ad::Tape<S> tape;
    return posterior_column(prior(tape, store), 0);
  }
};

// ---------------------------------------------------------------------------
// The model

struct ElboParts {
  double loss = 0.0;
  double recon = 0.0;
  double kl_local = 0.0;
  double kl_joint = 0.0;
};

template <typename S = double>
class MohbaModel {
 public:
  using Scalar = S;

  ModelConfig config;
  ad::ParameterStore<S> store;
  JointBlock<S> joint;
  nn::BiLstm<S> local_encoder;
  nn::Mlp<S> local_head;
  nn::Mlp<S> local_prior_net;
  nn::Mlp<S> policy;

  static MohbaModel create(const ModelConfig& cfg, std::uint64_t seed) {
    cfg.validate();
    MohbaModel m;
    m.config = cfg;
    Rng rng(seed);
    const Eigen::Index n = cfg.n_agents;
    const Eigen::Index h = cfg.mlp_hidden;
    m.joint = JointBlock<S>::create(m.store, cfg, rng);
    m.local_encoder =
        nn::BiLstm<S>::create(m.store, "local_encoder.rnn", cfg.state_dim + cfg.max_action_dim() + n, cfg.rnn_hidden, rng);
    m.local_head = nn::Mlp<S>::create(m.store, "local_encoder.head", m.local_encoder.out_dim(), {h, h}, 2 * cfg.d_alpha, rng);
    m.local_prior_net = nn::Mlp<S>::create(m.store, "local_prior", cfg.d_omega + n, {h, h}, 2 * cfg.d_alpha, rng);
    m.policy = nn::Mlp<S>::create(m.store, "policy", cfg.state_dim + cfg.d_alpha + n,
                                  {cfg.policy_hidden, cfg.policy_hidden}, 2 * cfg.max_action_dim(), rng);
    return m;
  }

  struct Gaussian {
    ad::Var<S> mean;
    ad::Var<S> log_std;
  };

  /// Splits a stacked [mean; log_std] head output and clamps the log-std.
  static Gaussian split_head(ad::Var<S> out, Eigen::Index dim) {
    return {ad::slice_rows(out, 0, dim), ad::clamp(ad::slice_rows(out, dim, dim), S(kLogStdMin), S(kLogStdMax))};
  }

  template <typename Store>
  Gaussian encode_local_batch(ad::Tape<S>& tape, Store& st, const BatchTensors<S>& bt) const {
    ad::Var<S> x = tape.constant(bt.local_x);
    return split_head(local_head(tape, st, local_encoder.summary(tape, st, x, bt.steps)), config.d_alpha);
  }

  /// z_omega is D_omega x B; the prior is evaluated for every (agent, trajectory) column.
  template <typename Store>
  Gaussian local_prior_batch(ad::Tape<S>& tape, Store& st, const BatchTensors<S>& bt, ad::Var<S> z_omega) const {
    std::vector<Eigen::Index> idx(static_cast<std::size_t>(bt.agents * bt.batch));
    for (Eigen::Index c = 0; c < static_cast<Eigen::Index>(idx.size()); ++c) idx[static_cast<std::size_t>(c)] = c % bt.batch;
    ad::Var<S> in = ad::concat_rows<S>({ad::gather_cols(z_omega, idx), tape.constant(bt.agent_onehot)});
    return split_head(local_prior_net(tape, st, in), config.d_alpha);
  }

  /// Policy over every (step, agent, trajectory) column; z_alpha is D_alpha x N*B.
  template <typename Store>
  Gaussian policy_batch(ad::Tape<S>& tape, Store& st, const BatchTensors<S>& bt, ad::Var<S> z_alpha) const {
    ad::Var<S> in = ad::concat_rows<S>(
        {tape.constant(bt.states), ad::gather_cols(z_alpha, bt.repeat_over_steps), tape.constant(bt.step_onehot)});
    return split_head(policy(tape, st, in), config.max_action_dim());
  }

  template <typename Store>
  std::pair<ElboParts, ad::Var<S>> elbo_on_tape(ad::Tape<S>& tape, Store& st, const BatchTensors<S>& bt, double beta,
                                                Rng& rng) const {
    const JointGmm<S> q_joint = joint.encode(tape, st, bt.joint_x, bt.steps);
    const JointSample<S> js = joint.sample(tape, st, q_joint, config.kl_samples, rng);

    const Gaussian q_local = encode_local_batch(tape, st, bt);
    const Eigen::Index da = config.d_alpha;
    ad::Matrix<S> eps(da, bt.agents * bt.batch);
    for (Eigen::Index b = 0; b < bt.batch; ++b)
      for (Eigen::Index i = 0; i < bt.agents; ++i)
        for (Eigen::Index k = 0; k < da; ++k) eps(k, i * bt.batch + b) = static_cast<S>(rng.normal());
    ad::Var<S> z_alpha = ad::reparameterize(q_local.mean, q_local.log_std, eps);

    const Gaussian p_local = local_prior_batch(tape, st, bt, js.z_first);
    ad::Var<S> kl_local = ad::sum(ad::gaussian_kl(q_local.mean, q_local.log_std, p_local.mean, p_local.log_std));

    const Gaussian pi = policy_batch(tape, st, bt, z_alpha);
    ad::Var<S> recon = ad::sum(ad::gaussian_log_prob(bt.actions, pi.mean, pi.log_std, bt.mask));

    const S inv_b = S(1) / static_cast<S>(bt.batch);
    const S b = static_cast<S>(beta);
    ad::Var<S> loss = ad::scale(ad::add(ad::scale(recon, S(-1)), ad::scale(ad::add(kl_local, js.kl_total), b)), inv_b);

    ElboParts parts;
    parts.recon = static_cast<double>(recon.scalar()) / static_cast<double>(bt.batch);
    parts.kl_local = static_cast<double>(kl_local.scalar()) / static_cast<double>(bt.batch);
    parts.kl_joint = static_cast<double>(js.kl_total.scalar()) / static_cast<double>(bt.batch);
    parts.loss = -(parts.recon - beta * (parts.kl_local + parts.kl_joint));
    return {parts, loss};
  }
};

// ---------------------------------------------------------------------------
// Loss entry points

template <typename S>
std::vector<const Trajectory*> as_pointers(std::span<const Trajectory> batch) {
  std::vector<const Trajectory*> ptrs;
  ptrs.reserve(batch.size());
  for (const auto& t : batch) ptrs.push_back(&t);
  return ptrs;
}

/// Negative bound and its parts; values only.
template <typename S>
ElboParts elbo(const MohbaModel<S>& model, std::span<const Trajectory* const> batch, double beta, Rng& rng) {
  if (batch.empty()) throw std::invalid_argument("elbo: empty batch");
  const auto bt = make_batch<S>(model.config, batch);
  ad::Tape<S> tape;
  return model.elbo_on_tape(tape, model.store, bt, beta, rng).first;
}

template <typename S>
ElboParts elbo(const MohbaModel<S>& model, std::span<const Trajectory> batch, double beta, Rng& rng) {
  const auto ptrs = as_pointers<S>(batch);
  return elbo(model, std::span<const Trajectory* const>(ptrs), beta, rng);
}

/// Same as elbo() but also adds d(loss)/d(theta) into the parameter grads.
template <typename S>
ElboParts elbo_backward(MohbaModel<S>& model, std::span<const Trajectory* const> batch, double beta, Rng& rng) {
  if (batch.empty()) throw std::invalid_argument("elbo: empty batch");
  const auto bt = make_batch<S>(model.config, batch);
  ad::Tape<S> tape;
  auto [parts, loss] = model.elbo_on_tape(tape, model.store, bt, beta, rng);
  tape.backward(loss);
  return parts;
}

// ---------------------------------------------------------------------------
// Value-level queries

struct Posteriors {
  std::vector<GMMParams> joint;                       // per trajectory
  std::vector<std::vector<DiagGaussianParams>> local;  // [trajectory][agent]
};

/// Deterministic posterior parameters for a list of trajectories.
template <typename S>
Posteriors posteriors(const MohbaModel<S>& model, std::span<const Trajectory* const> trajs, std::size_t chunk = 256) {
  Posteriors out;
  for (std::size_t start = 0; start < trajs.size(); start += chunk) {
    const auto part = trajs.subspan(start, std::min(chunk, trajs.size() - start));
    const auto bt = make_batch<S>(model.config, part);
    ad::Tape<S> tape;
    const JointGmm<S> q = model.joint.encode(tape, model.store, bt.joint_x, bt.steps);
    const auto loc = model.encode_local_batch(tape, model.store, bt);
    for (Eigen::Index b = 0; b < bt.batch; ++b) {
      out.joint.push_back(model.joint.posterior_column(q, b));
      std::vector<DiagGaussianParams> agents;
      for (Eigen::Index i = 0; i < bt.agents; ++i) {
        const Eigen::Index c = i * bt.batch + b;
        agents.emplace_back(loc.mean.value().col(c).template cast<double>(), loc.log_std.value().col(c).template cast<double>());
      }
      out.local.push_back(std::move(agents));
    }
  }
  return out;
}

template <typename S>
GMMParams encode_joint(const MohbaModel<S>& model, const Trajectory& traj) {
  const Trajectory* p = &traj;
  return posteriors(model, std::span<const Trajectory* const>(&p, 1)).joint.front();
}

template <typename S>
DiagGaussianParams encode_local(const MohbaModel<S>& model, const Trajectory& traj, int agent) {
  if (agent < 0 || agent >= model.config.n_agents) throw std::out_of_range("encode_local: agent index out of range");
  const Trajectory* p = &traj;
  return posteriors(model, std::span<const Trajectory* const>(&p, 1)).local.front()[static_cast<std::size_t>(agent)];
}

template <typename S>
GMMParams joint_prior(const MohbaModel<S>& model) {
  return model.joint.prior_params(model.store);
}

namespace detail {

inline Eigen::VectorXd onehot(int n, int i) {
  Eigen::VectorXd v = Eigen::VectorXd::Zero(n);
  v(i) = 1.0;
  return v;
}

template <typename S, typename Net>
DiagGaussianParams run_gaussian_head(const MohbaModel<S>& model, const Net& net, const Eigen::VectorXd& input,
                                     Eigen::Index dim) {
  ad::Tape<S> tape;
  ad::Var<S> out = net(tape, model.store, tape.constant(input.cast<S>()));
  const Eigen::VectorXd v = out.value().col(0).template cast<double>();
  return {v.head(dim), v.segment(dim, dim)};
}

}  // namespace detail

template <typename S>
DiagGaussianParams local_prior(const MohbaModel<S>& model, const Eigen::VectorXd& z_omega, int agent) {
  const auto& c = model.config;
  if (z_omega.size() != c.d_omega) throw std::invalid_argument("local_prior: z_omega has the wrong dimension");
  if (agent < 0 || agent >= c.n_agents) throw std::out_of_range("local_prior: agent index out of range");
  Eigen::VectorXd in(c.d_omega + c.n_agents);
  in << z_omega, detail::onehot(c.n_agents, agent);
  return detail::run_gaussian_head(model, model.local_prior_net, in, c.d_alpha);
}

/// Policy head over a_t^i, restricted to agent i's action dims.
template <typename S>
DiagGaussianParams policy_params(const MohbaModel<S>& model, const Eigen::VectorXd& state, const Eigen::VectorXd& z_alpha,
                                 int agent) {
  const auto& c = model.config;
  if (agent < 0 || agent >= c.n_agents) throw std::out_of_range("policy: agent index out of range");
  if (state.size() != c.state_dim || z_alpha.size() != c.d_alpha) throw std::invalid_argument("policy: input dim mismatch");
  Eigen::VectorXd in(c.state_dim + c.d_alpha + c.n_agents);
  in << state, z_alpha, detail::onehot(c.n_agents, agent);
  const auto full = detail::run_gaussian_head(model, model.policy, in, c.max_action_dim());
  const Eigen::Index ai = c.action_dims[static_cast<std::size_t>(agent)];
  return {full.mean.head(ai), full.log_std.head(ai)};
}

template <typename S>
double policy_log_prob(const MohbaModel<S>& model, const Eigen::VectorXd& state, const Eigen::VectorXd& action,
                       const Eigen::VectorXd& z_alpha, int agent) {
  const auto p = policy_params(model, state, z_alpha, agent);
  if (action.size() != p.dim()) throw std::invalid_argument("policy_log_prob: action has the wrong dimension");
  return gaussian_log_density(p, action);
}

/// Policy means for every step and agent given the posterior-mean z_alpha.
/// Result is [trajectory][agent] -> T x A_i.
template <typename S>
std::vector<std::vector<Eigen::MatrixXd>> reconstruct_actions(const MohbaModel<S>& model,
                                                              std::span<const Trajectory* const> trajs,
                                                              std::size_t chunk = 128) {
  std::vector<std::vector<Eigen::MatrixXd>> out;
  const auto& c = model.config;
  for (std::size_t start = 0; start < trajs.size(); start += chunk) {
    const auto part = trajs.subspan(start, std::min(chunk, trajs.size() - start));
    const auto bt = make_batch<S>(c, part);
    ad::Tape<S> tape;
    const auto loc = model.encode_local_batch(tape, model.store, bt);
    const auto pi = model.policy_batch(tape, model.store, bt, loc.mean);
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

}  // namespace mohba
