// Acceptance gate: one PASS/FAIL line per criterion, exit status = number of
// failures. Heavy criteria train desk-scale models in float32.

#include "fd_check.hpp"

#include "mohba/baselines.hpp"
#include "mohba/behaviorgen.hpp"
#include "mohba/concepts.hpp"
#include "mohba/distributions.hpp"
#include "mohba/envs.hpp"
#include "mohba/evalmetrics.hpp"
#include "mohba/hvae.hpp"
#include "mohba/training.hpp"
#include "mohba/trajdata.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <numeric>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

using namespace mohba;

namespace {

using Clock = std::chrono::steady_clock;

struct Verdict {
  bool pass = false;
  std::string detail;
};

std::string fmt(const char* f, auto... args) {
  char buf[512];
  std::snprintf(buf, sizeof buf, f, args...);
  return buf;
}

double median3(std::vector<double> v) {
  std::sort(v.begin(), v.end());
  return v[v.size() / 2];
}

// ---------------------------------------------------------------------------
// Shared desk-scale setups

CorpusConfig hill_corpus() {
  CorpusConfig c;
  c.domain = Domain::hill;
  c.n_runs = 30;
  c.trajectories_per_run = 40;
  c.seed = 1;
  return c;
}

CorpusConfig coord_corpus() {
  CorpusConfig c = hill_corpus();
  c.domain = Domain::coord;
  c.seed = 2;
  return c;
}

ModelConfig desk_model() {
  ModelConfig m;
  m.rnn_hidden = 32;
  m.mlp_hidden = 32;
  return m;
}

// The lower of the two KL weights swept for the paper's models.
constexpr double kBetaMax = 1e-4;
constexpr long kDeskSteps = 20000;

TrainConfig desk_train(long steps, std::uint64_t seed, double beta_max) {
  TrainConfig t;
  t.steps = steps;
  t.batch_size = 32;
  t.beta_max = beta_max;
  t.anneal_period = 5000;
  t.seed = seed;
  t.float32 = true;
  return t;
}

std::vector<std::size_t> converged_rows(const CorpusConfig& c, const TrajectoryDataset& ds) {
  std::vector<std::size_t> rows;
  for (std::size_t k = 0; k < ds.size(); ++k)
    if (is_converged(c, ds[k])) rows.push_back(k);
  return rows;
}

struct Trained {
  CorpusConfig corpus;
  TrajectoryDataset data;
  MohbaModel<float> model;
  EmbeddingTable embeddings;
  double seconds = 0.0;
};

Trained train_desk(const CorpusConfig& corpus, long steps) {
  Trained t{corpus, generate_corpus(corpus), {}, {}, 0.0};
  const auto t0 = Clock::now();
  t.model = train_new<float>(desk_model(), t.data, desk_train(steps, 7, kBetaMax)).first;
  t.embeddings = embed_dataset(t.model, t.data, "mohba");
  t.seconds = std::chrono::duration<double>(Clock::now() - t0).count();
  return t;
}

// ---------------------------------------------------------------------------
// 1. ELBO gradients

Verdict elbo_gradients() {
  ModelConfig c;
  c.d_omega = 2;
  c.d_alpha = 2;
  c.rnn_hidden = 4;
  c.mlp_hidden = 4;
  c.policy_hidden = 4;
  c.n_agents = 2;
  c.state_dim = 4;
  c.action_dims = {2, 2};
  const int steps = 3;
  auto model = MohbaModel<double>::create(c, 101);
  fdcheck::jitter(model.store, 102);

  Rng data_rng(103);
  std::vector<Trajectory> batch(2);
  for (auto& t : batch) {
    t.states = Eigen::MatrixXd(steps + 1, c.state_dim);
    for (Eigen::Index k = 0; k < t.states.size(); ++k) t.states.data()[k] = data_rng.normal();
    for (int a : c.action_dims) {
      Eigen::MatrixXd m(steps, a);
      for (Eigen::Index k = 0; k < m.size(); ++k) m.data()[k] = 0.3 * data_rng.normal();
      t.actions.push_back(m);
    }
  }
  const std::vector<const Trajectory*> ptrs{&batch[0], &batch[1]};
  auto loss = [&]() {
    Rng frozen(104);
    return elbo_backward(model, std::span<const Trajectory* const>(ptrs), 0.5, frozen).loss;
  };
  const auto rep = fdcheck::fd_check(model.store, loss, 1e-4);
  const bool all = rep.checked == model.store.total_size();
  return {all && rep.max_rel_error < 1e-3,
          fmt("max relative error %.3g over %ld entries (worst %s)", rep.max_rel_error, rep.checked, rep.worst.c_str())};
}

// ---------------------------------------------------------------------------
// 2. KL oracles

Verdict kl_oracles() {
  const DiagGaussianParams n01(Eigen::VectorXd::Zero(1), Eigen::VectorXd::Zero(1));
  const DiagGaussianParams n11(Eigen::VectorXd::Ones(1), Eigen::VectorXd::Zero(1));
  const double closed_unit = gaussian_kl(n01, n11);

  Eigen::VectorXd mq(2), lq(2), mp(2), lp(2);
  mq << 0.3, -0.2;
  lq << -0.4, 0.1;
  mp << -0.5, 0.6;
  lp << 0.2, -0.3;
  const DiagGaussianParams q(mq, lq), p(mp, lp);
  const double closed = gaussian_kl(q, p);
  auto single = [](const DiagGaussianParams& g) {
    return GMMParams(Eigen::VectorXd::Zero(1), g.mean.transpose(), g.log_std.transpose());
  };
  Rng rng(201);
  const McEstimate mc = gmm_kl_mc(single(q), single(p), 100000, rng);

  Eigen::MatrixXd means(3, 2), logs(3, 2);
  means << -1, 0, 0.5, 0.5, 1.5, -1;
  logs << -0.5, 0, 0.2, -0.1, 0, 0.3;
  const GMMParams mix(Eigen::Vector3d(0.2, -0.4, 0.1), means, logs);
  const McEstimate self = gmm_kl_mc(mix, mix, 100000, rng);

  const bool ok_unit = closed_unit == 0.5;
  const bool ok_mc = std::abs(mc.value - closed) <= 3.0 * mc.std_error;
  const bool ok_self = std::abs(self.value) <= 3.0 * self.std_error;
  return {ok_unit && ok_mc && ok_self,
          fmt("KL(N(0,1)||N(1,1)) = %.17g; M=1: MC %.5f vs closed %.5f (SE %.5f); KL(q||q) MC %.3g (SE %.3g)", closed_unit,
              mc.value, closed, mc.std_error, self.value, self.std_error)};
}

// ---------------------------------------------------------------------------
// 3. Coordination payoffs

Verdict coordination_payoffs() {
  // Rows: agent 0 in A, B, C; columns: agent 1 in A, B, C.
  const double table[3][3][2] = {{{1, 1}, {1, 1}, {0, 0}}, {{1, 1}, {0, 0}, {0, 0}}, {{0, 0}, {0, 0}, {0, 0}}};
  const CoordGameConfig cfg;
  int matched = 0;
  for (int a = 0; a < 3; ++a)
    for (int b = 0; b < 3; ++b) {
      const auto r = coord_reward(static_cast<Region>(a), static_cast<Region>(b), cfg);
      matched += r.first == table[a][b][0] && r.second == table[a][b][1];
    }
  return {matched == 9, fmt("%d/9 entries match", matched)};
}

// ---------------------------------------------------------------------------
// 4. Hill-climbing local clusters

Verdict hill_clusters(const Trained& hill) {
  const auto rows = converged_rows(hill.corpus, hill.data);
  double worst = 1.0;
  std::string per_agent;
  for (std::size_t i = 0; i < hill.embeddings.z_alpha.size(); ++i) {
    std::vector<int> truth;
    for (auto k : rows) truth.push_back(parse_run_id(hill.data[k].run_id)->modes[i]);
    const ClusterAssignment a = kmeans(select_rows(hill.embeddings.z_alpha[i], rows), 3, 0);
    const double p = purity(a.labels, truth);
    worst = std::min(worst, p);
    per_agent += fmt(" %.3f", p);
  }
  return {worst >= 0.8, fmt("purity per agent%s on %zu converged trajectories (training %.0f s)", per_agent.c_str(), rows.size(),
                            hill.seconds)};
}

// ---------------------------------------------------------------------------
// 5. Coordination joint modes

int joint_mode(const Trajectory& t) {
  const auto l = parse_run_id(t.run_id);
  return l->modes[0] * 2 + l->modes[1];
}

Verdict coord_clusters(const Trained& coord) {
  const auto rows = converged_rows(coord.corpus, coord.data);
  std::vector<int> truth;
  for (auto k : rows) truth.push_back(joint_mode(coord.data[k]));
  const double p = purity(kmeans(select_rows(coord.embeddings.z_omega, rows), 3, 0).labels, truth);

  std::vector<int> all_truth;
  for (const auto& t : coord.data) all_truth.push_back(joint_mode(t));
  const double p_all = purity(kmeans(coord.embeddings.z_omega, 3, 0).labels, all_truth);
  return {p >= 0.8, fmt("z_omega purity %.3f on %zu converged trajectories (%.3f on all %zu; training %.0f s)", p, rows.size(),
                        p_all, coord.data.size(), coord.seconds)};
}

// ---------------------------------------------------------------------------
// 6. Baseline ordering

/// Seed 7 reuses the criterion 4 model, which was trained with this exact
/// budget; seeds 8 and 9 are trained here.
Verdict baseline_ordering(const Trained& hill, long steps) {
  const TrajectoryDataset& ds = hill.data;
  const auto ptrs = trajectory_pointers(ds);
  const std::span<const Trajectory* const> all(ptrs);
  std::vector<double> apl_m, apl_l, apl_v, ictd_m, ictd_l;
  const auto t0 = Clock::now();
  for (std::uint64_t seed : {7, 8, 9}) {
    const TrainConfig tc = desk_train(steps, seed, kBetaMax);
    if (seed == 7) {
      apl_m.push_back(apl(hill.model, ds));
      ictd_m.push_back(ictd(ds, kmeans(hill.embeddings.z_omega, 16, seed)));
    } else {
      const auto m = train_new<float>(desk_model(), ds, tc).first;
      apl_m.push_back(apl(m, ds));
      ictd_m.push_back(ictd(ds, kmeans(embed_dataset(m, ds).z_omega, 16, seed)));
    }

    const auto l = lstm_train<float>(desk_model(), ds, tc).first;
    apl_l.push_back(apl(l, ds));
    ictd_l.push_back(ictd(ds, kmeans(lstm_embed(l, all), 16, seed)));

    const auto v = flat_vae_train<float>(desk_model(), ds, tc).first;
    apl_v.push_back(apl(v, ds));
  }
  const double am = median3(apl_m), al = median3(apl_l), av = median3(apl_v);
  const double im = median3(ictd_m), il = median3(ictd_l);
  const double secs = std::chrono::duration<double>(Clock::now() - t0).count() + hill.seconds;
  return {am < al && am < av && im <= il,
          fmt("median APL mohba %.4f, lstm %.4f, flat vae %.4f; median ICTD@16 mohba %.4f, lstm %.4f (%ld steps x 3 seeds, %.0f s)",
              am, al, av, im, il, steps, secs)};
}

// ---------------------------------------------------------------------------
// 7 and 8. Concepts

struct ConceptFixture {
  ConceptReport report;
  ConceptSet concepts;
  ConceptHead head;
  Eigen::MatrixXd z_val;
  std::vector<int> y_val;
  double kappa = 0.0;
};

Verdict concept_accuracy(const ConceptReport& rep) {
  return {rep.val_accuracy >= 0.40, fmt("dispersion 5-class validation accuracy %.3f (train %.3f, m = %d)", rep.val_accuracy,
                                        rep.train_accuracy, rep.concepts.size())};
}

/// Exact Shapley axioms on a head fitted to real concept scores, plus
/// sampled-vs-exact agreement at m = 8.
Verdict shapley_checks(const EmbeddingTable& e, const std::vector<int>& labels) {
  const int m = 8;
  const ConceptSet concepts = generate_concepts(e.z_omega, m, 301);
  const Eigen::Index n = e.z_omega.rows();
  const Eigen::Index n_val = n / 5;
  Rng split(302);
  std::vector<Eigen::Index> order(static_cast<std::size_t>(n));
  std::iota(order.begin(), order.end(), 0);
  split.shuffle(order.begin(), order.end());
  Eigen::MatrixXd z_tr(n - n_val, e.z_omega.cols()), z_val(n_val, e.z_omega.cols());
  std::vector<int> y_tr, y_val;
  for (Eigen::Index k = 0; k < n; ++k) {
    const Eigen::Index src = order[static_cast<std::size_t>(k)];
    if (k < n_val) {
      z_val.row(k) = e.z_omega.row(src);
      y_val.push_back(labels[static_cast<std::size_t>(src)]);
    } else {
      z_tr.row(k - n_val) = e.z_omega.row(src);
      y_tr.push_back(labels[static_cast<std::size_t>(src)]);
    }
  }
  ConceptHeadConfig hc;
  hc.seed = 303;
  const ConceptHead head = fit_concept_head(concept_score_matrix(z_tr, concepts, 0.0), y_tr, hc);

  // A copy of the head that cannot see the last concept. Without biases the
  // ReLU net is positively homogeneous, so renormalizing after masking that
  // concept cannot change any prediction.
  ConceptHead blind = head;
  const int ignored = m - 1;
  for (auto& p : blind.store)
    if (p.value.cols() == 1) p.value.setZero();
  blind.store[blind.store.find("concept_head.l0.w")].value.col(ignored).setZero();

  CompletenessEvaluator ev(head, concepts, z_val, y_val, 0.0);
  CompletenessEvaluator ev_blind(blind, concepts, z_val, y_val, 0.0);
  const std::uint64_t full = full_mask(m);
  double efficiency_gap = 0.0, dummy = 0.0, sampled_gap = 0.0;
  for (int k = 0; k < hc.n_classes; ++k) {
    const Eigen::VectorXd exact = concept_shap(ev, k, ShapleyMethod::exact, 0, 0);
    efficiency_gap = std::max(efficiency_gap, std::abs(exact.sum() - (ev.eta(full, k) - ev.eta(0, k))));
    const Eigen::VectorXd sampled = concept_shap(ev, k, ShapleyMethod::sampled, 2000, 304 + static_cast<std::uint64_t>(k));
    sampled_gap = std::max(sampled_gap, (sampled - exact).cwiseAbs().maxCoeff());
    const Eigen::VectorXd blind_exact = concept_shap(ev_blind, k, ShapleyMethod::exact, 0, 0);
    dummy = std::max(dummy, std::abs(blind_exact(ignored)));
  }
  // Exact here means up to the rounding of summing 2^m weighted differences.
  return {efficiency_gap <= 1e-12 && dummy == 0.0 && sampled_gap < 0.05,
          fmt("efficiency gap %.3g, ignored-concept |lambda| %.3g, max |sampled - exact| %.4f", efficiency_gap, dummy,
              sampled_gap)};
}

// ---------------------------------------------------------------------------
// 9. Changepoints on a constructed run

Verdict changepoints(const Trained& coord) {
  const CorpusConfig& cc = coord.corpus;
  // (A, A) and (B, A) alternate every five snapshots.
  const std::vector<int> pattern{0, 0, 1, 0, 0, 0, 1, 0};
  TrajectoryDataset run(corpus_meta(cc));
  for (int k = 0; k < 20; ++k) {
    const int block = (k / 5) % 2;
    std::vector<BehaviorPolicy> policies(2);
    for (int i = 0; i < 2; ++i) {
      policies[static_cast<std::size_t>(i)].target = mode_target(cc, pattern[static_cast<std::size_t>(block * 2 + i)]);
      policies[static_cast<std::size_t>(i)].gain = cc.gain;
      policies[static_cast<std::size_t>(i)].noise_scale = 0.05;
      policies[static_cast<std::size_t>(i)].rng_seed = 900 + static_cast<std::uint64_t>(10 * k + i);
    }
    Trajectory t = rollout(policies, cc.coord, cc.coord.episode_len);
    t.run_id = "constructed";
    t.train_step = k;
    run.append(t);
  }
  const ClusterAssignment ref = kmeans(coord.embeddings.z_omega, 3, 0);
  const RunTrack track = track_run(embed_dataset(coord.model, run).z_omega, ref);
  const std::vector<std::size_t> expected{5, 10, 15};
  std::string got;
  for (auto c : track.changepoints) got += fmt(" %zu", c);
  return {track.changepoints == expected, fmt("changepoints {%s } (expected { 5 10 15 })", got.c_str())};
}

// ---------------------------------------------------------------------------
// 10. Determinism and persistence

std::string slurp(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  std::ostringstream s;
  s << f.rdbuf();
  return s.str();
}

Verdict determinism() {
  const auto dir = std::filesystem::temp_directory_path() / "mohba_acceptance";
  std::filesystem::create_directories(dir);
  CorpusConfig cc = hill_corpus();
  cc.n_runs = 6;
  cc.trajectories_per_run = 8;
  const auto d1 = generate_corpus(cc, 1);
  const auto d2 = generate_corpus(cc, 3);
  save_dataset(d1, (dir / "a.jsonl").string());
  save_dataset(d2, (dir / "b.jsonl").string());
  const bool same_data = slurp((dir / "a.jsonl").string()) == slurp((dir / "b.jsonl").string());

  ModelConfig mc;
  mc.rnn_hidden = 8;
  mc.mlp_hidden = 8;
  mc.policy_hidden = 8;
  TrainConfig full = desk_train(120, 5, 0.01);
  full.batch_size = 8;
  full.anneal_period = 50;
  full.log_every = 10;
  full.float32 = false;
  TrainConfig half = full;
  half.steps = 60;

  const auto a = train_new<double>(mc, d1, full);
  const auto b = train_new<double>(mc, d1, full);
  const std::string ck_a = serialize_checkpoint(make_checkpoint(a.first, a.second, full));
  const std::string ck_b = serialize_checkpoint(make_checkpoint(b.first, b.second, full));
  const bool same_ckpt = ck_a == ck_b;
  const bool same_csv = a.second.log.to_csv() == b.second.log.to_csv();

  const auto h = train_new<double>(mc, d1, half);
  const std::string path = (dir / "half.bin").string();
  save_checkpoint(path, h.first, h.second, half);
  auto resumed = load_mohba_checkpoint<double>(path);
  train(resumed.model, resumed.state, d1, full);
  const bool same_resume = serialize_checkpoint(make_checkpoint(resumed.model, resumed.state, full)) == ck_a &&
                           resumed.state.log.to_csv() == a.second.log.to_csv();
  std::filesystem::remove_all(dir);
  return {same_data && same_ckpt && same_csv && same_resume,
          fmt("dataset %s, checkpoint %s, metrics csv %s, resume %s", same_data ? "identical" : "DIFFERS",
              same_ckpt ? "identical" : "DIFFERS", same_csv ? "identical" : "DIFFERS",
              same_resume ? "step-identical" : "DIFFERS")};
}

// ---------------------------------------------------------------------------
// 11. Beta schedule

Verdict beta_annealing() {
  bool ok = true;
  std::string detail;
  for (long period : {5000L, 10000L}) {
    TrainConfig c;
    c.beta_max = 0.01;
    c.anneal_period = period;
    ok = ok && beta_schedule(0, c) == 0.0 && beta_schedule(period / 2, c) == c.beta_max;
    for (long t = 0; t < 3 * period; t += 37) ok = ok && beta_schedule(t, c) == beta_schedule(t + period, c);
    detail += fmt("period %ld: beta(0) = %g, beta(period/2) = %g; ", period, beta_schedule(0, c), beta_schedule(period / 2, c));
  }
  detail += "periodic on a 37-step grid over three cycles";
  return {ok, detail};
}

}  // namespace

int main() {
  int failures = 0;
  auto report = [&](int id, const char* name, const std::function<Verdict()>& check) {
    const auto t0 = Clock::now();
    Verdict v;
    try {
      v = check();
    } catch (const std::exception& e) {
      v = {false, std::string("exception: ") + e.what()};
    }
    const double secs = std::chrono::duration<double>(Clock::now() - t0).count();
    failures += v.pass ? 0 : 1;
    std::printf("%s %2d %s: %s [%.1f s]\n", v.pass ? "PASS" : "FAIL", id, name, v.detail.c_str(), secs);
    std::fflush(stdout);
  };

  report(1, "ELBO gradient correctness", elbo_gradients);
  report(2, "KL oracles", kl_oracles);
  report(3, "coordination payoffs", coordination_payoffs);

  std::optional<Trained> hill, coord;
  report(4, "hill-climbing cluster recovery", [&] {
    hill = train_desk(hill_corpus(), kDeskSteps);
    return hill_clusters(*hill);
  });
  report(5, "coordination joint-mode recovery", [&] {
    coord = train_desk(coord_corpus(), kDeskSteps);
    return coord_clusters(*coord);
  });
  report(6, "baseline ordering", [&] {
    if (!hill) throw std::runtime_error("hill model unavailable");
    return baseline_ordering(*hill, kDeskSteps);
  });
  report(7, "concept classification", [&] {
    if (!hill) throw std::runtime_error("hill model unavailable");
    ConceptAnalysisConfig ac;
    ac.m = 16;
    ac.method = ShapleyMethod::exact;
    return concept_accuracy(analyze_concepts(hill->embeddings.z_omega, dispersions(hill->data), ac));
  });
  report(8, "Shapley correctness", [&] {
    if (!hill) throw std::runtime_error("hill model unavailable");
    return shapley_checks(hill->embeddings, dispersion_classes(hill->data));
  });
  report(9, "changepoint tracking", [&] {
    if (!coord) throw std::runtime_error("coordination model unavailable");
    return changepoints(*coord);
  });
  report(10, "determinism and persistence", determinism);
  report(11, "beta-annealing schedule", beta_annealing);

  std::printf("%d of 11 criteria failed\n", failures);
  return failures;
}
