#pragma once

#include "mohba/baselines.hpp"
#include "mohba/envs.hpp"
#include "mohba/hvae.hpp"
#include "mohba/rng.hpp"
#include "mohba/trajdata.hpp"

#include <Eigen/Dense>
#include <nlohmann/json.hpp>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>
#include <map>
#include <numeric>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace mohba {

inline std::vector<const Trajectory*> trajectory_pointers(const TrajectoryDataset& dataset) {
  std::vector<const Trajectory*> out;
  out.reserve(dataset.size());
  for (const auto& t : dataset) out.push_back(&t);
  return out;
}

// ---------------------------------------------------------------------------
// Embeddings

struct EmbeddingTable {
  std::vector<std::size_t> traj_ids;   // dataset indices
  std::vector<std::string> run_ids;
  std::vector<std::int64_t> train_steps;
  Eigen::MatrixXd z_omega;             // K x D_omega
  std::vector<Eigen::MatrixXd> z_alpha;  // per agent, K x D_alpha
  std::string provenance;

  std::size_t size() const { return traj_ids.size(); }
};

/// Posterior-mean embeddings: z_omega is the mixture mean sum_m w_m mu_m and
/// z_alpha^i the local posterior mean. With `sample_rng` set, latents are
/// drawn from the posteriors instead.
template <typename S>
EmbeddingTable embed_dataset(const MohbaModel<S>& model, const TrajectoryDataset& dataset, std::string provenance = {},
                             Rng* sample_rng = nullptr) {
  model.config.check_meta(dataset.meta());
  const auto ptrs = trajectory_pointers(dataset);
  const Posteriors post = posteriors(model, std::span<const Trajectory* const>(ptrs));
  const auto& c = model.config;
  const auto k = static_cast<Eigen::Index>(dataset.size());
  EmbeddingTable e;
  e.provenance = std::move(provenance);
  e.z_omega.resize(k, c.d_omega);
  e.z_alpha.assign(static_cast<std::size_t>(c.n_agents), Eigen::MatrixXd(k, c.d_alpha));
  for (Eigen::Index r = 0; r < k; ++r) {
    const auto& tr = dataset[static_cast<std::size_t>(r)];
    e.traj_ids.push_back(static_cast<std::size_t>(r));
    e.run_ids.push_back(tr.run_id);
    e.train_steps.push_back(tr.train_step);
    const auto& pj = post.joint[static_cast<std::size_t>(r)];
    e.z_omega.row(r) = (sample_rng ? sample_gmm(pj, *sample_rng) : pj.mean()).transpose();
    for (int i = 0; i < c.n_agents; ++i) {
      const auto& pl = post.local[static_cast<std::size_t>(r)][static_cast<std::size_t>(i)];
      e.z_alpha[static_cast<std::size_t>(i)].row(r) = (sample_rng ? sample_gaussian(pl, *sample_rng) : pl.mean).transpose();
    }
  }
  return e;
}

inline std::string embeddings_csv(const EmbeddingTable& e) {
  std::string out = "traj_id";
  for (Eigen::Index d = 0; d < e.z_omega.cols(); ++d) out += ",z_omega_" + std::to_string(d);
  for (std::size_t i = 0; i < e.z_alpha.size(); ++i)
    for (Eigen::Index d = 0; d < e.z_alpha[i].cols(); ++d) out += ",z_alpha_" + std::to_string(i) + "_" + std::to_string(d);
  out += '\n';
  char buf[40];
  for (std::size_t r = 0; r < e.size(); ++r) {
    out += std::to_string(e.traj_ids[r]);
    const auto row = static_cast<Eigen::Index>(r);
    for (Eigen::Index d = 0; d < e.z_omega.cols(); ++d) {
      std::snprintf(buf, sizeof buf, ",%.17g", e.z_omega(row, d));
      out += buf;
    }
    for (const auto& za : e.z_alpha)
      for (Eigen::Index d = 0; d < za.cols(); ++d) {
        std::snprintf(buf, sizeof buf, ",%.17g", za(row, d));
        out += buf;
      }
    out += '\n';
  }
  return out;
}

// ---------------------------------------------------------------------------
// Action-prediction loss

/// Mean over trajectories of sum_{t,i} |a_hat - a|^2.
inline double apl_from_predictions(const std::vector<std::vector<Eigen::MatrixXd>>& predicted,
                                   std::span<const Trajectory* const> trajs) {
  if (predicted.size() != trajs.size()) throw std::invalid_argument("apl: prediction count mismatch");
  if (trajs.empty()) throw std::invalid_argument("apl: no trajectories");
  double total = 0.0;
  for (std::size_t k = 0; k < trajs.size(); ++k) {
    const auto& tr = *trajs[k];
    if (predicted[k].size() != tr.actions.size()) throw std::invalid_argument("apl: agent count mismatch");
    for (std::size_t i = 0; i < tr.actions.size(); ++i) {
      if (predicted[k][i].rows() != tr.actions[i].rows() || predicted[k][i].cols() != tr.actions[i].cols())
        throw std::invalid_argument("apl: action shape mismatch");
      total += (predicted[k][i] - tr.actions[i]).squaredNorm();
    }
  }
  return total / static_cast<double>(trajs.size());
}

template <typename S>
double apl(const MohbaModel<S>& model, const TrajectoryDataset& dataset) {
  model.config.check_meta(dataset.meta());
  const auto ptrs = trajectory_pointers(dataset);
  const std::span<const Trajectory* const> s(ptrs);
  return apl_from_predictions(reconstruct_actions(model, s), s);
}

template <typename S>
double apl(const FlatVae<S>& model, const TrajectoryDataset& dataset) {
  model.config.check_meta(dataset.meta());
  const auto ptrs = trajectory_pointers(dataset);
  const std::span<const Trajectory* const> s(ptrs);
  return apl_from_predictions(flat_vae_reconstruct(model, s), s);
}

template <typename S>
double apl(const LstmBaseline<S>& model, const TrajectoryDataset& dataset) {
  model.config.check_meta(dataset.meta());
  const auto ptrs = trajectory_pointers(dataset);
  const std::span<const Trajectory* const> s(ptrs);
  return apl_from_predictions(lstm_predict(model, s), s);
}

// ---------------------------------------------------------------------------
// K-means

struct ClusterAssignment {
  std::vector<int> labels;
  Eigen::MatrixXd centroids;  // C x D
  double inertia = 0.0;
  std::vector<double> inertia_trace;  // after every assignment step of the kept restart

  int n_clusters() const { return static_cast<int>(centroids.rows()); }
  std::vector<std::size_t> sizes() const {
    std::vector<std::size_t> s(static_cast<std::size_t>(n_clusters()), 0);
    for (int l : labels) ++s[static_cast<std::size_t>(l)];
    return s;
  }
};

/// Index of the nearest centroid; ties go to the lower index.
inline int nearest_centroid(const Eigen::MatrixXd& centroids, const Eigen::Ref<const Eigen::RowVectorXd>& x,
                            double* sq_dist = nullptr) {
  int best = 0;
  double bd = std::numeric_limits<double>::infinity();
  for (Eigen::Index c = 0; c < centroids.rows(); ++c) {
    const double d = (centroids.row(c) - x).squaredNorm();
    if (d < bd) {
      bd = d;
      best = static_cast<int>(c);
    }
  }
  if (sq_dist) *sq_dist = bd;
  return best;
}

namespace detail {

inline Eigen::MatrixXd kmeans_pp_seed(const Eigen::MatrixXd& x, int k, Rng& rng) {
  const Eigen::Index n = x.rows();
  Eigen::MatrixXd c(k, x.cols());
  c.row(0) = x.row(static_cast<Eigen::Index>(rng.uniform_index(static_cast<std::size_t>(n))));
  Eigen::VectorXd d2(n);
  for (Eigen::Index i = 0; i < n; ++i) d2(i) = (x.row(i) - c.row(0)).squaredNorm();
  for (int j = 1; j < k; ++j) {
    const double total = d2.sum();
    Eigen::Index pick = 0;
    if (total > 0) {
      const Eigen::VectorXd p = d2 / total;
      pick = static_cast<Eigen::Index>(rng.categorical(std::span<const double>(p.data(), static_cast<std::size_t>(n))));
    } else {
      pick = static_cast<Eigen::Index>(rng.uniform_index(static_cast<std::size_t>(n)));
    }
    c.row(j) = x.row(pick);
    for (Eigen::Index i = 0; i < n; ++i) d2(i) = std::min(d2(i), (x.row(i) - c.row(j)).squaredNorm());
  }
  return c;
}

inline ClusterAssignment lloyd(const Eigen::MatrixXd& x, Eigen::MatrixXd centroids, int max_iter) {
  const Eigen::Index n = x.rows();
  const int k = static_cast<int>(centroids.rows());
  ClusterAssignment a;
  a.labels.assign(static_cast<std::size_t>(n), -1);
  Eigen::VectorXd dist(n);
  for (int iter = 0; iter < max_iter; ++iter) {
    bool changed = false;
    double inertia = 0.0;
    for (Eigen::Index i = 0; i < n; ++i) {
      const int l = nearest_centroid(centroids, x.row(i), &dist(i));
      inertia += dist(i);
      if (l != a.labels[static_cast<std::size_t>(i)]) {
        a.labels[static_cast<std::size_t>(i)] = l;
        changed = true;
      }
    }
    a.inertia_trace.push_back(inertia);
    if (!changed && iter > 0) break;

    Eigen::MatrixXd sums = Eigen::MatrixXd::Zero(k, x.cols());
    std::vector<std::size_t> counts(static_cast<std::size_t>(k), 0);
    for (Eigen::Index i = 0; i < n; ++i) {
      sums.row(a.labels[static_cast<std::size_t>(i)]) += x.row(i);
      ++counts[static_cast<std::size_t>(a.labels[static_cast<std::size_t>(i)])];
    }
    for (int c = 0; c < k; ++c) {
      if (counts[static_cast<std::size_t>(c)] > 0) {
        centroids.row(c) = sums.row(c) / static_cast<double>(counts[static_cast<std::size_t>(c)]);
      } else {
        // Empty cluster: move it onto the point currently worst served.
        Eigen::Index far = 0;
        dist.maxCoeff(&far);
        centroids.row(c) = x.row(far);
        dist(far) = 0.0;
      }
    }
  }
  a.centroids = std::move(centroids);
  a.inertia = a.inertia_trace.back();
  return a;
}

}  // namespace detail

/// Lloyd iterations from k-means++ seeds; the restart with the lowest
/// inertia is kept. Deterministic for a given seed.
inline ClusterAssignment kmeans(const Eigen::MatrixXd& points, int n_clusters, std::uint64_t seed, int restarts = 10,
                                int max_iter = 300) {
  if (n_clusters < 1) throw std::invalid_argument("kmeans: n_clusters must be >= 1");
  if (points.rows() < n_clusters)
    throw std::invalid_argument("kmeans: " + std::to_string(points.rows()) + " points cannot form " +
                                std::to_string(n_clusters) + " clusters");
  Rng rng(seed);
  ClusterAssignment best;
  best.inertia = std::numeric_limits<double>::infinity();
  for (int r = 0; r < std::max(1, restarts); ++r) {
    ClusterAssignment a = detail::lloyd(points, detail::kmeans_pp_seed(points, n_clusters, rng), max_iter);
    if (a.inertia < best.inertia) best = std::move(a);
  }
  return best;
}

/// Fraction of points whose cluster's majority ground-truth label matches theirs.
inline double purity(const std::vector<int>& labels, const std::vector<int>& truth) {
  if (labels.size() != truth.size() || labels.empty()) throw std::invalid_argument("purity: size mismatch");
  std::map<int, std::map<int, std::size_t>> table;
  for (std::size_t i = 0; i < labels.size(); ++i) ++table[labels[i]][truth[i]];
  std::size_t hit = 0;
  for (const auto& [c, counts] : table) {
    std::size_t m = 0;
    for (const auto& [t, n] : counts) m = std::max(m, n);
    hit += m;
  }
  return static_cast<double>(hit) / static_cast<double>(labels.size());
}

// ---------------------------------------------------------------------------
// Intra-cluster trajectory distance

/// Flattened [states ; actions] per trajectory, z-scored per dimension over
/// the given set and divided by sqrt(vector length). Constant dims become 0.
inline Eigen::MatrixXd normalized_trajectory_vectors(std::span<const Trajectory* const> trajs) {
  if (trajs.empty()) return {};
  Eigen::Index len = trajs.front()->states.size();
  for (const auto& a : trajs.front()->actions) len += a.size();
  Eigen::MatrixXd v(static_cast<Eigen::Index>(trajs.size()), len);
  for (std::size_t k = 0; k < trajs.size(); ++k) {
    const auto& tr = *trajs[k];
    Eigen::Index off = 0;
    auto put = [&](const Eigen::MatrixXd& m) {
      if (off + m.size() > len) throw std::invalid_argument("ictd: trajectories differ in shape");
      for (Eigen::Index r = 0; r < m.rows(); ++r)
        for (Eigen::Index c = 0; c < m.cols(); ++c) v(static_cast<Eigen::Index>(k), off++) = m(r, c);
    };
    put(tr.states);
    for (const auto& a : tr.actions) put(a);
    if (off != len) throw std::invalid_argument("ictd: trajectories differ in shape");
  }
  const Eigen::RowVectorXd mean = v.colwise().mean();
  v.rowwise() -= mean;
  const Eigen::RowVectorXd sd = (v.colwise().squaredNorm() / static_cast<double>(v.rows())).cwiseSqrt();
  for (Eigen::Index c = 0; c < len; ++c) {
    if (sd(c) > 0)
      v.col(c) /= sd(c);
    else
      v.col(c).setZero();
  }
  return v / std::sqrt(static_cast<double>(len));
}

/// Cluster-size-weighted mean distance from each cluster's mean trajectory.
/// Empty clusters are skipped and noted in `warnings`.
inline double ictd(std::span<const Trajectory* const> trajs, const std::vector<int>& labels, int n_clusters,
                   std::vector<std::string>* warnings = nullptr) {
  if (labels.size() != trajs.size()) throw std::invalid_argument("ictd: label count does not match trajectories");
  const Eigen::MatrixXd v = normalized_trajectory_vectors(trajs);
  double weighted = 0.0;
  std::size_t total = 0;
  for (int c = 0; c < n_clusters; ++c) {
    std::vector<Eigen::Index> members;
    for (std::size_t k = 0; k < labels.size(); ++k)
      if (labels[k] == c) members.push_back(static_cast<Eigen::Index>(k));
    if (members.empty()) {
      if (warnings) warnings->push_back("cluster " + std::to_string(c) + " is empty; skipped");
      continue;
    }
    Eigen::RowVectorXd centre = Eigen::RowVectorXd::Zero(v.cols());
    for (auto k : members) centre += v.row(k);
    centre /= static_cast<double>(members.size());
    double sum = 0.0;
    for (auto k : members) sum += (v.row(k) - centre).norm();
    weighted += sum;  // size * (sum / size)
    total += members.size();
  }
  return total ? weighted / static_cast<double>(total) : 0.0;
}

inline double ictd(const TrajectoryDataset& dataset, const ClusterAssignment& assignment,
                   std::vector<std::string>* warnings = nullptr) {
  const auto ptrs = trajectory_pointers(dataset);
  return ictd(std::span<const Trajectory* const>(ptrs), assignment.labels, assignment.n_clusters(), warnings);
}

// ---------------------------------------------------------------------------
// PCA

struct Projection {
  Eigen::MatrixXd coords;           // K x 2
  Eigen::MatrixXd components;       // D x 2 (zero column if D < 2)
  Eigen::Vector2d explained_variance = Eigen::Vector2d::Zero();
  Eigen::VectorXd all_variances;    // every eigenvalue, descending
};

inline Projection pca_project(const Eigen::MatrixXd& points) {
  if (points.rows() < 2) throw std::invalid_argument("pca_project: need at least 2 points");
  const Eigen::Index d = points.cols();
  const Eigen::MatrixXd centred = points.rowwise() - points.colwise().mean();
  const Eigen::MatrixXd cov = centred.transpose() * centred / static_cast<double>(points.rows() - 1);
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(cov);
  Projection p;
  p.all_variances = eig.eigenvalues().reverse();
  p.components = Eigen::MatrixXd::Zero(d, 2);
  for (Eigen::Index k = 0; k < std::min<Eigen::Index>(2, d); ++k) {
    Eigen::VectorXd v = eig.eigenvectors().col(d - 1 - k);
    for (Eigen::Index r = 0; r < d; ++r) {
      if (std::abs(v(r)) > 1e-12) {
        if (v(r) < 0) v = -v;
        break;
      }
    }
    p.components.col(k) = v;
    p.explained_variance(k) = std::max(0.0, p.all_variances(k));
  }
  p.coords = centred * p.components;
  return p;
}

// ---------------------------------------------------------------------------
// Class labels from trajectory statistics

/// Equal-size quantile bins over `values`, ordered by (value, index). The
/// first (K mod n) bins take one extra member.
inline std::vector<int> quantile_bins(const std::vector<double>& values, int n_classes) {
  if (n_classes < 1) throw std::invalid_argument("quantile_bins: n_classes must be >= 1");
  std::vector<std::size_t> order(values.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return values[a] < values[b]; });
  const std::size_t n = values.size();
  const std::size_t base = n / static_cast<std::size_t>(n_classes);
  const std::size_t extra = n % static_cast<std::size_t>(n_classes);
  std::vector<int> labels(n);
  std::size_t pos = 0;
  for (int c = 0; c < n_classes; ++c) {
    const std::size_t size = base + (static_cast<std::size_t>(c) < extra ? 1 : 0);
    for (std::size_t k = 0; k < size; ++k) labels[order[pos++]] = c;
  }
  return labels;
}

inline std::vector<double> dispersions(const TrajectoryDataset& dataset) {
  std::vector<double> v;
  for (const auto& tr : dataset) v.push_back(agent_dispersion(final_positions(tr)));
  return v;
}

inline std::vector<double> total_returns(const TrajectoryDataset& dataset) {
  if (!dataset.meta().has_rewards) throw DataError("dataset has no rewards");
  std::vector<double> v;
  for (const auto& tr : dataset) v.push_back(trajectory_return(tr).total);
  return v;
}

inline std::vector<int> dispersion_classes(const TrajectoryDataset& dataset, int n_classes = 5) {
  return quantile_bins(dispersions(dataset), n_classes);
}

inline std::vector<int> return_classes(const TrajectoryDataset& dataset, int n_classes = 5) {
  return quantile_bins(total_returns(dataset), n_classes);
}

// ---------------------------------------------------------------------------
// Training-run tracking

struct RunTrack {
  std::vector<int> labels;
  std::vector<std::size_t> changepoints;
};

/// Rows are one run's embeddings ordered by train_step.
inline RunTrack track_run(const Eigen::MatrixXd& run_embeddings, const ClusterAssignment& reference) {
  if (run_embeddings.rows() == 0) throw std::invalid_argument("track_run: empty run");
  if (run_embeddings.cols() != reference.centroids.cols()) throw std::invalid_argument("track_run: dim mismatch");
  RunTrack t;
  for (Eigen::Index r = 0; r < run_embeddings.rows(); ++r) {
    t.labels.push_back(nearest_centroid(reference.centroids, run_embeddings.row(r)));
    if (r > 0 && t.labels.back() != t.labels[static_cast<std::size_t>(r - 1)]) t.changepoints.push_back(static_cast<std::size_t>(r));
  }
  return t;
}

/// Dataset indices belonging to `run_id`, ordered by train_step (stable).
inline std::vector<std::size_t> run_members(const TrajectoryDataset& dataset, const std::string& run_id) {
  std::vector<std::size_t> idx;
  for (std::size_t k = 0; k < dataset.size(); ++k)
    if (dataset[k].run_id == run_id) idx.push_back(k);
  std::stable_sort(idx.begin(), idx.end(),
                   [&](std::size_t a, std::size_t b) { return dataset[a].train_step < dataset[b].train_step; });
  return idx;
}

inline Eigen::MatrixXd select_rows(const Eigen::MatrixXd& m, const std::vector<std::size_t>& rows) {
  Eigen::MatrixXd out(static_cast<Eigen::Index>(rows.size()), m.cols());
  for (std::size_t k = 0; k < rows.size(); ++k) out.row(static_cast<Eigen::Index>(k)) = m.row(static_cast<Eigen::Index>(rows[k]));
  return out;
}

inline nlohmann::json to_json(const ClusterAssignment& a) {
  nlohmann::json centroids = nlohmann::json::array();
  for (Eigen::Index c = 0; c < a.centroids.rows(); ++c) {
    std::vector<double> row;
    for (Eigen::Index d = 0; d < a.centroids.cols(); ++d) row.push_back(a.centroids(c, d));
    centroids.push_back(row);
  }
  return {{"k", a.n_clusters()}, {"inertia", a.inertia}, {"labels", a.labels}, {"sizes", a.sizes()}, {"centroids", centroids}};
}

}  // namespace mohba
