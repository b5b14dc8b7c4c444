#pragma once

// Completeness-aware concept discovery over z_omega.
//
// Concepts are unit vectors (K-means centroids of normalized embeddings).
// A trajectory's concept score is the thresholded cosine to every concept,
// renormalized; a small classifier maps scores to class labels, and its
// validation accuracy with some concepts masked out is the completeness
// eta(S). Class-conditioned Shapley values of eta rank the concepts.

#include "mohba/autodiff.hpp"
#include "mohba/evalmetrics.hpp"
#include "mohba/nn.hpp"
#include "mohba/rng.hpp"
#include "mohba/training.hpp"

#include <Eigen/Dense>
#include <nlohmann/json.hpp>

#include <bit>
#include <cmath>
#include <cstdint>
#include <limits>
#include <numeric>
#include <stdexcept>
#include <string>
#include <unordered_map>
#include <vector>

namespace mohba {

struct ConceptSet {
  Eigen::MatrixXd vectors;  // m x D, unit rows

  int size() const { return static_cast<int>(vectors.rows()); }
};

inline Eigen::MatrixXd normalize_rows(const Eigen::MatrixXd& x) {
  Eigen::MatrixXd out = x;
  for (Eigen::Index r = 0; r < out.rows(); ++r) {
    const double n = out.row(r).norm();
    if (n > 0) out.row(r) /= n;
  }
  return out;
}

/// K-means on unit-normalized embeddings; centroids renormalized. Duplicate
/// or zero centroids are dropped and reported in `warnings`.
inline ConceptSet generate_concepts(const Eigen::MatrixXd& z_omega, int m, std::uint64_t seed,
                                    std::vector<std::string>* warnings = nullptr) {
  if (m < 1) throw std::invalid_argument("generate_concepts: m must be >= 1");
  if (z_omega.rows() < m) throw std::invalid_argument("generate_concepts: fewer embeddings than concepts");
  const ClusterAssignment a = kmeans(normalize_rows(z_omega), m, seed);
  std::vector<Eigen::RowVectorXd> kept;
  for (Eigen::Index c = 0; c < a.centroids.rows(); ++c) {
    const double n = a.centroids.row(c).norm();
    if (!(n > 1e-12)) {
      if (warnings) warnings->push_back("concept " + std::to_string(c) + " has a zero centroid; dropped");
      continue;
    }
    const Eigen::RowVectorXd u = a.centroids.row(c) / n;
    bool dup = false;
    for (const auto& k : kept) dup = dup || (k - u).norm() < 1e-9;
    if (dup) {
      if (warnings) warnings->push_back("concept " + std::to_string(c) + " duplicates an earlier one; collapsed");
      continue;
    }
    kept.push_back(u);
  }
  ConceptSet cs;
  cs.vectors.resize(static_cast<Eigen::Index>(kept.size()), z_omega.cols());
  for (std::size_t k = 0; k < kept.size(); ++k) cs.vectors.row(static_cast<Eigen::Index>(k)) = kept[k];
  return cs;
}

/// Thresholded cosines nu (before renormalization), one row per embedding.
inline Eigen::MatrixXd concept_products(const Eigen::MatrixXd& z, const ConceptSet& concepts, double kappa) {
  if (z.cols() != concepts.vectors.cols()) throw std::invalid_argument("concept scores: dim mismatch");
  Eigen::MatrixXd nu = normalize_rows(z) * concepts.vectors.transpose();
  return nu.unaryExpr([kappa](double v) { return v < kappa ? 0.0 : v; });
}

/// Masks concepts outside `mask` (bit j set = concept j kept), then renormalizes rows.
inline Eigen::MatrixXd masked_scores(const Eigen::MatrixXd& nu, std::uint64_t mask) {
  Eigen::MatrixXd s = nu;
  for (Eigen::Index j = 0; j < s.cols(); ++j)
    if (!((mask >> j) & 1U)) s.col(j).setZero();
  return normalize_rows(s);
}

inline std::uint64_t full_mask(int m) { return m >= 64 ? ~std::uint64_t{0} : ((std::uint64_t{1} << m) - 1); }

inline Eigen::MatrixXd concept_score_matrix(const Eigen::MatrixXd& z, const ConceptSet& concepts, double kappa) {
  return masked_scores(concept_products(z, concepts, kappa), full_mask(concepts.size()));
}

inline Eigen::VectorXd concept_scores(const Eigen::VectorXd& z, const ConceptSet& concepts, double kappa) {
  return concept_score_matrix(z.transpose(), concepts, kappa).row(0).transpose();
}

// ---------------------------------------------------------------------------
// Prediction head

struct ConceptHeadConfig {
  std::vector<Eigen::Index> hidden{8, 8};
  int n_classes = 5;
  long steps = 10000;
  int batch_size = 64;
  double learning_rate = 1e-3;
  std::uint64_t seed = 0;
};

struct ConceptHead {
  ad::ParameterStore<double> store;
  nn::Mlp<double> mlp;
  int n_classes = 0;
  double kappa = 0.0;

  Eigen::MatrixXd logits(const Eigen::MatrixXd& scores) const {
    ad::Tape<double> tape;
    return mlp(tape, store, tape.constant(scores.transpose())).value().transpose();
  }

  /// Arg-max class per row; ties go to the lower class index.
  std::vector<int> predict(const Eigen::MatrixXd& scores) const {
    const Eigen::MatrixXd l = logits(scores);
    std::vector<int> out(static_cast<std::size_t>(l.rows()));
    for (Eigen::Index r = 0; r < l.rows(); ++r) {
      Eigen::Index best = 0;
      l.row(r).maxCoeff(&best);
      out[static_cast<std::size_t>(r)] = static_cast<int>(best);
    }
    return out;
  }
};

inline ConceptHead make_concept_head(int m, const ConceptHeadConfig& config) {
  ConceptHead h;
  h.n_classes = config.n_classes;
  Rng rng(derive_seed(config.seed, 11));
  h.mlp = nn::Mlp<double>::create(h.store, "concept_head", m, config.hidden, config.n_classes, rng);
  return h;
}

/// Softmax cross-entropy with Adam on uniform-with-replacement minibatches.
inline ConceptHead fit_concept_head(const Eigen::MatrixXd& scores, const std::vector<int>& labels,
                                    const ConceptHeadConfig& config) {
  if (static_cast<std::size_t>(scores.rows()) != labels.size() || labels.empty())
    throw std::invalid_argument("fit_concept_head: scores/labels size mismatch");
  std::vector<bool> present(static_cast<std::size_t>(config.n_classes), false);
  for (int l : labels) {
    if (l < 0 || l >= config.n_classes) throw std::invalid_argument("fit_concept_head: label out of range");
    present[static_cast<std::size_t>(l)] = true;
  }
  for (int c = 0; c < config.n_classes; ++c)
    if (!present[static_cast<std::size_t>(c)])
      throw std::invalid_argument("fit_concept_head: class " + std::to_string(c) + " missing from the training split");

  ConceptHead head = make_concept_head(static_cast<int>(scores.cols()), config);
  TrainConfig tc;
  tc.learning_rate = config.learning_rate;
  Adam<double> adam;
  adam.reset(head.store);
  Rng rng(derive_seed(config.seed, 12));
  const Eigen::MatrixXd st = scores.transpose();
  Eigen::MatrixXd xb(st.rows(), config.batch_size);
  std::vector<int> yb(static_cast<std::size_t>(config.batch_size));
  for (long step = 0; step < config.steps; ++step) {
    for (int b = 0; b < config.batch_size; ++b) {
      const auto k = rng.uniform_index(labels.size());
      xb.col(b) = st.col(static_cast<Eigen::Index>(k));
      yb[static_cast<std::size_t>(b)] = labels[k];
    }
    head.store.zero_grad();
    ad::Tape<double> tape;
    ad::Var<double> out = head.mlp(tape, head.store, tape.constant(xb));
    ad::Var<double> loss = ad::scale(ad::sum(ad::softmax_cross_entropy(out, yb)), 1.0 / config.batch_size);
    tape.backward(loss);
    adam.update(head.store, tc);
  }
  return head;
}

inline double accuracy(const std::vector<int>& predicted, const std::vector<int>& truth) {
  if (predicted.size() != truth.size() || truth.empty()) throw std::invalid_argument("accuracy: size mismatch");
  std::size_t hit = 0;
  for (std::size_t k = 0; k < truth.size(); ++k) hit += predicted[k] == truth[k];
  return static_cast<double>(hit) / static_cast<double>(truth.size());
}

// ---------------------------------------------------------------------------
// Completeness and Shapley values

/// Completeness on a fixed validation set, caching per-mask results. For a
/// mask it stores the overall accuracy and the per-class accuracies (NaN for
/// classes absent from the validation labels).
class CompletenessEvaluator {
 public:
  CompletenessEvaluator(const ConceptHead& head, const ConceptSet& concepts, const Eigen::MatrixXd& z_val,
                        std::vector<int> labels_val, double kappa)
      : head_(head), nu_(concept_products(z_val, concepts, kappa)), labels_(std::move(labels_val)), m_(concepts.size()) {
    if (static_cast<std::size_t>(nu_.rows()) != labels_.size()) throw std::invalid_argument("completeness: size mismatch");
    if (m_ > 63) throw std::invalid_argument("completeness: at most 63 concepts supported");
  }

  int n_concepts() const { return m_; }

  /// eta(S) overall (class < 0) or eta_k(S) for class k.
  double eta(std::uint64_t mask, int klass = -1) {
    const auto& e = entry(mask);
    return klass < 0 ? e.front() : e[static_cast<std::size_t>(klass) + 1];
  }

 private:
  const std::vector<double>& entry(std::uint64_t mask) {
    auto it = cache_.find(mask);
    if (it != cache_.end()) return it->second;
    const std::vector<int> pred = head_.predict(masked_scores(nu_, mask));
    std::vector<double> e(static_cast<std::size_t>(head_.n_classes) + 1, 0.0);
    std::vector<std::size_t> hits(static_cast<std::size_t>(head_.n_classes), 0);
    std::vector<std::size_t> counts(static_cast<std::size_t>(head_.n_classes), 0);
    std::size_t total_hit = 0;
    for (std::size_t k = 0; k < labels_.size(); ++k) {
      const auto l = static_cast<std::size_t>(labels_[k]);
      if (l < counts.size()) ++counts[l];
      if (pred[k] == labels_[k]) {
        ++total_hit;
        if (l < hits.size()) ++hits[l];
      }
    }
    e[0] = labels_.empty() ? std::numeric_limits<double>::quiet_NaN()
                           : static_cast<double>(total_hit) / static_cast<double>(labels_.size());
    for (std::size_t c = 0; c < counts.size(); ++c)
      e[c + 1] = counts[c] ? static_cast<double>(hits[c]) / static_cast<double>(counts[c]) : std::numeric_limits<double>::quiet_NaN();
    return cache_.emplace(mask, std::move(e)).first->second;
  }

  const ConceptHead& head_;
  Eigen::MatrixXd nu_;
  std::vector<int> labels_;
  int m_;
  std::unordered_map<std::uint64_t, std::vector<double>> cache_;
};

inline double completeness(const ConceptHead& head, const ConceptSet& concepts, const Eigen::MatrixXd& z_val,
                           const std::vector<int>& labels_val, double kappa, std::uint64_t mask, int klass = -1) {
  CompletenessEvaluator ev(head, concepts, z_val, labels_val, kappa);
  return ev.eta(mask, klass);
}

/// Shapley values of an arbitrary set function over m players by full
/// enumeration: lambda_j = sum_{S not containing j} |S|!(m-|S|-1)!/m! [v(S+j) - v(S)].
template <typename SetFn>
Eigen::VectorXd exact_shapley(int m, SetFn&& value) {
  if (m < 1) throw std::invalid_argument("exact_shapley: need at least one player");
  if (m > 16) throw std::invalid_argument("exact_shapley: m = " + std::to_string(m) + " exceeds the limit of 16");
  std::vector<double> weight(static_cast<std::size_t>(m));
  for (int s = 0; s < m; ++s)
    weight[static_cast<std::size_t>(s)] = std::exp(std::lgamma(s + 1.0) + std::lgamma(m - s) - std::lgamma(m + 1.0));
  const std::uint64_t n_sets = std::uint64_t{1} << m;
  std::vector<double> v(n_sets);
  for (std::uint64_t s = 0; s < n_sets; ++s) v[s] = value(s);
  Eigen::VectorXd lambda = Eigen::VectorXd::Zero(m);
  for (std::uint64_t s = 0; s < n_sets; ++s) {
    const int size = std::popcount(s);
    for (int j = 0; j < m; ++j) {
      if ((s >> j) & 1U) continue;
      lambda(j) += weight[static_cast<std::size_t>(size)] * (v[s | (std::uint64_t{1} << j)] - v[s]);
    }
  }
  return lambda;
}

/// Permutation-sampling estimate of the same quantity.
template <typename SetFn>
Eigen::VectorXd sampled_shapley(int m, SetFn&& value, int n_perms, Rng& rng) {
  if (n_perms < 1) throw std::invalid_argument("sampled_shapley: n_perms must be >= 1");
  Eigen::VectorXd lambda = Eigen::VectorXd::Zero(m);
  std::vector<int> perm(static_cast<std::size_t>(m));
  for (int p = 0; p < n_perms; ++p) {
    std::iota(perm.begin(), perm.end(), 0);
    rng.shuffle(perm.begin(), perm.end());
    std::uint64_t s = 0;
    double prev = value(s);
    for (int j : perm) {
      s |= std::uint64_t{1} << j;
      const double cur = value(s);
      lambda(j) += cur - prev;
      prev = cur;
    }
  }
  return lambda / static_cast<double>(n_perms);
}

enum class ShapleyMethod { exact, sampled };

inline ShapleyMethod parse_shapley_method(const std::string& s) {
  if (s == "exact") return ShapleyMethod::exact;
  if (s == "sampled") return ShapleyMethod::sampled;
  throw std::invalid_argument("unknown Shapley method '" + s + "' (expected exact or sampled)");
}

/// Class-conditioned ConceptSHAP values lambda_j(eta_k).
inline Eigen::VectorXd concept_shap(CompletenessEvaluator& ev, int klass, ShapleyMethod method, int n_perms,
                                    std::uint64_t seed) {
  auto v = [&](std::uint64_t mask) { return ev.eta(mask, klass); };
  if (method == ShapleyMethod::exact) return exact_shapley(ev.n_concepts(), v);
  Rng rng(seed);
  return sampled_shapley(ev.n_concepts(), v, n_perms, rng);
}

/// Indices of the n embeddings most cosine-similar to concept j; ties by index.
inline std::vector<std::size_t> top_concept_trajectories(const ConceptSet& concepts, const Eigen::MatrixXd& z, int j,
                                                         std::size_t n = 20) {
  if (j < 0 || j >= concepts.size()) throw std::out_of_range("top_concept_trajectories: concept index");
  if (n > static_cast<std::size_t>(z.rows())) throw std::invalid_argument("top_concept_trajectories: n exceeds K");
  const Eigen::VectorXd cos = normalize_rows(z) * concepts.vectors.row(j).transpose();
  std::vector<std::size_t> order(static_cast<std::size_t>(z.rows()));
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    return cos(static_cast<Eigen::Index>(a)) > cos(static_cast<Eigen::Index>(b));
  });
  order.resize(n);
  return order;
}

// ---------------------------------------------------------------------------
// End-to-end analysis

struct ConceptAnalysisConfig {
  int m = 16;
  double kappa = 0.0;
  int n_classes = 5;
  double val_fraction = 0.2;
  ShapleyMethod method = ShapleyMethod::exact;
  int n_perms = 2000;
  std::size_t n_nearest = 20;
  std::uint64_t seed = 0;
  ConceptHeadConfig head;
};

struct ConceptClassReport {
  int klass = 0;
  Eigen::VectorXd lambda;
  int top_concept = -1;
  std::vector<std::size_t> nearest;  // dataset indices
  double mean_statistic = 0.0;        // class mean of the target statistic
  double eta_k = 0.0;
};

struct ConceptReport {
  ConceptSet concepts;
  double train_accuracy = 0.0;
  double val_accuracy = 0.0;  // eta(C)
  double eta_empty = 0.0;     // eta(empty set)
  std::vector<ConceptClassReport> classes;
  std::vector<std::string> warnings;
  ConceptAnalysisConfig config;
};

/// Concepts from the training split, head fit on training scores, and
/// completeness / Shapley values on the validation split.
inline ConceptReport analyze_concepts(const Eigen::MatrixXd& z_omega, const std::vector<double>& statistic,
                                      const ConceptAnalysisConfig& config) {
  if (static_cast<std::size_t>(z_omega.rows()) != statistic.size()) throw std::invalid_argument("concepts: size mismatch");
  ConceptReport r;
  r.config = config;
  const std::vector<int> labels = quantile_bins(statistic, config.n_classes);
  const auto [train_idx, val_idx] = split_indices(statistic.size(), config.val_fraction, config.seed);
  auto rows = [&](const std::vector<std::size_t>& idx) { return select_rows(z_omega, idx); };
  auto labs = [&](const std::vector<std::size_t>& idx) {
    std::vector<int> out;
    for (auto k : idx) out.push_back(labels[k]);
    return out;
  };
  const Eigen::MatrixXd z_train = rows(train_idx);
  const Eigen::MatrixXd z_val = rows(val_idx);
  const std::vector<int> y_train = labs(train_idx);
  const std::vector<int> y_val = labs(val_idx);

  r.concepts = generate_concepts(z_train, config.m, derive_seed(config.seed, 21), &r.warnings);
  ConceptHeadConfig hc = config.head;
  hc.n_classes = config.n_classes;
  hc.seed = derive_seed(config.seed, 22);
  ConceptHead head = fit_concept_head(concept_score_matrix(z_train, r.concepts, config.kappa), y_train, hc);
  head.kappa = config.kappa;
  r.train_accuracy = accuracy(head.predict(concept_score_matrix(z_train, r.concepts, config.kappa)), y_train);

  CompletenessEvaluator ev(head, r.concepts, z_val, y_val, config.kappa);
  const std::uint64_t all = full_mask(r.concepts.size());
  r.val_accuracy = ev.eta(all);
  r.eta_empty = ev.eta(0);
  for (int k = 0; k < config.n_classes; ++k) {
    ConceptClassReport c;
    c.klass = k;
    c.eta_k = ev.eta(all, k);
    if (std::isnan(c.eta_k)) {
      r.warnings.push_back("class " + std::to_string(k) + " has no validation points; eta_k undefined");
      c.lambda = Eigen::VectorXd::Constant(r.concepts.size(), std::numeric_limits<double>::quiet_NaN());
    } else {
      c.lambda = concept_shap(ev, k, config.method, config.n_perms, derive_seed(config.seed, 30 + static_cast<std::uint64_t>(k)));
      Eigen::Index best = 0;
      c.lambda.maxCoeff(&best);
      c.top_concept = static_cast<int>(best);
      c.nearest = top_concept_trajectories(r.concepts, z_omega, c.top_concept,
                                           std::min<std::size_t>(config.n_nearest, statistic.size()));
    }
    double sum = 0.0;
    std::size_t n = 0;
    for (std::size_t i = 0; i < labels.size(); ++i)
      if (labels[i] == k) {
        sum += statistic[i];
        ++n;
      }
    c.mean_statistic = n ? sum / static_cast<double>(n) : 0.0;
    r.classes.push_back(std::move(c));
  }
  return r;
}

inline nlohmann::json to_json(const ConceptReport& r) {
  auto vec = [](const Eigen::VectorXd& v) {
    nlohmann::json a = nlohmann::json::array();
    for (Eigen::Index k = 0; k < v.size(); ++k) a.push_back(std::isnan(v(k)) ? nlohmann::json(nullptr) : nlohmann::json(v(k)));
    return a;
  };
  nlohmann::json classes = nlohmann::json::array();
  for (const auto& c : r.classes)
    classes.push_back({{"class", c.klass},
                       {"lambda", vec(c.lambda)},
                       {"top_concept", c.top_concept},
                       {"nearest_trajectories", c.nearest},
                       {"mean_statistic", c.mean_statistic},
                       {"eta_k", std::isnan(c.eta_k) ? nlohmann::json(nullptr) : nlohmann::json(c.eta_k)}});
  nlohmann::json concepts = nlohmann::json::array();
  for (Eigen::Index j = 0; j < r.concepts.vectors.rows(); ++j) concepts.push_back(vec(r.concepts.vectors.row(j).transpose()));
  return {{"m", r.concepts.size()},
          {"kappa", r.config.kappa},
          {"method", r.config.method == ShapleyMethod::exact ? "exact" : "sampled"},
          {"n_perms", r.config.n_perms},
          {"train_accuracy", r.train_accuracy},
          {"validation_accuracy", r.val_accuracy},
          {"eta_empty", r.eta_empty},
          {"concepts", concepts},
          {"classes", classes},
          {"warnings", r.warnings}};
}

}  // namespace mohba
