#pragma once

// Value-level distribution objects. The batched training path lives on the
// autodiff tape; these are used for analysis, reporting and as test oracles.

#include "mohba/rng.hpp"

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <numbers>
#include <stdexcept>
#include <vector>

namespace mohba {

inline constexpr double kLogStdMin = -5.0;
inline constexpr double kLogStdMax = 2.0;

struct DiagGaussianParams {
  Eigen::VectorXd mean;
  Eigen::VectorXd log_std;

  DiagGaussianParams() = default;
  DiagGaussianParams(Eigen::VectorXd m, const Eigen::VectorXd& ls)
      : mean(std::move(m)), log_std(ls.cwiseMax(kLogStdMin).cwiseMin(kLogStdMax)) {
    if (mean.size() != log_std.size()) throw std::invalid_argument("DiagGaussianParams: dim mismatch");
  }

  Eigen::Index dim() const { return mean.size(); }
};

struct GMMParams {
  Eigen::VectorXd logits;   // M
  Eigen::MatrixXd means;    // M x D
  Eigen::MatrixXd log_stds;  // M x D

  GMMParams() = default;
  GMMParams(Eigen::VectorXd l, Eigen::MatrixXd m, const Eigen::MatrixXd& ls)
      : logits(std::move(l)), means(std::move(m)), log_stds(ls.cwiseMax(kLogStdMin).cwiseMin(kLogStdMax)) {
    if (logits.size() != means.rows() || means.rows() != log_stds.rows() || means.cols() != log_stds.cols())
      throw std::invalid_argument("GMMParams: shape mismatch");
  }

  Eigen::Index components() const { return logits.size(); }
  Eigen::Index dim() const { return means.cols(); }

  Eigen::VectorXd weights() const {
    const Eigen::ArrayXd e = (logits.array() - logits.maxCoeff()).exp();
    return (e / e.sum()).matrix();
  }

  /// Expected value sum_m w_m mu_m.
  Eigen::VectorXd mean() const { return means.transpose() * weights(); }

  DiagGaussianParams component(Eigen::Index m) const {
    return {means.row(m).transpose(), log_stds.row(m).transpose()};
  }
};

inline double log_sum_exp(const Eigen::Ref<const Eigen::VectorXd>& v) {
  const double m = v.maxCoeff();
  if (!std::isfinite(m)) return m;
  return m + std::log((v.array() - m).exp().sum());
}

inline double gaussian_log_density(const DiagGaussianParams& p, const Eigen::Ref<const Eigen::VectorXd>& x) {
  if (x.size() != p.dim()) throw std::invalid_argument("gaussian_log_density: dim mismatch");
  const Eigen::ArrayXd z = (x - p.mean).array() * (-p.log_std.array()).exp();
  return (-0.5 * z.square() - p.log_std.array() - 0.5 * std::log(2.0 * std::numbers::pi)).sum();
}

inline double gmm_log_density(const GMMParams& p, const Eigen::Ref<const Eigen::VectorXd>& x) {
  if (x.size() != p.dim()) throw std::invalid_argument("gmm_log_density: dim mismatch");
  const double lse = log_sum_exp(p.logits);
  Eigen::VectorXd terms(p.components());
  for (Eigen::Index m = 0; m < p.components(); ++m)
    terms(m) = p.logits(m) - lse + gaussian_log_density(p.component(m), x);
  return log_sum_exp(terms);
}

/// Consumes dim() normals.
inline Eigen::VectorXd sample_gaussian(const DiagGaussianParams& p, Rng& rng) {
  Eigen::VectorXd z(p.dim());
  for (Eigen::Index d = 0; d < p.dim(); ++d) z(d) = p.mean(d) + std::exp(p.log_std(d)) * rng.normal();
  return z;
}

/// Consumes one uniform for the component, then dim() normals.
inline Eigen::VectorXd sample_gmm(const GMMParams& p, Rng& rng, Eigen::Index* component = nullptr) {
  const Eigen::VectorXd w = p.weights();
  const auto k = static_cast<Eigen::Index>(rng.categorical(std::span<const double>(w.data(), static_cast<std::size_t>(w.size()))));
  if (component) *component = k;
  return sample_gaussian(p.component(k), rng);
}

inline double gaussian_kl(const DiagGaussianParams& q, const DiagGaussianParams& p) {
  if (q.dim() != p.dim()) throw std::invalid_argument("gaussian_kl: dim mismatch");
  const Eigen::ArrayXd dm = (q.mean - p.mean).array();
  const Eigen::ArrayXd var_ratio = (2.0 * (q.log_std - p.log_std).array()).exp();
  const Eigen::ArrayXd inv_var_p = (-2.0 * p.log_std.array()).exp();
  return (p.log_std.array() - q.log_std.array() + 0.5 * (var_ratio + dm.square() * inv_var_p) - 0.5).sum();
}

struct McEstimate {
  double value = 0.0;
  double std_error = 0.0;
};

/// Monte Carlo KL(q || p) between mixtures with n_samples draws from q.
inline McEstimate gmm_kl_mc(const GMMParams& q, const GMMParams& p, long n_samples, Rng& rng) {
  if (q.dim() != p.dim()) throw std::invalid_argument("gmm_kl_mc: dim mismatch");
  if (n_samples < 1) throw std::invalid_argument("gmm_kl_mc: n_samples must be >= 1");
  double mean = 0.0;
  double m2 = 0.0;
  for (long s = 0; s < n_samples; ++s) {
    const Eigen::VectorXd z = sample_gmm(q, rng);
    const double v = gmm_log_density(q, z) - gmm_log_density(p, z);
    const double delta = v - mean;
    mean += delta / static_cast<double>(s + 1);
    m2 += delta * (v - mean);
  }
  McEstimate e;
  e.value = mean;
  if (n_samples > 1) e.std_error = std::sqrt(m2 / static_cast<double>(n_samples - 1) / static_cast<double>(n_samples));
  return e;
}

}  // namespace mohba
