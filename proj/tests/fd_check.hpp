#pragma once

// Central finite-difference gradient checker shared by the unit and
// acceptance tests.

#include "mohba/autodiff.hpp"
#include "mohba/rng.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <string>
#include <vector>

namespace mohba::fdcheck {

struct FdReport {
  double max_rel_error = 0.0;
  std::string worst;  // "name[r,c]" of the worst entry
  double analytic = 0.0;
  double numeric = 0.0;
  long checked = 0;
};

/// Relative error |a - n| / max(|a|, |n|, floor). The floor keeps entries whose
/// true gradient is ~0 from being judged on rounding noise alone.
inline double rel_error(double a, double n, double floor) {
  return std::abs(a - n) / std::max({std::abs(a), std::abs(n), floor});
}

/// Moves every parameter by N(0, scale^2) so the check runs at a generic point:
/// freshly initialised zero biases can leave ReLU units exactly on their kink.
inline void jitter(ad::ParameterStore<double>& store, std::uint64_t seed, double scale = 0.05) {
  Rng rng(seed);
  for (auto& p : store)
    for (Eigen::Index k = 0; k < p.value.size(); ++k) p.value.data()[k] += scale * rng.normal();
}

/// `loss` must evaluate the scalar loss and add its gradient into `store`.
inline FdReport fd_check(ad::ParameterStore<double>& store, const std::function<double()>& loss, double h = 1e-4,
                         double floor = 1e-6) {
  store.zero_grad();
  loss();
  std::vector<Eigen::MatrixXd> analytic;
  for (const auto& p : store) analytic.push_back(p.grad);

  FdReport rep;
  for (int k = 0; k < store.size(); ++k) {
    auto& value = store[k].value;
    for (Eigen::Index r = 0; r < value.rows(); ++r)
      for (Eigen::Index c = 0; c < value.cols(); ++c) {
        const double orig = value(r, c);
        value(r, c) = orig + h;
        const double up = loss();
        value(r, c) = orig - h;
        const double down = loss();
        value(r, c) = orig;
        const double numeric = (up - down) / (2.0 * h);
        const double a = analytic[static_cast<std::size_t>(k)](r, c);
        const double e = rel_error(a, numeric, floor);
        ++rep.checked;
        if (e > rep.max_rel_error || rep.worst.empty()) {
          rep.max_rel_error = std::max(rep.max_rel_error, e);
          rep.worst = store[k].name + "[" + std::to_string(r) + "," + std::to_string(c) + "]";
          rep.analytic = a;
          rep.numeric = numeric;
        }
      }
  }
  store.zero_grad();
  return rep;
}

}  // namespace mohba::fdcheck
