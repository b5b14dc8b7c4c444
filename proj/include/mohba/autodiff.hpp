#pragma once

// Reverse-mode differentiation over Eigen matrices.
//
// Layout convention: every batched quantity is a matrix whose columns are
// batch items. Sequences are stored time-major, block t occupies columns
// [t*B, (t+1)*B). Heavy pieces (LSTM recurrence, Gaussian/GMM densities,
// KL terms) are single fused nodes with hand-written backward passes so a
// training step records a few dozen nodes rather than thousands.

#include <Eigen/Dense>

#include <cmath>
#include <functional>
#include <numbers>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace mohba::ad {

using Eigen::Index;

template <typename S>
using Matrix = Eigen::Matrix<S, Eigen::Dynamic, Eigen::Dynamic>;

template <typename S>
struct Parameter {
  std::string name;
  Matrix<S> value;
  Matrix<S> grad;
};

/// Named trainable tensors. Layers refer to entries by index so a store can
/// be copied along with the model that owns it.
template <typename S>
class ParameterStore {
 public:
  int add(std::string name, Index rows, Index cols) {
    if (find(name) >= 0) throw std::logic_error("duplicate parameter name: " + name);
    params_.push_back({std::move(name), Matrix<S>::Zero(rows, cols), Matrix<S>::Zero(rows, cols)});
    return static_cast<int>(params_.size()) - 1;
  }

  int find(const std::string& name) const {
    for (std::size_t i = 0; i < params_.size(); ++i)
      if (params_[i].name == name) return static_cast<int>(i);
    return -1;
  }

  Parameter<S>& operator[](int i) { return params_.at(static_cast<std::size_t>(i)); }
  const Parameter<S>& operator[](int i) const { return params_.at(static_cast<std::size_t>(i)); }
  int size() const { return static_cast<int>(params_.size()); }

  auto begin() { return params_.begin(); }
  auto end() { return params_.end(); }
  auto begin() const { return params_.begin(); }
  auto end() const { return params_.end(); }

  void zero_grad() {
    for (auto& p : params_) p.grad.setZero(p.value.rows(), p.value.cols());
  }

  Index total_size() const {
    Index n = 0;
    for (const auto& p : params_) n += p.value.size();
    return n;
  }

 private:
  std::vector<Parameter<S>> params_;
};

template <typename S>
class Tape;

/// Handle to a node on a tape.
template <typename S>
struct Var {
  Tape<S>* tape = nullptr;
  int id = -1;

  const Matrix<S>& value() const { return tape->value(id); }
  Index rows() const { return value().rows(); }
  Index cols() const { return value().cols(); }
  S scalar() const { return value()(0, 0); }
};

template <typename S>
class Tape {
 public:
  using Backward = std::function<void(Tape&, int)>;

  Tape() { nodes_.reserve(256); }
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  Var<S> constant(Matrix<S> value) {
    Node n;
    n.value = std::move(value);
    return push(std::move(n));
  }

  /// Records a parameter by reference; its gradient is added into the
  /// store when backward() runs.
  Var<S> parameter(ParameterStore<S>& store, int index) {
    Node n;
    n.ref = &store[index].value;
    n.param = &store[index];
    n.requires_grad = true;
    return push(std::move(n));
  }

  /// Forward-only view of a parameter; no gradient is tracked.
  Var<S> parameter(const ParameterStore<S>& store, int index) {
    Node n;
    n.ref = &store[index].value;
    return push(std::move(n));
  }

  /// Adds a computed node. The backward callback is kept only if some
  /// input needs a gradient.
  Var<S> record(Matrix<S> value, std::initializer_list<Var<S>> inputs, Backward backward) {
    Node n;
    n.value = std::move(value);
    for (const auto& v : inputs) n.requires_grad = n.requires_grad || requires_grad(v);
    if (n.requires_grad) n.backward = std::move(backward);
    return push(std::move(n));
  }

  Var<S> record(Matrix<S> value, const std::vector<Var<S>>& inputs, Backward backward) {
    Node n;
    n.value = std::move(value);
    for (const auto& v : inputs) n.requires_grad = n.requires_grad || requires_grad(v);
    if (n.requires_grad) n.backward = std::move(backward);
    return push(std::move(n));
  }

  const Matrix<S>& value(int id) const {
    const Node& n = nodes_[static_cast<std::size_t>(id)];
    return n.ref ? *n.ref : n.value;
  }

  bool requires_grad(Var<S> v) const { return nodes_[static_cast<std::size_t>(v.id)].requires_grad; }

  /// Gradient of node `id`; an empty matrix means "no contribution yet".
  const Matrix<S>& grad(int id) const { return nodes_[static_cast<std::size_t>(id)].grad; }

  template <typename Derived>
  void accumulate(Var<S> v, const Eigen::MatrixBase<Derived>& g) {
    Node& n = nodes_[static_cast<std::size_t>(v.id)];
    if (!n.requires_grad) return;
    if (n.grad.size() == 0)
      n.grad = g;
    else
      n.grad += g;
  }

  /// Back-propagates from a 1x1 root and adds parameter gradients into
  /// their stores. A tape supports a single backward pass.
  void backward(Var<S> root) {
    if (root.rows() != 1 || root.cols() != 1) throw std::logic_error("backward: root must be scalar");
    nodes_[static_cast<std::size_t>(root.id)].grad = Matrix<S>::Ones(1, 1);
    for (int id = root.id; id >= 0; --id) {
      Node& n = nodes_[static_cast<std::size_t>(id)];
      if (!n.requires_grad || n.grad.size() == 0) continue;
      if (n.backward) n.backward(*this, id);
    }
    for (auto& n : nodes_) {
      if (n.param && n.grad.size() != 0) n.param->grad += n.grad;
    }
  }

  std::size_t size() const { return nodes_.size(); }

 private:
  struct Node {
    Matrix<S> value;
    const Matrix<S>* ref = nullptr;
    Matrix<S> grad;
    bool requires_grad = false;
    Parameter<S>* param = nullptr;
    Backward backward;
  };

  Var<S> push(Node n) {
    nodes_.push_back(std::move(n));
    return Var<S>{this, static_cast<int>(nodes_.size()) - 1};
  }

  std::vector<Node> nodes_;
};

// ---------------------------------------------------------------------------
// Elementary ops

/// y = W x + b, with b broadcast across columns.
template <typename S>
Var<S> linear(Var<S> x, Var<S> w, Var<S> b) {
  Tape<S>& t = *x.tape;
  Matrix<S> y = w.value() * x.value();
  y.colwise() += b.value().col(0);
  return t.record(std::move(y), {x, w, b}, [x, w, b](Tape<S>& tp, int self) {
    const Matrix<S>& g = tp.grad(self);
    if (tp.requires_grad(w)) tp.accumulate(w, g * x.value().transpose());
    if (tp.requires_grad(b)) tp.accumulate(b, g.rowwise().sum());
    if (tp.requires_grad(x)) tp.accumulate(x, w.value().transpose() * g);
  });
}

template <typename S>
Var<S> relu(Var<S> x) {
  Tape<S>& t = *x.tape;
  Matrix<S> y = x.value().cwiseMax(S(0));
  return t.record(std::move(y), {x}, [x](Tape<S>& tp, int self) {
    const Matrix<S>& g = tp.grad(self);
    tp.accumulate(x, (x.value().array() > S(0)).select(g.array(), S(0)).matrix());
  });
}

template <typename S>
Var<S> add(Var<S> a, Var<S> b) {
  Tape<S>& t = *a.tape;
  if (a.rows() != b.rows() || a.cols() != b.cols()) throw std::invalid_argument("add: shape mismatch");
  return t.record(a.value() + b.value(), {a, b}, [a, b](Tape<S>& tp, int self) {
    tp.accumulate(a, tp.grad(self));
    tp.accumulate(b, tp.grad(self));
  });
}

template <typename S>
Var<S> scale(Var<S> a, S factor) {
  Tape<S>& t = *a.tape;
  return t.record(a.value() * factor, {a}, [a, factor](Tape<S>& tp, int self) {
    tp.accumulate(a, tp.grad(self) * factor);
  });
}

template <typename S>
Var<S> sum(Var<S> a) {
  Tape<S>& t = *a.tape;
  Matrix<S> y(1, 1);
  y(0, 0) = a.value().sum();
  return t.record(std::move(y), {a}, [a](Tape<S>& tp, int self) {
    const S g = tp.grad(self)(0, 0);
    tp.accumulate(a, Matrix<S>::Constant(a.rows(), a.cols(), g));
  });
}

/// Hard clamp; the gradient passes only where the input lies inside [lo, hi].
template <typename S>
Var<S> clamp(Var<S> a, S lo, S hi) {
  Tape<S>& t = *a.tape;
  Matrix<S> y = a.value().cwiseMax(lo).cwiseMin(hi);
  return t.record(std::move(y), {a}, [a, lo, hi](Tape<S>& tp, int self) {
    const auto& x = a.value().array();
    tp.accumulate(a, ((x >= lo) && (x <= hi)).select(tp.grad(self).array(), S(0)).matrix());
  });
}

template <typename S>
Var<S> concat_rows(const std::vector<Var<S>>& parts) {
  if (parts.empty()) throw std::invalid_argument("concat_rows: no inputs");
  Tape<S>& t = *parts.front().tape;
  const Index cols = parts.front().cols();
  Index rows = 0;
  for (const auto& p : parts) {
    if (p.cols() != cols) throw std::invalid_argument("concat_rows: column mismatch");
    rows += p.rows();
  }
  Matrix<S> y(rows, cols);
  Index r = 0;
  for (const auto& p : parts) {
    y.middleRows(r, p.rows()) = p.value();
    r += p.rows();
  }
  return t.record(std::move(y), parts, [parts](Tape<S>& tp, int self) {
    const Matrix<S>& g = tp.grad(self);
    Index r0 = 0;
    for (const auto& p : parts) {
      if (tp.requires_grad(p)) tp.accumulate(p, g.middleRows(r0, p.rows()));
      r0 += p.rows();
    }
  });
}

template <typename S>
Var<S> slice_rows(Var<S> a, Index start, Index count) {
  Tape<S>& t = *a.tape;
  if (start < 0 || start + count > a.rows()) throw std::out_of_range("slice_rows");
  return t.record(a.value().middleRows(start, count), {a}, [a, start, count](Tape<S>& tp, int self) {
    Matrix<S> g = Matrix<S>::Zero(a.rows(), a.cols());
    g.middleRows(start, count) = tp.grad(self);
    tp.accumulate(a, g);
  });
}

template <typename S>
Var<S> slice_cols(Var<S> a, Index start, Index count) {
  Tape<S>& t = *a.tape;
  if (start < 0 || start + count > a.cols()) throw std::out_of_range("slice_cols");
  return t.record(a.value().middleCols(start, count), {a}, [a, start, count](Tape<S>& tp, int self) {
    Matrix<S> g = Matrix<S>::Zero(a.rows(), a.cols());
    g.middleCols(start, count) = tp.grad(self);
    tp.accumulate(a, g);
  });
}

/// y(:, c) = a(:, index[c]); the backward pass scatter-adds.
template <typename S>
Var<S> gather_cols(Var<S> a, std::vector<Index> index) {
  Tape<S>& t = *a.tape;
  Matrix<S> y(a.rows(), static_cast<Index>(index.size()));
  for (std::size_t c = 0; c < index.size(); ++c) y.col(static_cast<Index>(c)) = a.value().col(index[c]);
  return t.record(std::move(y), {a}, [a, index = std::move(index)](Tape<S>& tp, int self) {
    const Matrix<S>& g = tp.grad(self);
    Matrix<S> ga = Matrix<S>::Zero(a.rows(), a.cols());
    for (std::size_t c = 0; c < index.size(); ++c) ga.col(index[c]) += g.col(static_cast<Index>(c));
    tp.accumulate(a, ga);
  });
}

/// Repeats a single column `count` times.
template <typename S>
Var<S> broadcast_cols(Var<S> a, Index count) {
  Tape<S>& t = *a.tape;
  if (a.cols() != 1) throw std::invalid_argument("broadcast_cols: expects a column");
  Matrix<S> y = a.value().col(0).replicate(1, count);
  return t.record(std::move(y), {a}, [a](Tape<S>& tp, int self) {
    tp.accumulate(a, tp.grad(self).rowwise().sum());
  });
}

/// For column b picks rows [k_b*D, (k_b+1)*D) of a stacked (M*D x B) matrix.
template <typename S>
Var<S> select_block_rows(Var<S> a, std::vector<int> component, Index block) {
  Tape<S>& t = *a.tape;
  const Index cols = a.cols();
  if (static_cast<Index>(component.size()) != cols) throw std::invalid_argument("select_block_rows: size");
  Matrix<S> y(block, cols);
  for (Index c = 0; c < cols; ++c) y.col(c) = a.value().col(c).segment(component[c] * block, block);
  return t.record(std::move(y), {a}, [a, component = std::move(component), block](Tape<S>& tp, int self) {
    const Matrix<S>& g = tp.grad(self);
    Matrix<S> ga = Matrix<S>::Zero(a.rows(), a.cols());
    for (Index c = 0; c < ga.cols(); ++c) ga.col(c).segment(component[c] * block, block) = g.col(c);
    tp.accumulate(a, ga);
  });
}

// ---------------------------------------------------------------------------
// Distributions

/// Reparameterized draw z = mean + exp(log_std) * eps with eps held fixed.
template <typename S>
Var<S> reparameterize(Var<S> mean, Var<S> log_std, Matrix<S> eps) {
  Tape<S>& t = *mean.tape;
  Matrix<S> stdev = log_std.value().array().exp().matrix();
  Matrix<S> noise = stdev.cwiseProduct(eps);
  Matrix<S> z = mean.value() + noise;
  return t.record(std::move(z), {mean, log_std},
                  [mean, log_std, noise = std::move(noise)](Tape<S>& tp, int self) {
                    const Matrix<S>& g = tp.grad(self);
                    tp.accumulate(mean, g);
                    tp.accumulate(log_std, g.cwiseProduct(noise));
                  });
}

/// Column-wise diagonal-Gaussian log density of constant x, summed over rows
/// where mask is nonzero (mask may be empty: all rows count). Output 1 x cols.
template <typename S>
Var<S> gaussian_log_prob(const Matrix<S>& x, Var<S> mean, Var<S> log_std, const Matrix<S>& mask = {}) {
  Tape<S>& t = *mean.tape;
  const S half_log_2pi = S(0.5) * std::log(S(2) * std::numbers::pi_v<S>);
  Matrix<S> weight = mask.size() != 0 ? mask : Matrix<S>::Ones(x.rows(), x.cols());
  Matrix<S> zscore = ((x - mean.value()).array() * (-log_std.value().array()).exp()).matrix();
  Matrix<S> terms = (S(-0.5) * zscore.array().square() - log_std.value().array() - half_log_2pi).matrix();
  Matrix<S> y = terms.cwiseProduct(weight).colwise().sum();
  return t.record(std::move(y), {mean, log_std},
                  [mean, log_std, zscore = std::move(zscore), weight = std::move(weight)](Tape<S>& tp, int self) {
                    const auto g = tp.grad(self).row(0).replicate(zscore.rows(), 1).array() * weight.array();
                    if (tp.requires_grad(mean))
                      tp.accumulate(mean, (g * zscore.array() * (-log_std.value().array()).exp()).matrix());
                    if (tp.requires_grad(log_std))
                      tp.accumulate(log_std, (g * (zscore.array().square() - S(1))).matrix());
                  });
}

/// KL(N(mq, e^lq) || N(mp, e^lp)) per column, summed over rows. Output 1 x cols.
template <typename S>
Var<S> gaussian_kl(Var<S> mq, Var<S> lq, Var<S> mp, Var<S> lp) {
  Tape<S>& t = *mq.tape;
  const auto dm = (mq.value() - mp.value()).array();
  const auto var_q = (S(2) * lq.value().array()).exp();
  const auto inv_var_p = (S(-2) * lp.value().array()).exp();
  Matrix<S> terms = (lp.value().array() - lq.value().array() + (var_q + dm.square()) * inv_var_p * S(0.5) - S(0.5)).matrix();
  Matrix<S> y = terms.colwise().sum();
  return t.record(std::move(y), {mq, lq, mp, lp}, [mq, lq, mp, lp](Tape<S>& tp, int self) {
    const auto g = tp.grad(self).row(0).replicate(mq.rows(), 1).array();
    const auto diff = (mq.value() - mp.value()).array();
    const auto var_q = (S(2) * lq.value().array()).exp();
    const auto inv_var_p = (S(-2) * lp.value().array()).exp();
    if (tp.requires_grad(mq)) tp.accumulate(mq, (g * diff * inv_var_p).matrix());
    if (tp.requires_grad(mp)) tp.accumulate(mp, (-g * diff * inv_var_p).matrix());
    if (tp.requires_grad(lq)) tp.accumulate(lq, (g * (var_q * inv_var_p - S(1))).matrix());
    if (tp.requires_grad(lp)) tp.accumulate(lp, (g * (S(1) - (var_q + diff.square()) * inv_var_p)).matrix());
  });
}

/// Log density of z (D x B) under per-column Gaussian mixtures with logits
/// (M x B) and stacked component means / log-stds (M*D x B). Output 1 x B.
template <typename S>
Var<S> gmm_log_prob(Var<S> z, Var<S> logits, Var<S> means, Var<S> log_stds) {
  Tape<S>& t = *z.tape;
  const Index d = z.rows();
  const Index m_count = logits.rows();
  const Index cols = z.cols();
  if (means.rows() != m_count * d || log_stds.rows() != m_count * d) throw std::invalid_argument("gmm_log_prob: shape");
  const S half_log_2pi = S(0.5) * std::log(S(2) * std::numbers::pi_v<S>);

  Matrix<S> resp(m_count, cols);     // posterior responsibilities
  Matrix<S> weights(m_count, cols);  // softmax(logits)
  Matrix<S> y(1, cols);
  for (Index c = 0; c < cols; ++c) {
    const auto lg = logits.value().col(c);
    const S lmax = lg.maxCoeff();
    const S lse = lmax + std::log((lg.array() - lmax).exp().sum());
    Eigen::Matrix<S, Eigen::Dynamic, 1> a(m_count);
    for (Index m = 0; m < m_count; ++m) {
      const auto mu = means.value().col(c).segment(m * d, d).array();
      const auto ls = log_stds.value().col(c).segment(m * d, d).array();
      const auto zs = (z.value().col(c).array() - mu) * (-ls).exp();
      a(m) = lg(m) - lse + (S(-0.5) * zs.square() - ls - half_log_2pi).sum();
    }
    const S amax = a.maxCoeff();
    const S total = amax + std::log((a.array() - amax).exp().sum());
    y(0, c) = total;
    resp.col(c) = (a.array() - total).exp();
    weights.col(c) = (lg.array() - lse).exp();
  }
  return t.record(std::move(y), {z, logits, means, log_stds},
                  [z, logits, means, log_stds, resp, weights, d, m_count](Tape<S>& tp, int self) {
                    const Matrix<S>& g = tp.grad(self);
                    const Index cols = z.cols();
                    Matrix<S> gz = Matrix<S>::Zero(d, cols);
                    Matrix<S> gmu(m_count * d, cols);
                    Matrix<S> gls(m_count * d, cols);
                    for (Index c = 0; c < cols; ++c) {
                      for (Index m = 0; m < m_count; ++m) {
                        const auto mu = means.value().col(c).segment(m * d, d).array();
                        const auto ls = log_stds.value().col(c).segment(m * d, d).array();
                        const auto inv_var = (S(-2) * ls).exp();
                        const auto diff = z.value().col(c).array() - mu;
                        const S w = g(0, c) * resp(m, c);
                        gmu.col(c).segment(m * d, d) = (w * diff * inv_var).matrix();
                        gls.col(c).segment(m * d, d) = (w * (diff.square() * inv_var - S(1))).matrix();
                        gz.col(c) -= (w * diff * inv_var).matrix();
                      }
                    }
                    if (tp.requires_grad(z)) tp.accumulate(z, gz);
                    if (tp.requires_grad(logits))
                      tp.accumulate(logits, ((resp - weights).array() * g.row(0).replicate(m_count, 1).array()).matrix());
                    if (tp.requires_grad(means)) tp.accumulate(means, gmu);
                    if (tp.requires_grad(log_stds)) tp.accumulate(log_stds, gls);
                  });
}

/// Sum over columns of the squared error to a constant target, masked by rows.
template <typename S>
Var<S> squared_error(Var<S> pred, const Matrix<S>& target, const Matrix<S>& mask = {}) {
  Tape<S>& t = *pred.tape;
  Matrix<S> diff = pred.value() - target;
  if (mask.size() != 0) diff = diff.cwiseProduct(mask);
  Matrix<S> y = diff.array().square().colwise().sum().matrix();
  return t.record(std::move(y), {pred}, [pred, diff = std::move(diff)](Tape<S>& tp, int self) {
    tp.accumulate(pred, (S(2) * diff.array() * tp.grad(self).row(0).replicate(diff.rows(), 1).array()).matrix());
  });
}

/// Per-column softmax cross-entropy against integer labels. Output 1 x B.
template <typename S>
Var<S> softmax_cross_entropy(Var<S> logits, const std::vector<int>& labels) {
  Tape<S>& t = *logits.tape;
  const Index cols = logits.cols();
  Matrix<S> probs(logits.rows(), cols);
  Matrix<S> y(1, cols);
  for (Index c = 0; c < cols; ++c) {
    const auto l = logits.value().col(c);
    const S lmax = l.maxCoeff();
    const S lse = lmax + std::log((l.array() - lmax).exp().sum());
    probs.col(c) = (l.array() - lse).exp();
    y(0, c) = lse - l(labels[static_cast<std::size_t>(c)]);
  }
  return t.record(std::move(y), {logits}, [logits, probs, labels](Tape<S>& tp, int self) {
    Matrix<S> g = probs;
    for (Index c = 0; c < g.cols(); ++c) {
      g(labels[static_cast<std::size_t>(c)], c) -= S(1);
      g.col(c) *= tp.grad(self)(0, c);
    }
    tp.accumulate(logits, g);
  });
}

// ---------------------------------------------------------------------------
// Recurrence

/// Runs an LSTM over `steps` time-major blocks of x (in x steps*B).
///
/// Gate rows are ordered [input, forget, cell, output]. Returns the hidden
/// state for every step as (H x steps*B), block t holding h at time t; when
/// `reverse` is set the recurrence runs from the last block to the first.
template <typename S>
Var<S> lstm_sequence(Var<S> x, Var<S> wx, Var<S> wh, Var<S> b, Index steps, bool reverse) {
  Tape<S>& t = *x.tape;
  const Index h = wh.cols();
  if (steps <= 0 || x.cols() % steps != 0) throw std::invalid_argument("lstm_sequence: bad step count");
  const Index batch = x.cols() / steps;

  Matrix<S> act = wx.value() * x.value();  // preactivations, overwritten by activations
  act.colwise() += b.value().col(0);
  Matrix<S> cell(h, steps * batch);
  Matrix<S> hidden(h, steps * batch);
  Matrix<S> h_prev = Matrix<S>::Zero(h, batch);
  Matrix<S> c_prev = Matrix<S>::Zero(h, batch);

  auto sigmoid = [](auto&& v) { return (S(1) / (S(1) + (-v).exp())); };
  for (Index k = 0; k < steps; ++k) {
    const Index ti = reverse ? steps - 1 - k : k;
    auto blk = act.middleCols(ti * batch, batch);
    blk.noalias() += wh.value() * h_prev;
    blk.topRows(2 * h) = sigmoid(blk.topRows(2 * h).array()).matrix();
    blk.middleRows(2 * h, h) = blk.middleRows(2 * h, h).array().tanh().matrix();
    blk.bottomRows(h) = sigmoid(blk.bottomRows(h).array()).matrix();
    c_prev = (blk.middleRows(h, h).array() * c_prev.array() + blk.topRows(h).array() * blk.middleRows(2 * h, h).array()).matrix();
    h_prev = (blk.bottomRows(h).array() * c_prev.array().tanh()).matrix();
    cell.middleCols(ti * batch, batch) = c_prev;
    hidden.middleCols(ti * batch, batch) = h_prev;
  }

  return t.record(hidden, {x, wx, wh, b},
                  [x, wx, wh, b, act = std::move(act), cell = std::move(cell), steps, batch, h, reverse](Tape<S>& tp, int self) {
                    const Matrix<S>& dh_out = tp.grad(self);
                    const Matrix<S>& hid = tp.value(self);
                    Matrix<S> dpre(4 * h, steps * batch);
                    Matrix<S> h_shift = Matrix<S>::Zero(h, steps * batch);
                    Matrix<S> dh_next = Matrix<S>::Zero(h, batch);
                    Matrix<S> dc_next = Matrix<S>::Zero(h, batch);
                    for (Index k = steps - 1; k >= 0; --k) {
                      const Index ti = reverse ? steps - 1 - k : k;
                      const Index tp_prev = reverse ? ti + 1 : ti - 1;
                      const auto a = act.middleCols(ti * batch, batch).array();
                      const auto ig = a.topRows(h);
                      const auto fg = a.middleRows(h, h);
                      const auto gg = a.middleRows(2 * h, h);
                      const auto og = a.bottomRows(h);
                      const Matrix<S> tc = cell.middleCols(ti * batch, batch).array().tanh().matrix();
                      const Matrix<S> dh = dh_out.middleCols(ti * batch, batch) + dh_next;
                      const Matrix<S> dc = (dc_next.array() + dh.array() * og * (S(1) - tc.array().square())).matrix();
                      Matrix<S> cp = Matrix<S>::Zero(h, batch);
                      if (k > 0) {
                        cp = cell.middleCols(tp_prev * batch, batch);
                        h_shift.middleCols(ti * batch, batch) = hid.middleCols(tp_prev * batch, batch);
                      }
                      auto d = dpre.middleCols(ti * batch, batch);
                      d.topRows(h) = (dc.array() * gg * ig * (S(1) - ig)).matrix();
                      d.middleRows(h, h) = (dc.array() * cp.array() * fg * (S(1) - fg)).matrix();
                      d.middleRows(2 * h, h) = (dc.array() * ig * (S(1) - gg.square())).matrix();
                      d.bottomRows(h) = (dh.array() * tc.array() * og * (S(1) - og)).matrix();
                      dc_next = (dc.array() * fg).matrix();
                      dh_next.noalias() = wh.value().transpose() * d;
                    }
                    if (tp.requires_grad(wx)) tp.accumulate(wx, dpre * x.value().transpose());
                    if (tp.requires_grad(wh)) tp.accumulate(wh, dpre * h_shift.transpose());
                    if (tp.requires_grad(b)) tp.accumulate(b, dpre.rowwise().sum());
                    if (tp.requires_grad(x)) tp.accumulate(x, wx.value().transpose() * dpre);
                  });
}

}  // namespace mohba::ad
