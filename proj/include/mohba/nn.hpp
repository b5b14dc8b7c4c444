#pragma once

#include "mohba/autodiff.hpp"
#include "mohba/rng.hpp"

#include <cmath>
#include <string>
#include <vector>

namespace mohba::nn {

using ad::Index;
using ad::Matrix;
using ad::ParameterStore;
using ad::Tape;
using ad::Var;

// Weights are uniform in [-1/sqrt(fan_in), 1/sqrt(fan_in)]; biases start at zero.
template <typename S>
void init_uniform(Matrix<S>& m, double fan_in, Rng& rng) {
  const double k = 1.0 / std::sqrt(fan_in);
  for (Index j = 0; j < m.cols(); ++j)
    for (Index i = 0; i < m.rows(); ++i) m(i, j) = static_cast<S>((2.0 * rng.uniform() - 1.0) * k);
}

template <typename S>
struct Linear {
  int weight = -1;
  int bias = -1;
  Index in = 0;
  Index out = 0;

  static Linear create(ParameterStore<S>& store, const std::string& name, Index in, Index out, Rng& rng) {
    Linear l;
    l.in = in;
    l.out = out;
    l.weight = store.add(name + ".w", out, in);
    l.bias = store.add(name + ".b", out, 1);
    init_uniform(store[l.weight].value, static_cast<double>(in), rng);
    return l;
  }

  template <typename Store>
  Var<S> operator()(Tape<S>& tape, Store& store, Var<S> x) const {
    return ad::linear(x, tape.parameter(store, weight), tape.parameter(store, bias));
  }
};

/// Fully connected stack with ReLU between layers and a linear output.
template <typename S>
struct Mlp {
  std::vector<Linear<S>> layers;

  static Mlp create(ParameterStore<S>& store, const std::string& name, Index in, const std::vector<Index>& hidden,
                    Index out, Rng& rng) {
    Mlp m;
    Index prev = in;
    for (std::size_t i = 0; i < hidden.size(); ++i) {
      m.layers.push_back(Linear<S>::create(store, name + ".l" + std::to_string(i), prev, hidden[i], rng));
      prev = hidden[i];
    }
    m.layers.push_back(Linear<S>::create(store, name + ".out", prev, out, rng));
    return m;
  }

  template <typename Store>
  Var<S> operator()(Tape<S>& tape, Store& store, Var<S> x) const {
    for (std::size_t i = 0; i < layers.size(); ++i) {
      x = layers[i](tape, store, x);
      if (i + 1 < layers.size()) x = ad::relu(x);
    }
    return x;
  }

  Index in_dim() const { return layers.front().in; }
  Index out_dim() const { return layers.back().out; }
};

template <typename S>
struct Lstm {
  int wx = -1;
  int wh = -1;
  int bias = -1;
  Index in = 0;
  Index hidden = 0;

  static Lstm create(ParameterStore<S>& store, const std::string& name, Index in, Index hidden, Rng& rng) {
    Lstm l;
    l.in = in;
    l.hidden = hidden;
    l.wx = store.add(name + ".wx", 4 * hidden, in);
    l.wh = store.add(name + ".wh", 4 * hidden, hidden);
    l.bias = store.add(name + ".b", 4 * hidden, 1);
    const double fan_in = static_cast<double>(in + hidden);
    init_uniform(store[l.wx].value, fan_in, rng);
    init_uniform(store[l.wh].value, fan_in, rng);
    return l;
  }

  /// All hidden states, H x (steps*B).
  template <typename Store>
  Var<S> operator()(Tape<S>& tape, Store& store, Var<S> x, Index steps, bool reverse = false) const {
    return ad::lstm_sequence(x, tape.parameter(store, wx), tape.parameter(store, wh), tape.parameter(store, bias), steps,
                             reverse);
  }
};

/// Bidirectional LSTM summarizing a sequence by the final state of each
/// direction, stacked as (2H x B).
template <typename S>
struct BiLstm {
  Lstm<S> forward;
  Lstm<S> backward;

  static BiLstm create(ParameterStore<S>& store, const std::string& name, Index in, Index hidden, Rng& rng) {
    return {Lstm<S>::create(store, name + ".fwd", in, hidden, rng), Lstm<S>::create(store, name + ".bwd", in, hidden, rng)};
  }

  template <typename Store>
  Var<S> summary(Tape<S>& tape, Store& store, Var<S> x, Index steps) const {
    const Index batch = x.cols() / steps;
    Var<S> hf = forward(tape, store, x, steps, false);
    Var<S> hb = backward(tape, store, x, steps, true);
    return ad::concat_rows<S>({ad::slice_cols(hf, (steps - 1) * batch, batch), ad::slice_cols(hb, 0, batch)});
  }

  Index out_dim() const { return 2 * forward.hidden; }
};

}  // namespace mohba::nn
