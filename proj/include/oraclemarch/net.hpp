// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <Eigen/Dense>

#include <cmath>
#include <cstdint>
#include <optional>
#include <random>
#include <string>
#include <type_traits>
#include <vector>

#include "oraclemarch/error.hpp"

namespace oraclemarch::net {

template <typename T>
using Matrix = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic>;
template <typename T>
using Vector = Eigen::Matrix<T, Eigen::Dynamic, 1>;

/// An auxiliary input concatenated below the activations entering dense layer `layer`.
struct SkipSpec {
  int aux_dim = 0;
  int layer = 0;
  bool operator==(const SkipSpec&) const = default;
};

/// Fully connected ReLU network: `hidden_layers` dense layers of `hidden_width`
/// followed by one output layer. Outputs flagged in `sigmoid_outputs` pass through a
/// logistic function, the rest are linear.
struct MLPConfig {
  int in_dim = 1;
  int out_dim = 1;
  int hidden_layers = 1;
  int hidden_width = 1;
  std::optional<SkipSpec> skip;
  std::vector<bool> sigmoid_outputs;

  int layer_count() const { return hidden_layers + 1; }
  int aux_dim() const { return skip ? skip->aux_dim : 0; }

  int layer_fan_in(int l) const {
    const int base = l == 0 ? in_dim : hidden_width;
    return base + (skip && skip->layer == l ? skip->aux_dim : 0);
  }
  int layer_fan_out(int l) const { return l == hidden_layers ? out_dim : hidden_width; }

  bool is_sigmoid(int k) const { return k < int(sigmoid_outputs.size()) && sigmoid_outputs[k]; }

  void validate() const {
    require(in_dim >= 1 && out_dim >= 1 && hidden_layers >= 0 && hidden_width >= 1,
            ErrorCode::InvalidArgument, "network dimensions must be >= 1");
    if (skip)
      require(skip->aux_dim >= 1 && skip->layer >= 0 && skip->layer <= hidden_layers,
              ErrorCode::InvalidArgument, "skip layer index out of range");
    require(sigmoid_outputs.empty() || int(sigmoid_outputs.size()) == out_dim,
            ErrorCode::InvalidArgument, "sigmoid flags must cover every output");
  }

  bool operator==(const MLPConfig&) const = default;
};

template <typename T>
struct MLPParams {
  std::vector<Matrix<T>> weights;  // layer l: fan_out x fan_in
  std::vector<Vector<T>> biases;

  size_t parameter_count() const {
    size_t n = 0;
    for (size_t l = 0; l < weights.size(); ++l) n += weights[l].size() + biases[l].size();
    return n;
  }

  /// Visits every tensor in declaration order: W0, b0, W1, b1, ...
  template <typename Fn>
  void for_each_tensor(Fn&& fn) {
    for (size_t l = 0; l < weights.size(); ++l) {
      fn(weights[l].data(), size_t(weights[l].size()));
      fn(biases[l].data(), size_t(biases[l].size()));
    }
  }
  template <typename Fn>
  void for_each_tensor(Fn&& fn) const {
    for (size_t l = 0; l < weights.size(); ++l) {
      fn(weights[l].data(), size_t(weights[l].size()));
      fn(biases[l].data(), size_t(biases[l].size()));
    }
  }

  template <typename U>
  MLPParams<U> cast() const {
    MLPParams<U> out;
    for (size_t l = 0; l < weights.size(); ++l) {
      out.weights.push_back(weights[l].template cast<U>());
      out.biases.push_back(biases[l].template cast<U>());
    }
    return out;
  }

  bool operator==(const MLPParams& o) const {
    if (weights.size() != o.weights.size()) return false;
    for (size_t l = 0; l < weights.size(); ++l)
      if (weights[l] != o.weights[l] || biases[l] != o.biases[l]) return false;
    return true;
  }
};

template <typename T>
MLPParams<T> zero_params(const MLPConfig& cfg) {
  MLPParams<T> p;
  for (int l = 0; l < cfg.layer_count(); ++l) {
    p.weights.push_back(Matrix<T>::Zero(cfg.layer_fan_out(l), cfg.layer_fan_in(l)));
    p.biases.push_back(Vector<T>::Zero(cfg.layer_fan_out(l)));
  }
  return p;
}

template <typename T>
void check_shapes(const MLPConfig& cfg, const MLPParams<T>& p) {
  require(int(p.weights.size()) == cfg.layer_count() && p.biases.size() == p.weights.size(),
          ErrorCode::ShapeMismatch, "layer count does not match config");
  for (int l = 0; l < cfg.layer_count(); ++l)
    require(p.weights[l].rows() == cfg.layer_fan_out(l) &&
                p.weights[l].cols() == cfg.layer_fan_in(l) &&
                p.biases[l].size() == cfg.layer_fan_out(l),
            ErrorCode::ShapeMismatch, "layer " + std::to_string(l) + " shape mismatch");
}

inline double xavier_bound(int fan_in, int fan_out) { return std::sqrt(6.0 / (fan_in + fan_out)); }

/// Xavier-uniform weights, zero biases. Values are drawn in double and rounded so the
/// float and double instantiations agree for a given seed.
template <typename T>
MLPParams<T> init_params(const MLPConfig& cfg, uint64_t seed) {
  cfg.validate();
  std::mt19937_64 rng(seed);
  MLPParams<T> p = zero_params<T>(cfg);
  for (int l = 0; l < cfg.layer_count(); ++l) {
    const double bound = xavier_bound(cfg.layer_fan_in(l), cfg.layer_fan_out(l));
    std::uniform_real_distribution<double> dist(-bound, bound);
    auto& w = p.weights[l];
    for (Eigen::Index i = 0; i < w.size(); ++i) w.data()[i] = static_cast<T>(dist(rng));
  }
  return p;
}

template <typename T>
struct ForwardCache {
  std::vector<Matrix<T>> inputs;  // input to each layer, skip rows included
  std::vector<Matrix<T>> pre;     // pre-activations of each layer
  Matrix<T> output;               // post output activation
  bool valid = false;
};

template <typename T>
T sigmoid(T x) {
  return T(1) / (T(1) + std::exp(-x));
}

/// Batch forward pass; inputs are column-major with one sample per column.
template <typename T>
Matrix<T> forward(const MLPParams<T>& params, const MLPConfig& cfg,
                  const std::type_identity_t<Matrix<T>>& input,
                  const std::type_identity_t<Matrix<T>>* aux = nullptr,
                  std::type_identity_t<ForwardCache<T>>* cache = nullptr) {
  require(input.rows() == cfg.in_dim, ErrorCode::ShapeMismatch, "input rows != in_dim");
  if (cfg.skip)
    require(aux && aux->rows() == cfg.skip->aux_dim && aux->cols() == input.cols(),
            ErrorCode::ShapeMismatch, "skip input missing or mis-shaped");
  const Eigen::Index batch = input.cols();
  if (cache) {
    cache->inputs.assign(cfg.layer_count(), {});
    cache->pre.assign(cfg.layer_count(), {});
  }

  Matrix<T> act = input;
  for (int l = 0; l < cfg.layer_count(); ++l) {
    if (cfg.skip && cfg.skip->layer == l) {
      Matrix<T> joined(act.rows() + aux->rows(), batch);
      joined.topRows(act.rows()) = act;
      joined.bottomRows(aux->rows()) = *aux;
      act = std::move(joined);
    }
    Matrix<T> z = params.weights[l] * act;
    z.colwise() += params.biases[l];
    if (cache) cache->inputs[l] = std::move(act);
    if (l < cfg.hidden_layers) {
      act = z.cwiseMax(T(0));
    } else {
      act = z;
      for (int k = 0; k < cfg.out_dim; ++k)
        if (cfg.is_sigmoid(k))
          act.row(k) = z.row(k).unaryExpr([](T v) { return sigmoid(v); });
    }
    if (cache) cache->pre[l] = std::move(z);
  }
  if (cache) {
    cache->output = act;
    cache->valid = true;
  }
  return act;
}

template <typename T>
struct Gradients {
  MLPParams<T> params;
  Matrix<T> input;
  Matrix<T> aux;
};

/// Reverse pass for `upstream` = dLoss/dOutput (post activation). ReLU uses the
/// subgradient 0 at a pre-activation of exactly 0.
template <typename T>
Gradients<T> backward(const MLPParams<T>& params, const MLPConfig& cfg,
                      const std::type_identity_t<ForwardCache<T>>& cache,
                      const std::type_identity_t<Matrix<T>>& upstream) {
  require(cache.valid, ErrorCode::MissingCache, "backward called without a forward cache");
  require(upstream.rows() == cfg.out_dim && upstream.cols() == cache.output.cols(),
          ErrorCode::ShapeMismatch, "upstream gradient shape mismatch");
  Gradients<T> g;
  g.params = zero_params<T>(cfg);

  Matrix<T> dz = upstream;
  for (int k = 0; k < cfg.out_dim; ++k) {
    if (!cfg.is_sigmoid(k)) continue;
    dz.row(k) = dz.row(k).cwiseProduct(
        cache.output.row(k).unaryExpr([](T s) { return s * (T(1) - s); }));
  }
  for (int l = cfg.layer_count() - 1; l >= 0; --l) {
    if (l < cfg.hidden_layers)
      dz = dz.cwiseProduct(
          cache.pre[l].unaryExpr([](T v) { return v > T(0) ? T(1) : T(0); }));
    g.params.weights[l].noalias() = dz * cache.inputs[l].transpose();
    g.params.biases[l] = dz.rowwise().sum();
    Matrix<T> da = params.weights[l].transpose() * dz;
    if (cfg.skip && cfg.skip->layer == l) {
      const Eigen::Index base = da.rows() - cfg.skip->aux_dim;
      g.aux = da.bottomRows(cfg.skip->aux_dim);
      da = Matrix<T>(da.topRows(base));
    }
    dz = std::move(da);
  }
  g.input = std::move(dz);
  return g;
}

template <typename T>
void accumulate(MLPParams<T>& into, const MLPParams<T>& add) {
  for (size_t l = 0; l < into.weights.size(); ++l) {
    into.weights[l] += add.weights[l];
    into.biases[l] += add.biases[l];
  }
}

struct AdamHyper {
  double lr = 5e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

template <typename T>
struct AdamState {
  MLPParams<T> m;
  MLPParams<T> v;
  int64_t step = 0;
  AdamHyper hyper;

  static AdamState create(const MLPConfig& cfg, AdamHyper hyper = {}) {
    return {zero_params<T>(cfg), zero_params<T>(cfg), 0, hyper};
  }
};

template <typename T>
void adam_step(MLPParams<T>& params, const MLPParams<T>& grads, AdamState<T>& state) {
  require(params.weights.size() == grads.weights.size() &&
              params.weights.size() == state.m.weights.size(),
          ErrorCode::ShapeMismatch, "adam: layer count mismatch");
  for (size_t l = 0; l < params.weights.size(); ++l)
    require(params.weights[l].rows() == grads.weights[l].rows() &&
                params.weights[l].cols() == grads.weights[l].cols() &&
                params.biases[l].size() == grads.biases[l].size(),
            ErrorCode::ShapeMismatch, "adam: tensor shape mismatch");

  ++state.step;
  const auto& h = state.hyper;
  const T b1 = T(h.beta1), b2 = T(h.beta2);
  const T c1 = T(1.0 - std::pow(h.beta1, double(state.step)));
  const T c2 = T(1.0 - std::pow(h.beta2, double(state.step)));
  const T lr = T(h.lr), eps = T(h.eps);

  auto update = [&](auto& p, const auto& g, auto& m, auto& v) {
    m = b1 * m + (T(1) - b1) * g;
    v = b2 * v + (T(1) - b2) * g.cwiseProduct(g);
    p.array() -= lr * (m.array() / c1) / ((v.array() / c2).sqrt() + eps);
  };
  for (size_t l = 0; l < params.weights.size(); ++l) {
    update(params.weights[l], grads.weights[l], state.m.weights[l], state.v.weights[l]);
    update(params.biases[l], grads.biases[l], state.m.biases[l], state.v.biases[l]);
  }
}

/// FLOPs of one forward evaluation: two per multiply-add, biases and activations free.
inline uint64_t flop_count(const MLPConfig& cfg) {
  uint64_t total = 0;
  for (int l = 0; l < cfg.layer_count(); ++l)
    total += 2ull * uint64_t(cfg.layer_fan_in(l)) * uint64_t(cfg.layer_fan_out(l));
  return total;
}

}  // namespace oraclemarch::net
