#pragma once

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <limits>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "pcrec/error.hpp"
#include "pcrec/rng.hpp"

namespace pcrec {

using DenseMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using RowVector = Eigen::RowVectorXd;
using Vector = Eigen::VectorXd;

inline void require_shape(bool ok, const std::string& what) {
  if (!ok) throw ShapeError(what);
}

inline bool all_finite(std::span<const double> values) {
  return std::all_of(values.begin(), values.end(), [](double v) { return std::isfinite(v); });
}

inline std::span<double> as_span(DenseMatrix& m) { return {m.data(), static_cast<std::size_t>(m.size())}; }
inline std::span<double> as_span(RowVector& v) { return {v.data(), static_cast<std::size_t>(v.size())}; }
inline std::span<const double> as_span(const DenseMatrix& m) {
  return {m.data(), static_cast<std::size_t>(m.size())};
}
inline std::span<const double> as_span(const RowVector& v) {
  return {v.data(), static_cast<std::size_t>(v.size())};
}

// Uniform(-b, b) with b = sqrt(6 / (fan_in + fan_out)).
inline void fill_glorot_uniform(DenseMatrix& w, Stream& stream) {
  const double bound = std::sqrt(6.0 / static_cast<double>(w.rows() + w.cols()));
  for (Eigen::Index i = 0; i < w.size(); ++i) w.data()[i] = (2.0 * stream.uniform() - 1.0) * bound;
}

// ---------------------------------------------------------------------------
// Multi-layer perceptron: y = relu(... relu(x W0 + b0) ... W_{L-1} + b_{L-1}).
// Rows of x are samples. Every layer, including the last, is followed by ReLU.

struct LinearLayer {
  DenseMatrix weight;  // [in x out]
  RowVector bias;      // [out]
};

struct MlpParams {
  std::vector<LinearLayer> layers;

  Eigen::Index input_dim() const { return layers.empty() ? 0 : layers.front().weight.rows(); }
  Eigen::Index output_dim() const { return layers.empty() ? 0 : layers.back().weight.cols(); }

  static MlpParams zeros(std::span<const Eigen::Index> dims) {
    MlpParams p;
    for (std::size_t l = 0; l + 1 < dims.size(); ++l) {
      p.layers.push_back({DenseMatrix::Zero(dims[l], dims[l + 1]), RowVector::Zero(dims[l + 1])});
    }
    return p;
  }

  void validate() const {
    require_shape(!layers.empty(), "mlp: no layers");
    for (std::size_t l = 0; l < layers.size(); ++l) {
      require_shape(layers[l].bias.size() == layers[l].weight.cols(), "mlp: bias width");
      if (l > 0) require_shape(layers[l - 1].weight.cols() == layers[l].weight.rows(), "mlp: layer chain");
    }
  }

  template <class Fn>
  void for_each_tensor(Fn&& fn) {
    for (auto& layer : layers) {
      fn(as_span(layer.weight));
      fn(as_span(layer.bias));
    }
  }
  template <class Fn>
  void for_each_tensor(Fn&& fn) const {
    for (const auto& layer : layers) {
      fn(as_span(layer.weight));
      fn(as_span(layer.bias));
    }
  }
};

struct MlpTape {
  std::vector<DenseMatrix> inputs;       // input to each layer
  std::vector<DenseMatrix> preactivity;  // x W + b of each layer
};

inline std::pair<DenseMatrix, MlpTape> mlp_forward(const MlpParams& p, const DenseMatrix& x) {
  p.validate();
  require_shape(x.cols() == p.input_dim(), "mlp_forward: input width " + std::to_string(x.cols()) +
                                               " != " + std::to_string(p.input_dim()));
  MlpTape tape;
  DenseMatrix h = x;
  for (const auto& layer : p.layers) {
    DenseMatrix a = h * layer.weight;
    a.rowwise() += layer.bias;
    tape.inputs.push_back(std::move(h));
    h = a.cwiseMax(0.0);
    tape.preactivity.push_back(std::move(a));
  }
  return {std::move(h), std::move(tape)};
}

// Gradient w.r.t. the input and every parameter of an MLP.
inline std::pair<DenseMatrix, MlpParams> mlp_backward(const MlpParams& p, const MlpTape& tape,
                                                      const DenseMatrix& dy) {
  require_shape(tape.inputs.size() == p.layers.size(), "mlp_backward: tape/params depth mismatch");
  require_shape(dy.rows() == tape.preactivity.back().rows() && dy.cols() == p.output_dim(),
                "mlp_backward: dy shape");
  MlpParams grads;
  grads.layers.resize(p.layers.size());
  DenseMatrix upstream = dy;
  for (std::size_t l = p.layers.size(); l-- > 0;) {
    const DenseMatrix& a = tape.preactivity[l];
    DenseMatrix da = (a.array() > 0.0).select(upstream, 0.0);
    grads.layers[l].weight = tape.inputs[l].transpose() * da;
    grads.layers[l].bias = da.colwise().sum();
    upstream = da * p.layers[l].weight.transpose();
  }
  return {std::move(upstream), std::move(grads)};
}

// ---------------------------------------------------------------------------
// Adam with bias correction over an ordered list of parameter tensors.

struct AdamState {
  double lr = 0.001;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  std::uint64_t step = 0;
  std::vector<std::vector<double>> first_moment;
  std::vector<std::vector<double>> second_moment;

  AdamState() = default;
  explicit AdamState(double learning_rate) : lr(learning_rate) {}
};

// `params[t]` and `grads[t]` must have equal lengths for every t. Moments are
// lazily sized on the first call and validated on every later one. Nothing is
// mutated when a gradient is non-finite.
inline void adam_step(AdamState& state, std::span<const std::span<double>> params,
                      std::span<const std::span<const double>> grads) {
  require_shape(params.size() == grads.size(), "adam_step: tensor count mismatch");
  for (std::size_t t = 0; t < params.size(); ++t) {
    require_shape(params[t].size() == grads[t].size(), "adam_step: tensor size mismatch");
    if (!all_finite(grads[t])) throw NumericError("adam_step: non-finite gradient in tensor " + std::to_string(t));
  }
  if (state.first_moment.empty()) {
    for (const auto& p : params) {
      state.first_moment.emplace_back(p.size(), 0.0);
      state.second_moment.emplace_back(p.size(), 0.0);
    }
  }
  require_shape(state.first_moment.size() == params.size(), "adam_step: state/param count mismatch");
  for (std::size_t t = 0; t < params.size(); ++t) {
    require_shape(state.first_moment[t].size() == params[t].size(), "adam_step: state/param size mismatch");
  }

  ++state.step;
  const double bc1 = 1.0 - std::pow(state.beta1, static_cast<double>(state.step));
  const double bc2 = 1.0 - std::pow(state.beta2, static_cast<double>(state.step));
  for (std::size_t t = 0; t < params.size(); ++t) {
    auto& m = state.first_moment[t];
    auto& v = state.second_moment[t];
    const auto g = grads[t];
    auto p = params[t];
    for (std::size_t i = 0; i < p.size(); ++i) {
      m[i] = state.beta1 * m[i] + (1.0 - state.beta1) * g[i];
      v[i] = state.beta2 * v[i] + (1.0 - state.beta2) * g[i] * g[i];
      const double m_hat = m[i] / bc1;
      const double v_hat = v[i] / bc2;
      p[i] -= state.lr * m_hat / (std::sqrt(v_hat) + state.eps);
    }
  }
}

// ---------------------------------------------------------------------------

// Symmetric normalized Laplacian I - D^{-1/2} A D^{-1/2}; rows of isolated
// nodes are all zero.
inline DenseMatrix normalized_laplacian(const DenseMatrix& adj) {
  const Eigen::Index n = adj.rows();
  Vector inv_sqrt_deg(n);
  for (Eigen::Index i = 0; i < n; ++i) {
    const double deg = adj.row(i).sum();
    inv_sqrt_deg[i] = deg > 0.0 ? 1.0 / std::sqrt(deg) : 0.0;
  }
  DenseMatrix lap = -(inv_sqrt_deg.asDiagonal() * adj * inv_sqrt_deg.asDiagonal());
  for (Eigen::Index i = 0; i < n; ++i) lap(i, i) += inv_sqrt_deg[i] > 0.0 ? 1.0 : 0.0;
  return lap;
}

struct EigenPairs {
  Vector values;       // ascending
  DenseMatrix vectors;  // column j pairs with values[j]
};

// The k smallest eigenpairs of the normalized Laplacian of `adj`.
inline EigenPairs topk_eigenvectors(const DenseMatrix& adj, Eigen::Index k) {
  require_shape(adj.rows() == adj.cols(), "topk_eigenvectors: adjacency not square");
  require_shape(k >= 0 && k <= adj.rows(), "topk_eigenvectors: k out of range");
  if (adj.rows() == 0) return {Vector(0), DenseMatrix(0, 0)};
  require_shape((adj - adj.transpose()).cwiseAbs().maxCoeff() <= 1e-12,
                "topk_eigenvectors: adjacency not symmetric");
  const DenseMatrix lap = normalized_laplacian(adj);
  Eigen::SelfAdjointEigenSolver<DenseMatrix> solver(lap);
  if (solver.info() != Eigen::Success) throw NumericError("topk_eigenvectors: eigensolver failed");
  return {solver.eigenvalues().head(k), solver.eigenvectors().leftCols(k)};
}

inline double log_sum_exp(std::span<const double> v) {
  require_shape(!v.empty(), "log_sum_exp: empty input");
  const double peak = *std::max_element(v.begin(), v.end());
  if (!std::isfinite(peak)) return peak;
  double sum = 0.0;
  for (double x : v) sum += std::exp(x - peak);
  return peak + std::log(sum);
}

}  // namespace pcrec
