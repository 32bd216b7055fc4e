#pragma once

#include <cmath>
#include <cstdint>
#include <functional>
#include <span>
#include <vector>

#include "pcrec/error.hpp"
#include "pcrec/graph.hpp"
#include "pcrec/numerics.hpp"
#include "pcrec/rng.hpp"

namespace pcrec {

// One GIN layer: h_v <- MLP((1 + eps) h_v + sum_{w in N(v)} h_w).
struct GinLayer {
  MlpParams mlp;  // d -> d -> d
  double eps = 0.0;
};

// Graph encoder f: subgraph -> unit vector in R^d.
//   H0 = X W_in + b_in, then num_layers GIN layers, mean pool over nodes,
//   o = pooled W_out + b_out, embedding = o / |o|.
struct EncoderParams {
  DenseMatrix input_weight;  // [d_in x d]
  RowVector input_bias;      // [d]
  std::vector<GinLayer> layers;
  DenseMatrix output_weight;  // [d x d]
  RowVector output_bias;      // [d]

  Eigen::Index input_dim() const { return input_weight.rows(); }
  Eigen::Index dim() const { return input_weight.cols(); }

  // Tensors in checkpoint order: input W, b; per layer (mlp W, b per linear; eps); output W, b.
  template <class Self, class Fn>
  static void visit(Self& self, Fn&& fn) {
    fn(as_span(self.input_weight));
    fn(as_span(self.input_bias));
    for (auto& layer : self.layers) {
      layer.mlp.for_each_tensor(fn);
      fn(std::span(&layer.eps, 1));
    }
    fn(as_span(self.output_weight));
    fn(as_span(self.output_bias));
  }
  template <class Fn>
  void for_each_tensor(Fn&& fn) { visit(*this, fn); }
  template <class Fn>
  void for_each_tensor(Fn&& fn) const { visit(*this, fn); }

  std::vector<std::span<double>> tensors() {
    std::vector<std::span<double>> out;
    for_each_tensor([&](std::span<double> t) { out.push_back(t); });
    return out;
  }
  std::vector<std::span<const double>> tensors() const {
    std::vector<std::span<const double>> out;
    for_each_tensor([&](std::span<const double> t) { out.push_back(t); });
    return out;
  }

  std::size_t parameter_count() const {
    std::size_t n = 0;
    for_each_tensor([&](std::span<const double> t) { n += t.size(); });
    return n;
  }

  // Same shapes, all zeros.
  EncoderParams zeros_like() const {
    EncoderParams z = *this;
    z.for_each_tensor([](std::span<double> t) { std::fill(t.begin(), t.end(), 0.0); });
    return z;
  }

  void validate() const {
    const Eigen::Index d = dim();
    require_shape(d >= 1 && input_dim() >= 1, "encoder: empty dimensions");
    require_shape(input_bias.size() == d, "encoder: input bias width");
    for (const auto& layer : layers) {
      layer.mlp.validate();
      require_shape(layer.mlp.input_dim() == d && layer.mlp.output_dim() == d, "encoder: layer width");
      if (!std::isfinite(layer.eps)) throw NumericError("encoder: non-finite eps");
    }
    require_shape(output_weight.rows() == d && output_weight.cols() == d && output_bias.size() == d,
                  "encoder: readout shape");
  }

  friend bool operator==(const EncoderParams& a, const EncoderParams& b) {
    const auto ta = a.tensors();
    const auto tb = b.tensors();
    if (ta.size() != tb.size()) return false;
    for (std::size_t t = 0; t < ta.size(); ++t) {
      if (!std::equal(ta[t].begin(), ta[t].end(), tb[t].begin(), tb[t].end())) return false;
    }
    return true;
  }
};

struct EncoderPair {
  EncoderParams query;  // gradient-trained
  EncoderParams key;    // momentum-updated copy
  double momentum = 0.999;
};

struct GinTape {
  DenseMatrix features;
  std::vector<DenseMatrix> layer_inputs;  // H before each GIN layer
  std::vector<MlpTape> mlp_tapes;
  RowVector pooled;
  RowVector output;  // pre-normalization
  double norm = 0.0;
  RowVector embedding;
  const std::vector<std::vector<std::uint32_t>>* adj = nullptr;
};

namespace detail {

inline constexpr double kNormFloor = 1e-12;

// out = A h for a sparse symmetric adjacency.
inline DenseMatrix neighbor_sum(const std::vector<std::vector<std::uint32_t>>& adj, const DenseMatrix& h) {
  DenseMatrix out = DenseMatrix::Zero(h.rows(), h.cols());
  for (std::size_t v = 0; v < adj.size(); ++v) {
    for (std::uint32_t w : adj[v]) out.row(static_cast<Eigen::Index>(v)) += h.row(w);
  }
  return out;
}

}  // namespace detail

// The tape keeps a pointer to `sub.adj`; `sub` must outlive gin_backward.
inline std::pair<RowVector, GinTape> gin_forward(const EncoderParams& p, const EgoSubgraph& sub) {
  require_shape(sub.features.cols() == p.input_dim(), "gin_forward: feature width " +
                                                          std::to_string(sub.features.cols()) + " != " +
                                                          std::to_string(p.input_dim()));
  require_shape(sub.features.rows() == static_cast<Eigen::Index>(sub.size()) && sub.size() > 0,
                "gin_forward: feature rows must equal node count (> 0)");
  GinTape tape;
  tape.adj = &sub.adj;
  tape.features = sub.features;
  DenseMatrix h = sub.features * p.input_weight;
  h.rowwise() += p.input_bias;
  for (const auto& layer : p.layers) {
    DenseMatrix z = (1.0 + layer.eps) * h + detail::neighbor_sum(sub.adj, h);
    auto [next, mlp_tape] = mlp_forward(layer.mlp, z);
    tape.layer_inputs.push_back(std::move(h));
    tape.mlp_tapes.push_back(std::move(mlp_tape));
    h = std::move(next);
  }
  tape.pooled = h.colwise().mean();
  tape.output = tape.pooled * p.output_weight + p.output_bias;
  tape.norm = tape.output.norm();
  tape.embedding = tape.output / std::max(tape.norm, detail::kNormFloor);
  RowVector e = tape.embedding;
  return {std::move(e), std::move(tape)};
}

// Reverse pass of gin_forward. Returned gradients share the parameter layout.
inline EncoderParams gin_backward(const EncoderParams& p, const GinTape& tape, const RowVector& d_embedding) {
  require_shape(d_embedding.size() == p.dim(), "gin_backward: gradient width");
  require_shape(tape.layer_inputs.size() == p.layers.size() && tape.adj != nullptr, "gin_backward: tape mismatch");
  EncoderParams g = p.zeros_like();

  RowVector d_output;
  if (tape.norm > detail::kNormFloor) {
    const RowVector& e = tape.embedding;
    d_output = (d_embedding - e * e.dot(d_embedding)) / tape.norm;
  } else {
    d_output = d_embedding / detail::kNormFloor;
  }
  g.output_weight = tape.pooled.transpose() * d_output;
  g.output_bias = d_output;
  const RowVector d_pooled = d_output * p.output_weight.transpose();

  const Eigen::Index n = tape.features.rows();
  DenseMatrix dh = d_pooled.replicate(n, 1) / static_cast<double>(n);
  for (std::size_t l = p.layers.size(); l-- > 0;) {
    auto [dz, mlp_grads] = mlp_backward(p.layers[l].mlp, tape.mlp_tapes[l], dh);
    g.layers[l].mlp = std::move(mlp_grads);
    const DenseMatrix& h_in = tape.layer_inputs[l];
    g.layers[l].eps = (dz.array() * h_in.array()).sum();
    dh = (1.0 + p.layers[l].eps) * dz + detail::neighbor_sum(*tape.adj, dz);
  }
  g.input_weight = tape.features.transpose() * dh;
  g.input_bias = dh.colwise().sum();
  return g;
}

// key <- m * key + (1 - m) * query, elementwise.
inline void momentum_update(EncoderPair& pair) {
  const double m = pair.momentum;
  auto key = pair.key.tensors();
  const auto query = std::as_const(pair.query).tensors();
  require_shape(key.size() == query.size(), "momentum_update: tensor count mismatch");
  for (std::size_t t = 0; t < key.size(); ++t) {
    require_shape(key[t].size() == query[t].size(), "momentum_update: tensor shape mismatch");
    for (std::size_t i = 0; i < key[t].size(); ++i) key[t][i] = m * key[t][i] + (1.0 - m) * query[t][i];
  }
}

struct EncoderShape {
  Eigen::Index d_in = 16;
  Eigen::Index d = 64;
  std::uint32_t num_layers = 3;
};

// Glorot-uniform weights, zero biases, eps = 0; key is an exact copy.
inline EncoderPair init_encoder(std::uint64_t seed, const EncoderShape& shape, double momentum = 0.999) {
  if (shape.d_in < 1 || shape.d < 1) throw ConfigError("init_encoder: dimensions must be >= 1");
  if (!(momentum >= 0.0 && momentum < 1.0)) throw ConfigError("init_encoder: momentum outside [0,1)");
  Stream stream = Stream(seed).split(tag("encoder-init"));
  EncoderParams p;
  p.input_weight = DenseMatrix(shape.d_in, shape.d);
  fill_glorot_uniform(p.input_weight, stream);
  p.input_bias = RowVector::Zero(shape.d);
  const Eigen::Index dims[] = {shape.d, shape.d, shape.d};
  for (std::uint32_t l = 0; l < shape.num_layers; ++l) {
    GinLayer layer{MlpParams::zeros(dims), 0.0};
    for (auto& linear : layer.mlp.layers) fill_glorot_uniform(linear.weight, stream);
    p.layers.push_back(std::move(layer));
  }
  p.output_weight = DenseMatrix(shape.d, shape.d);
  fill_glorot_uniform(p.output_weight, stream);
  p.output_bias = RowVector::Zero(shape.d);
  return {p, p, momentum};
}

}  // namespace pcrec
