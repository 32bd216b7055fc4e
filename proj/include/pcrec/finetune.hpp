#pragma once

#include <cmath>
#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "pcrec/encoder.hpp"
#include "pcrec/error.hpp"
#include "pcrec/eval.hpp"
#include "pcrec/features.hpp"
#include "pcrec/graph.hpp"
#include "pcrec/numerics.hpp"
#include "pcrec/synth.hpp"

namespace pcrec {

enum class TransferMode { Random, PreOnly, CU_PE, CU_PM, Full };

inline std::string to_string(TransferMode m) {
  switch (m) {
    case TransferMode::Random: return "random";
    case TransferMode::PreOnly: return "pre-only";
    case TransferMode::CU_PE: return "cu-pe";
    case TransferMode::CU_PM: return "cu-pm";
    case TransferMode::Full: return "full";
  }
  return "?";
}

inline TransferMode parse_transfer_mode(const std::string& s) {
  for (auto m : {TransferMode::Random, TransferMode::PreOnly, TransferMode::CU_PE, TransferMode::CU_PM,
                 TransferMode::Full}) {
    if (to_string(m) == s) return m;
  }
  throw ConfigError("unknown transfer mode: " + s + " (random|pre-only|cu-pe|cu-pm|full)");
}

// Whether a mode is followed by fine-tuning.
inline bool fine_tunes(TransferMode m) { return m != TransferMode::PreOnly; }

// Glorot-uniform table. Each row draws from its own (kind, row) sub-stream,
// so a row's value depends only on (seed, kind, row, table shape).
inline EmbeddingTable random_embeddings(std::uint32_t num_users, std::uint32_t num_items, Eigen::Index d,
                                        std::uint64_t seed) {
  EmbeddingTable t{DenseMatrix(num_users, d), DenseMatrix(num_items, d)};
  const Stream root = Stream(seed).split(tag("embedding-init"));
  auto fill = [&](DenseMatrix& m, NodeKind kind) {
    const double bound = std::sqrt(6.0 / static_cast<double>(m.rows() + m.cols()));
    for (Eigen::Index r = 0; r < m.rows(); ++r) {
      Stream s = root.split(static_cast<std::uint64_t>(kind), static_cast<std::uint64_t>(r));
      for (Eigen::Index c = 0; c < d; ++c) m(r, c) = (2.0 * s.uniform() - 1.0) * bound;
    }
  };
  fill(t.users, NodeKind::User);
  fill(t.items, NodeKind::Item);
  return t;
}

// Encoder output for one node's random-walk subgraph.
inline RowVector encode_node(const EncoderParams& encoder, const BipartiteGraph& g, NodeRef node,
                             const SamplerConfig& sampler, const Stream& stream) {
  EgoSubgraph sub = sample_rw_subgraph(g, node, sampler, stream);
  attach_features(sub, encoder.input_dim());
  return gin_forward(encoder, sub).first;
}

struct TransferInputs {
  const BipartiteGraph* source = nullptr;              // required by CU_PE (and Full with source encoding)
  const CommonUserAlignment* common_users = nullptr;   // required by CU_PE / CU_PM
  bool full_encodes_common_users_from_source = false;  // Full: common users use their source subgraphs
};

// Initial target embeddings for a transfer mode:
//   Random  - Glorot rows only.
//   Full / PreOnly - every node encoded from its target subgraph.
//   CU_PM   - common users encoded from their target subgraphs, others random.
//   CU_PE   - common users encoded from their source subgraphs, others random.
// Node v is always sampled from sub-stream (seed, "transfer-target", v) or
// (seed, "transfer-source", source user), and random rows are shared with
// Random mode.
inline EmbeddingTable init_target_embeddings(const EncoderParams& encoder, const BipartiteGraph& target,
                                             TransferMode mode, const TransferInputs& inputs,
                                             const SamplerConfig& sampler, std::uint64_t seed) {
  encoder.validate();
  EmbeddingTable table = random_embeddings(target.num_users(), target.num_items(), encoder.dim(), seed);
  if (mode == TransferMode::Random) return table;

  const Stream target_root = Stream(seed).split(tag("transfer-target"));
  const Stream source_root = Stream(seed).split(tag("transfer-source"));
  auto from_target = [&](NodeRef n) {
    return encode_node(encoder, target, n, sampler, target_root.split(target.global_index(n)));
  };
  auto from_source = [&](std::uint32_t source_user) {
    if (!inputs.source) throw ConfigError("transfer: source graph required");
    if (source_user >= inputs.source->num_users()) throw ConfigError("transfer: alignment names unknown source user");
    return encode_node(encoder, *inputs.source, NodeRef::user(source_user), sampler, source_root.split(source_user));
  };
  auto check_alignment = [&] {
    if (!inputs.common_users) throw ConfigError("transfer: " + to_string(mode) + " requires a common-user alignment");
    for (const auto& [s, t] : *inputs.common_users) {
      if (t >= target.num_users()) throw ConfigError("transfer: alignment names unknown target user");
    }
  };

  switch (mode) {
    case TransferMode::Full:
    case TransferMode::PreOnly: {
      for (std::uint32_t u = 0; u < target.num_users(); ++u) table.users.row(u) = from_target(NodeRef::user(u));
      for (std::uint32_t i = 0; i < target.num_items(); ++i) table.items.row(i) = from_target(NodeRef::item(i));
      if (inputs.full_encodes_common_users_from_source) {
        check_alignment();
        for (const auto& [s, t] : *inputs.common_users) table.users.row(t) = from_source(s);
      }
      break;
    }
    case TransferMode::CU_PM:
      check_alignment();
      for (const auto& [s, t] : *inputs.common_users) table.users.row(t) = from_target(NodeRef::user(t));
      break;
    case TransferMode::CU_PE:
      check_alignment();
      for (const auto& [s, t] : *inputs.common_users) table.users.row(t) = from_source(s);
      break;
    case TransferMode::Random:
      break;
  }
  return table;
}

// ---------------------------------------------------------------------------
// BPR

struct BprTriple {
  std::uint32_t user;
  std::uint32_t pos;
  std::uint32_t neg;
};

struct BprResult {
  double loss = 0.0;
  EmbeddingTable grad;  // dense, zero outside touched rows
  std::vector<std::uint32_t> touched_users;  // ascending
  std::vector<std::uint32_t> touched_items;  // ascending
};

inline double log_sigmoid(double x) { return x >= 0.0 ? -std::log1p(std::exp(-x)) : x - std::log1p(std::exp(x)); }
inline double sigmoid(double x) {
  if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

// sum over triples of -log sigmoid(e_u.e_pos - e_u.e_neg), plus lambda times
// the squared norm of every distinct row the triples touch. When
// `membership` is given, each triple is checked against it.
inline BprResult bpr_loss(const EmbeddingTable& emb, std::span<const BprTriple> triples, double lambda,
                          const BipartiteGraph* membership = nullptr) {
  if (!(lambda >= 0.0)) throw ConfigError("bpr_loss: lambda must be >= 0");
  BprResult r;
  r.grad = {DenseMatrix::Zero(emb.users.rows(), emb.dim()), DenseMatrix::Zero(emb.items.rows(), emb.dim())};
  std::vector<char> user_touched(emb.num_users(), 0), item_touched(emb.num_items(), 0);
  for (const auto& t : triples) {
    if (t.user >= emb.num_users() || t.pos >= emb.num_items() || t.neg >= emb.num_items()) {
      throw ContractError("bpr_loss: index out of range");
    }
    if (membership && (!membership->has_edge(t.user, t.pos) || membership->has_edge(t.user, t.neg))) {
      throw ContractError("bpr_loss: triple violates pos in N(u), neg not in N(u)");
    }
    const auto eu = emb.users.row(t.user);
    const auto ei = emb.items.row(t.pos);
    const auto ej = emb.items.row(t.neg);
    const double margin = eu.dot(ei) - eu.dot(ej);
    r.loss -= log_sigmoid(margin);
    const double coeff = -sigmoid(-margin);  // d(-log sigmoid(x))/dx
    r.grad.users.row(t.user) += coeff * (ei - ej);
    r.grad.items.row(t.pos) += coeff * eu;
    r.grad.items.row(t.neg) -= coeff * eu;
    user_touched[t.user] = 1;
    item_touched[t.pos] = item_touched[t.neg] = 1;
  }
  for (std::uint32_t u = 0; u < emb.num_users(); ++u) {
    if (!user_touched[u]) continue;
    r.touched_users.push_back(u);
    r.loss += lambda * emb.users.row(u).squaredNorm();
    r.grad.users.row(u) += 2.0 * lambda * emb.users.row(u);
  }
  for (std::uint32_t i = 0; i < emb.num_items(); ++i) {
    if (!item_touched[i]) continue;
    r.touched_items.push_back(i);
    r.loss += lambda * emb.items.row(i).squaredNorm();
    r.grad.items.row(i) += 2.0 * lambda * emb.items.row(i);
  }
  return r;
}

// Uniform draw from items u has not interacted with, by rejection.
inline std::uint32_t sample_negative(const BipartiteGraph& g, std::uint32_t u, Stream& stream) {
  if (g.user_items(u).size() >= g.num_items()) {
    throw NoNegativeAvailable("user " + std::to_string(u) + " interacted with every item");
  }
  for (;;) {
    const auto j = static_cast<std::uint32_t>(stream.uniform_index(g.num_items()));
    if (!g.has_edge(u, j)) return j;
  }
}

inline std::vector<std::uint32_t> sample_negatives(const BipartiteGraph& g, std::uint32_t u, std::size_t count,
                                                   Stream stream) {
  if (u >= g.num_users()) throw NodeNotFound("sample_negatives: unknown user");
  std::vector<std::uint32_t> out;
  out.reserve(count);
  for (std::size_t k = 0; k < count; ++k) out.push_back(sample_negative(g, u, stream));
  return out;
}

// ---------------------------------------------------------------------------
// LightGCN propagation: layer k+1 = D^{-1/2} A D^{-1/2} layer k, output is the
// mean of layers 0..L. The operator is symmetric, so it is also its own
// adjoint for back-propagation.
inline EmbeddingTable lightgcn_propagate(const EmbeddingTable& emb, const BipartiteGraph& g, std::uint32_t layers) {
  if (layers < 1) throw ConfigError("lightgcn_propagate: layers must be >= 1");
  require_shape(emb.num_users() == g.num_users() && emb.num_items() == g.num_items(),
                "lightgcn_propagate: table/graph size mismatch");
  std::vector<double> user_scale(g.num_users()), item_scale(g.num_items());
  for (std::uint32_t u = 0; u < g.num_users(); ++u) {
    const auto deg = g.user_items(u).size();
    user_scale[u] = deg ? 1.0 / std::sqrt(static_cast<double>(deg)) : 0.0;
  }
  for (std::uint32_t i = 0; i < g.num_items(); ++i) {
    const auto deg = g.item_users(i).size();
    item_scale[i] = deg ? 1.0 / std::sqrt(static_cast<double>(deg)) : 0.0;
  }
  EmbeddingTable layer = emb;
  EmbeddingTable sum = emb;
  for (std::uint32_t k = 0; k < layers; ++k) {
    EmbeddingTable next{DenseMatrix::Zero(emb.users.rows(), emb.dim()), DenseMatrix::Zero(emb.items.rows(), emb.dim())};
    for (std::uint32_t u = 0; u < g.num_users(); ++u) {
      for (std::uint32_t i : g.user_items(u)) {
        const double w = user_scale[u] * item_scale[i];
        next.users.row(u) += w * layer.items.row(i);
        next.items.row(i) += w * layer.users.row(u);
      }
    }
    layer = std::move(next);
    sum.users += layer.users;
    sum.items += layer.items;
  }
  const double inv = 1.0 / static_cast<double>(layers + 1);
  sum.users *= inv;
  sum.items *= inv;
  return sum;
}

// ---------------------------------------------------------------------------
// Fine-tuning

struct FinetuneConfig {
  double lr = 0.001;
  double lambda = 1e-4;
  std::uint32_t negatives = 1;  // per positive per epoch
  std::uint32_t batch_size = 1024;
  std::uint32_t max_epochs = 100;
  std::uint32_t patience = 10;       // evaluation rounds without improvement
  std::uint32_t eval_interval = 5;   // epochs
  std::uint32_t lgcn_layers = 0;     // 0 = plain MF
  std::uint32_t monitor_k = 20;      // validation Recall@K drives early stopping
  std::uint64_t seed = 0;

  void validate() const {
    if (!(lr > 0.0)) throw ConfigError("finetune: lr must be > 0");
    if (!(lambda >= 0.0)) throw ConfigError("finetune: lambda must be >= 0");
    if (lgcn_layers != 0 && lgcn_layers != 1 && lgcn_layers != 3) throw ConfigError("finetune: lgcn_layers in {0,1,3}");
    if (negatives < 1 || batch_size < 1 || eval_interval < 1 || patience < 1 || monitor_k < 1) {
      throw ConfigError("finetune: counts must be >= 1");
    }
  }
};

struct ValidationPoint {
  std::uint32_t epoch = 0;
  double recall = 0.0;
};

struct FinetuneResult {
  EmbeddingTable embeddings;  // scoring embeddings of the best snapshot (propagated when lgcn_layers > 0)
  EmbeddingTable base;        // layer-0 embeddings of the best snapshot
  std::vector<ValidationPoint> validation;
  std::vector<double> epoch_losses;  // mean per-triple BPR objective
  std::uint32_t best_epoch = 0;
  std::uint32_t epochs_run = 0;
};

inline EmbeddingTable scoring_embeddings(const EmbeddingTable& base, const BipartiteGraph& train, std::uint32_t layers) {
  return layers == 0 ? base : lightgcn_propagate(base, train, layers);
}

// Mini-batch BPR with Adam. Each epoch draws `negatives` uniform negatives per
// training edge from sub-stream (seed, epoch, user), shuffles the triples with
// (seed, epoch), and steps once per batch on the batch-mean objective. Every
// `eval_interval` epochs (and before the first) validation Recall@monitor_k
// is measured; training stops after `patience` rounds without strict
// improvement and the best snapshot is returned.
inline FinetuneResult train_mf(const EmbeddingTable& init, const InteractionSplit& split, const FinetuneConfig& cfg,
                               const std::function<void(std::uint32_t, double)>& on_epoch = {}) {
  cfg.validate();
  init.validate();
  if (split.train.empty()) throw ConfigError("train_mf: empty training set");
  require_shape(init.num_users() == split.num_users && init.num_items() == split.num_items,
                "train_mf: table/split size mismatch");
  const BipartiteGraph train = split.train_graph();
  const HeldOut validation = validation_protocol(split);
  const std::size_t monitor_k = cfg.monitor_k;
  const bool has_validation = !split.validation.empty();
  auto validate_recall = [&](const EmbeddingTable& scoring) {
    if (!has_validation) return 0.0;
    return evaluate_protocol(scoring, validation, std::span(&monitor_k, 1)).recall.at(monitor_k);
  };

  FinetuneResult result;
  EmbeddingTable base = init;
  result.base = base;
  result.embeddings = scoring_embeddings(base, train, cfg.lgcn_layers);
  double best = validate_recall(result.embeddings);
  result.validation.push_back({0, best});
  std::uint32_t stale = 0;

  AdamState adam(cfg.lr);
  const Stream root = Stream(cfg.seed).split(tag("finetune"));
  std::vector<BprTriple> triples;
  for (std::uint32_t epoch = 1; epoch <= cfg.max_epochs; ++epoch) {
    triples.clear();
    for (std::uint32_t u = 0; u < train.num_users(); ++u) {
      const auto items = train.user_items(u);
      if (items.empty()) continue;
      Stream s = root.split(tag("negatives"), epoch, u);
      for (std::uint32_t i : items) {
        for (std::uint32_t n = 0; n < cfg.negatives; ++n) triples.push_back({u, i, sample_negative(train, u, s)});
      }
    }
    root.split(tag("order"), epoch).shuffle(std::span(triples));

    double epoch_loss = 0.0;
    for (std::size_t start = 0; start < triples.size(); start += cfg.batch_size) {
      const std::size_t end = std::min(triples.size(), start + cfg.batch_size);
      const std::span<const BprTriple> batch(triples.data() + start, end - start);
      const double scale = 1.0 / static_cast<double>(batch.size());
      EmbeddingTable grad;
      if (cfg.lgcn_layers == 0) {
        BprResult r = bpr_loss(base, batch, cfg.lambda);
        epoch_loss += r.loss;
        grad = std::move(r.grad);
      } else {
        const EmbeddingTable propagated = lightgcn_propagate(base, train, cfg.lgcn_layers);
        BprResult r = bpr_loss(propagated, batch, 0.0);
        grad = lightgcn_propagate(r.grad, train, cfg.lgcn_layers);
        epoch_loss += r.loss;
        for (std::uint32_t u : r.touched_users) {
          epoch_loss += cfg.lambda * base.users.row(u).squaredNorm();
          grad.users.row(u) += 2.0 * cfg.lambda * base.users.row(u);
        }
        for (std::uint32_t i : r.touched_items) {
          epoch_loss += cfg.lambda * base.items.row(i).squaredNorm();
          grad.items.row(i) += 2.0 * cfg.lambda * base.items.row(i);
        }
      }
      grad.users *= scale;
      grad.items *= scale;
      const std::span<double> params[] = {as_span(base.users), as_span(base.items)};
      const std::span<const double> grads[] = {as_span(grad.users), as_span(grad.items)};
      adam_step(adam, params, grads);
    }
    epoch_loss /= static_cast<double>(triples.size());
    if (!std::isfinite(epoch_loss)) throw NumericError("train_mf: non-finite loss");
    result.epoch_losses.push_back(epoch_loss);
    result.epochs_run = epoch;
    if (on_epoch) on_epoch(epoch, epoch_loss);

    if (epoch % cfg.eval_interval == 0) {
      EmbeddingTable scoring = scoring_embeddings(base, train, cfg.lgcn_layers);
      const double recall = validate_recall(scoring);
      result.validation.push_back({epoch, recall});
      if (recall > best) {
        best = recall;
        stale = 0;
        result.base = base;
        result.embeddings = std::move(scoring);
        result.best_epoch = epoch;
      } else if (++stale >= cfg.patience) {
        break;
      }
    }
  }
  if (!has_validation && result.epochs_run > 0) {
    // nothing to select on: keep the final state
    result.base = base;
    result.embeddings = scoring_embeddings(base, train, cfg.lgcn_layers);
    result.best_epoch = result.epochs_run;
  }
  return result;
}

}  // namespace pcrec
