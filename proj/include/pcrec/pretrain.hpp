#pragma once

#include <cmath>
#include <cstdint>
#include <functional>
#include <numeric>
#include <ostream>
#include <string>
#include <vector>

#include "pcrec/binary_io.hpp"
#include "pcrec/checkpoint.hpp"
#include "pcrec/encoder.hpp"
#include "pcrec/features.hpp"
#include "pcrec/graph.hpp"
#include "pcrec/numerics.hpp"

namespace pcrec {

// Fixed-capacity FIFO of unit-norm key embeddings.
class MoCoQueue {
 public:
  MoCoQueue(std::size_t capacity, Eigen::Index dim) : buffer_(static_cast<Eigen::Index>(capacity), dim) {
    if (capacity == 0) throw ConfigError("queue capacity must be >= 1");
  }

  std::size_t capacity() const { return static_cast<std::size_t>(buffer_.rows()); }
  std::size_t size() const { return fill_; }
  Eigen::Index dim() const { return buffer_.cols(); }
  std::size_t cursor() const { return cursor_; }

  // Oldest first.
  DenseMatrix entries() const {
    DenseMatrix out(static_cast<Eigen::Index>(fill_), dim());
    const std::size_t start = fill_ < capacity() ? 0 : cursor_;
    for (std::size_t k = 0; k < fill_; ++k) {
      out.row(static_cast<Eigen::Index>(k)) = buffer_.row(static_cast<Eigen::Index>((start + k) % capacity()));
    }
    return out;
  }

  // Raw ring storage; only the first size() rows are meaningful until full.
  const DenseMatrix& storage() const { return buffer_; }

  void push(const RowVector& key) {
    require_shape(key.size() == dim(), "enqueue: key width");
    if (!all_finite(as_span(key)) || std::abs(key.norm() - 1.0) > 1e-6) {
      throw NumericError("enqueue: key is not unit-norm");
    }
    buffer_.row(static_cast<Eigen::Index>(cursor_)) = key;
    cursor_ = (cursor_ + 1) % capacity();
    if (fill_ < capacity()) ++fill_;
  }

  // Restores raw state (used by checkpoint loading).
  void restore(DenseMatrix storage, std::size_t fill, std::size_t cursor) {
    require_shape(storage.rows() == buffer_.rows() && storage.cols() == buffer_.cols(), "queue restore: shape");
    require_shape(fill <= capacity() && cursor < capacity(), "queue restore: cursor");
    buffer_ = std::move(storage);
    fill_ = fill;
    cursor_ = cursor;
  }

 private:
  DenseMatrix buffer_;
  std::size_t cursor_ = 0;
  std::size_t fill_ = 0;
};

// Inserts every row of `keys` in order. All rows are validated before any is
// inserted.
inline void enqueue(MoCoQueue& queue, const DenseMatrix& keys) {
  require_shape(keys.cols() == queue.dim(), "enqueue: key width");
  for (Eigen::Index r = 0; r < keys.rows(); ++r) {
    const RowVector k = keys.row(r);
    if (!all_finite(as_span(k)) || std::abs(k.norm() - 1.0) > 1e-6) {
      throw NumericError("enqueue: key " + std::to_string(r) + " is not unit-norm");
    }
  }
  for (Eigen::Index r = 0; r < keys.rows(); ++r) queue.push(keys.row(r));
}

struct InfoNceResult {
  double loss = 0.0;
  RowVector d_query;
};

// -log( exp(q.k/tau) / (exp(q.k/tau) + sum_n exp(q.n/tau)) ) over the queue's
// stored keys, with the gradient w.r.t. q only.
inline InfoNceResult infonce_loss(const RowVector& q, const RowVector& k_pos, const MoCoQueue& queue, double tau) {
  if (!(tau > 0.0)) throw ConfigError("infonce: temperature must be > 0");
  require_shape(q.size() == k_pos.size() && q.size() == queue.dim(), "infonce: width mismatch");
  const auto n_neg = static_cast<Eigen::Index>(queue.size());
  const auto negatives = queue.storage().topRows(n_neg);
  std::vector<double> logits(static_cast<std::size_t>(n_neg) + 1);
  logits[0] = q.dot(k_pos) / tau;
  for (Eigen::Index j = 0; j < n_neg; ++j) logits[static_cast<std::size_t>(j) + 1] = q.dot(negatives.row(j)) / tau;
  const double lse = log_sum_exp(logits);

  InfoNceResult out;
  out.loss = lse - logits[0];
  out.d_query = (std::exp(logits[0] - lse) - 1.0) * k_pos;
  for (Eigen::Index j = 0; j < n_neg; ++j) {
    out.d_query += std::exp(logits[static_cast<std::size_t>(j) + 1] - lse) * negatives.row(j);
  }
  out.d_query /= tau;
  return out;
}

struct PretrainConfig {
  double tau = 0.07;
  double momentum = 0.999;
  double lr = 0.005;
  std::uint32_t batch_size = 32;
  std::uint32_t queue_size = 512;
  std::uint64_t steps = 0;   // total optimizer steps; 0 derives the budget from epochs
  std::uint32_t epochs = 1;  // used when steps == 0
  std::uint64_t checkpoint_every = 0;  // 0 disables periodic checkpoints
  std::string checkpoint_path;
  EncoderShape encoder;
  SamplerConfig sampler;
  std::uint64_t seed = 0;

  void validate() const {
    if (!(tau > 0.0)) throw ConfigError("pretrain: tau must be > 0");
    if (!(momentum >= 0.0 && momentum < 1.0)) throw ConfigError("pretrain: momentum outside [0,1)");
    if (!(lr > 0.0)) throw ConfigError("pretrain: lr must be > 0");
    if (batch_size < 1 || queue_size < 1) throw ConfigError("pretrain: batch and queue sizes must be >= 1");
    if (encoder.d_in < 3 || encoder.d < 1) throw ConfigError("pretrain: d_in must be >= 3 and d >= 1");
    if (checkpoint_every > 0 && checkpoint_path.empty()) throw ConfigError("pretrain: checkpoint path missing");
    sampler.validate();
  }
};

// Everything needed to continue a run bit-identically.
struct PretrainState {
  EncoderPair encoders;
  AdamState adam;
  MoCoQueue queue;
  std::uint64_t step = 0;
};

inline PretrainState init_pretrain_state(const PretrainConfig& cfg) {
  cfg.validate();
  return {init_encoder(cfg.seed, cfg.encoder, cfg.momentum), AdamState(cfg.lr), MoCoQueue(cfg.queue_size, cfg.encoder.d),
          0};
}

// One MoCo update: mean InfoNCE over the batch (keys from the key encoder,
// negatives from the queue), Adam on the query encoder, momentum update of
// the key encoder, then the batch keys are enqueued. Subgraphs must carry
// features. Returns the mean loss.
inline double pretrain_step(EncoderPair& pair, const std::vector<SubgraphPair>& batch, MoCoQueue& queue,
                            const PretrainConfig& cfg, AdamState& adam) {
  if (batch.empty()) throw ConfigError("pretrain_step: empty batch");
  const double scale = 1.0 / static_cast<double>(batch.size());
  DenseMatrix keys(static_cast<Eigen::Index>(batch.size()), pair.key.dim());
  EncoderParams grads = pair.query.zeros_like();
  auto grad_tensors = grads.tensors();
  double loss = 0.0;
  for (std::size_t b = 0; b < batch.size(); ++b) {
    const RowVector key = gin_forward(pair.key, batch[b].key).first;
    keys.row(static_cast<Eigen::Index>(b)) = key;
    const auto [query, tape] = gin_forward(pair.query, batch[b].query);
    const InfoNceResult r = infonce_loss(query, key, queue, cfg.tau);
    loss += r.loss * scale;
    const EncoderParams g = gin_backward(pair.query, tape, r.d_query * scale);
    const auto src = g.tensors();
    for (std::size_t t = 0; t < src.size(); ++t) {
      for (std::size_t i = 0; i < src[t].size(); ++i) grad_tensors[t][i] += src[t][i];
    }
  }
  if (!std::isfinite(loss)) throw NumericError("pretrain_step: non-finite loss");

  auto params = pair.query.tensors();
  const std::vector<std::span<const double>> const_grads(grad_tensors.begin(), grad_tensors.end());
  adam_step(adam, params, const_grads);
  momentum_update(pair);
  enqueue(queue, keys);
  return loss;
}

// Ego-node order for an epoch: every user then every item, shuffled by the
// epoch's sub-stream.
inline std::vector<NodeRef> epoch_schedule(const BipartiteGraph& g, std::uint64_t seed, std::uint64_t epoch) {
  std::vector<NodeRef> nodes;
  nodes.reserve(g.num_nodes());
  for (std::uint32_t u = 0; u < g.num_users(); ++u) nodes.push_back(NodeRef::user(u));
  for (std::uint32_t i = 0; i < g.num_items(); ++i) nodes.push_back(NodeRef::item(i));
  Stream(seed).split(tag("schedule"), epoch).shuffle(std::span(nodes));
  return nodes;
}

inline std::uint64_t batches_per_epoch(const BipartiteGraph& g, std::uint32_t batch_size) {
  return (g.num_nodes() + batch_size - 1) / batch_size;
}

// Positive pairs for global step `step`, each drawn from its own
// (epoch, node) sub-stream so the batch does not depend on execution history.
inline std::vector<SubgraphPair> sample_batch(const BipartiteGraph& g, const PretrainConfig& cfg, std::uint64_t step) {
  const std::uint64_t per_epoch = batches_per_epoch(g, cfg.batch_size);
  const std::uint64_t epoch = step / per_epoch;
  const std::uint64_t offset = (step % per_epoch) * cfg.batch_size;
  const auto schedule = epoch_schedule(g, cfg.seed, epoch);
  const Stream root = Stream(cfg.seed).split(tag("pairs"));
  std::vector<SubgraphPair> batch;
  for (std::uint64_t k = offset; k < std::min<std::uint64_t>(offset + cfg.batch_size, schedule.size()); ++k) {
    const NodeRef node = schedule[k];
    SubgraphPair pair = make_positive_pair(g, node, cfg.sampler, root.split(epoch, g.global_index(node)));
    attach_features(pair.query, cfg.encoder.d_in);
    attach_features(pair.key, cfg.encoder.d_in);
    batch.push_back(std::move(pair));
  }
  return batch;
}

inline std::uint64_t total_steps(const BipartiteGraph& g, const PretrainConfig& cfg) {
  return cfg.steps > 0 ? cfg.steps : cfg.epochs * batches_per_epoch(g, cfg.batch_size);
}

// --- training-state checkpoint ------------------------------------------------
//   "PCRECTRN" | u32 version | str rng_algorithm | u64 seed | u64 step |
//   f64 tau | f64 momentum | u32 queue capacity | u32 d |
//   query encoder checkpoint | key encoder body |
//   adam: f64 lr, beta1, beta2, eps | u64 step | u32 tensors | per tensor: u64 len, m[len], v[len] |
//   queue: u64 fill | u64 cursor | f64 storage[capacity * d]
inline constexpr std::string_view kTrainMagic = "PCRECTRN";
inline constexpr std::uint32_t kTrainVersion = 1;

inline void save_pretrain_state(const std::string& path, const PretrainState& s, const PretrainConfig& cfg) {
  auto out = open_for_write(path);
  BinaryWriter w(out);
  w.bytes(kTrainMagic);
  w.u32(kTrainVersion);
  w.str(kRngAlgorithm);
  w.u64(cfg.seed);
  w.u64(s.step);
  w.f64(cfg.tau);
  w.f64(s.encoders.momentum);
  w.u32(static_cast<std::uint32_t>(s.queue.capacity()));
  w.u32(static_cast<std::uint32_t>(s.queue.dim()));
  write_encoder(out, s.encoders.query, s.encoders.momentum);
  write_encoder_body(w, s.encoders.key);
  w.f64(s.adam.lr);
  w.f64(s.adam.beta1);
  w.f64(s.adam.beta2);
  w.f64(s.adam.eps);
  w.u64(s.adam.step);
  w.u32(static_cast<std::uint32_t>(s.adam.first_moment.size()));
  for (std::size_t t = 0; t < s.adam.first_moment.size(); ++t) {
    w.u64(s.adam.first_moment[t].size());
    w.f64s(s.adam.first_moment[t]);
    w.f64s(s.adam.second_moment[t]);
  }
  w.u64(s.queue.size());
  w.u64(s.queue.cursor());
  w.f64s(as_span(s.queue.storage()));
  if (!out) throw IoError("write failed: " + path);
}

inline PretrainState load_pretrain_state(const std::string& path) {
  auto in = open_for_read(path);
  BinaryReader r(in);
  r.expect(kTrainMagic);
  if (const auto v = r.u32(); v != kTrainVersion) {
    throw FormatError("training checkpoint version " + std::to_string(v) + " unsupported");
  }
  if (r.str(256) != kRngAlgorithm) throw FormatError("training checkpoint written by a different RNG");
  r.u64();  // seed, informational
  const std::uint64_t step = r.u64();
  r.f64();  // tau, informational
  const double momentum = r.f64();
  const std::uint32_t capacity = r.u32();
  const std::uint32_t dim = r.u32();
  if (capacity == 0 || capacity > (1u << 24) || dim == 0 || dim > (1u << 16)) {
    throw FormatError("training checkpoint: implausible queue shape");
  }
  EncoderHeader header;
  EncoderParams query = read_encoder(in, &header);
  EncoderParams key = query;
  read_encoder_body(r, key);

  AdamState adam;
  adam.lr = r.f64();
  adam.beta1 = r.f64();
  adam.beta2 = r.f64();
  adam.eps = r.f64();
  adam.step = r.u64();
  const std::uint32_t tensors = r.u32();
  if (tensors > 4096) throw FormatError("training checkpoint: implausible tensor count");
  for (std::uint32_t t = 0; t < tensors; ++t) {
    const std::uint64_t len = r.u64();
    if (len > (1ull << 32)) throw FormatError("training checkpoint: implausible tensor size");
    adam.first_moment.emplace_back(len);
    adam.second_moment.emplace_back(len);
    r.f64s(adam.first_moment.back());
    r.f64s(adam.second_moment.back());
  }
  MoCoQueue queue(capacity, dim);
  const std::uint64_t fill = r.u64();
  const std::uint64_t cursor = r.u64();
  DenseMatrix storage(capacity, dim);
  r.f64s(as_span(storage));
  queue.restore(std::move(storage), fill, cursor);
  return {{std::move(query), std::move(key), momentum}, std::move(adam), std::move(queue), step};
}

// Runs until state.step == until_step, appending per-step losses to `trace`.
inline void continue_pretrain(PretrainState& state, const BipartiteGraph& source, const PretrainConfig& cfg,
                              std::uint64_t until_step, std::vector<double>& trace,
                              const std::function<void(std::uint64_t, double)>& on_step = {}) {
  cfg.validate();
  if (source.empty()) throw EmptyGraph("pretrain: empty source graph");
  while (state.step < until_step) {
    const auto batch = sample_batch(source, cfg, state.step);
    const double loss = pretrain_step(state.encoders, batch, state.queue, cfg, state.adam);
    ++state.step;
    trace.push_back(loss);
    if (on_step) on_step(state.step, loss);
    if (cfg.checkpoint_every > 0 && state.step % cfg.checkpoint_every == 0) {
      save_pretrain_state(cfg.checkpoint_path, state, cfg);
    }
  }
}

struct PretrainResult {
  EncoderParams encoder;  // query encoder
  std::vector<double> losses;
};

inline PretrainResult run_pretrain(const BipartiteGraph& source, const PretrainConfig& cfg,
                                   const std::function<void(std::uint64_t, double)>& on_step = {}) {
  if (source.empty()) throw EmptyGraph("pretrain: empty source graph");
  PretrainState state = init_pretrain_state(cfg);
  std::vector<double> trace;
  continue_pretrain(state, source, cfg, total_steps(source, cfg), trace, on_step);
  return {std::move(state.encoders.query), std::move(trace)};
}

// Line-delimited `step<TAB>loss`, steps counted from 1.
inline void write_loss_trace(std::ostream& out, const std::vector<double>& losses, std::uint64_t first_step = 1) {
  char buf[64];
  for (std::size_t k = 0; k < losses.size(); ++k) {
    std::snprintf(buf, sizeof buf, "%llu\t%.17g\n", static_cast<unsigned long long>(first_step + k), losses[k]);
    out << buf;
  }
}

}  // namespace pcrec
