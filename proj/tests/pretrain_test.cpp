#include <gtest/gtest.h>

#include <deque>
#include <filesystem>
#include <sstream>

#include "oracles.hpp"
#include "pcrec/pretrain.hpp"
#include "pcrec/synth.hpp"

using namespace pcrec;

namespace {

RowVector unit(Eigen::Index d, Stream& s) {
  RowVector v(d);
  for (Eigen::Index k = 0; k < d; ++k) v[k] = s.normal();
  return v / v.norm();
}

BipartiteGraph small_graph() {
  Stream s(6);
  return BipartiteGraph::from_edges(30, 25, oracle::random_edges(30, 25, 0.12, s));
}

PretrainConfig small_config() {
  PretrainConfig cfg;
  cfg.encoder = {8, 8, 2};
  cfg.batch_size = 8;
  cfg.queue_size = 20;
  cfg.seed = 3;
  cfg.sampler.max_subgraph_nodes = 16;
  return cfg;
}

std::string temp_path(const std::string& name) {
  return (std::filesystem::temp_directory_path() / ("pcrec_pretrain_test_" + name)).string();
}

}  // namespace

TEST(InfoNce, EmptyQueueIsZero) {
  Stream s(1);
  const MoCoQueue queue(4, 3);
  const auto r = infonce_loss(unit(3, s), unit(3, s), queue, 0.07);
  EXPECT_EQ(r.loss, 0.0);
  EXPECT_EQ(r.d_query.cwiseAbs().maxCoeff(), 0.0);
}

TEST(InfoNce, AnalyticTwoClassCase) {
  MoCoQueue queue(4, 2);
  queue.push(RowVector::Unit(2, 1));
  const auto r = infonce_loss(RowVector::Unit(2, 0), RowVector::Unit(2, 0), queue, 1.0);
  EXPECT_NEAR(r.loss, std::log1p(std::exp(-1.0)), 1e-9);
}

TEST(InfoNce, RejectsNonPositiveTemperature) {
  const MoCoQueue queue(4, 2);
  EXPECT_THROW(infonce_loss(RowVector::Unit(2, 0), RowVector::Unit(2, 0), queue, 0.0), ConfigError);
  EXPECT_THROW(infonce_loss(RowVector::Unit(2, 0), RowVector::Unit(2, 0), queue, -1.0), ConfigError);
}

TEST(InfoNce, GradientMatchesFiniteDifferences) {
  Stream s(4);
  for (int trial = 0; trial < 20; ++trial) {
    MoCoQueue queue(10, 5);
    for (int k = 0; k < 1 + trial % 10; ++k) queue.push(unit(5, s));
    RowVector q = unit(5, s);
    const RowVector k = unit(5, s);
    const double tau = 0.1 + 0.9 * s.uniform();
    const auto r = infonce_loss(q, k, queue, tau);
    const auto numeric = oracle::numeric_gradient([&] { return infonce_loss(q, k, queue, tau).loss; }, as_span(q));
    EXPECT_LT(oracle::max_relative_error(as_span(r.d_query), numeric), 1e-5) << "trial " << trial;
  }
}

TEST(InfoNce, LossWithinSphereBounds) {
  Stream s(5);
  for (int trial = 0; trial < 50; ++trial) {
    MoCoQueue queue(16, 4);
    const int fill = trial % 17;
    for (int k = 0; k < fill; ++k) queue.push(unit(4, s));
    const double tau = 0.07;
    const double loss = infonce_loss(unit(4, s), unit(4, s), queue, tau).loss;
    EXPECT_GE(loss, 0.0);
    EXPECT_LE(loss, std::log1p(fill * std::exp(2.0 / tau)) + 1e-9);
  }
}

TEST(Queue, EvictsOldestPastCapacity) {
  Stream s(7);
  MoCoQueue queue(5, 3);
  std::vector<RowVector> pushed;
  for (int k = 0; k < 6; ++k) {
    pushed.push_back(unit(3, s));
    enqueue(queue, pushed.back());
  }
  EXPECT_EQ(queue.size(), 5u);
  const DenseMatrix e = queue.entries();
  for (Eigen::Index r = 0; r < e.rows(); ++r) EXPECT_FALSE(e.row(r) == pushed[0]);
  EXPECT_EQ(RowVector(e.row(0)), pushed[1]);
}

TEST(Queue, BatchIntoEmptyQueue) {
  Stream s(8);
  MoCoQueue queue(10, 3);
  DenseMatrix keys(4, 3);
  for (int r = 0; r < 4; ++r) keys.row(r) = unit(3, s);
  enqueue(queue, keys);
  EXPECT_EQ(queue.size(), 4u);
}

TEST(Queue, MatchesDequeSimulation) {
  Stream s(9);
  MoCoQueue queue(7, 2);
  std::deque<RowVector> ref;
  for (int round = 0; round < 40; ++round) {
    const auto n = static_cast<Eigen::Index>(s.uniform_index(4));
    DenseMatrix keys(n, 2);
    for (Eigen::Index r = 0; r < n; ++r) {
      keys.row(r) = unit(2, s);
      ref.push_back(keys.row(r));
      if (ref.size() > 7) ref.pop_front();
    }
    enqueue(queue, keys);
    const DenseMatrix e = queue.entries();
    ASSERT_EQ(static_cast<std::size_t>(e.rows()), ref.size());
    for (std::size_t k = 0; k < ref.size(); ++k) EXPECT_EQ(RowVector(e.row(k)), ref[k]);
  }
}

TEST(Queue, RejectsNonUnitKeysAtomically) {
  MoCoQueue queue(4, 2);
  DenseMatrix keys(2, 2);
  keys << 1.0, 0.0, 0.5, 0.5;
  EXPECT_THROW(enqueue(queue, keys), NumericError);
  EXPECT_EQ(queue.size(), 0u);
}

TEST(PretrainStep, IdenticalPairsWithEmptyQueueLeaveQueryUnchanged) {
  PretrainConfig cfg = small_config();
  PretrainState state = init_pretrain_state(cfg);
  const auto g = small_graph();
  SubgraphPair pair = make_positive_pair(g, NodeRef::user(0), cfg.sampler, Stream(1));
  attach_features(pair.query, cfg.encoder.d_in);
  pair.key = pair.query;
  const EncoderParams before = state.encoders.query;
  const double loss = pretrain_step(state.encoders, {pair, pair}, state.queue, cfg, state.adam);
  EXPECT_EQ(loss, 0.0);
  EXPECT_EQ(state.encoders.query, before);
  EXPECT_EQ(state.queue.size(), 2u);
}

TEST(PretrainStep, KeyMovesOnlyByMomentum) {
  PretrainConfig cfg = small_config();
  PretrainState state = init_pretrain_state(cfg);
  const auto g = small_graph();
  for (std::uint64_t step = 0; step < 5; ++step) {
    const auto batch = sample_batch(g, cfg, step);
    const EncoderParams old_key = state.encoders.key;
    pretrain_step(state.encoders, batch, state.queue, cfg, state.adam);
    const auto key = std::as_const(state.encoders.key).tensors();
    const auto query = std::as_const(state.encoders.query).tensors();
    const auto prev = old_key.tensors();
    for (std::size_t t = 0; t < key.size(); ++t)
      for (std::size_t i = 0; i < key[t].size(); ++i)
        EXPECT_NEAR(key[t][i], cfg.momentum * prev[t][i] + (1 - cfg.momentum) * query[t][i], 1e-15);
  }
}

TEST(PretrainStep, QueueFillsAfterCeilSteps) {
  PretrainConfig cfg = small_config();  // queue 20, batch 8 -> 3 steps
  PretrainState state = init_pretrain_state(cfg);
  const auto g = small_graph();
  for (std::uint64_t step = 0; step < 3; ++step) {
    EXPECT_LT(state.queue.size(), 20u);
    pretrain_step(state.encoders, sample_batch(g, cfg, step), state.queue, cfg, state.adam);
  }
  EXPECT_EQ(state.queue.size(), 20u);
}

TEST(PretrainStep, SyntheticSourceLossFiniteForFiftySteps) {
  const auto source = generate_synthetic_pair(SynthConfig{}).source;
  PretrainConfig cfg;
  cfg.steps = 50;
  cfg.seed = 1;
  const auto r = run_pretrain(source, cfg);
  ASSERT_EQ(r.losses.size(), 50u);
  for (double l : r.losses) EXPECT_TRUE(std::isfinite(l));
}

TEST(Schedule, CoversEveryNodeOncePerEpoch) {
  const auto g = small_graph();
  const auto order = epoch_schedule(g, 3, 0);
  std::set<NodeRef> seen(order.begin(), order.end());
  EXPECT_EQ(seen.size(), g.num_nodes());
  EXPECT_NE(order, epoch_schedule(g, 3, 1));
  PretrainConfig cfg = small_config();
  std::size_t total = 0;
  for (std::uint64_t step = 0; step < batches_per_epoch(g, cfg.batch_size); ++step) total += sample_batch(g, cfg, step).size();
  EXPECT_EQ(total, g.num_nodes());
}

TEST(RunPretrain, ZeroStepsReturnsInitialEncoder) {
  PretrainConfig cfg = small_config();
  cfg.epochs = 0;
  const auto r = run_pretrain(small_graph(), cfg);
  EXPECT_TRUE(r.losses.empty());
  EXPECT_EQ(r.encoder, init_encoder(cfg.seed, cfg.encoder).query);
}

TEST(RunPretrain, DeterministicTrace) {
  PretrainConfig cfg = small_config();
  cfg.steps = 12;
  const auto a = run_pretrain(small_graph(), cfg);
  const auto b = run_pretrain(small_graph(), cfg);
  EXPECT_EQ(a.losses, b.losses);
  EXPECT_EQ(a.encoder, b.encoder);
}

TEST(RunPretrain, ResumeReproducesTrace) {
  const auto g = small_graph();
  PretrainConfig cfg = small_config();
  cfg.steps = 24;
  cfg.checkpoint_every = 10;
  cfg.checkpoint_path = temp_path("resume.bin");
  const auto full = run_pretrain(g, cfg);

  // checkpoint holds the state after step 20
  PretrainState state = load_pretrain_state(cfg.checkpoint_path);
  ASSERT_EQ(state.step, 20u);
  std::vector<double> tail;
  cfg.checkpoint_every = 0;
  continue_pretrain(state, g, cfg, 24, tail);
  ASSERT_EQ(tail.size(), 4u);
  for (std::size_t k = 0; k < 4; ++k) EXPECT_EQ(tail[k], full.losses[20 + k]);
  EXPECT_EQ(state.encoders.query, full.encoder);
  std::filesystem::remove(cfg.checkpoint_path);
}

TEST(RunPretrain, InvalidConfigRejected) {
  PretrainConfig cfg = small_config();
  cfg.tau = 0.0;
  EXPECT_THROW(run_pretrain(small_graph(), cfg), ConfigError);
  cfg = small_config();
  cfg.momentum = 1.0;
  EXPECT_THROW(run_pretrain(small_graph(), cfg), ConfigError);
  cfg = small_config();
  cfg.encoder.d_in = 2;
  EXPECT_THROW(run_pretrain(small_graph(), cfg), ConfigError);
}

TEST(LossTrace, TabSeparatedFromStepOne) {
  std::ostringstream out;
  write_loss_trace(out, {0.5, 0.25});
  EXPECT_EQ(out.str(), "1\t0.5\n2\t0.25\n");
}
