#pragma once

#include <nlohmann/json.hpp>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <map>
#include <span>
#include <sstream>
#include <string>
#include <vector>

#include "pcrec/error.hpp"
#include "pcrec/graph.hpp"
#include "pcrec/numerics.hpp"
#include "pcrec/rng.hpp"

namespace pcrec {

// Per-node embeddings of a target domain; scores are inner products.
struct EmbeddingTable {
  DenseMatrix users;  // [num_users x d]
  DenseMatrix items;  // [num_items x d]

  Eigen::Index dim() const { return users.cols(); }
  std::uint32_t num_users() const { return static_cast<std::uint32_t>(users.rows()); }
  std::uint32_t num_items() const { return static_cast<std::uint32_t>(items.rows()); }

  void validate() const {
    require_shape(users.cols() == items.cols(), "embedding table: user/item width mismatch");
    if (!all_finite(as_span(users)) || !all_finite(as_span(items))) {
      throw NumericError("embedding table: non-finite entry");
    }
  }

  friend bool operator==(const EmbeddingTable& a, const EmbeddingTable& b) {
    return a.users.rows() == b.users.rows() && a.users.cols() == b.users.cols() &&
           a.items.rows() == b.items.rows() && a.items.cols() == b.items.cols() && a.users == b.users &&
           a.items == b.items;
  }
};

inline double score(const EmbeddingTable& emb, std::uint32_t u, std::uint32_t i) {
  if (u >= emb.num_users() || i >= emb.num_items()) throw ContractError("score: index out of range");
  return emb.users.row(u).dot(emb.items.row(i));
}

// ---------------------------------------------------------------------------
// Splitting

struct SplitConfig {
  double train_ratio = 0.8;  // includes validation
  double val_frac = 0.1;     // fraction of the training share held out for validation
  std::uint64_t seed = 0;
};

struct InteractionSplit {
  std::uint32_t num_users = 0;
  std::uint32_t num_items = 0;
  std::vector<Edge> train;  // each sorted
  std::vector<Edge> validation;
  std::vector<Edge> test;

  BipartiteGraph train_graph() const { return BipartiteGraph::from_edges(num_users, num_items, train); }

  // Sorted item lists per user.
  static std::vector<std::vector<std::uint32_t>> by_user(std::uint32_t num_users, std::span<const Edge> edges) {
    std::vector<std::vector<std::uint32_t>> out(num_users);
    for (const auto& [u, i] : edges) out[u].push_back(i);
    for (auto& row : out) std::sort(row.begin(), row.end());
    return out;
  }
};

// Uniform edge-level split. Users left without a training edge get their
// smallest-item held-out edge moved back to training.
inline InteractionSplit split_interactions(const BipartiteGraph& g, const SplitConfig& cfg) {
  if (g.empty()) throw EmptyGraph("split_interactions: empty graph");
  if (!(cfg.train_ratio >= 0.0 && cfg.train_ratio <= 1.0) || !(cfg.val_frac >= 0.0 && cfg.val_frac <= 1.0)) {
    throw ConfigError("split_interactions: ratios outside [0,1]");
  }
  std::vector<Edge> edges = g.edges();
  Stream(cfg.seed).split(tag("split")).shuffle(std::span(edges));
  const auto n_test = static_cast<std::size_t>(std::llround((1.0 - cfg.train_ratio) * edges.size()));
  const auto n_val = static_cast<std::size_t>(std::llround(cfg.val_frac * (edges.size() - n_test)));

  InteractionSplit s;
  s.num_users = g.num_users();
  s.num_items = g.num_items();
  s.test.assign(edges.begin(), edges.begin() + n_test);
  s.validation.assign(edges.begin() + n_test, edges.begin() + n_test + n_val);
  s.train.assign(edges.begin() + n_test + n_val, edges.end());

  std::vector<char> has_train(g.num_users(), 0);
  for (const auto& e : s.train) has_train[e.first] = 1;
  auto take_back = [&](std::vector<Edge>& from, std::uint32_t u) {
    auto best = from.end();
    for (auto it = from.begin(); it != from.end(); ++it) {
      if (it->first == u && (best == from.end() || it->second < best->second)) best = it;
    }
    if (best == from.end()) return false;
    s.train.push_back(*best);
    from.erase(best);
    return true;
  };
  for (std::uint32_t u = 0; u < g.num_users(); ++u) {
    if (has_train[u] || g.user_items(u).empty()) continue;
    if (!take_back(s.test, u)) take_back(s.validation, u);
  }
  std::sort(s.train.begin(), s.train.end());
  std::sort(s.validation.begin(), s.validation.end());
  std::sort(s.test.begin(), s.test.end());
  return s;
}

// ---------------------------------------------------------------------------
// Ranking and metrics

// Top-k items by descending score, ties broken by ascending item index.
// `exclude` must be sorted.
inline std::vector<std::uint32_t> rank_by_scores(std::span<const double> scores,
                                                 std::span<const std::uint32_t> exclude, std::size_t k) {
  if (k < 1) throw ContractError("rank_items: K must be >= 1");
  std::vector<std::uint32_t> candidates;
  candidates.reserve(scores.size());
  for (std::uint32_t i = 0; i < scores.size(); ++i) {
    if (!std::binary_search(exclude.begin(), exclude.end(), i)) candidates.push_back(i);
  }
  const std::size_t take = std::min(k, candidates.size());
  auto better = [&](std::uint32_t a, std::uint32_t b) {
    return scores[a] > scores[b] || (scores[a] == scores[b] && a < b);
  };
  std::partial_sort(candidates.begin(), candidates.begin() + static_cast<std::ptrdiff_t>(take), candidates.end(),
                    better);
  candidates.resize(take);
  return candidates;
}

inline std::vector<double> user_scores(const EmbeddingTable& emb, std::uint32_t u) {
  if (u >= emb.num_users()) throw ContractError("user index out of range");
  const Vector s = emb.items * emb.users.row(u).transpose();
  return {s.data(), s.data() + s.size()};
}

inline std::vector<std::uint32_t> rank_items(const EmbeddingTable& emb, std::uint32_t u,
                                             std::span<const std::uint32_t> exclude, std::size_t k) {
  return rank_by_scores(user_scores(emb, u), exclude, k);
}

// |top-k ∩ relevant| / |relevant|. `relevant` must be sorted and nonempty.
inline double recall_at_k(std::span<const std::uint32_t> ranked, std::span<const std::uint32_t> relevant,
                          std::size_t k) {
  if (relevant.empty()) throw ContractError("recall_at_k: empty relevant set");
  std::size_t hits = 0;
  for (std::size_t r = 0; r < std::min(k, ranked.size()); ++r) {
    hits += std::binary_search(relevant.begin(), relevant.end(), ranked[r]) ? 1 : 0;
  }
  return static_cast<double>(hits) / static_cast<double>(relevant.size());
}

// Truncated average precision: sum over hit ranks of precision@rank, divided
// by min(|relevant|, k). `relevant` must be sorted and nonempty.
inline double map_at_k(std::span<const std::uint32_t> ranked, std::span<const std::uint32_t> relevant,
                       std::size_t k) {
  if (relevant.empty()) throw ContractError("map_at_k: empty relevant set");
  std::size_t hits = 0;
  double sum = 0.0;
  for (std::size_t r = 0; r < std::min(k, ranked.size()); ++r) {
    if (std::binary_search(relevant.begin(), relevant.end(), ranked[r])) {
      ++hits;
      sum += static_cast<double>(hits) / static_cast<double>(r + 1);
    }
  }
  return sum / static_cast<double>(std::min(relevant.size(), k));
}

struct MetricsReport {
  std::map<std::size_t, double> recall;  // K -> mean Recall@K
  std::map<std::size_t, double> map;     // K -> mean MAP@K
  std::size_t users_evaluated = 0;
  std::string fingerprint;
  std::uint64_t seed = 0;

  nlohmann::json to_json() const {
    nlohmann::json j;
    j["fingerprint"] = fingerprint;
    j["seed"] = seed;
    j["users_evaluated"] = users_evaluated;
    for (const auto& [k, v] : recall) j["metrics"]["recall@" + std::to_string(k)] = v;
    for (const auto& [k, v] : map) j["metrics"]["map@" + std::to_string(k)] = v;
    return j;
  }

  static MetricsReport from_json(const nlohmann::json& j) {
    MetricsReport r;
    r.fingerprint = j.at("fingerprint").get<std::string>();
    r.seed = j.at("seed").get<std::uint64_t>();
    r.users_evaluated = j.at("users_evaluated").get<std::size_t>();
    for (const auto& [key, value] : j.at("metrics").items()) {
      const auto at = key.find('@');
      if (at == std::string::npos) throw FormatError("metrics: bad key " + key);
      const std::size_t k = std::stoul(key.substr(at + 1));
      (key.substr(0, at) == "recall" ? r.recall : r.map)[k] = value.get<double>();
    }
    return r;
  }

  // key=value lines, one per field.
  std::string to_text() const {
    std::ostringstream out;
    char buf[64];
    out << "fingerprint=" << fingerprint << "\nseed=" << seed << "\nusers_evaluated=" << users_evaluated << "\n";
    for (const auto& [k, v] : recall) {
      std::snprintf(buf, sizeof buf, "%.10f", v);
      out << "recall@" << k << "=" << buf << "\n";
    }
    for (const auto& [k, v] : map) {
      std::snprintf(buf, sizeof buf, "%.10f", v);
      out << "map@" << k << "=" << buf << "\n";
    }
    return out.str();
  }
};

struct HeldOut {
  std::vector<std::vector<std::uint32_t>> exclude;   // per user, sorted
  std::vector<std::vector<std::uint32_t>> relevant;  // per user, sorted
};

// Test evaluation: exclude train and validation items, score test items.
inline HeldOut test_protocol(const InteractionSplit& s) {
  std::vector<Edge> known = s.train;
  known.insert(known.end(), s.validation.begin(), s.validation.end());
  return {InteractionSplit::by_user(s.num_users, known), InteractionSplit::by_user(s.num_users, s.test)};
}

// Validation evaluation: exclude train items, score validation items.
inline HeldOut validation_protocol(const InteractionSplit& s) {
  return {InteractionSplit::by_user(s.num_users, s.train), InteractionSplit::by_user(s.num_users, s.validation)};
}

// Mean Recall@K and MAP@K over users with a nonempty relevant set, in
// ascending user order.
inline MetricsReport evaluate_protocol(const EmbeddingTable& emb, const HeldOut& held,
                                       std::span<const std::size_t> ks) {
  if (ks.empty()) throw ConfigError("evaluate: no cutoffs");
  require_shape(held.relevant.size() == emb.num_users(), "evaluate: user count mismatch");
  const std::size_t k_max = *std::max_element(ks.begin(), ks.end());
  MetricsReport report;
  for (std::size_t k : ks) report.recall[k] = report.map[k] = 0.0;
  for (std::uint32_t u = 0; u < emb.num_users(); ++u) {
    if (held.relevant[u].empty()) continue;
    const auto ranked = rank_items(emb, u, held.exclude[u], k_max);
    for (std::size_t k : ks) {
      report.recall[k] += recall_at_k(ranked, held.relevant[u], k);
      report.map[k] += map_at_k(ranked, held.relevant[u], k);
    }
    ++report.users_evaluated;
  }
  if (report.users_evaluated > 0) {
    for (auto& [k, v] : report.recall) v /= static_cast<double>(report.users_evaluated);
    for (auto& [k, v] : report.map) v /= static_cast<double>(report.users_evaluated);
  }
  return report;
}

inline MetricsReport evaluate(const EmbeddingTable& emb, const InteractionSplit& split,
                              std::span<const std::size_t> ks, const std::string& fingerprint = {},
                              std::uint64_t seed = 0) {
  MetricsReport r = evaluate_protocol(emb, test_protocol(split), ks);
  r.fingerprint = fingerprint;
  r.seed = seed;
  return r;
}

}  // namespace pcrec
