#pragma once

#include <algorithm>
#include <compare>
#include <cstdint>
#include <deque>
#include <optional>
#include <span>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include "pcrec/error.hpp"
#include "pcrec/numerics.hpp"
#include "pcrec/rng.hpp"

namespace pcrec {

enum class NodeKind : std::uint8_t { User = 0, Item = 1 };

// A node of the bipartite graph: users and items keep separate index spaces.
struct NodeRef {
  NodeKind kind = NodeKind::User;
  std::uint32_t index = 0;

  static NodeRef user(std::uint32_t i) { return {NodeKind::User, i}; }
  static NodeRef item(std::uint32_t i) { return {NodeKind::Item, i}; }
  bool is_user() const { return kind == NodeKind::User; }

  friend auto operator<=>(const NodeRef&, const NodeRef&) = default;
};

inline std::string to_string(NodeRef n) { return (n.is_user() ? "u" : "i") + std::to_string(n.index); }

using Edge = std::pair<std::uint32_t, std::uint32_t>;  // (user, item)

// Immutable user-item interaction graph stored as two mirrored CSR arrays.
class BipartiteGraph {
 public:
  BipartiteGraph() : user_offsets_(1, 0), item_offsets_(1, 0) {}

  // Deduplicates and sorts. Indices must be < the given counts.
  static BipartiteGraph from_edges(std::uint32_t num_users, std::uint32_t num_items, std::vector<Edge> edges) {
    for (const auto& [u, i] : edges) {
      if (u >= num_users || i >= num_items) throw ContractError("edge index out of range");
    }
    std::sort(edges.begin(), edges.end());
    edges.erase(std::unique(edges.begin(), edges.end()), edges.end());

    BipartiteGraph g;
    g.num_users_ = num_users;
    g.num_items_ = num_items;
    g.user_offsets_.assign(num_users + 1, 0);
    g.item_offsets_.assign(num_items + 1, 0);
    for (const auto& [u, i] : edges) {
      ++g.user_offsets_[u + 1];
      ++g.item_offsets_[i + 1];
    }
    for (std::uint32_t u = 0; u < num_users; ++u) g.user_offsets_[u + 1] += g.user_offsets_[u];
    for (std::uint32_t i = 0; i < num_items; ++i) g.item_offsets_[i + 1] += g.item_offsets_[i];
    g.user_adj_.resize(edges.size());
    g.item_adj_.resize(edges.size());
    std::vector<std::size_t> cursor(g.item_offsets_.begin(), g.item_offsets_.end() - 1);
    // edges are sorted by (user, item), so user rows come out sorted and each
    // item row receives users in ascending order.
    for (std::size_t e = 0; e < edges.size(); ++e) {
      const auto [u, i] = edges[e];
      g.user_adj_[e] = i;
      g.item_adj_[cursor[i]++] = u;
    }
    return g;
  }

  std::uint32_t num_users() const { return num_users_; }
  std::uint32_t num_items() const { return num_items_; }
  std::size_t edge_count() const { return user_adj_.size(); }
  std::size_t num_nodes() const { return std::size_t{num_users_} + num_items_; }
  bool empty() const { return user_adj_.empty(); }

  std::span<const std::uint32_t> user_items(std::uint32_t u) const {
    return {user_adj_.data() + user_offsets_[u], user_adj_.data() + user_offsets_[u + 1]};
  }
  std::span<const std::uint32_t> item_users(std::uint32_t i) const {
    return {item_adj_.data() + item_offsets_[i], item_adj_.data() + item_offsets_[i + 1]};
  }

  bool contains(NodeRef n) const { return n.is_user() ? n.index < num_users_ : n.index < num_items_; }

  // Neighbors of `n`; they are of the opposite kind.
  std::span<const std::uint32_t> neighbors(NodeRef n) const {
    return n.is_user() ? user_items(n.index) : item_users(n.index);
  }
  std::size_t degree(NodeRef n) const { return neighbors(n).size(); }

  bool has_edge(std::uint32_t u, std::uint32_t i) const {
    const auto items = user_items(u);
    return std::binary_search(items.begin(), items.end(), i);
  }

  // Flat index with users first, then items.
  std::uint64_t global_index(NodeRef n) const {
    return n.is_user() ? n.index : std::uint64_t{num_users_} + n.index;
  }

  // All edges sorted by (user, item).
  std::vector<Edge> edges() const {
    std::vector<Edge> out;
    out.reserve(edge_count());
    for (std::uint32_t u = 0; u < num_users_; ++u) {
      for (std::uint32_t i : user_items(u)) out.emplace_back(u, i);
    }
    return out;
  }

  friend bool operator==(const BipartiteGraph&, const BipartiteGraph&) = default;

 private:
  std::uint32_t num_users_ = 0;
  std::uint32_t num_items_ = 0;
  std::vector<std::size_t> user_offsets_;
  std::vector<std::uint32_t> user_adj_;
  std::vector<std::size_t> item_offsets_;
  std::vector<std::uint32_t> item_adj_;
};

inline NodeRef opposite(NodeRef n, std::uint32_t neighbor_index) {
  return {n.is_user() ? NodeKind::Item : NodeKind::User, neighbor_index};
}

// Bidirectional external-ID <-> dense index map. Indices follow the
// lexicographic order of the external IDs, so the mapping does not depend on
// input order.
class IdMap {
 public:
  IdMap() = default;
  explicit IdMap(std::vector<std::string> ids) : external_(std::move(ids)) {
    std::sort(external_.begin(), external_.end());
    external_.erase(std::unique(external_.begin(), external_.end()), external_.end());
    index_.reserve(external_.size());
    for (std::uint32_t i = 0; i < external_.size(); ++i) index_.emplace(external_[i], i);
  }

  std::size_t size() const { return external_.size(); }
  const std::string& external(std::uint32_t index) const { return external_.at(index); }
  const std::vector<std::string>& externals() const { return external_; }

  std::optional<std::uint32_t> find(const std::string& id) const {
    auto it = index_.find(id);
    if (it == index_.end()) return std::nullopt;
    return it->second;
  }
  std::uint32_t at(const std::string& id) const {
    auto found = find(id);
    if (!found) throw NodeNotFound("unknown id: " + id);
    return *found;
  }

  // Keeps only the given (ascending) indices, renumbered densely.
  IdMap restrict_to(std::span<const std::uint32_t> kept) const {
    std::vector<std::string> ids;
    ids.reserve(kept.size());
    for (std::uint32_t k : kept) ids.push_back(external_.at(k));
    return IdMap(std::move(ids));
  }

  friend bool operator==(const IdMap& a, const IdMap& b) { return a.external_ == b.external_; }

 private:
  std::vector<std::string> external_;
  std::unordered_map<std::string, std::uint32_t> index_;
};

struct LabeledGraph {
  BipartiteGraph graph;
  IdMap users;
  IdMap items;
};

// Builds a graph from external string IDs.
inline LabeledGraph build_graph(const std::vector<std::pair<std::string, std::string>>& edges) {
  if (edges.empty()) throw EmptyGraph("build_graph: empty edge list");
  std::vector<std::string> users, items;
  users.reserve(edges.size());
  items.reserve(edges.size());
  for (const auto& [u, i] : edges) {
    users.push_back(u);
    items.push_back(i);
  }
  LabeledGraph out{{}, IdMap(std::move(users)), IdMap(std::move(items))};
  std::vector<Edge> indexed;
  indexed.reserve(edges.size());
  for (const auto& [u, i] : edges) indexed.emplace_back(out.users.at(u), out.items.at(i));
  out.graph = BipartiteGraph::from_edges(static_cast<std::uint32_t>(out.users.size()),
                                         static_cast<std::uint32_t>(out.items.size()), std::move(indexed));
  return out;
}

// Builds a graph from dense integer IDs; counts are max index + 1.
inline BipartiteGraph build_graph(const std::vector<Edge>& edges) {
  if (edges.empty()) throw EmptyGraph("build_graph: empty edge list");
  std::uint32_t users = 0, items = 0;
  for (const auto& [u, i] : edges) {
    users = std::max(users, u + 1);
    items = std::max(items, i + 1);
  }
  return BipartiteGraph::from_edges(users, items, edges);
}

// ---------------------------------------------------------------------------
// k-core

struct CoreResult {
  BipartiteGraph graph;               // compacted to surviving nodes
  std::vector<std::uint32_t> users;   // surviving original user indices, ascending
  std::vector<std::uint32_t> items;   // surviving original item indices, ascending
};

inline CoreResult k_core_with_origins(const BipartiteGraph& g, std::uint32_t k_user, std::uint32_t k_item) {
  if (k_user < 1 || k_item < 1) throw ConfigError("k_core: thresholds must be >= 1");
  std::vector<std::size_t> user_deg(g.num_users()), item_deg(g.num_items());
  std::vector<char> user_alive(g.num_users(), 1), item_alive(g.num_items(), 1);
  std::deque<NodeRef> peel;
  for (std::uint32_t u = 0; u < g.num_users(); ++u) {
    user_deg[u] = g.user_items(u).size();
    if (user_deg[u] < k_user) {
      user_alive[u] = 0;
      peel.push_back(NodeRef::user(u));
    }
  }
  for (std::uint32_t i = 0; i < g.num_items(); ++i) {
    item_deg[i] = g.item_users(i).size();
    if (item_deg[i] < k_item) {
      item_alive[i] = 0;
      peel.push_back(NodeRef::item(i));
    }
  }
  while (!peel.empty()) {
    const NodeRef n = peel.front();
    peel.pop_front();
    for (std::uint32_t nb : g.neighbors(n)) {
      if (n.is_user()) {
        if (item_alive[nb] && --item_deg[nb] < k_item) {
          item_alive[nb] = 0;
          peel.push_back(NodeRef::item(nb));
        }
      } else if (user_alive[nb] && --user_deg[nb] < k_user) {
        user_alive[nb] = 0;
        peel.push_back(NodeRef::user(nb));
      }
    }
  }

  CoreResult out;
  std::vector<std::uint32_t> user_new(g.num_users()), item_new(g.num_items());
  for (std::uint32_t u = 0; u < g.num_users(); ++u) {
    if (user_alive[u]) {
      user_new[u] = static_cast<std::uint32_t>(out.users.size());
      out.users.push_back(u);
    }
  }
  for (std::uint32_t i = 0; i < g.num_items(); ++i) {
    if (item_alive[i]) {
      item_new[i] = static_cast<std::uint32_t>(out.items.size());
      out.items.push_back(i);
    }
  }
  std::vector<Edge> kept;
  for (std::uint32_t u : out.users) {
    for (std::uint32_t i : g.user_items(u)) {
      if (item_alive[i]) kept.emplace_back(user_new[u], item_new[i]);
    }
  }
  out.graph = BipartiteGraph::from_edges(static_cast<std::uint32_t>(out.users.size()),
                                         static_cast<std::uint32_t>(out.items.size()), std::move(kept));
  return out;
}

// Maximal subgraph with user degree >= k_user and item degree >= k_item,
// renumbered densely. May be empty.
inline BipartiteGraph k_core(const BipartiteGraph& g, std::uint32_t k_user, std::uint32_t k_item) {
  return k_core_with_origins(g, k_user, k_item).graph;
}

// ---------------------------------------------------------------------------
// Subgraphs

struct EgoSubgraph {
  std::uint32_t ego_local = 0;
  std::vector<NodeRef> nodes;                    // local -> global
  std::vector<std::vector<std::uint32_t>> adj;   // sorted local neighbor lists
  DenseMatrix features;                          // [nodes.size() x d_in], filled by attach_features

  std::size_t size() const { return nodes.size(); }
  std::size_t edge_count() const {
    std::size_t twice = 0;
    for (const auto& row : adj) twice += row.size();
    return twice / 2;
  }
  DenseMatrix dense_adjacency() const {
    DenseMatrix a = DenseMatrix::Zero(static_cast<Eigen::Index>(size()), static_cast<Eigen::Index>(size()));
    for (std::size_t v = 0; v < adj.size(); ++v) {
      for (std::uint32_t w : adj[v]) a(static_cast<Eigen::Index>(v), w) = 1.0;
    }
    return a;
  }
};

struct SubgraphPair {
  EgoSubgraph query;
  EgoSubgraph key;
  NodeRef origin;
};

// Subgraph of `g` induced by `nodes`; local order follows `nodes`, the first
// entry is the ego.
inline EgoSubgraph induced_subgraph(const BipartiteGraph& g, std::vector<NodeRef> nodes) {
  EgoSubgraph sub;
  sub.nodes = std::move(nodes);
  sub.adj.resize(sub.nodes.size());
  std::unordered_map<std::uint64_t, std::uint32_t> local;
  local.reserve(sub.nodes.size() * 2);
  for (std::uint32_t v = 0; v < sub.nodes.size(); ++v) local.emplace(g.global_index(sub.nodes[v]), v);
  for (std::uint32_t v = 0; v < sub.nodes.size(); ++v) {
    const NodeRef n = sub.nodes[v];
    if (!n.is_user()) continue;  // each edge has exactly one user endpoint
    for (std::uint32_t i : g.user_items(n.index)) {
      auto it = local.find(g.global_index(NodeRef::item(i)));
      if (it == local.end()) continue;
      sub.adj[v].push_back(it->second);
      sub.adj[it->second].push_back(v);
    }
  }
  for (auto& row : sub.adj) std::sort(row.begin(), row.end());
  return sub;
}

inline void require_node(const BipartiteGraph& g, NodeRef node) {
  if (!g.contains(node)) throw NodeNotFound("node not in graph: " + to_string(node));
}

// Induced subgraph on every node within `r` hops of `node`, in BFS order.
inline EgoSubgraph ego_network(const BipartiteGraph& g, NodeRef node, std::uint32_t r) {
  require_node(g, node);
  std::vector<NodeRef> order{node};
  std::unordered_map<std::uint64_t, std::uint32_t> depth{{g.global_index(node), 0}};
  for (std::size_t head = 0; head < order.size(); ++head) {
    const NodeRef cur = order[head];
    const std::uint32_t d = depth.at(g.global_index(cur));
    if (d == r) continue;
    for (std::uint32_t nb : g.neighbors(cur)) {
      const NodeRef next = opposite(cur, nb);
      if (depth.emplace(g.global_index(next), d + 1).second) order.push_back(next);
    }
  }
  return induced_subgraph(g, std::move(order));
}

struct SamplerConfig {
  std::uint32_t r = 2;
  double restart_prob = 0.8;
  std::uint32_t max_walk_steps = 0;  // 0 selects 64 * r
  std::uint32_t max_subgraph_nodes = 128;
  std::uint64_t seed = 0;

  std::uint32_t walk_steps() const { return max_walk_steps == 0 ? 64 * r : max_walk_steps; }

  void validate() const {
    if (r < 1) throw ConfigError("sampler: r must be >= 1");
    if (!(restart_prob >= 0.0 && restart_prob <= 1.0)) throw ConfigError("sampler: restart_prob outside [0,1]");
    if (max_subgraph_nodes < 1) throw ConfigError("sampler: max_subgraph_nodes must be >= 1");
  }
};

// Random walk with restart from `node`. Each step draws u ~ U[0,1): u <
// restart_prob (or a dead end) returns to the ego; a move that would take the
// walk more than r hops from its last restart restarts instead; otherwise it
// moves to a uniformly chosen neighbor. Stops after walk_steps() steps or
// once max_subgraph_nodes distinct nodes are visited. Local order is first
// visit order.
inline EgoSubgraph sample_rw_subgraph(const BipartiteGraph& g, NodeRef node, const SamplerConfig& cfg,
                                      Stream stream) {
  cfg.validate();
  require_node(g, node);
  std::vector<NodeRef> visited{node};
  std::unordered_map<std::uint64_t, std::uint32_t> seen{{g.global_index(node), 0}};
  NodeRef cur = node;
  std::uint32_t hops = 0;
  const std::uint32_t steps = cfg.walk_steps();
  for (std::uint32_t s = 0; s < steps && visited.size() < cfg.max_subgraph_nodes; ++s) {
    const double u = stream.uniform();
    const auto nbrs = g.neighbors(cur);
    if (u < cfg.restart_prob || nbrs.empty() || hops == cfg.r) {
      cur = node;
      hops = 0;
      continue;
    }
    cur = opposite(cur, nbrs[stream.uniform_index(nbrs.size())]);
    ++hops;
    if (seen.emplace(g.global_index(cur), static_cast<std::uint32_t>(visited.size())).second) {
      visited.push_back(cur);
    }
  }
  return induced_subgraph(g, std::move(visited));
}

// Two independent walks from the same ego, on sub-streams "query" and "key".
inline SubgraphPair make_positive_pair(const BipartiteGraph& g, NodeRef node, const SamplerConfig& cfg,
                                       const Stream& stream) {
  return {sample_rw_subgraph(g, node, cfg, stream.split(tag("query"))),
          sample_rw_subgraph(g, node, cfg, stream.split(tag("key"))), node};
}

}  // namespace pcrec
