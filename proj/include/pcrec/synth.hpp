#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <utility>
#include <vector>

#include "pcrec/error.hpp"
#include "pcrec/graph.hpp"
#include "pcrec/rng.hpp"

namespace pcrec {

// (source user index, target user index) pairs for users present in both
// domains. Injective in both coordinates.
using CommonUserAlignment = std::vector<std::pair<std::uint32_t, std::uint32_t>>;

struct SynthConfig {
  std::uint32_t source_users = 2000;
  std::uint32_t source_items = 1000;
  std::uint32_t target_users = 1500;
  std::uint32_t target_items = 800;
  double shared_fraction = 0.5;  // fraction of target users that also live in the source
  std::uint32_t latent_dim = 8;
  double density = 0.005;
  double popularity_sigma = 1.0;  // spread of per-item log-popularity
  double degree_sigma = 0.5;      // spread of per-user log-degree
  double affinity_scale = 3.0;    // weight of the latent inner product
  double noise = 1.0;             // Gumbel temperature on the edge scores
  std::uint64_t seed = 7;

  std::uint32_t shared_users() const {
    return static_cast<std::uint32_t>(std::llround(shared_fraction * target_users));
  }

  void validate() const {
    if (source_users < 2 || source_items < 2 || target_users < 2 || target_items < 2) {
      throw ConfigError("synth: every domain needs at least 2 users and 2 items");
    }
    if (!(shared_fraction >= 0.0 && shared_fraction <= 1.0)) throw ConfigError("synth: shared_fraction outside [0,1]");
    if (shared_users() > source_users) throw ConfigError("synth: more shared users than source users");
    if (latent_dim < 1) throw ConfigError("synth: latent_dim must be >= 1");
    if (!(popularity_sigma >= 0.0) || !(degree_sigma >= 0.0) || !(noise >= 0.0)) {
      throw ConfigError("synth: spreads must be non-negative");
    }
    auto feasible = [&](double users, double items) {
      const double edges = density * users * items;
      return density > 0.0 && density <= 0.5 && edges >= 2.0 * std::max(users, items);
    };
    if (!feasible(source_users, source_items) || !feasible(target_users, target_items)) {
      throw ConfigError("synth: density infeasible (need 0 < density <= 0.5 and room for minimum degree 2)");
    }
  }
};

struct SyntheticPair {
  BipartiteGraph source;
  BipartiteGraph target;
  CommonUserAlignment common_users;
};

namespace detail {

inline std::vector<double> draw_latent(Stream s, std::uint32_t dim) {
  std::vector<double> v(dim);
  const double scale = 1.0 / std::sqrt(static_cast<double>(dim));
  for (auto& x : v) x = s.normal() * scale;
  return v;
}

inline double dot(const std::vector<double>& a, const std::vector<double>& b) {
  return std::inner_product(a.begin(), a.end(), b.begin(), 0.0);
}

inline std::vector<std::uint32_t> component_labels(const BipartiteGraph& g, std::uint32_t& count) {
  std::vector<std::uint32_t> label(g.num_nodes(), UINT32_MAX);
  count = 0;
  std::vector<NodeRef> stack;
  for (std::uint64_t start = 0; start < g.num_nodes(); ++start) {
    if (label[start] != UINT32_MAX) continue;
    const NodeRef s = start < g.num_users() ? NodeRef::user(static_cast<std::uint32_t>(start))
                                            : NodeRef::item(static_cast<std::uint32_t>(start - g.num_users()));
    label[start] = count;
    stack.push_back(s);
    while (!stack.empty()) {
      const NodeRef cur = stack.back();
      stack.pop_back();
      for (std::uint32_t nb : g.neighbors(cur)) {
        const NodeRef next = opposite(cur, nb);
        auto& l = label[g.global_index(next)];
        if (l == UINT32_MAX) {
          l = count;
          stack.push_back(next);
        }
      }
    }
    ++count;
  }
  return label;
}

inline BipartiteGraph synth_domain(const SynthConfig& cfg, const std::vector<std::vector<double>>& users,
                                   std::uint32_t num_items, Stream stream) {
  const auto num_users = static_cast<std::uint32_t>(users.size());
  std::vector<std::vector<double>> items(num_items);
  std::vector<double> popularity(num_items);
  for (std::uint32_t i = 0; i < num_items; ++i) {
    items[i] = draw_latent(stream.split(tag("item"), i), cfg.latent_dim);
    popularity[i] = cfg.popularity_sigma * stream.split(tag("popularity"), i).normal();
  }
  auto affinity = [&](std::uint32_t u, std::uint32_t i) {
    return cfg.affinity_scale * dot(users[u], items[i]) + popularity[i];
  };

  const double mean_degree = cfg.density * num_items;
  const double sigma = cfg.degree_sigma;
  std::vector<Edge> edges;
  std::vector<std::pair<double, std::uint32_t>> scored(num_items);
  for (std::uint32_t u = 0; u < num_users; ++u) {
    Stream us = stream.split(tag("user-edges"), u);
    const double draw = mean_degree * std::exp(sigma * us.normal() - 0.5 * sigma * sigma);
    const auto degree = static_cast<std::uint32_t>(
        std::clamp<double>(std::llround(draw), 2.0, static_cast<double>(num_items)));
    for (std::uint32_t i = 0; i < num_items; ++i) {
      const double gumbel = -std::log(-std::log(std::max(us.uniform(), 1e-300)));
      scored[i] = {-(affinity(u, i) + cfg.noise * gumbel), i};
    }
    std::partial_sort(scored.begin(), scored.begin() + degree, scored.end());
    for (std::uint32_t k = 0; k < degree; ++k) edges.emplace_back(u, scored[k].second);
  }

  // Lift items below degree 2 with their highest-affinity users.
  {
    BipartiteGraph g = BipartiteGraph::from_edges(num_users, num_items, edges);
    std::vector<std::pair<double, std::uint32_t>> by_user(num_users);
    for (std::uint32_t i = 0; i < num_items; ++i) {
      std::size_t deg = g.item_users(i).size();
      if (deg >= 2) continue;
      for (std::uint32_t u = 0; u < num_users; ++u) by_user[u] = {-affinity(u, i), u};
      std::sort(by_user.begin(), by_user.end());
      for (const auto& [neg, u] : by_user) {
        if (deg >= 2) break;
        if (g.has_edge(u, i)) continue;
        edges.emplace_back(u, i);
        ++deg;
      }
    }
  }

  // Join every minor component to the largest one through the best-affinity
  // (first user of the component, item of the largest component) edge.
  BipartiteGraph g = BipartiteGraph::from_edges(num_users, num_items, edges);
  std::uint32_t count = 0;
  const auto label = component_labels(g, count);
  if (count > 1) {
    std::vector<std::size_t> sizes(count, 0);
    for (auto l : label) ++sizes[l];
    const auto giant = static_cast<std::uint32_t>(std::max_element(sizes.begin(), sizes.end()) - sizes.begin());
    std::vector<char> joined(count, 0);
    joined[giant] = 1;
    for (std::uint32_t u = 0; u < num_users; ++u) {
      const auto l = label[u];
      if (joined[l]) continue;
      joined[l] = 1;
      double best = -1e300;
      std::uint32_t best_item = 0;
      for (std::uint32_t i = 0; i < num_items; ++i) {
        if (label[num_users + i] != giant) continue;
        if (const double a = affinity(u, i); a > best) {
          best = a;
          best_item = i;
        }
      }
      edges.emplace_back(u, best_item);
    }
    g = BipartiteGraph::from_edges(num_users, num_items, edges);
  }
  return g;
}

}  // namespace detail

// Source/target pair drawn from a shared low-rank preference model. Target
// users [0, shared_users()) are source users [0, shared_users()) and reuse
// their latent vectors; items never overlap. Each user links to its top-scoring
// items (latent affinity + item popularity + Gumbel noise) with a log-normal
// degree around density * items; items are lifted to degree >= 2 and minor
// components are joined, so both graphs are connected 2-cores.
inline SyntheticPair generate_synthetic_pair(const SynthConfig& cfg) {
  cfg.validate();
  const Stream root(cfg.seed);
  const std::uint32_t shared = cfg.shared_users();

  std::vector<std::vector<double>> source_users(cfg.source_users), target_users(cfg.target_users);
  for (std::uint32_t u = 0; u < cfg.source_users; ++u) {
    source_users[u] = detail::draw_latent(root.split(tag("source-user"), u), cfg.latent_dim);
  }
  for (std::uint32_t u = 0; u < cfg.target_users; ++u) {
    target_users[u] = u < shared ? source_users[u]
                                 : detail::draw_latent(root.split(tag("target-user"), u), cfg.latent_dim);
  }

  SyntheticPair out;
  out.source = detail::synth_domain(cfg, source_users, cfg.source_items, root.split(tag("source")));
  out.target = detail::synth_domain(cfg, target_users, cfg.target_items, root.split(tag("target")));
  for (std::uint32_t u = 0; u < shared; ++u) out.common_users.emplace_back(u, u);
  return out;
}

}  // namespace pcrec
