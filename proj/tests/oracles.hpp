#pragma once

// Independent brute-force reference implementations used by the unit and
// acceptance suites. Nothing here calls into the code path it checks.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <map>
#include <set>
#include <span>
#include <utility>
#include <vector>

#include "pcrec/graph.hpp"
#include "pcrec/numerics.hpp"
#include "pcrec/rng.hpp"

namespace oracle {

using pcrec::DenseMatrix;
using pcrec::Edge;

// Random bipartite edge list with roughly `p` density.
inline std::vector<Edge> random_edges(std::uint32_t users, std::uint32_t items, double p, pcrec::Stream& s) {
  std::vector<Edge> edges;
  for (std::uint32_t u = 0; u < users; ++u) {
    for (std::uint32_t i = 0; i < items; ++i) {
      if (s.uniform() < p) edges.emplace_back(u, i);
    }
  }
  if (edges.empty()) edges.emplace_back(0, 0);
  return edges;
}

// Repeatedly delete every node below its threshold until nothing changes.
inline std::set<Edge> k_core(std::set<Edge> edges, std::uint32_t k_user, std::uint32_t k_item) {
  for (bool changed = true; changed;) {
    changed = false;
    std::map<std::uint32_t, std::uint32_t> udeg, ideg;
    for (const auto& [u, i] : edges) {
      ++udeg[u];
      ++ideg[i];
    }
    std::set<Edge> kept;
    for (const auto& e : edges) {
      if (udeg[e.first] >= k_user && ideg[e.second] >= k_item) kept.insert(e);
    }
    if (kept.size() != edges.size()) {
      changed = true;
      edges = std::move(kept);
    }
  }
  return edges;
}

// Node-set of an r-ego network via all-pairs shortest paths (Floyd-Warshall)
// on the dense user+item adjacency. Global indices: users then items.
inline std::set<std::uint64_t> ego_set(const pcrec::BipartiteGraph& g, std::uint64_t center, std::uint32_t r) {
  const std::size_t n = g.num_nodes();
  const std::uint32_t inf = std::numeric_limits<std::uint32_t>::max() / 4;
  std::vector<std::uint32_t> d(n * n, inf);
  for (std::size_t v = 0; v < n; ++v) d[v * n + v] = 0;
  for (const auto& [u, i] : g.edges()) {
    const std::size_t a = u, b = g.num_users() + i;
    d[a * n + b] = d[b * n + a] = 1;
  }
  for (std::size_t k = 0; k < n; ++k)
    for (std::size_t a = 0; a < n; ++a)
      for (std::size_t b = 0; b < n; ++b) d[a * n + b] = std::min(d[a * n + b], d[a * n + k] + d[k * n + b]);
  std::set<std::uint64_t> out;
  for (std::size_t v = 0; v < n; ++v) {
    if (d[center * n + v] <= r) out.insert(v);
  }
  return out;
}

// Dense (users+items) square adjacency.
inline DenseMatrix dense_adjacency(const pcrec::BipartiteGraph& g) {
  const auto n = static_cast<Eigen::Index>(g.num_nodes());
  DenseMatrix a = DenseMatrix::Zero(n, n);
  for (const auto& [u, i] : g.edges()) {
    a(u, g.num_users() + i) = 1.0;
    a(g.num_users() + i, u) = 1.0;
  }
  return a;
}

// mean_{k=0..L} (D^-1/2 A D^-1/2)^k E with the stacked [users; items] table.
inline DenseMatrix lightgcn(const pcrec::BipartiteGraph& g, const DenseMatrix& stacked, std::uint32_t layers) {
  const DenseMatrix a = dense_adjacency(g);
  const auto n = a.rows();
  DenseMatrix norm = DenseMatrix::Zero(n, n);
  for (Eigen::Index x = 0; x < n; ++x)
    for (Eigen::Index y = 0; y < n; ++y)
      if (a(x, y) != 0.0) norm(x, y) = 1.0 / std::sqrt(a.row(x).sum() * a.row(y).sum());
  DenseMatrix power = DenseMatrix::Identity(n, n);
  DenseMatrix total = DenseMatrix::Zero(n, n);
  for (std::uint32_t k = 0; k <= layers; ++k) {
    total += power;
    power = power * norm;
  }
  return total * stacked / static_cast<double>(layers + 1);
}

// Full stable sort of all non-excluded items.
inline std::vector<std::uint32_t> rank(const std::vector<double>& scores, const std::set<std::uint32_t>& exclude,
                                       std::size_t k) {
  std::vector<std::pair<double, std::uint32_t>> all;
  for (std::uint32_t i = 0; i < scores.size(); ++i) {
    if (!exclude.count(i)) all.emplace_back(-scores[i], i);
  }
  std::sort(all.begin(), all.end());
  std::vector<std::uint32_t> out;
  for (std::size_t r = 0; r < std::min(k, all.size()); ++r) out.push_back(all[r].second);
  return out;
}

inline double recall(const std::vector<std::uint32_t>& ranked, const std::set<std::uint32_t>& relevant, std::size_t k) {
  double hits = 0;
  for (std::size_t r = 0; r < ranked.size() && r < k; ++r) hits += relevant.count(ranked[r]);
  return hits / relevant.size();
}

inline double average_precision(const std::vector<std::uint32_t>& ranked, const std::set<std::uint32_t>& relevant,
                                std::size_t k) {
  double total = 0;
  for (std::size_t r = 0; r < ranked.size() && r < k; ++r) {
    if (!relevant.count(ranked[r])) continue;
    double hits_so_far = 0;
    for (std::size_t q = 0; q <= r; ++q) hits_so_far += relevant.count(ranked[q]);
    total += hits_so_far / (r + 1);
  }
  return total / std::min<double>(relevant.size(), k);
}

// Central finite-difference gradient of f at x.
inline std::vector<double> numeric_gradient(const std::function<double()>& f, std::span<double> x, double h = 1e-5) {
  std::vector<double> g(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double saved = x[i];
    x[i] = saved + h;
    const double up = f();
    x[i] = saved - h;
    const double down = f();
    x[i] = saved;
    g[i] = (up - down) / (2 * h);
  }
  return g;
}

// max_i |a_i - b_i| / max(|a_i|, |b_i|, floor).
inline double max_relative_error(std::span<const double> a, std::span<const double> b, double floor = 1e-6) {
  double worst = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double scale = std::max({std::abs(a[i]), std::abs(b[i]), floor});
    worst = std::max(worst, std::abs(a[i] - b[i]) / scale);
  }
  return worst;
}

}  // namespace oracle
