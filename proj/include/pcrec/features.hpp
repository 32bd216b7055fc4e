#pragma once

#include <cmath>

#include "pcrec/graph.hpp"
#include "pcrec/numerics.hpp"

namespace pcrec {

// Structural node features of a subgraph, one row per local node:
//   [ d_in-2 Laplacian eigenvector columns | log(1 + local degree) | ego flag ]
// Eigenvectors are the smallest-eigenvalue ones of the normalized Laplacian,
// zero-padded when the subgraph has fewer nodes than columns, and each is
// sign-fixed so its first entry with |x| > 1e-9 is positive. A singleton has
// an all-zero eigen block.
inline DenseMatrix subgraph_features(const EgoSubgraph& sub, Eigen::Index d_in) {
  if (d_in < 3) throw ShapeError("subgraph_features: d_in must be >= 3");
  const auto n = static_cast<Eigen::Index>(sub.size());
  DenseMatrix features = DenseMatrix::Zero(n, d_in);
  const Eigen::Index eig_cols = d_in - 2;
  if (n >= 2) {
    const Eigen::Index k = std::min(n, eig_cols);
    const EigenPairs eig = topk_eigenvectors(sub.dense_adjacency(), k);
    for (Eigen::Index j = 0; j < k; ++j) {
      auto col = eig.vectors.col(j);
      for (Eigen::Index v = 0; v < n; ++v) {
        if (std::abs(col[v]) > 1e-9) {
          const double sign = col[v] > 0.0 ? 1.0 : -1.0;
          features.col(j) = sign * col;
          break;
        }
      }
    }
  }
  for (Eigen::Index v = 0; v < n; ++v) {
    features(v, eig_cols) = std::log1p(static_cast<double>(sub.adj[static_cast<std::size_t>(v)].size()));
  }
  if (n > 0) features(sub.ego_local, d_in - 1) = 1.0;
  return features;
}

inline EgoSubgraph& attach_features(EgoSubgraph& sub, Eigen::Index d_in) {
  sub.features = subgraph_features(sub, d_in);
  return sub;
}

}  // namespace pcrec
