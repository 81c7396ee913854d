#pragma once

#include <Eigen/SparseCore>
#include <cstdint>
#include <utility>
#include <vector>

#include "apd/feature_map.hpp"

namespace apd {

using SparseOp = Eigen::SparseMatrix<double>;

/// Parameters of the parameter-free context window: taps at offsets
/// (i*d, j*d) for (i,j) in [-k,k]^2 \ {0,0}.
struct ContextConfig {
  int kernel_half_width = 1;  // k
  int dilation = 16;          // d
  int neighbor_count = 4;     // n
  // chunk of source pixels processed at once when scanning distances;
  // bounds memory to chunk_size * H*W doubles
  int chunk_size = 256;
};

/// Sparse bipartite adjacency: for each source pixel of map 0, the ordered
/// list of its n nearest map-1 pixels (linear indices, distance order,
/// row-major tie-break).
struct NeighborGraph {
  int height = 0;
  int width = 0;
  int neighbor_count = 0;
  std::vector<std::int32_t> neighbors;  // (H*W) * n, linear indices into map 1

  int pixels() const { return height * width; }
  const std::int32_t* row(int p) const {
    return neighbors.data() + static_cast<std::size_t>(p) * neighbor_count;
  }
};

/// Shared aggregation weight, applied to both edge directions.
struct AlignmentParams {
  Matrix weight;  // C x C
};

/// Dilated neighborhood sum with zero padding, center tap excluded.
FeatureMap context_aggregate(const FeatureMap& f, const ContextConfig& cfg);

/// For each pixel of c0, the n pixels of c1 with smallest Euclidean context
/// distance; ties broken by row-major coordinate order. Deterministic.
NeighborGraph build_bipartite_graph(const FeatureMap& c0, const FeatureMap& c1,
                                    int n, int chunk_size = 256);

/// Forward neighbor-mean operator S (HW x HW): (F1 * S).col(p) is the mean of
/// F1 over the neighbors of source pixel p.
SparseOp neighbor_mean_op(const NeighborGraph& g);

/// Reverse operator R: (F0 * R).col(q) is the mean of F0 over all source
/// pixels that selected q; zero column when q has in-degree zero.
SparseOp reverse_mean_op(const NeighborGraph& g);

/// Residual graph aggregation: F0_hat = F0 + W * mean(F1 over neighbors),
/// F1_hat = F1 + W * mean(F0 over reverse edges).
std::pair<FeatureMap, FeatureMap> graph_convolve(const NeighborGraph& g,
                                                 const FeatureMap& f0,
                                                 const FeatureMap& f1,
                                                 const AlignmentParams& p);

/// Full alignment: context aggregation -> top-n graph -> graph convolution.
std::pair<FeatureMap, FeatureMap> align(const FeatureMap& f0,
                                        const FeatureMap& f1,
                                        const ContextConfig& cfg,
                                        const AlignmentParams& p);

}  // namespace apd
