#include "apd/alignment.hpp"

#include <algorithm>
#include <numeric>

namespace apd {

FeatureMap context_aggregate(const FeatureMap& f, const ContextConfig& cfg) {
  require(f.height >= 1 && f.width >= 1, "context_aggregate: empty map");
  require(cfg.kernel_half_width >= 1 && cfg.dilation >= 1,
          "context_aggregate: invalid config");
  const int k = cfg.kernel_half_width;
  const int d = cfg.dilation;
  FeatureMap out(f.channels(), f.height, f.width);
  for (int i = -k; i <= k; ++i) {
    for (int j = -k; j <= k; ++j) {
      if (i == 0 && j == 0) continue;
      const int du = i * d, dv = j * d;
      for (int u = 0; u < f.height; ++u) {
        const int su = u + du;
        if (su < 0 || su >= f.height) continue;
        for (int v = 0; v < f.width; ++v) {
          const int sv = v + dv;
          if (sv < 0 || sv >= f.width) continue;
          out.data.col(out.index(u, v)) += f.data.col(f.index(su, sv));
        }
      }
    }
  }
  return out;
}

NeighborGraph build_bipartite_graph(const FeatureMap& c0, const FeatureMap& c1,
                                    int n, int chunk_size) {
  require(c0.same_shape(c1), "build_bipartite_graph: shape mismatch");
  const int hw = c0.pixels();
  require(n >= 1 && n <= hw, "build_bipartite_graph: invalid neighbor count");
  if (chunk_size < 1) chunk_size = hw;

  NeighborGraph g;
  g.height = c0.height;
  g.width = c0.width;
  g.neighbor_count = n;
  g.neighbors.resize(static_cast<std::size_t>(hw) * n);

  // Distances for one chunk of source pixels at a time; the full hw x hw
  // distance matrix is never materialized.
  std::vector<std::pair<double, std::int32_t>> row(hw);
  Eigen::RowVectorXd dist2(hw);
  for (int base = 0; base < hw; base += chunk_size) {
    const int end = std::min(base + chunk_size, hw);
    for (int p = base; p < end; ++p) {
      dist2 = (c1.data.colwise() - c0.data.col(p)).colwise().squaredNorm();
      for (int q = 0; q < hw; ++q) row[q] = {dist2(q), q};
      auto cmp = [](const std::pair<double, std::int32_t>& a,
                    const std::pair<double, std::int32_t>& b) {
        return a.first < b.first || (a.first == b.first && a.second < b.second);
      };
      std::partial_sort(row.begin(), row.begin() + n, row.end(), cmp);
      for (int t = 0; t < n; ++t)
        g.neighbors[static_cast<std::size_t>(p) * n + t] = row[t].second;
    }
  }
  return g;
}

SparseOp neighbor_mean_op(const NeighborGraph& g) {
  const int hw = g.pixels();
  const double inv_n = 1.0 / g.neighbor_count;
  std::vector<Eigen::Triplet<double>> trips;
  trips.reserve(static_cast<std::size_t>(hw) * g.neighbor_count);
  for (int p = 0; p < hw; ++p)
    for (int t = 0; t < g.neighbor_count; ++t)
      trips.emplace_back(g.row(p)[t], p, inv_n);
  SparseOp s(hw, hw);
  s.setFromTriplets(trips.begin(), trips.end());
  return s;
}

SparseOp reverse_mean_op(const NeighborGraph& g) {
  const int hw = g.pixels();
  std::vector<int> indeg(hw, 0);
  for (int p = 0; p < hw; ++p)
    for (int t = 0; t < g.neighbor_count; ++t) ++indeg[g.row(p)[t]];
  std::vector<Eigen::Triplet<double>> trips;
  trips.reserve(static_cast<std::size_t>(hw) * g.neighbor_count);
  for (int p = 0; p < hw; ++p)
    for (int t = 0; t < g.neighbor_count; ++t) {
      const int q = g.row(p)[t];
      trips.emplace_back(p, q, 1.0 / indeg[q]);
    }
  SparseOp r(hw, hw);
  r.setFromTriplets(trips.begin(), trips.end());
  return r;
}

std::pair<FeatureMap, FeatureMap> graph_convolve(const NeighborGraph& g,
                                                 const FeatureMap& f0,
                                                 const FeatureMap& f1,
                                                 const AlignmentParams& p) {
  require(f0.same_shape(f1), "graph_convolve: feature shape mismatch");
  require(g.height == f0.height && g.width == f0.width,
          "graph_convolve: graph/feature shape mismatch");
  require(p.weight.rows() == f0.channels() &&
              p.weight.cols() == f0.channels(),
          "graph_convolve: weight shape mismatch");
  const SparseOp s = neighbor_mean_op(g);
  const SparseOp r = reverse_mean_op(g);
  FeatureMap f0_hat(f0);
  FeatureMap f1_hat(f1);
  f0_hat.data += p.weight * (f1.data * s);
  f1_hat.data += p.weight * (f0.data * r);
  return {std::move(f0_hat), std::move(f1_hat)};
}

std::pair<FeatureMap, FeatureMap> align(const FeatureMap& f0,
                                        const FeatureMap& f1,
                                        const ContextConfig& cfg,
                                        const AlignmentParams& p) {
  require(f0.same_shape(f1), "align: shape mismatch");
  const FeatureMap c0 = context_aggregate(f0, cfg);
  const FeatureMap c1 = context_aggregate(f1, cfg);
  const NeighborGraph g =
      build_bipartite_graph(c0, c1, cfg.neighbor_count, cfg.chunk_size);
  return graph_convolve(g, f0, f1, p);
}

}  // namespace apd
