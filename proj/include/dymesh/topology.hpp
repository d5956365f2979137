#pragma once

#include <cstdint>
#include <vector>

#include "dymesh/mesh.hpp"
#include "dymesh/tensor.hpp"

namespace dymesh {

// Symmetric boolean adjacency in compressed sparse rows. Rows are sorted
// neighbor lists and always contain the diagonal entry.
struct BoolAdjacency {
  int64_t n = 0;
  std::vector<std::vector<int32_t>> rows;

  bool contains(int32_t i, int32_t j) const;
  int64_t entry_count() const;
};

// Disjoint connectivity bands: bands[l] holds the pairs whose graph distance
// falls in (2^(l-1), 2^l] for l >= 1, and distance <= 1 for band 0.
// Their union is the reachability pattern C_{2^L}.
struct HopBands {
  int64_t steps = 0;  // L
  std::vector<BoolAdjacency> bands;
};

// Sparse decay-weighted mask: entry (i,j) = gamma^l for the unique band l
// containing the pair, 0 for absent pairs.
struct WeightedAdjacency {
  int64_t n = 0;
  double gamma = 0.5;
  std::vector<std::vector<std::pair<int32_t, double>>> rows;
};

// 1-hop connectivity: i~j iff they co-occur in some face; diagonal set.
BoolAdjacency one_hop(const TriangleMesh& mesh);

// Doubling reachability by sparse boolean squaring, then band extraction:
// C_{2^l} = Bool(C_{2^(l-1)} . C_{2^(l-1)}) v C_{2^(l-1)}, starting from
// C_1 = adj, and Band_l = C_{2^l} ^ ~C_{2^(l-1)}.
HopBands hop_bands(const BoolAdjacency& adj, int64_t steps);

// Exact reference: per-source BFS truncated at depth 2^L, bucketed by
// shortest-path distance. Must agree with hop_bands on any graph.
HopBands bfs_band_oracle(const BoolAdjacency& adj, int64_t steps);

WeightedAdjacency weighted_adjacency(const HopBands& bands, double gamma);

// Dense N x N additive attention mask, log(Adj + eps).
Tensor log_mask(const WeightedAdjacency& adj, double eps);

bool bands_equal(const HopBands& a, const HopBands& b);

}  // namespace dymesh
