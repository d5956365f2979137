#include "dymesh/topology.hpp"

#include <algorithm>
#include <cmath>
#include <deque>
#include <stdexcept>

namespace dymesh {

bool BoolAdjacency::contains(int32_t i, int32_t j) const {
  const auto& row = rows[i];
  return std::binary_search(row.begin(), row.end(), j);
}

int64_t BoolAdjacency::entry_count() const {
  int64_t total = 0;
  for (const auto& row : rows) total += static_cast<int64_t>(row.size());
  return total;
}

BoolAdjacency one_hop(const TriangleMesh& mesh) {
  mesh.validate();
  BoolAdjacency adj;
  adj.n = mesh.vertex_count();
  adj.rows.assign(adj.n, {});
  for (int64_t i = 0; i < adj.n; ++i)
    adj.rows[i].push_back(static_cast<int32_t>(i));
  for (const Face& f : mesh.faces) {
    for (int a = 0; a < 3; ++a)
      for (int b = 0; b < 3; ++b) {
        if (f[a] != f[b]) adj.rows[f[a]].push_back(f[b]);
      }
  }
  for (auto& row : adj.rows) {
    std::sort(row.begin(), row.end());
    row.erase(std::unique(row.begin(), row.end()), row.end());
  }
  return adj;
}

namespace {

// Row-wise boolean square-or: row i of the result is the union of the rows
// of i's neighbors. With the diagonal present this already contains C, so
// the explicit "v C" of the doubling step is free.
BoolAdjacency boolean_square_or(const BoolAdjacency& c) {
  BoolAdjacency out;
  out.n = c.n;
  out.rows.assign(c.n, {});
  std::vector<int32_t> merged;
  for (int64_t i = 0; i < c.n; ++i) {
    merged.clear();
    for (int32_t j : c.rows[i])
      merged.insert(merged.end(), c.rows[j].begin(), c.rows[j].end());
    std::sort(merged.begin(), merged.end());
    merged.erase(std::unique(merged.begin(), merged.end()), merged.end());
    out.rows[i] = merged;
  }
  return out;
}

// Sorted set difference a \ b per row.
BoolAdjacency row_difference(const BoolAdjacency& a, const BoolAdjacency& b) {
  BoolAdjacency out;
  out.n = a.n;
  out.rows.assign(a.n, {});
  for (int64_t i = 0; i < a.n; ++i) {
    std::set_difference(a.rows[i].begin(), a.rows[i].end(), b.rows[i].begin(),
                        b.rows[i].end(), std::back_inserter(out.rows[i]));
  }
  return out;
}

void require_diagonal(const BoolAdjacency& adj, const char* op) {
  for (int64_t i = 0; i < adj.n; ++i) {
    if (!adj.contains(static_cast<int32_t>(i), static_cast<int32_t>(i))) {
      throw std::invalid_argument(std::string(op) +
                                  ": adjacency must carry the diagonal");
    }
  }
}

}  // namespace

HopBands hop_bands(const BoolAdjacency& adj, int64_t steps) {
  if (steps < 0) throw std::invalid_argument("hop_bands: steps must be >= 0");
  require_diagonal(adj, "hop_bands");
  HopBands result;
  result.steps = steps;
  result.bands.reserve(steps + 1);
  result.bands.push_back(adj);  // Band_0 = C_1
  BoolAdjacency reach = adj;
  for (int64_t l = 1; l <= steps; ++l) {
    BoolAdjacency next = boolean_square_or(reach);
    result.bands.push_back(row_difference(next, reach));
    reach = std::move(next);
  }
  return result;
}

HopBands bfs_band_oracle(const BoolAdjacency& adj, int64_t steps) {
  if (steps < 0)
    throw std::invalid_argument("bfs_band_oracle: steps must be >= 0");
  require_diagonal(adj, "bfs_band_oracle");
  const int64_t limit = int64_t{1} << steps;  // 2^L
  HopBands result;
  result.steps = steps;
  result.bands.assign(steps + 1, BoolAdjacency{});
  for (auto& band : result.bands) {
    band.n = adj.n;
    band.rows.assign(adj.n, {});
  }
  std::vector<int64_t> dist(adj.n);
  for (int64_t src = 0; src < adj.n; ++src) {
    std::fill(dist.begin(), dist.end(), -1);
    std::deque<int32_t> queue;
    dist[src] = 0;
    queue.push_back(static_cast<int32_t>(src));
    while (!queue.empty()) {
      int32_t u = queue.front();
      queue.pop_front();
      if (dist[u] >= limit) continue;
      for (int32_t v : adj.rows[u]) {
        if (dist[v] < 0) {
          dist[v] = dist[u] + 1;
          queue.push_back(v);
        }
      }
    }
    for (int64_t v = 0; v < adj.n; ++v) {
      int64_t d = dist[v];
      if (d < 0 || d > limit) continue;
      int64_t band = 0;
      if (d > 1) {
        // smallest l with d <= 2^l
        while ((int64_t{1} << band) < d) ++band;
      }
      if (band <= steps)
        result.bands[band].rows[src].push_back(static_cast<int32_t>(v));
    }
  }
  for (auto& band : result.bands)
    for (auto& row : band.rows) std::sort(row.begin(), row.end());
  return result;
}

WeightedAdjacency weighted_adjacency(const HopBands& bands, double gamma) {
  if (!(gamma > 0.0) || gamma > 1.0) {
    throw std::invalid_argument(
        "weighted_adjacency: decay must lie in (0, 1]");
  }
  WeightedAdjacency out;
  out.gamma = gamma;
  out.n = bands.bands.empty() ? 0 : bands.bands[0].n;
  out.rows.assign(out.n, {});
  for (size_t l = 0; l < bands.bands.size(); ++l) {
    const double w = std::pow(gamma, static_cast<double>(l));
    const BoolAdjacency& band = bands.bands[l];
    for (int64_t i = 0; i < band.n; ++i)
      for (int32_t j : band.rows[i]) out.rows[i].emplace_back(j, w);
  }
  for (auto& row : out.rows)
    std::sort(row.begin(), row.end(),
              [](const auto& a, const auto& b) { return a.first < b.first; });
  return out;
}

Tensor log_mask(const WeightedAdjacency& adj, double eps) {
  if (!(eps > 0.0)) throw std::invalid_argument("log_mask: eps must be > 0");
  const int64_t n = adj.n;
  std::vector<double> data(static_cast<size_t>(n) * n, std::log(eps));
  for (int64_t i = 0; i < n; ++i)
    for (const auto& [j, w] : adj.rows[i])
      data[i * n + j] = std::log(w + eps);
  return Tensor::from_data({n, n}, std::move(data));
}

bool bands_equal(const HopBands& a, const HopBands& b) {
  if (a.steps != b.steps || a.bands.size() != b.bands.size()) return false;
  for (size_t l = 0; l < a.bands.size(); ++l) {
    if (a.bands[l].rows != b.bands[l].rows) return false;
  }
  return true;
}

}  // namespace dymesh
