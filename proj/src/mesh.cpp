#include "dymesh/mesh.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <stdexcept>
#include <unordered_map>

namespace dymesh {

void TriangleMesh::validate() const {
  const int64_t n = vertex_count();
  for (size_t f = 0; f < faces.size(); ++f) {
    for (int32_t idx : faces[f]) {
      if (idx < 0 || idx >= n) {
        throw std::out_of_range("mesh: face " + std::to_string(f) +
                                " references vertex " + std::to_string(idx) +
                                " of " + std::to_string(n));
      }
    }
  }
}

void DynamicMeshSequence::validate() const {
  const int64_t n = vertex_count();
  for (size_t t = 0; t < frames.size(); ++t) {
    if (static_cast<int64_t>(frames[t].size()) != n) {
      throw std::invalid_argument("sequence: frame " + std::to_string(t) +
                                  " has " + std::to_string(frames[t].size()) +
                                  " vertices, expected " + std::to_string(n));
    }
  }
  TriangleMesh{faces, frames.empty() ? std::vector<Vec3>{} : frames[0]}
      .validate();
}

// --- vertex dedup -----------------------------------------------------------

namespace {

struct CellKey {
  int64_t x, y, z;
  bool operator==(const CellKey& o) const {
    return x == o.x && y == o.y && z == o.z;
  }
};

struct CellKeyHash {
  size_t operator()(const CellKey& k) const {
    uint64_t h = 1469598103934665603ull;
    for (uint64_t v : {static_cast<uint64_t>(k.x), static_cast<uint64_t>(k.y),
                       static_cast<uint64_t>(k.z)}) {
      h ^= v;
      h *= 1099511628211ull;
    }
    return static_cast<size_t>(h);
  }
};

CellKey quantize(const Vec3& p, double cell) {
  return {static_cast<int64_t>(std::floor(p.x / cell)),
          static_cast<int64_t>(std::floor(p.y / cell)),
          static_cast<int64_t>(std::floor(p.z / cell))};
}

// Greedy merge: scan vertices in index order; each vertex joins the first
// surviving vertex within tol (so the lowest original index survives), or
// becomes a survivor itself. `close` decides proximity, letting the
// sequence-aware variant require closeness in every frame.
template <typename CloseFn>
std::vector<int64_t> build_remap(const std::vector<Vec3>& vertices, double tol,
                                 std::vector<int64_t>& survivors,
                                 const CloseFn& close) {
  const int64_t n = static_cast<int64_t>(vertices.size());
  std::vector<int64_t> remap(n, -1);
  if (tol < 0) throw std::invalid_argument("dedup: tolerance must be >= 0");

  if (tol == 0.0) {
    // Exact duplicates only.
    std::unordered_map<CellKey, std::vector<int64_t>, CellKeyHash> buckets;
    for (int64_t i = 0; i < n; ++i) {
      CellKey key{std::bit_cast<int64_t>(vertices[i].x),
                  std::bit_cast<int64_t>(vertices[i].y),
                  std::bit_cast<int64_t>(vertices[i].z)};
      auto& bucket = buckets[key];
      int64_t target = -1;
      for (int64_t j : bucket) {
        if (vertices[j] == vertices[i] && close(j, i)) {
          target = j;
          break;
        }
      }
      if (target < 0) {
        bucket.push_back(i);
        remap[i] = static_cast<int64_t>(survivors.size());
        survivors.push_back(i);
      } else {
        remap[i] = remap[target];
      }
    }
    return remap;
  }

  std::unordered_map<CellKey, std::vector<int64_t>, CellKeyHash> grid;
  for (int64_t i = 0; i < n; ++i) {
    const Vec3& p = vertices[i];
    CellKey center = quantize(p, tol);
    int64_t target = -1;
    for (int64_t dx = -1; dx <= 1 && target < 0; ++dx)
      for (int64_t dy = -1; dy <= 1 && target < 0; ++dy)
        for (int64_t dz = -1; dz <= 1 && target < 0; ++dz) {
          auto it = grid.find({center.x + dx, center.y + dy, center.z + dz});
          if (it == grid.end()) continue;
          for (int64_t j : it->second) {
            if (norm(vertices[j] - p) <= tol && close(j, i)) {
              target = j;
              break;
            }
          }
        }
    if (target < 0) {
      grid[center].push_back(i);
      remap[i] = static_cast<int64_t>(survivors.size());
      survivors.push_back(i);
    } else {
      remap[i] = remap[target];
    }
  }
  return remap;
}

std::vector<Face> remap_faces(const std::vector<Face>& faces,
                              const std::vector<int64_t>& remap) {
  std::vector<Face> out;
  out.reserve(faces.size());
  for (const Face& f : faces) {
    Face g{static_cast<int32_t>(remap[f[0]]), static_cast<int32_t>(remap[f[1]]),
           static_cast<int32_t>(remap[f[2]])};
    if (g[0] == g[1] || g[1] == g[2] || g[0] == g[2]) continue;  // collapsed
    out.push_back(g);
  }
  return out;
}

}  // namespace

DedupResult merge_duplicate_vertices(const TriangleMesh& mesh, double tol) {
  mesh.validate();
  std::vector<int64_t> survivors;
  auto remap = build_remap(mesh.vertices, tol, survivors,
                           [](int64_t, int64_t) { return true; });
  DedupResult result;
  result.remap = std::move(remap);
  result.mesh.vertices.reserve(survivors.size());
  for (int64_t i : survivors) result.mesh.vertices.push_back(mesh.vertices[i]);
  result.mesh.faces = remap_faces(mesh.faces, result.remap);
  return result;
}

DynamicMeshSequence merge_duplicate_vertices(const DynamicMeshSequence& seq,
                                             double tol) {
  seq.validate();
  if (seq.frames.empty()) return seq;
  std::vector<int64_t> survivors;
  auto close_all_frames = [&](int64_t a, int64_t b) {
    for (const auto& frame : seq.frames) {
      if (norm(frame[a] - frame[b]) > tol) return false;
    }
    return true;
  };
  auto remap = build_remap(seq.frames[0], tol, survivors, close_all_frames);
  DynamicMeshSequence out;
  out.caption = seq.caption;
  out.faces = remap_faces(seq.faces, remap);
  out.frames.reserve(seq.frames.size());
  for (const auto& frame : seq.frames) {
    std::vector<Vec3> kept;
    kept.reserve(survivors.size());
    for (int64_t i : survivors) kept.push_back(frame[i]);
    out.frames.push_back(std::move(kept));
  }
  return out;
}

// --- normalization / trajectory ----------------------------------------------

DynamicMeshSequence centroid_normalize(const DynamicMeshSequence& seq) {
  if (seq.frames.empty() || seq.frames[0].empty()) return seq;
  Vec3 centroid{0, 0, 0};
  for (const Vec3& v : seq.frames[0]) centroid += v;
  const double inv = 1.0 / static_cast<double>(seq.frames[0].size());
  centroid = centroid * inv;
  DynamicMeshSequence out;
  out.faces = seq.faces;
  out.caption = seq.caption;
  out.frames.reserve(seq.frames.size());
  for (const auto& frame : seq.frames) {
    std::vector<Vec3> shifted;
    shifted.reserve(frame.size());
    for (const Vec3& v : frame) shifted.push_back(v - centroid);
    out.frames.push_back(std::move(shifted));
  }
  return out;
}

RelativeTrajectory decompose_trajectory(const DynamicMeshSequence& seq) {
  if (seq.frames.empty()) {
    throw std::invalid_argument("decompose_trajectory: empty sequence");
  }
  RelativeTrajectory traj;
  traj.initial = seq.frames[0];
  traj.offsets.reserve(seq.frames.size());
  for (const auto& frame : seq.frames) {
    std::vector<Vec3> off;
    off.reserve(frame.size());
    for (size_t i = 0; i < frame.size(); ++i)
      off.push_back(frame[i] - traj.initial[i]);
    traj.offsets.push_back(std::move(off));
  }
  return traj;
}

DynamicMeshSequence recompose_trajectory(const RelativeTrajectory& traj,
                                         const std::vector<Face>& faces) {
  DynamicMeshSequence seq;
  seq.faces = faces;
  seq.frames.reserve(traj.offsets.size());
  for (const auto& off : traj.offsets) {
    std::vector<Vec3> frame;
    frame.reserve(off.size());
    for (size_t i = 0; i < off.size(); ++i)
      frame.push_back(traj.initial[i] + off[i]);
    seq.frames.push_back(std::move(frame));
  }
  return seq;
}

// --- normals / edges -----------------------------------------------------------

VertexNormals vertex_normals(const TriangleMesh& mesh) {
  mesh.validate();
  VertexNormals result;
  result.normals.assign(mesh.vertices.size(), Vec3{});
  result.degenerate.assign(mesh.vertices.size(), 0);
  for (const Face& f : mesh.faces) {
    const Vec3& a = mesh.vertices[f[0]];
    const Vec3& b = mesh.vertices[f[1]];
    const Vec3& c = mesh.vertices[f[2]];
    // cross/2 = area-weighted unit normal of the face
    Vec3 weighted = cross(b - a, c - a) * 0.5;
    result.normals[f[0]] += weighted;
    result.normals[f[1]] += weighted;
    result.normals[f[2]] += weighted;
  }
  for (size_t i = 0; i < result.normals.size(); ++i) {
    double len = norm(result.normals[i]);
    if (len < 1e-12) {
      result.normals[i] = Vec3{};
      result.degenerate[i] = 1;
    } else {
      result.normals[i] = result.normals[i] * (1.0 / len);
    }
  }
  return result;
}

std::vector<std::pair<int32_t, int32_t>> edge_set(const TriangleMesh& mesh) {
  mesh.validate();
  std::vector<std::pair<int32_t, int32_t>> edges;
  edges.reserve(mesh.faces.size() * 3);
  for (const Face& f : mesh.faces) {
    for (int k = 0; k < 3; ++k) {
      int32_t a = f[k], b = f[(k + 1) % 3];
      if (a == b) continue;
      edges.emplace_back(std::min(a, b), std::max(a, b));
    }
  }
  std::sort(edges.begin(), edges.end());
  edges.erase(std::unique(edges.begin(), edges.end()), edges.end());
  return edges;
}

}  // namespace dymesh
