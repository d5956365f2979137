#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <string>
#include <utility>
#include <vector>

namespace dymesh {

struct Vec3 {
  double x = 0.0, y = 0.0, z = 0.0;

  Vec3 operator+(const Vec3& o) const { return {x + o.x, y + o.y, z + o.z}; }
  Vec3 operator-(const Vec3& o) const { return {x - o.x, y - o.y, z - o.z}; }
  Vec3 operator*(double s) const { return {x * s, y * s, z * s}; }
  Vec3& operator+=(const Vec3& o) {
    x += o.x;
    y += o.y;
    z += o.z;
    return *this;
  }
  bool operator==(const Vec3& o) const {
    return x == o.x && y == o.y && z == o.z;
  }
};

inline double dot(const Vec3& a, const Vec3& b) {
  return a.x * b.x + a.y * b.y + a.z * b.z;
}
inline Vec3 cross(const Vec3& a, const Vec3& b) {
  return {a.y * b.z - a.z * b.y, a.z * b.x - a.x * b.z,
          a.x * b.y - a.y * b.x};
}
inline double norm(const Vec3& v) { return std::sqrt(dot(v, v)); }

using Face = std::array<int32_t, 3>;

// Static triangle mesh: face list over a vertex array.
struct TriangleMesh {
  std::vector<Face> faces;
  std::vector<Vec3> vertices;

  int64_t vertex_count() const { return static_cast<int64_t>(vertices.size()); }
  int64_t face_count() const { return static_cast<int64_t>(faces.size()); }
  void validate() const;  // throws if a face index is out of range
};

// Fixed topology with per-frame vertex positions. Faces are shared by all
// frames; every frame has the same vertex count.
struct DynamicMeshSequence {
  std::vector<Face> faces;
  std::vector<std::vector<Vec3>> frames;  // T x N
  std::string caption;

  int64_t frame_count() const { return static_cast<int64_t>(frames.size()); }
  int64_t vertex_count() const {
    return frames.empty() ? 0 : static_cast<int64_t>(frames[0].size());
  }
  int64_t face_count() const { return static_cast<int64_t>(faces.size()); }
  TriangleMesh frame_mesh(int64_t t) const { return {faces, frames[t]}; }
  void validate() const;
};

// Per-vertex temporal offsets from the frame-0 positions; offsets[0] is all
// zeros and frame t reconstructs as initial + offsets[t].
struct RelativeTrajectory {
  std::vector<Vec3> initial;               // N
  std::vector<std::vector<Vec3>> offsets;  // T x N

  int64_t frame_count() const { return static_cast<int64_t>(offsets.size()); }
  int64_t vertex_count() const { return static_cast<int64_t>(initial.size()); }
};

struct VertexNormals {
  std::vector<Vec3> normals;        // unit vectors, or zero when degenerate
  std::vector<uint8_t> degenerate;  // 1 where the weighted sum vanished
};

struct DedupResult {
  TriangleMesh mesh;
  std::vector<int64_t> remap;  // old vertex index -> surviving index
};

// Merges vertices within `tol` of each other (quantized spatial hashing,
// lowest original index survives). Faces are remapped; faces left with
// fewer than three distinct indices are dropped.
DedupResult merge_duplicate_vertices(const TriangleMesh& mesh,
                                     double tol = 1e-8);

// Sequence-aware dedup: vertices merge only if they stay within `tol` of
// each other in every frame.
DynamicMeshSequence merge_duplicate_vertices(const DynamicMeshSequence& seq,
                                             double tol = 1e-8);

// Translates every frame by the same shift so the frame-0 centroid lands on
// the origin. Relative trajectories are unchanged.
DynamicMeshSequence centroid_normalize(const DynamicMeshSequence& seq);

RelativeTrajectory decompose_trajectory(const DynamicMeshSequence& seq);
DynamicMeshSequence recompose_trajectory(const RelativeTrajectory& traj,
                                         const std::vector<Face>& faces);

// Area-weighted average of incident face normals, normalized per vertex.
VertexNormals vertex_normals(const TriangleMesh& mesh);

// Undirected edges as sorted (min,max) pairs, lexicographically ordered.
std::vector<std::pair<int32_t, int32_t>> edge_set(const TriangleMesh& mesh);

}  // namespace dymesh
