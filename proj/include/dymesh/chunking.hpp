#pragma once

#include <cstdint>
#include <vector>

#include "dymesh/mesh.hpp"

namespace dymesh {

// Overlapping chunk geometry. `stride` is the number of new frames each
// chunk contributes, `length` the chunk size including the overlap with its
// predecessor. A chunk may overlap only its immediate predecessor, so
// length <= 2 * stride.
struct ChunkConfig {
  int64_t stride = 16;  // L_S
  int64_t length = 24;  // L_C

  int64_t overlap() const { return length - stride; }  // L_O
  void validate() const;
};

// Direction of the cross-fade weight on the preceding chunk across the
// overlap. ProseDecay fades the preceding chunk out; AsWritten applies the
// interpolation weight (t+1)/(L_O+1) to it directly. The exact round trip
// holds under both.
enum class BlendWeights { ProseDecay, AsWritten };

// Chunked relative trajectory. Each chunk is an N x (length*3) row-major
// array (vertex rows, frame-major columns). Chunk 0 starts with `overlap`
// frames of zeros; the source is padded at the tail by repeating its last
// frame up to a multiple of `stride`.
struct ChunkedTrajectory {
  ChunkConfig config;
  int64_t original_frames = 0;  // T before padding
  int64_t vertex_count = 0;
  std::vector<Vec3> initial;                // V_0, carried for reassembly
  std::vector<std::vector<double>> chunks;  // num_c arrays

  int64_t chunk_count() const { return static_cast<int64_t>(chunks.size()); }
};

int64_t chunk_count_for(int64_t frames, const ChunkConfig& cfg);

ChunkedTrajectory split_chunks(const RelativeTrajectory& traj,
                               const ChunkConfig& cfg);

// Reassembles chunks into a full-length trajectory: non-overlap frames are
// copied, overlap frames are cross-faded, padded tail frames are trimmed.
RelativeTrajectory tdgw_blend(const ChunkedTrajectory& chunks,
                              BlendWeights weights = BlendWeights::ProseDecay);

// Per-boundary max vertex jump divided by the sequence's median inter-frame
// displacement (0 for a static sequence). One value per interior chunk
// boundary.
std::vector<double> continuity_score(const RelativeTrajectory& traj,
                                     const ChunkConfig& cfg);

}  // namespace dymesh
