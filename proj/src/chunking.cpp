#include "dymesh/chunking.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace dymesh {

void ChunkConfig::validate() const {
  if (stride <= 0 || length < stride) {
    throw std::invalid_argument(
        "chunk config: need 0 < stride <= length, got stride=" +
        std::to_string(stride) + " length=" + std::to_string(length));
  }
  if (length > 2 * stride) {
    throw std::invalid_argument(
        "chunk config: overlap exceeds stride (length > 2*stride), chunks "
        "would overlap beyond their immediate predecessor");
  }
}

int64_t chunk_count_for(int64_t frames, const ChunkConfig& cfg) {
  cfg.validate();
  if (frames < 1) throw std::invalid_argument("chunking: need T >= 1");
  return (frames + cfg.stride - 1) / cfg.stride;  // ceil(T / L_S)
}

ChunkedTrajectory split_chunks(const RelativeTrajectory& traj,
                               const ChunkConfig& cfg) {
  cfg.validate();
  const int64_t t_orig = traj.frame_count();
  const int64_t n = traj.vertex_count();
  if (t_orig < 1) throw std::invalid_argument("split_chunks: need T >= 1");

  const int64_t num_c = chunk_count_for(t_orig, cfg);
  const int64_t t_pad = num_c * cfg.stride;
  const int64_t lc = cfg.length;

  // frame index into the tail-padded trajectory
  auto padded_frame = [&](int64_t f) -> const std::vector<Vec3>& {
    return traj.offsets[std::min(f, t_orig - 1)];
  };

  ChunkedTrajectory out;
  out.config = cfg;
  out.original_frames = t_orig;
  out.vertex_count = n;
  out.initial = traj.initial;
  out.chunks.reserve(num_c);
  for (int64_t i = 0; i < num_c; ++i) {
    std::vector<double> chunk(static_cast<size_t>(n) * lc * 3, 0.0);
    // chunk 0 keeps its first `lo` frames zero; chunk i >= 1 starts at
    // (i+1)*L_S - L_C.
    const int64_t start = (i + 1) * cfg.stride - lc;
    for (int64_t p = 0; p < lc; ++p) {
      const int64_t f = start + p;
      if (f < 0) continue;  // zero padding before frame 0
      if (f >= t_pad) break;
      const auto& frame = padded_frame(f);
      for (int64_t v = 0; v < n; ++v) {
        double* dst = chunk.data() + (v * lc + p) * 3;
        dst[0] = frame[v].x;
        dst[1] = frame[v].y;
        dst[2] = frame[v].z;
      }
    }
    out.chunks.push_back(std::move(chunk));
  }
  return out;
}

RelativeTrajectory tdgw_blend(const ChunkedTrajectory& chunks,
                              BlendWeights weights) {
  const ChunkConfig& cfg = chunks.config;
  cfg.validate();
  const int64_t num_c = chunks.chunk_count();
  const int64_t n = chunks.vertex_count;
  const int64_t lc = cfg.length, lo = cfg.overlap(), ls = cfg.stride;
  if (num_c < 1) throw std::invalid_argument("tdgw_blend: no chunks");
  for (const auto& c : chunks.chunks) {
    if (static_cast<int64_t>(c.size()) != n * lc * 3) {
      throw std::invalid_argument("tdgw_blend: chunk size mismatch");
    }
  }

  const int64_t t_out = chunks.original_frames;
  RelativeTrajectory traj;
  traj.initial = chunks.initial;
  traj.offsets.assign(t_out, std::vector<Vec3>(n));

  auto chunk_value = [&](int64_t ci, int64_t pos, int64_t v, int axis) {
    return chunks.chunks[ci][(v * lc + pos) * 3 + axis];
  };

  for (int64_t f = 0; f < t_out; ++f) {
    const int64_t owner = f / ls;
    const int64_t pos = f - owner * ls + lo;  // position of f inside owner
    const int64_t boundary_start = (owner + 1) * ls - lo;
    const bool blended = owner + 1 < num_c && f >= boundary_start;
    if (!blended) {
      for (int64_t v = 0; v < n; ++v)
        traj.offsets[f][v] = {chunk_value(owner, pos, v, 0),
                              chunk_value(owner, pos, v, 1),
                              chunk_value(owner, pos, v, 2)};
      continue;
    }
    const int64_t t = f - boundary_start;  // 0 .. L_O-1
    const double w_prev =
        weights == BlendWeights::AsWritten
            ? static_cast<double>(t + 1) / static_cast<double>(lo + 1)
            : static_cast<double>(lo - t) / static_cast<double>(lo + 1);
    const int64_t pos_prev = lc - lo + t;  // t_ov in the preceding chunk
    for (int64_t v = 0; v < n; ++v) {
      for (int axis = 0; axis < 3; ++axis) {
        double prev = chunk_value(owner, pos_prev, v, axis);
        double next = chunk_value(owner + 1, t, v, axis);
        double blendedv = w_prev * prev + (1.0 - w_prev) * next;
        if (axis == 0)
          traj.offsets[f][v].x = blendedv;
        else if (axis == 1)
          traj.offsets[f][v].y = blendedv;
        else
          traj.offsets[f][v].z = blendedv;
      }
    }
  }
  return traj;
}

std::vector<double> continuity_score(const RelativeTrajectory& traj,
                                     const ChunkConfig& cfg) {
  cfg.validate();
  const int64_t t_total = traj.frame_count();
  const int64_t n = traj.vertex_count();
  if (t_total < 2) {
    throw std::invalid_argument("continuity_score: need T >= 2");
  }
  std::vector<double> steps;
  steps.reserve(static_cast<size_t>(t_total - 1) * n);
  for (int64_t t = 1; t < t_total; ++t)
    for (int64_t v = 0; v < n; ++v)
      steps.push_back(norm(traj.offsets[t][v] - traj.offsets[t - 1][v]));
  std::vector<double> sorted = steps;
  std::nth_element(sorted.begin(), sorted.begin() + sorted.size() / 2,
                   sorted.end());
  const double median = sorted[sorted.size() / 2];

  std::vector<double> scores;
  for (int64_t b = cfg.stride; b < t_total; b += cfg.stride) {
    double worst = 0.0;
    for (int64_t v = 0; v < n; ++v)
      worst = std::max(worst,
                       norm(traj.offsets[b][v] - traj.offsets[b - 1][v]));
    scores.push_back(median > 0.0 ? worst / median : 0.0);
  }
  return scores;
}

}  // namespace dymesh
