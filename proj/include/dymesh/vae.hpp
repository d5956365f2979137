#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "dymesh/chunking.hpp"
#include "dymesh/mesh.hpp"
#include "dymesh/tensor.hpp"
#include "dymesh/topology.hpp"

namespace dymesh {

struct Checkpoint;

// Where vertex normals enter the encoder. Enc2 (concatenate projected
// normal features with projected coordinate features ahead of the
// topology-aware attention) is the default.
enum class NormalPlacement { None, Enc1, Enc2, Enc3 };

NormalPlacement normal_placement_from_string(const std::string& s);
std::string to_string(NormalPlacement p);

struct VaeConfig {
  int64_t hidden_dim = 32;  // d_k; reference setting 256
  int64_t latent_dim = 8;   // c; reference setting 32
  int64_t plta_layers = 2;
  int64_t hop_steps = 4;    // L
  double hop_decay = 0.5;   // gamma
  double mask_eps = 1e-8;
  int64_t pe_freq_vertex = 8;
  int64_t pe_freq_traj = 10;
  double fps_ratio = 0.125;
  int64_t decoder_blocks = 8;  // K
  double kl_weight = 1e-6;     // eta
  NormalPlacement normal_placement = NormalPlacement::Enc2;
  int64_t max_vertices = 512;
  ChunkConfig chunk;

  int64_t fps_count(int64_t n_vertices) const;
  void validate() const;
};

// Per-chunk latent heads plus the vertex features they pair with.
struct LatentPacket {
  std::vector<Tensor> mu;         // num_c tensors, n x c
  std::vector<Tensor> log_sigma;  // num_c tensors, n x c
  std::vector<Tensor> z;          // num_c tensors, n x c
  Tensor paired_features;         // V0n, n x d
};

struct EncodedMesh {
  Tensor vertex_features;   // V0bar, N x d
  Tensor sampled_features;  // V0n, n x d
  std::vector<int64_t> fps_indices;
  LatentPacket latents;
  Tensor kl;  // scalar
};

// Positional encoding: each scalar v expands to
// [v, sin(pi v), cos(pi v), ..., sin(2^(F-1) pi v), cos(2^(F-1) pi v)].
// Gradient-free; inputs are data, not graph values.
Tensor positional_encode(const Tensor& x, int64_t num_freq);

// Greedy max-min farthest point sampling, seeded at index 0 with lowest
// index winning ties.
std::vector<int64_t> farthest_point_sample(const std::vector<Vec3>& points,
                                           int64_t n);

// softmax(Q K^T / sqrt(d_k)) with learned projections of the two feature
// streams. The returned map is shared between value streams by the callers.
Tensor attention_map(const Tensor& query_feat, const Tensor& key_feat,
                     const Tensor& wq, const Tensor& wk);

// Self-attention with the decay-weighted topology mask entering the logits
// as log(Adj + eps); residual form per the masked-attention layer:
// out = softmax(QK^T/sqrt(d_k) + mask) * (feat Wv) + feat.
Tensor plta_attention(const Tensor& feat, const Tensor& log_mask,
                      const Tensor& wq, const Tensor& wk, const Tensor& wv,
                      Tensor* attention_out = nullptr);

// Concatenates projected normal features onto vertex features; None is a
// passthrough.
Tensor inject_normals(const Tensor& vertex_feat,
                      const Tensor& projected_normals,
                      NormalPlacement placement);

struct VaeStats {
  int64_t sync_maps_computed = 0;  // one per shared attention map
};

class VaeModel {
 public:
  VaeModel(VaeConfig cfg, uint64_t seed);

  const VaeConfig& config() const { return cfg_; }
  std::vector<Tensor> parameters() const;
  std::map<std::string, Tensor>& named_parameters() { return params_; }
  Tensor param(const std::string& name) const;

  // Geometry-only preparation: normals, hop-band mask, FPS indices, and the
  // positional encoding of the frame-0 vertices.
  struct MeshContext {
    TriangleMesh mesh;
    Tensor coords;        // N x 3
    Tensor normals;       // N x 3 (zero rows where degenerate)
    Tensor mask;          // N x N, log(Adj + eps)
    std::vector<int64_t> fps_indices;
  };
  MeshContext prepare(const TriangleMesh& mesh) const;

  // Topology-aware vertex features V0bar (N x d) for a prepared mesh.
  Tensor encode_vertex_features(const MeshContext& ctx);

  // Shared-map aggregation onto the FPS subset; first element is the
  // enriched V0n, second the attention map used for both streams.
  std::pair<Tensor, Tensor> encode_sampled_features(const MeshContext& ctx,
                                                    const Tensor& v0bar);

  EncodedMesh encode(const MeshContext& ctx, const ChunkedTrajectory& chunks,
                     Rng& rng, bool sample = true);

  // Per-chunk reconstructed offsets, each N x (length*3).
  std::vector<Tensor> decode(const EncodedMesh& enc);

  // MSE over all chunk elements plus kl_weight * kl.
  Tensor loss(const std::vector<Tensor>& recon,
              const ChunkedTrajectory& target, const Tensor& kl) const;

  // Gradient-free round trip for evaluation; latents use the posterior mean
  // unless sample_latents is set.
  DynamicMeshSequence reconstruct(const DynamicMeshSequence& seq, Rng& rng,
                                  bool sample_latents = false);

  // Full generation decode path: latents from a generator, geometry from a
  // prepared mesh context.
  std::vector<Tensor> decode_latents(const MeshContext& ctx,
                                     const Tensor& v0bar, const Tensor& v0n,
                                     const std::vector<Tensor>& z);

  VaeStats& stats() { return stats_; }

  Checkpoint to_checkpoint() const;
  static VaeModel from_checkpoint(const Checkpoint& ckpt);
  void load_parameters(const Checkpoint& ckpt);

 private:
  Tensor shared_map(const Tensor& q_feat, const Tensor& k_feat,
                    const Tensor& wq, const Tensor& wk);

  VaeConfig cfg_;
  std::map<std::string, Tensor> params_;
  VaeStats stats_;
};

}  // namespace dymesh
