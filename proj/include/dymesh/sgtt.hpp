#pragma once

#include <cstdint>
#include <functional>
#include <map>
#include <string>
#include <vector>

#include "dymesh/tensor.hpp"
#include "dymesh/vae.hpp"

namespace dymesh {

struct SgttConfig {
  int64_t blocks = 2;      // reference setting 12
  int64_t model_dim = 32;  // reference setting 512
  int64_t latent_dim = 8;  // c, matches the autoencoder
  int64_t cond_dim = 32;   // width of the conditioning vertex features
  int64_t text_dim = 32;
  int64_t sample_steps = 64;
  double guidance = 3.0;  // zeta
  int64_t ffn_mult = 4;
  double cond_drop_prob = 0.1;
  double rope_base = 10000.0;

  void validate() const;
};

// Per-stage modulation derived from the timestep embedding by zero-initialized
// linear maps; at initialization every gate is zero and the block stack is an
// identity on its residual stream.
struct AdaLnParams {
  Tensor scale;  // alpha, 1 x d
  Tensor shift;  // beta,  1 x d
  Tensor gate;   // g,     1 x d
};

// Conditioning bundle: sampled vertex features, text embedding tokens, and
// the classifier-free switch that swaps text for the learned null token.
struct SgttCondition {
  Tensor shape_features;  // n x cond_dim
  Tensor text_tokens;     // k x text_dim
  bool use_null_text = false;
};

// State of one sampling trajectory.
struct FlowState {
  std::vector<Tensor> latent;  // num_c tensors, n x c
  double t = 1.0;
};

// Tan-warped timestep map t = 1 - 1/(tan(pi/2 u) + 1); monotone on [0,1).
double sample_timestep(double u);
// Inverse CDF companion used by distribution tests: u = (2/pi) atan(t/(1-t)).
double timestep_cdf(double t);

// Convex interpolation toward noise: (1-t) z + t eps.
Tensor noisy_latent(const Tensor& z, const Tensor& eps, double t);

// v_uncond + zeta * (v_cond - v_uncond).
Tensor cfg_velocity(const Tensor& v_cond, const Tensor& v_uncond, double zeta);

using VelocityFn = std::function<std::vector<Tensor>(
    const std::vector<Tensor>& state, double t, bool conditioned)>;

// Euler integration of the velocity field from pure noise at t=1 down to
// t=0 on a uniform grid. With zeta == 1 the unconditional branch is never
// evaluated, so guided and unguided sampling agree bitwise.
std::vector<Tensor> euler_sample(const VelocityFn& velocity,
                                 int64_t num_chunks,
                                 const std::vector<int64_t>& latent_shape,
                                 int64_t steps, double zeta, Rng& rng);

class SgttModel {
 public:
  SgttModel(SgttConfig cfg, uint64_t seed);

  const SgttConfig& config() const { return cfg_; }
  std::vector<Tensor> parameters() const;
  std::map<std::string, Tensor>& named_parameters() { return params_; }
  Tensor param(const std::string& name) const;

  // Predicted velocity for per-chunk latents (each n x c).
  std::vector<Tensor> forward(const std::vector<Tensor>& noisy, double t,
                              const SgttCondition& cond);

  // Flow-matching loss at a sampled timestep; the text condition is dropped
  // (replaced by the null token) with probability cond_drop_prob.
  Tensor rf_loss(const std::vector<Tensor>& z, const SgttCondition& cond,
                 Rng& rng);

  VelocityFn sampler(const SgttCondition& cond);

  Checkpoint to_checkpoint() const;
  static SgttModel from_checkpoint(const Checkpoint& ckpt);
  void load_parameters(const Checkpoint& ckpt);

 private:
  AdaLnParams modulation(const std::string& prefix, const Tensor& temb) const;

  SgttConfig cfg_;
  std::map<std::string, Tensor> params_;
};

// End-to-end generation: encode the mesh, sample latents for
// ceil(frames/stride) chunks, decode, blend, and re-anchor at the input
// vertices. The input mesh must already be deduplicated.
DynamicMeshSequence generate_animation(const TriangleMesh& mesh,
                                       const Tensor& text_tokens,
                                       VaeModel& vae, SgttModel& flow,
                                       int64_t frames, int64_t steps,
                                       double zeta, uint64_t seed);

}  // namespace dymesh
