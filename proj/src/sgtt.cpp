#include "dymesh/sgtt.hpp"

#include <cmath>
#include <numbers>
#include <stdexcept>

#include "dymesh/checkpoint.hpp"
#include "dymesh/chunking.hpp"

namespace dymesh {

void SgttConfig::validate() const {
  if (blocks < 1) throw std::invalid_argument("sgtt config: blocks >= 1");
  if (model_dim < 2 || model_dim % 2 != 0) {
    throw std::invalid_argument("sgtt config: model_dim must be even and >= 2");
  }
  if (latent_dim < 1 || cond_dim < 1 || text_dim < 1) {
    throw std::invalid_argument("sgtt config: dimensions must be >= 1");
  }
  if (sample_steps < 1) {
    throw std::invalid_argument("sgtt config: sample_steps >= 1");
  }
  if (guidance < 0.0) {
    throw std::invalid_argument("sgtt config: guidance must be >= 0");
  }
  if (ffn_mult < 1) throw std::invalid_argument("sgtt config: ffn_mult >= 1");
  if (cond_drop_prob < 0.0 || cond_drop_prob > 1.0) {
    throw std::invalid_argument("sgtt config: cond_drop_prob in [0,1]");
  }
}

double sample_timestep(double u) {
  if (u < 0.0 || u >= 1.0) {
    throw std::invalid_argument("sample_timestep: u must lie in [0, 1)");
  }
  return 1.0 - 1.0 / (std::tan(0.5 * std::numbers::pi * u) + 1.0);
}

double timestep_cdf(double t) {
  if (t < 0.0 || t >= 1.0) {
    throw std::invalid_argument("timestep_cdf: t must lie in [0, 1)");
  }
  return (2.0 / std::numbers::pi) * std::atan(t / (1.0 - t));
}

Tensor noisy_latent(const Tensor& z, const Tensor& eps, double t) {
  return add(scale(z, 1.0 - t), scale(eps, t));
}

Tensor cfg_velocity(const Tensor& v_cond, const Tensor& v_uncond, double zeta) {
  return add(v_uncond, scale(sub(v_cond, v_uncond), zeta));
}

std::vector<Tensor> euler_sample(const VelocityFn& velocity,
                                 int64_t num_chunks,
                                 const std::vector<int64_t>& latent_shape,
                                 int64_t steps, double zeta, Rng& rng) {
  if (steps < 1) throw std::invalid_argument("euler_sample: steps >= 1");
  if (num_chunks < 1) throw std::invalid_argument("euler_sample: no chunks");
  FlowState state;
  state.t = 1.0;
  for (int64_t i = 0; i < num_chunks; ++i) {
    state.latent.push_back(rng.normal_tensor(latent_shape));
  }
  const double delta = 1.0 / static_cast<double>(steps);
  try {
    for (int64_t k = 0; k < steps; ++k) {
      state.t = 1.0 - static_cast<double>(k) * delta;
      std::vector<Tensor> v_cond = velocity(state.latent, state.t, true);
      std::vector<Tensor> v;
      if (zeta == 1.0) {
        v = std::move(v_cond);  // guided and unguided agree bitwise
      } else {
        std::vector<Tensor> v_uncond = velocity(state.latent, state.t, false);
        v.reserve(v_cond.size());
        for (size_t i = 0; i < v_cond.size(); ++i)
          v.push_back(cfg_velocity(v_cond[i], v_uncond[i], zeta));
      }
      for (size_t i = 0; i < state.latent.size(); ++i)
        state.latent[i] = add(state.latent[i], scale(v[i], delta));
    }
  } catch (const std::runtime_error& e) {
    throw std::runtime_error(std::string("euler_sample: diverged (") +
                             e.what() + ")");
  }
  return state.latent;
}

// --- model ------------------------------------------------------------------

namespace {

Tensor init_weight(Rng& rng, int64_t rows, int64_t cols) {
  Tensor w = rng.normal_tensor({rows, cols}, true);
  const double s = 1.0 / std::sqrt(static_cast<double>(rows));
  for (double& v : w.mutable_data()) v *= s;
  return w;
}

Tensor timestep_embedding(double t, int64_t dim) {
  const int64_t half = dim / 2;
  std::vector<double> data(dim);
  for (int64_t i = 0; i < half; ++i) {
    double freq = std::exp(-std::log(10000.0) * static_cast<double>(i) /
                           static_cast<double>(half));
    data[i] = std::sin(t * freq);
    data[half + i] = std::cos(t * freq);
  }
  return Tensor::from_data({1, dim}, std::move(data));
}

const char* kStages[] = {"tmp", "spa", "crs", "ffn"};

}  // namespace

SgttModel::SgttModel(SgttConfig cfg, uint64_t seed) : cfg_(cfg) {
  cfg_.validate();
  Rng rng(seed);
  const int64_t d = cfg_.model_dim;
  auto addw = [&](const std::string& name, int64_t r, int64_t c) {
    params_[name] = init_weight(rng, r, c);
  };
  auto addz = [&](const std::string& name, int64_t r, int64_t c) {
    params_[name] = Tensor::zeros({r, c}, true);
  };

  addw("in.w", cfg_.latent_dim, d);
  addz("in.b", 1, d);
  addw("cond.w", cfg_.cond_dim, d);
  addz("cond.b", 1, d);
  addw("tmlp1.w", d, d);
  addz("tmlp1.b", 1, d);
  addw("tmlp2.w", d, d);
  addz("tmlp2.b", 1, d);
  params_["null_text"] = init_weight(rng, 1, cfg_.text_dim);

  for (int64_t b = 0; b < cfg_.blocks; ++b) {
    const std::string p = "blk" + std::to_string(b) + ".";
    for (const char* stage : kStages) {
      addz(p + "mod." + stage + ".w", d, 3 * d);
      addz(p + "mod." + stage + ".b", 1, 3 * d);
    }
    for (const char* attn : {"tmp", "spa"}) {
      addw(p + attn + ".wq", d, d);
      addw(p + attn + ".wk", d, d);
      addw(p + attn + ".wv", d, d);
      addw(p + attn + ".wo", d, d);
    }
    addw(p + "crs.wq", d, d);
    addw(p + "crs.wk", cfg_.text_dim, d);
    addw(p + "crs.wv", cfg_.text_dim, d);
    addw(p + "crs.wo", d, d);
    addw(p + "ffn.w1", d, cfg_.ffn_mult * d);
    addz(p + "ffn.b1", 1, cfg_.ffn_mult * d);
    addw(p + "ffn.w2", cfg_.ffn_mult * d, d);
    addz(p + "ffn.b2", 1, d);
  }
  addz("final.mod.w", d, 2 * d);
  addz("final.mod.b", 1, 2 * d);
  addz("out.w", d, cfg_.latent_dim);
  addz("out.b", 1, cfg_.latent_dim);
}

std::vector<Tensor> SgttModel::parameters() const {
  std::vector<Tensor> out;
  out.reserve(params_.size());
  for (const auto& [name, t] : params_) out.push_back(t);
  return out;
}

Tensor SgttModel::param(const std::string& name) const {
  auto it = params_.find(name);
  if (it == params_.end()) {
    throw std::invalid_argument("sgtt: unknown parameter " + name);
  }
  return it->second;
}

AdaLnParams SgttModel::modulation(const std::string& prefix,
                                  const Tensor& temb) const {
  const int64_t d = cfg_.model_dim;
  Tensor packed =
      add_rowvec(matmul(temb, param(prefix + ".w")), param(prefix + ".b"));
  return {slice_cols(packed, 0, d), slice_cols(packed, d, d),
          slice_cols(packed, 2 * d, d)};
}

namespace {

Tensor modulate(const Tensor& x, const AdaLnParams& mod) {
  return add_rowvec(mul_rowvec(layer_norm(x), add_scalar(mod.scale, 1.0)),
                    mod.shift);
}

}  // namespace

std::vector<Tensor> SgttModel::forward(const std::vector<Tensor>& noisy,
                                       double t, const SgttCondition& cond) {
  const int64_t num_c = static_cast<int64_t>(noisy.size());
  if (num_c < 1) throw std::invalid_argument("sgtt forward: no chunks");
  const int64_t n = noisy[0].rows();
  const int64_t d = cfg_.model_dim;
  if (cond.shape_features.rows() != n) {
    throw std::invalid_argument(
        "sgtt forward: conditioning features misaligned with latent tokens");
  }

  // token embedding plus token-wise shape conditioning, chunk-major rows
  Tensor cond_feat = add_rowvec(matmul(cond.shape_features, param("cond.w")),
                                param("cond.b"));
  std::vector<Tensor> embedded;
  embedded.reserve(num_c);
  for (const Tensor& zi : noisy) {
    if (zi.rows() != n || zi.cols() != cfg_.latent_dim) {
      throw std::invalid_argument("sgtt forward: latent shape mismatch");
    }
    embedded.push_back(
        add(add_rowvec(matmul(zi, param("in.w")), param("in.b")), cond_feat));
  }
  Tensor x = concat_rows(embedded);
  const int64_t rows = num_c * n;

  Tensor temb = timestep_embedding(t, d);
  temb = add_rowvec(matmul(temb, param("tmlp1.w")), param("tmlp1.b"));
  temb = gelu(temb);
  temb = add_rowvec(matmul(temb, param("tmlp2.w")), param("tmlp2.b"));

  Tensor text = cond.use_null_text ? param("null_text") : cond.text_tokens;

  // index plumbing for the two grouped attention stages
  std::vector<int64_t> chunk_positions(num_c);
  for (int64_t k = 0; k < num_c; ++k) chunk_positions[k] = k;
  std::vector<int64_t> temporal_inverse(rows);
  for (int64_t k = 0; k < num_c; ++k)
    for (int64_t j = 0; j < n; ++j)
      temporal_inverse[k * n + j] = j * num_c + k;

  const double inv_sqrt = 1.0 / std::sqrt(static_cast<double>(d));

  for (int64_t b = 0; b < cfg_.blocks; ++b) {
    const std::string p = "blk" + std::to_string(b) + ".";

    // (1) chunk-wise attention with rotary embedding over the chunk axis
    {
      AdaLnParams mod = modulation(p + "mod.tmp", temb);
      Tensor xm = modulate(x, mod);
      std::vector<Tensor> groups;
      groups.reserve(n);
      for (int64_t j = 0; j < n; ++j) {
        std::vector<int64_t> rows_j(num_c);
        for (int64_t k = 0; k < num_c; ++k) rows_j[k] = k * n + j;
        Tensor g = gather_rows(xm, rows_j);
        Tensor q = rope_rows(matmul(g, param(p + "tmp.wq")), chunk_positions,
                             cfg_.rope_base);
        Tensor kk = rope_rows(matmul(g, param(p + "tmp.wk")), chunk_positions,
                              cfg_.rope_base);
        Tensor attn = softmax_rows(scale(matmul(q, transpose(kk)), inv_sqrt));
        groups.push_back(matmul(attn, matmul(g, param(p + "tmp.wv"))));
      }
      Tensor mixed = gather_rows(concat_rows(groups), temporal_inverse);
      Tensor out = matmul(mixed, param(p + "tmp.wo"));
      x = add(x, mul_rowvec(out, mod.gate));
    }

    // (2) spatial attention across tokens within each chunk
    {
      AdaLnParams mod = modulation(p + "mod.spa", temb);
      Tensor xm = modulate(x, mod);
      std::vector<Tensor> groups;
      groups.reserve(num_c);
      for (int64_t k = 0; k < num_c; ++k) {
        std::vector<int64_t> rows_k(n);
        for (int64_t j = 0; j < n; ++j) rows_k[j] = k * n + j;
        Tensor g = gather_rows(xm, rows_k);
        Tensor q = matmul(g, param(p + "spa.wq"));
        Tensor kk = matmul(g, param(p + "spa.wk"));
        Tensor attn = softmax_rows(scale(matmul(q, transpose(kk)), inv_sqrt));
        groups.push_back(matmul(attn, matmul(g, param(p + "spa.wv"))));
      }
      Tensor out = matmul(concat_rows(groups), param(p + "spa.wo"));
      x = add(x, mul_rowvec(out, mod.gate));
    }

    // (3) flattened tokens query the text embedding
    {
      AdaLnParams mod = modulation(p + "mod.crs", temb);
      Tensor xm = modulate(x, mod);
      Tensor q = matmul(xm, param(p + "crs.wq"));
      Tensor kk = matmul(text, param(p + "crs.wk"));
      Tensor v = matmul(text, param(p + "crs.wv"));
      Tensor attn = softmax_rows(scale(matmul(q, transpose(kk)), inv_sqrt));
      Tensor out = matmul(matmul(attn, v), param(p + "crs.wo"));
      x = add(x, mul_rowvec(out, mod.gate));
    }

    // (4) feed-forward
    {
      AdaLnParams mod = modulation(p + "mod.ffn", temb);
      Tensor xm = modulate(x, mod);
      Tensor h = gelu(
          add_rowvec(matmul(xm, param(p + "ffn.w1")), param(p + "ffn.b1")));
      Tensor out =
          add_rowvec(matmul(h, param(p + "ffn.w2")), param(p + "ffn.b2"));
      x = add(x, mul_rowvec(out, mod.gate));
    }
  }

  // final modulation (scale/shift only) and the zero-initialized readout
  Tensor packed = add_rowvec(matmul(temb, param("final.mod.w")),
                             param("final.mod.b"));
  AdaLnParams final_mod{slice_cols(packed, 0, d), slice_cols(packed, d, d),
                        Tensor()};
  Tensor xm = modulate(x, final_mod);
  Tensor v = add_rowvec(matmul(xm, param("out.w")), param("out.b"));

  std::vector<Tensor> out;
  out.reserve(num_c);
  for (int64_t k = 0; k < num_c; ++k) {
    std::vector<int64_t> rows_k(n);
    for (int64_t j = 0; j < n; ++j) rows_k[j] = k * n + j;
    out.push_back(gather_rows(v, rows_k));
  }
  return out;
}

Tensor SgttModel::rf_loss(const std::vector<Tensor>& z,
                          const SgttCondition& cond, Rng& rng) {
  const double t = sample_timestep(rng.uniform());
  std::vector<Tensor> noisy, targets;
  noisy.reserve(z.size());
  targets.reserve(z.size());
  for (const Tensor& zi : z) {
    Tensor eps = rng.normal_tensor(zi.shape());
    noisy.push_back(noisy_latent(zi, eps, t));
    targets.push_back(sub(zi, eps));
  }
  SgttCondition used = cond;
  if (rng.uniform() < cfg_.cond_drop_prob) used.use_null_text = true;

  std::vector<Tensor> v = forward(noisy, t, used);
  Tensor err_sum = Tensor::zeros({1});
  int64_t elems = 0;
  for (size_t i = 0; i < v.size(); ++i) {
    Tensor d = sub(v[i], targets[i]);
    err_sum = add(err_sum, sum(mul(d, d)));
    elems += d.numel();
  }
  return scale(err_sum, 1.0 / static_cast<double>(elems));
}

VelocityFn SgttModel::sampler(const SgttCondition& cond) {
  return [this, cond](const std::vector<Tensor>& state, double t,
                      bool conditioned) {
    SgttCondition c = cond;
    c.use_null_text = c.use_null_text || !conditioned;
    return forward(state, t, c);
  };
}

Checkpoint SgttModel::to_checkpoint() const {
  Checkpoint ckpt;
  ckpt.config["kind"] = "sgtt";
  ckpt.config["blocks"] = std::to_string(cfg_.blocks);
  ckpt.config["model_dim"] = std::to_string(cfg_.model_dim);
  ckpt.config["latent_dim"] = std::to_string(cfg_.latent_dim);
  ckpt.config["cond_dim"] = std::to_string(cfg_.cond_dim);
  ckpt.config["text_dim"] = std::to_string(cfg_.text_dim);
  ckpt.config["sample_steps"] = std::to_string(cfg_.sample_steps);
  ckpt.config["guidance"] = format_double(cfg_.guidance);
  ckpt.config["ffn_mult"] = std::to_string(cfg_.ffn_mult);
  ckpt.config["cond_drop_prob"] = format_double(cfg_.cond_drop_prob);
  ckpt.config["rope_base"] = format_double(cfg_.rope_base);
  for (const auto& [name, t] : params_) ckpt.tensors[name] = t;
  return ckpt;
}

SgttModel SgttModel::from_checkpoint(const Checkpoint& ckpt) {
  if (ckpt.get("kind") != "sgtt") {
    throw std::runtime_error("checkpoint: expected kind=sgtt, got " +
                             ckpt.get("kind"));
  }
  SgttConfig cfg;
  cfg.blocks = ckpt.get_int("blocks");
  cfg.model_dim = ckpt.get_int("model_dim");
  cfg.latent_dim = ckpt.get_int("latent_dim");
  cfg.cond_dim = ckpt.get_int("cond_dim");
  cfg.text_dim = ckpt.get_int("text_dim");
  cfg.sample_steps = ckpt.get_int("sample_steps");
  cfg.guidance = ckpt.get_double("guidance");
  cfg.ffn_mult = ckpt.get_int("ffn_mult");
  cfg.cond_drop_prob = ckpt.get_double("cond_drop_prob");
  cfg.rope_base = ckpt.get_double("rope_base");
  SgttModel model(cfg, 0);
  model.load_parameters(ckpt);
  return model;
}

void SgttModel::load_parameters(const Checkpoint& ckpt) {
  load_named_parameters(params_, ckpt);
}

// --- end-to-end generation -----------------------------------------------------

DynamicMeshSequence generate_animation(const TriangleMesh& mesh,
                                       const Tensor& text_tokens,
                                       VaeModel& vae, SgttModel& flow,
                                       int64_t frames, int64_t steps,
                                       double zeta, uint64_t seed) {
  if (frames < 1) {
    throw std::invalid_argument("generate_animation: frames >= 1");
  }
  if (flow.config().latent_dim != vae.config().latent_dim) {
    throw std::invalid_argument(
        "generate_animation: latent dimensions disagree between models");
  }
  if (flow.config().cond_dim != vae.config().hidden_dim) {
    throw std::invalid_argument(
        "generate_animation: conditioning width disagrees between models");
  }
  if (text_tokens.cols() != flow.config().text_dim) {
    throw std::invalid_argument("generate_animation: text embedding width " +
                                std::to_string(text_tokens.cols()) +
                                " does not match model text_dim");
  }
  NoGradGuard ng;
  Rng rng(seed);

  VaeModel::MeshContext ctx = vae.prepare(mesh);
  Tensor v0bar = vae.encode_vertex_features(ctx);
  auto [v0n, map] = vae.encode_sampled_features(ctx, v0bar);

  const int64_t num_c = chunk_count_for(frames, vae.config().chunk);
  SgttCondition cond{v0n, text_tokens, false};
  std::vector<Tensor> z =
      euler_sample(flow.sampler(cond), num_c,
                   {v0n.rows(), flow.config().latent_dim}, steps, zeta, rng);

  std::vector<Tensor> recon = vae.decode_latents(ctx, v0bar, v0n, z);
  ChunkedTrajectory chunks;
  chunks.config = vae.config().chunk;
  chunks.original_frames = frames;
  chunks.vertex_count = mesh.vertex_count();
  chunks.initial = mesh.vertices;
  for (const Tensor& r : recon) chunks.chunks.push_back(r.data());

  RelativeTrajectory blended = tdgw_blend(chunks);
  return recompose_trajectory(blended, mesh.faces);
}

}  // namespace dymesh
