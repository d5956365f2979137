#include "dymesh/vae.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <stdexcept>

#include "dymesh/checkpoint.hpp"

namespace dymesh {

NormalPlacement normal_placement_from_string(const std::string& s) {
  if (s == "none") return NormalPlacement::None;
  if (s == "enc1") return NormalPlacement::Enc1;
  if (s == "enc2") return NormalPlacement::Enc2;
  if (s == "enc3") return NormalPlacement::Enc3;
  throw std::invalid_argument("unknown normal placement: " + s);
}

std::string to_string(NormalPlacement p) {
  switch (p) {
    case NormalPlacement::None: return "none";
    case NormalPlacement::Enc1: return "enc1";
    case NormalPlacement::Enc2: return "enc2";
    case NormalPlacement::Enc3: return "enc3";
  }
  return "none";
}

int64_t VaeConfig::fps_count(int64_t n_vertices) const {
  int64_t n = static_cast<int64_t>(
      std::floor(static_cast<double>(n_vertices) * fps_ratio));
  return std::max<int64_t>(1, std::min(n, n_vertices));
}

void VaeConfig::validate() const {
  if (hidden_dim < 2 || hidden_dim % 2 != 0) {
    throw std::invalid_argument("vae config: hidden_dim must be even and >= 2");
  }
  if (latent_dim < 1) throw std::invalid_argument("vae config: latent_dim >= 1");
  if (plta_layers < 0 || hop_steps < 0) {
    throw std::invalid_argument("vae config: negative layer counts");
  }
  if (!(hop_decay > 0.0) || hop_decay > 1.0) {
    throw std::invalid_argument("vae config: hop_decay must lie in (0, 1]");
  }
  if (!(mask_eps > 0.0)) {
    throw std::invalid_argument("vae config: mask_eps must be > 0");
  }
  if (!(fps_ratio > 0.0) || fps_ratio > 1.0) {
    throw std::invalid_argument("vae config: fps_ratio must lie in (0, 1]");
  }
  if (decoder_blocks < 1) {
    throw std::invalid_argument("vae config: decoder_blocks >= 1");
  }
  if (max_vertices < 1) {
    throw std::invalid_argument("vae config: max_vertices >= 1");
  }
  chunk.validate();
}

// --- free operations ---------------------------------------------------------

Tensor positional_encode(const Tensor& x, int64_t num_freq) {
  if (num_freq < 0) {
    throw std::invalid_argument("positional_encode: num_freq must be >= 0");
  }
  if (x.requires_grad()) {
    throw std::invalid_argument(
        "positional_encode: expects data inputs, not graph values");
  }
  const int64_t r = x.rows(), c = x.cols();
  const int64_t width = 1 + 2 * num_freq;
  std::vector<double> out(static_cast<size_t>(r) * c * width);
  for (int64_t i = 0; i < r; ++i) {
    for (int64_t j = 0; j < c; ++j) {
      const double v = x.at(i, j);
      double* dst = out.data() + (i * c + j) * width;
      // grouped per coordinate: [v, sin(2^0 pi v), cos(2^0 pi v), ...]
      dst[0] = v;
      double freq = std::numbers::pi;
      for (int64_t f = 0; f < num_freq; ++f) {
        dst[1 + 2 * f] = std::sin(freq * v);
        dst[2 + 2 * f] = std::cos(freq * v);
        freq *= 2.0;
      }
    }
  }
  // regroup rows: the loop above already wrote row-major r x (c*width)
  return Tensor::from_data({r, c * width}, std::move(out));
}

std::vector<int64_t> farthest_point_sample(const std::vector<Vec3>& points,
                                           int64_t n) {
  const int64_t total = static_cast<int64_t>(points.size());
  if (n < 1 || n > total) {
    throw std::invalid_argument("farthest_point_sample: need 1 <= n <= N, n=" +
                                std::to_string(n) + " N=" +
                                std::to_string(total));
  }
  std::vector<int64_t> picked;
  picked.reserve(n);
  std::vector<bool> selected(total, false);
  std::vector<double> dist(total);
  picked.push_back(0);
  selected[0] = true;
  for (int64_t i = 0; i < total; ++i) dist[i] = norm(points[i] - points[0]);
  while (static_cast<int64_t>(picked.size()) < n) {
    int64_t best = -1;
    double best_d = -1.0;
    for (int64_t i = 0; i < total; ++i) {
      if (selected[i]) continue;
      if (dist[i] > best_d) {  // strict: lowest index wins ties
        best_d = dist[i];
        best = i;
      }
    }
    picked.push_back(best);
    selected[best] = true;
    for (int64_t i = 0; i < total; ++i)
      dist[i] = std::min(dist[i], norm(points[i] - points[best]));
  }
  return picked;
}

Tensor attention_map(const Tensor& query_feat, const Tensor& key_feat,
                     const Tensor& wq, const Tensor& wk) {
  Tensor q = matmul(query_feat, wq);
  Tensor k = matmul(key_feat, wk);
  const double inv_sqrt = 1.0 / std::sqrt(static_cast<double>(wq.cols()));
  return softmax_rows(scale(matmul(q, transpose(k)), inv_sqrt));
}

Tensor plta_attention(const Tensor& feat, const Tensor& log_mask,
                      const Tensor& wq, const Tensor& wk, const Tensor& wv,
                      Tensor* attention_out) {
  Tensor q = matmul(feat, wq);
  Tensor k = matmul(feat, wk);
  const double inv_sqrt = 1.0 / std::sqrt(static_cast<double>(wq.cols()));
  Tensor attn =
      masked_softmax(scale(matmul(q, transpose(k)), inv_sqrt), log_mask);
  if (attention_out) *attention_out = attn;
  return add(matmul(attn, matmul(feat, wv)), feat);
}

Tensor inject_normals(const Tensor& vertex_feat,
                      const Tensor& projected_normals,
                      NormalPlacement placement) {
  if (placement == NormalPlacement::None) return vertex_feat;
  return concat_cols(vertex_feat, projected_normals);
}

// --- model ----------------------------------------------------------------------

namespace {

Tensor init_weight(Rng& rng, int64_t rows, int64_t cols) {
  Tensor w = rng.normal_tensor({rows, cols}, true);
  const double s = 1.0 / std::sqrt(static_cast<double>(rows));
  for (double& v : w.mutable_data()) v *= s;
  return w;
}

Tensor zero_param(std::vector<int64_t> shape) {
  return Tensor::zeros(std::move(shape), true);
}

int64_t pe_width(int64_t cols, int64_t num_freq) {
  return cols * (1 + 2 * num_freq);
}

}  // namespace

VaeModel::VaeModel(VaeConfig cfg, uint64_t seed) : cfg_(std::move(cfg)) {
  cfg_.validate();
  Rng rng(seed);
  const int64_t d = cfg_.hidden_dim;
  const int64_t c = cfg_.latent_dim;
  const int64_t half = d / 2;
  const int64_t pev = pe_width(3, cfg_.pe_freq_vertex);
  const int64_t pet = pe_width(cfg_.chunk.length * 3, cfg_.pe_freq_traj);

  auto addw = [&](const std::string& name, int64_t r, int64_t cc) {
    params_[name] = init_weight(rng, r, cc);
  };
  auto addb = [&](const std::string& name, int64_t cc) {
    params_[name] = zero_param({1, cc});
  };

  switch (cfg_.normal_placement) {
    case NormalPlacement::None:
      addw("enc.coord.w", pev, d);
      addb("enc.coord.b", d);
      break;
    case NormalPlacement::Enc1:
      addw("enc.coord.w", pe_width(6, cfg_.pe_freq_vertex), d);
      addb("enc.coord.b", d);
      break;
    case NormalPlacement::Enc2:
      addw("enc.coord.w", pev, d - half);
      addb("enc.coord.b", d - half);
      addw("enc.normal.w", 3, half);
      addb("enc.normal.b", half);
      break;
    case NormalPlacement::Enc3:
      addw("enc.coord.w", pev, d);
      addb("enc.coord.b", d);
      addw("enc.normal.w", 3, half);
      addb("enc.normal.b", half);
      addw("enc.post.w", d + half, d);
      addb("enc.post.b", d);
      break;
  }
  for (int64_t l = 0; l < cfg_.plta_layers; ++l) {
    const std::string p = "enc.plta" + std::to_string(l) + ".";
    addw(p + "wq", d, d);
    addw(p + "wk", d, d);
    addw(p + "wv", d, d);
  }
  addw("enc.sync.wq", d, d);
  addw("enc.sync.wk", d, d);
  addw("enc.sync.wv0", d, d);
  addw("enc.sync.wvt", d, d);
  addw("enc.traj.w", pet, d);
  addb("enc.traj.b", d);
  addw("enc.mu.w", d, c);
  addb("enc.mu.b", c);
  addw("enc.logsig.w", d, c);
  addb("enc.logsig.b", c);

  addw("dec.zin.w", c, d);
  addb("dec.zin.b", d);
  for (int64_t k = 0; k < cfg_.decoder_blocks; ++k) {
    const std::string p = "dec.blk" + std::to_string(k) + ".";
    addw(p + "wq", d, d);
    addw(p + "wk", d, d);
    addw(p + "wv0", d, d);
    addw(p + "wvz", d, d);
  }
  addw("dec.cross.wq", d, d);
  addw("dec.cross.wk", d, d);
  addw("dec.cross.wv", d, d);
  // zero-initialized readout: an untrained model reconstructs statics exactly
  params_["dec.out.w"] = zero_param({d, cfg_.chunk.length * 3});
  addb("dec.out.b", cfg_.chunk.length * 3);
}

std::vector<Tensor> VaeModel::parameters() const {
  std::vector<Tensor> out;
  out.reserve(params_.size());
  for (const auto& [name, t] : params_) out.push_back(t);
  return out;
}

Tensor VaeModel::param(const std::string& name) const {
  auto it = params_.find(name);
  if (it == params_.end()) {
    throw std::invalid_argument("vae: unknown parameter " + name);
  }
  return it->second;
}

VaeModel::MeshContext VaeModel::prepare(const TriangleMesh& mesh) const {
  mesh.validate();
  const int64_t n = mesh.vertex_count();
  if (n < 1) throw std::invalid_argument("vae: empty mesh");
  if (n > cfg_.max_vertices) {
    throw std::runtime_error("vae: mesh has " + std::to_string(n) +
                             " vertices, configured maximum is " +
                             std::to_string(cfg_.max_vertices));
  }
  MeshContext ctx;
  ctx.mesh = mesh;
  std::vector<double> coords(static_cast<size_t>(n) * 3);
  for (int64_t i = 0; i < n; ++i) {
    coords[i * 3 + 0] = mesh.vertices[i].x;
    coords[i * 3 + 1] = mesh.vertices[i].y;
    coords[i * 3 + 2] = mesh.vertices[i].z;
  }
  ctx.coords = Tensor::from_data({n, 3}, std::move(coords));

  VertexNormals vn = vertex_normals(mesh);
  std::vector<double> normals(static_cast<size_t>(n) * 3);
  for (int64_t i = 0; i < n; ++i) {
    normals[i * 3 + 0] = vn.normals[i].x;
    normals[i * 3 + 1] = vn.normals[i].y;
    normals[i * 3 + 2] = vn.normals[i].z;
  }
  ctx.normals = Tensor::from_data({n, 3}, std::move(normals));

  BoolAdjacency adj = one_hop(mesh);
  HopBands bands = hop_bands(adj, cfg_.hop_steps);
  WeightedAdjacency weighted = weighted_adjacency(bands, cfg_.hop_decay);
  ctx.mask = log_mask(weighted, cfg_.mask_eps);

  ctx.fps_indices =
      farthest_point_sample(mesh.vertices, cfg_.fps_count(n));
  return ctx;
}

Tensor VaeModel::encode_vertex_features(const MeshContext& ctx) {
  const NormalPlacement placement = cfg_.normal_placement;
  Tensor feat;
  if (placement == NormalPlacement::Enc1) {
    Tensor joint = positional_encode(concat_cols(ctx.coords, ctx.normals),
                                     cfg_.pe_freq_vertex);
    feat = add_rowvec(matmul(joint, param("enc.coord.w")),
                      param("enc.coord.b"));
  } else {
    Tensor pe = positional_encode(ctx.coords, cfg_.pe_freq_vertex);
    feat = add_rowvec(matmul(pe, param("enc.coord.w")), param("enc.coord.b"));
    if (placement == NormalPlacement::Enc2) {
      Tensor nf = add_rowvec(matmul(ctx.normals, param("enc.normal.w")),
                             param("enc.normal.b"));
      feat = inject_normals(feat, nf, placement);
    }
  }
  for (int64_t l = 0; l < cfg_.plta_layers; ++l) {
    const std::string p = "enc.plta" + std::to_string(l) + ".";
    feat = plta_attention(feat, ctx.mask, param(p + "wq"), param(p + "wk"),
                          param(p + "wv"));
  }
  if (placement == NormalPlacement::Enc3) {
    Tensor nf = add_rowvec(matmul(ctx.normals, param("enc.normal.w")),
                           param("enc.normal.b"));
    feat = inject_normals(feat, nf, placement);
    feat = add_rowvec(matmul(feat, param("enc.post.w")), param("enc.post.b"));
  }
  return feat;
}

Tensor VaeModel::shared_map(const Tensor& q_feat, const Tensor& k_feat,
                            const Tensor& wq, const Tensor& wk) {
  ++stats_.sync_maps_computed;
  return attention_map(q_feat, k_feat, wq, wk);
}

std::pair<Tensor, Tensor> VaeModel::encode_sampled_features(
    const MeshContext& ctx, const Tensor& v0bar) {
  Tensor v0n_base = gather_rows(v0bar, ctx.fps_indices);
  Tensor map = shared_map(v0n_base, v0bar, param("enc.sync.wq"),
                          param("enc.sync.wk"));
  Tensor v0n =
      add(matmul(map, matmul(v0bar, param("enc.sync.wv0"))), v0n_base);
  return {v0n, map};
}

EncodedMesh VaeModel::encode(const MeshContext& ctx,
                             const ChunkedTrajectory& chunks, Rng& rng,
                             bool sample) {
  const int64_t n_vertices = ctx.mesh.vertex_count();
  if (chunks.vertex_count != n_vertices) {
    throw std::invalid_argument("vae encode: chunk/mesh vertex mismatch");
  }
  if (chunks.config.length != cfg_.chunk.length) {
    throw std::invalid_argument("vae encode: chunk length differs from config");
  }
  EncodedMesh enc;
  enc.vertex_features = encode_vertex_features(ctx);
  auto [v0n, map] = encode_sampled_features(ctx, enc.vertex_features);
  enc.sampled_features = v0n;
  enc.fps_indices = ctx.fps_indices;
  enc.latents.paired_features = v0n;

  const int64_t lc3 = cfg_.chunk.length * 3;
  Tensor kl_sum = Tensor::zeros({1});
  int64_t kl_elems = 0;
  for (const auto& chunk : chunks.chunks) {
    Tensor raw = Tensor::from_data({n_vertices, lc3}, chunk);
    Tensor pe = positional_encode(raw, cfg_.pe_freq_traj);
    Tensor vt = add_rowvec(matmul(pe, param("enc.traj.w")),
                           param("enc.traj.b"));
    // the map from the vertex stream aggregates the trajectory stream
    Tensor proj = matmul(vt, param("enc.sync.wvt"));
    Tensor vtn = add(matmul(map, proj), gather_rows(proj, ctx.fps_indices));

    Tensor mu = add_rowvec(matmul(vtn, param("enc.mu.w")), param("enc.mu.b"));
    Tensor log_sigma = add_rowvec(matmul(vtn, param("enc.logsig.w")),
                                  param("enc.logsig.b"));
    Tensor sigma = dymesh::exp(log_sigma);
    Tensor z = mu;
    if (sample) {
      Tensor eps = rng.normal_tensor(mu.shape());
      z = add(mu, mul(sigma, eps));
    }
    // 0.5 * (mu^2 + sigma^2 - 1 - 2 log sigma)
    Tensor term = add_scalar(add(mul(mu, mu), mul(sigma, sigma)), -1.0);
    term = scale(sub(term, scale(log_sigma, 2.0)), 0.5);
    kl_sum = add(kl_sum, sum(term));
    kl_elems += term.numel();

    enc.latents.mu.push_back(mu);
    enc.latents.log_sigma.push_back(log_sigma);
    enc.latents.z.push_back(z);
  }
  enc.kl = scale(kl_sum, 1.0 / static_cast<double>(std::max<int64_t>(1, kl_elems)));
  return enc;
}

std::vector<Tensor> VaeModel::decode_latents(const MeshContext& ctx,
                                             const Tensor& v0bar,
                                             const Tensor& v0n,
                                             const std::vector<Tensor>& z) {
  (void)ctx;
  Tensor stream0 = v0n;
  std::vector<Tensor> zfeat;
  zfeat.reserve(z.size());
  for (const Tensor& zi : z) {
    zfeat.push_back(
        add_rowvec(matmul(zi, param("dec.zin.w")), param("dec.zin.b")));
  }
  for (int64_t k = 0; k < cfg_.decoder_blocks; ++k) {
    const std::string p = "dec.blk" + std::to_string(k) + ".";
    Tensor m = layer_norm(stream0);
    Tensor map = shared_map(m, m, param(p + "wq"), param(p + "wk"));
    stream0 = add(matmul(map, matmul(m, param(p + "wv0"))), stream0);
    for (Tensor& zf : zfeat) {
      Tensor zm = layer_norm(zf);
      zf = add(matmul(map, matmul(zm, param(p + "wvz"))), zf);
    }
  }
  // cross-attention readout: initial mesh features query the latent streams
  Tensor q = matmul(layer_norm(v0bar), param("dec.cross.wq"));
  Tensor kk = matmul(layer_norm(stream0), param("dec.cross.wk"));
  const double inv_sqrt =
      1.0 / std::sqrt(static_cast<double>(cfg_.hidden_dim));
  ++stats_.sync_maps_computed;
  Tensor out_map = softmax_rows(scale(matmul(q, transpose(kk)), inv_sqrt));
  std::vector<Tensor> recon;
  recon.reserve(zfeat.size());
  for (const Tensor& zf : zfeat) {
    Tensor v = matmul(layer_norm(zf), param("dec.cross.wv"));
    Tensor mixed = matmul(out_map, v);
    recon.push_back(
        add_rowvec(matmul(mixed, param("dec.out.w")), param("dec.out.b")));
  }
  return recon;
}

std::vector<Tensor> VaeModel::decode(const EncodedMesh& enc) {
  MeshContext dummy;
  return decode_latents(dummy, enc.vertex_features, enc.sampled_features,
                        enc.latents.z);
}

Tensor VaeModel::loss(const std::vector<Tensor>& recon,
                      const ChunkedTrajectory& target,
                      const Tensor& kl) const {
  if (recon.size() != target.chunks.size()) {
    throw std::invalid_argument("vae loss: chunk count mismatch");
  }
  Tensor err_sum = Tensor::zeros({1});
  int64_t elems = 0;
  for (size_t i = 0; i < recon.size(); ++i) {
    Tensor tgt = Tensor::from_data(recon[i].shape(), target.chunks[i]);
    Tensor d = sub(recon[i], tgt);
    err_sum = add(err_sum, sum(mul(d, d)));
    elems += d.numel();
  }
  Tensor rec = scale(err_sum, 1.0 / static_cast<double>(std::max<int64_t>(1, elems)));
  return add(rec, scale(kl, cfg_.kl_weight));
}

DynamicMeshSequence VaeModel::reconstruct(const DynamicMeshSequence& seq,
                                          Rng& rng, bool sample_latents) {
  NoGradGuard ng;
  seq.validate();
  RelativeTrajectory traj = decompose_trajectory(seq);
  ChunkedTrajectory chunks = split_chunks(traj, cfg_.chunk);
  MeshContext ctx = prepare(seq.frame_mesh(0));
  EncodedMesh enc = encode(ctx, chunks, rng, sample_latents);
  std::vector<Tensor> recon = decode(enc);

  ChunkedTrajectory out = chunks;
  for (size_t i = 0; i < recon.size(); ++i) out.chunks[i] = recon[i].data();
  RelativeTrajectory blended = tdgw_blend(out);
  return recompose_trajectory(blended, seq.faces);
}

Checkpoint VaeModel::to_checkpoint() const {
  Checkpoint ckpt;
  ckpt.config["kind"] = "vae";
  ckpt.config["hidden_dim"] = std::to_string(cfg_.hidden_dim);
  ckpt.config["latent_dim"] = std::to_string(cfg_.latent_dim);
  ckpt.config["plta_layers"] = std::to_string(cfg_.plta_layers);
  ckpt.config["hop_steps"] = std::to_string(cfg_.hop_steps);
  ckpt.config["hop_decay"] = format_double(cfg_.hop_decay);
  ckpt.config["mask_eps"] = format_double(cfg_.mask_eps);
  ckpt.config["pe_freq_vertex"] = std::to_string(cfg_.pe_freq_vertex);
  ckpt.config["pe_freq_traj"] = std::to_string(cfg_.pe_freq_traj);
  ckpt.config["fps_ratio"] = format_double(cfg_.fps_ratio);
  ckpt.config["decoder_blocks"] = std::to_string(cfg_.decoder_blocks);
  ckpt.config["kl_weight"] = format_double(cfg_.kl_weight);
  ckpt.config["normal_placement"] = to_string(cfg_.normal_placement);
  ckpt.config["max_vertices"] = std::to_string(cfg_.max_vertices);
  ckpt.config["chunk_stride"] = std::to_string(cfg_.chunk.stride);
  ckpt.config["chunk_length"] = std::to_string(cfg_.chunk.length);
  ckpt.config["norm"] = "pre";
  for (const auto& [name, t] : params_) ckpt.tensors[name] = t;
  return ckpt;
}

VaeModel VaeModel::from_checkpoint(const Checkpoint& ckpt) {
  if (ckpt.get("kind") != "vae") {
    throw std::runtime_error("checkpoint: expected kind=vae, got " +
                             ckpt.get("kind"));
  }
  VaeConfig cfg;
  cfg.hidden_dim = ckpt.get_int("hidden_dim");
  cfg.latent_dim = ckpt.get_int("latent_dim");
  cfg.plta_layers = ckpt.get_int("plta_layers");
  cfg.hop_steps = ckpt.get_int("hop_steps");
  cfg.hop_decay = ckpt.get_double("hop_decay");
  cfg.mask_eps = ckpt.get_double("mask_eps");
  cfg.pe_freq_vertex = ckpt.get_int("pe_freq_vertex");
  cfg.pe_freq_traj = ckpt.get_int("pe_freq_traj");
  cfg.fps_ratio = ckpt.get_double("fps_ratio");
  cfg.decoder_blocks = ckpt.get_int("decoder_blocks");
  cfg.kl_weight = ckpt.get_double("kl_weight");
  cfg.normal_placement =
      normal_placement_from_string(ckpt.get("normal_placement"));
  cfg.max_vertices = ckpt.get_int("max_vertices");
  cfg.chunk.stride = ckpt.get_int("chunk_stride");
  cfg.chunk.length = ckpt.get_int("chunk_length");

  VaeModel model(cfg, 0);
  model.load_parameters(ckpt);
  return model;
}

void VaeModel::load_parameters(const Checkpoint& ckpt) {
  load_named_parameters(params_, ckpt);
}

}  // namespace dymesh
