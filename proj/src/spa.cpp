#include "semfuse/spa.hpp"

#include <cmath>
#include <cstring>

#include "semfuse/errors.hpp"
#include "semfuse/instrumentation.hpp"
#include "semfuse/ops.hpp"

namespace semfuse::spa {

namespace {

Tensor flatten_tokens(const Tensor& f) {
  if (f.rank() != 3) throw DimensionError("expected [C x H x W] features, got " + shape_str(f.shape()));
  return ops::reshape(f, {f.dim(0), f.dim(1) * f.dim(2)});
}

void require_cols(const char* what, const Tensor& w, std::size_t cols) {
  if (w.rank() != 2 || w.dim(1) != cols) {
    throw DimensionError(std::string(what) + ": weight " + shape_str(w.shape()) +
                         " does not take " + std::to_string(cols) + " channels");
  }
}

}  // namespace

std::uint64_t PersistentRepository::checksum() const {
  std::uint64_t h = 1469598103934665603ull;
  for (const Tensor* t : {&z, &k, &v}) {
    if (!t->defined()) continue;
    for (double x : t->data()) {
      unsigned char bytes[sizeof(double)];
      std::memcpy(bytes, &x, sizeof x);
      for (unsigned char b : bytes) {
        h ^= b;
        h *= 1099511628211ull;
      }
    }
  }
  return h;
}

PersistentRepository build_repository(const Tensor& f_src, const RepositoryParams& params,
                                      RepositoryMode mode) {
  instrumentation::note_teacher_path();
  PersistentRepository pr;
  pr.mode = mode;
  pr.height = f_src.dim(1);
  pr.width = f_src.dim(2);
  pr.w_k = params.w_k;
  pr.w_v = params.w_v;
  if (mode == RepositoryMode::None) return pr;

  const Tensor tokens = flatten_tokens(f_src);
  if (mode == RepositoryMode::NoLatent) {
    require_cols("repository key projection", params.w_k, tokens.dim(0));
    pr.z = tokens;
  } else {
    require_cols("repository latent projection", params.w_z, tokens.dim(0));
    pr.z = ops::matmul(params.w_z, tokens);
  }
  if (mode == RepositoryMode::NoKeyValue) {
    pr.k = pr.z;
    pr.v = pr.z;
  } else {
    require_cols("repository key projection", params.w_k, pr.z.dim(0));
    pr.k = ops::matmul(params.w_k, pr.z);
    pr.v = ops::matmul(params.w_v, pr.z);
  }
  return pr;
}

Tensor cross_attend(const Tensor& f_patch, const PersistentRepository& pr, const StageParams& p,
                    Modality modality, const SpaConfig& cfg, std::vector<Tensor>* weights) {
  instrumentation::note_teacher_path();
  if (f_patch.rank() != 3) {
    throw DimensionError("cross_attend: expected [C x H x W], got " + shape_str(f_patch.shape()));
  }
  if (f_patch.dim(1) != pr.height || f_patch.dim(2) != pr.width) {
    throw DimensionError("cross_attend: patch features " + shape_str(f_patch.shape()) +
                         " not aligned with repository tokens [" + std::to_string(pr.height) +
                         "x" + std::to_string(pr.width) + "]");
  }
  const std::size_t d = cfg.dim();
  const Tensor x = flatten_tokens(f_patch);
  const Tensor& wq = modality == Modality::Vis ? p.q_vis : p.q_ir;
  const Tensor& wm = modality == Modality::Vis ? p.merge_vis : p.merge_ir;
  require_cols("query projection", wq, x.dim(0));
  const Tensor q = ops::matmul(wq, x);

  Tensor k, v;
  if (pr.mode == RepositoryMode::None) {
    k = ops::matmul(pr.w_k, q);
    v = ops::matmul(pr.w_v, q);
  } else {
    k = pr.k;
    v = pr.v;
  }
  if (q.dim(0) != d || k.dim(0) != d || v.dim(0) != d) {
    throw DimensionError("cross_attend: query " + shape_str(q.shape()) + " / key " +
                         shape_str(k.shape()) + " not of width " + std::to_string(d));
  }
  if (k.dim(1) != v.dim(1)) {
    throw DimensionError("cross_attend: key " + shape_str(k.shape()) + " and value " +
                         shape_str(v.shape()) + " token counts differ");
  }

  const double inv_sqrt = 1.0 / std::sqrt(static_cast<double>(cfg.head_dim));
  std::vector<Tensor> heads;
  for (std::size_t h = 0; h < cfg.heads; ++h) {
    const std::size_t b = h * cfg.head_dim, e = b + cfg.head_dim;
    const Tensor qh = ops::slice(q, b, e);
    const Tensor kh = ops::slice(k, b, e);
    const Tensor vh = ops::slice(v, b, e);
    const Tensor attn = ops::softmax_rows(ops::scale(ops::matmul(ops::transpose(qh), kh), inv_sqrt));
    if (weights) weights->push_back(attn);
    heads.push_back(ops::matmul(vh, ops::transpose(attn)));
  }
  const Tensor merged = ops::matmul(wm, ops::concat(heads));
  return ops::reshape(merged, {d, f_patch.dim(1), f_patch.dim(2)});
}

SpaResult spa_stage(const Tensor& vis_query, const Tensor& ir_query, const PersistentRepository& pr,
                    const StageParams& p, const SpaConfig& cfg) {
  SpaResult r;
  r.vis = cross_attend(vis_query, pr, p, Modality::Vis, cfg);
  r.ir = cross_attend(ir_query, pr, p, Modality::Ir, cfg);
  const std::size_t d = cfg.dim();
  const std::size_t t = pr.tokens();
  const Tensor both = ops::concat({ops::reshape(r.vis, {d, t}), ops::reshape(r.ir, {d, t})});
  require_cols("output projection", p.out, 2 * d);
  const Tensor fused = ops::add_channel_bias(ops::matmul(p.out, both), p.out_bias);
  r.fused = ops::reshape(fused, {d, pr.height, pr.width});
  return r;
}

namespace {

Tensor reduce_patches(const std::vector<Tensor>& feats, const Shape& like) {
  if (feats.empty()) return Tensor::zeros(like);
  Tensor acc = feats[0];
  for (std::size_t i = 1; i < feats.size(); ++i) acc = ops::add(acc, feats[i]);
  return acc;
}

}  // namespace

Tensor spa_forward(const std::vector<Tensor>& vis_feats, const std::vector<Tensor>& ir_feats,
                   const PersistentRepository& pr, const StageParams& p, const SpaConfig& cfg) {
  if (vis_feats.empty() && ir_feats.empty()) {
    throw ContractError("spa_forward: no patch features in either modality");
  }
  const Shape& like = vis_feats.empty() ? ir_feats[0].shape() : vis_feats[0].shape();
  return spa_stage(reduce_patches(vis_feats, like), reduce_patches(ir_feats, like), pr, p, cfg).fused;
}

}  // namespace semfuse::spa
