#pragma once

#include <cstdint>
#include <vector>

#include "semfuse/prior.hpp"
#include "semfuse/tensor.hpp"

// Semantic persistent attention: semantic patch features query a per-pair
// repository holding a latent of the source features and its key/value
// projections.
namespace semfuse::spa {

using prior::Modality;

struct SpaConfig {
  std::size_t heads = 4;
  std::size_t head_dim = 8;
  std::size_t dim() const { return heads * head_dim; }
};

// Ablation variants of the repository.
enum class RepositoryMode {
  Full,        // Z = Wz F, K = Wk Z, V = Wv Z
  NoLatent,    // Z bypassed: K = Wk F, V = Wv F
  NoKeyValue,  // K = V = Z
  None,        // no repository: self-attention over the patch features
};

struct RepositoryParams {
  Tensor w_z;  // [d x c_src]
  Tensor w_k;  // [d x d]
  Tensor w_v;  // [d x d]
};

struct StageParams {
  Tensor q_vis, q_ir;          // [d x c_patch]
  Tensor merge_vis, merge_ir;  // [d x d], recombines heads
  Tensor out;                  // [d x 2d]
  Tensor out_bias;             // [d]
};

struct PersistentRepository {
  RepositoryMode mode = RepositoryMode::Full;
  std::size_t height = 0;  // token grid of the source features
  std::size_t width = 0;
  Tensor z, k, v;  // [d x T]; undefined in None mode
  Tensor w_k, w_v;  // kept for None mode self-attention

  std::size_t tokens() const { return height * width; }
  // FNV-1a over the z/k/v buffers; unchanged by any attend.
  std::uint64_t checksum() const;
};

PersistentRepository build_repository(const Tensor& f_src, const RepositoryParams& params,
                                      RepositoryMode mode = RepositoryMode::Full);

// Multi-head cross-attention of one modality's patch features against the
// repository. Returns [d x H' x W']. When `weights` is given, receives the
// per-head [T x T_kv] attention matrices.
Tensor cross_attend(const Tensor& f_patch, const PersistentRepository& pr, const StageParams& p,
                    Modality modality, const SpaConfig& cfg,
                    std::vector<Tensor>* weights = nullptr);

struct SpaResult {
  Tensor fused;       // F_SPA, [d x H' x W']
  Tensor vis, ir;     // per-modality attended features
};

// One SPA block on already-reduced per-modality query features.
SpaResult spa_stage(const Tensor& vis_query, const Tensor& ir_query, const PersistentRepository& pr,
                    const StageParams& p, const SpaConfig& cfg);

// Patch features of each modality are summed, then passed through one block.
// One of the lists may be empty (zero queries); both empty is an error.
Tensor spa_forward(const std::vector<Tensor>& vis_feats, const std::vector<Tensor>& ir_feats,
                   const PersistentRepository& pr, const StageParams& p, const SpaConfig& cfg);

}  // namespace semfuse::spa
