#pragma once

#include <string>
#include <vector>

#include "semfuse/prior.hpp"
#include "semfuse/tensor.hpp"

namespace semfuse::loss {

inline constexpr double kEps = 1e-8;
inline constexpr double kProbFloor = 1e-12;

struct LossBreakdown {
  double fea = 0, grad = 0, mse = 0, context = 0;
  double cs_ir = 0, cs_vis = 0, cs = 0, seg = 0;
  double total_sub = 0, total_main = 0;

  static std::string csv_header();
  std::string csv_row(std::size_t step, double lr_main, double lr_sub) const;
  LossBreakdown& operator+=(const LossBreakdown& o);
  LossBreakdown scaled(double s) const;
};

// Sum over scales of (1 - cos(F_den^m, F_spa^m)).
Tensor loss_fea(const std::vector<Tensor>& dens, const std::vector<Tensor>& spas);

struct ContextTerms {
  Tensor grad;  // mean |sobel(a) - sobel(b)|
  Tensor mse;   // mean (a - b)^2
};

ContextTerms loss_context(const Tensor& a, const Tensor& b);

struct CsTerms {
  Tensor ir, vis;
  bool ir_empty = false, vis_empty = false;  // union mask had no support; term is 0
};

// Contrastive semantic ratio per modality, summed over encoder layers and over
// both anchors x in {ref, fus}:
//   ||E(fus*M) - E(ref*M)|| / (||E(x*M) - E(src*M)|| + eps)
// with ||.|| the root-mean-square over elements and M the union of the
// modality's masks.
CsTerms loss_cs(const Tensor& fused, const Tensor& ref, const Tensor& vis, const Tensor& ir,
                const prior::MaskSet& masks_vis, const prior::MaskSet& masks_ir,
                const prior::FrozenEncoder& encoder);

// Mean per-pixel cross-entropy of class probabilities against a label map.
Tensor loss_seg(const Tensor& probs, const prior::LabelMap& labels);

double total_sub(double fea, double context, double cs);
double total_main(double sub, double seg);

// Which distillation terms enter the totals.
struct TermSwitches {
  bool fea = true;
  bool context = true;
  bool cs = true;
};

struct DistillInputs {
  Tensor vis, ir;     // sources, [1 x H x W]
  Tensor ref, fused;  // teacher and student outputs
  std::vector<Tensor> spa_feats, dense_feats;
  const prior::MaskSet* masks_vis = nullptr;
  const prior::MaskSet* masks_ir = nullptr;
  const prior::LabelMap* labels = nullptr;  // required when the segmentation term is wanted
};

struct DistillTerms {
  Tensor fea, grad, mse, cs_ir, cs_vis, seg;  // undefined when not computed
  Tensor total_sub, total_main;

  LossBreakdown values() const;
};

// Builds every enabled term. The context term covers (ref, fused) and each
// output against each source. `seg_head` may be null to skip the segmentation
// term (the student objective).
DistillTerms distillation_losses(const DistillInputs& in, const TermSwitches& switches,
                                 const prior::FrozenEncoder& encoder,
                                 const prior::SegmentationHead* seg_head);

// Context of a single output against both sources; used for pretraining and
// the teacher phase of offline distillation.
Tensor source_fidelity(const Tensor& out, const Tensor& vis, const Tensor& ir);

}  // namespace semfuse::loss
