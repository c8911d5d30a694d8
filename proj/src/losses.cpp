#include "semfuse/losses.hpp"

#include <cstdio>

#include "semfuse/errors.hpp"
#include "semfuse/ops.hpp"

namespace semfuse::loss {

std::string LossBreakdown::csv_header() {
  return "step,lr_main,lr_sub,fea,grad,mse,context,cs_ir,cs_vis,cs,seg,total_sub,total_main";
}

std::string LossBreakdown::csv_row(std::size_t step, double lr_main, double lr_sub) const {
  char buf[512];
  std::snprintf(buf, sizeof buf, "%zu,%.17g,%.17g,%.17g,%.17g,%.17g,%.17g,%.17g,%.17g,%.17g,%.17g,%.17g,%.17g",
                step, lr_main, lr_sub, fea, grad, mse, context, cs_ir, cs_vis, cs, seg, total_sub,
                total_main);
  return buf;
}

LossBreakdown& LossBreakdown::operator+=(const LossBreakdown& o) {
  fea += o.fea;
  grad += o.grad;
  mse += o.mse;
  context += o.context;
  cs_ir += o.cs_ir;
  cs_vis += o.cs_vis;
  cs += o.cs;
  seg += o.seg;
  total_sub += o.total_sub;
  total_main += o.total_main;
  return *this;
}

LossBreakdown LossBreakdown::scaled(double s) const {
  LossBreakdown r = *this;
  for (double* v : {&r.fea, &r.grad, &r.mse, &r.context, &r.cs_ir, &r.cs_vis, &r.cs, &r.seg,
                    &r.total_sub, &r.total_main}) {
    *v *= s;
  }
  return r;
}

Tensor loss_fea(const std::vector<Tensor>& dens, const std::vector<Tensor>& spas) {
  if (dens.size() != spas.size() || dens.empty()) {
    throw ContractError("loss_fea: " + std::to_string(dens.size()) + " dense vs " +
                        std::to_string(spas.size()) + " attention feature maps");
  }
  Tensor total;
  for (std::size_t m = 0; m < dens.size(); ++m) {
    if (dens[m].shape() != spas[m].shape()) {
      throw ContractError("loss_fea: scale " + std::to_string(m) + " shapes differ: " +
                          shape_str(dens[m].shape()) + " vs " + shape_str(spas[m].shape()));
    }
    const Tensor term = ops::add_scalar(ops::scale(ops::cosine_similarity(dens[m], spas[m], kEps), -1.0), 1.0);
    total = total.defined() ? ops::add(total, term) : term;
  }
  return total;
}

ContextTerms loss_context(const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape()) {
    throw ContractError("loss_context: shapes differ: " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
  }
  ContextTerms t;
  t.grad = ops::mean(ops::abs(ops::sub(ops::sobel(a), ops::sobel(b))));
  t.mse = ops::mean(ops::square(ops::sub(a, b)));
  return t;
}

namespace {

Tensor rms(const Tensor& x) { return ops::sqrt(ops::mean(ops::square(x))); }

Tensor cs_modality(const Tensor& fused, const Tensor& ref, const Tensor& src, const Image& mask_img,
                   const prior::FrozenEncoder& encoder) {
  const Tensor mask = mask_img.to_tensor();
  const auto e_fus = encoder.encode(ops::mul(fused, mask));
  const auto e_ref = encoder.encode(ops::mul(ref, mask));
  const auto e_src = encoder.encode(ops::mul(src, mask));
  Tensor total;
  for (std::size_t l = 0; l < e_fus.size(); ++l) {
    const Tensor num = rms(ops::sub(e_fus[l], e_ref[l]));
    for (const auto* anchor : {&e_ref[l], &e_fus[l]}) {
      const Tensor den = ops::add_scalar(rms(ops::sub(*anchor, e_src[l])), kEps);
      const Tensor term = ops::div(num, den);
      total = total.defined() ? ops::add(total, term) : term;
    }
  }
  return total;
}

bool has_support(const Image& mask) {
  for (double v : mask.data) {
    if (v != 0.0) return true;
  }
  return false;
}

}  // namespace

CsTerms loss_cs(const Tensor& fused, const Tensor& ref, const Tensor& vis, const Tensor& ir,
                const prior::MaskSet& masks_vis, const prior::MaskSet& masks_ir,
                const prior::FrozenEncoder& encoder) {
  for (const Tensor* t : {&ref, &vis, &ir}) {
    if (t->shape() != fused.shape()) {
      throw ContractError("loss_cs: image shapes differ: " + shape_str(fused.shape()) + " vs " +
                          shape_str(t->shape()));
    }
  }
  if (masks_vis.size() == 0 || masks_ir.size() == 0) throw ContractError("loss_cs: empty mask set");
  for (const auto* ms : {&masks_vis, &masks_ir}) {
    if (ms->height != fused.dim(1) || ms->width != fused.dim(2)) {
      throw ContractError("loss_cs: masks do not match image size " + shape_str(fused.shape()));
    }
  }
  CsTerms out;
  const Image union_ir = masks_ir.union_mask();
  const Image union_vis = masks_vis.union_mask();
  out.ir_empty = !has_support(union_ir);
  out.vis_empty = !has_support(union_vis);
  out.ir = out.ir_empty ? Tensor::scalar(0.0) : cs_modality(fused, ref, ir, union_ir, encoder);
  out.vis = out.vis_empty ? Tensor::scalar(0.0) : cs_modality(fused, ref, vis, union_vis, encoder);
  return out;
}

Tensor loss_seg(const Tensor& probs, const prior::LabelMap& labels) {
  if (probs.rank() != 3 || probs.dim(1) != labels.height || probs.dim(2) != labels.width) {
    throw ContractError("loss_seg: probabilities " + shape_str(probs.shape()) + " vs labels " +
                        std::to_string(labels.height) + "x" + std::to_string(labels.width));
  }
  return ops::nll_of_probs(probs, labels.labels, kProbFloor);
}

double total_sub(double fea, double context, double cs) { return fea + context + cs; }
double total_main(double sub, double seg) { return sub + seg; }

LossBreakdown DistillTerms::values() const {
  auto v = [](const Tensor& t) { return t.defined() ? t.item() : 0.0; };
  LossBreakdown b;
  b.fea = v(fea);
  b.grad = v(grad);
  b.mse = v(mse);
  b.context = b.grad + b.mse;
  b.cs_ir = v(cs_ir);
  b.cs_vis = v(cs_vis);
  b.cs = b.cs_ir + b.cs_vis;
  b.seg = v(seg);
  b.total_sub = loss::total_sub(b.fea, b.context, b.cs);
  b.total_main = loss::total_main(b.total_sub, b.seg);
  return b;
}

namespace {

Tensor accumulate(const Tensor& acc, const Tensor& t) { return acc.defined() ? ops::add(acc, t) : t; }

// Runs `build`, re-throwing numerical faults with the term's name attached.
template <typename F>
auto named_term(const char* name, F&& build) {
  try {
    return build();
  } catch (const NumericalError& e) {
    throw NumericalError(std::string("loss term '") + name + "': " + e.what());
  }
}

}  // namespace

DistillTerms distillation_losses(const DistillInputs& in, const TermSwitches& switches,
                                 const prior::FrozenEncoder& encoder,
                                 const prior::SegmentationHead* seg_head) {
  DistillTerms t;
  if (switches.fea) {
    t.fea = named_term("fea", [&] { return loss_fea(in.dense_feats, in.spa_feats); });
  }
  if (switches.context) {
    named_term("context", [&] {
      const std::pair<const Tensor*, const Tensor*> pairs[] = {
          {&in.ref, &in.fused}, {&in.fused, &in.vis}, {&in.fused, &in.ir}, {&in.ref, &in.vis}, {&in.ref, &in.ir}};
      for (const auto& [a, b] : pairs) {
        const ContextTerms c = loss_context(*a, *b);
        t.grad = accumulate(t.grad, c.grad);
        t.mse = accumulate(t.mse, c.mse);
      }
      return 0;
    });
  }
  if (switches.cs) {
    if (!in.masks_vis || !in.masks_ir) throw ContractError("distillation_losses: masks required for cs term");
    const CsTerms cs = named_term("cs", [&] {
      return loss_cs(in.fused, in.ref, in.vis, in.ir, *in.masks_vis, *in.masks_ir, encoder);
    });
    t.cs_ir = cs.ir;
    t.cs_vis = cs.vis;
  }
  if (seg_head) {
    if (!in.labels) throw ContractError("distillation_losses: labels required for seg term");
    t.seg = named_term("seg", [&] { return loss_seg(seg_head->predict(in.ref), *in.labels); });
  }

  Tensor sub;
  for (const Tensor* part : {&t.fea, &t.grad, &t.mse, &t.cs_ir, &t.cs_vis}) {
    if (part->defined()) sub = accumulate(sub, *part);
  }
  if (!sub.defined()) sub = Tensor::scalar(0.0);
  t.total_sub = sub;
  t.total_main = t.seg.defined() ? ops::add(sub, t.seg) : sub;
  return t;
}

Tensor source_fidelity(const Tensor& out, const Tensor& vis, const Tensor& ir) {
  const ContextTerms a = loss_context(out, vis);
  const ContextTerms b = loss_context(out, ir);
  return ops::add(ops::add(a.grad, a.mse), ops::add(b.grad, b.mse));
}

}  // namespace semfuse::loss
