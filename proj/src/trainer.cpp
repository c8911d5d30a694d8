#include "semfuse/trainer.hpp"

#include <cmath>
#include <cstdio>
#include <numbers>
#include <ostream>
#include <sstream>

#include "semfuse/errors.hpp"
#include "semfuse/ops.hpp"
#include "semfuse/rng.hpp"

namespace semfuse::train {

spa::RepositoryMode Ablation::repository_mode() const {
  if (no_pr) return spa::RepositoryMode::None;
  if (no_kv) return spa::RepositoryMode::NoKeyValue;
  if (no_z) return spa::RepositoryMode::NoLatent;
  return spa::RepositoryMode::Full;
}

void TrainConfig::validate() const {
  if (!(lr_main > 0.0) || !(lr_sub > 0.0) || !(lr_floor > 0.0)) {
    throw ContractError("learning rates must be positive");
  }
  if (lr_floor > std::min(lr_main, lr_sub)) {
    throw ContractError("lr_floor exceeds an initial learning rate");
  }
  if (batch == 0) throw ContractError("batch size must be positive");
}

double cosine_lr(std::size_t step, std::size_t total_steps, double lr0, double lr_floor) {
  if (total_steps == 0 || step >= total_steps) return step == 0 && total_steps == 0 ? lr0 : lr_floor;
  const double t = static_cast<double>(step) / static_cast<double>(total_steps);
  return lr_floor + 0.5 * (lr0 - lr_floor) * (1.0 + std::cos(std::numbers::pi * t));
}

Adam::Adam(const nets::ParameterList& params) {
  for (const auto& [name, t] : params) {
    m_.emplace_back(t.numel(), 0.0);
    v_.emplace_back(t.numel(), 0.0);
  }
}

void Adam::step(const nets::ParameterList& params, double lr) {
  if (params.size() != m_.size()) throw ContractError("optimizer state does not match parameter list");
  if (!(lr > 0.0)) throw ContractError("learning rate must be positive");
  for (std::size_t i = 0; i < params.size(); ++i) {
    const Tensor& p = params[i].second;
    if (p.numel() != m_[i].size()) throw DimensionError("moment buffer shape mismatch for " + params[i].first);
    if (!p.has_grad()) continue;
    for (double g : p.grad()) {
      if (!std::isfinite(g)) throw NumericalError("non-finite gradient in parameter " + params[i].first);
    }
  }
  ++t_;
  const double bc1 = 1.0 - std::pow(kBeta1, static_cast<double>(t_));
  const double bc2 = 1.0 - std::pow(kBeta2, static_cast<double>(t_));
  for (std::size_t i = 0; i < params.size(); ++i) {
    Tensor p = params[i].second;
    auto data = p.mutable_data();
    const bool has = p.has_grad();
    auto grad = p.grad();
    for (std::size_t k = 0; k < data.size(); ++k) {
      const double g = has ? grad[k] : 0.0;
      m_[i][k] = kBeta1 * m_[i][k] + (1.0 - kBeta1) * g;
      v_[i][k] = kBeta2 * v_[i][k] + (1.0 - kBeta2) * g * g;
      const double mhat = m_[i][k] / bc1;
      const double vhat = v_[i][k] / bc2;
      data[k] -= lr * mhat / (std::sqrt(vhat) + kEps);
    }
  }
}

double clip_grad_norm(const nets::ParameterList& params, double max_norm) {
  double sq = 0.0;
  for (const auto& [name, t] : params) {
    for (double g : t.grad()) sq += g * g;
  }
  const double norm = std::sqrt(sq);
  if (norm > max_norm && norm > 0.0) {
    const double s = max_norm / norm;
    for (const auto& [name, t] : params) {
      if (!t.has_grad()) continue;
      auto& g = t.node_ptr()->grad;
      for (auto& v : g) v *= s;
    }
  }
  return norm;
}

void zero_grads(const nets::ParameterList& params) {
  for (const auto& [name, t] : params) {
    Tensor h = t;
    h.zero_grad();
  }
}

std::string TrainReport::csv() const {
  std::ostringstream os;
  os << loss::LossBreakdown::csv_header() << '\n';
  for (const auto& r : rows) os << r.losses.csv_row(r.step, r.lr_main, r.lr_sub) << '\n';
  return os.str();
}

Trainer::Trainer(nets::MainNet& main, nets::SubNet& sub, TrainConfig config,
                 const prior::FrozenEncoder& encoder, const prior::SegmentationHead& seg_head)
    : main_(main),
      sub_(sub),
      config_(config),
      encoder_(encoder),
      seg_head_(seg_head),
      main_params_(main.parameters()),
      sub_params_(sub.parameters()),
      main_opt_(main_params_),
      sub_opt_(sub_params_) {
  config_.validate();
}

std::size_t Trainer::batches_per_epoch(std::size_t samples) const {
  return (samples + config_.batch - 1) / config_.batch;
}

std::size_t Trainer::distill_steps(std::size_t samples) const {
  return config_.steps > 0 ? config_.steps : config_.distill_epochs * batches_per_epoch(samples);
}

std::vector<Trainer::Batch> Trainer::schedule(const std::vector<Sample>& data, std::size_t steps,
                                              std::uint64_t salt) const {
  if (data.empty()) throw ContractError("training set is empty");
  Rng rng(config_.seed * 0x9e3779b97f4a7c15ull + salt);
  std::vector<Batch> out;
  std::vector<std::size_t> order(data.size());
  for (std::size_t epoch = 0; out.size() < steps; ++epoch) {
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    for (std::size_t i = order.size(); i > 1; --i) std::swap(order[i - 1], order[rng.index(i)]);
    for (std::size_t start = 0; start < order.size() && out.size() < steps; start += config_.batch) {
      Batch b{{}, epoch};
      for (std::size_t k = start; k < std::min(order.size(), start + config_.batch); ++k) b.items.push_back(&data[order[k]]);
      out.push_back(std::move(b));
    }
  }
  return out;
}

namespace {

double mean_abs_diff(const Tensor& a, const Tensor& b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.numel(); ++i) s += std::fabs(a.at(i) - b.at(i));
  return s / static_cast<double>(a.numel());
}

loss::DistillInputs inputs_for(const Sample& s, const nets::NetOutput& main_out, const nets::NetOutput& sub_out) {
  loss::DistillInputs in;
  in.vis = s.vis;
  in.ir = s.ir;
  in.ref = main_out.image;
  in.fused = sub_out.image;
  in.spa_feats = main_out.feats;
  in.dense_feats = sub_out.feats;
  in.masks_vis = &s.masks_vis;
  in.masks_ir = &s.masks_ir;
  in.labels = &s.labels;
  return in;
}

template <class F>
auto labelled(const char* what, F&& f) {
  try {
    return f();
  } catch (const NumericalError& e) {
    throw NumericalError(std::string(what) + ": " + e.what());
  }
}

bool grads_finite(const nets::ParameterList& params, std::string* bad) {
  for (const auto& [name, t] : params) {
    for (double g : t.grad()) {
      if (!std::isfinite(g)) {
        if (bad) *bad = name;
        return false;
      }
    }
  }
  return true;
}

}  // namespace

void Trainer::finite_or_diagnose(const nets::ParameterList& params, const Batch& b, bool teacher) {
  std::string bad_param;
  if (grads_finite(params, &bad_param)) return;
  // Re-run each term on its own to name the one producing the fault.
  const Sample& s = *b.items.front();
  const char* names[] = {"fea", "context", "cs", "seg"};
  for (const char* term : names) {
    zero_grads(params);
    loss::TermSwitches sw{std::string(term) == "fea", std::string(term) == "context", std::string(term) == "cs"};
    const bool seg = std::string(term) == "seg";
    if (seg && !teacher) continue;
    nets::NetOutput mo, so;
    if (teacher) {
      {
        NoGradGuard g;
        so = sub_.forward(s.vis, s.ir);
      }
      mo = main_.forward(s.vis, s.ir, s.patches_vis, s.patches_ir);
    } else {
      {
        NoGradGuard g;
        mo = main_.forward(s.vis, s.ir, s.patches_vis, s.patches_ir);
      }
      so = sub_.forward(s.vis, s.ir);
    }
    const auto terms = loss::distillation_losses(inputs_for(s, mo, so), sw, encoder_, seg ? &seg_head_ : nullptr);
    (seg ? terms.seg : terms.total_sub).backward();
    std::string p;
    if (!grads_finite(params, &p)) {
      throw NumericalError(std::string("non-finite gradient from loss term '") + term + "' in parameter " + p);
    }
  }
  throw NumericalError("non-finite gradient in parameter " + bad_param);
}

loss::LossBreakdown Trainer::main_step(const Batch& b, double lr, bool offline_teacher, double* abs_diff) {
  zero_grads(main_params_);
  const double w = 1.0 / static_cast<double>(b.items.size());
  loss::LossBreakdown acc;
  double diff = 0.0;
  for (const Sample* s : b.items) {
    nets::NetOutput so;
    if (!offline_teacher) {
      NoGradGuard g;
      so = sub_.forward(s->vis, s->ir);
    }
    const nets::NetOutput mo =
        labelled("teacher forward", [&] { return main_.forward(s->vis, s->ir, s->patches_vis, s->patches_ir); });
    if (offline_teacher) {
      const Tensor seg = loss::loss_seg(seg_head_.predict(mo.image), s->labels);
      const Tensor total = ops::add(loss::source_fidelity(mo.image, s->vis, s->ir), seg);
      ops::scale(total, w).backward();
      loss::LossBreakdown bd;
      bd.seg = seg.item();
      bd.total_main = total.item();
      acc += bd.scaled(w);
    } else {
      const auto terms = loss::distillation_losses(inputs_for(*s, mo, so), config_.ablation.switches(), encoder_, &seg_head_);
      ops::scale(terms.total_main, w).backward();
      acc += terms.values().scaled(w);
      diff += w * mean_abs_diff(so.image, mo.image);
    }
  }
  finite_or_diagnose(main_params_, b, true);
  clip_grad_norm(main_params_, config_.clip_norm);
  main_opt_.step(main_params_, lr);
  if (abs_diff) *abs_diff = diff;
  return acc;
}

loss::LossBreakdown Trainer::sub_step(const Batch& b, double lr, double* abs_diff) {
  zero_grads(sub_params_);
  const double w = 1.0 / static_cast<double>(b.items.size());
  loss::LossBreakdown acc;
  double diff = 0.0;
  for (const Sample* s : b.items) {
    nets::NetOutput mo;
    {
      NoGradGuard g;
      mo = main_.forward(s->vis, s->ir, s->patches_vis, s->patches_ir);
    }
    const nets::NetOutput so = labelled("student forward", [&] { return sub_.forward(s->vis, s->ir); });
    // The segmentation term only depends on the frozen teacher output here; it
    // is evaluated for logging and never enters the student objective.
    const auto terms = loss::distillation_losses(inputs_for(*s, mo, so), config_.ablation.switches(), encoder_,
                                                 config_.ablation.offline ? &seg_head_ : nullptr);
    ops::scale(terms.total_sub, w).backward();
    acc += terms.values().scaled(w);
    diff += w * mean_abs_diff(so.image, mo.image);
  }
  finite_or_diagnose(sub_params_, b, false);
  clip_grad_norm(sub_params_, config_.clip_norm);
  sub_opt_.step(sub_params_, lr);
  if (abs_diff) *abs_diff = diff;
  return acc;
}

PretrainReport Trainer::pretrain(const std::vector<Sample>& data, std::size_t steps) {
  PretrainReport report;
  if (steps == 0) return report;
  const auto batches = schedule(data, steps, 3);
  Adam main_opt(main_params_), sub_opt(sub_params_);
  for (std::size_t i = 0; i < batches.size(); ++i) {
    const Batch& b = batches[i];
    const double w = 1.0 / static_cast<double>(b.items.size());
    zero_grads(main_params_);
    zero_grads(sub_params_);
    double lm = 0.0, ls = 0.0;
    for (const Sample* s : b.items) {
      const Tensor main_loss = loss::source_fidelity(
          main_.forward(s->vis, s->ir, s->patches_vis, s->patches_ir).image, s->vis, s->ir);
      ops::scale(main_loss, w).backward();
      const Tensor sub_loss = loss::source_fidelity(sub_.forward(s->vis, s->ir).image, s->vis, s->ir);
      ops::scale(sub_loss, w).backward();
      lm += w * main_loss.item();
      ls += w * sub_loss.item();
    }
    clip_grad_norm(main_params_, config_.clip_norm);
    clip_grad_norm(sub_params_, config_.clip_norm);
    main_opt.step(main_params_, cosine_lr(i, steps, config_.lr_main, config_.lr_floor));
    sub_opt.step(sub_params_, cosine_lr(i, steps, config_.lr_sub, config_.lr_floor));
    report.main_losses.push_back(lm);
    report.sub_losses.push_back(ls);
  }
  return report;
}

TrainReport Trainer::alternate_train(const std::vector<Sample>& data, std::ostream* progress) {
  TrainReport report;
  const std::size_t total = distill_steps(data.size());
  const bool offline = config_.ablation.offline;

  if (offline) {
    const auto teacher_batches = schedule(data, total, 1);
    for (std::size_t i = 0; i < teacher_batches.size(); ++i) {
      const auto bd = main_step(teacher_batches[i], cosine_lr(i, total, config_.lr_main, config_.lr_floor), true, nullptr);
      report.teacher_phase_losses.push_back(bd.total_main);
    }
  }

  const auto batches = schedule(data, total, 2);
  double prev_epoch_mean = -1.0;
  double epoch_sum = 0.0, epoch_diff = 0.0;
  std::size_t epoch_rows = 0;
  for (std::size_t i = 0; i < batches.size(); ++i) {
    const Batch& b = batches[i];
    StepRecord row;
    row.step = i + 1;
    row.epoch = b.epoch;
    row.lr_sub = cosine_lr(i, total, config_.lr_sub, config_.lr_floor);
    if (offline) {
      row.lr_main = 0.0;
      row.losses = sub_step(b, row.lr_sub, &row.abs_diff);
    } else {
      row.lr_main = cosine_lr(i, total, config_.lr_main, config_.lr_floor);
      row.losses = main_step(b, row.lr_main, false, &row.abs_diff);
      sub_step(b, row.lr_sub, nullptr);
    }
    report.rows.push_back(row);
    if (progress) {
      char line[256];
      std::snprintf(line, sizeof line, "step=%zu Lds=%.6g Ldm=%.6g lr_m=%.6g lr_s=%.6g\n", row.step,
                    row.losses.total_sub, row.losses.total_main, row.lr_main, row.lr_sub);
      *progress << line << std::flush;
    }

    epoch_sum += row.losses.total_sub;
    epoch_diff += row.abs_diff;
    ++epoch_rows;
    const bool epoch_end = i + 1 == batches.size() || batches[i + 1].epoch != b.epoch;
    if (epoch_end) {
      EpochSummary es{b.epoch, epoch_sum / static_cast<double>(epoch_rows), epoch_diff / static_cast<double>(epoch_rows)};
      report.epochs.push_back(es);
      if (prev_epoch_mean > 0.0 && es.mean_total_sub > config_.divergence_factor * prev_epoch_mean) {
        report.halted = true;
        report.halt_reason = "divergence: epoch " + std::to_string(es.epoch) + " mean L_s grew more than " +
                             std::to_string(config_.divergence_factor) + "x";
        break;
      }
      prev_epoch_mean = es.mean_total_sub;
      epoch_sum = epoch_diff = 0.0;
      epoch_rows = 0;
    }
  }
  report.main_checksum = nets::parameter_checksum(main_params_);
  report.sub_checksum = nets::parameter_checksum(sub_params_);
  return report;
}

}  // namespace semfuse::train
