#pragma once

#include <cstdint>
#include <iosfwd>
#include <string>
#include <vector>

#include "semfuse/losses.hpp"
#include "semfuse/networks.hpp"
#include "semfuse/pipeline.hpp"
#include "semfuse/prior.hpp"

namespace semfuse::train {

// Ablation switches; each one removes a single component.
struct Ablation {
  bool no_sam = false;   // random boxes instead of region masks
  bool no_z = false;     // repository without the latent
  bool no_kv = false;    // repository without key/value projections
  bool no_pr = false;    // no repository, self-attention over patches
  bool no_fea = false;
  bool no_cont = false;
  bool no_cs = false;
  bool offline = false;  // train the teacher to completion, then the student

  spa::RepositoryMode repository_mode() const;
  loss::TermSwitches switches() const { return {!no_fea, !no_cont, !no_cs}; }
};

struct TrainConfig {
  double lr_main = 5e-4;
  double lr_sub = 2e-3;
  double lr_floor = 1e-5;
  std::size_t batch = 4;
  std::size_t distill_epochs = 5;
  std::size_t pretrain_epochs = 0;
  std::size_t steps = 0;  // overrides distill_epochs when positive
  std::uint64_t seed = 7;
  std::size_t crop = 32;
  double clip_norm = 10.0;
  double divergence_factor = 10.0;
  Ablation ablation;

  // Throws ContractError when a learning rate is non-positive or the floor
  // exceeds either initial rate.
  void validate() const;
};

double cosine_lr(std::size_t step, std::size_t total_steps, double lr0, double lr_floor);

// Bias-corrected adaptive-moment optimizer over one parameter list.
class Adam {
 public:
  static constexpr double kBeta1 = 0.9;
  static constexpr double kBeta2 = 0.999;
  static constexpr double kEps = 1e-8;

  explicit Adam(const nets::ParameterList& params);

  // Applies one update from the parameters' current grads. Throws
  // NumericalError naming the parameter if a gradient is not finite.
  void step(const nets::ParameterList& params, double lr);

  std::size_t steps() const { return t_; }
  const std::vector<std::vector<double>>& first_moments() const { return m_; }
  const std::vector<std::vector<double>>& second_moments() const { return v_; }

 private:
  std::size_t t_ = 0;
  std::vector<std::vector<double>> m_, v_;
};

// Scales grads so their global L2 norm is at most `max_norm`; returns the
// norm before clipping.
double clip_grad_norm(const nets::ParameterList& params, double max_norm);
void zero_grads(const nets::ParameterList& params);

struct StepRecord {
  std::size_t step = 0;
  std::size_t epoch = 0;
  double lr_main = 0, lr_sub = 0;
  loss::LossBreakdown losses;
  double abs_diff = 0;  // mean |I_f - I_ref| over the batch
};

struct EpochSummary {
  std::size_t epoch = 0;
  double mean_total_sub = 0;
  double mean_abs_diff = 0;
};

struct TrainReport {
  std::vector<StepRecord> rows;
  std::vector<EpochSummary> epochs;
  std::vector<double> teacher_phase_losses;  // offline mode only
  std::uint64_t main_checksum = 0;
  std::uint64_t sub_checksum = 0;
  bool halted = false;
  std::string halt_reason;

  std::string csv() const;
};

struct PretrainReport {
  std::vector<double> main_losses;  // per step, source fidelity
  std::vector<double> sub_losses;
};

class Trainer {
 public:
  Trainer(nets::MainNet& main, nets::SubNet& sub, TrainConfig config,
          const prior::FrozenEncoder& encoder, const prior::SegmentationHead& seg_head);

  std::size_t batches_per_epoch(std::size_t samples) const;
  std::size_t distill_steps(std::size_t samples) const;

  // Fits each net on its own to both sources for `steps` updates.
  PretrainReport pretrain(const std::vector<Sample>& data, std::size_t steps);

  // Alternating teacher/student updates (or the offline variant). Writes one
  // progress line per step to `progress` when given.
  TrainReport alternate_train(const std::vector<Sample>& data, std::ostream* progress = nullptr);

  struct Batch {
    std::vector<const Sample*> items;
    std::size_t epoch = 0;
  };
  // Seeded per-epoch shuffles cut into batches, `steps` batches in total.
  std::vector<Batch> schedule(const std::vector<Sample>& data, std::size_t steps, std::uint64_t salt) const;

  // Teacher update on L_m (or its offline substitute) with the student frozen;
  // returns the logged breakdown.
  loss::LossBreakdown main_step(const Batch& b, double lr, bool offline_teacher, double* abs_diff);
  // Student update on L_s with the teacher frozen.
  loss::LossBreakdown sub_step(const Batch& b, double lr, double* abs_diff);

 private:
  void finite_or_diagnose(const nets::ParameterList& params, const Batch& b, bool teacher);

  nets::MainNet& main_;
  nets::SubNet& sub_;
  TrainConfig config_;
  const prior::FrozenEncoder& encoder_;
  const prior::SegmentationHead& seg_head_;
  nets::ParameterList main_params_, sub_params_;
  Adam main_opt_, sub_opt_;
};

}  // namespace semfuse::train
