#include <doctest.h>

#include <cmath>
#include <limits>
#include <numbers>
#include <sstream>
#include <string>

#include "semfuse/errors.hpp"
#include "semfuse/pipeline.hpp"
#include "semfuse/synthetic.hpp"
#include "semfuse/trainer.hpp"

using namespace semfuse;
using namespace semfuse::train;

namespace {

std::vector<Sample> small_set(std::size_t count = 2, std::size_t size = 16) {
  return prepare_samples(make_synthetic_pairs(count, size, size, 7), PriorConfig{});
}

nets::ParameterList scalar_param(double value) {
  return {{"w", Tensor::from({1}, {value}, true)}};
}

void set_grad(const nets::ParameterList& params, double g) {
  for (const auto& [name, t] : params) {
    auto& buf = t.node_ptr()->grad_buffer();
    for (auto& v : buf) v = g;
  }
}

struct Rig {
  prior::FrozenEncoder encoder;
  prior::SegmentationHead seg_head;
  nets::MainNet main{nets::MainNetConfig{}, 3};
  nets::SubNet sub{nets::SubNetConfig{}, 4};
};

TrainConfig quick_config(std::size_t steps) {
  TrainConfig c;
  c.batch = 2;
  c.steps = steps;
  c.seed = 19;
  return c;
}

}  // namespace

TEST_CASE("cosine schedule") {
  CHECK(cosine_lr(0, 100, 1e-3, 1e-5) == doctest::Approx(1e-3).epsilon(1e-15));
  CHECK(cosine_lr(50, 100, 1e-3, 1e-5) == doctest::Approx(0.5 * (1e-3 + 1e-5)).epsilon(1e-12));
  CHECK(cosine_lr(100, 100, 1e-3, 1e-5) == 1e-5);
  CHECK(cosine_lr(250, 100, 1e-3, 1e-5) == 1e-5);
  const double oracle = 1e-5 + 0.5 * (1e-3 - 1e-5) * (1.0 + std::cos(std::numbers::pi * 0.25));
  CHECK(cosine_lr(25, 100, 1e-3, 1e-5) == doctest::Approx(oracle).epsilon(1e-14));
  double prev = cosine_lr(0, 37, 2e-3, 1e-5);
  for (std::size_t s = 1; s <= 40; ++s) {
    const double lr = cosine_lr(s, 37, 2e-3, 1e-5);
    CHECK(lr <= prev);
    CHECK(lr >= 1e-5);
    prev = lr;
  }
}

TEST_CASE("config validation") {
  TrainConfig c;
  CHECK_NOTHROW(c.validate());
  c.lr_main = 0.0;
  CHECK_THROWS_AS(c.validate(), ContractError);
  c = TrainConfig{};
  c.lr_floor = 1.0;
  CHECK_THROWS_AS(c.validate(), ContractError);
  c = TrainConfig{};
  c.batch = 0;
  CHECK_THROWS_AS(c.validate(), ContractError);
}

TEST_CASE("adam single step moves by the learning rate") {
  const auto p = scalar_param(1.0);
  Adam opt(p);
  set_grad(p, 1.0);
  opt.step(p, 0.1);
  CHECK(p[0].second.item() == doctest::Approx(0.9).epsilon(1e-7));
  CHECK(opt.steps() == 1);
  CHECK(opt.first_moments()[0][0] == doctest::Approx(0.1));
  CHECK(opt.second_moments()[0][0] == doctest::Approx(0.001));
}

TEST_CASE("adam zero gradient decays moments without moving") {
  const auto p = scalar_param(1.0);
  Adam opt(p);
  set_grad(p, 0.0);
  opt.step(p, 0.1);
  CHECK(p[0].second.item() == 1.0);

  set_grad(p, 2.0);
  opt.step(p, 0.1);
  const double m = opt.first_moments()[0][0];
  const double v = opt.second_moments()[0][0];
  const double before = p[0].second.item();
  set_grad(p, 0.0);
  opt.step(p, 0.1);
  CHECK(opt.first_moments()[0][0] == doctest::Approx(Adam::kBeta1 * m).epsilon(1e-14));
  CHECK(opt.second_moments()[0][0] == doctest::Approx(Adam::kBeta2 * v).epsilon(1e-14));
  // The decayed first moment still moves the parameter in the old direction.
  CHECK(p[0].second.item() < before);
}

TEST_CASE("adam constant gradient approaches lr per step") {
  const auto p = scalar_param(0.0);
  Adam opt(p);
  double prev = 0.0;
  for (int i = 0; i < 200; ++i) {
    set_grad(p, 0.5);
    opt.step(p, 0.01);
    const double delta = prev - p[0].second.item();
    CHECK(delta == doctest::Approx(0.01).epsilon(1e-6));
    prev = p[0].second.item();
  }
}

TEST_CASE("adam rejects non-finite gradients by name") {
  const auto p = scalar_param(1.0);
  Adam opt(p);
  set_grad(p, std::numeric_limits<double>::quiet_NaN());
  try {
    opt.step(p, 0.1);
    FAIL("expected NumericalError");
  } catch (const NumericalError& e) {
    CHECK(std::string(e.what()).find("w") != std::string::npos);
  }
  CHECK(p[0].second.item() == 1.0);
}

TEST_CASE("gradient clipping") {
  nets::ParameterList p = {{"a", Tensor::from({2}, {0.0, 0.0}, true)}};
  auto& g = p[0].second.node_ptr()->grad_buffer();
  g = {3.0, 4.0};
  CHECK(clip_grad_norm(p, 1.0) == doctest::Approx(5.0));
  CHECK(p[0].second.grad()[0] == doctest::Approx(0.6));
  CHECK(p[0].second.grad()[1] == doctest::Approx(0.8));
  CHECK(clip_grad_norm(p, 10.0) == doctest::Approx(1.0));
  CHECK(p[0].second.grad()[1] == doctest::Approx(0.8));
  zero_grads(p);
  CHECK_FALSE(p[0].second.has_grad());
}

TEST_CASE("schedule covers each sample once per epoch") {
  Rig rig;
  const auto data = small_set(3);
  TrainConfig c = quick_config(6);
  Trainer t(rig.main, rig.sub, c, rig.encoder, rig.seg_head);
  const auto batches = t.schedule(data, 6, 2);
  REQUIRE(batches.size() == 6);
  std::vector<std::size_t> seen(3, 0);
  std::size_t epoch0 = 0;
  for (const auto& b : batches) {
    if (b.epoch != 0) continue;
    ++epoch0;
    for (const Sample* s : b.items) ++seen[static_cast<std::size_t>(s - data.data())];
  }
  CHECK(epoch0 == 2);
  CHECK(seen == std::vector<std::size_t>{1, 1, 1});
  CHECK(t.batches_per_epoch(3) == 2);
}

TEST_CASE("each phase only updates its own network") {
  Rig rig;
  const auto data = small_set();
  Trainer t(rig.main, rig.sub, quick_config(1), rig.encoder, rig.seg_head);
  const auto batch = t.schedule(data, 1, 0).front();

  const auto sub_before = nets::parameter_checksum(rig.sub.parameters());
  const auto main_before = nets::parameter_checksum(rig.main.parameters());
  t.main_step(batch, 1e-3, false, nullptr);
  CHECK(nets::parameter_checksum(rig.sub.parameters()) == sub_before);
  const auto main_after = nets::parameter_checksum(rig.main.parameters());
  CHECK(main_after != main_before);

  t.sub_step(batch, 1e-3, nullptr);
  CHECK(nets::parameter_checksum(rig.main.parameters()) == main_after);
  CHECK(nets::parameter_checksum(rig.sub.parameters()) != sub_before);
}

TEST_CASE("short runs are deterministic") {
  const auto data = small_set();
  std::string csv[2];
  std::uint64_t sums[2][2];
  for (int k = 0; k < 2; ++k) {
    Rig rig;
    Trainer t(rig.main, rig.sub, quick_config(2), rig.encoder, rig.seg_head);
    const auto r = t.alternate_train(data);
    csv[k] = r.csv();
    sums[k][0] = r.main_checksum;
    sums[k][1] = r.sub_checksum;
    CHECK(r.rows.size() == 2);
  }
  CHECK(csv[0] == csv[1]);
  CHECK(sums[0][0] == sums[1][0]);
  CHECK(sums[0][1] == sums[1][1]);
}

TEST_CASE("progress lines and learning rates") {
  Rig rig;
  const auto data = small_set();
  Trainer t(rig.main, rig.sub, quick_config(3), rig.encoder, rig.seg_head);
  std::ostringstream progress;
  const auto r = t.alternate_train(data, &progress);
  REQUIRE(r.rows.size() == 3);
  CHECK(progress.str().rfind("step=1 Lds=", 0) == 0);
  for (std::size_t i = 1; i < r.rows.size(); ++i) {
    CHECK(r.rows[i].lr_main <= r.rows[i - 1].lr_main);
    CHECK(r.rows[i].lr_sub <= r.rows[i - 1].lr_sub);
    CHECK(r.rows[i].step == i + 1);
  }
  for (const auto& row : r.rows) {
    CHECK(std::isfinite(row.losses.total_sub));
    CHECK(row.losses.total_main == doctest::Approx(row.losses.total_sub + row.losses.seg).epsilon(1e-12));
  }
}

TEST_CASE("zero pretraining leaves both networks untouched") {
  Rig rig;
  const auto data = small_set();
  const auto m = nets::parameter_checksum(rig.main.parameters());
  const auto s = nets::parameter_checksum(rig.sub.parameters());
  Trainer t(rig.main, rig.sub, quick_config(1), rig.encoder, rig.seg_head);
  const auto r = t.pretrain(data, 0);
  CHECK(r.main_losses.empty());
  CHECK(nets::parameter_checksum(rig.main.parameters()) == m);
  CHECK(nets::parameter_checksum(rig.sub.parameters()) == s);
}

TEST_CASE("divergence guard halts on a growing epoch mean") {
  Rig rig;
  const auto data = small_set();
  TrainConfig c = quick_config(6);
  c.divergence_factor = 1e-6;
  Trainer t(rig.main, rig.sub, c, rig.encoder, rig.seg_head);
  const auto r = t.alternate_train(data);
  CHECK(r.halted);
  CHECK(r.epochs.size() == 2);
  CHECK(r.rows.size() == 2);
  CHECK(r.halt_reason.find("divergence") != std::string::npos);
}

TEST_CASE("offline mode freezes the teacher during the student phase") {
  Rig rig;
  const auto data = small_set();
  TrainConfig c = quick_config(2);
  c.ablation.offline = true;
  Trainer t(rig.main, rig.sub, c, rig.encoder, rig.seg_head);
  const auto r = t.alternate_train(data);
  CHECK(r.teacher_phase_losses.size() == 2);
  CHECK(r.main_checksum == nets::parameter_checksum(rig.main.parameters()));
  for (const auto& row : r.rows) CHECK(row.lr_main == 0.0);
}

TEST_CASE("non-finite student weights abort the step with a diagnostic") {
  Rig rig;
  const auto data = small_set();
  Trainer t(rig.main, rig.sub, quick_config(1), rig.encoder, rig.seg_head);
  auto params = rig.sub.parameters();
  params.front().second.mutable_data()[0] = std::numeric_limits<double>::quiet_NaN();
  const auto batch = t.schedule(data, 1, 0).front();
  try {
    t.sub_step(batch, 1e-3, nullptr);
    FAIL("expected NumericalError");
  } catch (const NumericalError& e) {
    CHECK(std::string(e.what()).find("student forward") != std::string::npos);
  }
}

TEST_CASE("pretraining cuts source fidelity loss by 30 percent within 100 steps") {
  const auto data = prepare_samples(make_synthetic_pairs(8, 32, 32, 7), PriorConfig{});
  prior::FrozenEncoder encoder;
  prior::SegmentationHead seg_head;
  nets::MainNet main(nets::MainNetConfig{}, 8);
  nets::SubNet sub(nets::SubNetConfig{}, 9);
  TrainConfig c;
  c.seed = 7;
  Trainer t(main, sub, c, encoder, seg_head);
  const auto r = t.pretrain(data, 100);
  REQUIRE(r.main_losses.size() == 100);
  CHECK(r.main_losses.back() <= 0.7 * r.main_losses.front());
  CHECK(r.sub_losses.back() <= 0.7 * r.sub_losses.front());
}
