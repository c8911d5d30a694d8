#include "semfuse/suite.hpp"

#include <algorithm>
#include <chrono>
#include <cstdio>
#include <functional>
#include <sstream>

#include "semfuse/errors.hpp"
#include "semfuse/losses.hpp"
#include "semfuse/networks.hpp"
#include "semfuse/ops.hpp"
#include "semfuse/pipeline.hpp"
#include "semfuse/rng.hpp"
#include "semfuse/spa.hpp"

namespace semfuse::suite {

namespace {

Tensor random_tensor(Shape shape, Rng& rng, double lo, double hi) {
  std::vector<double> v(shape_numel(shape));
  for (auto& x : v) x = rng.uniform(lo, hi);
  return Tensor::from(std::move(shape), std::move(v), true);
}

// Square whose backward rule is off by half: d/dx x^2 reported as 3x.
Tensor faulty_square(const Tensor& x) {
  std::vector<double> out(x.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = x.at(i) * x.at(i);
  auto parent = x.node_ptr();
  return Tensor::make_result("faulty_square", x.shape(), std::move(out), {x}, [parent](const detail::Node& self) {
    auto& g = parent->grad_buffer();
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += 3.0 * parent->data[i] * self.grad[i];
  });
}

struct Fixture {
  Sample sample;
  prior::FrozenEncoder encoder;
  prior::SegmentationHead seg_head;
  nets::MainNet main;
  nets::SubNet sub;

  explicit Fixture(const SuiteOptions& o)
      : sample(prepare_sample(make_synthetic_pairs(1, o.size, o.size, o.seed).front(), PriorConfig{})),
        main(nets::MainNetConfig{}, o.seed + 1),
        sub(nets::SubNetConfig{}, o.seed + 2) {}

  loss::DistillInputs inputs(const nets::NetOutput& mo, const nets::NetOutput& so) const {
    loss::DistillInputs in;
    in.vis = sample.vis;
    in.ir = sample.ir;
    in.ref = mo.image;
    in.fused = so.image;
    in.spa_feats = mo.feats;
    in.dense_feats = so.feats;
    in.masks_vis = &sample.masks_vis;
    in.masks_ir = &sample.masks_ir;
    in.labels = &sample.labels;
    return in;
  }
};

using Check = std::pair<std::vector<NamedTensor>, std::function<Tensor()>>;

Check build_check(const std::string& term, Fixture& fx, Rng& rng) {
  const std::size_t n = fx.sample.vis.dim(1);
  if (term == "fea") {
    std::vector<Tensor> dens, spas;
    std::vector<NamedTensor> in;
    for (std::size_t s = 0; s < 3; ++s) {
      dens.push_back(random_tensor({8, 4, 4}, rng, -1.0, 1.0));
      spas.push_back(random_tensor({8, 4, 4}, rng, -1.0, 1.0));
      in.emplace_back("dense." + std::to_string(s), dens.back());
      in.emplace_back("spa." + std::to_string(s), spas.back());
    }
    return {in, [dens, spas] { return loss::loss_fea(dens, spas); }};
  }
  if (term == "context") {
    Tensor a = random_tensor({1, n, n}, rng, 0.1, 0.9), b = random_tensor({1, n, n}, rng, 0.1, 0.9);
    return {{{"ref", a}, {"fused", b}}, [a, b] {
              const auto c = loss::loss_context(a, b);
              return ops::add(c.grad, c.mse);
            }};
  }
  if (term == "cs") {
    Tensor ref = random_tensor({1, n, n}, rng, 0.1, 0.9), fused = random_tensor({1, n, n}, rng, 0.1, 0.9);
    const Fixture* f = &fx;
    return {{{"ref", ref}, {"fused", fused}}, [f, ref, fused] {
              const auto c = loss::loss_cs(fused, ref, f->sample.vis, f->sample.ir, f->sample.masks_vis,
                                           f->sample.masks_ir, f->encoder);
              return ops::add(c.ir, c.vis);
            }};
  }
  if (term == "seg") {
    Tensor ref = random_tensor({1, n, n}, rng, 0.1, 0.9);
    const Fixture* f = &fx;
    return {{{"ref", ref}}, [f, ref] { return loss::loss_seg(f->seg_head.predict(ref), f->sample.labels); }};
  }
  if (term == "attention") {
    const spa::SpaConfig cfg;
    const std::size_t d = cfg.dim();
    Tensor f_src = random_tensor({d, 2, 2}, rng, -1.0, 1.0);
    Tensor pv = random_tensor({d, 2, 2}, rng, -1.0, 1.0), pi = random_tensor({d, 2, 2}, rng, -1.0, 1.0);
    const double b = 1.0 / std::sqrt(static_cast<double>(d));
    spa::RepositoryParams rp{random_tensor({d, d}, rng, -b, b), random_tensor({d, d}, rng, -b, b),
                             random_tensor({d, d}, rng, -b, b)};
    spa::StageParams sp{random_tensor({d, d}, rng, -b, b), random_tensor({d, d}, rng, -b, b),
                        random_tensor({d, d}, rng, -b, b), random_tensor({d, d}, rng, -b, b),
                        random_tensor({d, 2 * d}, rng, -b, b), random_tensor({d}, rng, -0.1, 0.1)};
    std::vector<NamedTensor> in = {{"f_src", f_src}, {"patch_vis", pv}, {"patch_ir", pi},  {"w_z", rp.w_z},
                                   {"w_k", rp.w_k},   {"w_v", rp.w_v},   {"q_vis", sp.q_vis}, {"q_ir", sp.q_ir},
                                   {"merge_vis", sp.merge_vis}, {"merge_ir", sp.merge_ir}, {"out", sp.out},
                                   {"out_bias", sp.out_bias}};
    return {in, [=] {
              const auto pr = spa::build_repository(f_src, rp);
              return ops::mean(ops::square(spa::spa_forward({pv}, {pi}, pr, sp, cfg)));
            }};
  }
  if (term == "main") {
    nets::NetOutput so;
    {
      NoGradGuard g;
      so = fx.sub.forward(fx.sample.vis, fx.sample.ir);
    }
    const Fixture* f = &fx;
    return {fx.main.parameters(), [f, so] {
              const auto mo = f->main.forward(f->sample.vis, f->sample.ir, f->sample.patches_vis, f->sample.patches_ir);
              return loss::distillation_losses(f->inputs(mo, so), {}, f->encoder, &f->seg_head).total_main;
            }};
  }
  if (term == "sub") {
    nets::NetOutput mo;
    {
      NoGradGuard g;
      mo = fx.main.forward(fx.sample.vis, fx.sample.ir, fx.sample.patches_vis, fx.sample.patches_ir);
    }
    const Fixture* f = &fx;
    return {fx.sub.parameters(), [f, mo] {
              const auto so = f->sub.forward(f->sample.vis, f->sample.ir);
              return loss::distillation_losses(f->inputs(mo, so), {}, f->encoder, nullptr).total_sub;
            }};
  }
  if (term == "fault") {
    Tensor x = random_tensor({8}, rng, 0.5, 1.5);
    return {{{"x", x}}, [x] { return ops::sum(faulty_square(x)); }};
  }
  throw ContractError("unknown gradient-check term '" + term + "'");
}

}  // namespace

const std::vector<std::string>& suite_terms() {
  static const std::vector<std::string> terms = {"fea", "context", "cs", "seg", "attention", "main", "sub"};
  return terms;
}

GradCheckOptions default_check_options() {
  GradCheckOptions o;
  o.max_coords = 64;
  o.step = 1e-3;
  o.stencil = 4;
  o.tolerance = 1e-4;
  o.seed = 5;
  return o;
}

SuiteReport run_gradient_suite(const SuiteOptions& options) {
  std::vector<std::string> selected;
  if (options.term == "all") {
    selected = suite_terms();
  } else if (options.term == "fault" || std::find(suite_terms().begin(), suite_terms().end(), options.term) !=
                                            suite_terms().end()) {
    selected = {options.term};
  } else {
    throw ContractError("unknown gradient-check term '" + options.term + "'");
  }
  if (options.inject_fault && std::find(selected.begin(), selected.end(), "fault") == selected.end()) {
    selected.push_back("fault");
  }

  using clock = std::chrono::steady_clock;
  const auto start = clock::now();
  Fixture fx(options);
  Rng rng(options.seed);
  SuiteReport report;
  for (const auto& term : selected) {
    const auto t0 = clock::now();
    auto [inputs, fn] = build_check(term, fx, rng);
    TermReport tr;
    tr.term = term;
    GradCheckOptions check = options.check;
    if (term == "context") {
      // Piecewise linear in its inputs; a wide stencil straddles the kinks.
      check.step = 1e-5;
      check.stencil = 2;
    }
    for (const auto& r : check_gradients(inputs, fn, check)) {
      ++tr.tensors;
      tr.coords += r.coords;
      if (r.worst_rel_error >= tr.worst_rel_error) {
        tr.worst_rel_error = r.worst_rel_error;
        tr.worst_tensor = r.name;
      }
      tr.passed = tr.passed && r.passed;
    }
    tr.seconds = std::chrono::duration<double>(clock::now() - t0).count();
    report.passed = report.passed && tr.passed;
    report.terms.push_back(tr);
  }
  report.seconds = std::chrono::duration<double>(clock::now() - start).count();
  return report;
}

std::string format_report(const SuiteReport& report) {
  std::ostringstream os;
  char line[256];
  for (const auto& t : report.terms) {
    std::snprintf(line, sizeof line, "%-9s %s worst_rel_err=%.3e (%s) tensors=%zu coords=%zu %.1fs\n",
                  t.term.c_str(), t.passed ? "PASS" : "FAIL", t.worst_rel_error, t.worst_tensor.c_str(), t.tensors,
                  t.coords, t.seconds);
    os << line;
  }
  std::snprintf(line, sizeof line, "gradient suite %s in %.1fs\n", report.passed ? "PASSED" : "FAILED",
                report.seconds);
  os << line;
  return os.str();
}

}  // namespace semfuse::suite
