#include "semfuse/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "semfuse/errors.hpp"
#include "semfuse/rng.hpp"

namespace semfuse {

double relative_error(double autodiff, double finite_difference) {
  return std::fabs(autodiff - finite_difference) / std::max(1e-8, std::fabs(finite_difference));
}

namespace {

std::vector<std::size_t> sample_coords(std::size_t n, std::size_t k, Rng& rng) {
  std::vector<std::size_t> idx(n);
  std::iota(idx.begin(), idx.end(), 0);
  if (k >= n) return idx;
  for (std::size_t i = 0; i < k; ++i) std::swap(idx[i], idx[i + rng.index(n - i)]);
  idx.resize(k);
  std::sort(idx.begin(), idx.end());
  return idx;
}

double eval(const std::function<Tensor()>& loss) {
  NoGradGuard guard;
  return loss().item();
}

}  // namespace

std::vector<GradCheckResult> check_gradients(const std::vector<NamedTensor>& inputs,
                                             const std::function<Tensor()>& loss,
                                             const GradCheckOptions& options) {
  if (options.stencil != 2 && options.stencil != 4) {
    throw ContractError("gradient check stencil must be 2 or 4");
  }
  std::vector<Tensor> tensors;
  for (const auto& [name, t] : inputs) {
    Tensor handle = t;
    handle.zero_grad();
    if (!handle.requires_grad()) handle.set_requires_grad(true);
    tensors.push_back(handle);
  }
  loss().backward();

  Rng rng(options.seed);
  std::vector<GradCheckResult> results;
  const double h = options.step;
  for (std::size_t t = 0; t < tensors.size(); ++t) {
    Tensor& x = tensors[t];
    GradCheckResult r;
    r.name = inputs[t].first;
    std::vector<double> autodiff(x.numel(), 0.0);
    if (x.has_grad()) std::copy(x.grad().begin(), x.grad().end(), autodiff.begin());
    for (std::size_t i : sample_coords(x.numel(), options.max_coords, rng)) {
      auto data = x.mutable_data();
      const double orig = data[i];
      auto at = [&](double delta) {
        data[i] = orig + delta;
        const double v = eval(loss);
        data[i] = orig;
        return v;
      };
      double fd;
      if (options.stencil == 2) {
        fd = (at(h) - at(-h)) / (2.0 * h);
      } else {
        fd = (-at(2 * h) + 8.0 * at(h) - 8.0 * at(-h) + at(-2 * h)) / (12.0 * h);
      }
      r.worst_rel_error = std::max(r.worst_rel_error, relative_error(autodiff[i], fd));
      ++r.coords;
    }
    r.passed = r.worst_rel_error <= options.tolerance;
    results.push_back(r);
  }
  return results;
}

}  // namespace semfuse
