#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <utility>
#include <vector>

#include "semfuse/tensor.hpp"

namespace semfuse {

struct GradCheckOptions {
  std::size_t max_coords = 64;  // per tensor; all coordinates when the tensor is smaller
  double step = 1e-5;
  int stencil = 2;  // 2-point or 4-point central differences
  double tolerance = 1e-4;
  std::uint64_t seed = 0;
};

struct GradCheckResult {
  std::string name;
  std::size_t coords = 0;
  double worst_rel_error = 0.0;
  bool passed = true;
};

using NamedTensor = std::pair<std::string, Tensor>;

// |auto - fd| / max(1e-8, |fd|)
double relative_error(double autodiff, double finite_difference);

// Compares reverse-mode gradients of `loss` against central finite
// differences for each tensor in `inputs`. `loss` must rebuild its graph from
// the current tensor values on every call. Input grads are reset before the
// reverse sweep and left populated afterwards.
std::vector<GradCheckResult> check_gradients(const std::vector<NamedTensor>& inputs,
                                             const std::function<Tensor()>& loss,
                                             const GradCheckOptions& options = {});

}  // namespace semfuse
