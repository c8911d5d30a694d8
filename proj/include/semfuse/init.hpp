#pragma once

#include <cmath>

#include "semfuse/rng.hpp"
#include "semfuse/tensor.hpp"

namespace semfuse {

// Kaiming-uniform (fan-in, ReLU gain): U(-sqrt(6/fan_in), sqrt(6/fan_in)).
inline Tensor kaiming_uniform(Shape shape, std::size_t fan_in, Rng& rng, bool requires_grad) {
  const double bound = std::sqrt(6.0 / static_cast<double>(fan_in));
  std::vector<double> values(shape_numel(shape));
  for (auto& v : values) v = rng.uniform(-bound, bound);
  return Tensor::from(std::move(shape), std::move(values), requires_grad);
}

// Conv weight [cout x cin x k x k] with fan-in cin*k*k.
inline Tensor conv_weight(std::size_t cout, std::size_t cin, std::size_t k, Rng& rng,
                          bool requires_grad) {
  return kaiming_uniform({cout, cin, k, k}, cin * k * k, rng, requires_grad);
}

}  // namespace semfuse
