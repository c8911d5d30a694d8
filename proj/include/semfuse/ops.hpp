#pragma once

#include <cstddef>
#include <vector>

#include "semfuse/tensor.hpp"

// Differentiable tensor operations. Every op validates shapes up front and
// throws DimensionError naming the offending shapes.
namespace semfuse::ops {

// Elementwise, identical shapes.
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor div(const Tensor& a, const Tensor& b);

Tensor add_scalar(const Tensor& a, double s);
Tensor scale(const Tensor& a, double s);

// x: [C x ...], bias: [C]; adds bias[c] to every element of channel c.
Tensor add_channel_bias(const Tensor& x, const Tensor& bias);

Tensor square(const Tensor& a);
Tensor abs(const Tensor& a);
// sqrt with a zero subgradient at 0.
Tensor sqrt(const Tensor& a);
Tensor sigmoid(const Tensor& a);
// x * sigmoid(x); smooth everywhere, which keeps finite-difference checks clean.
Tensor silu(const Tensor& a);

Tensor sum(const Tensor& a);
Tensor mean(const Tensor& a);

Tensor reshape(const Tensor& a, Shape shape);
// Concatenate along axis 0; trailing extents must agree.
Tensor concat(const std::vector<Tensor>& parts);
// Rows [begin, end) of axis 0.
Tensor slice(const Tensor& a, std::size_t begin, std::size_t end);

// [m x k] . [k x n]
Tensor matmul(const Tensor& a, const Tensor& b);
Tensor transpose(const Tensor& a);

// Row-wise softmax of a 2-D tensor with per-row max subtraction.
Tensor softmax_rows(const Tensor& x);
// Softmax across axis 0 of a [C x H x W] tensor, independently per pixel.
Tensor softmax_channels(const Tensor& x);

// Cross-correlation. x: [Cin x H x W], w: [Cout x Cin x k x k] with k odd,
// optional bias [Cout] (pass an undefined Tensor for none).
// Output extent: (H + 2*padding - k) / stride + 1.
Tensor conv2d(const Tensor& x, const Tensor& w, const Tensor& bias, std::size_t padding,
              std::size_t stride = 1);

// Horizontal (channel 0) and vertical (channel 1) 3x3 Sobel responses of a
// [1 x H x W] image with replicate padding; H, W >= 3.
Tensor sobel(const Tensor& x);

// Nearest-neighbour upsampling of [C x H x W] by an integer factor.
Tensor upsample_nearest(const Tensor& x, std::size_t factor);

// Cosine of the flattened operands: dot / max(sqrt(|a|^2 |b|^2), eps). The
// norm product is formed as one square root so identical inputs give exactly 1.
Tensor cosine_similarity(const Tensor& a, const Tensor& b, double eps);

// Mean over all elements of [C x H x W] pixels of -log(max(p[label], floor)).
Tensor nll_of_probs(const Tensor& probs, const std::vector<int>& labels, double floor);

}  // namespace semfuse::ops
