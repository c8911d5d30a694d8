#include "semfuse/ops.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "semfuse/errors.hpp"

namespace semfuse::ops {

namespace {

// Gradient buffer of parent `i`, or nullptr when that parent takes no gradient.
std::vector<double>* pgrad(const detail::Node& out, std::size_t i) {
  auto& p = out.parents[i];
  return p->requires_grad ? &p->grad_buffer() : nullptr;
}

const std::vector<double>& pdata(const detail::Node& out, std::size_t i) {
  return out.parents[i]->data;
}

void require_same_shape(const char* op, const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape()) {
    throw DimensionError(std::string(op) + ": shape mismatch " + shape_str(a.shape()) + " vs " +
                         shape_str(b.shape()));
  }
}

void require_rank(const char* op, const Tensor& a, std::size_t rank) {
  if (a.rank() != rank) {
    throw DimensionError(std::string(op) + ": expected rank " + std::to_string(rank) +
                         ", got " + shape_str(a.shape()));
  }
}

template <typename Fwd, typename Bwd>
Tensor unary(const char* op, const Tensor& a, Fwd fwd, Bwd dfdx) {
  std::vector<double> out(a.numel());
  auto x = a.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = fwd(x[i]);
  return Tensor::make_result(op, a.shape(), std::move(out), {a}, [dfdx](const detail::Node& o) {
    auto* g = pgrad(o, 0);
    if (!g) return;
    const auto& xd = pdata(o, 0);
    for (std::size_t i = 0; i < o.data.size(); ++i) (*g)[i] += o.grad[i] * dfdx(xd[i], o.data[i]);
  });
}

}  // namespace

Tensor add(const Tensor& a, const Tensor& b) {
  require_same_shape("add", a, b);
  std::vector<double> out(a.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.at(i) + b.at(i);
  return Tensor::make_result("add", a.shape(), std::move(out), {a, b}, [](const detail::Node& o) {
    for (std::size_t p = 0; p < 2; ++p) {
      if (auto* g = pgrad(o, p)) {
        for (std::size_t i = 0; i < o.grad.size(); ++i) (*g)[i] += o.grad[i];
      }
    }
  });
}

Tensor sub(const Tensor& a, const Tensor& b) {
  require_same_shape("sub", a, b);
  std::vector<double> out(a.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.at(i) - b.at(i);
  return Tensor::make_result("sub", a.shape(), std::move(out), {a, b}, [](const detail::Node& o) {
    if (auto* g = pgrad(o, 0)) {
      for (std::size_t i = 0; i < o.grad.size(); ++i) (*g)[i] += o.grad[i];
    }
    if (auto* g = pgrad(o, 1)) {
      for (std::size_t i = 0; i < o.grad.size(); ++i) (*g)[i] -= o.grad[i];
    }
  });
}

Tensor mul(const Tensor& a, const Tensor& b) {
  require_same_shape("mul", a, b);
  std::vector<double> out(a.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.at(i) * b.at(i);
  return Tensor::make_result("mul", a.shape(), std::move(out), {a, b}, [](const detail::Node& o) {
    const auto& ad = pdata(o, 0);
    const auto& bd = pdata(o, 1);
    if (auto* g = pgrad(o, 0)) {
      for (std::size_t i = 0; i < o.grad.size(); ++i) (*g)[i] += o.grad[i] * bd[i];
    }
    if (auto* g = pgrad(o, 1)) {
      for (std::size_t i = 0; i < o.grad.size(); ++i) (*g)[i] += o.grad[i] * ad[i];
    }
  });
}

Tensor div(const Tensor& a, const Tensor& b) {
  require_same_shape("div", a, b);
  std::vector<double> out(a.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.at(i) / b.at(i);
  return Tensor::make_result("div", a.shape(), std::move(out), {a, b}, [](const detail::Node& o) {
    const auto& bd = pdata(o, 1);
    if (auto* g = pgrad(o, 0)) {
      for (std::size_t i = 0; i < o.grad.size(); ++i) (*g)[i] += o.grad[i] / bd[i];
    }
    if (auto* g = pgrad(o, 1)) {
      for (std::size_t i = 0; i < o.grad.size(); ++i) (*g)[i] -= o.grad[i] * o.data[i] / bd[i];
    }
  });
}

Tensor add_scalar(const Tensor& a, double s) {
  return unary("add_scalar", a, [s](double x) { return x + s; },
               [](double, double) { return 1.0; });
}

Tensor scale(const Tensor& a, double s) {
  return unary("scale", a, [s](double x) { return x * s; }, [s](double, double) { return s; });
}

Tensor add_channel_bias(const Tensor& x, const Tensor& bias) {
  require_rank("add_channel_bias", bias, 1);
  if (x.dim(0) != bias.dim(0)) {
    throw DimensionError("add_channel_bias: channel mismatch " + shape_str(x.shape()) + " vs " +
                         shape_str(bias.shape()));
  }
  const std::size_t channels = x.dim(0);
  const std::size_t inner = x.numel() / channels;
  std::vector<double> out(x.data().begin(), x.data().end());
  for (std::size_t c = 0; c < channels; ++c) {
    for (std::size_t i = 0; i < inner; ++i) out[c * inner + i] += bias.at(c);
  }
  return Tensor::make_result("add_channel_bias", x.shape(), std::move(out), {x, bias},
                             [channels, inner](const detail::Node& o) {
                               if (auto* g = pgrad(o, 0)) {
                                 for (std::size_t i = 0; i < o.grad.size(); ++i) (*g)[i] += o.grad[i];
                               }
                               if (auto* g = pgrad(o, 1)) {
                                 for (std::size_t c = 0; c < channels; ++c) {
                                   double s = 0.0;
                                   for (std::size_t i = 0; i < inner; ++i) s += o.grad[c * inner + i];
                                   (*g)[c] += s;
                                 }
                               }
                             });
}

Tensor square(const Tensor& a) {
  return unary("square", a, [](double x) { return x * x; },
               [](double x, double) { return 2.0 * x; });
}

Tensor abs(const Tensor& a) {
  return unary("abs", a, [](double x) { return std::fabs(x); },
               [](double x, double) { return x > 0.0 ? 1.0 : (x < 0.0 ? -1.0 : 0.0); });
}

Tensor sqrt(const Tensor& a) {
  for (double v : a.data()) {
    if (v < 0.0) throw NumericalError("sqrt of negative value");
  }
  return unary("sqrt", a, [](double x) { return std::sqrt(x); },
               [](double, double y) { return y > 0.0 ? 0.5 / y : 0.0; });
}

Tensor sigmoid(const Tensor& a) {
  return unary("sigmoid", a, [](double x) { return 1.0 / (1.0 + std::exp(-x)); },
               [](double, double y) { return y * (1.0 - y); });
}

Tensor silu(const Tensor& a) {
  return unary("silu", a, [](double x) { return x / (1.0 + std::exp(-x)); },
               [](double x, double) {
                 const double s = 1.0 / (1.0 + std::exp(-x));
                 return s * (1.0 + x * (1.0 - s));
               });
}

Tensor sum(const Tensor& a) {
  double s = 0.0;
  for (double v : a.data()) s += v;
  return Tensor::make_result("sum", {1}, {s}, {a}, [](const detail::Node& o) {
    if (auto* g = pgrad(o, 0)) {
      for (auto& v : *g) v += o.grad[0];
    }
  });
}

Tensor mean(const Tensor& a) {
  const double n = static_cast<double>(a.numel());
  double s = 0.0;
  for (double v : a.data()) s += v;
  return Tensor::make_result("mean", {1}, {s / n}, {a}, [n](const detail::Node& o) {
    if (auto* g = pgrad(o, 0)) {
      for (auto& v : *g) v += o.grad[0] / n;
    }
  });
}

Tensor reshape(const Tensor& a, Shape shape) {
  if (shape_numel(shape) != a.numel()) {
    throw DimensionError("reshape: cannot view " + shape_str(a.shape()) + " as " +
                         shape_str(shape));
  }
  std::vector<double> out(a.data().begin(), a.data().end());
  return Tensor::make_result("reshape", std::move(shape), std::move(out), {a},
                             [](const detail::Node& o) {
                               if (auto* g = pgrad(o, 0)) {
                                 for (std::size_t i = 0; i < o.grad.size(); ++i) (*g)[i] += o.grad[i];
                               }
                             });
}

Tensor concat(const std::vector<Tensor>& parts) {
  if (parts.empty()) throw ContractError("concat: no inputs");
  Shape tail(parts[0].shape().begin() + 1, parts[0].shape().end());
  std::size_t rows = 0;
  std::vector<std::size_t> offsets;
  for (const auto& p : parts) {
    Shape t(p.shape().begin() + 1, p.shape().end());
    if (t != tail) {
      throw DimensionError("concat: trailing shape mismatch " + shape_str(parts[0].shape()) +
                           " vs " + shape_str(p.shape()));
    }
    offsets.push_back(rows);
    rows += p.dim(0);
  }
  const std::size_t inner = parts[0].numel() / parts[0].dim(0);
  std::vector<double> out;
  out.reserve(rows * inner);
  for (const auto& p : parts) out.insert(out.end(), p.data().begin(), p.data().end());
  Shape shape{rows};
  shape.insert(shape.end(), tail.begin(), tail.end());
  return Tensor::make_result("concat", std::move(shape), std::move(out), parts,
                             [offsets, inner](const detail::Node& o) {
                               for (std::size_t p = 0; p < o.parents.size(); ++p) {
                                 auto* g = pgrad(o, p);
                                 if (!g) continue;
                                 const std::size_t base = offsets[p] * inner;
                                 for (std::size_t i = 0; i < g->size(); ++i) (*g)[i] += o.grad[base + i];
                               }
                             });
}

Tensor slice(const Tensor& a, std::size_t begin, std::size_t end) {
  if (begin >= end || end > a.dim(0)) {
    throw DimensionError("slice: range [" + std::to_string(begin) + "," + std::to_string(end) +
                         ") invalid for " + shape_str(a.shape()));
  }
  const std::size_t inner = a.numel() / a.dim(0);
  std::vector<double> out(a.data().begin() + static_cast<std::ptrdiff_t>(begin * inner),
                          a.data().begin() + static_cast<std::ptrdiff_t>(end * inner));
  Shape shape = a.shape();
  shape[0] = end - begin;
  return Tensor::make_result("slice", std::move(shape), std::move(out), {a},
                             [base = begin * inner](const detail::Node& o) {
                               if (auto* g = pgrad(o, 0)) {
                                 for (std::size_t i = 0; i < o.grad.size(); ++i) (*g)[base + i] += o.grad[i];
                               }
                             });
}

Tensor matmul(const Tensor& a, const Tensor& b) {
  require_rank("matmul", a, 2);
  require_rank("matmul", b, 2);
  const std::size_t m = a.dim(0), k = a.dim(1), n = b.dim(1);
  if (b.dim(0) != k) {
    throw DimensionError("matmul: inner dimensions disagree " + shape_str(a.shape()) + " vs " +
                         shape_str(b.shape()));
  }
  std::vector<double> out(m * n, 0.0);
  auto ad = a.data();
  auto bd = b.data();
  for (std::size_t i = 0; i < m; ++i) {
    for (std::size_t p = 0; p < k; ++p) {
      const double av = ad[i * k + p];
      const double* brow = &bd[p * n];
      double* orow = &out[i * n];
      for (std::size_t j = 0; j < n; ++j) orow[j] += av * brow[j];
    }
  }
  return Tensor::make_result("matmul", {m, n}, std::move(out), {a, b},
                             [m, k, n](const detail::Node& o) {
                               const auto& ad = pdata(o, 0);
                               const auto& bd = pdata(o, 1);
                               if (auto* g = pgrad(o, 0)) {
                                 // dA = dC . B^T
                                 for (std::size_t i = 0; i < m; ++i) {
                                   for (std::size_t p = 0; p < k; ++p) {
                                     double s = 0.0;
                                     for (std::size_t j = 0; j < n; ++j) s += o.grad[i * n + j] * bd[p * n + j];
                                     (*g)[i * k + p] += s;
                                   }
                                 }
                               }
                               if (auto* g = pgrad(o, 1)) {
                                 // dB = A^T . dC
                                 for (std::size_t i = 0; i < m; ++i) {
                                   for (std::size_t p = 0; p < k; ++p) {
                                     const double av = ad[i * k + p];
                                     for (std::size_t j = 0; j < n; ++j) (*g)[p * n + j] += av * o.grad[i * n + j];
                                   }
                                 }
                               }
                             });
}

Tensor transpose(const Tensor& a) {
  require_rank("transpose", a, 2);
  const std::size_t r = a.dim(0), c = a.dim(1);
  std::vector<double> out(r * c);
  for (std::size_t i = 0; i < r; ++i) {
    for (std::size_t j = 0; j < c; ++j) out[j * r + i] = a.at(i * c + j);
  }
  return Tensor::make_result("transpose", {c, r}, std::move(out), {a},
                             [r, c](const detail::Node& o) {
                               if (auto* g = pgrad(o, 0)) {
                                 for (std::size_t i = 0; i < r; ++i) {
                                   for (std::size_t j = 0; j < c; ++j) (*g)[i * c + j] += o.grad[j * r + i];
                                 }
                               }
                             });
}

namespace {

// Softmax over `count` entries spaced `stride` apart, starting at `base`.
void softmax_strided(std::span<const double> in, std::vector<double>& out, std::size_t base,
                     std::size_t count, std::size_t stride) {
  double mx = in[base];
  for (std::size_t i = 1; i < count; ++i) mx = std::max(mx, in[base + i * stride]);
  double z = 0.0;
  for (std::size_t i = 0; i < count; ++i) {
    const double e = std::exp(in[base + i * stride] - mx);
    out[base + i * stride] = e;
    z += e;
  }
  for (std::size_t i = 0; i < count; ++i) out[base + i * stride] /= z;
}

void softmax_strided_backward(const detail::Node& o, std::vector<double>& g, std::size_t base,
                              std::size_t count, std::size_t stride) {
  double dot = 0.0;
  for (std::size_t i = 0; i < count; ++i) {
    const std::size_t idx = base + i * stride;
    dot += o.data[idx] * o.grad[idx];
  }
  for (std::size_t i = 0; i < count; ++i) {
    const std::size_t idx = base + i * stride;
    g[idx] += o.data[idx] * (o.grad[idx] - dot);
  }
}

}  // namespace

Tensor softmax_rows(const Tensor& x) {
  require_rank("softmax_rows", x, 2);
  const std::size_t rows = x.dim(0), cols = x.dim(1);
  std::vector<double> out(x.numel());
  for (std::size_t r = 0; r < rows; ++r) softmax_strided(x.data(), out, r * cols, cols, 1);
  return Tensor::make_result("softmax_rows", x.shape(), std::move(out), {x},
                             [rows, cols](const detail::Node& o) {
                               if (auto* g = pgrad(o, 0)) {
                                 for (std::size_t r = 0; r < rows; ++r) softmax_strided_backward(o, *g, r * cols, cols, 1);
                               }
                             });
}

Tensor softmax_channels(const Tensor& x) {
  require_rank("softmax_channels", x, 3);
  const std::size_t channels = x.dim(0), plane = x.dim(1) * x.dim(2);
  std::vector<double> out(x.numel());
  for (std::size_t p = 0; p < plane; ++p) softmax_strided(x.data(), out, p, channels, plane);
  return Tensor::make_result("softmax_channels", x.shape(), std::move(out), {x},
                             [channels, plane](const detail::Node& o) {
                               if (auto* g = pgrad(o, 0)) {
                                 for (std::size_t p = 0; p < plane; ++p) softmax_strided_backward(o, *g, p, channels, plane);
                               }
                             });
}

namespace {

struct ConvGeometry {
  std::size_t cin, h, w, cout, k, pad, stride, oh, ow;

  // Output columns ox for which ix = ox*stride + kx - pad lies inside [0, w).
  std::pair<std::size_t, std::size_t> ox_range(std::size_t kx) const {
    const long s = static_cast<long>(stride);
    const long off = static_cast<long>(kx) - static_cast<long>(pad);
    long lo = off >= 0 ? 0 : (-off + s - 1) / s;
    long hi = (static_cast<long>(w) - 1 - off);
    hi = hi < 0 ? -1 : hi / s;
    hi = std::min(hi, static_cast<long>(ow) - 1);
    if (hi < lo) return {0, 0};
    return {static_cast<std::size_t>(lo), static_cast<std::size_t>(hi) + 1};
  }
};

}  // namespace

Tensor conv2d(const Tensor& x, const Tensor& w, const Tensor& bias, std::size_t padding,
              std::size_t stride) {
  require_rank("conv2d input", x, 3);
  require_rank("conv2d weight", w, 4);
  if (w.dim(1) != x.dim(0)) {
    throw DimensionError("conv2d: input channels " + shape_str(x.shape()) +
                         " do not match weight " + shape_str(w.shape()));
  }
  if (w.dim(2) != w.dim(3) || w.dim(2) % 2 == 0) {
    throw DimensionError("conv2d: kernel must be square with odd extent, got " +
                         shape_str(w.shape()));
  }
  if (stride == 0) throw ContractError("conv2d: stride must be positive");
  ConvGeometry g{x.dim(0), x.dim(1), x.dim(2), w.dim(0), w.dim(2), padding, stride, 0, 0};
  if (g.h + 2 * padding < g.k || g.w + 2 * padding < g.k) {
    throw DimensionError("conv2d: non-positive output extent for input " + shape_str(x.shape()) +
                         " and weight " + shape_str(w.shape()));
  }
  g.oh = (g.h + 2 * padding - g.k) / stride + 1;
  g.ow = (g.w + 2 * padding - g.k) / stride + 1;
  if (bias.defined() && (bias.rank() != 1 || bias.dim(0) != g.cout)) {
    throw DimensionError("conv2d: bias " + shape_str(bias.shape()) + " does not match weight " +
                         shape_str(w.shape()));
  }

  std::vector<double> out(g.cout * g.oh * g.ow, 0.0);
  auto xd = x.data();
  auto wd = w.data();
  for (std::size_t co = 0; co < g.cout; ++co) {
    double* oplane = &out[co * g.oh * g.ow];
    if (bias.defined()) std::fill(oplane, oplane + g.oh * g.ow, bias.at(co));
    for (std::size_t ci = 0; ci < g.cin; ++ci) {
      const double* xplane = &xd[ci * g.h * g.w];
      for (std::size_t ky = 0; ky < g.k; ++ky) {
        for (std::size_t kx = 0; kx < g.k; ++kx) {
          const double wv = wd[((co * g.cin + ci) * g.k + ky) * g.k + kx];
          const auto [x0, x1] = g.ox_range(kx);
          for (std::size_t oy = 0; oy < g.oh; ++oy) {
            const long iy = static_cast<long>(oy * stride + ky) - static_cast<long>(padding);
            if (iy < 0 || iy >= static_cast<long>(g.h)) continue;
            const double* xrow = xplane + static_cast<std::size_t>(iy) * g.w;
            double* orow = oplane + oy * g.ow;
            for (std::size_t ox = x0; ox < x1; ++ox) orow[ox] += wv * xrow[ox * stride + kx - padding];
          }
        }
      }
    }
  }

  std::vector<Tensor> parents{x, w};
  if (bias.defined()) parents.push_back(bias);
  const bool has_bias = bias.defined();
  return Tensor::make_result(
      "conv2d", {g.cout, g.oh, g.ow}, std::move(out), std::move(parents),
      [g, has_bias](const detail::Node& o) {
        const auto& xd = pdata(o, 0);
        const auto& wd = pdata(o, 1);
        auto* gx = pgrad(o, 0);
        auto* gw = pgrad(o, 1);
        for (std::size_t co = 0; co < g.cout; ++co) {
          const double* gplane = &o.grad[co * g.oh * g.ow];
          for (std::size_t ci = 0; ci < g.cin; ++ci) {
            const std::size_t xbase = ci * g.h * g.w;
            for (std::size_t ky = 0; ky < g.k; ++ky) {
              for (std::size_t kx = 0; kx < g.k; ++kx) {
                const std::size_t widx = ((co * g.cin + ci) * g.k + ky) * g.k + kx;
                const double wv = wd[widx];
                const auto [x0, x1] = g.ox_range(kx);
                double wacc = 0.0;
                for (std::size_t oy = 0; oy < g.oh; ++oy) {
                  const long iy = static_cast<long>(oy * g.stride + ky) - static_cast<long>(g.pad);
                  if (iy < 0 || iy >= static_cast<long>(g.h)) continue;
                  const std::size_t xrow = xbase + static_cast<std::size_t>(iy) * g.w;
                  const double* grow = gplane + oy * g.ow;
                  for (std::size_t ox = x0; ox < x1; ++ox) {
                    const std::size_t xi = xrow + ox * g.stride + kx - g.pad;
                    wacc += grow[ox] * xd[xi];
                    if (gx) (*gx)[xi] += grow[ox] * wv;
                  }
                }
                if (gw) (*gw)[widx] += wacc;
              }
            }
          }
        }
        if (has_bias) {
          if (auto* gb = pgrad(o, 2)) {
            for (std::size_t co = 0; co < g.cout; ++co) {
              double s = 0.0;
              for (std::size_t i = 0; i < g.oh * g.ow; ++i) s += o.grad[co * g.oh * g.ow + i];
              (*gb)[co] += s;
            }
          }
        }
      });
}

namespace {

constexpr double kSobelX[3][3] = {{-1, 0, 1}, {-2, 0, 2}, {-1, 0, 1}};
constexpr double kSobelY[3][3] = {{-1, -2, -1}, {0, 0, 0}, {1, 2, 1}};

std::size_t clamp_index(long i, std::size_t n) {
  if (i < 0) return 0;
  if (i >= static_cast<long>(n)) return n - 1;
  return static_cast<std::size_t>(i);
}

}  // namespace

Tensor sobel(const Tensor& x) {
  require_rank("sobel", x, 3);
  if (x.dim(0) != 1) throw DimensionError("sobel: expected one channel, got " + shape_str(x.shape()));
  const std::size_t h = x.dim(1), w = x.dim(2);
  if (h < 3 || w < 3) throw DimensionError("sobel: image smaller than 3x3: " + shape_str(x.shape()));
  std::vector<double> out(2 * h * w, 0.0);
  auto xd = x.data();
  for (std::size_t y = 0; y < h; ++y) {
    for (std::size_t xx = 0; xx < w; ++xx) {
      // Positive and negative taps are summed apart in mirrored order, so a
      // locally constant image gives exactly zero.
      double gx_pos = 0.0, gx_neg = 0.0, gy_pos = 0.0, gy_neg = 0.0;
      for (int dy = -1; dy <= 1; ++dy) {
        const std::size_t sy = clamp_index(static_cast<long>(y) + dy, h);
        for (int dx = -1; dx <= 1; ++dx) {
          const std::size_t sx = clamp_index(static_cast<long>(xx) + dx, w);
          const double v = xd[sy * w + sx];
          const double kx = kSobelX[dy + 1][dx + 1], ky = kSobelY[dy + 1][dx + 1];
          (kx > 0 ? gx_pos : gx_neg) += std::fabs(kx) * v;
          (ky > 0 ? gy_pos : gy_neg) += std::fabs(ky) * v;
        }
      }
      out[y * w + xx] = gx_pos - gx_neg;
      out[h * w + y * w + xx] = gy_pos - gy_neg;
    }
  }
  return Tensor::make_result("sobel", {2, h, w}, std::move(out), {x}, [h, w](const detail::Node& o) {
    auto* g = pgrad(o, 0);
    if (!g) return;
    for (std::size_t y = 0; y < h; ++y) {
      for (std::size_t xx = 0; xx < w; ++xx) {
        const double gxo = o.grad[y * w + xx];
        const double gyo = o.grad[h * w + y * w + xx];
        for (int dy = -1; dy <= 1; ++dy) {
          const std::size_t sy = clamp_index(static_cast<long>(y) + dy, h);
          for (int dx = -1; dx <= 1; ++dx) {
            const std::size_t sx = clamp_index(static_cast<long>(xx) + dx, w);
            (*g)[sy * w + sx] += kSobelX[dy + 1][dx + 1] * gxo + kSobelY[dy + 1][dx + 1] * gyo;
          }
        }
      }
    }
  });
}

Tensor upsample_nearest(const Tensor& x, std::size_t factor) {
  require_rank("upsample_nearest", x, 3);
  if (factor == 0) throw ContractError("upsample_nearest: factor must be positive");
  const std::size_t c = x.dim(0), h = x.dim(1), w = x.dim(2);
  const std::size_t oh = h * factor, ow = w * factor;
  std::vector<double> out(c * oh * ow);
  for (std::size_t ch = 0; ch < c; ++ch) {
    for (std::size_t y = 0; y < oh; ++y) {
      for (std::size_t xx = 0; xx < ow; ++xx) {
        out[(ch * oh + y) * ow + xx] = x.at((ch * h + y / factor) * w + xx / factor);
      }
    }
  }
  return Tensor::make_result("upsample_nearest", {c, oh, ow}, std::move(out), {x},
                             [c, h, w, factor, oh, ow](const detail::Node& o) {
                               auto* g = pgrad(o, 0);
                               if (!g) return;
                               for (std::size_t ch = 0; ch < c; ++ch) {
                                 for (std::size_t y = 0; y < oh; ++y) {
                                   for (std::size_t xx = 0; xx < ow; ++xx) {
                                     (*g)[(ch * h + y / factor) * w + xx / factor] += o.grad[(ch * oh + y) * ow + xx];
                                   }
                                 }
                               }
                             });
}

Tensor nll_of_probs(const Tensor& probs, const std::vector<int>& labels, double floor) {
  require_rank("nll_of_probs", probs, 3);
  const std::size_t classes = probs.dim(0), plane = probs.dim(1) * probs.dim(2);
  if (labels.size() != plane) {
    throw DimensionError("nll_of_probs: " + std::to_string(labels.size()) +
                         " labels for probabilities " + shape_str(probs.shape()));
  }
  double total = 0.0;
  for (std::size_t p = 0; p < plane; ++p) {
    const int label = labels[p];
    if (label < 0 || static_cast<std::size_t>(label) >= classes) {
      throw ContractError("label " + std::to_string(label) + " out of range [0," +
                          std::to_string(classes) + ")");
    }
    total -= std::log(std::max(probs.at(static_cast<std::size_t>(label) * plane + p), floor));
  }
  const double n = static_cast<double>(plane);
  return Tensor::make_result("nll_of_probs", {1}, {total / n}, {probs},
                             [labels, plane, floor, n](const detail::Node& o) {
                               auto* g = pgrad(o, 0);
                               if (!g) return;
                               const auto& pd = pdata(o, 0);
                               for (std::size_t p = 0; p < plane; ++p) {
                                 const std::size_t idx = static_cast<std::size_t>(labels[p]) * plane + p;
                                 if (pd[idx] > floor) (*g)[idx] -= o.grad[0] / (pd[idx] * n);
                               }
                             });
}

}  // namespace semfuse::ops

namespace semfuse::ops {

Tensor cosine_similarity(const Tensor& a, const Tensor& b, double eps) {
  if (a.numel() != b.numel()) {
    throw DimensionError("cosine_similarity: size mismatch " + shape_str(a.shape()) + " vs " +
                         shape_str(b.shape()));
  }
  double dot = 0.0, na = 0.0, nb = 0.0;
  for (std::size_t i = 0; i < a.numel(); ++i) {
    dot += a.at(i) * b.at(i);
    na += a.at(i) * a.at(i);
    nb += b.at(i) * b.at(i);
  }
  const double norm = std::sqrt(na * nb);
  const bool floored = norm <= eps;
  const double denom = floored ? eps : norm;
  const double c = dot / denom;
  return Tensor::make_result(
      "cosine_similarity", {1}, {c}, {a, b}, [na, nb, denom, floored, c](const detail::Node& o) {
        const auto& ad = pdata(o, 0);
        const auto& bd = pdata(o, 1);
        const double g = o.grad[0];
        // dc/da = b/D - c a/|a|^2 while D = |a||b| is above the floor.
        if (auto* ga = pgrad(o, 0)) {
          for (std::size_t i = 0; i < ad.size(); ++i) {
            (*ga)[i] += g * (bd[i] / denom - (floored || na == 0.0 ? 0.0 : c * ad[i] / na));
          }
        }
        if (auto* gb = pgrad(o, 1)) {
          for (std::size_t i = 0; i < bd.size(); ++i) {
            (*gb)[i] += g * (ad[i] / denom - (floored || nb == 0.0 ? 0.0 : c * bd[i] / nb));
          }
        }
      });
}

}  // namespace semfuse::ops
