#include "semfuse/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>

#include "semfuse/errors.hpp"

namespace semfuse::metrics {

namespace {

void require_gray(const Image& img, const char* what) {
  if (img.channels != 1) throw ContractError(std::string(what) + ": expected a single-channel image");
  if (img.data.empty()) throw ContractError(std::string(what) + ": empty image");
}

void require_same(const Image& a, const Image& b, const char* what) {
  if (!a.same_size(b) || a.channels != b.channels) {
    throw ContractError(std::string(what) + ": image shapes differ");
  }
}

constexpr std::size_t kWindow = 11;
constexpr double kSigma = 1.5;
constexpr double kC1 = 0.01 * 0.01;
constexpr double kC2 = 0.03 * 0.03;

std::array<double, kWindow> gaussian_taps() {
  std::array<double, kWindow> g{};
  double s = 0.0;
  for (std::size_t i = 0; i < kWindow; ++i) {
    const double d = static_cast<double>(i) - 5.0;
    g[i] = std::exp(-d * d / (2.0 * kSigma * kSigma));
    s += g[i];
  }
  for (auto& v : g) v /= s;
  return g;
}

// Separable valid-mode Gaussian filter of a row-major h x w plane.
std::vector<double> filter_valid(const std::vector<double>& src, std::size_t h, std::size_t w) {
  static const auto g = gaussian_taps();
  const std::size_t oh = h - kWindow + 1, ow = w - kWindow + 1;
  std::vector<double> rows(h * ow, 0.0);
  for (std::size_t y = 0; y < h; ++y) {
    for (std::size_t x = 0; x < ow; ++x) {
      double acc = 0.0;
      for (std::size_t k = 0; k < kWindow; ++k) acc += g[k] * src[y * w + x + k];
      rows[y * ow + x] = acc;
    }
  }
  std::vector<double> out(oh * ow, 0.0);
  for (std::size_t y = 0; y < oh; ++y) {
    for (std::size_t x = 0; x < ow; ++x) {
      double acc = 0.0;
      for (std::size_t k = 0; k < kWindow; ++k) acc += g[k] * rows[(y + k) * ow + x];
      out[y * ow + x] = acc;
    }
  }
  return out;
}

struct SsimParts {
  double ssim, cs;
};

SsimParts ssim_parts(const std::vector<double>& a, const std::vector<double>& b, std::size_t h, std::size_t w) {
  std::vector<double> aa(a.size()), bb(a.size()), ab(a.size());
  for (std::size_t i = 0; i < a.size(); ++i) {
    aa[i] = a[i] * a[i];
    bb[i] = b[i] * b[i];
    ab[i] = a[i] * b[i];
  }
  const auto mu_a = filter_valid(a, h, w), mu_b = filter_valid(b, h, w);
  const auto e_aa = filter_valid(aa, h, w), e_bb = filter_valid(bb, h, w), e_ab = filter_valid(ab, h, w);
  double ssim = 0.0, cs = 0.0;
  for (std::size_t i = 0; i < mu_a.size(); ++i) {
    const double ma = mu_a[i], mb = mu_b[i];
    const double va = e_aa[i] - ma * ma, vb = e_bb[i] - mb * mb, cov = e_ab[i] - ma * mb;
    const double c = (2.0 * cov + kC2) / (va + vb + kC2);
    const double l = (2.0 * ma * mb + kC1) / (ma * ma + mb * mb + kC1);
    cs += c;
    ssim += l * c;
  }
  const double n = static_cast<double>(mu_a.size());
  return {ssim / n, cs / n};
}

std::vector<double> downsample(const std::vector<double>& src, std::size_t h, std::size_t w) {
  const std::size_t oh = h / 2, ow = w / 2;
  std::vector<double> out(oh * ow);
  for (std::size_t y = 0; y < oh; ++y) {
    for (std::size_t x = 0; x < ow; ++x) {
      out[y * ow + x] = 0.25 * (src[2 * y * w + 2 * x] + src[2 * y * w + 2 * x + 1] +
                                src[(2 * y + 1) * w + 2 * x] + src[(2 * y + 1) * w + 2 * x + 1]);
    }
  }
  return out;
}

double signed_pow(double v, double e) { return v < 0.0 ? -std::pow(-v, e) : std::pow(v, e); }

}  // namespace

double entropy(const Image& img) {
  require_gray(img, "entropy");
  std::array<std::size_t, 256> hist{};
  for (double v : img.data) {
    const long level = std::lround(std::clamp(v, 0.0, 1.0) * 255.0);
    ++hist[static_cast<std::size_t>(level)];
  }
  const double n = static_cast<double>(img.data.size());
  double h = 0.0;
  for (std::size_t c : hist) {
    if (c == 0) continue;
    const double p = static_cast<double>(c) / n;
    h -= p * std::log2(p);
  }
  return h;
}

double sd(const Image& img) {
  require_gray(img, "sd");
  // Shifted by the first sample so a constant image is exactly zero.
  const double n = static_cast<double>(img.data.size());
  const double origin = img.data.empty() ? 0.0 : img.data.front();
  double mean = 0.0;
  for (double v : img.data) mean += 255.0 * (v - origin);
  mean /= n;
  double var = 0.0;
  for (double v : img.data) var += (255.0 * (v - origin) - mean) * (255.0 * (v - origin) - mean);
  return std::sqrt(var / n);
}

double correlation(const std::vector<double>& a, const std::vector<double>& b) {
  if (a.size() != b.size()) throw ContractError("correlation: length mismatch");
  if (a.empty()) return 0.0;
  const double n = static_cast<double>(a.size());
  double ma = 0.0, mb = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    ma += a[i];
    mb += b[i];
  }
  ma /= n;
  mb /= n;
  double sab = 0.0, saa = 0.0, sbb = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double da = a[i] - ma, db = b[i] - mb;
    sab += da * db;
    saa += da * da;
    sbb += db * db;
  }
  if (saa <= 0.0 || sbb <= 0.0) return 0.0;
  return sab / std::sqrt(saa * sbb);
}

double scd(const Image& fused, const Image& vis, const Image& ir) {
  require_gray(fused, "scd");
  require_same(fused, vis, "scd");
  require_same(fused, ir, "scd");
  std::vector<double> d_ir(fused.data.size()), d_vis(fused.data.size());
  for (std::size_t i = 0; i < fused.data.size(); ++i) {
    d_ir[i] = fused.data[i] - ir.data[i];
    d_vis[i] = fused.data[i] - vis.data[i];
  }
  return correlation(d_ir, vis.data) + correlation(d_vis, ir.data);
}

MsSsimResult ms_ssim_detail(const Image& a, const Image& b) {
  require_gray(a, "ms_ssim");
  require_same(a, b, "ms_ssim");
  const std::size_t min_side = std::min(a.height, a.width);
  std::size_t scales = 0;
  while (scales < kMsSsimWeights.size() && min_side >= (std::size_t{1} << scales) * kWindow) ++scales;
  if (scales == 0) {
    throw ContractError("ms_ssim: image " + std::to_string(a.height) + "x" + std::to_string(a.width) +
                        " is smaller than the 11x11 window");
  }
  MsSsimResult r;
  r.scales = scales;
  double wsum = 0.0;
  for (std::size_t s = 0; s < scales; ++s) wsum += kMsSsimWeights[s];
  if (scales < kMsSsimWeights.size()) {
    char buf[128];
    std::snprintf(buf, sizeof buf, "ms_ssim: %zux%zu supports %zu of 5 scales; exponents renormalized",
                  a.height, a.width, scales);
    r.warning = buf;
  }
  std::vector<double> x = a.data, y = b.data;
  std::size_t h = a.height, w = a.width;
  double value = 1.0;
  for (std::size_t s = 0; s < scales; ++s) {
    const SsimParts p = ssim_parts(x, y, h, w);
    const double e = kMsSsimWeights[s] / wsum;
    value *= signed_pow(s + 1 == scales ? p.ssim : p.cs, e);
    if (s + 1 < scales) {
      x = downsample(x, h, w);
      y = downsample(y, h, w);
      h /= 2;
      w /= 2;
    }
  }
  r.value = value;
  return r;
}

double ms_ssim(const Image& a, const Image& b) { return ms_ssim_detail(a, b).value; }

MetricReport evaluate(const Image& fused, const Image& vis, const Image& ir, std::string path,
                      std::vector<std::string>* warnings) {
  const Image f = to_luminance(fused), v = to_luminance(vis), i = to_luminance(ir);
  MetricReport r;
  r.path = std::move(path);
  r.en = entropy(f);
  r.sd = sd(f);
  r.scd = scd(f, v, i);
  const auto mv = ms_ssim_detail(f, v);
  const auto mi = ms_ssim_detail(f, i);
  r.ms_ssim_vis = mv.value;
  r.ms_ssim_ir = mi.value;
  if (warnings && !mv.warning.empty()) warnings->push_back(mv.warning);
  return r;
}

std::string csv_header() { return "path,en,sd,scd,ms_ssim_mean,ms_ssim_sum"; }

std::string csv_row(const MetricReport& r) {
  char buf[256];
  std::snprintf(buf, sizeof buf, ",%.17g,%.17g,%.17g,%.17g,%.17g", r.en, r.sd, r.scd, r.ms_ssim_mean(),
                r.ms_ssim_sum());
  return r.path + buf;
}

}  // namespace semfuse::metrics
