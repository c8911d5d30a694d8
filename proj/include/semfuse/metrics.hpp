#pragma once

#include <array>
#include <string>
#include <vector>

#include "semfuse/image_io.hpp"

namespace semfuse::metrics {

// Shannon entropy in bits of the 256-bin histogram of round(v * 255).
double entropy(const Image& img);

// Population standard deviation on the 0-255 scale.
double sd(const Image& img);

// Pearson correlation; 0 when either argument is constant.
double correlation(const std::vector<double>& a, const std::vector<double>& b);

// r(F - ir, vis) + r(F - vis, ir).
double scd(const Image& fused, const Image& vis, const Image& ir);

inline constexpr std::array<double, 5> kMsSsimWeights = {0.0448, 0.2856, 0.3001, 0.2363, 0.1333};

struct MsSsimResult {
  double value = 0;
  std::size_t scales = 0;  // < 5 when the image was too small for all of them
  std::string warning;
};

// Single-channel multi-scale SSIM over valid 11x11 Gaussian windows (sigma
// 1.5, dynamic range 1). Throws ContractError on shape mismatch or when even
// one scale does not fit.
MsSsimResult ms_ssim_detail(const Image& a, const Image& b);
double ms_ssim(const Image& a, const Image& b);

struct MetricReport {
  std::string path;
  double en = 0, sd = 0, scd = 0;
  double ms_ssim_vis = 0, ms_ssim_ir = 0;
  double ms_ssim_mean() const { return 0.5 * (ms_ssim_vis + ms_ssim_ir); }
  double ms_ssim_sum() const { return ms_ssim_vis + ms_ssim_ir; }
};

// Color inputs are reduced to luminance first.
MetricReport evaluate(const Image& fused, const Image& vis, const Image& ir, std::string path = {},
                      std::vector<std::string>* warnings = nullptr);

std::string csv_header();
std::string csv_row(const MetricReport& r);

}  // namespace semfuse::metrics
