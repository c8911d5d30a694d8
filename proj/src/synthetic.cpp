#include "semfuse/synthetic.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>

#include "semfuse/rng.hpp"

namespace semfuse {

namespace {

struct Blob {
  double cy, cx, ry, rx;
  double vis_level;
  double heat;
};

// 1 inside the ellipse, 0 outside, with a one-pixel soft rim.
double ellipse_cover(const Blob& b, double y, double x) {
  const double dy = (y - b.cy) / b.ry, dx = (x - b.cx) / b.rx;
  const double r = std::sqrt(dy * dy + dx * dx);
  const double rim = 1.0 / std::min(b.ry, b.rx);
  return std::clamp((1.0 - r) / rim + 0.5, 0.0, 1.0);
}

}  // namespace

std::vector<ImagePair> make_synthetic_pairs(std::size_t count, std::size_t height, std::size_t width,
                                            std::uint64_t seed) {
  Rng rng(seed);
  std::vector<ImagePair> pairs;
  const double h = static_cast<double>(height), w = static_cast<double>(width);
  const double scale = std::min(h, w);
  for (std::size_t n = 0; n < count; ++n) {
    const double base = rng.uniform(0.25, 0.55);
    const double gx = rng.uniform(-0.2, 0.2), gy = rng.uniform(-0.2, 0.2);
    const double freq = rng.uniform(0.6, 1.4), angle = rng.uniform(0.0, 3.14159);
    const double fx = freq * std::cos(angle), fy = freq * std::sin(angle);
    const double ir_base = rng.uniform(0.1, 0.25);

    std::vector<Blob> blobs;
    const std::size_t objects = 2 + rng.index(3);
    for (std::size_t k = 0; k < objects; ++k) {
      Blob b;
      b.cy = rng.uniform(0.15, 0.85) * h;
      b.cx = rng.uniform(0.15, 0.85) * w;
      b.ry = rng.uniform(0.08, 0.22) * scale;
      b.rx = rng.uniform(0.08, 0.22) * scale;
      b.vis_level = rng.uniform(0.05, 0.95);
      b.heat = rng.uniform(0.55, 0.95);
      blobs.push_back(b);
    }
    // Warm target seen only by the infrared sensor.
    Blob hidden{rng.uniform(0.2, 0.8) * h, rng.uniform(0.2, 0.8) * w, rng.uniform(0.06, 0.12) * scale,
                rng.uniform(0.06, 0.12) * scale, 0.0, rng.uniform(0.75, 1.0)};

    ImagePair p;
    char stem[32];
    std::snprintf(stem, sizeof stem, "synth%03zu", n);
    p.stem = stem;
    p.vis = Image(height, width);
    p.ir = Image(height, width);
    for (std::size_t y = 0; y < height; ++y) {
      for (std::size_t x = 0; x < width; ++x) {
        const double yy = static_cast<double>(y), xx = static_cast<double>(x);
        const double illum = base + gx * (xx / w - 0.5) + gy * (yy / h - 0.5);
        double vis = illum + 0.08 * std::sin(fx * xx + fy * yy) + 0.03 * rng.normal();
        double ir = ir_base + 0.05 * (yy / h);
        for (const auto& b : blobs) {
          const double c = ellipse_cover(b, yy, xx);
          vis = (1.0 - c) * vis + c * (b.vis_level + 0.02 * rng.normal());
          ir = (1.0 - c) * ir + c * b.heat;
        }
        const double hc = ellipse_cover(hidden, yy, xx);
        ir = (1.0 - hc) * ir + hc * hidden.heat;
        ir += 0.01 * rng.normal();
        p.vis(y, x) = std::clamp(vis, 0.0, 1.0);
        p.ir(y, x) = std::clamp(ir, 0.0, 1.0);
      }
    }
    pairs.push_back(std::move(p));
  }
  return pairs;
}

}  // namespace semfuse
