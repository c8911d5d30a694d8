#include <doctest.h>

#include <cmath>
#include <vector>

#include "semfuse/errors.hpp"
#include "semfuse/metrics.hpp"
#include "semfuse/rng.hpp"

using namespace semfuse;
using namespace semfuse::metrics;

namespace {

Image noise(std::size_t h, std::size_t w, std::uint64_t seed) {
  Rng rng(seed);
  Image img(h, w);
  for (auto& v : img.data) v = rng.uniform(0.0, 1.0);
  return img;
}

Image smooth_pattern(std::size_t h, std::size_t w) {
  Image img(h, w);
  for (std::size_t y = 0; y < h; ++y) {
    for (std::size_t x = 0; x < w; ++x) img(y, x) = 0.5 + 0.4 * std::sin(0.3 * x) * std::cos(0.2 * y);
  }
  return img;
}

Image perturbed(const Image& base, double eps, std::uint64_t seed) {
  Rng rng(seed);
  Image out = base;
  for (auto& v : out.data) v += eps * rng.uniform(-1.0, 1.0);
  return out;
}

// Direct 2-D windowed SSIM, no separability, single scale.
double ssim_oracle(const Image& a, const Image& b) {
  const int r = 5;
  double kern[11][11];
  double total = 0.0;
  for (int i = -r; i <= r; ++i) {
    for (int j = -r; j <= r; ++j) {
      kern[i + r][j + r] = std::exp(-(i * i + j * j) / (2.0 * 1.5 * 1.5));
      total += kern[i + r][j + r];
    }
  }
  const double c1 = 1e-4, c2 = 9e-4;
  double acc = 0.0;
  std::size_t n = 0;
  for (std::size_t y = 0; y + 11 <= a.height; ++y) {
    for (std::size_t x = 0; x + 11 <= a.width; ++x) {
      double ma = 0, mb = 0, saa = 0, sbb = 0, sab = 0;
      for (int i = 0; i < 11; ++i) {
        for (int j = 0; j < 11; ++j) {
          const double k = kern[i][j] / total;
          const double va = a(y + i, x + j), vb = b(y + i, x + j);
          ma += k * va;
          mb += k * vb;
          saa += k * va * va;
          sbb += k * vb * vb;
          sab += k * va * vb;
        }
      }
      const double va = saa - ma * ma, vb = sbb - mb * mb, cov = sab - ma * mb;
      acc += ((2 * ma * mb + c1) * (2 * cov + c2)) / ((ma * ma + mb * mb + c1) * (va + vb + c2));
      ++n;
    }
  }
  return acc / static_cast<double>(n);
}

}  // namespace

TEST_CASE("entropy") {
  CHECK(entropy(Image(8, 8, 1, 0.3)) == 0.0);

  Image two(4, 4);
  for (std::size_t i = 0; i < 8; ++i) two.data[i] = 1.0;
  CHECK(entropy(two) == doctest::Approx(1.0).epsilon(1e-15));

  Image ramp(16, 16);
  for (std::size_t i = 0; i < 256; ++i) ramp.data[i] = static_cast<double>(i) / 255.0;
  CHECK(entropy(ramp) == 8.0);

  // Four equal levels: exactly two bits.
  Image four(2, 2);
  four.data = {0.0, 0.25, 0.5, 1.0};
  CHECK(entropy(four) == doctest::Approx(2.0).epsilon(1e-15));
}

TEST_CASE("standard deviation") {
  CHECK(sd(Image(5, 7, 1, 0.42)) == 0.0);

  Image half(4, 4);
  for (std::size_t i = 8; i < 16; ++i) half.data[i] = 1.0;
  CHECK(sd(half) == doctest::Approx(127.5).epsilon(1e-12));

  const Image n = noise(13, 9, 4);
  double mean = 0.0;
  for (double v : n.data) mean += 255.0 * v;
  mean /= static_cast<double>(n.data.size());
  double var = 0.0;
  for (double v : n.data) var += (255.0 * v - mean) * (255.0 * v - mean);
  CHECK(sd(n) == doctest::Approx(std::sqrt(var / static_cast<double>(n.data.size()))).epsilon(1e-12));
}

TEST_CASE("correlation") {
  CHECK(correlation({1, 2, 3}, {2, 4, 6}) == doctest::Approx(1.0).epsilon(1e-15));
  CHECK(correlation({1, 2, 3}, {3, 2, 1}) == doctest::Approx(-1.0).epsilon(1e-15));
  CHECK(correlation({1, 1, 1}, {3, 2, 1}) == 0.0);
}

TEST_CASE("sum of correlation differences") {
  const Image vis = noise(64, 64, 1), ir = noise(64, 64, 2);
  Image sum(64, 64);
  for (std::size_t i = 0; i < sum.data.size(); ++i) sum.data[i] = vis.data[i] + ir.data[i];
  CHECK(std::fabs(scd(sum, vis, ir) - 2.0) <= 1e-9);

  CHECK(std::fabs(scd(noise(64, 64, 3), vis, ir)) < 0.2);

  // F - ir constant means the first correlation vanishes, likewise the second.
  CHECK(scd(Image(8, 8, 1, 0.5), Image(8, 8, 1, 0.2), Image(8, 8, 1, 0.1)) == 0.0);
}

TEST_CASE("ms-ssim identity and symmetry") {
  const Image a = smooth_pattern(96, 96);
  const Image b = perturbed(a, 0.05, 9);
  CHECK(std::fabs(ms_ssim(a, a) - 1.0) <= 1e-6);
  CHECK(std::fabs(ms_ssim(a, b) - ms_ssim(b, a)) <= 1e-9);
}

TEST_CASE("ms-ssim decreases with noise") {
  const Image a = smooth_pattern(64, 64);
  const double small = ms_ssim(a, perturbed(a, 0.01, 2));
  const double large = ms_ssim(a, perturbed(a, 0.05, 2));
  CHECK(small < 1.0);
  CHECK(large < small);
}

TEST_CASE("ms-ssim single scale matches a direct windowed oracle") {
  const Image a = noise(15, 14, 21);
  const Image b = perturbed(a, 0.2, 22);
  const auto r = ms_ssim_detail(a, b);
  CHECK(r.scales == 1);
  CHECK(r.value == doctest::Approx(ssim_oracle(a, b)).epsilon(1e-12));
}

TEST_CASE("ms-ssim scale handling") {
  CHECK_THROWS_AS(ms_ssim(Image(10, 40), Image(10, 40)), ContractError);
  CHECK_THROWS_AS(ms_ssim(Image(32, 32), Image(32, 33)), ContractError);

  const Image a = smooth_pattern(48, 48);
  const auto r = ms_ssim_detail(a, a);
  CHECK(r.scales == 3);
  CHECK_FALSE(r.warning.empty());
  CHECK(ms_ssim_detail(smooth_pattern(176, 176), smooth_pattern(176, 176)).scales == 5);
  CHECK(ms_ssim_detail(smooth_pattern(176, 176), smooth_pattern(176, 176)).warning.empty());
}

TEST_CASE("evaluation report") {
  const Image vis = smooth_pattern(32, 32);
  std::vector<std::string> warnings;
  const auto r = evaluate(vis, vis, vis, "a.pgm", &warnings);
  CHECK(r.ms_ssim_vis == doctest::Approx(1.0).epsilon(1e-9));
  CHECK(r.ms_ssim_sum() == doctest::Approx(2.0).epsilon(1e-9));
  CHECK(r.ms_ssim_mean() == doctest::Approx(1.0).epsilon(1e-9));
  CHECK_FALSE(warnings.empty());
  CHECK(csv_header() == "path,en,sd,scd,ms_ssim_mean,ms_ssim_sum");
  CHECK(csv_row(r).rfind("a.pgm,", 0) == 0);
}
