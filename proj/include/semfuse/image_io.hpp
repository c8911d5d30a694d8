#pragma once

#include <cstddef>
#include <filesystem>
#include <vector>

#include "semfuse/tensor.hpp"

namespace semfuse {

// Planar image with values in [0, 1]: data[(c * height + y) * width + x].
struct Image {
  std::size_t height = 0;
  std::size_t width = 0;
  std::size_t channels = 1;
  std::vector<double> data;

  Image() = default;
  Image(std::size_t h, std::size_t w, std::size_t c = 1, double fill = 0.0)
      : height(h), width(w), channels(c), data(h * w * c, fill) {}

  std::size_t plane() const { return height * width; }
  double& at(std::size_t c, std::size_t y, std::size_t x) { return data[(c * height + y) * width + x]; }
  double at(std::size_t c, std::size_t y, std::size_t x) const {
    return data[(c * height + y) * width + x];
  }
  double& operator()(std::size_t y, std::size_t x) { return at(0, y, x); }
  double operator()(std::size_t y, std::size_t x) const { return at(0, y, x); }

  bool same_size(const Image& o) const { return height == o.height && width == o.width; }

  // [channels x height x width] graph leaf.
  Tensor to_tensor(bool requires_grad = false) const;
  static Image from_tensor(const Tensor& t);

  friend bool operator==(const Image&, const Image&) = default;
};

// Binary PGM (P5) or PPM (P6), 8-bit, maxval 255. Throws ParseError with the
// byte offset of the first malformed element.
Image load_image(const std::filesystem::path& path);
Image decode_pnm(const std::vector<unsigned char>& bytes);

// Quantizes round(v * 255) (half away from zero) and writes P5 for one
// channel, P6 for three. Throws ContractError for values outside [0, 1] and
// IoError when the file cannot be written.
void save_image(const Image& img, const std::filesystem::path& path);
std::vector<unsigned char> encode_pnm(const Image& img);

std::vector<unsigned char> read_file_bytes(const std::filesystem::path& path);

struct YCbCr {
  Image y;
  Image cb;
  Image cr;
};

// BT.601 full-range conversion; chroma centred on 0.5.
YCbCr rgb_to_ycbcr(const Image& rgb);
// Exact inverse of the forward matrix; the result is not clamped.
Image ycbcr_to_rgb(const YCbCr& ycc);

// Single-channel luminance of either a gray or an RGB image.
Image to_luminance(const Image& img);
Image clamp01(Image img);

}  // namespace semfuse
