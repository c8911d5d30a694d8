#include "semfuse/image_io.hpp"

#include <algorithm>
#include <array>
#include <cctype>
#include <cmath>
#include <fstream>
#include <iterator>
#include <string>

#include "semfuse/errors.hpp"

namespace semfuse {

Tensor Image::to_tensor(bool requires_grad) const {
  return Tensor::from({channels, height, width}, data, requires_grad);
}

Image Image::from_tensor(const Tensor& t) {
  if (t.rank() != 3) throw DimensionError("image tensor must be [C x H x W], got " + shape_str(t.shape()));
  Image img(t.dim(1), t.dim(2), t.dim(0));
  std::copy(t.data().begin(), t.data().end(), img.data.begin());
  return img;
}

std::vector<unsigned char> read_file_bytes(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

namespace {

class HeaderReader {
 public:
  explicit HeaderReader(const std::vector<unsigned char>& bytes) : bytes_(bytes) {}

  void skip_space_and_comments() {
    while (pos_ < bytes_.size()) {
      if (std::isspace(bytes_[pos_])) {
        ++pos_;
      } else if (bytes_[pos_] == '#') {
        while (pos_ < bytes_.size() && bytes_[pos_] != '\n') ++pos_;
      } else {
        break;
      }
    }
  }

  std::size_t number(const char* what) {
    if (pos_ < bytes_.size() && !std::isspace(bytes_[pos_]) && bytes_[pos_] != '#') {
      throw ParseError(std::string("expected whitespace before ") + what, pos_);
    }
    skip_space_and_comments();
    const std::size_t start = pos_;
    if (pos_ >= bytes_.size()) throw ParseError(std::string("header truncated before ") + what, pos_);
    if (!std::isdigit(bytes_[pos_])) {
      throw ParseError(std::string("expected decimal ") + what, pos_);
    }
    std::size_t value = 0;
    while (pos_ < bytes_.size() && std::isdigit(bytes_[pos_])) {
      value = value * 10 + static_cast<std::size_t>(bytes_[pos_] - '0');
      if (value > (1u << 24)) throw ParseError(std::string(what) + " too large", start);
      ++pos_;
    }
    last_start_ = start;
    return value;
  }

  std::size_t pos() const { return pos_; }
  std::size_t last_start() const { return last_start_; }
  void advance() { ++pos_; }

 private:
  const std::vector<unsigned char>& bytes_;
  std::size_t pos_ = 2;
  std::size_t last_start_ = 0;
};

}  // namespace

Image decode_pnm(const std::vector<unsigned char>& bytes) {
  if (bytes.size() < 2 || bytes[0] != 'P' || (bytes[1] != '5' && bytes[1] != '6')) {
    throw ParseError("not a binary PGM/PPM file (magic must be P5 or P6)", 0);
  }
  const std::size_t channels = bytes[1] == '5' ? 1 : 3;
  HeaderReader hr(bytes);
  const std::size_t width = hr.number("width");
  if (width == 0) throw ParseError("width must be positive", hr.last_start());
  const std::size_t height = hr.number("height");
  if (height == 0) throw ParseError("height must be positive", hr.last_start());
  const std::size_t maxval = hr.number("maxval");
  if (maxval != 255) {
    throw ParseError("maxval " + std::to_string(maxval) + " unsupported (only 255)", hr.last_start());
  }
  if (hr.pos() >= bytes.size() || !std::isspace(bytes[hr.pos()])) {
    throw ParseError("expected single whitespace after maxval", hr.pos());
  }
  hr.advance();
  const std::size_t payload = hr.pos();
  const std::size_t needed = width * height * channels;
  if (bytes.size() - payload < needed) {
    throw ParseError("truncated payload: need " + std::to_string(needed) + " bytes, have " +
                         std::to_string(bytes.size() - payload),
                     bytes.size());
  }
  Image img(height, width, channels);
  for (std::size_t y = 0; y < height; ++y) {
    for (std::size_t x = 0; x < width; ++x) {
      for (std::size_t c = 0; c < channels; ++c) {
        img.at(c, y, x) = bytes[payload + (y * width + x) * channels + c] / 255.0;
      }
    }
  }
  return img;
}

Image load_image(const std::filesystem::path& path) { return decode_pnm(read_file_bytes(path)); }

std::vector<unsigned char> encode_pnm(const Image& img) {
  if (img.channels != 1 && img.channels != 3) {
    throw ContractError("only 1- or 3-channel images can be written, got " +
                        std::to_string(img.channels));
  }
  const std::string header = std::string(img.channels == 1 ? "P5" : "P6") + "\n" +
                             std::to_string(img.width) + " " + std::to_string(img.height) +
                             "\n255\n";
  std::vector<unsigned char> out(header.begin(), header.end());
  out.reserve(header.size() + img.data.size());
  for (std::size_t y = 0; y < img.height; ++y) {
    for (std::size_t x = 0; x < img.width; ++x) {
      for (std::size_t c = 0; c < img.channels; ++c) {
        const double v = img.at(c, y, x);
        if (!(v >= 0.0 && v <= 1.0)) {
          throw ContractError("pixel value " + std::to_string(v) + " outside [0,1]");
        }
        out.push_back(static_cast<unsigned char>(std::lround(v * 255.0)));
      }
    }
  }
  return out;
}

void save_image(const Image& img, const std::filesystem::path& path) {
  const auto bytes = encode_pnm(img);
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot open " + path.string() + " for writing");
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw IoError("write failed for " + path.string());
}

namespace {

constexpr std::array<std::array<double, 3>, 3> kRgbToYcc{{
    {0.299, 0.587, 0.114},
    {-0.168736, -0.331264, 0.5},
    {0.5, -0.418688, -0.081312},
}};

std::array<std::array<double, 3>, 3> inverse3(const std::array<std::array<double, 3>, 3>& m) {
  const double det = m[0][0] * (m[1][1] * m[2][2] - m[1][2] * m[2][1]) -
                     m[0][1] * (m[1][0] * m[2][2] - m[1][2] * m[2][0]) +
                     m[0][2] * (m[1][0] * m[2][1] - m[1][1] * m[2][0]);
  std::array<std::array<double, 3>, 3> inv{};
  for (int i = 0; i < 3; ++i) {
    for (int j = 0; j < 3; ++j) {
      const int r0 = (j + 1) % 3, r1 = (j + 2) % 3, c0 = (i + 1) % 3, c1 = (i + 2) % 3;
      inv[i][j] = (m[r0][c0] * m[r1][c1] - m[r0][c1] * m[r1][c0]) / det;
    }
  }
  return inv;
}

}  // namespace

YCbCr rgb_to_ycbcr(const Image& rgb) {
  if (rgb.channels != 3) {
    throw ContractError("rgb_to_ycbcr needs 3 channels, got " + std::to_string(rgb.channels));
  }
  YCbCr out{Image(rgb.height, rgb.width), Image(rgb.height, rgb.width), Image(rgb.height, rgb.width)};
  const auto& m = kRgbToYcc;
  for (std::size_t i = 0; i < rgb.plane(); ++i) {
    const double r = rgb.data[i], g = rgb.data[rgb.plane() + i], b = rgb.data[2 * rgb.plane() + i];
    out.y.data[i] = m[0][0] * r + m[0][1] * g + m[0][2] * b;
    out.cb.data[i] = 0.5 + m[1][0] * r + m[1][1] * g + m[1][2] * b;
    out.cr.data[i] = 0.5 + m[2][0] * r + m[2][1] * g + m[2][2] * b;
  }
  return out;
}

Image ycbcr_to_rgb(const YCbCr& ycc) {
  if (!ycc.y.same_size(ycc.cb) || !ycc.y.same_size(ycc.cr)) {
    throw DimensionError("ycbcr_to_rgb: plane sizes differ");
  }
  static const auto inv = inverse3(kRgbToYcc);
  Image rgb(ycc.y.height, ycc.y.width, 3);
  const std::size_t n = rgb.plane();
  for (std::size_t i = 0; i < n; ++i) {
    const double v[3] = {ycc.y.data[i], ycc.cb.data[i] - 0.5, ycc.cr.data[i] - 0.5};
    for (std::size_t c = 0; c < 3; ++c) {
      rgb.data[c * n + i] = inv[c][0] * v[0] + inv[c][1] * v[1] + inv[c][2] * v[2];
    }
  }
  return rgb;
}

Image to_luminance(const Image& img) {
  if (img.channels == 1) return img;
  return rgb_to_ycbcr(img).y;
}

Image clamp01(Image img) {
  for (auto& v : img.data) v = std::clamp(v, 0.0, 1.0);
  return img;
}

}  // namespace semfuse
