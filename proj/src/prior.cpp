#include "semfuse/prior.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <cstring>
#include <numeric>

#include "semfuse/errors.hpp"
#include "semfuse/init.hpp"
#include "semfuse/instrumentation.hpp"
#include "semfuse/ops.hpp"

namespace semfuse::prior {

const char* modality_name(Modality m) { return m == Modality::Vis ? "vis" : "ir"; }

Image MaskSet::mask_image(std::size_t i) const {
  Image img(height, width);
  for (std::size_t p = 0; p < img.plane(); ++p) img.data[p] = masks.at(i)[p];
  return img;
}

Image MaskSet::union_mask() const {
  Image img(height, width);
  for (const auto& m : masks) {
    for (std::size_t p = 0; p < img.plane(); ++p) {
      if (m[p]) img.data[p] = 1.0;
    }
  }
  return img;
}

namespace {

std::vector<int> quantize(const Image& img) {
  std::vector<int> q(img.plane());
  for (std::size_t i = 0; i < q.size(); ++i) {
    q[i] = static_cast<int>(std::lround(std::clamp(img.data[i], 0.0, 1.0) * 255.0));
  }
  return q;
}

void require_gray(const Image& img, const char* op) {
  if (img.channels != 1) {
    throw ContractError(std::string(op) + " needs a 1-channel image, got " +
                        std::to_string(img.channels) + " channels");
  }
}

MaskSet whole_image(std::size_t h, std::size_t w, Modality modality) {
  MaskSet ms;
  ms.height = h;
  ms.width = w;
  ms.modality = modality;
  ms.masks.emplace_back(h * w, std::uint8_t{1});
  ms.areas.push_back(h * w);
  ms.degenerate = true;
  return ms;
}

}  // namespace

int otsu_threshold(const Image& img) {
  const auto q = quantize(img);
  std::array<double, 256> hist{};
  for (int v : q) hist[static_cast<std::size_t>(v)] += 1.0;
  const auto [lo, hi] = std::minmax_element(q.begin(), q.end());
  if (*lo == *hi) return -1;

  const double total = static_cast<double>(q.size());
  double sum_all = 0.0;
  for (int i = 0; i < 256; ++i) sum_all += i * hist[i];
  double w0 = 0.0, sum0 = 0.0, best = -1.0;
  int best_t = -1;
  for (int t = 0; t < 255; ++t) {
    w0 += hist[t];
    sum0 += t * hist[t];
    const double w1 = total - w0;
    if (w0 == 0.0 || w1 == 0.0) continue;
    const double m0 = sum0 / w0, m1 = (sum_all - sum0) / w1;
    const double between = w0 * w1 * (m0 - m1) * (m0 - m1);
    if (between > best) {
      best = between;
      best_t = t;
    }
  }
  return best_t;
}

MaskSet generate_masks(const Image& img, Modality modality, std::size_t top_k,
                       std::size_t min_area) {
  require_gray(img, "generate_masks");
  instrumentation::note_teacher_path();
  if (top_k == 0) throw ContractError("generate_masks: top_k must be positive");
  const std::size_t h = img.height, w = img.width;
  const int t = otsu_threshold(img);
  if (t < 0) return whole_image(h, w, modality);

  const auto q = quantize(img);
  std::vector<std::uint8_t> fg(q.size());
  for (std::size_t i = 0; i < q.size(); ++i) fg[i] = q[i] > t;

  // Flood fill over equal-valued 4-neighbours, components numbered in raster order.
  std::vector<int> label(q.size(), -1);
  std::vector<std::size_t> areas;
  std::vector<std::size_t> stack;
  for (std::size_t seed = 0; seed < q.size(); ++seed) {
    if (label[seed] >= 0) continue;
    const int id = static_cast<int>(areas.size());
    std::size_t area = 0;
    label[seed] = id;
    stack.push_back(seed);
    while (!stack.empty()) {
      const std::size_t p = stack.back();
      stack.pop_back();
      ++area;
      const std::size_t y = p / w, x = p % w;
      auto visit = [&](std::size_t n) {
        if (label[n] < 0 && fg[n] == fg[p]) {
          label[n] = id;
          stack.push_back(n);
        }
      };
      if (x > 0) visit(p - 1);
      if (x + 1 < w) visit(p + 1);
      if (y > 0) visit(p - w);
      if (y + 1 < h) visit(p + w);
    }
    areas.push_back(area);
  }

  std::vector<std::size_t> order;
  for (std::size_t c = 0; c < areas.size(); ++c) {
    if (areas[c] >= min_area) order.push_back(c);
  }
  if (order.empty()) return whole_image(h, w, modality);
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return areas[a] > areas[b]; });
  if (order.size() > top_k) order.resize(top_k);

  MaskSet ms;
  ms.height = h;
  ms.width = w;
  ms.modality = modality;
  for (std::size_t c : order) {
    std::vector<std::uint8_t> m(q.size(), 0);
    for (std::size_t i = 0; i < q.size(); ++i) m[i] = label[i] == static_cast<int>(c);
    ms.masks.push_back(std::move(m));
    ms.areas.push_back(areas[c]);
  }
  return ms;
}

MaskSet random_box_masks(std::size_t height, std::size_t width, Modality modality,
                         std::size_t count, std::uint64_t seed) {
  Rng rng(seed ^ (modality == Modality::Vis ? 0x76697300u : 0x697200u));
  MaskSet ms;
  ms.height = height;
  ms.width = width;
  ms.modality = modality;
  const std::size_t bh = std::max<std::size_t>(1, height / 2), bw = std::max<std::size_t>(1, width / 2);
  for (std::size_t k = 0; k < count; ++k) {
    const std::size_t y0 = rng.index(height - bh + 1), x0 = rng.index(width - bw + 1);
    std::vector<std::uint8_t> m(height * width, 0);
    for (std::size_t y = y0; y < y0 + bh; ++y) {
      for (std::size_t x = x0; x < x0 + bw; ++x) m[y * width + x] = 1;
    }
    ms.masks.push_back(std::move(m));
    ms.areas.push_back(bh * bw);
  }
  return ms;
}

MaskSet load_mask_dir(const std::filesystem::path& dir, const std::string& stem,
                      Modality modality) {
  MaskSet ms;
  ms.modality = modality;
  for (std::size_t n = 0;; ++n) {
    const auto path = dir / (stem + "." + modality_name(modality) + ".mask" + std::to_string(n) + ".pgm");
    if (!std::filesystem::exists(path)) break;
    const Image img = load_image(path);
    if (img.channels != 1) throw ContractError("mask file " + path.string() + " is not grayscale");
    if (n == 0) {
      ms.height = img.height;
      ms.width = img.width;
    } else if (img.height != ms.height || img.width != ms.width) {
      throw DimensionError("mask file " + path.string() + " differs in size from mask 0");
    }
    std::vector<std::uint8_t> m(img.plane());
    std::size_t area = 0;
    for (std::size_t i = 0; i < m.size(); ++i) {
      if (img.data[i] == 1.0) {
        m[i] = 1;
        ++area;
      } else if (img.data[i] != 0.0) {
        throw ContractError("mask file " + path.string() + " is not binary 0/255");
      }
    }
    ms.masks.push_back(std::move(m));
    ms.areas.push_back(area);
  }
  return ms;
}

PatchSet make_patches(const Image& img, const MaskSet& masks) {
  require_gray(img, "make_patches");
  instrumentation::note_teacher_path();
  if (img.height != masks.height || img.width != masks.width) {
    throw ContractError("make_patches: image " + std::to_string(img.height) + "x" +
                        std::to_string(img.width) + " vs masks " + std::to_string(masks.height) +
                        "x" + std::to_string(masks.width));
  }
  PatchSet ps;
  for (const auto& m : masks.masks) {
    Image patch(img.height, img.width);
    for (std::size_t i = 0; i < patch.plane(); ++i) patch.data[i] = m[i] ? img.data[i] : 0.0;
    ps.patches.push_back(std::move(patch));
  }
  return ps;
}

FrozenEncoder::FrozenEncoder(std::uint64_t seed, std::size_t layers) {
  Rng rng(seed);
  std::size_t cin = 1;
  for (std::size_t l = 0; l < layers; ++l) {
    const std::size_t cout = l == 0 ? 8 : 16;
    weights_.push_back(conv_weight(cout, cin, 3, rng, false));
    std::vector<double> b(cout);
    for (auto& v : b) v = rng.uniform(-0.1, 0.1);
    biases_.push_back(Tensor::from({cout}, std::move(b)));
    channels_.push_back(cout);
    cin = cout;
  }
}

std::vector<Tensor> FrozenEncoder::encode(const Tensor& image) const {
  instrumentation::note_teacher_path();
  if (image.rank() != 3 || image.dim(0) != 1) {
    throw DimensionError("semantic encoder expects [1 x H x W], got " + shape_str(image.shape()));
  }
  std::vector<Tensor> feats;
  Tensor x = image;
  for (std::size_t l = 0; l < weights_.size(); ++l) {
    x = ops::silu(ops::conv2d(x, weights_[l], biases_[l], 1, 2));
    feats.push_back(x);
  }
  return feats;
}

std::uint64_t FrozenEncoder::checksum() const {
  std::uint64_t h = 1469598103934665603ull;
  auto mix = [&h](const Tensor& t) {
    for (double v : t.data()) {
      unsigned char bytes[sizeof(double)];
      std::memcpy(bytes, &v, sizeof v);
      for (unsigned char b : bytes) {
        h ^= b;
        h *= 1099511628211ull;
      }
    }
  };
  for (std::size_t l = 0; l < weights_.size(); ++l) {
    mix(weights_[l]);
    mix(biases_[l]);
  }
  return h;
}

SegmentationHead::SegmentationHead(std::uint64_t seed, std::size_t classes) : classes_(classes) {
  if (classes < 2) throw ContractError("segmentation head needs at least 2 classes");
  Rng rng(seed);
  w1_ = conv_weight(8, 1, 3, rng, false);
  std::vector<double> b1(8);
  for (auto& v : b1) v = rng.uniform(-0.5, 0.5);
  b1_ = Tensor::from({8}, std::move(b1));
  w2_ = conv_weight(classes, 8, 3, rng, false);
  std::vector<double> b2(classes);
  for (auto& v : b2) v = rng.uniform(-0.1, 0.1);
  b2_ = Tensor::from({classes}, std::move(b2));
}

Tensor SegmentationHead::predict(const Tensor& image) const {
  instrumentation::note_teacher_path();
  Tensor h = ops::silu(ops::conv2d(image, w1_, b1_, 1));
  return ops::softmax_channels(ops::conv2d(h, w2_, b2_, 1));
}

LabelMap synth_labels(const MaskSet& vis, const MaskSet& ir, int classes) {
  if (classes < 2) throw ContractError("synth_labels: need at least 2 classes");
  LabelMap lm;
  lm.classes = classes;
  const MaskSet& ref = vis.size() ? vis : ir;
  lm.height = ref.height;
  lm.width = ref.width;
  lm.labels.assign(lm.height * lm.width, 0);

  struct Entry {
    const std::vector<std::uint8_t>* mask;
    std::size_t area;
  };
  std::vector<Entry> all;
  for (const MaskSet* ms : {&vis, &ir}) {
    if (ms->size() && (ms->height != lm.height || ms->width != lm.width)) {
      throw DimensionError("synth_labels: modality mask sizes differ");
    }
    for (std::size_t i = 0; i < ms->size(); ++i) all.push_back({&ms->masks[i], ms->areas[i]});
  }
  std::stable_sort(all.begin(), all.end(), [](const Entry& a, const Entry& b) { return a.area > b.area; });
  // Paint largest first so smaller masks overwrite overlaps.
  for (std::size_t rank = 0; rank < all.size(); ++rank) {
    const int cls = static_cast<int>(rank % static_cast<std::size_t>(classes - 1)) + 1;
    const auto& m = *all[rank].mask;
    for (std::size_t p = 0; p < m.size(); ++p) {
      if (m[p]) lm.labels[p] = cls;
    }
  }
  return lm;
}

}  // namespace semfuse::prior
