#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "semfuse/image_io.hpp"
#include "semfuse/tensor.hpp"

// Deterministic stand-in for a promptable segmentation model and the frozen
// auxiliary networks: region masks and patches, a frozen multi-layer semantic
// encoder, a frozen segmentation head and synthetic label maps.
namespace semfuse::prior {

enum class Modality { Vis, Ir };
const char* modality_name(Modality m);

struct MaskSet {
  std::size_t height = 0;
  std::size_t width = 0;
  Modality modality = Modality::Vis;
  std::vector<std::vector<std::uint8_t>> masks;  // 0/1, row-major
  std::vector<std::size_t> areas;
  bool degenerate = false;

  std::size_t size() const { return masks.size(); }
  Image mask_image(std::size_t i) const;
  // Pixel-wise OR of all masks.
  Image union_mask() const;
};

struct PatchSet {
  std::vector<Image> patches;
};

// Otsu threshold over the 256-level histogram of round(v*255); pixels with a
// level above the threshold are foreground. Returns -1 for single-level images.
int otsu_threshold(const Image& img);

// Otsu binarization, then 4-connected components of both foreground and
// background. Components with area >= min_area are kept, largest first, at
// most top_k. Falls back to one whole-image mask with `degenerate` set.
MaskSet generate_masks(const Image& img, Modality modality, std::size_t top_k,
                       std::size_t min_area);

// Axis-aligned half-size boxes at seeded random positions; replaces the
// region masks when semantic priors are ablated.
MaskSet random_box_masks(std::size_t height, std::size_t width, Modality modality,
                         std::size_t count, std::uint64_t seed);

// Reads `<stem>.<vis|ir>.mask<N>.pgm` for N = 0, 1, ... (binary 0/255 files).
// Returns an empty set when no file exists.
MaskSet load_mask_dir(const std::filesystem::path& dir, const std::string& stem,
                      Modality modality);

PatchSet make_patches(const Image& img, const MaskSet& masks);

class FrozenEncoder {
 public:
  static constexpr std::uint64_t kDefaultSeed = 0x5e11a17cu;

  explicit FrozenEncoder(std::uint64_t seed = kDefaultSeed, std::size_t layers = 3);

  // One feature map per layer; layer l has stride 2^(l+1).
  std::vector<Tensor> encode(const Tensor& image) const;

  std::size_t layers() const { return weights_.size(); }
  const std::vector<std::size_t>& channels() const { return channels_; }
  // FNV-1a over the raw weight bytes.
  std::uint64_t checksum() const;

 private:
  std::vector<Tensor> weights_;
  std::vector<Tensor> biases_;
  std::vector<std::size_t> channels_;
};

class SegmentationHead {
 public:
  static constexpr std::uint64_t kDefaultSeed = 0x5e6d00du;

  explicit SegmentationHead(std::uint64_t seed = kDefaultSeed, std::size_t classes = 4);

  // [classes x H x W] per-pixel class probabilities of a [1 x H x W] image.
  Tensor predict(const Tensor& image) const;
  std::size_t classes() const { return classes_; }

 private:
  std::size_t classes_;
  Tensor w1_, b1_, w2_, b2_;
};

struct LabelMap {
  std::size_t height = 0;
  std::size_t width = 0;
  int classes = 2;
  std::vector<int> labels;
};

// Background is class 0. Masks of both modalities ranked by area (descending)
// take class (rank mod (classes-1)) + 1; where masks overlap the smaller one
// wins.
LabelMap synth_labels(const MaskSet& vis, const MaskSet& ir, int classes);

}  // namespace semfuse::prior
