#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "semfuse/networks.hpp"
#include "semfuse/prior.hpp"
#include "semfuse/synthetic.hpp"

namespace semfuse {

struct PriorConfig {
  std::size_t top_k = 3;
  std::size_t min_area = 8;
  int classes = 4;
  bool random_patches = false;  // replace region masks with random boxes
  std::uint64_t seed = 7;
  std::optional<std::filesystem::path> mask_dir;  // externally supplied masks
};

// One training pair with its precomputed semantic priors.
struct Sample {
  std::string stem;
  Tensor vis, ir;  // [1 x H x W] luminance
  prior::MaskSet masks_vis, masks_ir;
  std::vector<Tensor> patches_vis, patches_ir;
  prior::LabelMap labels;
};

Sample prepare_sample(const ImagePair& pair, const PriorConfig& config, std::size_t index = 0);
std::vector<Sample> prepare_samples(const std::vector<ImagePair>& pairs, const PriorConfig& config);

// Pairs `<stem>.vis.{pgm,ppm}` with `<stem>.ir.pgm`, sorted by stem. Throws
// ContractError listing every file without a partner.
std::vector<ImagePair> load_pair_dir(const std::filesystem::path& dir);

// Replicate-pads a single-channel image so both extents are multiples of
// `multiple`.
Image pad_to_multiple(const Image& img, std::size_t multiple);
Image crop(const Image& img, std::size_t height, std::size_t width);

// Student-only fusion of a source pair. A color visible input is fused on
// its luminance and its chroma is re-attached, giving an RGB result.
Image fuse_pair(const nets::SubNet& net, const Image& vis, const Image& ir);

}  // namespace semfuse
