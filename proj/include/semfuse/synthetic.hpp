#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "semfuse/image_io.hpp"

namespace semfuse {

struct ImagePair {
  std::string stem;
  Image vis;  // 1 or 3 channels
  Image ir;   // 1 channel
};

// Seeded toy infrared/visible pairs. Both modalities share a scene of smooth
// illumination and elliptical objects. The visible image adds oriented
// texture and noise and renders objects with moderate contrast; the infrared
// image is dim and smooth with bright object blobs plus one warm target that
// is invisible in the visible band.
std::vector<ImagePair> make_synthetic_pairs(std::size_t count, std::size_t height, std::size_t width,
                                            std::uint64_t seed);

}  // namespace semfuse
