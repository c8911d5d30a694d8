#include "semfuse/pipeline.hpp"

#include <map>
#include <set>

#include "semfuse/errors.hpp"
#include "semfuse/image_io.hpp"

namespace semfuse {

namespace {

std::vector<Tensor> patch_tensors(const prior::PatchSet& ps) {
  std::vector<Tensor> out;
  for (const auto& p : ps.patches) out.push_back(p.to_tensor());
  return out;
}

prior::MaskSet masks_for(const Image& img, prior::Modality modality, const std::string& stem,
                         const PriorConfig& config, std::size_t index) {
  if (config.mask_dir) {
    prior::MaskSet injected = prior::load_mask_dir(*config.mask_dir, stem, modality);
    if (injected.size()) {
      if (injected.height != img.height || injected.width != img.width) {
        throw DimensionError("injected masks for " + stem + " do not match the image size");
      }
      return injected;
    }
  }
  if (config.random_patches) {
    return prior::random_box_masks(img.height, img.width, modality, config.top_k, config.seed + 7919 * index);
  }
  return prior::generate_masks(img, modality, config.top_k, config.min_area);
}

}  // namespace

Sample prepare_sample(const ImagePair& pair, const PriorConfig& config, std::size_t index) {
  const Image vis = to_luminance(pair.vis);
  const Image ir = to_luminance(pair.ir);
  if (!vis.same_size(ir)) throw ContractError("pair " + pair.stem + ": modalities differ in size");
  Sample s;
  s.stem = pair.stem;
  s.vis = vis.to_tensor();
  s.ir = ir.to_tensor();
  s.masks_vis = masks_for(vis, prior::Modality::Vis, pair.stem, config, index);
  s.masks_ir = masks_for(ir, prior::Modality::Ir, pair.stem, config, index);
  s.patches_vis = patch_tensors(prior::make_patches(vis, s.masks_vis));
  s.patches_ir = patch_tensors(prior::make_patches(ir, s.masks_ir));
  s.labels = prior::synth_labels(s.masks_vis, s.masks_ir, config.classes);
  return s;
}

std::vector<Sample> prepare_samples(const std::vector<ImagePair>& pairs, const PriorConfig& config) {
  std::vector<Sample> out;
  for (std::size_t i = 0; i < pairs.size(); ++i) out.push_back(prepare_sample(pairs[i], config, i));
  return out;
}

std::vector<ImagePair> load_pair_dir(const std::filesystem::path& dir) {
  if (!std::filesystem::is_directory(dir)) throw IoError("not a directory: " + dir.string());
  std::map<std::string, std::filesystem::path> vis, ir;
  for (const auto& entry : std::filesystem::directory_iterator(dir)) {
    if (!entry.is_regular_file()) continue;
    const std::string name = entry.path().filename().string();
    auto ends_with = [&](const std::string& suffix) {
      return name.size() > suffix.size() && name.compare(name.size() - suffix.size(), suffix.size(), suffix) == 0;
    };
    if (ends_with(".vis.pgm") || ends_with(".vis.ppm")) {
      vis[name.substr(0, name.size() - 8)] = entry.path();
    } else if (ends_with(".ir.pgm")) {
      ir[name.substr(0, name.size() - 7)] = entry.path();
    }
  }
  std::vector<std::string> orphans;
  for (const auto& [stem, path] : vis) {
    if (!ir.count(stem)) orphans.push_back(path.filename().string());
  }
  for (const auto& [stem, path] : ir) {
    if (!vis.count(stem)) orphans.push_back(path.filename().string());
  }
  if (!orphans.empty()) {
    std::string msg = "unpaired files in " + dir.string() + ":";
    for (const auto& o : orphans) msg += " " + o;
    throw ContractError(msg);
  }
  std::vector<ImagePair> pairs;
  for (const auto& [stem, path] : vis) {
    ImagePair p{stem, load_image(path), load_image(ir.at(stem))};
    if (p.ir.channels != 1) throw ContractError("infrared image " + ir.at(stem).string() + " must be grayscale");
    if (!p.vis.same_size(p.ir)) throw ContractError("pair " + stem + ": modalities differ in size");
    pairs.push_back(std::move(p));
  }
  return pairs;
}

Image pad_to_multiple(const Image& img, std::size_t multiple) {
  const std::size_t h = (img.height + multiple - 1) / multiple * multiple;
  const std::size_t w = (img.width + multiple - 1) / multiple * multiple;
  Image out(h, w, img.channels);
  for (std::size_t c = 0; c < img.channels; ++c) {
    for (std::size_t y = 0; y < h; ++y) {
      for (std::size_t x = 0; x < w; ++x) {
        out.at(c, y, x) = img.at(c, std::min(y, img.height - 1), std::min(x, img.width - 1));
      }
    }
  }
  return out;
}

Image crop(const Image& img, std::size_t height, std::size_t width) {
  Image out(height, width, img.channels);
  for (std::size_t c = 0; c < img.channels; ++c) {
    for (std::size_t y = 0; y < height; ++y) {
      for (std::size_t x = 0; x < width; ++x) out.at(c, y, x) = img.at(c, y, x);
    }
  }
  return out;
}

Image fuse_pair(const nets::SubNet& net, const Image& vis, const Image& ir) {
  if (!vis.same_size(ir)) throw ContractError("fuse: modalities differ in size");
  if (ir.channels != 1) throw ContractError("fuse: infrared image must be grayscale");
  const Image y_vis = to_luminance(vis);
  NoGradGuard no_grad;
  const auto out = net.forward(pad_to_multiple(y_vis, 4).to_tensor(), pad_to_multiple(ir, 4).to_tensor());
  Image fused = crop(Image::from_tensor(out.image), vis.height, vis.width);
  if (vis.channels == 3) {
    YCbCr ycc = rgb_to_ycbcr(vis);
    ycc.y = fused;
    return clamp01(ycbcr_to_rgb(ycc));
  }
  return fused;
}

}  // namespace semfuse
