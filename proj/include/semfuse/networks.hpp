#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "semfuse/gradcheck.hpp"
#include "semfuse/rng.hpp"
#include "semfuse/spa.hpp"
#include "semfuse/tensor.hpp"

namespace semfuse::nets {

using ParameterList = std::vector<NamedTensor>;

std::size_t param_count(const ParameterList& params);

// Conv layer with bias, 'same' padding for stride 1.
struct Conv {
  Tensor weight;  // [cout x cin x k x k]
  Tensor bias;    // [cout]
  std::size_t stride = 1;

  Tensor operator()(const Tensor& x) const;
  void collect(const std::string& prefix, ParameterList& out) const;
};

Conv make_conv(std::size_t cin, std::size_t cout, std::size_t k, std::size_t stride, Rng& rng);

struct DenseBlock {
  std::size_t in_channels = 0;
  std::size_t growth = 0;
  std::vector<Conv> layers;  // layer i: (in + i*growth) -> growth, 3x3

  std::size_t out_channels() const { return in_channels + layers.size() * growth; }
};

DenseBlock make_dense_block(std::size_t in_channels, std::size_t growth, std::size_t layers, Rng& rng);

// Each layer sees the concatenation of the block input and all earlier layer
// outputs; the block returns that concatenation after the last layer.
Tensor dense_block(const Tensor& x, const DenseBlock& block);

struct MainNetConfig {
  std::size_t stages = 3;
  std::size_t stem_channels = 16;
  spa::SpaConfig spa;
  spa::RepositoryMode repository = spa::RepositoryMode::Full;
};

struct SubNetConfig {
  std::size_t stages = 3;
  std::size_t stem_channels = 16;
  std::size_t width = 32;
  std::size_t growth = 16;
  std::size_t layers_per_block = 4;
  std::size_t feature_dim = 32;  // must match the teacher's attention width
};

struct NetOutput {
  Tensor image;                // [1 x H x W], sigmoid output
  std::vector<Tensor> feats;   // one [d x H/4 x W/4] map per stage
};

// Teacher: source encoder, persistent repository, stacked SPA blocks and a
// decoder. Inputs are [1 x H x W] with H and W divisible by 4.
class MainNet {
 public:
  explicit MainNet(const MainNetConfig& config = {}, std::uint64_t seed = 1);

  NetOutput forward(const Tensor& vis, const Tensor& ir, const std::vector<Tensor>& vis_patches,
                    const std::vector<Tensor>& ir_patches) const;

  ParameterList parameters() const;
  const MainNetConfig& config() const { return config_; }
  std::string config_string() const;

 private:
  MainNetConfig config_;
  Conv src1_, src2_, src3_;
  Conv patch1_, patch2_, patch3_;
  spa::RepositoryParams repo_;
  std::vector<spa::StageParams> stages_;
  Conv dec1_, dec2_;
};

// Student: stem, strided downsampling, dense blocks with transitions and
// 1x1 feature adapters, then an upsampling head with a full-resolution skip.
class SubNet {
 public:
  explicit SubNet(const SubNetConfig& config = {}, std::uint64_t seed = 2);

  NetOutput forward(const Tensor& vis, const Tensor& ir) const;

  ParameterList parameters() const;
  const SubNetConfig& config() const { return config_; }
  std::string config_string() const;

 private:
  SubNetConfig config_;
  Conv stem_, down1_, down2_;
  std::vector<DenseBlock> blocks_;
  std::vector<Conv> transitions_;
  std::vector<Conv> adapters_;
  Conv head1_, head2_;
};

// FNV-1a of a configuration string; stored in checkpoints.
std::uint64_t config_digest(const std::string& config);
// FNV-1a over all parameter bytes in declaration order.
std::uint64_t parameter_checksum(const ParameterList& params);

}  // namespace semfuse::nets
