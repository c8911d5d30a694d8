#include "semfuse/networks.hpp"

#include <cmath>
#include <cstring>
#include <sstream>

#include "semfuse/errors.hpp"
#include "semfuse/init.hpp"
#include "semfuse/ops.hpp"

namespace semfuse::nets {

std::size_t param_count(const ParameterList& params) {
  std::size_t n = 0;
  for (const auto& [name, t] : params) n += t.numel();
  return n;
}

Tensor Conv::operator()(const Tensor& x) const {
  return ops::conv2d(x, weight, bias, weight.dim(2) / 2, stride);
}

void Conv::collect(const std::string& prefix, ParameterList& out) const {
  out.emplace_back(prefix + ".weight", weight);
  out.emplace_back(prefix + ".bias", bias);
}

Conv make_conv(std::size_t cin, std::size_t cout, std::size_t k, std::size_t stride, Rng& rng) {
  return Conv{conv_weight(cout, cin, k, rng, true), Tensor::zeros({cout}, true), stride};
}

DenseBlock make_dense_block(std::size_t in_channels, std::size_t growth, std::size_t layers, Rng& rng) {
  DenseBlock block{in_channels, growth, {}};
  for (std::size_t i = 0; i < layers; ++i) block.layers.push_back(make_conv(in_channels + i * growth, growth, 3, 1, rng));
  return block;
}

Tensor dense_block(const Tensor& x, const DenseBlock& block) {
  if (x.rank() != 3 || x.dim(0) != block.in_channels) {
    throw DimensionError("dense_block: input " + shape_str(x.shape()) + " but block expects " +
                         std::to_string(block.in_channels) + " channels");
  }
  Tensor features = x;
  for (const auto& layer : block.layers) {
    features = ops::concat({features, ops::silu(layer(features))});
  }
  return features;
}

namespace {

// Linear projection weights: uniform with unit gain, U(-sqrt(3/fan_in), sqrt(3/fan_in)).
Tensor projection(std::size_t rows, std::size_t cols, Rng& rng) {
  const double bound = std::sqrt(3.0 / static_cast<double>(cols));
  std::vector<double> v(rows * cols);
  for (auto& x : v) x = rng.uniform(-bound, bound);
  return Tensor::from({rows, cols}, std::move(v), true);
}

void require_image_pair(const Tensor& vis, const Tensor& ir) {
  for (const Tensor* t : {&vis, &ir}) {
    if (t->rank() != 3 || t->dim(0) != 1) {
      throw DimensionError("network input must be [1 x H x W], got " + shape_str(t->shape()));
    }
  }
  if (vis.shape() != ir.shape()) {
    throw ContractError("modalities differ in size: " + shape_str(vis.shape()) + " vs " +
                        shape_str(ir.shape()));
  }
  if (vis.dim(1) % 4 != 0 || vis.dim(2) % 4 != 0) {
    throw DimensionError("network input extents must be multiples of 4, got " + shape_str(vis.shape()));
  }
}

std::uint64_t fnv1a(const unsigned char* p, std::size_t n, std::uint64_t h = 1469598103934665603ull) {
  for (std::size_t i = 0; i < n; ++i) {
    h ^= p[i];
    h *= 1099511628211ull;
  }
  return h;
}

}  // namespace

MainNet::MainNet(const MainNetConfig& config, std::uint64_t seed) : config_(config) {
  Rng rng(seed);
  const std::size_t d = config.spa.dim();
  const std::size_t stem = config.stem_channels;
  src1_ = make_conv(2, stem, 3, 1, rng);
  src2_ = make_conv(stem, d, 3, 2, rng);
  src3_ = make_conv(d, d, 3, 2, rng);
  patch1_ = make_conv(1, stem, 3, 1, rng);
  patch2_ = make_conv(stem, d, 3, 2, rng);
  patch3_ = make_conv(d, d, 3, 2, rng);
  repo_ = {projection(d, d, rng), projection(d, d, rng), projection(d, d, rng)};
  for (std::size_t m = 0; m < config.stages; ++m) {
    spa::StageParams s;
    s.q_vis = projection(d, d, rng);
    s.q_ir = projection(d, d, rng);
    s.merge_vis = projection(d, d, rng);
    s.merge_ir = projection(d, d, rng);
    s.out = projection(d, 2 * d, rng);
    s.out_bias = Tensor::zeros({d}, true);
    stages_.push_back(std::move(s));
  }
  dec1_ = make_conv(d + stem, stem, 3, 1, rng);
  dec2_ = make_conv(stem, 1, 3, 1, rng);
}

NetOutput MainNet::forward(const Tensor& vis, const Tensor& ir, const std::vector<Tensor>& vis_patches,
                           const std::vector<Tensor>& ir_patches) const {
  require_image_pair(vis, ir);
  if (vis_patches.empty() && ir_patches.empty()) {
    throw ContractError("main network needs at least one semantic patch");
  }
  const Tensor f0 = ops::silu(src1_(ops::concat({vis, ir})));
  const Tensor f_src = ops::silu(src3_(ops::silu(src2_(f0))));
  const spa::PersistentRepository pr = spa::build_repository(f_src, repo_, config_.repository);

  auto encode = [&](const std::vector<Tensor>& patches) {
    if (patches.empty()) return Tensor::zeros(f_src.shape());
    Tensor acc;
    for (const auto& p : patches) {
      if (p.shape() != vis.shape()) {
        throw ContractError("patch " + shape_str(p.shape()) + " does not match image " + shape_str(vis.shape()));
      }
      const Tensor e = ops::silu(patch3_(ops::silu(patch2_(ops::silu(patch1_(p))))));
      acc = acc.defined() ? ops::add(acc, e) : e;
    }
    return acc;
  };
  Tensor q_vis = encode(vis_patches);
  Tensor q_ir = encode(ir_patches);

  NetOutput out;
  Tensor last;
  for (const auto& stage : stages_) {
    const spa::SpaResult r = spa::spa_stage(q_vis, q_ir, pr, stage, config_.spa);
    out.feats.push_back(r.fused);
    q_vis = ops::add(q_vis, r.vis);
    q_ir = ops::add(q_ir, r.ir);
    last = r.fused;
  }
  const Tensor h = ops::silu(ops::add(last, f_src));
  const Tensor up = ops::upsample_nearest(h, 4);
  out.image = ops::sigmoid(dec2_(ops::silu(dec1_(ops::concat({up, f0})))));
  return out;
}

ParameterList MainNet::parameters() const {
  ParameterList out;
  src1_.collect("src.0", out);
  src2_.collect("src.1", out);
  src3_.collect("src.2", out);
  patch1_.collect("patch.0", out);
  patch2_.collect("patch.1", out);
  patch3_.collect("patch.2", out);
  out.emplace_back("repo.w_z", repo_.w_z);
  out.emplace_back("repo.w_k", repo_.w_k);
  out.emplace_back("repo.w_v", repo_.w_v);
  for (std::size_t m = 0; m < stages_.size(); ++m) {
    const std::string p = "spa." + std::to_string(m) + ".";
    out.emplace_back(p + "q_vis", stages_[m].q_vis);
    out.emplace_back(p + "q_ir", stages_[m].q_ir);
    out.emplace_back(p + "merge_vis", stages_[m].merge_vis);
    out.emplace_back(p + "merge_ir", stages_[m].merge_ir);
    out.emplace_back(p + "out", stages_[m].out);
    out.emplace_back(p + "out_bias", stages_[m].out_bias);
  }
  dec1_.collect("dec.0", out);
  dec2_.collect("dec.1", out);
  return out;
}

std::string MainNet::config_string() const {
  std::ostringstream os;
  os << "main/v1 stages=" << config_.stages << " stem=" << config_.stem_channels
     << " heads=" << config_.spa.heads << " head_dim=" << config_.spa.head_dim
     << " repository=" << static_cast<int>(config_.repository);
  return os.str();
}

SubNet::SubNet(const SubNetConfig& config, std::uint64_t seed) : config_(config) {
  Rng rng(seed);
  stem_ = make_conv(2, config.stem_channels, 3, 1, rng);
  down1_ = make_conv(config.stem_channels, config.width, 3, 2, rng);
  down2_ = make_conv(config.width, config.width, 3, 2, rng);
  for (std::size_t m = 0; m < config.stages; ++m) {
    blocks_.push_back(make_dense_block(config.width, config.growth, config.layers_per_block, rng));
    transitions_.push_back(make_conv(blocks_.back().out_channels(), config.width, 1, 1, rng));
    adapters_.push_back(make_conv(config.width, config.feature_dim, 1, 1, rng));
  }
  head1_ = make_conv(config.width + config.stem_channels, config.stem_channels, 3, 1, rng);
  head2_ = make_conv(config.stem_channels, 1, 3, 1, rng);
}

NetOutput SubNet::forward(const Tensor& vis, const Tensor& ir) const {
  require_image_pair(vis, ir);
  const Tensor s0 = ops::silu(stem_(ops::concat({vis, ir})));
  Tensor h = ops::silu(down2_(ops::silu(down1_(s0))));
  NetOutput out;
  for (std::size_t m = 0; m < blocks_.size(); ++m) {
    h = ops::silu(transitions_[m](dense_block(h, blocks_[m])));
    out.feats.push_back(adapters_[m](h));
  }
  const Tensor up = ops::upsample_nearest(h, 4);
  out.image = ops::sigmoid(head2_(ops::silu(head1_(ops::concat({up, s0})))));
  return out;
}

ParameterList SubNet::parameters() const {
  ParameterList out;
  stem_.collect("stem", out);
  down1_.collect("down.0", out);
  down2_.collect("down.1", out);
  for (std::size_t m = 0; m < blocks_.size(); ++m) {
    const std::string p = "block." + std::to_string(m);
    for (std::size_t l = 0; l < blocks_[m].layers.size(); ++l) {
      blocks_[m].layers[l].collect(p + ".layer." + std::to_string(l), out);
    }
    transitions_[m].collect("transition." + std::to_string(m), out);
    adapters_[m].collect("adapter." + std::to_string(m), out);
  }
  head1_.collect("head.0", out);
  head2_.collect("head.1", out);
  return out;
}

std::string SubNet::config_string() const {
  std::ostringstream os;
  os << "sub/v1 stages=" << config_.stages << " stem=" << config_.stem_channels
     << " width=" << config_.width << " growth=" << config_.growth
     << " layers=" << config_.layers_per_block << " feature_dim=" << config_.feature_dim;
  return os.str();
}

std::uint64_t config_digest(const std::string& config) {
  return fnv1a(reinterpret_cast<const unsigned char*>(config.data()), config.size());
}

std::uint64_t parameter_checksum(const ParameterList& params) {
  std::uint64_t h = 1469598103934665603ull;
  for (const auto& [name, t] : params) {
    h = fnv1a(reinterpret_cast<const unsigned char*>(name.data()), name.size(), h);
    for (double v : t.data()) {
      unsigned char bytes[sizeof(double)];
      std::memcpy(bytes, &v, sizeof v);
      h = fnv1a(bytes, sizeof v, h);
    }
  }
  return h;
}

}  // namespace semfuse::nets
