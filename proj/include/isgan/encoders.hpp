#pragma once

#include <array>
#include <string>
#include <vector>

#include <torch/torch.h>

#include "isgan/dataset.hpp"

namespace isgan {

// ---------------------------------------------------------------------------
// Part layout
// ---------------------------------------------------------------------------

inline constexpr int kNumParts = 8;
inline constexpr int kNumLocalParts = 5;

enum class Branch { part1, part2, part3 };

struct PartInfo {
  Branch branch;
  int region_index;  // 0 = global, 1..n = horizontal slice counted from the top
  bool is_global;
};

// Concatenation order of every bundle:
// part1-global, part2-global, part2-local1, part2-local2,
// part3-global, part3-local1, part3-local2, part3-local3.
inline constexpr std::array<PartInfo, kNumParts> kPartLayout = {{
    {Branch::part1, 0, true},
    {Branch::part2, 0, true},
    {Branch::part2, 1, false},
    {Branch::part2, 2, false},
    {Branch::part3, 0, true},
    {Branch::part3, 1, false},
    {Branch::part3, 2, false},
    {Branch::part3, 3, false},
}};

// Bundle positions of the local features, in shuffle-mask order.
inline constexpr std::array<int, kNumLocalParts> kLocalPartIndices = {2, 3, 5, 6, 7};

// K part features of one encoder. Each part is [N, dim] (or [dim] unbatched).
struct FeatureBundle {
  std::array<torch::Tensor, kNumParts> parts;
  int64_t dim = 0;

  bool complete() const;
};

// Fixed-order concatenation along the last axis; length 8 * dim.
torch::Tensor concat_bundle(const FeatureBundle& bundle);
FeatureBundle split_bundle(const torch::Tensor& flat, int64_t part_dim);

struct GaussianCode {
  FeatureBundle mu;
  FeatureBundle logvar;
  FeatureBundle sample;
};

enum class CodeMode { sample, deterministic };

// mu + exp(0.5 * logvar) * eps.
torch::Tensor reparameterize(const torch::Tensor& mu, const torch::Tensor& logvar,
                             const torch::Tensor& eps);

// ---------------------------------------------------------------------------
// Backbone
// ---------------------------------------------------------------------------

enum class BackboneVariant { resnet50_conv4_1, small_convnet };

std::string to_string(BackboneVariant variant);
BackboneVariant backbone_from_string(const std::string& name);

struct BackboneConfig {
  BackboneVariant variant = BackboneVariant::small_convnet;
  // small_convnet block widths; the last entry is the output channel count.
  std::array<int, 4> channels = {32, 64, 128, 256};
  bool pretrained = false;          // resnet variant only
  std::string pretrained_path;      // checkpoint holding "backbone.*" blocks

  int out_channels() const;
  int stride() const;
};

// Four conv-BN-ReLU blocks: 3x3/2, 3x3/2, 3x3/1, 1x1/1 (output stride 4).
class SmallConvNetImpl : public torch::nn::Module {
 public:
  explicit SmallConvNetImpl(const std::array<int, 4>& channels);
  torch::Tensor forward(const torch::Tensor& x);

 private:
  torch::nn::Sequential blocks_{nullptr};
};
TORCH_MODULE(SmallConvNet);

// ResNet-50 up to and including the first bottleneck of conv4 (stride 16,
// 1024 channels).
class ResNet50Conv41Impl : public torch::nn::Module {
 public:
  ResNet50Conv41Impl();
  torch::Tensor forward(const torch::Tensor& x);

 private:
  torch::nn::Sequential stem_{nullptr};
  torch::nn::Sequential layers_{nullptr};
};
TORCH_MODULE(ResNet50Conv41);

class BackboneImpl : public torch::nn::Module {
 public:
  // Throws ConfigError unless (resolution.height / stride) is divisible by 6.
  BackboneImpl(const BackboneConfig& config, data::Resolution resolution);
  torch::Tensor forward(const torch::Tensor& images);

  const BackboneConfig& config() const { return config_; }
  int64_t feature_height() const { return feature_height_; }
  int64_t feature_width() const { return feature_width_; }

 private:
  BackboneConfig config_;
  int64_t feature_height_ = 0;
  int64_t feature_width_ = 0;
  SmallConvNet small_{nullptr};
  ResNet50Conv41 resnet_{nullptr};
};
TORCH_MODULE(Backbone);

// ---------------------------------------------------------------------------
// Heads
// ---------------------------------------------------------------------------

struct HeadConfig {
  int part_dim = 256;        // p
  int conv_channels = 32;    // 3x3 conv width
  int pooled_channels = 64;  // 1x1 conv width, pooled before the bottleneck
};

// 3x3 conv -> BN -> ReLU -> 1x1 conv -> BN -> ReLU, then region-wise global max
// pooling. Local regions are convolved as independent slices so a local
// feature depends only on the rows of its own stripe.
class PartBranchImpl : public torch::nn::Module {
 public:
  PartBranchImpl(int in_channels, const HeadConfig& config, int num_regions);
  // Returns [global, local1, ..., localN] pooled vectors of [B, pooled_channels];
  // a single entry when num_regions == 1.
  std::vector<torch::Tensor> forward(const torch::Tensor& fmap);
  int num_regions() const { return num_regions_; }

 private:
  torch::Tensor trunk(const torch::Tensor& x);

  int num_regions_;
  torch::nn::Sequential layers_{nullptr};
};
TORCH_MODULE(PartBranch);

struct IdentityOutput {
  FeatureBundle features;
  std::array<torch::Tensor, kNumParts> logits;  // [N, C] per part
};

// E_R: part-1/2/3 branches, a linear+BN bottleneck per part feature and a
// bias-free classifier w^k per part.
class IdentityEncoderImpl : public torch::nn::Module {
 public:
  IdentityEncoderImpl(int in_channels, const HeadConfig& config, int num_classes);
  IdentityOutput forward(const torch::Tensor& fmap);
  int64_t part_dim() const { return config_.part_dim; }
  int num_classes() const { return num_classes_; }

  std::array<torch::nn::Linear, kNumParts>& classifiers() { return classifiers_; }

 private:
  HeadConfig config_;
  int num_classes_;
  std::array<PartBranch, 3> branches_{nullptr, nullptr, nullptr};
  std::array<torch::nn::Sequential, kNumParts> bottlenecks_;
  std::array<torch::nn::Linear, kNumParts> classifiers_{nullptr, nullptr, nullptr, nullptr,
                                                        nullptr, nullptr, nullptr, nullptr};
};
TORCH_MODULE(IdentityEncoder);

// E_U: same branch geometry, emitting a Gaussian (mu, logvar) per part.
class UnrelatedEncoderImpl : public torch::nn::Module {
 public:
  UnrelatedEncoderImpl(int in_channels, const HeadConfig& config);
  // Throws RuntimeFault when mu/logvar are non-finite.
  GaussianCode forward(const torch::Tensor& fmap, CodeMode mode);
  int64_t part_dim() const { return config_.part_dim; }

 private:
  HeadConfig config_;
  std::array<PartBranch, 3> branches_{nullptr, nullptr, nullptr};
  std::array<torch::nn::Linear, kNumParts> mu_heads_{nullptr, nullptr, nullptr, nullptr,
                                                     nullptr, nullptr, nullptr, nullptr};
  std::array<torch::nn::Linear, kNumParts> logvar_heads_{nullptr, nullptr, nullptr, nullptr,
                                                         nullptr, nullptr, nullptr, nullptr};
};
TORCH_MODULE(UnrelatedEncoder);

}  // namespace isgan
