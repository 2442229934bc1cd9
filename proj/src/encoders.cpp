#include "isgan/encoders.hpp"

#include <sstream>

#include "isgan/errors.hpp"

namespace nn = torch::nn;

namespace isgan {

bool FeatureBundle::complete() const {
  for (const auto& p : parts) {
    if (!p.defined() || p.size(-1) != dim) return false;
  }
  return dim > 0;
}

torch::Tensor concat_bundle(const FeatureBundle& bundle) {
  for (int k = 0; k < kNumParts; ++k) {
    if (!bundle.parts[k].defined()) {
      throw std::invalid_argument("feature bundle is missing part " + std::to_string(k));
    }
    if (bundle.parts[k].size(-1) != bundle.dim) {
      throw std::invalid_argument("feature bundle part " + std::to_string(k) +
                                  " has the wrong dimension");
    }
  }
  return torch::cat(std::vector<torch::Tensor>(bundle.parts.begin(), bundle.parts.end()), -1);
}

FeatureBundle split_bundle(const torch::Tensor& flat, int64_t part_dim) {
  if (part_dim <= 0 || flat.size(-1) != kNumParts * part_dim) {
    throw std::invalid_argument("cannot split a vector of length " +
                                std::to_string(flat.size(-1)) + " into 8 parts of " +
                                std::to_string(part_dim));
  }
  FeatureBundle out;
  out.dim = part_dim;
  auto chunks = flat.split(part_dim, -1);
  for (int k = 0; k < kNumParts; ++k) out.parts[k] = chunks[k];
  return out;
}

torch::Tensor reparameterize(const torch::Tensor& mu, const torch::Tensor& logvar,
                             const torch::Tensor& eps) {
  return mu + torch::exp(0.5 * logvar) * eps;
}

std::string to_string(BackboneVariant variant) {
  return variant == BackboneVariant::small_convnet ? "small_convnet" : "resnet50_conv4_1";
}

BackboneVariant backbone_from_string(const std::string& name) {
  if (name == "small_convnet") return BackboneVariant::small_convnet;
  if (name == "resnet50_conv4_1") return BackboneVariant::resnet50_conv4_1;
  throw ConfigError("unknown backbone variant '" + name + "'");
}

int BackboneConfig::out_channels() const {
  return variant == BackboneVariant::small_convnet ? channels[3] : 1024;
}

int BackboneConfig::stride() const { return variant == BackboneVariant::small_convnet ? 4 : 16; }

namespace {

class ConvBnReluImpl : public nn::Module {
 public:
  ConvBnReluImpl(int in, int out, int kernel, int stride) {
    conv_ = register_module(
        "conv", nn::Conv2d(nn::Conv2dOptions(in, out, kernel).stride(stride).padding(kernel / 2).bias(false)));
    bn_ = register_module("bn", nn::BatchNorm2d(out));
  }
  torch::Tensor forward(const torch::Tensor& x) { return torch::relu(bn_->forward(conv_->forward(x))); }

 private:
  nn::Conv2d conv_{nullptr};
  nn::BatchNorm2d bn_{nullptr};
};
TORCH_MODULE(ConvBnRelu);

ConvBnRelu conv_bn_relu(int in, int out, int kernel, int stride) { return ConvBnRelu(in, out, kernel, stride); }

class BottleneckImpl : public nn::Module {
 public:
  BottleneckImpl(int in, int width, int stride) {
    const int out = width * 4;
    body_ = register_module(
        "body",
        nn::Sequential(nn::Conv2d(nn::Conv2dOptions(in, width, 1).bias(false)), nn::BatchNorm2d(width),
                       nn::ReLU(nn::ReLUOptions(true)),
                       nn::Conv2d(nn::Conv2dOptions(width, width, 3).stride(stride).padding(1).bias(false)),
                       nn::BatchNorm2d(width), nn::ReLU(nn::ReLUOptions(true)),
                       nn::Conv2d(nn::Conv2dOptions(width, out, 1).bias(false)), nn::BatchNorm2d(out)));
    if (stride != 1 || in != out) {
      shortcut_ = register_module(
          "shortcut", nn::Sequential(nn::Conv2d(nn::Conv2dOptions(in, out, 1).stride(stride).bias(false)),
                                     nn::BatchNorm2d(out)));
    }
  }
  torch::Tensor forward(const torch::Tensor& x) {
    auto identity = shortcut_ ? shortcut_->forward(x) : x;
    return torch::relu(body_->forward(x) + identity);
  }

 private:
  nn::Sequential body_{nullptr};
  nn::Sequential shortcut_{nullptr};
};
TORCH_MODULE(Bottleneck);

}  // namespace

SmallConvNetImpl::SmallConvNetImpl(const std::array<int, 4>& c) {
  blocks_ = register_module("blocks", nn::Sequential(conv_bn_relu(3, c[0], 3, 2), conv_bn_relu(c[0], c[1], 3, 2),
                                                     conv_bn_relu(c[1], c[2], 3, 1),
                                                     conv_bn_relu(c[2], c[3], 1, 1)));
}

torch::Tensor SmallConvNetImpl::forward(const torch::Tensor& x) { return blocks_->forward(x); }

ResNet50Conv41Impl::ResNet50Conv41Impl() {
  stem_ = register_module(
      "stem", nn::Sequential(nn::Conv2d(nn::Conv2dOptions(3, 64, 7).stride(2).padding(3).bias(false)),
                             nn::BatchNorm2d(64), nn::ReLU(nn::ReLUOptions(true)),
                             nn::MaxPool2d(nn::MaxPool2dOptions(3).stride(2).padding(1))));
  nn::Sequential layers;
  int in = 64;
  // conv2_x: 3 blocks, conv3_x: 4 blocks, conv4_1: 1 block.
  for (int i = 0; i < 3; ++i, in = 256) layers->push_back(Bottleneck(in, 64, 1));
  for (int i = 0; i < 4; ++i, in = 512) layers->push_back(Bottleneck(in, 128, i == 0 ? 2 : 1));
  layers->push_back(Bottleneck(512, 256, 2));
  layers_ = register_module("layers", layers);
}

torch::Tensor ResNet50Conv41Impl::forward(const torch::Tensor& x) {
  return layers_->forward(stem_->forward(x));
}

BackboneImpl::BackboneImpl(const BackboneConfig& config, data::Resolution resolution)
    : config_(config) {
  const int stride = config.stride();
  if (resolution.height % stride != 0 || resolution.width % stride != 0) {
    throw ConfigError("resolution " + std::to_string(resolution.height) + "x" +
                      std::to_string(resolution.width) + " is not a multiple of the backbone stride " +
                      std::to_string(stride));
  }
  feature_height_ = resolution.height / stride;
  feature_width_ = resolution.width / stride;
  if (feature_height_ % 6 != 0) {
    throw ConfigError("backbone feature height " + std::to_string(feature_height_) +
                      " is not divisible by 6");
  }
  if (config.variant == BackboneVariant::small_convnet) {
    small_ = register_module("small_convnet", SmallConvNet(config.channels));
  } else {
    if (config.pretrained && config.pretrained_path.empty()) {
      throw ConfigError("pretrained resnet backbone requested without pretrained_path");
    }
    resnet_ = register_module("resnet50_conv4_1", ResNet50Conv41());
  }
}

torch::Tensor BackboneImpl::forward(const torch::Tensor& images) {
  return small_ ? small_->forward(images) : resnet_->forward(images);
}

PartBranchImpl::PartBranchImpl(int in_channels, const HeadConfig& config, int num_regions)
    : num_regions_(num_regions) {
  layers_ = register_module(
      "layers", nn::Sequential(conv_bn_relu(in_channels, config.conv_channels, 3, 1),
                               conv_bn_relu(config.conv_channels, config.pooled_channels, 1, 1)));
}

torch::Tensor PartBranchImpl::trunk(const torch::Tensor& x) {
  return layers_->forward(x).amax({2, 3});
}

std::vector<torch::Tensor> PartBranchImpl::forward(const torch::Tensor& fmap) {
  std::vector<torch::Tensor> out;
  out.push_back(trunk(fmap));
  if (num_regions_ == 1) return out;
  const int64_t b = fmap.size(0), c = fmap.size(1), h = fmap.size(2), w = fmap.size(3);
  if (h % num_regions_ != 0) {
    throw std::invalid_argument("feature height " + std::to_string(h) + " not divisible into " +
                                std::to_string(num_regions_) + " stripes");
  }
  // [B, C, n, h/n, W] -> [n*B, C, h/n, W]: stripes become independent samples.
  auto stripes = fmap.reshape({b, c, num_regions_, h / num_regions_, w})
                     .permute({2, 0, 1, 3, 4})
                     .reshape({num_regions_ * b, c, h / num_regions_, w});
  auto pooled = trunk(stripes).view({num_regions_, b, -1});
  for (int r = 0; r < num_regions_; ++r) out.push_back(pooled[r]);
  return out;
}

IdentityEncoderImpl::IdentityEncoderImpl(int in_channels, const HeadConfig& config, int num_classes)
    : config_(config), num_classes_(num_classes) {
  if (num_classes < 1) throw ConfigError("identity encoder needs at least one class");
  for (int b = 0; b < 3; ++b) {
    branches_[b] = register_module("part" + std::to_string(b + 1), PartBranch(in_channels, config, b + 1));
  }
  for (int k = 0; k < kNumParts; ++k) {
    bottlenecks_[k] = register_module(
        "bottleneck" + std::to_string(k),
        nn::Sequential(nn::Linear(nn::LinearOptions(config.pooled_channels, config.part_dim).bias(false)),
                       nn::BatchNorm1d(config.part_dim)));
    classifiers_[k] = register_module(
        "classifier" + std::to_string(k),
        nn::Linear(nn::LinearOptions(config.part_dim, num_classes).bias(false)));
  }
}

IdentityOutput IdentityEncoderImpl::forward(const torch::Tensor& fmap) {
  std::vector<torch::Tensor> pooled;
  for (auto& branch : branches_) {
    for (auto& t : branch->forward(fmap)) pooled.push_back(std::move(t));
  }
  IdentityOutput out;
  out.features.dim = config_.part_dim;
  for (int k = 0; k < kNumParts; ++k) {
    out.features.parts[k] = bottlenecks_[k]->forward(pooled[k]);
    out.logits[k] = classifiers_[k]->forward(out.features.parts[k]);
  }
  return out;
}

UnrelatedEncoderImpl::UnrelatedEncoderImpl(int in_channels, const HeadConfig& config)
    : config_(config) {
  for (int b = 0; b < 3; ++b) {
    branches_[b] = register_module("part" + std::to_string(b + 1), PartBranch(in_channels, config, b + 1));
  }
  for (int k = 0; k < kNumParts; ++k) {
    mu_heads_[k] = register_module("mu" + std::to_string(k),
                                   nn::Linear(config.pooled_channels, config.part_dim));
    logvar_heads_[k] = register_module("logvar" + std::to_string(k),
                                       nn::Linear(config.pooled_channels, config.part_dim));
    // Start near the prior: small weights, zero bias.
    torch::NoGradGuard guard;
    logvar_heads_[k]->weight.mul_(0.1);
    logvar_heads_[k]->bias.zero_();
  }
}

GaussianCode UnrelatedEncoderImpl::forward(const torch::Tensor& fmap, CodeMode mode) {
  std::vector<torch::Tensor> pooled;
  for (auto& branch : branches_) {
    for (auto& t : branch->forward(fmap)) pooled.push_back(std::move(t));
  }
  GaussianCode code;
  code.mu.dim = code.logvar.dim = code.sample.dim = config_.part_dim;
  for (int k = 0; k < kNumParts; ++k) {
    code.mu.parts[k] = mu_heads_[k]->forward(pooled[k]);
    code.logvar.parts[k] = logvar_heads_[k]->forward(pooled[k]);
    if (!torch::isfinite(code.mu.parts[k]).all().item<bool>() ||
        !torch::isfinite(code.logvar.parts[k]).all().item<bool>()) {
      std::ostringstream msg;
      msg << "non-finite identity-unrelated code at part " << k << " (batch of " << fmap.size(0)
          << ", mu abs max " << code.mu.parts[k].abs().max().item<double>() << ", logvar abs max "
          << code.logvar.parts[k].abs().max().item<double>() << ")";
      throw RuntimeFault(msg.str());
    }
    if (mode == CodeMode::deterministic) {
      code.sample.parts[k] = code.mu.parts[k];
    } else {
      code.sample.parts[k] = reparameterize(code.mu.parts[k], code.logvar.parts[k],
                                            torch::randn_like(code.mu.parts[k]));
    }
  }
  return code;
}

}  // namespace isgan
