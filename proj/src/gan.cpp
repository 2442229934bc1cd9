#include "isgan/gan.hpp"

#include <stdexcept>

#include "isgan/errors.hpp"

namespace nn = torch::nn;

namespace isgan {

torch::Tensor GeneratorInput::conditioning() const {
  return torch::cat({id_feature, unrel_feature, noise, label_onehot}, -1);
}

GeneratorInput GeneratorInput::index(const torch::Tensor& rows) const {
  return {id_feature.index_select(0, rows), unrel_feature.index_select(0, rows),
          noise.index_select(0, rows), label_onehot.index_select(0, rows)};
}

torch::Tensor one_hot_labels(const std::vector<int>& labels, int num_classes) {
  auto out = torch::zeros({static_cast<int64_t>(labels.size()), num_classes});
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (labels[i] < 0 || labels[i] > num_classes) {
      throw std::invalid_argument("label " + std::to_string(labels[i]) + " outside {0..C}");
    }
    if (labels[i] > 0) out[static_cast<int64_t>(i)][labels[i] - 1] = 1.0f;
  }
  return out;
}

GeneratorInput make_generator_input(const torch::Tensor& id_feature, const torch::Tensor& unrel_feature,
                                    const std::vector<int>& labels, int num_classes, int noise_dim) {
  const int64_t n = id_feature.size(0);
  return {id_feature, unrel_feature, torch::randn({n, noise_dim}, id_feature.options()),
          one_hot_labels(labels, num_classes).to(id_feature.options())};
}

GeneratorImpl::GeneratorImpl(const GeneratorConfig& config) : config_(config) {
  const auto& res = config.resolution;
  if (res.height % 32 != 0 || res.width % 32 != 0) {
    throw ConfigError("generator resolution must be a multiple of 32 on both sides");
  }
  nn::Sequential stages;
  int in = config.conditioning_dim();
  for (int s = 0; s < 5; ++s) {
    const int out = config.channels[s];
    if (s == 0) {
      stages->push_back(nn::ConvTranspose2d(
          nn::ConvTranspose2dOptions(in, out, {res.height / 32, res.width / 32}).bias(false)));
    } else {
      stages->push_back(
          nn::ConvTranspose2d(nn::ConvTranspose2dOptions(in, out, 4).stride(2).padding(1).bias(false)));
    }
    stages->push_back(nn::BatchNorm2d(out));
    stages->push_back(nn::LeakyReLU(nn::LeakyReLUOptions().negative_slope(0.2)));
    if (s < config.dropout_stages && config.dropout > 0.0) {
      stages->push_back(nn::Dropout(nn::DropoutOptions(config.dropout)));
    }
    in = out;
  }
  stages->push_back(nn::ConvTranspose2d(nn::ConvTranspose2dOptions(in, 3, 4).stride(2).padding(1)));
  stages->push_back(nn::Tanh());
  stages_ = register_module("stages", stages);
}

torch::Tensor GeneratorImpl::forward_conditioning(const torch::Tensor& conditioning) {
  if (conditioning.dim() != 2 || conditioning.size(1) != config_.conditioning_dim()) {
    throw std::invalid_argument("generator expects [N, " + std::to_string(config_.conditioning_dim()) +
                                "] conditioning, got " + std::to_string(conditioning.size(-1)));
  }
  return stages_->forward(conditioning.view({conditioning.size(0), conditioning.size(1), 1, 1}));
}

torch::Tensor GeneratorImpl::forward(const GeneratorInput& input) {
  if (input.id_feature.size(-1) != config_.id_dim || input.unrel_feature.size(-1) != config_.unrel_dim ||
      input.noise.size(-1) != config_.noise_dim || input.label_onehot.size(-1) != config_.num_classes) {
    throw std::invalid_argument("generator input dimensions do not match the configuration");
  }
  return forward_conditioning(input.conditioning());
}

DiscriminatorImpl::DiscriminatorImpl(const DiscriminatorConfig& config) : config_(config) {
  const auto& res = config.resolution;
  if (res.height % 32 != 0 || res.width % 32 != 0) {
    throw ConfigError("discriminator resolution must be a multiple of 32 on both sides");
  }
  auto lrelu = [] { return nn::LeakyReLU(nn::LeakyReLUOptions().negative_slope(0.2)); };
  nn::Sequential trunk;
  int in = 3;
  for (int b = 0; b < 5; ++b) {
    const int out = config.trunk_channels[b];
    trunk->push_back(nn::Conv2d(nn::Conv2dOptions(in, out, 4).stride(2).padding(1)));
    if (b > 0) trunk->push_back(nn::InstanceNorm2d(nn::InstanceNorm2dOptions(out).affine(true)));
    trunk->push_back(lrelu());
    in = out;
  }
  trunk_ = register_module("trunk", trunk);

  const int hc = config.head_channels;
  domain_head_ = register_module(
      "domain_head", nn::Sequential(nn::Conv2d(nn::Conv2dOptions(in, hc, 3).padding(1)), lrelu(),
                                    nn::Conv2d(nn::Conv2dOptions(hc, hc, 3).padding(1)), lrelu(),
                                    nn::Conv2d(nn::Conv2dOptions(hc, 1, 3).padding(1))));
  class_block_ = register_module(
      "class_block", nn::Sequential(nn::Conv2d(nn::Conv2dOptions(in, hc, 3).padding(1)), lrelu()));
  class_fc_ = register_module(
      "class_fc", nn::Linear(hc * (res.height / 32) * (res.width / 32), config.num_classes));
}

DiscriminatorOutput DiscriminatorImpl::forward(const torch::Tensor& images) {
  auto shared = trunk_->forward(images);
  DiscriminatorOutput out;
  out.domain_logits = domain_head_->forward(shared);
  out.domain_patches = torch::sigmoid(out.domain_logits);
  out.class_logits = class_fc_->forward(class_block_->forward(shared).flatten(1));
  return out;
}

std::vector<GeneratorInput> interpolate_inputs(const GeneratorInput& b1, const GeneratorInput& b2,
                                               InterpolationAxis axis, int steps) {
  if (steps < 2) throw std::invalid_argument("interpolation needs at least 2 steps");
  std::vector<GeneratorInput> out;
  out.reserve(steps);
  for (int s = 0; s < steps; ++s) {
    const double alpha = static_cast<double>(s) / (steps - 1);
    GeneratorInput g = b1;
    if (axis == InterpolationAxis::identity) {
      g.id_feature = alpha == 0.0 ? b1.id_feature
                     : alpha == 1.0 ? b2.id_feature
                                    : torch::lerp(b1.id_feature, b2.id_feature, alpha);
    } else {
      g.unrel_feature = alpha == 0.0 ? b1.unrel_feature
                        : alpha == 1.0 ? b2.unrel_feature
                                       : torch::lerp(b1.unrel_feature, b2.unrel_feature, alpha);
    }
    out.push_back(std::move(g));
  }
  return out;
}

std::vector<torch::Tensor> interpolate_generate(Generator& generator, const GeneratorInput& b1,
                                                const GeneratorInput& b2, InterpolationAxis axis,
                                                int steps) {
  std::vector<torch::Tensor> out;
  for (const auto& in : interpolate_inputs(b1, b2, axis, steps)) {
    out.push_back(generator->forward(in)[0]);
  }
  return out;
}

}  // namespace isgan
