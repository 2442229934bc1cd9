#pragma once

#include <array>
#include <vector>

#include <torch/torch.h>

#include "isgan/dataset.hpp"

namespace isgan {

struct GeneratorConfig {
  int id_dim = 2048;
  int unrel_dim = 512;
  int noise_dim = 128;
  int num_classes = 751;
  data::Resolution resolution;
  // Output widths of stages 1..5; stage 6 emits RGB.
  std::array<int, 5> channels = {256, 128, 64, 32, 16};
  double dropout = 0.5;
  int dropout_stages = 3;  // dropout after the first N stages

  int conditioning_dim() const { return id_dim + unrel_dim + noise_dim + num_classes; }
};

struct GeneratorInput {
  torch::Tensor id_feature;     // [N, id_dim]
  torch::Tensor unrel_feature;  // [N, unrel_dim]
  torch::Tensor noise;          // [N, noise_dim]
  torch::Tensor label_onehot;   // [N, num_classes]

  // id ⊕ unrel ⊕ noise ⊕ one-hot.
  torch::Tensor conditioning() const;
  GeneratorInput index(const torch::Tensor& rows) const;
};

// Labels in {1..C}; label 0 (an identity unseen in training) maps to the
// all-zero vector.
torch::Tensor one_hot_labels(const std::vector<int>& labels, int num_classes);

GeneratorInput make_generator_input(const torch::Tensor& id_feature, const torch::Tensor& unrel_feature,
                                    const std::vector<int>& labels, int num_classes, int noise_dim);

// Six transposed convolutions from a 1x1 seed: the first expands to
// (H/32, W/32), the remaining five double both sides. BN + LeakyReLU(0.2)
// after stages 1-5, dropout after the first `dropout_stages`, tanh at the end.
class GeneratorImpl : public torch::nn::Module {
 public:
  explicit GeneratorImpl(const GeneratorConfig& config);
  torch::Tensor forward(const GeneratorInput& input);
  torch::Tensor forward_conditioning(const torch::Tensor& conditioning);
  const GeneratorConfig& config() const { return config_; }

 private:
  GeneratorConfig config_;
  torch::nn::Sequential stages_{nullptr};
};
TORCH_MODULE(Generator);

struct DiscriminatorConfig {
  int num_classes = 751;
  data::Resolution resolution;
  std::array<int, 5> trunk_channels = {16, 32, 64, 128, 256};
  int head_channels = 128;
};

struct DiscriminatorOutput {
  torch::Tensor domain_logits;   // [N, 1, H/32, W/32]
  torch::Tensor domain_patches;  // sigmoid(domain_logits)
  torch::Tensor class_logits;    // [N, C]
};

// Shared trunk of five stride-2 conv blocks (instance norm after all but the
// first, LeakyReLU 0.2). Domain head: two stride-1 blocks then a 1-channel
// patch scorer. Class head: one stride-1 block then a fully connected layer.
class DiscriminatorImpl : public torch::nn::Module {
 public:
  explicit DiscriminatorImpl(const DiscriminatorConfig& config);
  DiscriminatorOutput forward(const torch::Tensor& images);
  const DiscriminatorConfig& config() const { return config_; }

 private:
  DiscriminatorConfig config_;
  torch::nn::Sequential trunk_{nullptr};
  torch::nn::Sequential domain_head_{nullptr};
  torch::nn::Sequential class_block_{nullptr};
  torch::nn::Linear class_fc_{nullptr};
};
TORCH_MODULE(Discriminator);

enum class InterpolationAxis { identity, unrelated };

// Linearly blends the chosen feature block from b1 (alpha = 0) to b2
// (alpha = 1) over `steps` evenly spaced alphas; the other block, noise and
// label stay at b1's values. Inputs are single rows ([1, dim]).
std::vector<GeneratorInput> interpolate_inputs(const GeneratorInput& b1, const GeneratorInput& b2,
                                               InterpolationAxis axis, int steps);
std::vector<torch::Tensor> interpolate_generate(Generator& generator, const GeneratorInput& b1,
                                                const GeneratorInput& b2, InterpolationAxis axis,
                                                int steps);

}  // namespace isgan
