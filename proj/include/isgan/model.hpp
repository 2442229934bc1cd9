#pragma once

#include <string>
#include <vector>

#include <nlohmann/json.hpp>
#include <torch/torch.h>

#include "isgan/encoders.hpp"
#include "isgan/gan.hpp"

namespace isgan {

struct ModelConfig {
  data::Resolution resolution;
  BackboneConfig backbone;
  HeadConfig identity_head{256, 32, 64};
  HeadConfig unrelated_head{64, 16, 32};
  int num_classes = 10;
  int noise_dim = 128;
  std::array<int, 5> generator_channels = {256, 128, 64, 32, 16};
  double generator_dropout = 0.5;
  int generator_dropout_stages = 3;
  std::array<int, 5> discriminator_channels = {16, 32, 64, 128, 256};
  int discriminator_head_channels = 128;

  int id_dim() const { return kNumParts * identity_head.part_dim; }
  int unrel_dim() const { return kNumParts * unrelated_head.part_dim; }
  GeneratorConfig generator() const;
  DiscriminatorConfig discriminator() const;

  // Widths used for full-resolution runs (384x128, ResNet-50 conv4-1 backbone).
  static ModelConfig full_scale(int num_classes);
  // CPU-sized defaults for 96x32 inputs.
  static ModelConfig desk_scale(int num_classes);
};

void to_json(nlohmann::json& j, const ModelConfig& c);
void from_json(const nlohmann::json& j, ModelConfig& c);

// Backbone shared by E_R and E_U, both heads, G and the two discriminators
// (sharing one trunk). Parameter names are prefixed by the submodule name.
class IsganModelImpl : public torch::nn::Module {
 public:
  explicit IsganModelImpl(const ModelConfig& config);

  const ModelConfig& config() const { return config_; }

  Backbone backbone{nullptr};
  IdentityEncoder identity_encoder{nullptr};
  UnrelatedEncoder unrelated_encoder{nullptr};
  Generator generator{nullptr};
  Discriminator discriminator{nullptr};

  // Parameters of the stage-1 baseline: backbone + E_R (incl. classifiers).
  std::vector<torch::Tensor> baseline_parameters();
  std::vector<torch::Tensor> unrelated_parameters();
  std::vector<torch::Tensor> generator_parameters();
  std::vector<torch::Tensor> discriminator_parameters();

 private:
  ModelConfig config_;
};
TORCH_MODULE(IsganModel);

// FNV-1a over the raw bytes of every parameter and buffer of `module`.
std::uint64_t parameter_hash(const torch::nn::Module& module);

}  // namespace isgan
