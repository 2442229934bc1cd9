#include "isgan/model.hpp"

#include "isgan/hash.hpp"

namespace isgan {

GeneratorConfig ModelConfig::generator() const {
  GeneratorConfig g;
  g.id_dim = id_dim();
  g.unrel_dim = unrel_dim();
  g.noise_dim = noise_dim;
  g.num_classes = num_classes;
  g.resolution = resolution;
  g.channels = generator_channels;
  g.dropout = generator_dropout;
  g.dropout_stages = generator_dropout_stages;
  return g;
}

DiscriminatorConfig ModelConfig::discriminator() const {
  DiscriminatorConfig d;
  d.num_classes = num_classes;
  d.resolution = resolution;
  d.trunk_channels = discriminator_channels;
  d.head_channels = discriminator_head_channels;
  return d;
}

ModelConfig ModelConfig::full_scale(int num_classes) {
  ModelConfig c;
  c.resolution = {384, 128};
  c.backbone.variant = BackboneVariant::resnet50_conv4_1;
  c.identity_head = {256, 512, 2048};
  c.unrelated_head = {64, 256, 512};
  c.num_classes = num_classes;
  c.noise_dim = 128;
  c.generator_channels = {256, 256, 128, 64, 32};
  c.discriminator_channels = {64, 128, 256, 512, 512};
  c.discriminator_head_channels = 256;
  return c;
}

ModelConfig ModelConfig::desk_scale(int num_classes) {
  ModelConfig c;
  c.num_classes = num_classes;
  return c;
}

void to_json(nlohmann::json& j, const ModelConfig& c) {
  j = nlohmann::json{
      {"resolution", {c.resolution.height, c.resolution.width}},
      {"backbone",
       {{"variant", to_string(c.backbone.variant)},
        {"channels", c.backbone.channels},
        {"pretrained", c.backbone.pretrained},
        {"pretrained_path", c.backbone.pretrained_path}}},
      {"identity_head",
       {{"part_dim", c.identity_head.part_dim},
        {"conv_channels", c.identity_head.conv_channels},
        {"pooled_channels", c.identity_head.pooled_channels}}},
      {"unrelated_head",
       {{"part_dim", c.unrelated_head.part_dim},
        {"conv_channels", c.unrelated_head.conv_channels},
        {"pooled_channels", c.unrelated_head.pooled_channels}}},
      {"num_classes", c.num_classes},
      {"noise_dim", c.noise_dim},
      {"generator_channels", c.generator_channels},
      {"generator_dropout", c.generator_dropout},
      {"generator_dropout_stages", c.generator_dropout_stages},
      {"discriminator_channels", c.discriminator_channels},
      {"discriminator_head_channels", c.discriminator_head_channels},
  };
}

namespace {
void head_from_json(const nlohmann::json& j, HeadConfig& h) {
  h.part_dim = j.value("part_dim", h.part_dim);
  h.conv_channels = j.value("conv_channels", h.conv_channels);
  h.pooled_channels = j.value("pooled_channels", h.pooled_channels);
}
}  // namespace

void from_json(const nlohmann::json& j, ModelConfig& c) {
  if (j.contains("resolution")) {
    c.resolution.height = j["resolution"].at(0).get<int>();
    c.resolution.width = j["resolution"].at(1).get<int>();
  }
  if (j.contains("backbone")) {
    const auto& b = j["backbone"];
    if (b.contains("variant")) c.backbone.variant = backbone_from_string(b["variant"].get<std::string>());
    c.backbone.channels = b.value("channels", c.backbone.channels);
    c.backbone.pretrained = b.value("pretrained", c.backbone.pretrained);
    c.backbone.pretrained_path = b.value("pretrained_path", c.backbone.pretrained_path);
  }
  if (j.contains("identity_head")) head_from_json(j["identity_head"], c.identity_head);
  if (j.contains("unrelated_head")) head_from_json(j["unrelated_head"], c.unrelated_head);
  c.num_classes = j.value("num_classes", c.num_classes);
  c.noise_dim = j.value("noise_dim", c.noise_dim);
  c.generator_channels = j.value("generator_channels", c.generator_channels);
  c.generator_dropout = j.value("generator_dropout", c.generator_dropout);
  c.generator_dropout_stages = j.value("generator_dropout_stages", c.generator_dropout_stages);
  c.discriminator_channels = j.value("discriminator_channels", c.discriminator_channels);
  c.discriminator_head_channels = j.value("discriminator_head_channels", c.discriminator_head_channels);
}

IsganModelImpl::IsganModelImpl(const ModelConfig& config) : config_(config) {
  backbone = register_module("backbone", Backbone(config.backbone, config.resolution));
  const int ch = config.backbone.out_channels();
  identity_encoder =
      register_module("identity_encoder", IdentityEncoder(ch, config.identity_head, config.num_classes));
  unrelated_encoder = register_module("unrelated_encoder", UnrelatedEncoder(ch, config.unrelated_head));
  generator = register_module("generator", Generator(config.generator()));
  discriminator = register_module("discriminator", Discriminator(config.discriminator()));
}

namespace {
std::vector<torch::Tensor> concat(std::vector<torch::Tensor> a, const std::vector<torch::Tensor>& b) {
  a.insert(a.end(), b.begin(), b.end());
  return a;
}
}  // namespace

std::vector<torch::Tensor> IsganModelImpl::baseline_parameters() {
  return concat(backbone->parameters(), identity_encoder->parameters());
}

std::vector<torch::Tensor> IsganModelImpl::unrelated_parameters() {
  return unrelated_encoder->parameters();
}

std::vector<torch::Tensor> IsganModelImpl::generator_parameters() { return generator->parameters(); }

std::vector<torch::Tensor> IsganModelImpl::discriminator_parameters() {
  return discriminator->parameters();
}

std::uint64_t parameter_hash(const torch::nn::Module& module) {
  Fnv1a h;
  auto feed = [&](const std::string& name, const torch::Tensor& t) {
    h.update(name);
    auto c = t.detach().contiguous().cpu();
    h.update(c.data_ptr(), c.numel() * c.element_size());
  };
  for (const auto& p : module.named_parameters()) feed(p.key(), p.value());
  for (const auto& b : module.named_buffers()) feed(b.key(), b.value());
  return h.digest();
}

}  // namespace isgan
