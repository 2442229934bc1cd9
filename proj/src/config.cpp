#include "isgan/config.hpp"

#include <fstream>

#include "isgan/errors.hpp"
#include "isgan/hash.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace isgan {
namespace {

std::string layout_name(data::Layout layout) {
  return layout == data::Layout::market_dirs ? "market_dirs" : "synthetic_manifest";
}

json augmentation_json(const data::AugmentationConfig& a) {
  const auto& re = a.random_erasing;
  return {{"horizontal_flip_prob", a.horizontal_flip_prob},
          {"random_erasing",
           {{"enabled", re.enabled},
            {"probability", re.probability},
            {"area_ratio", {re.area_min, re.area_max}},
            {"aspect_ratio", {re.aspect_min, re.aspect_max}},
            {"max_attempts", re.max_attempts}}}};
}

void augmentation_from_json(const json& j, data::AugmentationConfig& a) {
  a.horizontal_flip_prob = j.value("horizontal_flip_prob", a.horizontal_flip_prob);
  if (!j.contains("random_erasing")) return;
  const auto& r = j["random_erasing"];
  auto& re = a.random_erasing;
  re.enabled = r.value("enabled", re.enabled);
  re.probability = r.value("probability", re.probability);
  if (r.contains("area_ratio")) {
    re.area_min = r["area_ratio"].at(0).get<double>();
    re.area_max = r["area_ratio"].at(1).get<double>();
  }
  if (r.contains("aspect_ratio")) {
    re.aspect_min = r["aspect_ratio"].at(0).get<double>();
    re.aspect_max = r["aspect_ratio"].at(1).get<double>();
  }
  re.max_attempts = r.value("max_attempts", re.max_attempts);
}

}  // namespace

json RunConfig::to_json() const {
  json model_json = model;
  const auto& t = training;
  return {
      {"dataset",
       {{"layout", layout_name(dataset.layout)},
        {"root", dataset.root},
        {"resolution", {dataset.resolution.height, dataset.resolution.width}}}},
      {"model", model_json},
      {"loss",
       {{"lambda_r", loss.lambda_r},
        {"lambda_s", loss.lambda_s},
        {"lambda_ps", loss.lambda_ps},
        {"lambda_d", loss.lambda_d},
        {"lambda_c", loss.lambda_c},
        {"lambda_u_stage2", loss.lambda_u_stage2},
        {"lambda_u_stage3", loss.lambda_u_stage3}}},
      {"training",
       {{"epochs", t.epochs},
        {"batch_identities", t.batch_identities},
        {"batch_images", t.batch_images},
        {"seed", t.seed},
        {"lr_stage1", t.lr_stage1},
        {"lr_stage2", t.lr_stage2},
        {"lr_stage3", t.lr_stage3},
        {"discriminator_lr", t.discriminator_lr},
        {"adam_beta1", t.adam_beta1},
        {"adam_beta2", t.adam_beta2},
        {"sgd_momentum", t.sgd_momentum},
        {"augmentation", augmentation_json(t.augmentation)},
        {"iterations_per_epoch", t.iterations_per_epoch},
        {"deterministic", t.deterministic},
        {"keep_checkpoints", t.keep_checkpoints}}},
      {"output", {{"run_dir", output.run_dir}}},
  };
}

RunConfig RunConfig::from_json(const json& j) {
  RunConfig c;
  try {
    if (j.contains("dataset")) {
      const auto& d = j["dataset"];
      if (d.contains("layout")) c.dataset.layout = data::layout_from_string(d["layout"].get<std::string>());
      c.dataset.root = d.value("root", c.dataset.root);
      if (d.contains("resolution")) {
        c.dataset.resolution.height = d["resolution"].at(0).get<int>();
        c.dataset.resolution.width = d["resolution"].at(1).get<int>();
      }
    }
    c.model.resolution = c.dataset.resolution;
    if (j.contains("model")) j["model"].get_to(c.model);
    if (j.contains("loss")) {
      const auto& l = j["loss"];
      c.loss.lambda_r = l.value("lambda_r", c.loss.lambda_r);
      c.loss.lambda_s = l.value("lambda_s", c.loss.lambda_s);
      c.loss.lambda_ps = l.value("lambda_ps", c.loss.lambda_ps);
      c.loss.lambda_d = l.value("lambda_d", c.loss.lambda_d);
      c.loss.lambda_c = l.value("lambda_c", c.loss.lambda_c);
      c.loss.lambda_u_stage2 = l.value("lambda_u_stage2", c.loss.lambda_u_stage2);
      c.loss.lambda_u_stage3 = l.value("lambda_u_stage3", c.loss.lambda_u_stage3);
    }
    if (j.contains("training")) {
      const auto& t = j["training"];
      auto& o = c.training;
      o.epochs = t.value("epochs", o.epochs);
      o.batch_identities = t.value("batch_identities", o.batch_identities);
      o.batch_images = t.value("batch_images", o.batch_images);
      o.seed = t.value("seed", o.seed);
      o.lr_stage1 = t.value("lr_stage1", o.lr_stage1);
      o.lr_stage2 = t.value("lr_stage2", o.lr_stage2);
      o.lr_stage3 = t.value("lr_stage3", o.lr_stage3);
      o.discriminator_lr = t.value("discriminator_lr", o.discriminator_lr);
      o.adam_beta1 = t.value("adam_beta1", o.adam_beta1);
      o.adam_beta2 = t.value("adam_beta2", o.adam_beta2);
      o.sgd_momentum = t.value("sgd_momentum", o.sgd_momentum);
      if (t.contains("augmentation")) augmentation_from_json(t["augmentation"], o.augmentation);
      o.iterations_per_epoch = t.value("iterations_per_epoch", o.iterations_per_epoch);
      o.deterministic = t.value("deterministic", o.deterministic);
      o.keep_checkpoints = t.value("keep_checkpoints", o.keep_checkpoints);
    }
    if (j.contains("output")) c.output.run_dir = j["output"].value("run_dir", c.output.run_dir);
  } catch (const json::exception& e) {
    throw ConfigError(std::string("malformed config: ") + e.what());
  }
  c.loss.validate();
  for (int e : c.training.epochs) {
    if (e < 0) throw ConfigError("epoch counts must be nonnegative");
  }
  return c;
}

RunConfig RunConfig::load(const fs::path& file) {
  std::ifstream in(file);
  if (!in) throw ConfigError("cannot read config " + file.string());
  try {
    return from_json(json::parse(in));
  } catch (const json::parse_error& e) {
    throw ConfigError("cannot parse config " + file.string() + ": " + e.what());
  }
}

void RunConfig::save(const fs::path& file) const {
  if (file.has_parent_path()) fs::create_directories(file.parent_path());
  std::ofstream out(file, std::ios::trunc);
  if (!out) throw ConfigError("cannot write config " + file.string());
  out << to_json().dump(2) << '\n';
}

std::string RunConfig::hash() const {
  auto j = to_json();
  j.erase("output");
  Fnv1a h;
  h.update(j.dump());
  return Fnv1a::hex(h.digest());
}

RunConfig RunConfig::desk_synthetic(const std::string& root, int num_classes) {
  RunConfig c;
  c.dataset.layout = data::Layout::synthetic_manifest;
  c.dataset.root = root;
  c.dataset.resolution = {96, 32};
  c.model = ModelConfig::desk_scale(num_classes);
  c.model.resolution = c.dataset.resolution;
  c.training.epochs = {30, 20, 10};
  return c;
}

}  // namespace isgan
