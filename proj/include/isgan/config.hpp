#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <string>

#include <nlohmann/json.hpp>

#include "isgan/dataset.hpp"
#include "isgan/losses.hpp"
#include "isgan/model.hpp"

namespace isgan {

struct DatasetConfig {
  data::Layout layout = data::Layout::synthetic_manifest;
  std::string root;
  data::Resolution resolution;
};

struct TrainingConfig {
  std::array<int, 3> epochs = {300, 200, 100};
  int batch_identities = 4;  // P
  int batch_images = 4;      // K_img
  std::uint64_t seed = 0;
  double lr_stage1 = 2e-4;
  double lr_stage2 = 2e-4;
  double lr_stage3 = 2e-5;
  // <= 0 follows the stage learning rate.
  double discriminator_lr = 0.0;
  double adam_beta1 = 0.9;
  double adam_beta2 = 0.999;
  double sgd_momentum = 0.9;
  data::AugmentationConfig augmentation{0.5, {true}};
  // 0 derives ceil(train images / (P * K_img)).
  int iterations_per_epoch = 0;
  bool deterministic = true;
  // Per stage, keep only the newest N epoch checkpoints (0 keeps all).
  int keep_checkpoints = 0;
};

struct OutputConfig {
  std::string run_dir = "runs/default";
};

struct RunConfig {
  DatasetConfig dataset;
  ModelConfig model;
  losses::LossWeights loss;
  TrainingConfig training;
  OutputConfig output;

  nlohmann::json to_json() const;
  // Missing keys keep their defaults; malformed values throw ConfigError.
  static RunConfig from_json(const nlohmann::json& j);
  static RunConfig load(const std::filesystem::path& file);
  void save(const std::filesystem::path& file) const;

  // FNV-1a of the canonical (key-sorted, compact) JSON without the output
  // block, so relocating a run keeps its hash.
  std::string hash() const;

  // Desk-scale synthetic preset: 96x32, small backbone, 30/20/10 epochs.
  static RunConfig desk_synthetic(const std::string& root, int num_classes);
};

}  // namespace isgan
