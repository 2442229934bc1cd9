#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>

#include <nlohmann/json.hpp>
#include <torch/torch.h>

namespace isgan {

inline constexpr std::uint32_t kCheckpointVersion = 1;

// Container layout: 8-byte magic "ISGANCKP", u32 version, u64 header length,
// a JSON header describing every block, then the raw little-endian block
// bytes at the offsets listed in the header.
struct Checkpoint {
  std::uint32_t version = kCheckpointVersion;
  int stage = 0;
  int epoch = 0;
  std::string config_hash;
  std::string sampler_rng;  // textual mt19937_64 state
  nlohmann::json metadata = nlohmann::json::object();
  // "model.*" parameters and buffers, "optim.*" optimizer state, "rng.torch".
  std::map<std::string, torch::Tensor> blocks;

  void save(const std::filesystem::path& file) const;
  // Throws DataError on a missing or corrupt file and on unknown versions.
  static Checkpoint load(const std::filesystem::path& file);
};

// Copies every named parameter and buffer of `module` into "<prefix><name>".
void store_module(Checkpoint& ckpt, const torch::nn::Module& module, const std::string& prefix);
// Restores in place; throws DataError on a missing block or shape mismatch.
void restore_module(const Checkpoint& ckpt, torch::nn::Module& module, const std::string& prefix);

void store_torch_rng(Checkpoint& ckpt);
void restore_torch_rng(const Checkpoint& ckpt);

}  // namespace isgan
