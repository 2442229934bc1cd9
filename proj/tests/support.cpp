#include "support.hpp"

#include <atomic>
#include <fstream>
#include <random>
#include <sstream>

#include <unistd.h>

namespace testing_support {

namespace fs = std::filesystem;

TempDir::TempDir(const std::string& tag) {
  static std::atomic<int> counter{0};
  std::random_device rd;
  path_ = fs::temp_directory_path() /
          (tag + "_" + std::to_string(::getpid()) + "_" + std::to_string(counter++) + "_" + std::to_string(rd()));
  fs::create_directories(path_);
}

TempDir::~TempDir() {
  std::error_code ec;
  fs::remove_all(path_, ec);
}

isgan::data::DatasetIndex make_synthetic(const fs::path& dir, int ids, int per_id, std::uint64_t seed) {
  const isgan::data::Resolution res{96, 32};
  isgan::data::synth_generate(isgan::data::make_identity_spec(ids, seed, res), per_id, seed, dir);
  return isgan::data::load_dataset(dir, isgan::data::Layout::synthetic_manifest, res);
}

isgan::RunConfig small_config(const fs::path& data_root, int num_classes, std::array<int, 3> epochs,
                              int iterations_per_epoch, std::uint64_t seed) {
  auto cfg = isgan::RunConfig::desk_synthetic(data_root.string(), num_classes);
  cfg.training.epochs = epochs;
  cfg.training.iterations_per_epoch = iterations_per_epoch;
  cfg.training.seed = seed;
  return cfg;
}

std::string read_file(const fs::path& file) {
  std::ifstream in(file, std::ios::binary);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

}  // namespace testing_support
