#pragma once

#include <cstdint>
#include <filesystem>
#include <string>

#include "isgan/config.hpp"
#include "isgan/dataset.hpp"

namespace testing_support {

// Fresh directory under the system temp root, removed on destruction.
class TempDir {
 public:
  explicit TempDir(const std::string& tag = "isgan");
  ~TempDir();
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;

  const std::filesystem::path& path() const { return path_; }
  std::filesystem::path operator/(const std::string& rel) const { return path_ / rel; }

 private:
  std::filesystem::path path_;
};

// Renders a synthetic dataset at 96x32 into `dir` and loads it.
isgan::data::DatasetIndex make_synthetic(const std::filesystem::path& dir, int ids, int per_id,
                                         std::uint64_t seed);

// Desk-scale config over `data` with short stages for pipeline tests.
isgan::RunConfig small_config(const std::filesystem::path& data_root, int num_classes,
                              std::array<int, 3> epochs, int iterations_per_epoch, std::uint64_t seed = 0);

std::string read_file(const std::filesystem::path& file);

}  // namespace testing_support
