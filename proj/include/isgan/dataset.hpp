#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <map>
#include <random>
#include <string>
#include <string_view>
#include <vector>

#include <torch/torch.h>

namespace isgan::data {

enum class Split { train, query, gallery };

std::string_view to_string(Split split);
Split split_from_string(std::string_view name);

struct Resolution {
  int height = 96;
  int width = 32;
};

// Identity conventions outside the dense train labels.
inline constexpr int kDistractorIdentity = 0;
inline constexpr int kJunkIdentity = -1;

struct ImageRecord {
  torch::Tensor pixels;  // [3, H, W] float32 in [-1, 1]
  // Train split: dense label in {1..C}. Query/gallery: dataset identity
  // (0 = distractor, -1 = junk).
  int identity = 0;
  int camera = 1;
  Split split = Split::train;
  std::string file;
};

struct DatasetIndex {
  std::vector<ImageRecord> records;
  // Train records only, keyed by dense label.
  std::map<int, std::vector<std::size_t>> by_identity;
  int num_identities = 0;
  Resolution resolution;

  std::vector<std::size_t> split_indices(Split split) const;
  std::size_t count(Split split) const;
};

struct MarketName {
  int identity = 0;
  int camera = 0;
  bool distractor = false;  // identity field "0000": counted as a negative
  bool junk = false;        // identity field "-1": ignored entirely
};

// Parses `IIII_cCsS_FFFFFF_NN.jpg`. Throws DataError naming the file on mismatch.
MarketName parse_market_filename(std::string_view name);

enum class Layout { market_dirs, synthetic_manifest };

Layout layout_from_string(std::string_view name);

// Reads a Market-1501 style tree (bounding_box_train/, query/, bounding_box_test/)
// or a synthetic directory holding manifest.jsonl. Images are resized to
// `resolution` and scaled to [-1, 1]; train identities are re-indexed to {1..C}
// and identities with a single train image are dropped with a warning.
DatasetIndex load_dataset(const std::filesystem::path& root, Layout layout,
                          Resolution resolution);

// Converts an 8-bit BGR/BGRA/gray image file into a [3, H, W] tensor in [-1, 1].
torch::Tensor load_image(const std::filesystem::path& file, Resolution resolution);

// ---------------------------------------------------------------------------
// Synthetic persons
// ---------------------------------------------------------------------------

struct IdentityAttributes {
  std::array<int, 3> top_rgb{};
  std::array<int, 3> bottom_rgb{};
  double body_width = 1.0;  // relative torso width, 0.75..1.25
  double hair_tone = 0.5;   // 0 = black, 1 = light
};

struct NuisanceRanges {
  double pose_angle_deg = 22.0;  // lean / limb spread in [-a, a]
  double scale_min = 0.78;
  double scale_max = 1.0;
  double illumination_min = 0.65;
  double illumination_max = 1.3;
  double occluder_probability = 0.2;
  int num_cameras = 4;
};

struct SyntheticIdentitySpec {
  int num_identities = 10;
  std::vector<IdentityAttributes> identities;
  NuisanceRanges nuisance;
  Resolution resolution;
};

// Draws per-identity attributes with stratified hues so identities stay
// separable; deterministic in `seed`.
SyntheticIdentitySpec make_identity_spec(int num_identities, std::uint64_t seed,
                                         Resolution resolution = {});

struct SynthResult {
  std::filesystem::path directory;
  std::filesystem::path manifest;
  std::size_t num_images = 0;
};

// Renders `images_per_identity` figures per identity into out_dir/images and
// writes out_dir/manifest.jsonl. Per identity the images are split
// train/query/gallery 60/10/30 when there are at least 5, otherwise all train.
SynthResult synth_generate(const SyntheticIdentitySpec& spec, int images_per_identity,
                           std::uint64_t seed, const std::filesystem::path& out_dir);

// ---------------------------------------------------------------------------
// Sampling and augmentation
// ---------------------------------------------------------------------------

struct PairBatch {
  // P*K_img record indices, grouped by identity.
  std::vector<std::size_t> images;
  // anchors[i] = images[anchor_slots[i]], positives[i] = images[positive_slots[i]].
  std::vector<std::size_t> anchor_slots;
  std::vector<std::size_t> positive_slots;
  std::vector<int> labels;  // dense label per pair

  std::size_t anchor(std::size_t i) const { return images[anchor_slots[i]]; }
  std::size_t positive(std::size_t i) const { return images[positive_slots[i]]; }
  std::size_t size() const { return anchor_slots.size(); }
};

// P distinct identities, K_img images each (with replacement only when an
// identity owns fewer than K_img images); each slot is the anchor of exactly
// one pair and its positive is a different record of the same identity.
PairBatch sample_pk_batch(const DatasetIndex& index, int num_identities_per_batch,
                          int images_per_identity, std::mt19937_64& rng);

struct RandomErasing {
  bool enabled = false;
  double probability = 0.5;
  double area_min = 0.02;
  double area_max = 0.4;
  double aspect_min = 0.3;
  double aspect_max = 3.33;
  int max_attempts = 100;
};

struct AugmentationConfig {
  double horizontal_flip_prob = 0.5;
  RandomErasing random_erasing;
};

torch::Tensor hflip(const torch::Tensor& image);

// image: [3, H, W] in [-1, 1]. Returns a new tensor, same shape and range.
torch::Tensor augment(const torch::Tensor& image, const AugmentationConfig& config,
                      std::mt19937_64& rng);

// Stacks records[indices] into [N, 3, H, W].
torch::Tensor stack_pixels(const DatasetIndex& index, const std::vector<std::size_t>& indices);

}  // namespace isgan::data
