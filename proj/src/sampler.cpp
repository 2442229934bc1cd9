#include <algorithm>
#include <cmath>
#include <numeric>

#include "isgan/dataset.hpp"
#include "isgan/errors.hpp"

namespace isgan::data {
namespace {

// Random pairing of `slots` (record ids) with positives[i] != slots[i].
// Uses rejection over random permutations; when the multiset admits no such
// permutation (one record fills more than half the slots) each slot instead
// draws a positive from the other-record slots.
std::vector<std::size_t> pair_slots(const std::vector<std::size_t>& records, std::mt19937_64& rng) {
  const std::size_t n = records.size();
  std::vector<std::size_t> perm(n);
  std::iota(perm.begin(), perm.end(), 0);

  std::map<std::size_t, std::size_t> multiplicity;
  for (auto r : records) ++multiplicity[r];
  std::size_t worst = 0;
  for (const auto& [r, m] : multiplicity) worst = std::max(worst, m);

  if (2 * worst <= n) {
    for (int attempt = 0; attempt < 1000; ++attempt) {
      std::shuffle(perm.begin(), perm.end(), rng);
      bool ok = true;
      for (std::size_t i = 0; i < n && ok; ++i) ok = records[i] != records[perm[i]];
      if (ok) return perm;
    }
    // Deterministic fallback: sort slots by record and rotate by half.
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(),
                     [&](std::size_t a, std::size_t b) { return records[a] < records[b]; });
    for (std::size_t i = 0; i < n; ++i) perm[order[i]] = order[(i + n / 2) % n];
    return perm;
  }

  for (std::size_t i = 0; i < n; ++i) {
    std::vector<std::size_t> options;
    for (std::size_t j = 0; j < n; ++j) {
      if (records[j] != records[i]) options.push_back(j);
    }
    perm[i] = options[std::uniform_int_distribution<std::size_t>(0, options.size() - 1)(rng)];
  }
  return perm;
}

}  // namespace

PairBatch sample_pk_batch(const DatasetIndex& index, int num_identities_per_batch,
                          int images_per_identity, std::mt19937_64& rng) {
  if (num_identities_per_batch < 1 || images_per_identity < 2) {
    throw ConfigError("PK sampling needs P >= 1 and K_img >= 2");
  }
  std::vector<int> eligible;
  for (const auto& [id, members] : index.by_identity) {
    if (members.size() >= 2) eligible.push_back(id);
  }
  if (static_cast<int>(eligible.size()) < num_identities_per_batch) {
    throw ConfigError("P=" + std::to_string(num_identities_per_batch) + " exceeds the " +
                      std::to_string(eligible.size()) + " identities with >= 2 images");
  }
  // Partial Fisher-Yates for P distinct identities.
  for (int i = 0; i < num_identities_per_batch; ++i) {
    std::uniform_int_distribution<std::size_t> pick(i, eligible.size() - 1);
    std::swap(eligible[i], eligible[pick(rng)]);
  }

  PairBatch batch;
  for (int p = 0; p < num_identities_per_batch; ++p) {
    const int id = eligible[p];
    std::vector<std::size_t> members = index.by_identity.at(id);
    std::shuffle(members.begin(), members.end(), rng);
    std::vector<std::size_t> chosen;
    chosen.reserve(images_per_identity);
    // Without replacement while possible, then cycling through a reshuffled
    // copy keeps multiplicities within one of each other.
    while (static_cast<int>(chosen.size()) < images_per_identity) {
      for (auto m : members) {
        if (static_cast<int>(chosen.size()) == images_per_identity) break;
        chosen.push_back(m);
      }
      std::shuffle(members.begin(), members.end(), rng);
    }
    const auto perm = pair_slots(chosen, rng);
    const std::size_t base = batch.images.size();
    for (std::size_t k = 0; k < chosen.size(); ++k) batch.images.push_back(chosen[k]);
    for (std::size_t k = 0; k < chosen.size(); ++k) {
      batch.anchor_slots.push_back(base + k);
      batch.positive_slots.push_back(base + perm[k]);
      batch.labels.push_back(id);
    }
  }
  return batch;
}

torch::Tensor hflip(const torch::Tensor& image) { return image.flip({-1}); }

torch::Tensor augment(const torch::Tensor& image, const AugmentationConfig& config,
                      std::mt19937_64& rng) {
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  torch::Tensor out = image;
  if (config.horizontal_flip_prob > 0.0 && unit(rng) < config.horizontal_flip_prob) {
    out = hflip(out);
  }
  const auto& re = config.random_erasing;
  if (re.enabled && unit(rng) < re.probability) {
    const int64_t h = out.size(-2);
    const int64_t w = out.size(-1);
    const double area = static_cast<double>(h * w);
    for (int attempt = 0; attempt < re.max_attempts; ++attempt) {
      const double target = std::uniform_real_distribution<double>(re.area_min, re.area_max)(rng) * area;
      const double aspect = std::exp(std::uniform_real_distribution<double>(
          std::log(re.aspect_min), std::log(re.aspect_max))(rng));
      const auto eh = static_cast<int64_t>(std::lround(std::sqrt(target * aspect)));
      const auto ew = static_cast<int64_t>(std::lround(std::sqrt(target / aspect)));
      if (eh < 1 || ew < 1 || eh >= h || ew >= w) continue;
      const auto y0 = std::uniform_int_distribution<int64_t>(0, h - eh)(rng);
      const auto x0 = std::uniform_int_distribution<int64_t>(0, w - ew)(rng);
      out = out.clone();
      auto patch = out.narrow(-2, y0, eh).narrow(-1, x0, ew);
      // Values come from the sampler's own stream so erasing stays reproducible
      // without touching the global torch generator.
      std::uniform_real_distribution<float> value(-1.0f, 1.0f);
      auto acc = patch.contiguous();
      auto* data = acc.data_ptr<float>();
      for (int64_t i = 0; i < acc.numel(); ++i) data[i] = value(rng);
      patch.copy_(acc);
      break;
    }
  }
  return out.contiguous();
}

}  // namespace isgan::data
