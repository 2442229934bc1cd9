#pragma once

#include <array>
#include <random>
#include <utility>
#include <vector>

#include <torch/torch.h>

#include "isgan/encoders.hpp"

namespace isgan {

// Selection over the five local features, in kLocalPartIndices order
// (part2-local1, part2-local2, part3-local1, part3-local2, part3-local3).
struct ShuffleMask {
  std::array<bool, kNumLocalParts> swap_local{};

  bool any() const;
};

// Each entry Bernoulli(0.5), redrawn until at least one entry is set.
ShuffleMask sample_mask(std::mt19937_64& rng);

// Exchanges the masked local features between `a` and `p` at the same
// positions; globals and unmasked locals pass through. Returns (S(a,p), S(p,a)).
std::pair<FeatureBundle, FeatureBundle> part_shuffle(const FeatureBundle& a, const FeatureBundle& p,
                                                     const ShuffleMask& mask);

// Row-wise variant for batched bundles ([N, dim] parts): row i uses masks[i].
std::pair<FeatureBundle, FeatureBundle> part_shuffle(const FeatureBundle& a, const FeatureBundle& p,
                                                     const std::vector<ShuffleMask>& masks);

}  // namespace isgan
