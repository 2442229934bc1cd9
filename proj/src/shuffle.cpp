#include "isgan/shuffle.hpp"

#include <algorithm>
#include <stdexcept>

namespace isgan {

bool ShuffleMask::any() const {
  return std::any_of(swap_local.begin(), swap_local.end(), [](bool b) { return b; });
}

ShuffleMask sample_mask(std::mt19937_64& rng) {
  std::bernoulli_distribution coin(0.5);
  ShuffleMask mask;
  do {
    for (auto& entry : mask.swap_local) entry = coin(rng);
  } while (!mask.any());
  return mask;
}

namespace {

void check_compatible(const FeatureBundle& a, const FeatureBundle& p) {
  if (!a.complete() || !p.complete() || a.dim != p.dim) {
    throw std::invalid_argument("part_shuffle: bundles differ in structure");
  }
  for (int k = 0; k < kNumParts; ++k) {
    if (a.parts[k].sizes() != p.parts[k].sizes()) {
      throw std::invalid_argument("part_shuffle: part " + std::to_string(k) + " shapes differ");
    }
  }
}

}  // namespace

std::pair<FeatureBundle, FeatureBundle> part_shuffle(const FeatureBundle& a, const FeatureBundle& p,
                                                     const ShuffleMask& mask) {
  check_compatible(a, p);
  FeatureBundle sa = a, sp = p;
  for (int l = 0; l < kNumLocalParts; ++l) {
    if (!mask.swap_local[l]) continue;
    const int k = kLocalPartIndices[l];
    sa.parts[k] = p.parts[k];
    sp.parts[k] = a.parts[k];
  }
  return {sa, sp};
}

std::pair<FeatureBundle, FeatureBundle> part_shuffle(const FeatureBundle& a, const FeatureBundle& p,
                                                     const std::vector<ShuffleMask>& masks) {
  check_compatible(a, p);
  const int64_t n = a.parts[0].dim() == 1 ? 1 : a.parts[0].size(0);
  if (static_cast<int64_t>(masks.size()) != n) {
    throw std::invalid_argument("part_shuffle: need one mask per row");
  }
  if (a.parts[0].dim() == 1) return part_shuffle(a, p, masks.front());
  FeatureBundle sa = a, sp = p;
  for (int l = 0; l < kNumLocalParts; ++l) {
    std::vector<uint8_t> column(n);
    for (int64_t i = 0; i < n; ++i) column[i] = masks[i].swap_local[l] ? 1 : 0;
    auto sel = torch::tensor(column).to(torch::kBool).view({n, 1});
    const int k = kLocalPartIndices[l];
    sa.parts[k] = torch::where(sel, p.parts[k], a.parts[k]);
    sp.parts[k] = torch::where(sel, a.parts[k], p.parts[k]);
  }
  return {sa, sp};
}

}  // namespace isgan
