#pragma once

#include <array>
#include <optional>
#include <span>

#include <nlohmann/json.hpp>
#include <torch/torch.h>

#include "isgan/encoders.hpp"

namespace isgan::losses {

// Probabilities entering a log are clamped to [eps, 1 - eps].
inline constexpr double kProbEpsilon = 1e-7;

struct LossWeights {
  double lambda_r = 20.0;
  double lambda_u = 0.001;
  double lambda_s = 10.0;
  double lambda_ps = 10.0;
  double lambda_d = 1.0;
  double lambda_c = 2.0;
  // Per-stage overrides of lambda_u; stage 1 never uses it.
  double lambda_u_stage2 = 0.001;
  double lambda_u_stage3 = 0.01;

  // Throws ConfigError on a negative weight.
  void validate() const;
  // Copy with lambda_u set from the stage override.
  LossWeights for_stage(int stage) const;
};

enum class Side { encoder_generator, discriminator };

// Undefined tensors mark inactive terms.
struct LossTerms {
  torch::Tensor id;            // L_R
  torch::Tensor kl;            // L_U
  torch::Tensor shuffle;       // L_S
  torch::Tensor part_shuffle;  // L_PS
  torch::Tensor domain_d;      // L_D, discriminator side (minimized negative objective)
  torch::Tensor domain_g;      // L_D, non-saturating generator side
  torch::Tensor class_d;       // L_C over reals and generations
  torch::Tensor class_g;       // L_C generation terms
};

struct LossReport {
  std::optional<double> id, kl, shuffle, part_shuffle, domain_d, domain_g, class_d, class_g;
  double total_encoder_generator = 0.0;
  double total_discriminator = 0.0;

  static LossReport from_terms(const LossTerms& terms, const LossWeights& weights);
  nlohmann::json to_json() const;
  bool finite() const;
};

// E/G side: l_R L_R + l_U L_U + l_S L_S + l_PS L_PS + l_D L_D^G + l_C L_C^G.
// D side:   l_D L_D^D + l_C L_C^D. Inactive terms contribute nothing.
torch::Tensor total_loss(const LossTerms& terms, const LossWeights& weights, Side side);
double total_loss(const LossReport& report, const LossWeights& weights, Side side);

// Sum over parts of softmax cross-entropy, averaged over the batch.
// logits: K tensors of [N, C]; labels: [N] int64 in {1..C}.
torch::Tensor id_loss(std::span<const torch::Tensor> part_logits, const torch::Tensor& labels);

// Mean absolute difference; one ||.||_1 term of the shuffle losses.
torch::Tensor mean_l1(const torch::Tensor& target, const torch::Tensor& generated);

// Naming: <target>_from_<identity source>, i.e. G(phi_R(I_j) ⊕ phi_U(I_i))
// reconstructs I_i.
struct ShuffleGenerations {
  torch::Tensor anchor_from_anchor;
  torch::Tensor anchor_from_positive;
  torch::Tensor positive_from_positive;
  torch::Tensor positive_from_anchor;
};

// G(S(phi_R(I_i), phi_R(I_j)) ⊕ phi_U(I_i)) for (i, j) = (a, p) and (p, a).
struct PartShuffleGenerations {
  torch::Tensor anchor;
  torch::Tensor positive;
};

// Sum of the four mean-per-pixel L1 terms (batched rows are pairs).
torch::Tensor shuffle_loss(const torch::Tensor& anchor, const torch::Tensor& positive,
                           const ShuffleGenerations& generations);
torch::Tensor part_shuffle_loss(const torch::Tensor& anchor, const torch::Tensor& positive,
                                const PartShuffleGenerations& generations);

// sum_d 0.5 (mu^2 + exp(logvar) - logvar - 1), averaged over rows.
// Throws std::invalid_argument on non-finite input.
torch::Tensor kl_loss(const torch::Tensor& mu, const torch::Tensor& logvar);
torch::Tensor kl_loss(const GaussianCode& code);

// Per-pair discriminator outputs; row i of every tensor belongs to pair i.
// generated: the four shuffle generations (aa, ap, pp, pa) then the two
// part-shuffled ones (a, p).
struct PairOutputs {
  torch::Tensor real_anchor;
  torch::Tensor real_positive;
  std::array<torch::Tensor, 6> generated;
};

// Patch probabilities in PairOutputs; each image's log-terms are averaged
// over its patches, summed over images, averaged over pairs.
torch::Tensor domain_loss_d(const PairOutputs& patch_probs);
torch::Tensor domain_loss_g(std::span<const torch::Tensor> generated_patch_probs);

// Class logits in PairOutputs; every image is scored against the pair label.
torch::Tensor class_loss(const PairOutputs& class_logits, const torch::Tensor& labels);
torch::Tensor class_loss_generated(std::span<const torch::Tensor> generated_logits,
                                   const torch::Tensor& labels);

}  // namespace isgan::losses
