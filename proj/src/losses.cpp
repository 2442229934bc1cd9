#include "isgan/losses.hpp"

#include <cmath>
#include <stdexcept>

#include "isgan/errors.hpp"

namespace isgan::losses {

void LossWeights::validate() const {
  for (double w : {lambda_r, lambda_u, lambda_s, lambda_ps, lambda_d, lambda_c, lambda_u_stage2,
                   lambda_u_stage3}) {
    if (!(w >= 0.0)) throw ConfigError("loss weights must be nonnegative");
  }
}

LossWeights LossWeights::for_stage(int stage) const {
  LossWeights out = *this;
  out.lambda_u = stage <= 1 ? 0.0 : stage == 2 ? lambda_u_stage2 : lambda_u_stage3;
  return out;
}

namespace {

torch::Tensor weighted(const torch::Tensor& term, double weight) {
  return term.defined() ? term * weight : torch::Tensor();
}

torch::Tensor sum_defined(std::initializer_list<torch::Tensor> terms) {
  torch::Tensor total;
  for (const auto& t : terms) {
    if (!t.defined()) continue;
    total = total.defined() ? total + t : t;
  }
  return total.defined() ? total : torch::zeros({}, torch::kFloat64);
}

std::optional<double> value_of(const torch::Tensor& t) {
  if (!t.defined()) return std::nullopt;
  return t.detach().to(torch::kFloat64).item<double>();
}

double weighted(const std::optional<double>& term, double weight) {
  return term ? *term * weight : 0.0;
}

torch::Tensor cross_entropy(const torch::Tensor& logits, const torch::Tensor& labels) {
  if (logits.dim() != 2 || labels.dim() != 1 || labels.size(0) != logits.size(0)) {
    throw std::invalid_argument("cross entropy expects [N, C] logits and [N] labels");
  }
  const int64_t c = logits.size(1);
  if (labels.numel() > 0 && (labels.min().item<int64_t>() < 1 || labels.max().item<int64_t>() > c)) {
    throw std::invalid_argument("label outside {1.." + std::to_string(c) + "}");
  }
  auto index = (labels.to(torch::kLong) - 1).unsqueeze(1);
  // log_softmax subtracts the row max before exponentiating.
  return -torch::log_softmax(logits, 1).gather(1, index).squeeze(1);
}

// Per-row mean over all trailing dims.
torch::Tensor per_row_mean(const torch::Tensor& t) { return t.dim() == 1 ? t : t.flatten(1).mean(1); }

torch::Tensor clamp_prob(const torch::Tensor& p) { return p.clamp(kProbEpsilon, 1.0 - kProbEpsilon); }

}  // namespace

LossReport LossReport::from_terms(const LossTerms& terms, const LossWeights& weights) {
  LossReport r;
  r.id = value_of(terms.id);
  r.kl = value_of(terms.kl);
  r.shuffle = value_of(terms.shuffle);
  r.part_shuffle = value_of(terms.part_shuffle);
  r.domain_d = value_of(terms.domain_d);
  r.domain_g = value_of(terms.domain_g);
  r.class_d = value_of(terms.class_d);
  r.class_g = value_of(terms.class_g);
  r.total_encoder_generator = total_loss(r, weights, Side::encoder_generator);
  r.total_discriminator = total_loss(r, weights, Side::discriminator);
  return r;
}

nlohmann::json LossReport::to_json() const {
  nlohmann::json j;
  auto put = [&](const char* key, const std::optional<double>& v) {
    if (v) j[key] = *v;
  };
  put("L_R", id);
  put("L_U", kl);
  put("L_S", shuffle);
  put("L_PS", part_shuffle);
  put("L_D_D", domain_d);
  put("L_D_G", domain_g);
  put("L_C_D", class_d);
  put("L_C_G", class_g);
  j["total_eg"] = total_encoder_generator;
  j["total_d"] = total_discriminator;
  return j;
}

bool LossReport::finite() const {
  for (const auto& v : {id, kl, shuffle, part_shuffle, domain_d, domain_g, class_d, class_g}) {
    if (v && !std::isfinite(*v)) return false;
  }
  return std::isfinite(total_encoder_generator) && std::isfinite(total_discriminator);
}

torch::Tensor total_loss(const LossTerms& t, const LossWeights& w, Side side) {
  w.validate();
  if (side == Side::discriminator) {
    return sum_defined({weighted(t.domain_d, w.lambda_d), weighted(t.class_d, w.lambda_c)});
  }
  return sum_defined({weighted(t.id, w.lambda_r), weighted(t.kl, w.lambda_u),
                      weighted(t.shuffle, w.lambda_s), weighted(t.part_shuffle, w.lambda_ps),
                      weighted(t.domain_g, w.lambda_d), weighted(t.class_g, w.lambda_c)});
}

double total_loss(const LossReport& r, const LossWeights& w, Side side) {
  w.validate();
  if (side == Side::discriminator) {
    return weighted(r.domain_d, w.lambda_d) + weighted(r.class_d, w.lambda_c);
  }
  return weighted(r.id, w.lambda_r) + weighted(r.kl, w.lambda_u) + weighted(r.shuffle, w.lambda_s) +
         weighted(r.part_shuffle, w.lambda_ps) + weighted(r.domain_g, w.lambda_d) +
         weighted(r.class_g, w.lambda_c);
}

torch::Tensor id_loss(std::span<const torch::Tensor> part_logits, const torch::Tensor& labels) {
  if (part_logits.empty()) throw std::invalid_argument("id_loss needs at least one part");
  torch::Tensor per_image;
  for (const auto& logits : part_logits) {
    auto ce = cross_entropy(logits, labels);
    per_image = per_image.defined() ? per_image + ce : ce;
  }
  return per_image.mean();
}

torch::Tensor mean_l1(const torch::Tensor& target, const torch::Tensor& generated) {
  if (target.sizes() != generated.sizes()) {
    throw std::invalid_argument("L1 term: target and generation shapes differ");
  }
  return (target - generated).abs().mean();
}

torch::Tensor shuffle_loss(const torch::Tensor& anchor, const torch::Tensor& positive,
                           const ShuffleGenerations& g) {
  return mean_l1(anchor, g.anchor_from_anchor) + mean_l1(anchor, g.anchor_from_positive) +
         mean_l1(positive, g.positive_from_positive) + mean_l1(positive, g.positive_from_anchor);
}

torch::Tensor part_shuffle_loss(const torch::Tensor& anchor, const torch::Tensor& positive,
                                const PartShuffleGenerations& g) {
  return mean_l1(anchor, g.anchor) + mean_l1(positive, g.positive);
}

torch::Tensor kl_loss(const torch::Tensor& mu, const torch::Tensor& logvar) {
  if (mu.sizes() != logvar.sizes()) throw std::invalid_argument("kl_loss: mu/logvar shapes differ");
  if (!torch::isfinite(mu).all().item<bool>() || !torch::isfinite(logvar).all().item<bool>()) {
    throw std::invalid_argument("kl_loss: non-finite mu or logvar");
  }
  auto per_elem = 0.5 * (mu.pow(2) + logvar.exp() - logvar - 1.0);
  if (per_elem.dim() <= 1) return per_elem.sum();
  return per_elem.flatten(1).sum(1).mean();
}

torch::Tensor kl_loss(const GaussianCode& code) {
  return kl_loss(concat_bundle(code.mu), concat_bundle(code.logvar));
}

torch::Tensor domain_loss_d(const PairOutputs& d) {
  auto total = -per_row_mean(torch::log(clamp_prob(d.real_anchor))) -
               per_row_mean(torch::log(clamp_prob(d.real_positive)));
  for (const auto& fake : d.generated) {
    total = total - per_row_mean(torch::log(1.0 - clamp_prob(fake)));
  }
  return total.mean();
}

torch::Tensor domain_loss_g(std::span<const torch::Tensor> generated) {
  if (generated.empty()) throw std::invalid_argument("domain_loss_g needs generations");
  torch::Tensor total;
  for (const auto& fake : generated) {
    auto term = -per_row_mean(torch::log(clamp_prob(fake)));
    total = total.defined() ? total + term : term;
  }
  return total.mean();
}

torch::Tensor class_loss(const PairOutputs& logits, const torch::Tensor& labels) {
  auto total = cross_entropy(logits.real_anchor, labels) + cross_entropy(logits.real_positive, labels);
  for (const auto& fake : logits.generated) total = total + cross_entropy(fake, labels);
  return total.mean();
}

torch::Tensor class_loss_generated(std::span<const torch::Tensor> generated, const torch::Tensor& labels) {
  if (generated.empty()) throw std::invalid_argument("class_loss_generated needs generations");
  torch::Tensor total;
  for (const auto& fake : generated) {
    auto term = cross_entropy(fake, labels);
    total = total.defined() ? total + term : term;
  }
  return total.mean();
}

}  // namespace isgan::losses
