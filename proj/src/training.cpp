#include "isgan/training.hpp"

#include <cmath>
#include <sstream>

#include <spdlog/spdlog.h>

#include "isgan/errors.hpp"
#include "isgan/shuffle.hpp"

namespace isgan::train {

double schedule_lambda_u(int stage) { return schedule_lambda_u(stage, losses::LossWeights{}); }

double schedule_lambda_u(int stage, const losses::LossWeights& weights) {
  if (stage < 1 || stage > 3) throw ConfigError("stage must be 1, 2 or 3");
  return weights.for_stage(stage).lambda_u;
}

StagePlan make_stage_plan(const RunConfig& config, int stage, std::size_t num_train_images) {
  if (stage < 1 || stage > 3) throw ConfigError("stage must be 1, 2 or 3, got " + std::to_string(stage));
  const auto& t = config.training;
  if (num_train_images == 0) throw ConfigError("training split is empty");
  if (t.batch_identities < 1 || t.batch_images < 2) {
    throw ConfigError("batch needs P >= 1 identities and K_img >= 2 images");
  }
  StagePlan plan;
  plan.stage = stage;
  plan.epochs = t.epochs[stage - 1];
  const auto per_batch = static_cast<std::size_t>(t.batch_identities * t.batch_images);
  plan.iterations_per_epoch = t.iterations_per_epoch > 0
                                  ? t.iterations_per_epoch
                                  : static_cast<int>((num_train_images + per_batch - 1) / per_batch);
  plan.lr = stage == 1 ? t.lr_stage1 : stage == 2 ? t.lr_stage2 : t.lr_stage3;
  plan.discriminator_lr = t.discriminator_lr > 0.0 ? t.discriminator_lr : plan.lr;
  if (!(plan.lr > 0.0)) throw ConfigError("learning rates must be positive");
  plan.adam_beta1 = t.adam_beta1;
  plan.adam_beta2 = t.adam_beta2;
  plan.sgd_momentum = t.sgd_momentum;
  plan.augmentation = t.augmentation;
  plan.augmentation.random_erasing.enabled = stage == 1 && t.augmentation.random_erasing.enabled;
  plan.weights = config.loss.for_stage(stage);
  plan.train_baseline = stage != 2;
  plan.train_unrelated = stage >= 2;
  plan.train_generator = stage >= 2;
  plan.train_discriminator = stage >= 2;
  return plan;
}

// ---------------------------------------------------------------------------
// Optimizers
// ---------------------------------------------------------------------------

Optimizer::Optimizer(std::vector<torch::Tensor> params, double lr) : params_(std::move(params)), lr_(lr) {}

void Optimizer::zero_grad() {
  for (auto& p : params_) {
    if (p.grad().defined()) {
      p.grad().detach_();
      p.grad().zero_();
    }
  }
}

Adam::Adam(std::vector<torch::Tensor> params, double lr, double beta1, double beta2, double eps)
    : Optimizer(std::move(params), lr), beta1_(beta1), beta2_(beta2), eps_(eps) {
  steps_.assign(params_.size(), 0);
  for (const auto& p : params_) {
    exp_avg_.push_back(torch::zeros_like(p));
    exp_avg_sq_.push_back(torch::zeros_like(p));
  }
}

void Adam::step() {
  torch::NoGradGuard no_grad;
  for (std::size_t i = 0; i < params_.size(); ++i) {
    auto& p = params_[i];
    if (!p.grad().defined()) continue;
    const auto& g = p.grad();
    const int64_t t = ++steps_[i];
    exp_avg_[i].mul_(beta1_).add_(g, 1.0 - beta1_);
    exp_avg_sq_[i].mul_(beta2_).addcmul_(g, g, 1.0 - beta2_);
    const double bias1 = 1.0 - std::pow(beta1_, static_cast<double>(t));
    const double bias2 = 1.0 - std::pow(beta2_, static_cast<double>(t));
    auto denom = (exp_avg_sq_[i].sqrt() / std::sqrt(bias2)).add_(eps_);
    p.addcdiv_(exp_avg_[i], denom, -lr_ / bias1);
  }
}

void Adam::store(Checkpoint& ckpt, const std::string& prefix) const {
  ckpt.blocks[prefix + "steps"] = torch::tensor(steps_, torch::kInt64);
  for (std::size_t i = 0; i < params_.size(); ++i) {
    ckpt.blocks[prefix + std::to_string(i) + ".exp_avg"] = exp_avg_[i].clone();
    ckpt.blocks[prefix + std::to_string(i) + ".exp_avg_sq"] = exp_avg_sq_[i].clone();
  }
}

void Adam::restore(const Checkpoint& ckpt, const std::string& prefix) {
  auto get = [&](const std::string& name) -> const torch::Tensor& {
    auto it = ckpt.blocks.find(prefix + name);
    if (it == ckpt.blocks.end()) throw DataError("checkpoint lacks optimizer block " + prefix + name);
    return it->second;
  };
  const auto& steps = get("steps");
  if (steps.numel() != static_cast<int64_t>(params_.size())) {
    throw DataError("optimizer state " + prefix + " does not match the parameter set");
  }
  for (std::size_t i = 0; i < params_.size(); ++i) {
    steps_[i] = steps[static_cast<int64_t>(i)].item<int64_t>();
    exp_avg_[i].copy_(get(std::to_string(i) + ".exp_avg"));
    exp_avg_sq_[i].copy_(get(std::to_string(i) + ".exp_avg_sq"));
  }
}

SgdMomentum::SgdMomentum(std::vector<torch::Tensor> params, double lr, double momentum)
    : Optimizer(std::move(params), lr), momentum_(momentum) {
  buffers_.resize(params_.size());
}

void SgdMomentum::step() {
  torch::NoGradGuard no_grad;
  for (std::size_t i = 0; i < params_.size(); ++i) {
    auto& p = params_[i];
    if (!p.grad().defined()) continue;
    const auto& g = p.grad();
    if (!buffers_[i].defined()) {
      buffers_[i] = g.clone();
    } else {
      buffers_[i].mul_(momentum_).add_(g);
    }
    p.add_(buffers_[i], -lr_);
  }
}

void SgdMomentum::store(Checkpoint& ckpt, const std::string& prefix) const {
  for (std::size_t i = 0; i < params_.size(); ++i) {
    if (buffers_[i].defined()) ckpt.blocks[prefix + std::to_string(i) + ".momentum"] = buffers_[i].clone();
  }
  ckpt.blocks[prefix + "count"] = torch::tensor(static_cast<int64_t>(params_.size()), torch::kInt64);
}

void SgdMomentum::restore(const Checkpoint& ckpt, const std::string& prefix) {
  auto count = ckpt.blocks.find(prefix + "count");
  if (count == ckpt.blocks.end() || count->second.item<int64_t>() != static_cast<int64_t>(params_.size())) {
    throw DataError("optimizer state " + prefix + " does not match the parameter set");
  }
  for (std::size_t i = 0; i < params_.size(); ++i) {
    auto it = ckpt.blocks.find(prefix + std::to_string(i) + ".momentum");
    buffers_[i] = it == ckpt.blocks.end() ? torch::Tensor() : it->second.clone();
  }
}

OptimizerSet make_optimizers(IsganModel& model, const StagePlan& plan) {
  std::vector<torch::Tensor> eg;
  auto append = [&](const std::vector<torch::Tensor>& ps) { eg.insert(eg.end(), ps.begin(), ps.end()); };
  if (plan.train_baseline) append(model->baseline_parameters());
  if (plan.train_unrelated) append(model->unrelated_parameters());
  if (plan.train_generator) append(model->generator_parameters());

  OptimizerSet set;
  if (eg.empty()) throw ConfigError("stage " + std::to_string(plan.stage) + " has no trainable parameters");
  set.encoder_generator = std::make_unique<Adam>(eg, plan.lr, plan.adam_beta1, plan.adam_beta2);
  if (plan.train_discriminator) {
    auto d = model->discriminator_parameters();
    if (d.empty()) throw ConfigError("discriminator has no parameters");
    set.discriminator = std::make_unique<SgdMomentum>(d, plan.discriminator_lr, plan.sgd_momentum);
  }
  return set;
}

// ---------------------------------------------------------------------------
// Session
// ---------------------------------------------------------------------------

namespace {

void set_requires_grad(const std::vector<torch::Tensor>& params, bool on) {
  for (auto p : params) p.set_requires_grad(on);
}

torch::Tensor index_tensor(const std::vector<std::size_t>& idx) {
  std::vector<int64_t> v(idx.begin(), idx.end());
  return torch::tensor(v, torch::kInt64);
}

torch::Tensor label_tensor(const std::vector<int>& labels) {
  std::vector<int64_t> v(labels.begin(), labels.end());
  return torch::tensor(v, torch::kInt64);
}

std::vector<torch::Tensor> chunks(const torch::Tensor& t, int64_t n) { return t.split(n, 0); }

}  // namespace

TrainingSession::TrainingSession(const RunConfig& config, const data::DatasetIndex& data)
    : config_(config), data_(data) {
  if (config_.training.deterministic) {
    torch::set_num_threads(1);
  }
  if (config_.model.num_classes != data.num_identities) {
    throw ConfigError("model.num_classes=" + std::to_string(config_.model.num_classes) + " but the training split has " +
                      std::to_string(data.num_identities) + " identities");
  }
  torch::manual_seed(config_.training.seed);
  rng_.seed(config_.training.seed);
  model_ = IsganModel(config_.model);
}

void TrainingSession::set_modes(const StagePlan& plan) {
  model_->train();
  if (!plan.train_baseline) {
    model_->backbone->eval();
    model_->identity_encoder->eval();
  }
  set_requires_grad(model_->baseline_parameters(), plan.train_baseline);
  set_requires_grad(model_->unrelated_parameters(), plan.train_unrelated);
  set_requires_grad(model_->generator_parameters(), plan.train_generator);
  set_requires_grad(model_->discriminator_parameters(), plan.train_discriminator);
}

void TrainingSession::fault(const std::string& what, const data::PairBatch& batch,
                            const losses::LossReport* report) const {
  std::ostringstream msg;
  msg << what << "; batch files:";
  for (auto idx : batch.images) msg << ' ' << data_.records[idx].file;
  if (report) msg << "; terms: " << report->to_json().dump();
  spdlog::error("{}", msg.str());
  throw RuntimeFault(msg.str());
}

losses::LossReport TrainingSession::train_iteration(const StagePlan& plan, OptimizerSet& optimizers) {
  const auto batch = data::sample_pk_batch(data_, config_.training.batch_identities,
                                           config_.training.batch_images, rng_);
  std::vector<torch::Tensor> views;
  views.reserve(batch.images.size());
  for (auto idx : batch.images) views.push_back(data::augment(data_.records[idx].pixels, plan.augmentation, rng_));
  auto images = torch::stack(views);
  return plan.adversarial() ? adversarial_iteration(plan, optimizers, batch, images)
                            : baseline_iteration(plan, optimizers, batch, images);
}

losses::LossReport TrainingSession::baseline_iteration(const StagePlan& plan, OptimizerSet& optimizers,
                                                       const data::PairBatch& batch,
                                                       const torch::Tensor& images) {
  std::vector<int> slot_labels;
  for (auto idx : batch.images) slot_labels.push_back(data_.records[idx].identity);
  auto out = model_->identity_encoder->forward(model_->backbone->forward(images));
  losses::LossTerms terms;
  terms.id = losses::id_loss(out.logits, label_tensor(slot_labels));
  auto report = losses::LossReport::from_terms(terms, plan.weights);
  if (!report.finite()) fault("non-finite loss", batch, &report);
  auto total = losses::total_loss(terms, plan.weights, losses::Side::encoder_generator);
  optimizers.encoder_generator->zero_grad();
  total.backward();
  optimizers.encoder_generator->step();
  return report;
}

losses::LossReport TrainingSession::adversarial_iteration(const StagePlan& plan, OptimizerSet& optimizers,
                                                          const data::PairBatch& batch,
                                                          const torch::Tensor& images) {
  const int C = config_.model.num_classes;
  const auto n = static_cast<int64_t>(batch.size());
  std::vector<int> slot_labels;
  for (auto idx : batch.images) slot_labels.push_back(data_.records[idx].identity);
  auto slot_label_t = label_tensor(slot_labels);
  auto pair_labels = label_tensor(batch.labels);

  // Encoding. With a frozen baseline the shared backbone runs without a graph
  // and E_U trains on top of fixed feature maps.
  torch::Tensor fmap;
  IdentityOutput id_out;
  if (plan.train_baseline) {
    fmap = model_->backbone->forward(images);
    id_out = model_->identity_encoder->forward(fmap);
  } else {
    torch::NoGradGuard no_grad;
    fmap = model_->backbone->forward(images);
    id_out = model_->identity_encoder->forward(fmap);
  }
  GaussianCode code;
  try {
    code = model_->unrelated_encoder->forward(fmap, CodeMode::sample);
  } catch (const RuntimeFault& e) {
    fault(e.what(), batch, nullptr);
  }

  auto a = index_tensor(batch.anchor_slots);
  auto p = index_tensor(batch.positive_slots);
  auto phi_r = concat_bundle(id_out.features);
  auto phi_u = concat_bundle(code.sample);
  auto r_a = phi_r.index_select(0, a), r_p = phi_r.index_select(0, p);
  auto u_a = phi_u.index_select(0, a), u_p = phi_u.index_select(0, p);
  auto img_a = images.index_select(0, a), img_p = images.index_select(0, p);

  std::vector<ShuffleMask> masks;
  masks.reserve(n);
  for (int64_t i = 0; i < n; ++i) masks.push_back(sample_mask(rng_));
  const int64_t pr = model_->identity_encoder->part_dim();
  auto [s_ap, s_pa] = part_shuffle(split_bundle(r_a, pr), split_bundle(r_p, pr), masks);

  // Six generations per pair: aa, ap, pp, pa, then the part-shuffled a and p.
  auto id_block = torch::cat({r_a, r_p, r_p, r_a, concat_bundle(s_ap), concat_bundle(s_pa)});
  auto unrel_block = torch::cat({u_a, u_a, u_p, u_p, u_a, u_p});
  std::vector<int> gen_labels;
  for (int k = 0; k < 6; ++k) gen_labels.insert(gen_labels.end(), batch.labels.begin(), batch.labels.end());
  auto fakes = model_->generator->forward(
      make_generator_input(id_block, unrel_block, gen_labels, C, config_.model.noise_dim));

  // Discriminator step on detached generations.
  losses::LossTerms terms;
  {
    auto real = model_->discriminator->forward(torch::cat({img_a, img_p}));
    auto fake = model_->discriminator->forward(fakes.detach());
    auto rp = chunks(real.domain_patches, n), rc = chunks(real.class_logits, n);
    auto fp = chunks(fake.domain_patches, n), fc = chunks(fake.class_logits, n);
    losses::PairOutputs probs{rp[0], rp[1], {}}, logits{rc[0], rc[1], {}};
    for (int k = 0; k < 6; ++k) {
      probs.generated[k] = fp[k];
      logits.generated[k] = fc[k];
    }
    terms.domain_d = losses::domain_loss_d(probs);
    terms.class_d = losses::class_loss(logits, pair_labels);
    losses::LossTerms d_terms;
    d_terms.domain_d = terms.domain_d;
    d_terms.class_d = terms.class_d;
    auto d_report = losses::LossReport::from_terms(d_terms, plan.weights);
    if (!d_report.finite()) fault("non-finite discriminator loss", batch, &d_report);
    auto d_total = losses::total_loss(d_terms, plan.weights, losses::Side::discriminator);
    optimizers.discriminator->zero_grad();
    d_total.backward();
    optimizers.discriminator->step();
    terms.domain_d = terms.domain_d.detach();
    terms.class_d = terms.class_d.detach();
  }

  // Encoder/generator step against the updated discriminator.
  set_requires_grad(model_->discriminator_parameters(), false);
  auto scored = model_->discriminator->forward(fakes);
  set_requires_grad(model_->discriminator_parameters(), plan.train_discriminator);
  auto fp = chunks(scored.domain_patches, n), fc = chunks(scored.class_logits, n);
  auto g = chunks(fakes, n);
  terms.domain_g = losses::domain_loss_g(fp);
  terms.class_g = losses::class_loss_generated(fc, pair_labels);
  terms.shuffle = losses::shuffle_loss(img_a, img_p, {g[0], g[1], g[2], g[3]});
  terms.part_shuffle = losses::part_shuffle_loss(img_a, img_p, {g[4], g[5]});
  try {
    terms.kl = losses::kl_loss(code);
  } catch (const std::invalid_argument& e) {
    fault(e.what(), batch, nullptr);
  }
  if (plan.train_baseline) terms.id = losses::id_loss(id_out.logits, slot_label_t);

  auto report = losses::LossReport::from_terms(terms, plan.weights);
  if (!report.finite()) fault("non-finite loss", batch, &report);
  losses::LossTerms eg_terms = terms;
  eg_terms.domain_d = torch::Tensor();
  eg_terms.class_d = torch::Tensor();
  auto total = losses::total_loss(eg_terms, plan.weights, losses::Side::encoder_generator);
  optimizers.encoder_generator->zero_grad();
  total.backward();
  optimizers.encoder_generator->step();
  return report;
}

StageResult TrainingSession::train_stage(int stage, const StageCallbacks& callbacks, int first_epoch) {
  const auto plan = make_stage_plan(config_, stage, data_.count(data::Split::train));
  optimizers_ = make_optimizers(model_, plan);
  if (pending_optimizer_state_ && pending_optimizer_state_->stage == stage) {
    optimizers_.encoder_generator->restore(*pending_optimizer_state_, "optim.eg.");
    if (optimizers_.discriminator) optimizers_.discriminator->restore(*pending_optimizer_state_, "optim.d.");
  }
  pending_optimizer_state_.reset();

  StageResult result;
  result.stage = stage;
  result.last_epoch = first_epoch - 1;
  spdlog::info("stage {}: epochs {}..{}, {} iterations/epoch, lr {}", stage, first_epoch, plan.epochs,
               plan.iterations_per_epoch, plan.lr);
  for (int epoch = first_epoch; epoch <= plan.epochs; ++epoch) {
    set_modes(plan);
    double sum_total = 0.0, sum_id = 0.0;
    for (int it = 1; it <= plan.iterations_per_epoch; ++it) {
      auto report = train_iteration(plan, optimizers_);
      sum_total += report.total_encoder_generator;
      if (report.id) sum_id += *report.id;
      if (callbacks.on_iteration) callbacks.on_iteration({stage, epoch, it, report});
    }
    result.mean_total_per_epoch.push_back(sum_total / plan.iterations_per_epoch);
    result.mean_id_loss_per_epoch.push_back(sum_id / plan.iterations_per_epoch);
    result.last_epoch = epoch;
    spdlog::info("stage {} epoch {}/{}: mean E/G loss {:.4f}", stage, epoch, plan.epochs,
                 result.mean_total_per_epoch.back());
    if (callbacks.on_epoch) callbacks.on_epoch(make_checkpoint(stage, epoch));
  }
  set_requires_grad(model_->parameters(), true);
  model_->eval();
  return result;
}

Checkpoint TrainingSession::make_checkpoint(int stage, int epoch) const {
  Checkpoint ckpt;
  ckpt.stage = stage;
  ckpt.epoch = epoch;
  ckpt.config_hash = config_.hash();
  std::ostringstream rng_text;
  rng_text << rng_;
  ckpt.sampler_rng = rng_text.str();
  ckpt.metadata = {{"num_classes", config_.model.num_classes}};
  store_module(ckpt, *model_, "model.");
  if (optimizers_.encoder_generator) optimizers_.encoder_generator->store(ckpt, "optim.eg.");
  if (optimizers_.discriminator) optimizers_.discriminator->store(ckpt, "optim.d.");
  store_torch_rng(ckpt);
  return ckpt;
}

void TrainingSession::load_checkpoint(const Checkpoint& ckpt, bool resume) {
  restore_module(ckpt, *model_, "model.");
  if (!resume) return;
  std::istringstream rng_text(ckpt.sampler_rng);
  rng_text >> rng_;
  if (!rng_text) throw DataError("checkpoint sampler rng state is unreadable");
  restore_torch_rng(ckpt);
  const int epochs = config_.training.epochs[ckpt.stage - 1];
  if (ckpt.epoch < epochs) pending_optimizer_state_ = ckpt;
}

}  // namespace isgan::train
