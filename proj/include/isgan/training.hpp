#pragma once

#include <functional>
#include <memory>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include <torch/torch.h>

#include "isgan/checkpoint.hpp"
#include "isgan/config.hpp"
#include "isgan/dataset.hpp"
#include "isgan/losses.hpp"
#include "isgan/model.hpp"

namespace isgan::train {

// lambda_U per stage under the default weights: 0, 0.001, 0.01.
double schedule_lambda_u(int stage);
double schedule_lambda_u(int stage, const losses::LossWeights& weights);

struct StagePlan {
  int stage = 1;
  int epochs = 0;
  int iterations_per_epoch = 0;
  double lr = 2e-4;
  double discriminator_lr = 2e-4;
  double adam_beta1 = 0.9;
  double adam_beta2 = 0.999;
  double sgd_momentum = 0.9;
  data::AugmentationConfig augmentation;  // erasing only in stage 1
  losses::LossWeights weights;            // lambda_u already scheduled

  bool train_baseline = false;
  bool train_unrelated = false;
  bool train_generator = false;
  bool train_discriminator = false;

  // Stages 2 and 3 run the generative branch.
  bool adversarial() const { return stage >= 2; }
};

// Throws ConfigError for a stage outside {1, 2, 3} or an empty training split.
StagePlan make_stage_plan(const RunConfig& config, int stage, std::size_t num_train_images);

// Hand-rolled optimizers with the update rules of torch.optim, so their state
// can be serialized block by block.
class Optimizer {
 public:
  virtual ~Optimizer() = default;
  virtual void step() = 0;
  void zero_grad();
  const std::vector<torch::Tensor>& parameters() const { return params_; }
  double lr() const { return lr_; }

  virtual void store(Checkpoint& ckpt, const std::string& prefix) const = 0;
  virtual void restore(const Checkpoint& ckpt, const std::string& prefix) = 0;

 protected:
  Optimizer(std::vector<torch::Tensor> params, double lr);
  std::vector<torch::Tensor> params_;
  double lr_;
};

class Adam final : public Optimizer {
 public:
  Adam(std::vector<torch::Tensor> params, double lr, double beta1, double beta2, double eps = 1e-8);
  void step() override;
  void store(Checkpoint& ckpt, const std::string& prefix) const override;
  void restore(const Checkpoint& ckpt, const std::string& prefix) override;

 private:
  double beta1_, beta2_, eps_;
  std::vector<int64_t> steps_;
  std::vector<torch::Tensor> exp_avg_, exp_avg_sq_;
};

class SgdMomentum final : public Optimizer {
 public:
  SgdMomentum(std::vector<torch::Tensor> params, double lr, double momentum);
  void step() override;
  void store(Checkpoint& ckpt, const std::string& prefix) const override;
  void restore(const Checkpoint& ckpt, const std::string& prefix) override;

 private:
  double momentum_;
  std::vector<torch::Tensor> buffers_;  // undefined until the first step
};

struct OptimizerSet {
  std::unique_ptr<Adam> encoder_generator;
  std::unique_ptr<SgdMomentum> discriminator;  // null in stage 1
};

// Adam over the trainable encoder/generator parameters, momentum SGD over the
// discriminators. Throws ConfigError when the plan trains nothing.
OptimizerSet make_optimizers(IsganModel& model, const StagePlan& plan);

struct IterationRecord {
  int stage = 0;
  int epoch = 0;
  int iteration = 0;  // 1-based within the epoch
  losses::LossReport report;
};

struct StageCallbacks {
  std::function<void(const IterationRecord&)> on_iteration;
  // Called after each epoch with a checkpoint of the full training state.
  std::function<void(const Checkpoint&)> on_epoch;
};

struct StageResult {
  int stage = 0;
  int last_epoch = 0;
  std::vector<double> mean_total_per_epoch;
  std::vector<double> mean_id_loss_per_epoch;  // empty entries when inactive
};

// Owns the model, both rng streams and the current optimizers. In
// deterministic mode the intra-op thread pool is pinned to one thread.
class TrainingSession {
 public:
  TrainingSession(const RunConfig& config, const data::DatasetIndex& data);

  IsganModel& model() { return model_; }
  const RunConfig& config() const { return config_; }
  std::mt19937_64& rng() { return rng_; }

  // Trains `stage` from `first_epoch` through the plan's last epoch.
  StageResult train_stage(int stage, const StageCallbacks& callbacks = {}, int first_epoch = 1);

  // One D step then one E/G step (stage 1: E_R step only).
  losses::LossReport train_iteration(const StagePlan& plan, OptimizerSet& optimizers);

  Checkpoint make_checkpoint(int stage, int epoch) const;
  // Restores model weights. With `resume`, also the rng streams and, when the
  // next train_stage call continues the checkpoint's stage, optimizer state.
  void load_checkpoint(const Checkpoint& ckpt, bool resume);

 private:
  losses::LossReport baseline_iteration(const StagePlan& plan, OptimizerSet& optimizers,
                                        const data::PairBatch& batch, const torch::Tensor& images);
  losses::LossReport adversarial_iteration(const StagePlan& plan, OptimizerSet& optimizers,
                                           const data::PairBatch& batch, const torch::Tensor& images);
  void set_modes(const StagePlan& plan);
  [[noreturn]] void fault(const std::string& what, const data::PairBatch& batch,
                          const losses::LossReport* report) const;

  RunConfig config_;
  const data::DatasetIndex& data_;
  IsganModel model_{nullptr};
  std::mt19937_64 rng_;
  OptimizerSet optimizers_;
  std::optional<Checkpoint> pending_optimizer_state_;
};

}  // namespace isgan::train
