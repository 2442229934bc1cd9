#pragma once

#include <filesystem>
#include <optional>
#include <vector>

#include <nlohmann/json.hpp>

#include "isgan/checkpoint.hpp"
#include "isgan/config.hpp"
#include "isgan/dataset.hpp"
#include "isgan/model.hpp"
#include "isgan/training.hpp"

namespace isgan {

// config.json, checkpoints/stage{S}_epoch{N}.ckpt, metrics.jsonl, eval.json, figures/.
class RunDirectory {
 public:
  explicit RunDirectory(std::filesystem::path root) : root_(std::move(root)) {}

  const std::filesystem::path& root() const { return root_; }
  std::filesystem::path config_file() const { return root_ / "config.json"; }
  std::filesystem::path checkpoint_dir() const { return root_ / "checkpoints"; }
  std::filesystem::path checkpoint(int stage, int epoch) const;
  std::filesystem::path metrics_file() const { return root_ / "metrics.jsonl"; }
  std::filesystem::path eval_file() const { return root_ / "eval.json"; }
  std::filesystem::path figures_dir() const { return root_ / "figures"; }

  // Checkpoint written after the last epoch of `stage`.
  std::filesystem::path final_checkpoint(const RunConfig& config, int stage) const;
  // Final checkpoint of the highest completed stage, if any.
  std::optional<std::filesystem::path> latest_final_checkpoint(const RunConfig& config) const;

 private:
  std::filesystem::path root_;
};

// Loads the configured dataset and aligns model.num_classes with its train split.
data::DatasetIndex load_run_dataset(RunConfig& config);

struct TrainRequest {
  std::vector<int> stages = {1, 2, 3};
  std::optional<std::filesystem::path> resume;
};

struct TrainSummary {
  std::vector<train::StageResult> stages;
  std::optional<std::filesystem::path> last_checkpoint;
};

// Trains the requested stages into `dir`. A stage n > 1 run on its own starts
// from the final stage n-1 checkpoint (ConfigError naming the expected path
// when it is missing). Metrics lines of the stages being (re)trained are
// replaced, so re-running a stage yields the same file as a single pass.
TrainSummary run_training(const RunConfig& config, const data::DatasetIndex& data, const RunDirectory& dir,
                          const TrainRequest& request);

// Model built from `config` with weights from `ckpt`; left in eval mode.
// Throws ConfigError when the checkpoint was produced under another config.
IsganModel load_model(const RunConfig& config, const Checkpoint& ckpt, bool check_hash = true);

// Metrics record of one iteration: {stage, epoch, iter, config_hash, terms...}.
nlohmann::json metrics_record(const train::IterationRecord& record, const std::string& config_hash);

}  // namespace isgan
