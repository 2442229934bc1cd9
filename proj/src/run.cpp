#include "isgan/run.hpp"

#include <algorithm>
#include <fstream>

#include <spdlog/spdlog.h>

#include "isgan/errors.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace isgan {

fs::path RunDirectory::checkpoint(int stage, int epoch) const {
  return checkpoint_dir() / ("stage" + std::to_string(stage) + "_epoch" + std::to_string(epoch) + ".ckpt");
}

fs::path RunDirectory::final_checkpoint(const RunConfig& config, int stage) const {
  return checkpoint(stage, config.training.epochs.at(stage - 1));
}

std::optional<fs::path> RunDirectory::latest_final_checkpoint(const RunConfig& config) const {
  for (int s = 3; s >= 1; --s) {
    auto p = final_checkpoint(config, s);
    if (fs::exists(p)) return p;
  }
  return std::nullopt;
}

data::DatasetIndex load_run_dataset(RunConfig& config) {
  if (config.dataset.root.empty()) throw ConfigError("dataset.root is not set");
  auto data = data::load_dataset(config.dataset.root, config.dataset.layout, config.dataset.resolution);
  config.model.resolution = config.dataset.resolution;
  if (config.model.num_classes != data.num_identities) {
    spdlog::info("model.num_classes set to {} from the training split", data.num_identities);
    config.model.num_classes = data.num_identities;
  }
  return data;
}

json metrics_record(const train::IterationRecord& record, const std::string& config_hash) {
  json j = record.report.to_json();
  j["stage"] = record.stage;
  j["epoch"] = record.epoch;
  j["iter"] = record.iteration;
  j["config_hash"] = config_hash;
  return j;
}

namespace {

// Keeps metrics lines strictly before (stage, epoch).
void truncate_metrics(const fs::path& file, int stage, int epoch) {
  if (!fs::exists(file)) return;
  std::ifstream in(file);
  std::vector<std::string> kept;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    try {
      auto j = json::parse(line);
      const int s = j.at("stage").get<int>();
      const int e = j.at("epoch").get<int>();
      if (s < stage || (s == stage && e < epoch)) kept.push_back(line);
    } catch (const json::exception&) {
      throw DataError("unreadable metrics line in " + file.string());
    }
  }
  in.close();
  std::ofstream out(file, std::ios::trunc);
  for (const auto& l : kept) out << l << '\n';
}

void prune_checkpoints(const RunDirectory& dir, int stage, int newest_epoch, int keep) {
  if (keep <= 0) return;
  for (int e = newest_epoch - keep; e >= 1; --e) {
    auto p = dir.checkpoint(stage, e);
    if (!fs::exists(p)) break;
    fs::remove(p);
  }
}

}  // namespace

TrainSummary run_training(const RunConfig& config, const data::DatasetIndex& data, const RunDirectory& dir,
                          const TrainRequest& request) {
  if (request.stages.empty()) throw ConfigError("no stage requested");
  for (int s : request.stages) {
    if (s < 1 || s > 3) throw ConfigError("stage must be 1, 2 or 3");
  }
  std::vector<int> stages = request.stages;
  std::sort(stages.begin(), stages.end());
  stages.erase(std::unique(stages.begin(), stages.end()), stages.end());
  for (std::size_t i = 1; i < stages.size(); ++i) {
    if (stages[i] != stages[i - 1] + 1) throw ConfigError("requested stages must be consecutive");
  }

  train::TrainingSession session(config, data);
  const std::string hash = config.hash();
  int first_epoch = 1;

  if (request.resume) {
    auto ckpt = Checkpoint::load(*request.resume);
    if (ckpt.config_hash != hash) {
      throw ConfigError("checkpoint " + request.resume->string() + " was written under config " +
                        ckpt.config_hash + ", current config is " + hash);
    }
    session.load_checkpoint(ckpt, true);
    int stage = ckpt.stage;
    first_epoch = ckpt.epoch + 1;
    if (ckpt.epoch >= config.training.epochs[stage - 1]) {
      ++stage;
      first_epoch = 1;
    }
    if (stage > 3) {
      spdlog::info("checkpoint already completes training");
      return {{}, *request.resume};
    }
    if (stage < stages.front() || stage > stages.back()) {
      throw ConfigError("resume point is stage " + std::to_string(stage) + ", outside the requested stages");
    }
    stages.erase(stages.begin(), std::find(stages.begin(), stages.end(), stage));
  } else if (stages.front() > 1) {
    const auto prereq = dir.final_checkpoint(config, stages.front() - 1);
    if (!fs::exists(prereq)) {
      throw ConfigError("stage " + std::to_string(stages.front()) + " needs the checkpoint " + prereq.string());
    }
    auto ckpt = Checkpoint::load(prereq);
    if (ckpt.config_hash != hash) {
      throw ConfigError("checkpoint " + prereq.string() + " was written under another config");
    }
    session.load_checkpoint(ckpt, true);
  }

  fs::create_directories(dir.checkpoint_dir());
  truncate_metrics(dir.metrics_file(), stages.front(), first_epoch);
  std::ofstream metrics(dir.metrics_file(), std::ios::app);
  if (!metrics) throw RuntimeFault("cannot write " + dir.metrics_file().string());

  TrainSummary summary;
  for (int stage : stages) {
    train::StageCallbacks callbacks;
    callbacks.on_iteration = [&](const train::IterationRecord& r) {
      metrics << metrics_record(r, hash).dump() << '\n';
    };
    callbacks.on_epoch = [&](const Checkpoint& ckpt) {
      metrics.flush();
      const auto path = dir.checkpoint(ckpt.stage, ckpt.epoch);
      ckpt.save(path);
      summary.last_checkpoint = path;
      prune_checkpoints(dir, ckpt.stage, ckpt.epoch, config.training.keep_checkpoints);
    };
    auto result = session.train_stage(stage, callbacks, first_epoch);
    if (config.training.epochs[stage - 1] == 0) {
      // An empty stage still leaves a checkpoint for the next one to start from.
      const auto path = dir.checkpoint(stage, 0);
      session.make_checkpoint(stage, 0).save(path);
      summary.last_checkpoint = path;
    }
    summary.stages.push_back(result);
    first_epoch = 1;
  }
  metrics.flush();
  return summary;
}

IsganModel load_model(const RunConfig& config, const Checkpoint& ckpt, bool check_hash) {
  if (check_hash && ckpt.config_hash != config.hash()) {
    throw ConfigError("checkpoint config hash " + ckpt.config_hash + " does not match " + config.hash());
  }
  IsganModel model(config.model);
  restore_module(ckpt, *model, "model.");
  model->eval();
  return model;
}

}  // namespace isgan
