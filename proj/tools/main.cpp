// isgan: data synthesis, staged training, evaluation, generation figures and
// retrieval galleries.

#include <CLI11.hpp>

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <numeric>
#include <sstream>

#include <spdlog/spdlog.h>

#include "figures.hpp"
#include "isgan/config.hpp"
#include "isgan/errors.hpp"
#include "isgan/evaluation.hpp"
#include "isgan/gan.hpp"
#include "isgan/run.hpp"
#include "isgan/shuffle.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace isgan;

namespace {

bool non_empty_dir(const fs::path& p) { return fs::exists(p) && fs::is_directory(p) && !fs::is_empty(p); }

std::array<int, 3> parse_epochs(const std::string& text) {
  std::array<int, 3> out{};
  std::stringstream ss(text);
  std::string item;
  int i = 0;
  while (std::getline(ss, item, ',')) {
    if (i == 3) throw ConfigError("--epochs takes three comma-separated counts");
    try {
      out[i++] = std::stoi(item);
    } catch (const std::exception&) {
      throw ConfigError("bad epoch count '" + item + "'");
    }
  }
  if (i != 3) throw ConfigError("--epochs takes three comma-separated counts");
  return out;
}

std::vector<std::string> split_list(const std::string& text) {
  std::vector<std::string> out;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) {
    if (!item.empty()) out.push_back(item);
  }
  return out;
}

// ---------------------------------------------------------------------------
// Shared option sets
// ---------------------------------------------------------------------------

struct RunOptions {
  std::string run_dir;
  std::string config;
  std::string checkpoint;
};

void add_run_options(CLI::App* cmd, RunOptions& o) {
  cmd->add_option("--run-dir", o.run_dir, "Run directory")->required();
  cmd->add_option("--config", o.config, "Config JSON (default: <run-dir>/config.json)");
  cmd->add_option("--checkpoint", o.checkpoint, "Checkpoint (default: final checkpoint of the last stage)");
}

struct LoadedRun {
  RunConfig config;
  data::DatasetIndex data;
  Checkpoint checkpoint;
  IsganModel model{nullptr};
  RunDirectory dir{""};
};

LoadedRun load_run(const RunOptions& o) {
  LoadedRun run;
  run.dir = RunDirectory(o.run_dir);
  const fs::path cfg_path = o.config.empty() ? run.dir.config_file() : fs::path(o.config);
  if (!fs::exists(cfg_path)) throw ConfigError("config not found: " + cfg_path.string());
  run.config = RunConfig::load(cfg_path);
  run.data = load_run_dataset(run.config);
  fs::path ckpt_path;
  if (!o.checkpoint.empty()) {
    ckpt_path = o.checkpoint;
  } else {
    auto latest = run.dir.latest_final_checkpoint(run.config);
    if (!latest) throw ConfigError("no final stage checkpoint under " + run.dir.checkpoint_dir().string());
    ckpt_path = *latest;
  }
  run.checkpoint = Checkpoint::load(ckpt_path);
  run.model = load_model(run.config, run.checkpoint);
  if (run.config.training.deterministic) torch::set_num_threads(1);
  return run;
}

std::string footer(const LoadedRun& run) {
  return "config " + run.config.hash() + "  stage " + std::to_string(run.checkpoint.stage) + " epoch " +
         std::to_string(run.checkpoint.epoch);
}

std::size_t find_record(const data::DatasetIndex& data, const std::string& name,
                        std::optional<data::Split> split = std::nullopt) {
  for (std::size_t i = 0; i < data.records.size(); ++i) {
    const auto& r = data.records[i];
    if (split && r.split != *split) continue;
    const std::string& f = r.file;
    const bool match = f == name || (f.size() > name.size() && f.compare(f.size() - name.size(), name.size(), name) == 0 &&
                                     f[f.size() - name.size() - 1] == '/');
    if (match) return i;
  }
  throw DataError("unknown image '" + name + "'" +
                  (split ? " in the " + std::string(data::to_string(*split)) + " split" : std::string()));
}

// ---------------------------------------------------------------------------
// synth
// ---------------------------------------------------------------------------

struct SynthOptions {
  std::string out;
  int ids = 10;
  int per_id = 20;
  std::uint64_t seed = 0;
  int height = 96;
  int width = 32;
  bool force = false;
};

int cmd_synth(const SynthOptions& o) {
  const fs::path out(o.out);
  if (non_empty_dir(out)) {
    if (!o.force) throw ConfigError("output directory " + out.string() + " is not empty (use --force)");
    fs::remove_all(out / "images");
    fs::remove(out / "manifest.jsonl");
  }
  auto spec = data::make_identity_spec(o.ids, o.seed, {o.height, o.width});
  auto result = data::synth_generate(spec, o.per_id, o.seed, out);
  std::cout << result.manifest.string() << '\n';
  return kExitOk;
}

// ---------------------------------------------------------------------------
// train
// ---------------------------------------------------------------------------

struct TrainOptions {
  std::string config;
  std::string data;
  std::string layout;
  std::string run_dir;
  std::string stage = "all";
  std::string resume;
  std::string epochs;
  std::optional<std::uint64_t> seed;
  bool force = false;
};

int cmd_train(const TrainOptions& o) {
  RunDirectory dir(o.run_dir);
  RunConfig config;
  if (!o.config.empty()) {
    config = RunConfig::load(o.config);
  } else if (fs::exists(dir.config_file())) {
    config = RunConfig::load(dir.config_file());
  } else {
    config = RunConfig::desk_synthetic("", 0);
  }
  if (!o.data.empty()) config.dataset.root = o.data;
  if (!o.layout.empty()) config.dataset.layout = data::layout_from_string(o.layout);
  if (!o.epochs.empty()) config.training.epochs = parse_epochs(o.epochs);
  if (o.seed) config.training.seed = *o.seed;
  config.output.run_dir = o.run_dir;

  TrainRequest request;
  if (o.stage == "all") {
    request.stages = {1, 2, 3};
  } else if (o.stage == "1" || o.stage == "2" || o.stage == "3") {
    request.stages = {std::stoi(o.stage)};
  } else {
    throw ConfigError("--stage must be 1, 2, 3 or all");
  }
  if (!o.resume.empty()) request.resume = fs::path(o.resume);

  auto data = load_run_dataset(config);
  if (fs::exists(dir.config_file())) {
    auto existing = RunConfig::load(dir.config_file());
    existing.output.run_dir = config.output.run_dir;
    if (existing.hash() != config.hash() && !o.force) {
      throw ConfigError("run directory " + dir.root().string() + " holds a different config (use --force)");
    }
  }
  config.save(dir.config_file());
  spdlog::info("config hash {}", config.hash());
  auto summary = run_training(config, data, dir, request);
  if (summary.last_checkpoint) std::cout << summary.last_checkpoint->string() << '\n';
  return kExitOk;
}

// ---------------------------------------------------------------------------
// eval
// ---------------------------------------------------------------------------

int cmd_eval(const RunOptions& o) {
  auto run = load_run(o);
  if (run.data.count(data::Split::query) == 0 || run.data.count(data::Split::gallery) == 0) {
    throw DataError("evaluation needs both query and gallery splits");
  }
  auto set = eval::build_retrieval_set(run.model, run.data);
  auto result = eval::evaluate(set);
  auto j = result.to_json();
  j["config_hash"] = run.config.hash();
  j["stage"] = run.checkpoint.stage;
  j["epoch"] = run.checkpoint.epoch;
  std::ofstream(run.dir.eval_file()) << j.dump(2) << '\n';
  std::printf("rank-1 %.4f  rank-5 %.4f  rank-10 %.4f  mAP %.4f  (%d queries)\n", result.rank(1), result.rank(5),
              result.rank(10), result.map, result.num_queries);
  return kExitOk;
}

// ---------------------------------------------------------------------------
// generate
// ---------------------------------------------------------------------------

struct GenerateOptions {
  RunOptions run;
  std::string mode = "reconstruct";
  std::string images;
  int steps = 8;
  std::uint64_t noise_seed = 0;
  std::string out;
};

struct Codes {
  torch::Tensor id, unrel;
  std::vector<int> labels;
};

Codes encode(LoadedRun& run, const std::vector<std::size_t>& indices) {
  Codes c;
  c.id = eval::extract_features(run.model, run.data, indices);
  c.unrel = eval::extract_unrelated_features(run.model, run.data, indices);
  for (auto i : indices) {
    const auto& r = run.data.records[i];
    // Only train identities have a class slot; others get the all-zero label.
    c.labels.push_back(r.split == data::Split::train ? r.identity : 0);
  }
  return c;
}

torch::Tensor generate_rows(LoadedRun& run, const torch::Tensor& id, const torch::Tensor& unrel,
                            const std::vector<int>& labels, std::uint64_t noise_seed) {
  torch::NoGradGuard no_grad;
  torch::manual_seed(noise_seed);
  auto input = make_generator_input(id, unrel, labels, run.config.model.num_classes, run.config.model.noise_dim);
  return run.model->generator->forward(input);
}

int cmd_generate(const GenerateOptions& o) {
  auto run = load_run(o.run);
  const auto names = split_list(o.images);
  if (names.empty()) throw ConfigError("--images lists no image");
  std::vector<std::size_t> idx;
  for (const auto& n : names) idx.push_back(find_record(run.data, n));
  auto codes = encode(run, idx);
  auto pixels = [&](std::size_t k) { return figures::to_bgr(run.data.records[idx[k]].pixels); };
  auto row = [&](std::int64_t k) { return torch::indexing::Slice(k, k + 1); };

  std::vector<std::vector<figures::Cell>> grid;
  if (o.mode == "reconstruct") {
    auto gen = generate_rows(run, codes.id, codes.unrel, codes.labels, o.noise_seed);
    for (std::size_t k = 0; k < idx.size(); ++k) grid.push_back({{pixels(k)}, {figures::to_bgr(gen[k])}});
  } else if (o.mode == "swap_identity") {
    if (idx.size() % 2 != 0) throw ConfigError("swap_identity takes images in pairs");
    for (std::size_t k = 0; k + 1 < idx.size(); k += 2) {
      auto a = static_cast<int64_t>(k), b = a + 1;
      auto id = torch::cat({codes.id.index({row(b)}), codes.id.index({row(a)})});
      auto un = torch::cat({codes.unrel.index({row(a)}), codes.unrel.index({row(b)})});
      auto gen = generate_rows(run, id, un, {codes.labels[b], codes.labels[a]}, o.noise_seed);
      grid.push_back({{pixels(k)}, {pixels(k + 1)}, {figures::to_bgr(gen[0])}, {figures::to_bgr(gen[1])}});
    }
  } else if (o.mode == "part_shuffle_grid") {
    if (idx.size() != 2) throw ConfigError("part_shuffle_grid takes exactly two images");
    // Upper-body locals: part2-local1, part3-local1, part3-local2; lower-body:
    // part2-local2, part3-local3. Cell (r, c) takes the upper locals from
    // image r and the lower locals from image c; globals and phi_U from image 0.
    const int64_t p = run.model->identity_encoder->part_dim();
    auto bundle = [&](int64_t k) { return split_bundle(codes.id.index({row(k)}), p); };
    ShuffleMask upper, lower;
    upper.swap_local = {true, false, true, true, false};
    lower.swap_local = {false, true, false, false, true};
    std::vector<torch::Tensor> ids;
    for (int r = 0; r < 2; ++r) {
      for (int c = 0; c < 2; ++c) {
        FeatureBundle b = bundle(0);
        if (r == 1) b = part_shuffle(b, bundle(1), upper).first;
        if (c == 1) b = part_shuffle(b, bundle(1), lower).first;
        ids.push_back(concat_bundle(b));
      }
    }
    auto un = codes.unrel.index({row(0)}).expand({4, codes.unrel.size(1)});
    auto gen = generate_rows(run, torch::cat(ids), un, std::vector<int>(4, codes.labels[0]), o.noise_seed);
    grid.push_back({{}, {pixels(0)}, {pixels(1)}});
    grid.push_back({{pixels(0)}, {figures::to_bgr(gen[0])}, {figures::to_bgr(gen[1])}});
    grid.push_back({{pixels(1)}, {figures::to_bgr(gen[2])}, {figures::to_bgr(gen[3])}});
  } else if (o.mode == "interpolate_id" || o.mode == "interpolate_unrel") {
    if (idx.size() % 2 != 0) throw ConfigError(o.mode + " takes images in pairs");
    const auto axis = o.mode == "interpolate_id" ? InterpolationAxis::identity : InterpolationAxis::unrelated;
    for (std::size_t k = 0; k + 1 < idx.size(); k += 2) {
      auto a = static_cast<int64_t>(k), b = a + 1;
      torch::manual_seed(o.noise_seed);
      auto noise = torch::randn({1, run.config.model.noise_dim});
      auto label = one_hot_labels({codes.labels[a]}, run.config.model.num_classes);
      GeneratorInput b1{codes.id.index({row(a)}), codes.unrel.index({row(a)}), noise, label};
      GeneratorInput b2{codes.id.index({row(b)}), codes.unrel.index({row(b)}), noise, label};
      torch::NoGradGuard no_grad;
      auto frames = interpolate_generate(run.model->generator, b1, b2, axis, o.steps);
      // Inputs above the first and last column, one column per alpha step.
      std::vector<figures::Cell> inputs(frames.size());
      inputs.front() = {pixels(k)};
      inputs.back() = {pixels(k + 1)};
      std::vector<figures::Cell> cells;
      for (const auto& f : frames) cells.push_back({figures::to_bgr(f)});
      grid.push_back(inputs);
      grid.push_back(cells);
    }
  } else {
    throw ConfigError("unknown mode " + o.mode);
  }

  const fs::path out = o.out.empty() ? run.dir.figures_dir() / (o.mode + ".png") : fs::path(o.out);
  if (out.has_parent_path()) fs::create_directories(out.parent_path());
  figures::write_png(out.string(), figures::compose_grid(grid, footer(run)));
  std::cout << out.string() << '\n';
  return kExitOk;
}

// ---------------------------------------------------------------------------
// retrieve
// ---------------------------------------------------------------------------

struct RetrieveOptions {
  RunOptions run;
  std::string query;
  int top_k = 10;
  std::string out;
};

int cmd_retrieve(const RetrieveOptions& o) {
  if (o.top_k < 1) throw ConfigError("--top-k must be positive");
  auto run = load_run(o.run);
  const auto q = find_record(run.data, o.query, data::Split::query);
  const auto g = run.data.split_indices(data::Split::gallery);
  if (g.empty()) throw DataError("gallery split is empty");
  // One image per forward pass: CPU conv kernels round differently across
  // batch shapes, and a pixel-identical gallery image must land at distance 0.
  auto qf = eval::extract_features(run.model, run.data, {q}, false, 1);
  auto gf = eval::extract_features(run.model, run.data, g, false, 1);
  auto dist = eval::distance_matrix(qf, gf)[0].contiguous();
  const auto* d = dist.data_ptr<double>();
  std::vector<std::size_t> order(g.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t x, std::size_t y) { return d[x] < d[y]; });
  order.resize(std::min<std::size_t>(order.size(), o.top_k));

  const auto& qr = run.data.records[q];
  json ranking = json::array();
  std::vector<figures::Cell> cells{{figures::to_bgr(qr.pixels), true, cv::Scalar(128, 128, 128)}};
  for (std::size_t rank = 0; rank < order.size(); ++rank) {
    const auto& gr = run.data.records[g[order[rank]]];
    const bool correct = gr.identity == qr.identity;
    ranking.push_back({{"rank", rank + 1},
                       {"file", gr.file},
                       {"identity", gr.identity},
                       {"camera", gr.camera},
                       {"distance", d[order[rank]]},
                       {"correct", correct}});
    cells.push_back({figures::to_bgr(gr.pixels), true, correct ? cv::Scalar(0, 170, 0) : cv::Scalar(0, 0, 220)});
  }
  const fs::path out =
      o.out.empty() ? run.dir.figures_dir() / ("retrieve_" + fs::path(qr.file).stem().string() + ".png")
                    : fs::path(o.out);
  if (out.has_parent_path()) fs::create_directories(out.parent_path());
  figures::write_png(out.string(), figures::compose_grid({cells}, footer(run)));
  json j = {{"query", {{"file", qr.file}, {"identity", qr.identity}, {"camera", qr.camera}}},
            {"config_hash", run.config.hash()},
            {"ranking", ranking}};
  auto json_path = out;
  json_path.replace_extension(".json");
  std::ofstream(json_path) << j.dump(2) << '\n';
  std::cout << out.string() << '\n' << json_path.string() << '\n';
  return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Identity shuffling GAN for person re-identification"};
  app.require_subcommand(1);
  std::string log_level = "info";
  app.add_option("--log-level", log_level, "trace, debug, info, warn, error or off");

  SynthOptions synth;
  auto* s = app.add_subcommand("synth", "Render a synthetic person dataset");
  s->add_option("--out", synth.out, "Output directory")->required();
  s->add_option("--ids", synth.ids, "Number of identities");
  s->add_option("--per-id", synth.per_id, "Images per identity");
  s->add_option("--seed", synth.seed, "Random seed");
  s->add_option("--height", synth.height, "Image height");
  s->add_option("--width", synth.width, "Image width");
  s->add_flag("--force", synth.force, "Overwrite an existing dataset");

  TrainOptions train;
  auto* t = app.add_subcommand("train", "Run the staged training schedule");
  t->add_option("--run-dir", train.run_dir, "Run directory")->required();
  t->add_option("--config", train.config, "Config JSON");
  t->add_option("--data", train.data, "Dataset root (overrides dataset.root)");
  t->add_option("--layout", train.layout, "market_dirs or synthetic_manifest");
  t->add_option("--stage", train.stage, "1, 2, 3 or all");
  t->add_option("--resume", train.resume, "Checkpoint to resume from");
  t->add_option("--epochs", train.epochs, "Epochs per stage, e.g. 30,20,10");
  t->add_option("--seed", train.seed, "Training seed");
  t->add_flag("--force", train.force, "Replace a run directory holding another config");

  RunOptions eval_opts;
  auto* e = app.add_subcommand("eval", "Evaluate CMC and mAP on the query/gallery splits");
  add_run_options(e, eval_opts);

  GenerateOptions gen;
  auto* g = app.add_subcommand("generate", "Render generation figures");
  add_run_options(g, gen.run);
  g->add_option("--mode", gen.mode, "reconstruct, swap_identity, part_shuffle_grid, interpolate_id, interpolate_unrel");
  g->add_option("--images", gen.images, "Comma-separated image files")->required();
  g->add_option("--steps", gen.steps, "Interpolation steps");
  g->add_option("--noise-seed", gen.noise_seed, "Seed of the generator noise");
  g->add_option("--out", gen.out, "Output PNG");

  RetrieveOptions ret;
  auto* r = app.add_subcommand("retrieve", "Render the top-k gallery for one query");
  add_run_options(r, ret.run);
  r->add_option("--query", ret.query, "Query image file")->required();
  r->add_option("--top-k", ret.top_k, "Number of gallery items");
  r->add_option("--out", ret.out, "Output PNG (a JSON ranking is written next to it)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& err) {
    const int code = app.exit(err);
    return code == 0 ? kExitOk : kExitConfig;
  }
  spdlog::set_level(spdlog::level::from_str(log_level));
  spdlog::set_pattern("[%l] %v");

  try {
    if (*s) return cmd_synth(synth);
    if (*t) return cmd_train(train);
    if (*e) return cmd_eval(eval_opts);
    if (*g) return cmd_generate(gen);
    if (*r) return cmd_retrieve(ret);
  } catch (const ConfigError& err) {
    spdlog::error("{}", err.what());
    return kExitConfig;
  } catch (const DataError& err) {
    spdlog::error("{}", err.what());
    return kExitData;
  } catch (const std::exception& err) {
    spdlog::error("{}", err.what());
    return kExitRuntime;
  }
  return kExitOk;
}
