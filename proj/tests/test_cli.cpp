#include "doctest_torch.hpp"

#include <sys/wait.h>

#include <cstdlib>
#include <fstream>
#include <set>

#include <nlohmann/json.hpp>
#include <opencv2/core.hpp>
#include <opencv2/imgcodecs.hpp>

#include "isgan/config.hpp"
#include "support.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using testing_support::read_file;
using testing_support::TempDir;

namespace {

// Figure geometry: 2x nearest upscale of 96x32, 3 px border, 4 px padding.
constexpr int kPad = 4, kBorder = 3, kCellW = 64, kCellH = 192, kFooter = 18;
constexpr int kTileW = kCellW + 2 * kBorder, kTileH = kCellH + 2 * kBorder;

struct Result {
  int code;
  std::string output;
};

Result run_cli(const std::string& args, const fs::path& log) {
  const std::string cmd = std::string(ISGAN_CLI_PATH) + " --log-level warn " + args + " > " + log.string() + " 2>&1";
  const int status = std::system(cmd.c_str());
  return {WIFEXITED(status) ? WEXITSTATUS(status) : -1, read_file(log)};
}

cv::Mat cell_at(const cv::Mat& grid, int row, int col) {
  return grid(cv::Rect(kPad + col * (kTileW + kPad) + kBorder, kPad + row * (kTileH + kPad) + kBorder, kCellW, kCellH));
}

cv::Vec3b border_at(const cv::Mat& grid, int row, int col) {
  return grid.at<cv::Vec3b>(kPad + row * (kTileH + kPad) + 1, kPad + col * (kTileW + kPad) + 1);
}

bool same_pixels(const cv::Mat& a, const cv::Mat& b) {
  return a.size() == b.size() && cv::norm(a, b, cv::NORM_INF) == 0.0;
}

std::vector<json> manifest_rows(const fs::path& manifest) {
  std::ifstream in(manifest);
  std::vector<json> rows;
  std::string line;
  while (std::getline(in, line)) {
    if (!line.empty()) rows.push_back(json::parse(line));
  }
  return rows;
}

// One synthetic dataset and one short full run shared by the cases below.
struct Fixture {
  TempDir root{"cli"};
  fs::path data = root / "data";
  fs::path run = root / "run";
  fs::path config = root / "config.json";
  fs::path log = root / "log.txt";
  std::string query_a, query_b, gallery_file, duplicate_of;
  bool trained = false;

  Result cli(const std::string& args) { return run_cli(args, log); }

  void prepare() {
    if (trained) return;
    REQUIRE(cli("synth --out " + data.string() + " --ids 10 --per-id 20 --seed 7").code == 0);
    auto rows = manifest_rows(data / "manifest.jsonl");
    for (const auto& r : rows) {
      if (r["split"] == "query" && query_a.empty()) query_a = r["file"];
      else if (r["split"] == "query" && query_b.empty() && r["identity"] != 1) query_b = r["file"];
      if (r["split"] == "gallery" && gallery_file.empty()) gallery_file = r["file"];
    }
    // exact duplicate of the first query image, listed in the gallery
    json dup = rows.front();
    for (const auto& r : rows) {
      if (r["file"] == query_a) dup = r;
    }
    dup["split"] = "gallery";
    std::ofstream(data / "manifest.jsonl", std::ios::app) << dup.dump() << '\n';
    duplicate_of = query_a;

    auto cfg = testing_support::small_config(data, 10, {1, 1, 1}, 2, 0);
    cfg.save(config);
    auto r = cli("train --run-dir " + run.string() + " --config " + config.string());
    INFO(r.output);
    REQUIRE(r.code == 0);
    trained = true;
  }

  std::string run_args() const { return "--run-dir " + run.string(); }
};

Fixture& fixture() {
  static Fixture f;
  f.prepare();
  return f;
}

}  // namespace

TEST_SUITE("cli") {

TEST_CASE("synth: counts, refusal without --force, precondition errors, determinism") {
  TempDir dir("cli_synth");
  const auto out = dir / "syn";
  auto r = run_cli("synth --out " + out.string() + " --ids 10 --per-id 20 --seed 7", dir / "log");
  REQUIRE(r.code == 0);
  CHECK(manifest_rows(out / "manifest.jsonl").size() == 200);
  std::size_t pngs = 0;
  for (const auto& e : fs::directory_iterator(out / "images")) pngs += e.path().extension() == ".png";
  CHECK(pngs == 200);
  const auto first = read_file(out / "manifest.jsonl");
  const auto first_img = read_file(out / "images" / "0003_0005.png");

  CHECK(run_cli("synth --out " + out.string() + " --ids 10 --per-id 20 --seed 7", dir / "log").code == 2);
  CHECK(run_cli("synth --out " + out.string() + " --ids 10 --per-id 20 --seed 7 --force", dir / "log").code == 0);
  CHECK(read_file(out / "manifest.jsonl") == first);
  CHECK(read_file(out / "images" / "0003_0005.png") == first_img);

  CHECK(run_cli("synth --out " + (dir / "one").string() + " --ids 1", dir / "log").code == 2);
  CHECK(run_cli("synth --out " + (dir / "pp").string() + " --per-id 1", dir / "log").code == 2);
  CHECK(run_cli("synth", dir / "log").code == 2);
  CHECK(run_cli("frobnicate", dir / "log").code == 2);
}

TEST_CASE("train: run directory layout and missing prerequisites") {
  auto& f = fixture();
  CHECK(fs::exists(f.run / "config.json"));
  CHECK(fs::exists(f.run / "metrics.jsonl"));
  for (int s = 1; s <= 3; ++s) CHECK(fs::exists(f.run / "checkpoints" / ("stage" + std::to_string(s) + "_epoch1.ckpt")));
  auto saved = isgan::RunConfig::load(f.run / "config.json");
  std::ifstream metrics(f.run / "metrics.jsonl");
  std::string line;
  int n = 0;
  while (std::getline(metrics, line)) {
    CHECK(json::parse(line)["config_hash"] == saved.hash());
    ++n;
  }
  CHECK(n == 6);

  TempDir other("cli_prereq");
  auto r = f.cli("train --run-dir " + other.path().string() + " --config " + f.config.string() + " --stage 2");
  CHECK(r.code == 2);
  CHECK(r.output.find("stage1_epoch1.ckpt") != std::string::npos);
  CHECK(f.cli("train --run-dir " + other.path().string() + " --config " + f.config.string() + " --stage 4").code == 2);
  CHECK(f.cli("train --run-dir " + other.path().string() + " --config " + f.config.string() + " --epochs 1,2").code == 2);
  // same run directory, different config
  CHECK(f.cli("train " + f.run_args() + " --config " + f.config.string() + " --seed 9 --stage 1").code == 2);
}

TEST_CASE("train: identical seeds give identical metrics files") {
  auto& f = fixture();
  TempDir a("cli_det_a"), b("cli_det_b");
  auto args = " --config " + f.config.string() + " --stage 1 --seed 3";
  REQUIRE(f.cli("train --run-dir " + a.path().string() + args).code == 0);
  REQUIRE(f.cli("train --run-dir " + b.path().string() + args).code == 0);
  const auto ma = read_file(a / "metrics.jsonl");
  CHECK_FALSE(ma.empty());
  CHECK(ma == read_file(b / "metrics.jsonl"));
  CHECK(read_file(a / "checkpoints/stage1_epoch1.ckpt") == read_file(b / "checkpoints/stage1_epoch1.ckpt"));
}

TEST_CASE("eval: JSON report, byte-identical on repeat") {
  auto& f = fixture();
  auto r = f.cli("eval " + f.run_args());
  INFO(r.output);
  REQUIRE(r.code == 0);
  const auto first = read_file(f.run / "eval.json");
  auto j = json::parse(first);
  for (auto key : {"rank1", "rank5", "rank10", "mAP", "num_queries", "config_hash", "stage", "epoch"}) CHECK(j.contains(key));
  CHECK(j["stage"] == 3);
  CHECK(j["num_queries"] == 20);
  REQUIRE(f.cli("eval " + f.run_args()).code == 0);
  CHECK(read_file(f.run / "eval.json") == first);
  REQUIRE(f.cli("eval " + f.run_args() + " --checkpoint " + (f.run / "checkpoints/stage1_epoch1.ckpt").string()).code == 0);
  CHECK(json::parse(read_file(f.run / "eval.json"))["stage"] == 1);
  CHECK(f.cli("eval --run-dir " + (f.root / "nowhere").string()).code == 2);
}

TEST_CASE("generate: grids and endpoint equality") {
  auto& f = fixture();
  const auto figs = f.root / "figs";
  auto gen = [&](const std::string& mode, const std::string& images, const std::string& name) {
    auto r = f.cli("generate " + f.run_args() + " --mode " + mode + " --images " + images + " --noise-seed 5 --out " +
                   (figs / name).string());
    INFO(r.output);
    REQUIRE(r.code == 0);
    auto img = cv::imread((figs / name).string(), cv::IMREAD_COLOR);
    REQUIRE_FALSE(img.empty());
    return img;
  };
  const auto pair = f.query_a + "," + f.query_b;
  auto recon_a = gen("reconstruct", f.query_a, "recon_a.png");
  CHECK(recon_a.rows == kTileH + 2 * kPad + kFooter);
  auto recon = gen("reconstruct", pair, "recon.png");
  CHECK(recon.rows == 2 * (kTileH + kPad) + kPad + kFooter);
  auto swap = gen("swap_identity", pair, "swap.png");
  auto interp = gen("interpolate_id", pair, "interp.png");
  CHECK(interp.cols == 8 * (kTileW + kPad) + kPad);
  CHECK(interp.rows == 2 * (kTileH + kPad) + kPad + kFooter);
  // row 0 shows the inputs over the first and last column, row 1 the 8 frames
  CHECK(same_pixels(cell_at(interp, 0, 0), cell_at(recon_a, 0, 0)));
  CHECK(same_pixels(cell_at(interp, 1, 0), cell_at(recon_a, 0, 1)));
  CHECK(same_pixels(cell_at(interp, 1, 7), cell_at(swap, 0, 2)));  // G(phi_R(b) + phi_U(a)), both labels zero
  CHECK_FALSE(same_pixels(cell_at(interp, 1, 0), cell_at(interp, 1, 7)));
  auto interp_u = gen("interpolate_unrel", pair, "interp_u.png");
  CHECK(same_pixels(cell_at(interp_u, 1, 0), cell_at(recon_a, 0, 1)));
  auto grid = gen("part_shuffle_grid", pair, "grid.png");
  CHECK(grid.rows == 3 * (kTileH + kPad) + kPad + kFooter);
  // diagonal cell (0, 0) keeps image a's own identity code
  CHECK(same_pixels(cell_at(grid, 1, 1), cell_at(recon_a, 0, 1)));
  CHECK(same_pixels(cell_at(grid, 0, 1), cell_at(recon, 0, 0)));
  CHECK(same_pixels(cell_at(grid, 0, 2), cell_at(recon, 1, 0)));

  const auto again = gen("interpolate_id", pair, "interp2.png");
  CHECK(same_pixels(again, interp));
  REQUIRE(f.cli("generate " + f.run_args() + " --images " + f.query_a).code == 0);
  CHECK(fs::exists(f.run / "figures" / "reconstruct.png"));

  CHECK(f.cli("generate " + f.run_args() + " --images nothing_here.png").code == 3);
  CHECK(f.cli("generate " + f.run_args() + " --mode swap_identity --images " + f.query_a).code == 2);
  CHECK(f.cli("generate " + f.run_args() + " --mode sideways --images " + f.query_a).code == 2);
  CHECK(f.cli("generate " + f.run_args() + " --images " + f.query_a + " --out /proc/isgan/x.png").code == 4);
}

TEST_CASE("retrieve: ranking JSON, borders and the exact duplicate") {
  auto& f = fixture();
  const auto out = f.root / "ret" / "q.png";
  auto r = f.cli("retrieve " + f.run_args() + " --query " + f.query_a + " --top-k 8 --out " + out.string());
  INFO(r.output);
  REQUIRE(r.code == 0);
  auto j = json::parse(read_file(fs::path(out).replace_extension(".json")));
  const int qid = j["query"]["identity"];
  auto ranking = j["ranking"];
  REQUIRE(ranking.size() == 8);
  CHECK(ranking[0]["distance"].get<double>() == 0.0);
  CHECK(fs::path(ranking[0]["file"].get<std::string>()).filename() == fs::path(f.duplicate_of).filename());
  auto img = cv::imread(out.string(), cv::IMREAD_COLOR);
  REQUIRE_FALSE(img.empty());
  const cv::Vec3b green(0, 170, 0), red(0, 0, 220);
  for (std::size_t k = 0; k < ranking.size(); ++k) {
    if (k > 0) CHECK(ranking[k]["distance"].get<double>() >= ranking[k - 1]["distance"].get<double>());
    const bool correct = ranking[k]["identity"].get<int>() == qid;
    CHECK(ranking[k]["correct"].get<bool>() == correct);
    CHECK(border_at(img, 0, static_cast<int>(k) + 1) == (correct ? green : red));
  }

  auto top1 = f.root / "ret" / "top1.png";
  REQUIRE(f.cli("retrieve " + f.run_args() + " --query " + f.query_a + " --top-k 1 --out " + top1.string()).code == 0);
  const auto top1_json = read_file(fs::path(top1).replace_extension(".json"));
  CHECK(json::parse(top1_json)["ranking"].size() == 1);
  REQUIRE(f.cli("retrieve " + f.run_args() + " --query " + f.query_a + " --top-k 1 --out " + top1.string()).code == 0);
  CHECK(read_file(fs::path(top1).replace_extension(".json")) == top1_json);

  CHECK(f.cli("retrieve " + f.run_args() + " --query " + f.gallery_file).code == 3);
  CHECK(f.cli("retrieve " + f.run_args() + " --query " + f.query_a + " --top-k 0").code == 2);
}

}  // TEST_SUITE
