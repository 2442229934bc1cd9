#include "isgan/dataset.hpp"

#include <algorithm>
#include <fstream>
#include <regex>
#include <set>

#include <nlohmann/json.hpp>
#include <opencv2/imgcodecs.hpp>
#include <opencv2/imgproc.hpp>
#include <spdlog/spdlog.h>

#include "isgan/errors.hpp"

namespace fs = std::filesystem;

namespace isgan::data {

std::string_view to_string(Split split) {
  switch (split) {
    case Split::train:
      return "train";
    case Split::query:
      return "query";
    case Split::gallery:
      return "gallery";
  }
  return "train";
}

Split split_from_string(std::string_view name) {
  if (name == "train") return Split::train;
  if (name == "query") return Split::query;
  if (name == "gallery") return Split::gallery;
  throw DataError("unknown split '" + std::string(name) + "'");
}

Layout layout_from_string(std::string_view name) {
  if (name == "market_dirs" || name == "market") return Layout::market_dirs;
  if (name == "synthetic_manifest" || name == "synthetic") return Layout::synthetic_manifest;
  throw ConfigError("unknown dataset layout '" + std::string(name) + "'");
}

std::vector<std::size_t> DatasetIndex::split_indices(Split split) const {
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < records.size(); ++i) {
    if (records[i].split == split) out.push_back(i);
  }
  return out;
}

std::size_t DatasetIndex::count(Split split) const {
  return static_cast<std::size_t>(std::count_if(
      records.begin(), records.end(), [split](const ImageRecord& r) { return r.split == split; }));
}

MarketName parse_market_filename(std::string_view name) {
  // 0001_c1s1_000151_01.jpg; junk images carry "-1" as identity.
  static const std::regex pattern(R"(^(-1|\d{4})_c(\d)s(\d)_(\d{6})_(\d{2})\.(jpg|jpeg|png)$)",
                                  std::regex::icase);
  const std::string base = fs::path(std::string(name)).filename().string();
  std::smatch m;
  if (!std::regex_match(base, m, pattern)) {
    throw DataError("malformed Market-1501 file name: " + std::string(name));
  }
  MarketName out;
  out.identity = std::stoi(m[1].str());
  out.camera = std::stoi(m[2].str());
  out.junk = out.identity == kJunkIdentity;
  out.distractor = out.identity == kDistractorIdentity;
  return out;
}

torch::Tensor load_image(const fs::path& file, Resolution resolution) {
  cv::Mat img = cv::imread(file.string(), cv::IMREAD_COLOR);
  if (img.empty()) throw DataError("unreadable image file: " + file.string());
  if (img.rows != resolution.height || img.cols != resolution.width) {
    cv::resize(img, img, cv::Size(resolution.width, resolution.height), 0, 0, cv::INTER_LINEAR);
  }
  cv::cvtColor(img, img, cv::COLOR_BGR2RGB);
  auto hwc = torch::from_blob(img.data, {img.rows, img.cols, 3}, torch::kUInt8).clone();
  return hwc.permute({2, 0, 1}).contiguous().to(torch::kFloat32).div_(127.5).sub_(1.0);
}

namespace {

// Re-indexes train identities to {1..C}, dropping singletons. When the
// evaluation splits share the train identity space (synthetic data) they are
// mapped through the same table; unmapped identities get fresh labels > C.
void finalize_train_labels(DatasetIndex& index, bool remap_eval_splits) {
  std::map<int, std::vector<std::size_t>> raw;
  for (std::size_t i = 0; i < index.records.size(); ++i) {
    if (index.records[i].split == Split::train) raw[index.records[i].identity].push_back(i);
  }
  std::vector<bool> drop(index.records.size(), false);
  std::map<int, int> dense;
  int next = 1;
  for (auto& [id, members] : raw) {
    if (members.size() < 2) {
      spdlog::warn("identity {} has a single training image ({}); dropped", id,
                   index.records[members.front()].file);
      drop[members.front()] = true;
      continue;
    }
    dense[id] = next;
    for (auto m : members) index.records[m].identity = next;
    ++next;
  }
  if (remap_eval_splits) {
    int fresh = next;
    for (auto& rec : index.records) {
      if (rec.split == Split::train || rec.identity <= 0) continue;
      auto it = dense.find(rec.identity);
      if (it == dense.end()) it = dense.emplace(rec.identity, fresh++).first;
      rec.identity = it->second;
    }
  }
  if (std::find(drop.begin(), drop.end(), true) != drop.end()) {
    std::vector<ImageRecord> kept;
    kept.reserve(index.records.size());
    for (std::size_t i = 0; i < index.records.size(); ++i) {
      if (!drop[i]) kept.push_back(std::move(index.records[i]));
    }
    index.records = std::move(kept);
  }
  index.num_identities = next - 1;
  index.by_identity.clear();
  for (std::size_t i = 0; i < index.records.size(); ++i) {
    if (index.records[i].split == Split::train) {
      index.by_identity[index.records[i].identity].push_back(i);
    }
  }
  if (index.num_identities == 0) throw DataError("train split is empty after filtering");
}

std::vector<fs::path> list_images(const fs::path& dir) {
  std::vector<fs::path> files;
  for (const auto& entry : fs::directory_iterator(dir)) {
    if (!entry.is_regular_file()) continue;
    auto ext = entry.path().extension().string();
    std::transform(ext.begin(), ext.end(), ext.begin(), ::tolower);
    if (ext == ".jpg" || ext == ".jpeg" || ext == ".png") files.push_back(entry.path());
  }
  std::sort(files.begin(), files.end());
  return files;
}

void load_market_split(const fs::path& dir, Split split, Resolution resolution,
                       DatasetIndex& index) {
  if (!fs::is_directory(dir)) throw DataError("missing split directory: " + dir.string());
  std::size_t added = 0;
  for (const auto& file : list_images(dir)) {
    const auto name = parse_market_filename(file.filename().string());
    if (split == Split::train && (name.junk || name.distractor)) continue;
    ImageRecord rec;
    rec.pixels = load_image(file, resolution);
    rec.identity = name.identity;
    rec.camera = name.camera;
    rec.split = split;
    rec.file = file.string();
    index.records.push_back(std::move(rec));
    ++added;
  }
  if (added == 0) throw DataError("empty split: " + dir.string());
}

}  // namespace

DatasetIndex load_dataset(const fs::path& root, Layout layout, Resolution resolution) {
  if (!fs::is_directory(root)) throw DataError("dataset root does not exist: " + root.string());
  DatasetIndex index;
  index.resolution = resolution;

  if (layout == Layout::market_dirs) {
    load_market_split(root / "bounding_box_train", Split::train, resolution, index);
    load_market_split(root / "query", Split::query, resolution, index);
    load_market_split(root / "bounding_box_test", Split::gallery, resolution, index);
  } else {
    const fs::path manifest = root / "manifest.jsonl";
    std::ifstream in(manifest);
    if (!in) throw DataError("missing manifest: " + manifest.string());
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
      ++line_no;
      if (line.empty()) continue;
      nlohmann::json row;
      try {
        row = nlohmann::json::parse(line);
      } catch (const nlohmann::json::exception& e) {
        throw DataError(manifest.string() + ":" + std::to_string(line_no) + ": " + e.what());
      }
      ImageRecord rec;
      rec.file = (root / row.at("file").get<std::string>()).string();
      rec.pixels = load_image(rec.file, resolution);
      rec.identity = row.at("identity").get<int>();
      rec.camera = row.value("camera", 1);
      rec.split = split_from_string(row.value("split", std::string("train")));
      index.records.push_back(std::move(rec));
    }
    if (index.records.empty()) throw DataError("empty manifest: " + manifest.string());
  }

  finalize_train_labels(index, layout == Layout::synthetic_manifest);
  spdlog::info("loaded {}: train={} ({} ids) query={} gallery={}", root.string(),
               index.count(Split::train), index.num_identities, index.count(Split::query),
               index.count(Split::gallery));
  return index;
}

torch::Tensor stack_pixels(const DatasetIndex& index, const std::vector<std::size_t>& indices) {
  std::vector<torch::Tensor> rows;
  rows.reserve(indices.size());
  for (auto i : indices) rows.push_back(index.records.at(i).pixels);
  return torch::stack(rows);
}

}  // namespace isgan::data
