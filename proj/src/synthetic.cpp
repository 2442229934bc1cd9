#include <algorithm>
#include <cmath>
#include <fstream>
#include <numbers>

#include <fmt/format.h>
#include <nlohmann/json.hpp>
#include <opencv2/imgcodecs.hpp>
#include <opencv2/imgproc.hpp>

#include "isgan/dataset.hpp"
#include "isgan/errors.hpp"

namespace fs = std::filesystem;

namespace isgan::data {
namespace {

std::array<int, 3> hsv_to_rgb(double h, double s, double v) {
  h = h - std::floor(h);
  const double c = v * s;
  const double hp = h * 6.0;
  const double x = c * (1.0 - std::fabs(std::fmod(hp, 2.0) - 1.0));
  double r = 0, g = 0, b = 0;
  switch (static_cast<int>(hp) % 6) {
    case 0: r = c; g = x; break;
    case 1: r = x; g = c; break;
    case 2: g = c; b = x; break;
    case 3: g = x; b = c; break;
    case 4: r = x; b = c; break;
    default: r = c; b = x; break;
  }
  const double m = v - c;
  auto to8 = [&](double u) { return std::clamp(static_cast<int>(std::lround((u + m) * 255.0)), 0, 255); };
  return {to8(r), to8(g), to8(b)};
}

double uniform(std::mt19937_64& rng, double lo, double hi) {
  return std::uniform_real_distribution<double>(lo, hi)(rng);
}

cv::Scalar bgr(const std::array<int, 3>& rgb, double gain = 1.0) {
  return cv::Scalar(rgb[2] * gain, rgb[1] * gain, rgb[0] * gain);
}

struct Nuisance {
  double pose_angle_deg = 0;
  double scale = 1;
  double x_offset = 0;  // fraction of width
  double background_hue = 0;
  double background_value = 0.6;
  double illumination = 1;
  bool occluded = false;
  double occluder_top = 0;     // fraction of height
  double occluder_height = 0;  // fraction of height
  int camera = 1;
};

Nuisance sample_nuisance(const NuisanceRanges& ranges, std::mt19937_64& rng) {
  Nuisance n;
  n.pose_angle_deg = uniform(rng, -ranges.pose_angle_deg, ranges.pose_angle_deg);
  n.scale = uniform(rng, ranges.scale_min, ranges.scale_max);
  n.x_offset = uniform(rng, -0.12, 0.12);
  n.background_hue = uniform(rng, 0.0, 1.0);
  n.background_value = uniform(rng, 0.35, 0.9);
  n.illumination = uniform(rng, ranges.illumination_min, ranges.illumination_max);
  n.occluded = uniform(rng, 0.0, 1.0) < ranges.occluder_probability;
  n.occluder_top = uniform(rng, 0.45, 0.75);
  n.occluder_height = uniform(rng, 0.15, 0.3);
  n.camera = std::uniform_int_distribution<int>(1, std::max(1, ranges.num_cameras))(rng);
  return n;
}

// Draws at 2x and downsamples so thin limbs survive at 32 px width.
cv::Mat render(const IdentityAttributes& id, const Nuisance& nz, Resolution res,
               std::mt19937_64& rng) {
  constexpr int kSuper = 2;
  const int H = res.height * kSuper;
  const int W = res.width * kSuper;
  cv::Mat canvas(H, W, CV_8UC3);

  // Background: vertical gradient in the sampled hue plus a ground band.
  const auto sky = hsv_to_rgb(nz.background_hue, 0.55, nz.background_value);
  const auto ground = hsv_to_rgb(nz.background_hue + 0.08, 0.4, nz.background_value * 0.6);
  const int horizon = static_cast<int>(H * 0.62);
  for (int y = 0; y < H; ++y) {
    const double t = static_cast<double>(y) / H;
    const auto& base = y < horizon ? sky : ground;
    const double shade = 0.85 + 0.3 * t;
    canvas.row(y).setTo(bgr(base, shade));
  }

  const double fig_h = H * 0.9 * nz.scale;
  const double cx = W * (0.5 + nz.x_offset);
  const double feet = H * 0.97;
  const double top = feet - fig_h;
  const double lean = std::tan(nz.pose_angle_deg * std::numbers::pi / 180.0) * 0.35;
  auto px = [&](double frac_y, double dx) {
    // frac_y: 0 at head top, 1 at feet; lean shears the upper body.
    const double y = top + frac_y * fig_h;
    const double x = cx + dx + lean * (1.0 - frac_y) * fig_h;
    return cv::Point(static_cast<int>(std::lround(x)), static_cast<int>(std::lround(y)));
  };

  const double torso_half = W * 0.2 * id.body_width * nz.scale;
  const double leg_w = torso_half * 0.45;
  const double spread = std::fabs(nz.pose_angle_deg) / 22.0 * torso_half * 0.9;

  // Legs.
  const auto bottom = bgr(id.bottom_rgb);
  for (double side : {-1.0, 1.0}) {
    const double hip = side * torso_half * 0.5;
    const double foot = hip + side * spread;
    std::vector<cv::Point> leg = {px(0.52, hip - leg_w), px(0.52, hip + leg_w),
                                  px(1.0, foot + leg_w), px(1.0, foot - leg_w)};
    cv::fillConvexPoly(canvas, leg, bottom, cv::LINE_8);
  }
  // Hips band in the bottom color.
  std::vector<cv::Point> hips = {px(0.5, -torso_half), px(0.5, torso_half), px(0.6, torso_half),
                                 px(0.6, -torso_half)};
  cv::fillConvexPoly(canvas, hips, bottom, cv::LINE_8);

  // Torso and sleeves.
  const auto topc = bgr(id.top_rgb);
  std::vector<cv::Point> torso = {px(0.17, -torso_half), px(0.17, torso_half), px(0.52, torso_half),
                                  px(0.52, -torso_half)};
  cv::fillConvexPoly(canvas, torso, topc, cv::LINE_8);
  const int arm_thick = std::max(2, static_cast<int>(torso_half * 0.35));
  const double swing = nz.pose_angle_deg / 22.0 * torso_half;
  cv::line(canvas, px(0.19, -torso_half), px(0.48, -torso_half * 1.25 - swing), topc, arm_thick);
  cv::line(canvas, px(0.19, torso_half), px(0.48, torso_half * 1.25 + swing), topc, arm_thick);

  // Head: skin disc with a hair cap.
  const std::array<int, 3> skin = {224, 182, 150};
  const int gray = static_cast<int>(std::lround(30 + 190 * id.hair_tone));
  const std::array<int, 3> hair = {gray, static_cast<int>(gray * 0.85), static_cast<int>(gray * 0.7)};
  const int radius = std::max(2, static_cast<int>(fig_h * 0.075));
  const cv::Point head = px(0.085, 0.0);
  cv::circle(canvas, head, radius, bgr(skin), cv::FILLED, cv::LINE_8);
  cv::ellipse(canvas, head, cv::Size(radius, radius), 0, 180, 360, bgr(hair), cv::FILLED,
              cv::LINE_8);

  if (nz.occluded) {
    const int y0 = static_cast<int>(H * nz.occluder_top);
    const int y1 = std::min(H, y0 + static_cast<int>(H * nz.occluder_height));
    const auto occ = hsv_to_rgb(0.08, 0.35, 0.45);
    cv::rectangle(canvas, cv::Point(0, y0), cv::Point(W - 1, y1), bgr(occ), cv::FILLED);
  }

  cv::Mat small;
  cv::resize(canvas, small, cv::Size(res.width, res.height), 0, 0, cv::INTER_AREA);

  // Illumination gain and sensor noise.
  std::normal_distribution<double> noise(0.0, 3.0);
  for (int y = 0; y < small.rows; ++y) {
    auto* row = small.ptr<cv::Vec3b>(y);
    for (int x = 0; x < small.cols; ++x) {
      for (int c = 0; c < 3; ++c) {
        const double v = row[x][c] * nz.illumination + noise(rng);
        row[x][c] = static_cast<unsigned char>(std::clamp(std::lround(v), 0L, 255L));
      }
    }
  }
  return small;
}

}  // namespace

SyntheticIdentitySpec make_identity_spec(int num_identities, std::uint64_t seed,
                                         Resolution resolution) {
  if (num_identities < 2) throw ConfigError("synthetic data needs at least 2 identities");
  SyntheticIdentitySpec spec;
  spec.num_identities = num_identities;
  spec.resolution = resolution;
  std::mt19937_64 rng(seed ^ 0x9e3779b97f4a7c15ULL);

  // Stratified hues: each identity gets its own top-hue stratum and an
  // independently permuted bottom-hue stratum.
  std::vector<int> top_order(num_identities), bottom_order(num_identities);
  for (int i = 0; i < num_identities; ++i) top_order[i] = bottom_order[i] = i;
  std::shuffle(top_order.begin(), top_order.end(), rng);
  std::shuffle(bottom_order.begin(), bottom_order.end(), rng);
  for (int i = 0; i < num_identities; ++i) {
    IdentityAttributes a;
    const double th = (top_order[i] + uniform(rng, 0.2, 0.8)) / num_identities;
    const double bh = (bottom_order[i] + uniform(rng, 0.2, 0.8)) / num_identities;
    a.top_rgb = hsv_to_rgb(th, uniform(rng, 0.65, 1.0), uniform(rng, 0.7, 1.0));
    a.bottom_rgb = hsv_to_rgb(bh, uniform(rng, 0.5, 0.9), uniform(rng, 0.3, 0.75));
    a.body_width = uniform(rng, 0.75, 1.25);
    a.hair_tone = uniform(rng, 0.0, 1.0);
    spec.identities.push_back(a);
  }
  return spec;
}

SynthResult synth_generate(const SyntheticIdentitySpec& spec, int images_per_identity,
                           std::uint64_t seed, const fs::path& out_dir) {
  if (spec.num_identities < 2 || static_cast<int>(spec.identities.size()) != spec.num_identities) {
    throw ConfigError("synthetic spec needs >= 2 identities with attributes");
  }
  if (images_per_identity < 2) throw ConfigError("images_per_identity must be >= 2");
  if (spec.resolution.height <= 0 || spec.resolution.width <= 0) {
    throw ConfigError("synthetic resolution must be positive");
  }

  fs::create_directories(out_dir / "images");
  SynthResult result;
  result.directory = out_dir;
  result.manifest = out_dir / "manifest.jsonl";
  std::ofstream manifest(result.manifest, std::ios::binary | std::ios::trunc);
  if (!manifest) throw DataError("cannot write " + result.manifest.string());

  const int n_query = images_per_identity >= 5 ? std::max(1, images_per_identity / 10) : 0;
  const int n_gallery = images_per_identity >= 5 ? std::max(1, images_per_identity * 3 / 10) : 0;
  const int n_train = images_per_identity - n_query - n_gallery;

  std::mt19937_64 rng(seed);
  const std::vector<int> png_params = {cv::IMWRITE_PNG_COMPRESSION, 6};
  for (int id = 0; id < spec.num_identities; ++id) {
    const auto& attr = spec.identities[id];
    for (int k = 0; k < images_per_identity; ++k) {
      const Nuisance nz = sample_nuisance(spec.nuisance, rng);
      const cv::Mat img = render(attr, nz, spec.resolution, rng);
      const std::string rel = fmt::format("images/{:04d}_{:04d}.png", id + 1, k);
      if (!cv::imwrite((out_dir / rel).string(), img, png_params)) {
        throw DataError("cannot write " + (out_dir / rel).string());
      }
      const Split split = k < n_train ? Split::train
                          : k < n_train + n_query ? Split::query
                                                  : Split::gallery;
      nlohmann::json row;
      row["file"] = rel;
      row["identity"] = id + 1;
      row["camera"] = nz.camera;
      row["split"] = std::string(to_string(split));
      row["attributes"] = {{"top_rgb", attr.top_rgb},
                           {"bottom_rgb", attr.bottom_rgb},
                           {"body_width", attr.body_width},
                           {"hair_tone", attr.hair_tone}};
      row["nuisance"] = {{"pose_angle_deg", nz.pose_angle_deg},
                         {"scale", nz.scale},
                         {"x_offset", nz.x_offset},
                         {"background_hue", nz.background_hue},
                         {"background_value", nz.background_value},
                         {"illumination", nz.illumination},
                         {"occluded", nz.occluded}};
      manifest << row.dump() << '\n';
      ++result.num_images;
    }
  }
  return result;
}

}  // namespace isgan::data
