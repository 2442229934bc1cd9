#include "figures.hpp"

#include <algorithm>

#include <opencv2/imgcodecs.hpp>
#include <opencv2/imgproc.hpp>

#include "isgan/errors.hpp"

namespace isgan::figures {

namespace {
constexpr int kPad = 4;
constexpr int kBorder = 3;
constexpr int kFooterHeight = 18;
}  // namespace

cv::Mat to_bgr(const torch::Tensor& image, int scale) {
  auto hwc = ((image.detach().to(torch::kFloat32).clamp(-1.0, 1.0) + 1.0) * 127.5)
                 .round()
                 .to(torch::kUInt8)
                 .permute({1, 2, 0})
                 .contiguous();
  const int h = static_cast<int>(hwc.size(0));
  const int w = static_cast<int>(hwc.size(1));
  cv::Mat rgb(h, w, CV_8UC3, hwc.data_ptr<std::uint8_t>());
  cv::Mat bgr;
  cv::cvtColor(rgb, bgr, cv::COLOR_RGB2BGR);
  if (scale > 1) cv::resize(bgr, bgr, cv::Size(w * scale, h * scale), 0, 0, cv::INTER_NEAREST);
  return bgr;
}

cv::Mat compose_grid(const std::vector<std::vector<Cell>>& rows, const std::string& footer) {
  int cell_w = 0, cell_h = 0;
  std::size_t cols = 0;
  for (const auto& row : rows) {
    cols = std::max(cols, row.size());
    for (const auto& c : row) {
      cell_w = std::max(cell_w, c.image.cols);
      cell_h = std::max(cell_h, c.image.rows);
    }
  }
  const int tile_w = cell_w + 2 * kBorder;
  const int tile_h = cell_h + 2 * kBorder;
  int baseline = 0;
  const auto text = cv::getTextSize(footer, cv::FONT_HERSHEY_PLAIN, 0.8, 1, &baseline);
  const int width = std::max(static_cast<int>(cols) * (tile_w + kPad) + kPad, text.width + 2 * kPad);
  const int height = static_cast<int>(rows.size()) * (tile_h + kPad) + kPad + kFooterHeight;
  cv::Mat canvas(height, width, CV_8UC3, cv::Scalar(255, 255, 255));
  for (std::size_t r = 0; r < rows.size(); ++r) {
    for (std::size_t c = 0; c < rows[r].size(); ++c) {
      const auto& cell = rows[r][c];
      const int x = kPad + static_cast<int>(c) * (tile_w + kPad);
      const int y = kPad + static_cast<int>(r) * (tile_h + kPad);
      if (cell.bordered) {
        cv::rectangle(canvas, cv::Rect(x, y, tile_w, tile_h), cell.border, cv::FILLED);
      }
      if (!cell.image.empty()) {
        cell.image.copyTo(canvas(cv::Rect(x + kBorder, y + kBorder, cell.image.cols, cell.image.rows)));
      }
    }
  }
  cv::putText(canvas, footer, cv::Point(kPad, height - 5), cv::FONT_HERSHEY_PLAIN, 0.8, cv::Scalar(40, 40, 40), 1,
              cv::LINE_8);
  return canvas;
}

void write_png(const std::string& path, const cv::Mat& image) {
  if (!cv::imwrite(path, image, {cv::IMWRITE_PNG_COMPRESSION, 6})) {
    throw RuntimeFault("cannot write " + path);
  }
}

}  // namespace isgan::figures
