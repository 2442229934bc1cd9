#pragma once

#include <string>
#include <vector>

#include <opencv2/core.hpp>
#include <torch/torch.h>

namespace isgan::figures {

// [3, H, W] tensor in [-1, 1] (RGB) to an 8-bit BGR image, upscaled by
// `scale` with nearest-neighbour sampling.
cv::Mat to_bgr(const torch::Tensor& image, int scale = 2);

struct Cell {
  cv::Mat image;  // empty renders as a blank tile
  bool bordered = false;
  cv::Scalar border{0, 0, 0};
};

// Tiles rows of equally sized cells with padding and appends a text footer.
cv::Mat compose_grid(const std::vector<std::vector<Cell>>& rows, const std::string& footer);

// PNG with a fixed compression level; throws RuntimeFault on failure.
void write_png(const std::string& path, const cv::Mat& image);

}  // namespace isgan::figures
