#pragma once

#include <string>
#include <vector>

#include "volrig/types.hpp"

namespace volrig {

/// Row-major floating-point image in [0, 1]; 1 (gray), 3 (RGB) or
/// 4 (RGBA) interleaved channels.
struct Image {
  int width = 0, height = 0, channels = 0;
  std::vector<double> data;

  Image() = default;
  Image(int w, int h, int c, double fill = 0.0)
      : width(w), height(h), channels(c),
        data(static_cast<std::size_t>(w) * h * c, fill) {}

  double& at(int x, int y, int c = 0) {
    return data[(static_cast<std::size_t>(y) * width + x) * channels + c];
  }
  double at(int x, int y, int c = 0) const {
    return data[(static_cast<std::size_t>(y) * width + x) * channels + c];
  }
};

/// 8-bit PNG I/O. Values are clamped to [0, 1] and rounded on write;
/// 16-bit files are reduced and palette files expanded on read.
void write_png(const Image& img, const std::string& path);
Image read_png(const std::string& path);

}  // namespace volrig
