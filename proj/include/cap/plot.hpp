#pragma once

// Minimal PNG output: line charts and heat maps. No text rendering, so axes
// are always [0, 1] x [0, 1] unless stated and the caller names the file.

#include <cstdint>
#include <filesystem>
#include <span>
#include <vector>

#include "cap/common.hpp"

namespace cap {

struct Canvas {
  int width = 0;
  int height = 0;
  std::vector<std::uint8_t> rgb;  // row-major, 3 bytes per pixel

  Canvas(int w, int h, std::uint8_t fill = 255);
  void set(int x, int y, std::uint8_t r, std::uint8_t g, std::uint8_t b);
  void line(double x0, double y0, double x1, double y1, std::uint8_t r, std::uint8_t g, std::uint8_t b);
};

void write_png(const Canvas& canvas, const std::filesystem::path& path);

struct Series {
  std::vector<double> x;
  std::vector<double> y;
  std::uint8_t r = 0, g = 0, b = 0;
};

// Series coordinates are mapped from [x_min, x_max] x [y_min, y_max] into a
// framed plot area; a dashed horizontal guide is drawn at guide_y if it lies
// in range.
struct ChartOptions {
  int width = 480;
  int height = 360;
  double x_min = 0, x_max = 1, y_min = 0, y_max = 1;
  double guide_y = -1;
};
Canvas line_chart(std::span<const Series> series, const ChartOptions& options);

// Precision-recall curve of video scores (step interpolation, same points the
// AP computation visits).
Canvas pr_curve(std::span<const double> scores, std::span<const int> labels);

// Per-frame score over time with the 0.5 threshold and, when given, a marker
// column at the accident onset frame.
Canvas score_curve(std::span<const double> p_hat, int onset_frame = -1);

// Grayscale heat map scaled by the map's maximum, each cell enlarged
// scale x scale.
Canvas heat_map(const Mat& map, int scale = 4);

}  // namespace cap
