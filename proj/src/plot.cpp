#include "cap/plot.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numeric>
#include <stdexcept>

#include <png.h>

namespace cap {

Canvas::Canvas(int w, int h, std::uint8_t fill)
    : width(w), height(h), rgb(static_cast<std::size_t>(w) * static_cast<std::size_t>(h) * 3, fill) {
  if (w <= 0 || h <= 0) throw std::invalid_argument("canvas size must be positive");
}

void Canvas::set(int x, int y, std::uint8_t r, std::uint8_t g, std::uint8_t b) {
  if (x < 0 || y < 0 || x >= width || y >= height) return;
  auto* p = &rgb[(static_cast<std::size_t>(y) * static_cast<std::size_t>(width) + static_cast<std::size_t>(x)) * 3];
  p[0] = r;
  p[1] = g;
  p[2] = b;
}

void Canvas::line(double x0, double y0, double x1, double y1, std::uint8_t r, std::uint8_t g, std::uint8_t b) {
  const int steps = static_cast<int>(std::ceil(std::max(std::abs(x1 - x0), std::abs(y1 - y0)))) + 1;
  for (int i = 0; i <= steps; ++i) {
    const double t = static_cast<double>(i) / steps;
    set(static_cast<int>(std::lround(x0 + t * (x1 - x0))), static_cast<int>(std::lround(y0 + t * (y1 - y0))), r, g, b);
  }
}

void write_png(const Canvas& c, const std::filesystem::path& path) {
  FILE* f = std::fopen(path.string().c_str(), "wb");
  if (!f) throw std::runtime_error("cannot write " + path.string());
  png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  png_infop info = png ? png_create_info_struct(png) : nullptr;
  if (!png || !info || setjmp(png_jmpbuf(png))) {
    png_destroy_write_struct(&png, &info);
    std::fclose(f);
    throw std::runtime_error("libpng failed writing " + path.string());
  }
  png_init_io(png, f);
  png_set_IHDR(png, info, static_cast<png_uint_32>(c.width), static_cast<png_uint_32>(c.height), 8, PNG_COLOR_TYPE_RGB,
               PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
  png_write_info(png, info);
  for (int y = 0; y < c.height; ++y)
    png_write_row(png, const_cast<png_bytep>(&c.rgb[static_cast<std::size_t>(y) * static_cast<std::size_t>(c.width) * 3]));
  png_write_end(png, nullptr);
  png_destroy_write_struct(&png, &info);
  std::fclose(f);
}

Canvas line_chart(std::span<const Series> series, const ChartOptions& o) {
  Canvas c(o.width, o.height);
  const int left = 40, right = o.width - 16, top = 16, bottom = o.height - 32;
  auto px = [&](double x) { return left + (x - o.x_min) / (o.x_max - o.x_min) * (right - left); };
  auto py = [&](double y) { return bottom - (y - o.y_min) / (o.y_max - o.y_min) * (bottom - top); };
  // frame and quarter ticks
  c.line(left, top, left, bottom, 0, 0, 0);
  c.line(left, bottom, right, bottom, 0, 0, 0);
  for (int i = 1; i <= 4; ++i) {
    const double fx = left + i * (right - left) / 4.0, fy = bottom - i * (bottom - top) / 4.0;
    c.line(fx, bottom, fx, bottom + 5, 0, 0, 0);
    c.line(left - 5, fy, left, fy, 0, 0, 0);
  }
  if (o.guide_y >= o.y_min && o.guide_y <= o.y_max)
    for (int x = left; x < right; x += 8) c.line(x, py(o.guide_y), x + 3, py(o.guide_y), 160, 160, 160);
  for (const Series& s : series) {
    if (s.x.size() != s.y.size()) throw std::invalid_argument("series x and y differ in length");
    for (std::size_t i = 1; i < s.x.size(); ++i) c.line(px(s.x[i - 1]), py(s.y[i - 1]), px(s.x[i]), py(s.y[i]), s.r, s.g, s.b);
    if (s.x.size() == 1) c.set(static_cast<int>(px(s.x[0])), static_cast<int>(py(s.y[0])), s.r, s.g, s.b);
  }
  return c;
}

Canvas pr_curve(std::span<const double> scores, std::span<const int> labels) {
  if (scores.size() != labels.size()) throw std::invalid_argument("scores and labels differ in length");
  std::vector<std::size_t> idx(scores.size());
  std::iota(idx.begin(), idx.end(), 0);
  std::stable_sort(idx.begin(), idx.end(), [&](auto a, auto b) { return scores[a] > scores[b]; });
  const double pos = static_cast<double>(std::count_if(labels.begin(), labels.end(), [](int l) { return l != 0; }));
  Series s;
  s.b = 200;
  s.x.push_back(0);
  s.y.push_back(1);
  double tp = 0, seen = 0;
  for (std::size_t i = 0; i < idx.size(); ++i) {
    tp += labels[idx[i]] != 0;
    seen += 1;
    // close a tie group before emitting a point
    if (i + 1 < idx.size() && scores[idx[i + 1]] == scores[idx[i]]) continue;
    const double recall = pos > 0 ? tp / pos : 0;
    s.x.push_back(recall);
    s.y.push_back(s.y.back());
    s.x.push_back(recall);
    s.y.push_back(tp / seen);
  }
  return line_chart(std::span<const Series>(&s, 1), {});
}

Canvas score_curve(std::span<const double> p_hat, int onset_frame) {
  Series s;
  s.r = 200;
  for (std::size_t t = 0; t < p_hat.size(); ++t) {
    s.x.push_back(static_cast<double>(t));
    s.y.push_back(p_hat[t]);
  }
  ChartOptions o;
  o.x_max = std::max<double>(1, static_cast<double>(p_hat.size()) - 1);
  o.guide_y = 0.5;
  std::vector<Series> all{s};
  if (onset_frame >= 0) {
    Series m;
    m.g = 150;
    m.x = {static_cast<double>(onset_frame), static_cast<double>(onset_frame)};
    m.y = {0, 1};
    all.push_back(m);
  }
  return line_chart(all, o);
}

Canvas heat_map(const Mat& map, int scale) {
  if (scale < 1) throw std::invalid_argument("scale must be at least 1");
  const double mx = map.size() ? map.maxCoeff() : 0;
  Canvas c(static_cast<int>(map.cols()) * scale, static_cast<int>(map.rows()) * scale, 0);
  for (Eigen::Index y = 0; y < map.rows(); ++y)
    for (Eigen::Index x = 0; x < map.cols(); ++x) {
      const double v = mx > 0 ? std::clamp(map(y, x) / mx, 0.0, 1.0) : 0.0;
      const auto g = static_cast<std::uint8_t>(std::lround(255 * v));
      for (int dy = 0; dy < scale; ++dy)
        for (int dx = 0; dx < scale; ++dx) c.set(static_cast<int>(x) * scale + dx, static_cast<int>(y) * scale + dy, g, g, g);
    }
  return c;
}

}  // namespace cap
