#include "cap/attention_decoder.hpp"

#include <cmath>

namespace cap {

std::vector<int> node_grid_cells(int n_vision, int n_text) {
  if (n_vision != 49 || n_text != 15) throw ShapeError("decoder grid expects 49 vision and 15 text nodes");
  std::vector<int> cells;
  for (int k = 0; k < n_vision; ++k) cells.push_back((k / 7) * 8 + k % 7);
  for (int t = 0; t < n_text; ++t) cells.push_back(t < 7 ? t * 8 + 7 : 7 * 8 + (t - 7));
  return cells;
}

Mat gaussian_kernel3(double sigma) {
  Mat k(3, 3);
  for (int dy = -1; dy <= 1; ++dy)
    for (int dx = -1; dx <= 1; ++dx) k(dy + 1, dx + 1) = std::exp(-(dx * dx + dy * dy) / (2.0 * sigma * sigma));
  return k / k.sum();
}

namespace {
int sym(int i, int n) {
  if (i < 0) return -i - 1;
  if (i >= n) return 2 * n - i - 1;
  return i;
}
}  // namespace

Mat gaussian_smooth(const Mat& map, double sigma) {
  const Mat k = gaussian_kernel3(sigma);
  const int h = static_cast<int>(map.rows()), w = static_cast<int>(map.cols());
  Mat out = Mat::Zero(h, w);
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      double acc = 0;
      for (int dy = -1; dy <= 1; ++dy)
        for (int dx = -1; dx <= 1; ++dx) acc += k(dy + 1, dx + 1) * map(sym(y + dy, h), sym(x + dx, w));
      out(y, x) = acc;
    }
  return out;
}

Mat gaussian_smooth_adjoint(const Mat& dmap, double sigma) {
  const Mat k = gaussian_kernel3(sigma);
  const int h = static_cast<int>(dmap.rows()), w = static_cast<int>(dmap.cols());
  Mat out = Mat::Zero(h, w);
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x)
      for (int dy = -1; dy <= 1; ++dy)
        for (int dx = -1; dx <= 1; ++dx) out(sym(y + dy, h), sym(x + dx, w)) += k(dy + 1, dx + 1) * dmap(y, x);
  return out;
}

Mat normalize_map(const Mat& map) {
  if ((map.array() < 0).any()) throw std::domain_error("attention map has negative entries");
  const double s = map.sum();
  if (s <= 0) return Mat::Constant(map.rows(), map.cols(), 1.0 / static_cast<double>(map.size()));
  return map / s;
}

Mat normalize_map_backward(const Mat& map, const Mat& normalized, const Mat& dn) {
  const double s = map.sum();
  if (s <= 0) return Mat::Zero(map.rows(), map.cols());
  const double inner = (dn.array() * normalized.array()).sum();
  return (dn.array() - inner) / s;
}

Mat downsample_gt(const Mat& gt, int out_h, int out_w) {
  if (gt.rows() % out_h != 0 || gt.cols() % out_w != 0)
    throw ShapeError("ground-truth size is not an integer multiple of the target");
  const int fy = static_cast<int>(gt.rows()) / out_h, fx = static_cast<int>(gt.cols()) / out_w;
  Mat out(out_h, out_w);
  for (int y = 0; y < out_h; ++y)
    for (int x = 0; x < out_w; ++x) out(y, x) = gt.block(y * fy, x * fx, fy, fx).mean();
  return normalize_map(out);
}

Mat feature_to_map(const Mat& feature, int height, int width) {
  expect_shape(feature, static_cast<Eigen::Index>(height) * width, 1, "single-channel feature map");
  Mat m(height, width);
  for (int y = 0; y < height; ++y)
    for (int x = 0; x < width; ++x) m(y, x) = feature(y * width + x, 0);
  return m;
}

Mat map_to_feature(const Mat& map) {
  Mat f(map.size(), 1);
  for (Eigen::Index y = 0; y < map.rows(); ++y)
    for (Eigen::Index x = 0; x < map.cols(); ++x) f(y * map.cols() + x, 0) = map(y, x);
  return f;
}

AttentionDecoder::AttentionDecoder(const DecoderConfig& cfg, Rng& rng)
    : config(cfg),
      mhsa("decoder.mhsa", cfg.context, cfg.heads, ParamGroup::kDecoder, rng),
      dconv1("decoder.dconv1", static_cast<int>(cfg.context), 64, 3, 1, 1, 0, ParamGroup::kDecoder, rng),
      dconv2("decoder.dconv2", 64, 16, 3, 1, 1, 0, ParamGroup::kDecoder, rng),
      dconv3("decoder.dconv3", 16, 1, 5, 2, 2, 1, ParamGroup::kDecoder, rng),
      bn("decoder.bn", 64, ParamGroup::kDecoder),
      cells(node_grid_cells(cfg.n_vision, cfg.n_text)) {}

Mat AttentionDecoder::forward(const Mat& s, Cache* c) const {
  expect_shape(s, static_cast<Eigen::Index>(cells.size()), config.context, "semantic context");
  if (!s.allFinite()) throw std::domain_error("non-finite semantic context");
  Cache local;
  Cache& k = c ? *c : local;
  k.shapes.clear();

  Mat hat = s + mhsa.forward(s, &k.attn);
  k.grid.resize(kGrid * kGrid, s.cols());
  for (std::size_t i = 0; i < cells.size(); ++i) k.grid.row(cells[i]) = hat.row(static_cast<Eigen::Index>(i));
  k.shapes.push_back({kGrid, kGrid, static_cast<int>(k.grid.cols())});

  k.h1 = dconv1.forward(k.grid, kGrid, kGrid, &k.c1);
  const int s1 = dconv1.out_size(kGrid);
  k.shapes.push_back({s1, s1, static_cast<int>(k.h1.cols())});
  k.b1 = bn.forward(k.h1, &k.bn);
  k.u = upsample_nearest(relu(k.b1), s1, s1, kUpsample);
  const int su = s1 * kUpsample;
  k.shapes.push_back({su, su, static_cast<int>(k.u.cols())});

  k.h2 = dconv2.forward(k.u, su, su, &k.c2);
  const int s2 = dconv2.out_size(su);
  k.shapes.push_back({s2, s2, static_cast<int>(k.h2.cols())});
  k.h3 = dconv3.forward(relu(k.h2), s2, s2, &k.c3);
  const int s3 = dconv3.out_size(s2);
  k.shapes.push_back({s3, s3, static_cast<int>(k.h3.cols())});
  if (s3 != kMap) throw ShapeError("decoder produced " + std::to_string(s3) + " instead of 64");

  k.raw = relu(feature_to_map(k.h3, s3, s3));
  k.smoothed = gaussian_smooth(k.raw, config.sigma);
  k.out = normalize_map(k.smoothed);
  return k.out;
}

Mat AttentionDecoder::backward(const Cache& c, const Mat& dmap) {
  Mat dsm = normalize_map_backward(c.smoothed, c.out, dmap);
  Mat draw = gaussian_smooth_adjoint(dsm, config.sigma);
  Mat dh3 = map_to_feature(relu_backward(feature_to_map(c.h3, kMap, kMap), draw));
  Mat dh2 = relu_backward(c.h2, dconv3.backward(c.c3, dh3));
  Mat du = dconv2.backward(c.c2, dh2);
  Mat db1 = relu_backward(c.b1, upsample_nearest_backward(du, kGrid, kGrid, kUpsample));
  Mat dgrid = dconv1.backward(c.c1, bn.backward(c.bn, db1));
  Mat dhat(static_cast<Eigen::Index>(cells.size()), dgrid.cols());
  for (std::size_t i = 0; i < cells.size(); ++i) dhat.row(static_cast<Eigen::Index>(i)) = dgrid.row(cells[i]);
  return dhat + mhsa.backward(c.attn, dhat);
}

void AttentionDecoder::collect(ParamList& out) {
  mhsa.collect(out);
  dconv1.collect(out);
  bn.collect(out);
  dconv2.collect(out);
  dconv3.collect(out);
}

}  // namespace cap
