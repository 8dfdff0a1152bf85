#pragma once

// Driver-attention decoder: self-attention over the 64 context nodes, an 8x8
// grid, and a deconvolution stack to a 64x64 map, followed by 3x3 Gaussian
// smoothing and normalization to a distribution.

#include <array>
#include <vector>

#include "cap/common.hpp"
#include "cap/layers.hpp"

namespace cap {

struct DecoderConfig {
  Eigen::Index context = 512;
  int heads = 8;
  int n_vision = 49;
  int n_text = 15;
  double sigma = 1.5;
};

// Grid cell (row * 8 + col) of each fused node. Vision node k sits at its
// 7x7 patch position (k / 7, k % 7); text nodes fill column 7 top to bottom,
// then row 7 left to right.
std::vector<int> node_grid_cells(int n_vision = 49, int n_text = 15);

// Normalized 3x3 Gaussian; kernel(1 + dy, 1 + dx).
Mat gaussian_kernel3(double sigma);
// Same-size 3x3 convolution with symmetric (edge-repeating) border handling.
Mat gaussian_smooth(const Mat& map, double sigma = 1.5);
Mat gaussian_smooth_adjoint(const Mat& dmap, double sigma = 1.5);

// Divides by the sum; an all-zero map becomes uniform. Throws on negatives.
Mat normalize_map(const Mat& map);
Mat normalize_map_backward(const Mat& map, const Mat& normalized, const Mat& dnormalized);

// Area-average resize by an integer factor, then normalized.
Mat downsample_gt(const Mat& gt, int out_h, int out_w);

// Rows = height, cols = width view of a single-channel (h*w x 1) feature map.
Mat feature_to_map(const Mat& feature, int height, int width);
Mat map_to_feature(const Mat& map);

class AttentionDecoder {
 public:
  AttentionDecoder() = default;
  AttentionDecoder(const DecoderConfig& config, Rng& rng);

  // (rows, cols, channels) after each stage: grid, dconv1, upsample, dconv2, dconv3.
  using StageShapes = std::vector<std::array<int, 3>>;

  struct Cache {
    MultiHeadSelfAttention::Cache attn;
    Mat grid;
    TransposedConv2d::Cache c1, c2, c3;
    Mat h1;
    SpatialBatchNorm::Cache bn;
    Mat b1, u, h2, h3;
    Mat raw, smoothed, out;
    StageShapes shapes;
  };

  // S (64 x context) -> normalized 64x64 map.
  Mat forward(const Mat& context, Cache* cache = nullptr) const;
  Mat backward(const Cache& cache, const Mat& dmap);
  void collect(ParamList& out);

  DecoderConfig config;
  MultiHeadSelfAttention mhsa;
  TransposedConv2d dconv1, dconv2, dconv3;
  SpatialBatchNorm bn;
  std::vector<int> cells;
  static constexpr int kGrid = 8;
  static constexpr int kUpsample = 4;
  static constexpr int kMap = 64;
};

}  // namespace cap
