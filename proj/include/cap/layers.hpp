#pragma once

// Differentiable building blocks with hand-written backward passes.
//
// Token matrices are (tokens x channels). Spatial feature maps are stored as
// (height * width) x channels with position index y * width + x.
// Every backward() accumulates into Param::grad and returns the gradient with
// respect to its input.

#include <string>
#include <vector>

#include "cap/common.hpp"

namespace cap {

class Linear {
 public:
  Linear() = default;
  Linear(const std::string& name, Eigen::Index in, Eigen::Index out, ParamGroup group, Rng& rng, bool bias = true);

  Mat forward(const Mat& x) const;
  Mat backward(const Mat& x, const Mat& dy);
  void collect(ParamList& out);

  Eigen::Index in_dim() const { return weight.value.rows(); }
  Eigen::Index out_dim() const { return weight.value.cols(); }

  Param weight;  // in x out
  Param bias;    // 1 x out
  bool has_bias = true;
};

Mat relu(const Mat& x);
// dy masked by x > 0
Mat relu_backward(const Mat& x, const Mat& dy);

Mat softmax_rows(const Mat& logits);
Mat softmax_rows_backward(const Mat& probs, const Mat& dprobs);

// Inverted dropout. With rng == nullptr (evaluation) it is the identity and
// *mask is left empty. Otherwise *mask receives the per-entry scale.
Mat dropout(const Mat& x, double p, Rng* rng, Mat* mask);
Mat dropout_backward(const Mat& mask, const Mat& dy);

// Scaled dot-product multi-head self-attention, no residual path.
class MultiHeadSelfAttention {
 public:
  MultiHeadSelfAttention() = default;
  MultiHeadSelfAttention(const std::string& name, Eigen::Index dim, int heads, ParamGroup group, Rng& rng);

  struct Cache {
    Mat x, q, k, v, z;
    std::vector<Mat> probs;  // one (n x n) matrix per head
  };

  Mat forward(const Mat& x, Cache* cache = nullptr) const;
  Mat backward(const Cache& cache, const Mat& dy);
  void collect(ParamList& out);

  Eigen::Index dim() const { return wq.in_dim(); }
  int heads() const { return heads_; }

  Linear wq, wk, wv, wo;

 private:
  int heads_ = 1;
};

// Transposed 2-D convolution ("deconvolution"). Output side length is
// (in - 1) * stride - 2 * padding + kernel + output_padding.
class TransposedConv2d {
 public:
  TransposedConv2d() = default;
  TransposedConv2d(const std::string& name, int in_channels, int out_channels, int kernel, int stride, int padding,
                   int output_padding, ParamGroup group, Rng& rng);

  struct Cache {
    Mat x;
    int height = 0, width = 0;
  };

  int out_size(int in) const { return (in - 1) * stride_ - 2 * padding_ + kernel_ + output_padding_; }
  Mat forward(const Mat& x, int height, int width, Cache* cache = nullptr) const;
  Mat backward(const Cache& cache, const Mat& dy);
  void collect(ParamList& out);

  Param weight;  // in_channels x (kernel * kernel * out_channels), column (ky * k + kx) * out + o
  Param bias;    // 1 x out_channels

 private:
  int in_ = 0, out_ = 0, kernel_ = 1, stride_ = 1, padding_ = 0, output_padding_ = 0;
};

// Batch normalization of a single frame's feature map: per-channel statistics
// over spatial positions, learnable scale and shift. Training and evaluation
// compute the same function.
class SpatialBatchNorm {
 public:
  SpatialBatchNorm() = default;
  SpatialBatchNorm(const std::string& name, int channels, ParamGroup group, double eps = 1e-5);

  struct Cache {
    Mat xhat;
    RowVec inv_std;
  };

  Mat forward(const Mat& x, Cache* cache = nullptr) const;
  Mat backward(const Cache& cache, const Mat& dy);
  void collect(ParamList& out);

  Param gamma, beta;
  double eps = 1e-5;
};

// Nearest-neighbor upsampling of an (h*w) x c map by an integer factor.
Mat upsample_nearest(const Mat& x, int height, int width, int factor);
Mat upsample_nearest_backward(const Mat& dy, int height, int width, int factor);

}  // namespace cap
