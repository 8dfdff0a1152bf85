#include "cap/layers.hpp"

#include <cmath>

namespace cap {

Linear::Linear(const std::string& name, Eigen::Index in, Eigen::Index out, ParamGroup group, Rng& rng, bool bias_on)
    : weight(name + ".weight", group, in, out), bias(name + ".bias", group, 1, out), has_bias(bias_on) {
  init_uniform_fan_in(weight, in, rng);
  if (has_bias) init_uniform_fan_in(bias, in, rng);
}

Mat Linear::forward(const Mat& x) const {
  Mat y = x * weight.value;
  if (has_bias) y.rowwise() += bias.value.row(0);
  return y;
}

Mat Linear::backward(const Mat& x, const Mat& dy) {
  weight.grad.noalias() += x.transpose() * dy;
  if (has_bias) bias.grad.row(0) += dy.colwise().sum();
  return dy * weight.value.transpose();
}

void Linear::collect(ParamList& out) {
  out.push_back(&weight);
  if (has_bias) out.push_back(&bias);
}

Mat relu(const Mat& x) { return x.cwiseMax(0.0); }

Mat relu_backward(const Mat& x, const Mat& dy) { return (x.array() > 0).select(dy, 0.0); }

Mat softmax_rows(const Mat& logits) {
  Mat p(logits.rows(), logits.cols());
  for (Eigen::Index i = 0; i < logits.rows(); ++i) {
    const double mx = logits.row(i).maxCoeff();
    p.row(i) = (logits.row(i).array() - mx).exp();
    p.row(i) /= p.row(i).sum();
  }
  return p;
}

Mat softmax_rows_backward(const Mat& probs, const Mat& dprobs) {
  Vec inner = (probs.array() * dprobs.array()).rowwise().sum();
  return probs.array() * (dprobs.colwise() - inner).array();
}

Mat dropout(const Mat& x, double p, Rng* rng, Mat* mask) {
  if (rng == nullptr || p <= 0) {
    if (mask) mask->resize(0, 0);
    return x;
  }
  Mat m(x.rows(), x.cols());
  const double keep = 1.0 - p;
  for (Eigen::Index j = 0; j < m.cols(); ++j)
    for (Eigen::Index i = 0; i < m.rows(); ++i) m(i, j) = uniform01(*rng) < keep ? 1.0 / keep : 0.0;
  Mat y = x.cwiseProduct(m);
  if (mask) *mask = std::move(m);
  return y;
}

Mat dropout_backward(const Mat& mask, const Mat& dy) {
  if (mask.size() == 0) return dy;
  return dy.cwiseProduct(mask);
}

MultiHeadSelfAttention::MultiHeadSelfAttention(const std::string& name, Eigen::Index dim, int heads,
                                               ParamGroup group, Rng& rng)
    : wq(name + ".q", dim, dim, group, rng),
      wk(name + ".k", dim, dim, group, rng, false),  // a key bias only shifts each score row
      wv(name + ".v", dim, dim, group, rng),
      wo(name + ".out", dim, dim, group, rng),
      heads_(heads) {
  if (heads <= 0 || dim % heads != 0) throw std::invalid_argument("head count must divide the model width");
}

Mat MultiHeadSelfAttention::forward(const Mat& x, Cache* cache) const {
  if (x.cols() != dim()) throw ShapeError("attention input width " + std::to_string(x.cols()) + " != " + std::to_string(dim()));
  if (!x.allFinite()) throw std::domain_error("non-finite attention input");
  const Eigen::Index d = dim() / heads_;
  const double scale = 1.0 / std::sqrt(static_cast<double>(d));
  Mat q = wq.forward(x), k = wk.forward(x), v = wv.forward(x);
  Mat z(x.rows(), dim());
  std::vector<Mat> probs;
  if (cache) probs.reserve(static_cast<std::size_t>(heads_));
  for (int h = 0; h < heads_; ++h) {
    Mat p = softmax_rows(scale * (q.middleCols(h * d, d) * k.middleCols(h * d, d).transpose()));
    z.middleCols(h * d, d).noalias() = p * v.middleCols(h * d, d);
    if (cache) probs.push_back(std::move(p));
  }
  Mat y = wo.forward(z);
  if (cache) {
    cache->x = x;
    cache->q = std::move(q);
    cache->k = std::move(k);
    cache->v = std::move(v);
    cache->z = std::move(z);
    cache->probs = std::move(probs);
  }
  return y;
}

Mat MultiHeadSelfAttention::backward(const Cache& c, const Mat& dy) {
  const Eigen::Index d = dim() / heads_;
  const double scale = 1.0 / std::sqrt(static_cast<double>(d));
  Mat dz = wo.backward(c.z, dy);
  Mat dq(c.q.rows(), c.q.cols()), dk(c.k.rows(), c.k.cols()), dv(c.v.rows(), c.v.cols());
  for (int h = 0; h < heads_; ++h) {
    const Mat& p = c.probs[static_cast<std::size_t>(h)];
    auto dzh = dz.middleCols(h * d, d);
    Mat dp = dzh * c.v.middleCols(h * d, d).transpose();
    dv.middleCols(h * d, d).noalias() = p.transpose() * dzh;
    Mat ds = scale * softmax_rows_backward(p, dp);
    dq.middleCols(h * d, d).noalias() = ds * c.k.middleCols(h * d, d);
    dk.middleCols(h * d, d).noalias() = ds.transpose() * c.q.middleCols(h * d, d);
  }
  Mat dx = wq.backward(c.x, dq);
  dx += wk.backward(c.x, dk);
  dx += wv.backward(c.x, dv);
  return dx;
}

void MultiHeadSelfAttention::collect(ParamList& out) {
  wq.collect(out);
  wk.collect(out);
  wv.collect(out);
  wo.collect(out);
}

TransposedConv2d::TransposedConv2d(const std::string& name, int in_channels, int out_channels, int kernel, int stride,
                                   int padding, int output_padding, ParamGroup group, Rng& rng)
    : weight(name + ".weight", group, in_channels, kernel * kernel * out_channels),
      bias(name + ".bias", group, 1, out_channels),
      in_(in_channels),
      out_(out_channels),
      kernel_(kernel),
      stride_(stride),
      padding_(padding),
      output_padding_(output_padding) {
  const Eigen::Index fan_in = std::max<Eigen::Index>(1, in_channels * kernel * kernel / (stride * stride));
  init_uniform_fan_in(weight, fan_in, rng);
  init_uniform_fan_in(bias, fan_in, rng);
}

Mat TransposedConv2d::forward(const Mat& x, int height, int width, Cache* cache) const {
  if (x.rows() != static_cast<Eigen::Index>(height) * width || x.cols() != in_)
    throw ShapeError("transposed conv input shape mismatch");
  const int ho = out_size(height), wo = out_size(width);
  Mat cols = x * weight.value;  // (h*w) x (k*k*out)
  Mat y(static_cast<Eigen::Index>(ho) * wo, out_);
  y.rowwise() = bias.value.row(0);
  for (int iy = 0; iy < height; ++iy)
    for (int ix = 0; ix < width; ++ix) {
      const Eigen::Index src = static_cast<Eigen::Index>(iy) * width + ix;
      for (int ky = 0; ky < kernel_; ++ky) {
        const int oy = iy * stride_ - padding_ + ky;
        if (oy < 0 || oy >= ho) continue;
        for (int kx = 0; kx < kernel_; ++kx) {
          const int ox = ix * stride_ - padding_ + kx;
          if (ox < 0 || ox >= wo) continue;
          y.row(static_cast<Eigen::Index>(oy) * wo + ox) += cols.row(src).segment((ky * kernel_ + kx) * out_, out_);
        }
      }
    }
  if (cache) {
    cache->x = x;
    cache->height = height;
    cache->width = width;
  }
  return y;
}

Mat TransposedConv2d::backward(const Cache& c, const Mat& dy) {
  const int ho = out_size(c.height), wo = out_size(c.width);
  bias.grad.row(0) += dy.colwise().sum();
  Mat dcols = Mat::Zero(c.x.rows(), weight.value.cols());
  for (int iy = 0; iy < c.height; ++iy)
    for (int ix = 0; ix < c.width; ++ix) {
      const Eigen::Index src = static_cast<Eigen::Index>(iy) * c.width + ix;
      for (int ky = 0; ky < kernel_; ++ky) {
        const int oy = iy * stride_ - padding_ + ky;
        if (oy < 0 || oy >= ho) continue;
        for (int kx = 0; kx < kernel_; ++kx) {
          const int ox = ix * stride_ - padding_ + kx;
          if (ox < 0 || ox >= wo) continue;
          dcols.row(src).segment((ky * kernel_ + kx) * out_, out_) = dy.row(static_cast<Eigen::Index>(oy) * wo + ox);
        }
      }
    }
  weight.grad.noalias() += c.x.transpose() * dcols;
  return dcols * weight.value.transpose();
}

void TransposedConv2d::collect(ParamList& out) {
  out.push_back(&weight);
  out.push_back(&bias);
}

SpatialBatchNorm::SpatialBatchNorm(const std::string& name, int channels, ParamGroup group, double e)
    : gamma(name + ".gamma", group, 1, channels), beta(name + ".beta", group, 1, channels), eps(e) {
  gamma.value.setOnes();
}

Mat SpatialBatchNorm::forward(const Mat& x, Cache* cache) const {
  const double n = static_cast<double>(x.rows());
  RowVec mean = x.colwise().sum() / n;
  Mat centered = x.rowwise() - mean;
  RowVec var = centered.array().square().colwise().sum() / n;
  RowVec inv_std = (var.array() + eps).rsqrt();
  Mat xhat = centered.array().rowwise() * inv_std.array();
  Mat y = (xhat.array().rowwise() * gamma.value.row(0).array()).rowwise() + beta.value.row(0).array();
  if (cache) {
    cache->xhat = std::move(xhat);
    cache->inv_std = std::move(inv_std);
  }
  return y;
}

Mat SpatialBatchNorm::backward(const Cache& c, const Mat& dy) {
  const double n = static_cast<double>(dy.rows());
  beta.grad.row(0) += dy.colwise().sum();
  gamma.grad.row(0) += (dy.array() * c.xhat.array()).colwise().sum().matrix();
  Mat dxhat = dy.array().rowwise() * gamma.value.row(0).array();
  RowVec sum_dxhat = dxhat.colwise().sum();
  RowVec sum_dxhat_xhat = (dxhat.array() * c.xhat.array()).colwise().sum();
  Mat dx = (dxhat * n).rowwise() - sum_dxhat;
  dx -= (c.xhat.array().rowwise() * sum_dxhat_xhat.array()).matrix();
  dx = dx.array().rowwise() * (c.inv_std.array() / n);
  return dx;
}

void SpatialBatchNorm::collect(ParamList& out) {
  out.push_back(&gamma);
  out.push_back(&beta);
}

Mat upsample_nearest(const Mat& x, int height, int width, int factor) {
  const int wo = width * factor;
  Mat y(static_cast<Eigen::Index>(height) * factor * wo, x.cols());
  for (int oy = 0; oy < height * factor; ++oy)
    for (int ox = 0; ox < wo; ++ox)
      y.row(static_cast<Eigen::Index>(oy) * wo + ox) = x.row(static_cast<Eigen::Index>(oy / factor) * width + ox / factor);
  return y;
}

Mat upsample_nearest_backward(const Mat& dy, int height, int width, int factor) {
  const int wo = width * factor;
  Mat dx = Mat::Zero(static_cast<Eigen::Index>(height) * width, dy.cols());
  for (int oy = 0; oy < height * factor; ++oy)
    for (int ox = 0; ox < wo; ++ox)
      dx.row(static_cast<Eigen::Index>(oy / factor) * width + ox / factor) += dy.row(static_cast<Eigen::Index>(oy) * wo + ox);
  return dx;
}

}  // namespace cap
