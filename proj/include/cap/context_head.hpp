#pragma once

// Semantic context over fused tokens: distance-kernel graph, one graph
// convolution, node max-pooling, a recurrent cell over time, and the
// two-layer accident classifier.

#include <vector>

#include "cap/common.hpp"
#include "cap/layers.hpp"

namespace cap {

// exp(-||x_i - x_j||) with unit self-loops, before row normalization.
Mat adjacency_kernel(const Mat& tokens);
// Row-normalized adjacency.
Mat build_adjacency(const Mat& tokens);
// Gradient with respect to tokens given dL/dA for A = build_adjacency(tokens).
Mat build_adjacency_backward(const Mat& tokens, const Mat& adjacency, const Mat& dadjacency);

class GraphConv {
 public:
  GraphConv() = default;
  GraphConv(Eigen::Index in, Eigen::Index out, Rng& rng);

  struct Cache {
    Mat tokens, adjacency, ax, pre;
  };

  // S = relu(A X W)
  Mat forward(const Mat& tokens, const Mat& adjacency, Cache* cache = nullptr) const;
  // Returns dL/dtokens through both X and A (the adjacency is built from X).
  Mat backward(const Cache& cache, const Mat& ds);
  void collect(ParamList& out) { out.push_back(&weight); }

  Param weight;  // in x out, no bias
};

// Column-wise maximum over nodes.
RowVec pool_max(const Mat& s, std::vector<Eigen::Index>* argmax = nullptr);
Mat pool_max_backward(const std::vector<Eigen::Index>& argmax, Eigen::Index rows, const RowVec& dpooled);

// Fixed per-channel standardization of the pooled context, y = (x - mean) * scale.
// Not trained: fitted once on training-set features before the first update.
// Raw pooled features share a large common offset and channel scales spread
// over orders of magnitude, which leaves the recurrent cell badly conditioned.
struct ContextScaler {
  RowVec mean, scale;  // empty = identity
  bool fitted = false;

  RowVec forward(const RowVec& x) const;
  RowVec backward(const RowVec& dy) const;
  // scale = 1 / sqrt(var + eps) over the rows of the sample set.
  void fit(const std::vector<RowVec>& samples, double eps = 1e-2);
};

// Gated recurrent unit, gate order (reset, update, candidate):
//   r = sigmoid(x Wir + bir + h Whr + bhr)
//   z = sigmoid(x Wiz + biz + h Whz + bhz)
//   n = tanh(x Win + bin + r * (h Whn + bhn))
//   h' = (1 - z) * n + z * h
class GruCell {
 public:
  GruCell() = default;
  GruCell(Eigen::Index input, Eigen::Index hidden, Rng& rng);

  struct Cache {
    RowVec x, h, r, z, n, hn;  // hn = h Whn + bhn
  };

  RowVec forward(const RowVec& x, const RowVec& h, Cache* cache = nullptr) const;
  // Accumulates parameter gradients; writes dL/dx and dL/dh.
  void backward_accumulate(const Cache& cache, const RowVec& dh_next, RowVec& dx, RowVec& dh);
  void collect(ParamList& out);

  Eigen::Index hidden() const { return w_hh.value.rows(); }

  Param w_ih;  // input x 3*hidden
  Param w_hh;  // hidden x 3*hidden
  Param b_ih;  // 1 x 3*hidden
  Param b_hh;  // 1 x 3*hidden
};

// fc(hidden -> mid) -> fc(mid -> 2) -> softmax; score = accident component.
class AccidentHead {
 public:
  AccidentHead() = default;
  AccidentHead(Eigen::Index hidden, Eigen::Index mid, Rng& rng);

  struct Cache {
    RowVec h, a;
    double p = 0.5;
  };

  double forward(const RowVec& h, Cache* cache = nullptr) const;
  RowVec backward(const Cache& cache, double dp);
  void collect(ParamList& out);

  Linear fc1, fc2;
};

// Two-class softmax accident component for logits (safe, accident).
double accident_probability(double logit_safe, double logit_accident);

}  // namespace cap
