#include "cap/context_head.hpp"

#include <cmath>

namespace cap {

namespace {
Mat pairwise_distance(const Mat& x) {
  const Eigen::Index n = x.rows();
  Mat d = Mat::Zero(n, n);
  for (Eigen::Index j = 0; j < n; ++j)
    for (Eigen::Index i = j + 1; i < n; ++i) d(i, j) = d(j, i) = (x.row(i) - x.row(j)).norm();
  return d;
}
}  // namespace

Mat adjacency_kernel(const Mat& tokens) {
  if (!tokens.allFinite()) throw std::domain_error("non-finite tokens");
  Mat r = (-pairwise_distance(tokens)).array().exp();
  r.diagonal().setOnes();
  return r;
}

Mat build_adjacency(const Mat& tokens) {
  Mat r = adjacency_kernel(tokens);
  Vec rs = r.rowwise().sum();
  return r.array().colwise() / rs.array();
}

Mat build_adjacency_backward(const Mat& x, const Mat& a, const Mat& da) {
  const Eigen::Index n = x.rows();
  Mat d = pairwise_distance(x);
  Mat r = (-d).array().exp();
  r.diagonal().setOnes();
  Vec rs = r.rowwise().sum();
  // A = R / rowsum(R): dR_ij = (dA_ij - sum_k dA_ik A_ik) / rowsum_i
  Vec inner = (da.array() * a.array()).rowwise().sum();
  Mat dr = (da.colwise() - inner).array().colwise() / rs.array();
  // R_ij = exp(-D_ij) off the diagonal; D_ij = ||x_i - x_j||
  Mat w = Mat::Zero(n, n);
  for (Eigen::Index j = 0; j < n; ++j)
    for (Eigen::Index i = 0; i < n; ++i)
      if (i != j && d(i, j) > 0) w(i, j) = -r(i, j) * dr(i, j) / d(i, j);
  Mat m = w + w.transpose();
  Mat dx = m.rowwise().sum().asDiagonal() * x;
  dx.noalias() -= m * x;
  return dx;
}

GraphConv::GraphConv(Eigen::Index in, Eigen::Index out, Rng& rng) : weight("gcn.weight", ParamGroup::kT2I, in, out) {
  init_uniform_fan_in(weight, in, rng);
}

Mat GraphConv::forward(const Mat& tokens, const Mat& adjacency, Cache* c) const {
  if (adjacency.rows() != tokens.rows() || adjacency.cols() != tokens.rows())
    throw ShapeError("adjacency does not match token count");
  if (tokens.cols() != weight.value.rows()) throw ShapeError("graph convolution width mismatch");
  Mat ax = adjacency * tokens;
  Mat pre = ax * weight.value;
  Mat s = relu(pre);
  if (c) {
    c->tokens = tokens;
    c->adjacency = adjacency;
    c->ax = std::move(ax);
    c->pre = std::move(pre);
  }
  return s;
}

Mat GraphConv::backward(const Cache& c, const Mat& ds) {
  Mat dpre = relu_backward(c.pre, ds);
  weight.grad.noalias() += c.ax.transpose() * dpre;
  Mat dax = dpre * weight.value.transpose();
  Mat dx = c.adjacency.transpose() * dax;
  Mat da = dax * c.tokens.transpose();
  dx += build_adjacency_backward(c.tokens, c.adjacency, da);
  return dx;
}

RowVec ContextScaler::forward(const RowVec& x) const {
  if (mean.size() == 0) return x;
  expect_shape(x, 1, mean.size(), "pooled context");
  return (x - mean).cwiseProduct(scale);
}

RowVec ContextScaler::backward(const RowVec& dy) const { return mean.size() == 0 ? dy : dy.cwiseProduct(scale); }

void ContextScaler::fit(const std::vector<RowVec>& samples, double eps) {
  if (samples.empty()) throw std::invalid_argument("no samples to fit the context scaler");
  const Eigen::Index d = samples.front().size();
  RowVec sum = RowVec::Zero(d), sq = RowVec::Zero(d);
  for (const RowVec& x : samples) {
    expect_shape(x, 1, d, "pooled context");
    sum += x;
  }
  mean = sum / static_cast<double>(samples.size());
  for (const RowVec& x : samples) sq += (x - mean).cwiseAbs2();
  const RowVec var = sq / static_cast<double>(samples.size());
  scale = (var.array() + eps).rsqrt().matrix();
  fitted = true;
}

RowVec pool_max(const Mat& s, std::vector<Eigen::Index>* argmax) {
  RowVec out(s.cols());
  if (argmax) argmax->resize(static_cast<std::size_t>(s.cols()));
  for (Eigen::Index j = 0; j < s.cols(); ++j) {
    Eigen::Index idx = 0;
    out(j) = s.col(j).maxCoeff(&idx);
    if (argmax) (*argmax)[static_cast<std::size_t>(j)] = idx;
  }
  return out;
}

Mat pool_max_backward(const std::vector<Eigen::Index>& argmax, Eigen::Index rows, const RowVec& dpooled) {
  Mat ds = Mat::Zero(rows, dpooled.size());
  for (Eigen::Index j = 0; j < dpooled.size(); ++j) ds(argmax[static_cast<std::size_t>(j)], j) = dpooled(j);
  return ds;
}

GruCell::GruCell(Eigen::Index input, Eigen::Index hidden, Rng& rng)
    : w_ih("gru.w_ih", ParamGroup::kGru, input, 3 * hidden),
      w_hh("gru.w_hh", ParamGroup::kGru, hidden, 3 * hidden),
      b_ih("gru.b_ih", ParamGroup::kGru, 1, 3 * hidden),
      b_hh("gru.b_hh", ParamGroup::kGru, 1, 3 * hidden) {
  init_uniform_fan_in(w_ih, hidden, rng);
  init_uniform_fan_in(w_hh, hidden, rng);
  init_uniform_fan_in(b_ih, hidden, rng);
  init_uniform_fan_in(b_hh, hidden, rng);
}

namespace {
RowVec sigmoid(const RowVec& x) { return (1.0 + (-x.array()).exp()).inverse(); }
}  // namespace

RowVec GruCell::forward(const RowVec& x, const RowVec& h, Cache* c) const {
  const Eigen::Index hd = hidden();
  if (x.size() != w_ih.value.rows() || h.size() != hd) throw ShapeError("recurrent cell input width mismatch");
  RowVec gi = x * w_ih.value + b_ih.value.row(0);
  RowVec gh = h * w_hh.value + b_hh.value.row(0);
  RowVec r = sigmoid(gi.segment(0, hd) + gh.segment(0, hd));
  RowVec z = sigmoid(gi.segment(hd, hd) + gh.segment(hd, hd));
  RowVec hn = gh.segment(2 * hd, hd);
  RowVec n = (gi.segment(2 * hd, hd).array() + r.array() * hn.array()).tanh();
  RowVec out = (1.0 - z.array()) * n.array() + z.array() * h.array();
  if (c) {
    c->x = x;
    c->h = h;
    c->r = std::move(r);
    c->z = std::move(z);
    c->n = std::move(n);
    c->hn = std::move(hn);
  }
  return out;
}

void GruCell::backward_accumulate(const Cache& c, const RowVec& dout, RowVec& dx, RowVec& dh) {
  const Eigen::Index hd = hidden();
  RowVec dn = dout.array() * (1.0 - c.z.array());
  RowVec dz = dout.array() * (c.h.array() - c.n.array());
  RowVec dpre_n = dn.array() * (1.0 - c.n.array().square());
  RowVec dr = dpre_n.array() * c.hn.array();
  RowVec dpre_z = dz.array() * c.z.array() * (1.0 - c.z.array());
  RowVec dpre_r = dr.array() * c.r.array() * (1.0 - c.r.array());

  RowVec dgi(3 * hd), dgh(3 * hd);
  dgi << dpre_r, dpre_z, dpre_n;
  dgh << dpre_r, dpre_z, (dpre_n.array() * c.r.array()).matrix();

  w_ih.grad.noalias() += c.x.transpose() * dgi;
  w_hh.grad.noalias() += c.h.transpose() * dgh;
  b_ih.grad.row(0) += dgi;
  b_hh.grad.row(0) += dgh;
  dx = dgi * w_ih.value.transpose();
  dh = dgh * w_hh.value.transpose();
  dh.array() += dout.array() * c.z.array();
}

void GruCell::collect(ParamList& out) {
  out.push_back(&w_ih);
  out.push_back(&w_hh);
  out.push_back(&b_ih);
  out.push_back(&b_hh);
}

double accident_probability(double l0, double l1) { return 1.0 / (1.0 + std::exp(l0 - l1)); }

AccidentHead::AccidentHead(Eigen::Index hidden, Eigen::Index mid, Rng& rng)
    : fc1("head.fc1", hidden, mid, ParamGroup::kGru, rng), fc2("head.fc2", mid, 2, ParamGroup::kGru, rng) {}

double AccidentHead::forward(const RowVec& h, Cache* c) const {
  RowVec a = fc1.forward(h);
  RowVec logits = fc2.forward(a);
  const double p = accident_probability(logits(0), logits(1));
  if (c) {
    c->h = h;
    c->a = std::move(a);
    c->p = p;
  }
  return p;
}

RowVec AccidentHead::backward(const Cache& c, double dp) {
  const double g = dp * c.p * (1.0 - c.p);
  RowVec dlogits(2);
  dlogits << -g, g;
  return fc1.backward(c.h, fc2.backward(c.a, dlogits));
}

void AccidentHead::collect(ParamList& out) {
  fc1.collect(out);
  fc2.collect(out);
}

}  // namespace cap
