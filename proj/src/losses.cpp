#include "cap/losses.hpp"

#include <algorithm>
#include <cmath>

namespace cap {

namespace {
void check_distribution(const Mat& m, const char* what) {
  if (!m.allFinite() || (m.array() < 0).any() || std::abs(m.sum() - 1.0) > 1e-6)
    throw std::domain_error(std::string(what) + " is not a normalized distribution");
}

double clamp_prob(double p) {
  if (!std::isfinite(p)) throw std::domain_error("non-finite probability");
  return std::clamp(p, kProbClamp, 1.0 - kProbClamp);
}
}  // namespace

double kl_attention(const Mat& gt, const Mat& pred, double eps) {
  if (gt.rows() != pred.rows() || gt.cols() != pred.cols()) throw ShapeError("attention map shapes differ");
  check_distribution(gt, "ground-truth map");
  check_distribution(pred, "predicted map");
  return (gt.array() * (eps + gt.array() / (eps + pred.array())).log()).sum();
}

Mat kl_attention_grad(const Mat& gt, const Mat& pred, double eps) {
  // d/dq [D log(eps + D / (eps + q))] = -D^2 / ((eps + q)^2 (eps + D / (eps + q)))
  const auto q = eps + pred.array();
  const auto ratio = gt.array() / q;
  return -(gt.array() * ratio / (q * (eps + ratio)));
}

double attention_loss(std::span<const Mat> gt, std::span<const Mat> pred, double eps) {
  if (gt.size() != pred.size()) throw ShapeError("attention frame counts differ");
  double s = 0;
  for (std::size_t i = 0; i < gt.size(); ++i) s += kl_attention(gt[i], pred[i], eps);
  return s;
}

double kl_floor(Eigen::Index n, double eps) { return -std::log(1.0 + static_cast<double>(n) * eps); }

double anticipation_weight(int t, double t_ai, double fps) {
  return std::exp(-std::max(0.0, (t_ai - static_cast<double>(t)) / fps));
}

double anticipation_loss(std::span<const double> p_hat, bool positive, double t_ai, double fps) {
  double s = 0;
  for (std::size_t t = 0; t < p_hat.size(); ++t) {
    const double p = clamp_prob(p_hat[t]);
    s -= positive ? anticipation_weight(static_cast<int>(t), t_ai, fps) * std::log(p) : std::log(1.0 - p);
  }
  return s;
}

std::vector<double> anticipation_loss_grad(std::span<const double> p_hat, bool positive, double t_ai, double fps) {
  std::vector<double> g(p_hat.size(), 0.0);
  for (std::size_t t = 0; t < p_hat.size(); ++t) {
    const double raw = p_hat[t];
    const double p = clamp_prob(raw);
    if (p != raw) continue;  // flat outside the clamp
    g[t] = positive ? -anticipation_weight(static_cast<int>(t), t_ai, fps) / p : 1.0 / (1.0 - p);
  }
  return g;
}

LossBreakdown total_loss(double attention, double anticipation, double lambda) {
  if (!std::isfinite(attention) || !std::isfinite(anticipation)) throw std::domain_error("non-finite loss component");
  return {attention, anticipation, lambda, attention + lambda * anticipation};
}

}  // namespace cap
