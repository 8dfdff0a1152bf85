#pragma once

#include <span>
#include <vector>

#include "cap/common.hpp"

namespace cap {

inline constexpr double kKlEpsilon = 1e-4;
inline constexpr double kProbClamp = 1e-7;

// sum_i D(i) log(eps + D(i) / (eps + Dhat(i))) for one frame.
double kl_attention(const Mat& gt, const Mat& pred, double eps = kKlEpsilon);
// d/dpred of kl_attention.
Mat kl_attention_grad(const Mat& gt, const Mat& pred, double eps = kKlEpsilon);
// Summed over frames; both spans must hold normalized maps of equal shape.
double attention_loss(std::span<const Mat> gt, std::span<const Mat> pred, double eps = kKlEpsilon);
// Lower bound of the per-frame term for an n-pixel map: -log(1 + n * eps).
double kl_floor(Eigen::Index n_pixels, double eps = kKlEpsilon);

// Positive-clip frame weight exp(-max(0, (t_ai - t) / fps)).
double anticipation_weight(int t, double t_ai, double fps);
double anticipation_loss(std::span<const double> p_hat, bool positive, double t_ai, double fps);
std::vector<double> anticipation_loss_grad(std::span<const double> p_hat, bool positive, double t_ai, double fps);

struct LossBreakdown {
  double attention = 0;     // L_d
  double anticipation = 0;  // L_a
  double lambda = 5;
  double total = 0;
};

LossBreakdown total_loss(double attention, double anticipation, double lambda = 5.0);

}  // namespace cap
