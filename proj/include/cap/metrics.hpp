#pragma once

// Anticipation metrics (AP, AUC, TTA, mTTA) and saliency metrics (KLdiv, CC,
// SIM, shuffled AUC).

#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "cap/annotations.hpp"
#include "cap/clip_sampler.hpp"
#include "cap/common.hpp"

namespace cap {

// Seconds between the first frame with p_hat > threshold and t_ai; 0 when
// the threshold is never crossed or is crossed at or after t_ai.
double tta(std::span<const double> p_hat, int t_ai_local, double fps, double threshold);
double tta(std::span<const double> p_hat, const ClipSample& clip, double threshold);

// 0.00, 0.01, ..., 1.00
std::vector<double> mtta_thresholds();
double mtta(std::span<const double> p_hat, int t_ai_local, double fps);
double mtta(std::span<const double> p_hat, const ClipSample& clip);

// labels: nonzero = positive. Step interpolation over distinct score
// thresholds: sum over thresholds of (recall gain) * precision.
double average_precision(std::span<const double> scores, std::span<const int> labels);
// Probability a random positive outscores a random negative, ties = 1/2.
double auc(std::span<const double> scores, std::span<const int> labels);

enum class VideoScore { kMax, kMean };
VideoScore parse_video_score(std::string_view s);
double video_score(std::span<const double> p_hat, VideoScore mode = VideoScore::kMax);

double saliency_kldiv(const Mat& gt, const Mat& pred);
double saliency_cc(const Mat& gt, const Mat& pred);
double saliency_sim(const Mat& gt, const Mat& pred);
using Fixations = std::vector<std::pair<int, int>>;
// AUC of pred sampled at the true fixations against pred sampled at the
// shuffled (other-map) fixations.
double saliency_sauc(const Mat& pred, const Fixations& fixations, const Fixations& shuffled);

struct SaliencyScores {
  double kldiv = 0, cc = 0, sim = 0, s_auc = 0;
};
SaliencyScores saliency_metrics(const Mat& gt, const Mat& pred, const Fixations& fixations,
                                const Fixations& shuffled);

struct VideoPrediction {
  ClipSample clip;
  std::vector<double> p_hat;
  std::optional<SaliencyScores> saliency;  // clip mean over frames
};

struct MetricReport {
  std::optional<double> ap, auc, tta_05, mtta;  // empty when undefined for the subset
  std::optional<SaliencyScores> saliency;
  int n_videos = 0;
  int n_positive = 0;
  std::optional<std::string> group_attribute;
  std::optional<std::string> group_value;
};

MetricReport compute_report(std::span<const VideoPrediction> predictions, VideoScore mode = VideoScore::kMax);

// attribute: weather | light | occasion | road_type | category
std::string attribute_value(const AnnotationRecord& record, std::string_view attribute);
std::vector<MetricReport> group_by_attribute(std::span<const VideoPrediction> predictions,
                                             std::span<const AnnotationRecord> records, std::string_view attribute,
                                             VideoScore mode = VideoScore::kMax);

std::string report_to_json(const MetricReport& report);
std::string reports_to_json(std::span<const MetricReport> reports);
std::string report_table(std::span<const MetricReport> reports);

}  // namespace cap
