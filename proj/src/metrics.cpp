#include "cap/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <iomanip>
#include <map>
#include <numeric>
#include <sstream>

#include <json.hpp>

#include "cap/losses.hpp"

namespace cap {

double tta(std::span<const double> p_hat, int t_ai_local, double fps, double threshold) {
  if (fps <= 0) throw std::invalid_argument("fps must be positive");
  for (std::size_t t = 0; t < p_hat.size(); ++t)
    if (p_hat[t] > threshold) return std::max(0.0, static_cast<double>(t_ai_local - static_cast<int>(t))) / fps;
  return 0.0;
}

double tta(std::span<const double> p_hat, const ClipSample& clip, double threshold) {
  if (!clip.positive() || !clip.t_ai_local) throw std::invalid_argument("TTA requires a positive clip");
  return tta(p_hat, *clip.t_ai_local, clip.fps, threshold);
}

std::vector<double> mtta_thresholds() {
  std::vector<double> g(101);
  for (int k = 0; k <= 100; ++k) g[static_cast<std::size_t>(k)] = k / 100.0;
  return g;
}

double mtta(std::span<const double> p_hat, int t_ai_local, double fps) {
  const auto grid = mtta_thresholds();
  double s = 0;
  for (double thr : grid) s += tta(p_hat, t_ai_local, fps, thr);
  return s / static_cast<double>(grid.size());
}

double mtta(std::span<const double> p_hat, const ClipSample& clip) {
  if (!clip.positive() || !clip.t_ai_local) throw std::invalid_argument("mTTA requires a positive clip");
  return mtta(p_hat, *clip.t_ai_local, clip.fps);
}

namespace {
void check_labels(std::span<const double> scores, std::span<const int> labels) {
  if (scores.size() != labels.size()) throw std::invalid_argument("scores and labels differ in length");
}
}  // namespace

double average_precision(std::span<const double> scores, std::span<const int> labels) {
  check_labels(scores, labels);
  const auto n_pos = std::count_if(labels.begin(), labels.end(), [](int l) { return l != 0; });
  if (n_pos == 0) throw std::invalid_argument("average precision needs at least one positive");
  std::vector<std::size_t> order(scores.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](auto a, auto b) { return scores[a] > scores[b]; });
  double ap = 0, tp = 0, seen = 0, prev_recall = 0;
  for (std::size_t i = 0; i < order.size();) {
    std::size_t j = i;
    while (j < order.size() && scores[order[j]] == scores[order[i]]) {
      tp += labels[order[j]] != 0;
      seen += 1;
      ++j;
    }
    const double recall = tp / static_cast<double>(n_pos);
    ap += (recall - prev_recall) * (tp / seen);
    prev_recall = recall;
    i = j;
  }
  return ap;
}

double auc(std::span<const double> scores, std::span<const int> labels) {
  check_labels(scores, labels);
  std::vector<double> pos, neg;
  for (std::size_t i = 0; i < scores.size(); ++i) (labels[i] ? pos : neg).push_back(scores[i]);
  if (pos.empty() || neg.empty()) throw std::invalid_argument("AUC needs positives and negatives");
  // Rank-sum with midranks for ties.
  std::vector<std::pair<double, int>> all;
  for (double s : pos) all.emplace_back(s, 1);
  for (double s : neg) all.emplace_back(s, 0);
  std::sort(all.begin(), all.end(), [](const auto& a, const auto& b) { return a.first < b.first; });
  double rank_sum = 0;
  for (std::size_t i = 0; i < all.size();) {
    std::size_t j = i;
    while (j < all.size() && all[j].first == all[i].first) ++j;
    const double midrank = 0.5 * static_cast<double>(i + 1 + j);
    for (std::size_t k = i; k < j; ++k)
      if (all[k].second) rank_sum += midrank;
    i = j;
  }
  const double np = static_cast<double>(pos.size()), nn = static_cast<double>(neg.size());
  return (rank_sum - np * (np + 1) / 2) / (np * nn);
}

VideoScore parse_video_score(std::string_view s) {
  if (s == "max") return VideoScore::kMax;
  if (s == "mean") return VideoScore::kMean;
  throw std::invalid_argument("unknown video score '" + std::string(s) + "'");
}

double video_score(std::span<const double> p_hat, VideoScore mode) {
  if (p_hat.empty()) throw std::invalid_argument("empty prediction series");
  if (mode == VideoScore::kMax) return *std::max_element(p_hat.begin(), p_hat.end());
  return std::accumulate(p_hat.begin(), p_hat.end(), 0.0) / static_cast<double>(p_hat.size());
}

namespace {
void same_shape(const Mat& a, const Mat& b) {
  if (a.rows() != b.rows() || a.cols() != b.cols()) throw ShapeError("saliency map shapes differ");
}
}  // namespace

double saliency_kldiv(const Mat& gt, const Mat& pred) {
  same_shape(gt, pred);
  return kl_attention(gt, pred);
}

double saliency_cc(const Mat& gt, const Mat& pred) {
  same_shape(gt, pred);
  const auto a = gt.array() - gt.mean();
  const auto b = pred.array() - pred.mean();
  const double den = std::sqrt((a * a).sum() * (b * b).sum());
  return den > 0 ? (a * b).sum() / den : 0.0;
}

double saliency_sim(const Mat& gt, const Mat& pred) {
  same_shape(gt, pred);
  return gt.cwiseMin(pred).sum();
}

double saliency_sauc(const Mat& pred, const Fixations& fixations, const Fixations& shuffled) {
  if (fixations.empty()) throw std::invalid_argument("s-AUC needs at least one fixation");
  if (shuffled.empty()) throw std::invalid_argument("s-AUC needs shuffled fixations");
  std::vector<double> scores;
  std::vector<int> labels;
  for (auto [y, x] : fixations) {
    scores.push_back(pred(y, x));
    labels.push_back(1);
  }
  for (auto [y, x] : shuffled) {
    scores.push_back(pred(y, x));
    labels.push_back(0);
  }
  return auc(scores, labels);
}

SaliencyScores saliency_metrics(const Mat& gt, const Mat& pred, const Fixations& fixations,
                                const Fixations& shuffled) {
  return {saliency_kldiv(gt, pred), saliency_cc(gt, pred), saliency_sim(gt, pred),
          saliency_sauc(pred, fixations, shuffled)};
}

MetricReport compute_report(std::span<const VideoPrediction> preds, VideoScore mode) {
  MetricReport r;
  std::vector<double> scores;
  std::vector<int> labels;
  double tta_sum = 0, mtta_sum = 0;
  SaliencyScores sal;
  int n_sal = 0;
  for (const auto& p : preds) {
    if (static_cast<int>(p.p_hat.size()) != p.clip.length)
      throw ShapeError("prediction length differs from clip length for " + p.clip.video_id);
    scores.push_back(video_score(p.p_hat, mode));
    labels.push_back(p.clip.positive() ? 1 : 0);
    if (p.clip.positive()) {
      tta_sum += tta(p.p_hat, p.clip, 0.5);
      mtta_sum += mtta(p.p_hat, p.clip);
      ++r.n_positive;
    }
    if (p.saliency) {
      sal.kldiv += p.saliency->kldiv;
      sal.cc += p.saliency->cc;
      sal.sim += p.saliency->sim;
      sal.s_auc += p.saliency->s_auc;
      ++n_sal;
    }
  }
  r.n_videos = static_cast<int>(preds.size());
  if (r.n_positive > 0) {
    r.ap = average_precision(scores, labels);
    r.tta_05 = tta_sum / r.n_positive;
    r.mtta = mtta_sum / r.n_positive;
  }
  if (r.n_positive > 0 && r.n_positive < r.n_videos) r.auc = auc(scores, labels);
  if (n_sal > 0) {
    sal.kldiv /= n_sal;
    sal.cc /= n_sal;
    sal.sim /= n_sal;
    sal.s_auc /= n_sal;
    r.saliency = sal;
  }
  return r;
}

std::string attribute_value(const AnnotationRecord& rec, std::string_view attribute) {
  if (attribute == "weather") return std::string(to_string(rec.weather));
  if (attribute == "light") return std::string(to_string(rec.light));
  if (attribute == "occasion") return std::string(to_string(rec.occasion));
  if (attribute == "road_type") return std::string(to_string(rec.road_type));
  if (attribute == "category") return rec.accident ? std::to_string(rec.accident_category) : "none";
  throw std::invalid_argument("unknown attribute '" + std::string(attribute) + "'");
}

std::vector<MetricReport> group_by_attribute(std::span<const VideoPrediction> preds,
                                             std::span<const AnnotationRecord> records, std::string_view attribute,
                                             VideoScore mode) {
  attribute_value(AnnotationRecord{}, attribute);  // validates the name up front
  std::map<std::string, const AnnotationRecord*> by_id;
  for (const auto& r : records) by_id[r.video_id] = &r;
  std::map<std::string, std::vector<VideoPrediction>> groups;
  for (const auto& p : preds) {
    auto it = by_id.find(p.clip.video_id);
    if (it == by_id.end()) throw std::invalid_argument("no record for video " + p.clip.video_id);
    groups[attribute_value(*it->second, attribute)].push_back(p);
  }
  std::vector<MetricReport> out;
  for (const auto& [value, members] : groups) {
    MetricReport r = compute_report(members, mode);
    r.group_attribute = std::string(attribute);
    r.group_value = value;
    out.push_back(std::move(r));
  }
  return out;
}

namespace {
nlohmann::json opt(const std::optional<double>& v) { return v ? nlohmann::json(*v) : nlohmann::json(nullptr); }

nlohmann::json report_json(const MetricReport& r) {
  nlohmann::json j;
  j["AP"] = opt(r.ap);
  j["AUC"] = opt(r.auc);
  j["TTA_05"] = opt(r.tta_05);
  j["mTTA"] = opt(r.mtta);
  if (r.saliency)
    j["saliency"] = {{"kldiv", r.saliency->kldiv},
                     {"cc", r.saliency->cc},
                     {"sim", r.saliency->sim},
                     {"s_auc", r.saliency->s_auc}};
  else
    j["saliency"] = nullptr;
  j["n_videos"] = r.n_videos;
  j["n_positive"] = r.n_positive;
  if (r.group_attribute) j["group"] = {{"attribute", *r.group_attribute}, {"value", *r.group_value}};
  return j;
}

std::string cell(const std::optional<double>& v) {
  if (!v) return "-";
  std::ostringstream s;
  s << std::fixed << std::setprecision(4) << *v;
  return s.str();
}
}  // namespace

std::string report_to_json(const MetricReport& report) { return report_json(report).dump(2); }

std::string reports_to_json(std::span<const MetricReport> reports) {
  nlohmann::json j = nlohmann::json::array();
  for (const auto& r : reports) j.push_back(report_json(r));
  return j.dump(2);
}

std::string report_table(std::span<const MetricReport> reports) {
  std::ostringstream s;
  s << std::left << std::setw(24) << "group" << std::setw(8) << "videos" << std::setw(10) << "AP" << std::setw(10)
    << "AUC" << std::setw(10) << "TTA0.5" << std::setw(10) << "mTTA" << std::setw(10) << "KLdiv" << std::setw(10)
    << "CC" << std::setw(10) << "SIM" << "s-AUC\n";
  for (const auto& r : reports) {
    std::string g = r.group_attribute ? *r.group_attribute + "=" + *r.group_value : "all";
    auto sal = [&](double SaliencyScores::*f) {
      return r.saliency ? cell((*r.saliency).*f) : std::string("-");
    };
    s << std::setw(24) << g << std::setw(8) << r.n_videos << std::setw(10) << cell(r.ap) << std::setw(10)
      << cell(r.auc) << std::setw(10) << cell(r.tta_05) << std::setw(10) << cell(r.mtta) << std::setw(10)
      << sal(&SaliencyScores::kldiv) << std::setw(10) << sal(&SaliencyScores::cc) << std::setw(10)
      << sal(&SaliencyScores::sim) << sal(&SaliencyScores::s_auc) << "\n";
  }
  return s.str();
}

}  // namespace cap
