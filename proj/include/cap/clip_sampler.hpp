#pragma once

// Positive/negative clip sampling over annotated videos.
//
// mini: the positive window ends at t_co (exclusive) and must contain t_ai;
//       one negative window is drawn uniformly among the windows that fit
//       inside [0, t_ai). Windows may overlap freely.
// full: as mini, except the positive additionally requires ceil(h * fps)
//       frames before t_ai in the video, and the negative may overlap the
//       positive by at most window_len / 2 frames.
//
// Non-accident videos yield a single negative drawn from the whole video.

#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "cap/annotations.hpp"

namespace cap {

enum class ClipLabel { kNegative, kPositive };
enum class SamplingStrategy { kMini, kFull };

std::string_view to_string(ClipLabel v);
std::string_view to_string(SamplingStrategy v);
SamplingStrategy parse_strategy(std::string_view s);

struct ClipSample {
  std::string video_id;
  int start = 0;
  int length = 0;
  ClipLabel label = ClipLabel::kNegative;
  std::optional<int> t_ai_local;
  std::optional<int> t_co_local;  // present only when t_co falls inside the clip
  double fps = 0;

  bool positive() const { return label == ClipLabel::kPositive; }
  bool operator==(const ClipSample&) const = default;
};

struct SamplerConfig {
  int window_len = 150;
  SamplingStrategy strategy = SamplingStrategy::kMini;
  double horizon_s = 5.0;
  std::uint64_t seed = 0;
};

struct SampleResult {
  std::vector<ClipSample> clips;
  std::vector<std::string> notices;  // reasons a video yielded fewer clips
};

// Label a window against a record by the containment rule.
ClipSample make_clip(const AnnotationRecord& record, int start, int length);

SampleResult sample_mini(const AnnotationRecord& record, const SamplerConfig& config);
SampleResult sample_full(const AnnotationRecord& record, const SamplerConfig& config);
SampleResult sample(const AnnotationRecord& record, const SamplerConfig& config);
SampleResult sample_corpus(std::span<const AnnotationRecord> records, const SamplerConfig& config);

std::string to_json_line(const ClipSample& clip);
ClipSample clip_from_json_line(std::string_view line);
void save_manifest(std::span<const ClipSample> clips, const std::filesystem::path& path);
std::vector<ClipSample> load_manifest(const std::filesystem::path& path);

}  // namespace cap
