#pragma once

// Accident-video annotation schema: temporal stamps (t_ai, t_co, t_ae),
// four text descriptions, category and static scene attributes.
//
// Frame indices are 0-based. A window [a, b) includes a and excludes b, so
// its length is b - a. Records are stored as JSON Lines, one object per line,
// with exactly the field names of AnnotationRecord.

#include <array>
#include <filesystem>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace cap {

enum class Weather { kSunny, kRainy, kSnowy, kFoggy };
enum class Light { kDaytime, kNighttime };
enum class Occasion { kHighway, kUrban, kRural, kMountain, kTunnel };
enum class RoadType { kMainLane, kCurveRoad, kIntersection, kTRoad, kRamp };

std::string_view to_string(Weather v);
std::string_view to_string(Light v);
std::string_view to_string(Occasion v);
std::string_view to_string(RoadType v);

// Parsing accepts the alias "fogy" for foggy. Throws std::invalid_argument.
Weather parse_weather(std::string_view s);
Light parse_light(std::string_view s);
Occasion parse_occasion(std::string_view s);
RoadType parse_road_type(std::string_view s);

inline constexpr int kMinAccidentCategory = 1;
inline constexpr int kMaxAccidentCategory = 58;

struct AnnotationRecord {
  std::string video_id;
  int n_frames = 0;
  double fps = 0.0;
  int t_ai = 0;
  int t_co = 0;
  int t_ae = 0;
  std::string fact;
  std::string effect;
  std::string reason;
  std::string introspection;
  int accident_category = 1;
  Weather weather = Weather::kSunny;
  Light light = Light::kDaytime;
  Occasion occasion = Occasion::kUrban;
  RoadType road_type = RoadType::kMainLane;
  // false marks a non-accident video; text fields may then be empty.
  bool accident = true;

  bool operator==(const AnnotationRecord&) const = default;
};

struct Violation {
  std::string field;
  std::string rule;
};

// Never throws; an empty result means every invariant holds.
std::vector<Violation> validate(const AnnotationRecord& record);

std::string describe(const std::vector<Violation>& violations);

class InvalidRecord : public std::runtime_error {
 public:
  InvalidRecord(std::string video_id, std::vector<Violation> violations);
  const std::vector<Violation>& violations() const { return violations_; }

 private:
  std::vector<Violation> violations_;
};

struct FrameRatios {
  double r_pre = 0;    // [0, t_ai)
  double r_ai_co = 0;  // [t_ai, t_co)
  double r_ai_ae = 0;  // [t_ai, t_ae)
  double r_co_ae = 0;  // [t_co, t_ae)
  double r_post = 0;   // [t_ae, n_frames)
};

// Throws InvalidRecord when validate() reports anything.
FrameRatios frame_ratios(const AnnotationRecord& record);

// Five histograms (one per ratio, in FrameRatios field order) with `bins`
// equal-width bins over [0, 1]; accident records only.
std::array<std::vector<int>, 5> ratio_histogram(std::span<const AnnotationRecord> records, int bins);

class CorpusError : public std::runtime_error {
 public:
  CorpusError(std::size_t line, const std::string& message);
  std::size_t line() const { return line_; }

 private:
  std::size_t line_;
};

std::string to_json_line(const AnnotationRecord& record);
// Throws std::invalid_argument on missing/unknown keys or bad values.
AnnotationRecord from_json_line(std::string_view line);

// Either every line parses or CorpusError names the first bad line.
std::vector<AnnotationRecord> load_corpus(const std::filesystem::path& path);
void save_corpus(std::span<const AnnotationRecord> records, const std::filesystem::path& path);

}  // namespace cap
