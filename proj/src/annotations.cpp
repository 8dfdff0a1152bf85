#include "cap/annotations.hpp"

#include <cmath>
#include <fstream>
#include <set>
#include <sstream>

#include <json.hpp>

namespace cap {

namespace {

using nlohmann::json;

const std::set<std::string>& known_keys() {
  static const std::set<std::string> keys{"video_id", "n_frames",      "fps",        "t_ai",    "t_co",
                                          "t_ae",     "fact",          "effect",     "reason",  "introspection",
                                          "accident_category",         "weather",    "light",   "occasion",
                                          "road_type", "accident"};
  return keys;
}

template <typename E, std::size_t N>
E parse_enum(std::string_view s, const std::array<std::pair<std::string_view, E>, N>& table, const char* what) {
  for (const auto& [name, value] : table)
    if (name == s) return value;
  throw std::invalid_argument(std::string("unknown ") + what + " value '" + std::string(s) + "'");
}

constexpr std::array<std::pair<std::string_view, Weather>, 5> kWeather{{{"sunny", Weather::kSunny},
                                                                        {"rainy", Weather::kRainy},
                                                                        {"snowy", Weather::kSnowy},
                                                                        {"foggy", Weather::kFoggy},
                                                                        {"fogy", Weather::kFoggy}}};
constexpr std::array<std::pair<std::string_view, Light>, 2> kLight{
    {{"daytime", Light::kDaytime}, {"nighttime", Light::kNighttime}}};
constexpr std::array<std::pair<std::string_view, Occasion>, 5> kOccasion{{{"highway", Occasion::kHighway},
                                                                          {"urban", Occasion::kUrban},
                                                                          {"rural", Occasion::kRural},
                                                                          {"mountain", Occasion::kMountain},
                                                                          {"tunnel", Occasion::kTunnel}}};
constexpr std::array<std::pair<std::string_view, RoadType>, 5> kRoad{{{"main_lane", RoadType::kMainLane},
                                                                       {"curve_road", RoadType::kCurveRoad},
                                                                       {"intersection", RoadType::kIntersection},
                                                                       {"t_road", RoadType::kTRoad},
                                                                       {"ramp", RoadType::kRamp}}};

}  // namespace

std::string_view to_string(Weather v) {
  switch (v) {
    case Weather::kSunny: return "sunny";
    case Weather::kRainy: return "rainy";
    case Weather::kSnowy: return "snowy";
    case Weather::kFoggy: return "foggy";
  }
  return "invalid";
}

std::string_view to_string(Light v) {
  switch (v) {
    case Light::kDaytime: return "daytime";
    case Light::kNighttime: return "nighttime";
  }
  return "invalid";
}

std::string_view to_string(Occasion v) {
  switch (v) {
    case Occasion::kHighway: return "highway";
    case Occasion::kUrban: return "urban";
    case Occasion::kRural: return "rural";
    case Occasion::kMountain: return "mountain";
    case Occasion::kTunnel: return "tunnel";
  }
  return "invalid";
}

std::string_view to_string(RoadType v) {
  switch (v) {
    case RoadType::kMainLane: return "main_lane";
    case RoadType::kCurveRoad: return "curve_road";
    case RoadType::kIntersection: return "intersection";
    case RoadType::kTRoad: return "t_road";
    case RoadType::kRamp: return "ramp";
  }
  return "invalid";
}

Weather parse_weather(std::string_view s) { return parse_enum(s, kWeather, "weather"); }
Light parse_light(std::string_view s) { return parse_enum(s, kLight, "light"); }
Occasion parse_occasion(std::string_view s) { return parse_enum(s, kOccasion, "occasion"); }
RoadType parse_road_type(std::string_view s) { return parse_enum(s, kRoad, "road_type"); }

std::vector<Violation> validate(const AnnotationRecord& r) {
  std::vector<Violation> out;
  auto add = [&](std::string field, std::string rule) { out.push_back({std::move(field), std::move(rule)}); };

  if (r.video_id.empty()) add("video_id", "video_id non-empty");
  if (r.n_frames <= 0) add("n_frames", "n_frames > 0");
  if (!(std::isfinite(r.fps) && r.fps > 0)) add("fps", "fps > 0");
  if (r.t_ai < 0) add("t_ai", "0 ≤ t_ai");
  if (r.t_co < r.t_ai) add("t_co", "t_ai ≤ t_co");
  if (r.t_ae < r.t_co) add("t_ae", "t_co ≤ t_ae");
  if (r.t_ae > r.n_frames) add("t_ae", "t_ae ≤ n_frames");
  if (r.accident) {
    if (r.fact.empty()) add("fact", "fact non-empty for accident videos");
    if (r.effect.empty()) add("effect", "effect non-empty for accident videos");
    if (r.reason.empty()) add("reason", "reason non-empty for accident videos");
    if (r.introspection.empty()) add("introspection", "introspection non-empty for accident videos");
  }
  if (r.accident_category < kMinAccidentCategory || r.accident_category > kMaxAccidentCategory)
    add("accident_category", "accident_category in [1, 58]");
  if (to_string(r.weather) == "invalid") add("weather", "weather is a known value");
  if (to_string(r.light) == "invalid") add("light", "light is a known value");
  if (to_string(r.occasion) == "invalid") add("occasion", "occasion is a known value");
  if (to_string(r.road_type) == "invalid") add("road_type", "road_type is a known value");
  return out;
}

std::string describe(const std::vector<Violation>& violations) {
  std::ostringstream os;
  for (std::size_t i = 0; i < violations.size(); ++i) {
    if (i) os << "; ";
    os << violations[i].field << ": " << violations[i].rule;
  }
  return os.str();
}

InvalidRecord::InvalidRecord(std::string video_id, std::vector<Violation> violations)
    : std::runtime_error("invalid record '" + video_id + "': " + describe(violations)),
      violations_(std::move(violations)) {}

FrameRatios frame_ratios(const AnnotationRecord& r) {
  auto v = validate(r);
  if (!v.empty()) throw InvalidRecord(r.video_id, std::move(v));
  const double n = r.n_frames;
  FrameRatios f;
  f.r_pre = r.t_ai / n;
  f.r_ai_co = (r.t_co - r.t_ai) / n;
  f.r_ai_ae = (r.t_ae - r.t_ai) / n;
  f.r_co_ae = (r.t_ae - r.t_co) / n;
  f.r_post = (r.n_frames - r.t_ae) / n;
  return f;
}

std::array<std::vector<int>, 5> ratio_histogram(std::span<const AnnotationRecord> records, int bins) {
  if (bins <= 0) throw std::invalid_argument("bins must be positive");
  std::array<std::vector<int>, 5> h;
  for (auto& v : h) v.assign(static_cast<std::size_t>(bins), 0);
  auto bin = [bins](double x) { return std::min(bins - 1, static_cast<int>(std::floor(x * bins))); };
  for (const auto& r : records) {
    if (!r.accident) continue;
    auto f = frame_ratios(r);
    const double vals[5] = {f.r_pre, f.r_ai_co, f.r_ai_ae, f.r_co_ae, f.r_post};
    for (int k = 0; k < 5; ++k) h[k][bin(vals[k])]++;
  }
  return h;
}

CorpusError::CorpusError(std::size_t line, const std::string& message)
    : std::runtime_error("line " + std::to_string(line) + ": " + message), line_(line) {}

std::string to_json_line(const AnnotationRecord& r) {
  json j;
  j["video_id"] = r.video_id;
  j["n_frames"] = r.n_frames;
  j["fps"] = r.fps;
  j["t_ai"] = r.t_ai;
  j["t_co"] = r.t_co;
  j["t_ae"] = r.t_ae;
  j["fact"] = r.fact;
  j["effect"] = r.effect;
  j["reason"] = r.reason;
  j["introspection"] = r.introspection;
  j["accident_category"] = r.accident_category;
  j["weather"] = to_string(r.weather);
  j["light"] = to_string(r.light);
  j["occasion"] = to_string(r.occasion);
  j["road_type"] = to_string(r.road_type);
  j["accident"] = r.accident;
  return j.dump();
}

AnnotationRecord from_json_line(std::string_view line) {
  json j;
  try {
    j = json::parse(line);
  } catch (const json::parse_error& e) {
    throw std::invalid_argument(std::string("malformed JSON: ") + e.what());
  }
  if (!j.is_object()) throw std::invalid_argument("record is not a JSON object");
  for (const auto& [key, _] : j.items())
    if (!known_keys().count(key)) throw std::invalid_argument("unknown key '" + key + "'");

  auto field = [&](const char* key) -> const json& {
    auto it = j.find(key);
    if (it == j.end()) throw std::invalid_argument(std::string("missing key '") + key + "'");
    return *it;
  };
  auto integer = [&](const char* key) {
    const auto& v = field(key);
    if (!v.is_number_integer()) throw std::invalid_argument(std::string("'") + key + "' must be an integer");
    return v.get<int>();
  };
  auto text = [&](const char* key) {
    const auto& v = field(key);
    if (!v.is_string()) throw std::invalid_argument(std::string("'") + key + "' must be a string");
    return v.get<std::string>();
  };

  AnnotationRecord r;
  r.video_id = text("video_id");
  r.n_frames = integer("n_frames");
  const auto& fps = field("fps");
  if (!fps.is_number()) throw std::invalid_argument("'fps' must be a number");
  r.fps = fps.get<double>();
  r.t_ai = integer("t_ai");
  r.t_co = integer("t_co");
  r.t_ae = integer("t_ae");
  r.fact = text("fact");
  r.effect = text("effect");
  r.reason = text("reason");
  r.introspection = text("introspection");
  r.accident_category = integer("accident_category");
  r.weather = parse_weather(text("weather"));
  r.light = parse_light(text("light"));
  r.occasion = parse_occasion(text("occasion"));
  r.road_type = parse_road_type(text("road_type"));
  if (auto it = j.find("accident"); it != j.end()) {
    if (!it->is_boolean()) throw std::invalid_argument("'accident' must be a boolean");
    r.accident = it->get<bool>();
  }
  return r;
}

std::vector<AnnotationRecord> load_corpus(const std::filesystem::path& path) {
  std::ifstream is(path);
  if (!is) throw std::runtime_error("cannot open corpus " + path.string());
  std::vector<AnnotationRecord> out;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(is, line)) {
    ++lineno;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    try {
      out.push_back(from_json_line(line));
    } catch (const std::exception& e) {
      throw CorpusError(lineno, e.what());
    }
  }
  return out;
}

void save_corpus(std::span<const AnnotationRecord> records, const std::filesystem::path& path) {
  std::ofstream os(path);
  if (!os) throw std::runtime_error("cannot open " + path.string() + " for writing");
  for (const auto& r : records) os << to_json_line(r) << '\n';
  if (!os) throw std::runtime_error("write failed: " + path.string());
}

}  // namespace cap
