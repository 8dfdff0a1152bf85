#include "cap/clip_sampler.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <set>

#include <json.hpp>

#include "cap/common.hpp"

namespace cap {

namespace {

Rng video_rng(const AnnotationRecord& r, const SamplerConfig& c) {
  std::seed_seq seq{static_cast<std::uint32_t>(c.seed), static_cast<std::uint32_t>(c.seed >> 32),
                    static_cast<std::uint32_t>(fnv1a(r.video_id)), static_cast<std::uint32_t>(fnv1a(r.video_id) >> 32)};
  return Rng(seq);
}

void check_config(const SamplerConfig& c) {
  if (c.window_len <= 0) throw std::invalid_argument("window_len must be positive");
  if (!(c.horizon_s > 0)) throw std::invalid_argument("horizon_s must be positive");
}

// Common front part: returns false when the video is skipped.
bool usable(const AnnotationRecord& r, const SamplerConfig& c, SampleResult& out) {
  check_config(c);
  if (auto v = validate(r); !v.empty()) {
    out.notices.push_back(r.video_id + ": skipped, invalid record (" + describe(v) + ")");
    return false;
  }
  if (r.n_frames < c.window_len) {
    out.notices.push_back(r.video_id + ": skipped, " + std::to_string(r.n_frames) + " frames < window " +
                          std::to_string(c.window_len));
    return false;
  }
  return true;
}

std::optional<ClipSample> positive_window(const AnnotationRecord& r, const SamplerConfig& c, SampleResult& out) {
  const int start = r.t_co - c.window_len;
  if (start < 0) {
    out.notices.push_back(r.video_id + ": no positive, t_co " + std::to_string(r.t_co) + " < window");
    return std::nullopt;
  }
  if (r.t_ai < start || r.t_ai >= r.t_co) {
    out.notices.push_back(r.video_id + ": no positive, window ending at t_co does not contain t_ai");
    return std::nullopt;
  }
  return make_clip(r, start, c.window_len);
}

std::optional<ClipSample> negative_window(const AnnotationRecord& r, const SamplerConfig& c, int max_start, Rng& rng,
                                          SampleResult& out) {
  if (max_start < 0) {
    out.notices.push_back(r.video_id + ": no negative, no window fits before t_ai");
    return std::nullopt;
  }
  const int start = static_cast<int>(uniform_index(rng, static_cast<std::uint64_t>(max_start) + 1));
  return make_clip(r, start, c.window_len);
}

}  // namespace

std::string_view to_string(ClipLabel v) { return v == ClipLabel::kPositive ? "positive" : "negative"; }
std::string_view to_string(SamplingStrategy v) { return v == SamplingStrategy::kMini ? "mini" : "full"; }

SamplingStrategy parse_strategy(std::string_view s) {
  if (s == "mini") return SamplingStrategy::kMini;
  if (s == "full") return SamplingStrategy::kFull;
  throw std::invalid_argument("unknown strategy '" + std::string(s) + "'");
}

ClipSample make_clip(const AnnotationRecord& r, int start, int length) {
  ClipSample c;
  c.video_id = r.video_id;
  c.start = start;
  c.length = length;
  c.fps = r.fps;
  const int end = start + length;
  if (r.accident && r.t_ai >= start && r.t_ai < end) {
    c.label = ClipLabel::kPositive;
    c.t_ai_local = r.t_ai - start;
    if (r.t_co >= start && r.t_co < end) c.t_co_local = r.t_co - start;
  }
  return c;
}

SampleResult sample_mini(const AnnotationRecord& r, const SamplerConfig& c) {
  SampleResult out;
  if (!usable(r, c, out)) return out;
  Rng rng = video_rng(r, c);
  if (!r.accident) {
    if (auto n = negative_window(r, c, r.n_frames - c.window_len, rng, out)) out.clips.push_back(*n);
    return out;
  }
  if (auto p = positive_window(r, c, out)) out.clips.push_back(*p);
  if (auto n = negative_window(r, c, r.t_ai - c.window_len, rng, out)) out.clips.push_back(*n);
  return out;
}

SampleResult sample_full(const AnnotationRecord& r, const SamplerConfig& c) {
  SampleResult out;
  if (!usable(r, c, out)) return out;
  Rng rng = video_rng(r, c);
  if (!r.accident) {
    if (auto n = negative_window(r, c, r.n_frames - c.window_len, rng, out)) out.clips.push_back(*n);
    return out;
  }
  const int margin = static_cast<int>(std::ceil(c.horizon_s * r.fps - 1e-9));
  std::optional<ClipSample> pos;
  if (r.t_ai < margin) {
    out.notices.push_back(r.video_id + ": no positive for horizon " + std::to_string(c.horizon_s) + " s, only " +
                          std::to_string(r.t_ai) + " frames before t_ai (need " + std::to_string(margin) + ")");
  } else {
    pos = positive_window(r, c, out);
  }
  int max_start = r.t_ai - c.window_len;
  if (pos) {
    // overlap = start + L - pos.start <= L / 2
    max_start = std::min(max_start, pos->start - c.window_len + c.window_len / 2);
  }
  if (pos) out.clips.push_back(*pos);
  if (auto n = negative_window(r, c, max_start, rng, out)) out.clips.push_back(*n);
  return out;
}

SampleResult sample(const AnnotationRecord& r, const SamplerConfig& c) {
  return c.strategy == SamplingStrategy::kMini ? sample_mini(r, c) : sample_full(r, c);
}

SampleResult sample_corpus(std::span<const AnnotationRecord> records, const SamplerConfig& c) {
  SampleResult all;
  for (const auto& r : records) {
    auto s = sample(r, c);
    all.clips.insert(all.clips.end(), s.clips.begin(), s.clips.end());
    all.notices.insert(all.notices.end(), s.notices.begin(), s.notices.end());
  }
  return all;
}

std::string to_json_line(const ClipSample& c) {
  nlohmann::json j;
  j["video_id"] = c.video_id;
  j["start"] = c.start;
  j["length"] = c.length;
  j["label"] = to_string(c.label);
  j["t_ai_local"] = c.t_ai_local ? nlohmann::json(*c.t_ai_local) : nlohmann::json(nullptr);
  j["t_co_local"] = c.t_co_local ? nlohmann::json(*c.t_co_local) : nlohmann::json(nullptr);
  j["fps"] = c.fps;
  return j.dump();
}

ClipSample clip_from_json_line(std::string_view line) {
  auto j = nlohmann::json::parse(line);
  static const std::set<std::string> keys{"video_id", "start", "length", "label", "t_ai_local", "t_co_local", "fps"};
  for (const auto& [k, _] : j.items())
    if (!keys.count(k)) throw std::invalid_argument("unknown key '" + k + "'");
  ClipSample c;
  c.video_id = j.at("video_id").get<std::string>();
  c.start = j.at("start").get<int>();
  c.length = j.at("length").get<int>();
  const auto label = j.at("label").get<std::string>();
  if (label == "positive")
    c.label = ClipLabel::kPositive;
  else if (label == "negative")
    c.label = ClipLabel::kNegative;
  else
    throw std::invalid_argument("unknown label '" + label + "'");
  if (!j.at("t_ai_local").is_null()) c.t_ai_local = j.at("t_ai_local").get<int>();
  if (!j.at("t_co_local").is_null()) c.t_co_local = j.at("t_co_local").get<int>();
  c.fps = j.at("fps").get<double>();
  if (c.positive() != c.t_ai_local.has_value())
    throw std::invalid_argument("label and t_ai_local disagree for " + c.video_id);
  return c;
}

void save_manifest(std::span<const ClipSample> clips, const std::filesystem::path& path) {
  std::ofstream os(path);
  if (!os) throw std::runtime_error("cannot open " + path.string() + " for writing");
  for (const auto& c : clips) os << to_json_line(c) << '\n';
}

std::vector<ClipSample> load_manifest(const std::filesystem::path& path) {
  std::ifstream is(path);
  if (!is) throw std::runtime_error("cannot open manifest " + path.string());
  std::vector<ClipSample> out;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(is, line)) {
    ++lineno;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    try {
      out.push_back(clip_from_json_line(line));
    } catch (const std::exception& e) {
      throw CorpusError(lineno, e.what());
    }
  }
  return out;
}

}  // namespace cap
