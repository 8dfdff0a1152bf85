#include "cap/synthdata.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>

#include "cap/tensor_io.hpp"

namespace cap {

namespace {

constexpr std::array<AgentClass, 5> kAgents{AgentClass::kPedestrian, AgentClass::kCyclist, AgentClass::kMotorcycle,
                                             AgentClass::kCar, AgentClass::kTruck};

struct Rgb {
  double r, g, b;
};

Rgb agent_color(AgentClass a) {
  switch (a) {
    case AgentClass::kPedestrian: return {0.95, 0.20, 0.20};
    case AgentClass::kCyclist: return {0.20, 0.90, 0.30};
    case AgentClass::kMotorcycle: return {0.90, 0.30, 0.90};
    case AgentClass::kCar: return {0.20, 0.45, 1.00};
    case AgentClass::kTruck: return {1.00, 0.80, 0.10};
  }
  return {1, 1, 1};
}

std::string_view motion_verb(AgentClass a) {
  switch (a) {
    case AgentClass::kPedestrian: return "walks across";
    case AgentClass::kCyclist: return "rides across";
    case AgentClass::kMotorcycle: return "rides across";
    case AgentClass::kCar: return "drives across";
    case AgentClass::kTruck: return "drives across";
  }
  return "moves across";
}

int category_of(AgentClass a) { return static_cast<int>(a) + 1; }

AgentClass agent_of_category(int c) {
  if (c >= 1 && c <= 5) return kAgents[static_cast<std::size_t>(c - 1)];
  return AgentClass::kCar;
}

std::string fact_text(AgentClass a, bool from_left) {
  return "a " + std::string(to_string(a)) + " " + std::string(motion_verb(a)) + " the road from the " +
         (from_left ? "left" : "right");
}

template <typename T, std::size_t N>
T pick(Rng& rng, const std::array<std::pair<T, double>, N>& table) {
  double u = uniform01(rng);
  for (const auto& [v, p] : table) {
    if (u < p) return v;
    u -= p;
  }
  return table.back().first;
}

Rng scenario_rng(std::uint64_t seed, int index, std::uint32_t stream) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(index), stream};
  return Rng(seq);
}

void render(SyntheticScenario& s, const SynthConfig& cfg, Rng& rng) {
  const int n = cfg.size;
  const auto& rec = s.record;
  const double night = rec.light == Light::kNighttime ? 0.4 : 1.0;
  const EgoBox ego = ego_box(n);
  const Rgb tint = agent_color(s.agent);
  const Rgb color{0.7 + 0.3 * tint.r, 0.7 + 0.3 * tint.g, 0.7 + 0.3 * tint.b};
  const int horizon = static_cast<int>(0.3 * n);

  std::vector<float> background(static_cast<std::size_t>(n) * n * 3);
  for (int y = 0; y < n; ++y) {
    for (int x = 0; x < n; ++x) {
      Rgb px = y < horizon ? Rgb{0.55, 0.62, 0.75} : Rgb{0.30, 0.30, 0.32};
      if (y >= horizon) {
        // two lane lines converging toward the vanishing point
        const double depth = static_cast<double>(y - horizon) / (n - horizon);
        const double half = 0.05 * n + 0.4 * n * depth;
        for (double lane : {n / 2.0 - half, n / 2.0 + half})
          if (std::abs(x + 0.5 - lane) < 0.5 + depth && ((y / 3) % 2 == 0)) px = {0.8, 0.8, 0.75};
      }
      if (rec.weather == Weather::kSnowy && y >= horizon) px = {px.r + 0.2, px.g + 0.2, px.b + 0.22};
      px = {px.r * night, px.g * night, px.b * night};
      if (rec.weather == Weather::kFoggy) px = {0.65 * px.r + 0.35 * 0.7, 0.65 * px.g + 0.35 * 0.7, 0.65 * px.b + 0.35 * 0.7};
      if (rec.weather == Weather::kRainy) px = {px.r * 0.85, px.g * 0.85, px.b * 0.9};
      if (x >= ego.x0 && x + 1 <= ego.x1 && y >= ego.y0 && y + 1 <= ego.y1) px = {0.92, 0.92, 0.92};
      const std::size_t i = (static_cast<std::size_t>(y) * n + x) * 3;
      background[i] = static_cast<float>(px.r);
      background[i + 1] = static_cast<float>(px.g);
      background[i + 2] = static_cast<float>(px.b);
    }
  }

  const int frames = rec.n_frames;
  s.frames.assign(static_cast<std::size_t>(frames), {});
  s.attention_gt.assign(static_cast<std::size_t>(frames), {});
  for (int t = 0; t < frames; ++t) {
    const TrackPoint& p = s.agent_track[static_cast<std::size_t>(t)];
    auto& img = s.frames[static_cast<std::size_t>(t)];
    img = background;
    for (int y = 0; y < n; ++y) {
      for (int x = 0; x < n; ++x) {
        const double d = std::hypot(x + 0.5 - p.x, y + 0.5 - p.y);
        const double alpha = std::clamp(p.radius + 0.5 - d, 0.0, 1.0);
        const std::size_t i = (static_cast<std::size_t>(y) * n + x) * 3;
        if (alpha > 0) {
          img[i] = static_cast<float>((1 - alpha) * img[i] + alpha * color.r);
          img[i + 1] = static_cast<float>((1 - alpha) * img[i + 1] + alpha * color.g);
          img[i + 2] = static_cast<float>((1 - alpha) * img[i + 2] + alpha * color.b);
        }
        for (int c = 0; c < 3; ++c)
          img[i + c] = static_cast<float>(std::clamp(img[i + c] + cfg.noise_sigma * normal(rng), 0.0, 1.0));
      }
    }

    const double sigma = std::max(2.0, 0.8 * p.radius);
    std::vector<double> att(static_cast<std::size_t>(n) * n);
    double total = 0;
    for (int y = 0; y < n; ++y)
      for (int x = 0; x < n; ++x) {
        const double dx = x + 0.5 - p.x, dy = y + 0.5 - p.y;
        const double v = std::exp(-(dx * dx + dy * dy) / (2 * sigma * sigma));
        att[static_cast<std::size_t>(y) * n + x] = v;
        total += v;
      }
    auto& out = s.attention_gt[static_cast<std::size_t>(t)];
    out.resize(att.size());
    for (std::size_t i = 0; i < att.size(); ++i) out[i] = static_cast<float>(att[i] / total);
  }
}

}  // namespace

std::string_view to_string(AgentClass v) {
  switch (v) {
    case AgentClass::kPedestrian: return "pedestrian";
    case AgentClass::kCyclist: return "cyclist";
    case AgentClass::kMotorcycle: return "motorcycle";
    case AgentClass::kCar: return "car";
    case AgentClass::kTruck: return "truck";
  }
  return "agent";
}

EgoBox ego_box(int size) {
  const double s = size / 64.0;
  return {26 * s, 38 * s, 57 * s, 64 * s};
}

bool agent_overlaps_ego(const TrackPoint& p, const EgoBox& e) {
  const double cx = std::clamp(p.x, e.x0, e.x1);
  const double cy = std::clamp(p.y, e.y0, e.y1);
  return std::hypot(p.x - cx, p.y - cy) < p.radius;
}

bool in_central_corridor(const TrackPoint& p, int size) { return std::abs(p.x - size / 2.0) < 0.16 * size; }

Image SyntheticScenario::frame_image(int t) const {
  if (t < 0 || t >= n_frames()) throw std::out_of_range("frame index " + std::to_string(t) + " out of range");
  Image img(height, width, 3);
  const auto& f = frames[static_cast<std::size_t>(t)];
  for (std::size_t i = 0; i < f.size(); ++i) img.data[i] = f[i];
  return img;
}

Mat SyntheticScenario::attention_matrix(int t) const {
  if (t < 0 || t >= n_frames()) throw std::out_of_range("frame index " + std::to_string(t) + " out of range");
  Mat m(height, width);
  const auto& a = attention_gt[static_cast<std::size_t>(t)];
  for (int y = 0; y < height; ++y)
    for (int x = 0; x < width; ++x) m(y, x) = a[static_cast<std::size_t>(y) * width + x];
  return m / m.sum();
}

SyntheticScenario generate_one(std::uint64_t seed, int index, ScenarioKind kind, const SynthConfig& cfg) {
  if (cfg.size < 16 || cfg.n_frames < 8 || !(cfg.fps > 0)) throw std::invalid_argument("bad synthetic config");
  Rng rng = scenario_rng(seed, index, 1);
  const int n = cfg.size;
  const int T = cfg.n_frames;

  SyntheticScenario s;
  s.kind = kind;
  s.height = s.width = n;
  s.agent = kAgents[uniform_index(rng, kAgents.size())];
  const bool from_left = uniform01(rng) < 0.5;

  auto& r = s.record;
  r.video_id = "syn_" + std::to_string(seed) + "_" + std::to_string(index);
  r.n_frames = T;
  r.fps = cfg.fps;
  r.accident = kind == ScenarioKind::kCollision;
  r.accident_category = category_of(s.agent);
  r.weather = pick<Weather, 4>(
      rng, {{{Weather::kSunny, 0.55}, {Weather::kRainy, 0.15}, {Weather::kSnowy, 0.10}, {Weather::kFoggy, 0.20}}});
  r.light = uniform01(rng) < 0.7 ? Light::kDaytime : Light::kNighttime;
  r.occasion = static_cast<Occasion>(uniform_index(rng, 5));
  r.road_type = static_cast<RoadType>(uniform_index(rng, 5));
  r.fact = fact_text(s.agent, from_left);

  const std::string name(to_string(s.agent));
  s.agent_track.resize(static_cast<std::size_t>(T));
  if (kind == ScenarioKind::kCollision) {
    const double x0 = from_left ? uniform(rng, 4, 14) * n / 64 : uniform(rng, 50, 60) * n / 64;
    const double y0 = uniform(rng, 14, 24) * n / 64;
    const double cross_x = n / 2.0 + uniform(rng, -2, 2) * n / 64;
    const double cross_y = 57.0 * n / 64;
    const double t_cross = std::round(uniform(rng, 0.72, 0.92) * T);
    const double r0 = uniform(rng, 1.5, 2.5) * n / 64;
    const double r1 = uniform(rng, 6.0, 8.0) * n / 64;
    for (int t = 0; t < T; ++t) {
      const double f = t / t_cross;
      auto& p = s.agent_track[static_cast<std::size_t>(t)];
      p.x = x0 + f * (cross_x - x0);
      p.y = y0 + f * (cross_y - y0);
      p.radius = r0 + (r1 - r0) * std::min(1.0, f);
    }
    const EgoBox ego = ego_box(n);
    int t_co = -1, t_ai = -1, t_ae = T;
    for (int t = 0; t < T; ++t) {
      const auto& p = s.agent_track[static_cast<std::size_t>(t)];
      if (t_ai < 0 && in_central_corridor(p, n)) t_ai = t;
      if (t_co < 0 && agent_overlaps_ego(p, ego)) t_co = t;
      if (t_co >= 0 && t > t_co && !agent_overlaps_ego(p, ego)) {
        t_ae = t;
        break;
      }
    }
    if (t_co < 0) t_co = static_cast<int>(t_cross);
    if (t_ai < 0 || t_ai > t_co) t_ai = t_co;
    r.t_ai = t_ai;
    r.t_co = t_co;
    r.t_ae = t_ae;
    r.effect = "the ego car hits a " + name;
    r.reason = "a " + name + " crosses the road without noticing the ego car";
    r.introspection = "the driver should slow down when a " + name + " is near the road";
  } else {
    const double y = uniform(rng, 10, 26) * n / 64;
    const double radius = uniform(rng, 1.5, 2.5) * n / 64;
    const double xa = uniform(rng, 2, 10) * n / 64, xb = uniform(rng, 54, 62) * n / 64;
    const double x0 = from_left ? xa : xb, x1 = from_left ? xb : xa;
    for (int t = 0; t < T; ++t) {
      const double f = static_cast<double>(t) / (T - 1);
      s.agent_track[static_cast<std::size_t>(t)] = {x0 + f * (x1 - x0), y, radius};
    }
    r.t_ai = r.t_co = r.t_ae = T;
  }

  Rng pixel_rng = scenario_rng(seed, index, 2);
  render(s, cfg, pixel_rng);
  return s;
}

std::vector<SyntheticScenario> generate(std::uint64_t seed, int n_videos, double class_mix, const SynthConfig& cfg) {
  if (n_videos < 1) throw std::invalid_argument("n_videos must be at least 1");
  if (!(class_mix >= 0 && class_mix <= 1)) throw std::invalid_argument("class_mix must lie in [0, 1]");
  std::vector<SyntheticScenario> out;
  out.reserve(static_cast<std::size_t>(n_videos));
  // Stratified kinds: the first round(class_mix * n) indices of a seeded
  // permutation are collisions.
  const int n_collision = static_cast<int>(std::lround(class_mix * n_videos));
  std::vector<int> order(static_cast<std::size_t>(n_videos));
  for (int i = 0; i < n_videos; ++i) order[static_cast<std::size_t>(i)] = i;
  Rng rng = scenario_rng(seed, -1, 3);
  for (int i = n_videos - 1; i > 0; --i)
    std::swap(order[static_cast<std::size_t>(i)], order[uniform_index(rng, static_cast<std::uint64_t>(i) + 1)]);
  std::vector<ScenarioKind> kinds(static_cast<std::size_t>(n_videos), ScenarioKind::kPassBy);
  for (int i = 0; i < n_collision; ++i) kinds[static_cast<std::size_t>(order[static_cast<std::size_t>(i)])] = ScenarioKind::kCollision;
  for (int i = 0; i < n_videos; ++i) out.push_back(generate_one(seed, i, kinds[static_cast<std::size_t>(i)], cfg));
  return out;
}

Image render_patchable(const SyntheticScenario& s, int t) {
  if (t < 0 || t >= s.n_frames()) throw std::out_of_range("frame index " + std::to_string(t) + " out of range");
  constexpr int kOut = 224;
  Image img(kOut, kOut, 3);
  const auto& f = s.frames[static_cast<std::size_t>(t)];
  for (int y = 0; y < kOut; ++y) {
    const int sy = y * s.height / kOut;
    for (int x = 0; x < kOut; ++x) {
      const int sx = x * s.width / kOut;
      const std::size_t src = (static_cast<std::size_t>(sy) * s.width + sx) * 3;
      for (int c = 0; c < 3; ++c) img.at(y, x, c) = f[src + static_cast<std::size_t>(c)];
    }
  }
  return img;
}

std::vector<std::string> template_sentences() {
  std::vector<std::string> out;
  for (auto a : kAgents) {
    const std::string name(to_string(a));
    out.push_back(fact_text(a, true));
    out.push_back(fact_text(a, false));
    out.push_back("the ego car hits a " + name);
    out.push_back("a " + name + " crosses the road without noticing the ego car");
    out.push_back("the driver should slow down when a " + name + " is near the road");
  }
  out.push_back("a frame of { }");
  return out;
}

std::vector<std::pair<int, int>> fixations_from_map(const Mat& gt) {
  std::vector<std::pair<int, int>> out;
  const double thr = 0.5 * gt.maxCoeff();
  for (int y = 0; y < gt.rows(); ++y)
    for (int x = 0; x < gt.cols(); ++x)
      if (gt(y, x) >= thr && gt(y, x) > 0) out.emplace_back(y, x);
  return out;
}

void save_corpus_dir(std::span<const SyntheticScenario> scenarios, const std::filesystem::path& dir) {
  namespace fs = std::filesystem;
  fs::create_directories(dir / "videos");
  std::vector<AnnotationRecord> records;
  for (const auto& s : scenarios) {
    records.push_back(s.record);
    const auto T = static_cast<std::uint64_t>(s.n_frames());
    const auto H = static_cast<std::uint64_t>(s.height), W = static_cast<std::uint64_t>(s.width);
    std::vector<float> frames, att;
    frames.reserve(T * H * W * 3);
    att.reserve(T * H * W);
    for (const auto& f : s.frames) frames.insert(frames.end(), f.begin(), f.end());
    for (const auto& a : s.attention_gt) att.insert(att.end(), a.begin(), a.end());
    std::vector<double> track;
    for (const auto& p : s.agent_track) track.insert(track.end(), {p.x, p.y, p.radius});
    const auto base = dir / "videos" / s.record.video_id;
    save_tensor(base.string() + ".frames.capt", Tensor::from_f32({T, H, W, 3}, frames));
    save_tensor(base.string() + ".attention.capt", Tensor::from_f32({T, H, W}, att));
    save_tensor(base.string() + ".track.capt", Tensor::from_f64({T, 3}, track));
  }
  save_corpus(records, dir / "annotations.jsonl");
}

std::vector<SyntheticScenario> load_corpus_dir(const std::filesystem::path& dir) {
  auto records = load_corpus(dir / "annotations.jsonl");
  std::vector<SyntheticScenario> out;
  for (auto& r : records) {
    SyntheticScenario s;
    const auto base = (dir / "videos" / r.video_id).string();
    auto frames = load_tensor(base + ".frames.capt");
    auto att = load_tensor(base + ".attention.capt");
    auto track = load_tensor(base + ".track.capt");
    if (frames.shape.size() != 4 || frames.shape[3] != 3 || att.shape.size() != 3 ||
        frames.shape[0] != static_cast<std::uint64_t>(r.n_frames) || att.shape[0] != frames.shape[0])
      throw std::runtime_error("tensor shapes do not match annotation for " + r.video_id);
    s.height = static_cast<int>(frames.shape[1]);
    s.width = static_cast<int>(frames.shape[2]);
    const std::size_t fsz = static_cast<std::size_t>(s.height) * s.width * 3, asz = fsz / 3;
    auto fv = frames.as_f32();
    auto av = att.as_f32();
    auto tv = track.as_f64();
    for (int t = 0; t < r.n_frames; ++t) {
      s.frames.emplace_back(fv.begin() + static_cast<std::ptrdiff_t>(t * fsz),
                            fv.begin() + static_cast<std::ptrdiff_t>((t + 1) * fsz));
      s.attention_gt.emplace_back(av.begin() + static_cast<std::ptrdiff_t>(t * asz),
                                  av.begin() + static_cast<std::ptrdiff_t>((t + 1) * asz));
      s.agent_track.push_back({tv[3 * static_cast<std::size_t>(t)], tv[3 * static_cast<std::size_t>(t) + 1],
                               tv[3 * static_cast<std::size_t>(t) + 2]});
    }
    s.kind = r.accident ? ScenarioKind::kCollision : ScenarioKind::kPassBy;
    s.agent = agent_of_category(r.accident_category);
    s.record = std::move(r);
    out.push_back(std::move(s));
  }
  return out;
}

}  // namespace cap
