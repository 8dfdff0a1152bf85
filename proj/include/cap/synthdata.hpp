#pragma once

// Synthetic collision-scenario corpus. Each scenario renders one agent blob
// over a stylized road scene with a fixed ego marker at the bottom center.
// Collision scenarios move the agent across the road toward the ego marker
// while it grows (looming); pass-by scenarios keep a small agent crossing far
// ahead, never touching the ego marker.
//
// Ground-truth driver attention is an isotropic Gaussian on the agent.

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "cap/annotations.hpp"
#include "cap/common.hpp"

namespace cap {

enum class AgentClass { kPedestrian, kCyclist, kMotorcycle, kCar, kTruck };
enum class ScenarioKind { kCollision, kPassBy };

std::string_view to_string(AgentClass v);

struct SynthConfig {
  int size = 64;            // native square resolution
  int n_frames = 50;
  double fps = 10.0;
  double noise_sigma = 0.02;
};

struct TrackPoint {
  double x = 0;
  double y = 0;
  double radius = 0;
};

struct SyntheticScenario {
  AnnotationRecord record;
  ScenarioKind kind = ScenarioKind::kPassBy;
  AgentClass agent = AgentClass::kCar;
  int height = 0;
  int width = 0;
  std::vector<std::vector<float>> frames;        // each height*width*3, values in [0, 1]
  std::vector<std::vector<float>> attention_gt;  // each height*width, sums to 1
  std::vector<TrackPoint> agent_track;

  int n_frames() const { return static_cast<int>(frames.size()); }
  Image frame_image(int t) const;
  Mat attention_matrix(int t) const;  // height x width, renormalized in double
};

// Ego marker rectangle in pixel units: [x0, x1) x [y0, y1).
struct EgoBox {
  double x0, x1, y0, y1;
};
EgoBox ego_box(int size);
bool agent_overlaps_ego(const TrackPoint& p, const EgoBox& ego);
bool in_central_corridor(const TrackPoint& p, int size);

// class_mix: probability that a scenario is a collision.
std::vector<SyntheticScenario> generate(std::uint64_t seed, int n_videos, double class_mix,
                                        const SynthConfig& config = {});
SyntheticScenario generate_one(std::uint64_t seed, int index, ScenarioKind kind, const SynthConfig& config = {});

// Nearest-neighbor upsample of frame t to 224 x 224 x 3.
Image render_patchable(const SyntheticScenario& scenario, int t);

// Every sentence the generator can produce, plus the placeholder description.
std::vector<std::string> template_sentences();

// Fixation points of a ground-truth map: pixels holding at least half of the
// map's maximum, as (row, col).
std::vector<std::pair<int, int>> fixations_from_map(const Mat& gt);

// Corpus directory: annotations.jsonl plus videos/<id>.frames.capt (f32,
// [T, H, W, 3]), videos/<id>.attention.capt (f32, [T, H, W]) and
// videos/<id>.track.capt (f64, [T, 3] = x, y, radius).
void save_corpus_dir(std::span<const SyntheticScenario> scenarios, const std::filesystem::path& dir);
std::vector<SyntheticScenario> load_corpus_dir(const std::filesystem::path& dir);

}  // namespace cap
