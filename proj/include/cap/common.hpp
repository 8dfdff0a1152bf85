#pragma once

#include <cstdint>
#include <random>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include <Eigen/Dense>

namespace cap {

using Mat = Eigen::MatrixXd;
using Vec = Eigen::VectorXd;
using RowVec = Eigen::RowVectorXd;
using Rng = std::mt19937_64;

// Learning-rate groups. Every parameter belongs to exactly one.
enum class ParamGroup { kSelfAttention, kT2I, kGru, kDecoder };

std::string_view to_string(ParamGroup group);

struct Param {
  std::string name;
  ParamGroup group = ParamGroup::kSelfAttention;
  Mat value;
  Mat grad;

  Param() = default;
  Param(std::string n, ParamGroup g, Eigen::Index rows, Eigen::Index cols)
      : name(std::move(n)), group(g), value(Mat::Zero(rows, cols)), grad(Mat::Zero(rows, cols)) {}

  void zero_grad() { grad.setZero(); }
};

using ParamList = std::vector<Param*>;

// Uniform in [0, 1) from the top 53 bits; independent of the standard
// library's distribution implementations.
inline double uniform01(Rng& rng) { return static_cast<double>(rng() >> 11) * 0x1.0p-53; }

inline double uniform(Rng& rng, double lo, double hi) { return lo + (hi - lo) * uniform01(rng); }

inline double normal(Rng& rng) {
  // Box-Muller, one sample per call.
  double u1 = uniform01(rng);
  double u2 = uniform01(rng);
  if (u1 < 1e-300) u1 = 1e-300;
  return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * 3.14159265358979323846 * u2);
}

// Integer in [0, n).
inline std::uint64_t uniform_index(Rng& rng, std::uint64_t n) { return n == 0 ? 0 : rng() % n; }

// uniform(-1/sqrt(fan_in), 1/sqrt(fan_in))
void init_uniform_fan_in(Param& p, Eigen::Index fan_in, Rng& rng);

std::uint64_t fnv1a(std::string_view s);

class ShapeError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

void expect_shape(const Mat& m, Eigen::Index rows, Eigen::Index cols, std::string_view what);

bool all_finite(const Mat& m);

// Interleaved (height x width x channels) image, row-major.
struct Image {
  int height = 0;
  int width = 0;
  int channels = 0;
  std::vector<double> data;

  Image() = default;
  Image(int h, int w, int c) : height(h), width(w), channels(c), data(static_cast<std::size_t>(h) * w * c, 0.0) {}

  double& at(int y, int x, int c) { return data[(static_cast<std::size_t>(y) * width + x) * channels + c]; }
  double at(int y, int x, int c) const { return data[(static_cast<std::size_t>(y) * width + x) * channels + c]; }
};

}  // namespace cap
