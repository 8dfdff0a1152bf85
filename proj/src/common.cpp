#include "cap/common.hpp"

#include <cmath>

namespace cap {

std::string_view to_string(ParamGroup group) {
  switch (group) {
    case ParamGroup::kSelfAttention: return "self_attention";
    case ParamGroup::kT2I: return "t2i";
    case ParamGroup::kGru: return "gru";
    case ParamGroup::kDecoder: return "decoder";
  }
  return "unknown";
}

void init_uniform_fan_in(Param& p, Eigen::Index fan_in, Rng& rng) {
  const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
  for (Eigen::Index j = 0; j < p.value.cols(); ++j)
    for (Eigen::Index i = 0; i < p.value.rows(); ++i) p.value(i, j) = uniform(rng, -bound, bound);
}

std::uint64_t fnv1a(std::string_view s) {
  std::uint64_t h = 1469598103934665603ULL;
  for (unsigned char c : s) {
    h ^= c;
    h *= 1099511628211ULL;
  }
  return h;
}

void expect_shape(const Mat& m, Eigen::Index rows, Eigen::Index cols, std::string_view what) {
  if (m.rows() != rows || m.cols() != cols)
    throw ShapeError(std::string(what) + ": expected " + std::to_string(rows) + "x" + std::to_string(cols) + ", got " +
                     std::to_string(m.rows()) + "x" + std::to_string(m.cols()));
}

bool all_finite(const Mat& m) { return m.allFinite(); }

}  // namespace cap
