#pragma once

// Central finite-difference checks of every hand-written backward pass.
//
// Each suite builds a module at its production size, draws random inputs,
// and compares analytic gradients of a scalar probe against
// (f(x + h) - f(x - h)) / 2h on sampled coordinates of every parameter and
// input. Relative error is |a - n| / max(|a|, |n|, floor).

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "cap/common.hpp"

namespace cap {

struct GradcheckOptions {
  std::uint64_t seed = 0;
  double step = 1e-5;
  double floor = 1e-6;
  int coords_per_param = 6;
  double module_tolerance = 1e-4;
  double end_to_end_tolerance = 1e-3;
  double loss_tolerance = 1e-6;
  // Fault injection: the analytic gradient of this parameter is perturbed
  // before comparison. Empty = off.
  std::string corrupt_param;
  std::vector<std::string> modules;  // empty = all
};

struct GradcheckEntry {
  std::string module;
  std::string param;
  int coords = 0;
  double max_rel_error = 0;
  double tolerance = 0;
  // Coordinates whose finite-difference reference was unstable (a kink inside
  // the stencil, or a discrepancy below roundoff); each is replaced by a fresh
  // coordinate. Too many of them is itself a failure.
  int unresolved = 0;
  bool passed() const;
};

struct GradcheckReport {
  std::vector<GradcheckEntry> entries;
  double seconds = 0;

  bool passed() const;
  std::vector<std::string> modules() const;
  double module_max_error(const std::string& module) const;
  std::vector<std::string> failures() const;  // "module/param"
  std::string to_text() const;
  std::string to_json() const;  // excludes timing so that it is seed-deterministic
};

std::vector<std::string> gradcheck_modules();
GradcheckReport run_gradcheck(const GradcheckOptions& options);

// Generic checker used by the suites. grad_fn must fill Param::grad of every
// target after the checker zeroes them.
void check_gradients(const std::string& module, const std::vector<Param*>& targets,
                     const std::function<double()>& loss_fn, const std::function<void()>& grad_fn,
                     double tolerance, const GradcheckOptions& options, Rng& rng, GradcheckReport& report);

}  // namespace cap
