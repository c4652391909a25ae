// SPDX-License-Identifier: Apache-2.0
//
// Finite-difference checks of every differentiable operation and of the
// end-to-end point evaluation, in double precision.
#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

namespace nhp {

inline constexpr double kOpGradTolerance = 1e-4;
inline constexpr double kEndToEndGradTolerance = 1e-3;

struct GradSuiteEntry {
  std::string name;
  double max_rel_error = 0.0;
  double tolerance = 0.0;
  std::size_t checked = 0;
  std::size_t skipped_kinks = 0;
  std::string worst;
  bool passed() const { return checked > 0 && max_rel_error < tolerance; }
};

// Runs every check; `progress` (optional) sees each entry as it finishes.
std::vector<GradSuiteEntry> run_gradient_suite(std::uint64_t seed = 0,
                                               const std::function<void(const GradSuiteEntry&)>& progress = {});

}  // namespace nhp
