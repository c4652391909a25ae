// SPDX-License-Identifier: Apache-2.0
//
// Central finite-difference gradient checking.
#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "nhp/tensor.hpp"

namespace nhp {

struct GradCheckResult {
  double max_rel_error = 0.0;
  std::size_t checked = 0;
  // Coordinates where the one-sided differences disagree, i.e. the function
  // has a kink within one step of the evaluation point.
  std::size_t skipped_kinks = 0;
  std::string worst;  // description of the worst coordinate

  bool passed(double tol) const { return max_rel_error < tol; }
};

// Relative error used by every check: |a - n| / max(|a|, |n|, floor).
double relative_error(double analytic, double numeric, double floor);

// Checks d f(x) / dx for a scalar-valued f. x is cloned with requires_grad
// before the analytic pass; the caller's tensor is left untouched.
GradCheckResult grad_check(const std::function<Tensor<double>(const Tensor<double>&)>& f,
                           const Tensor<double>& x, double eps = 1e-5, double floor = 1e-5);

// Checks the gradient of a nullary scalar loss with respect to a set of
// parameter tensors, perturbing them in place. At most max_entries_per_param
// coordinates per tensor are probed (chosen deterministically from seed);
// zero means all of them.
GradCheckResult grad_check_params(const std::function<Tensor<double>()>& loss,
                                  std::vector<std::pair<std::string, Tensor<double>>> params,
                                  double eps = 1e-5, double floor = 1e-5,
                                  std::size_t max_entries_per_param = 0, std::uint64_t seed = 0);

}  // namespace nhp
