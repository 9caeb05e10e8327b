#pragma once

#include <functional>
#include <vector>

#include "vtfuse/tensor.hpp"

namespace vtfuse {

struct GradCheckResult {
  double max_relative_error = 0.0;
  std::size_t coordinates = 0;
  // Location of the worst coordinate.
  std::size_t worst_input = 0;
  std::size_t worst_index = 0;
  double worst_analytic = 0.0;
  double worst_numeric = 0.0;
};

// Compares backward() gradients of scalar-valued `f` against central
// differences (f(x+eps) - f(x-eps)) / (2 eps), coordinate by coordinate over
// every input that requires a gradient. Relative error per coordinate is
// |analytic - numeric| / max(1e-8, |analytic| + |numeric|).
//
// Inputs are perturbed in place and restored; their gradients are zeroed.
GradCheckResult grad_check(const std::function<Tensor(const std::vector<Tensor>&)>& f,
                           std::vector<Tensor> inputs, double eps = 1e-5);

}  // namespace vtfuse
