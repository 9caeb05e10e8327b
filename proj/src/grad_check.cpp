#include "vtfuse/grad_check.hpp"

#include <algorithm>
#include <cmath>

#include "vtfuse/errors.hpp"

namespace vtfuse {

GradCheckResult grad_check(const std::function<Tensor(const std::vector<Tensor>&)>& f,
                           std::vector<Tensor> inputs, double eps) {
  for (Tensor& t : inputs) {
    if (!t.is_leaf()) throw ContractError("grad_check inputs must be leaves");
    t.zero_grad();
  }
  f(inputs).backward();
  std::vector<std::vector<double>> analytic;
  for (const Tensor& t : inputs) {
    if (t.requires_grad()) {
      analytic.emplace_back(t.grad().begin(), t.grad().end());
    } else {
      analytic.emplace_back();
    }
  }

  GradCheckResult result;
  NoGradGuard no_grad;
  for (std::size_t k = 0; k < inputs.size(); ++k) {
    if (!inputs[k].requires_grad()) continue;
    auto values = inputs[k].values_mut();
    for (std::size_t i = 0; i < values.size(); ++i) {
      const double saved = values[i];
      values[i] = saved + eps;
      const double plus = f(inputs).item();
      values[i] = saved - eps;
      const double minus = f(inputs).item();
      values[i] = saved;
      const double numeric = (plus - minus) / (2.0 * eps);
      const double a = analytic[k][i];
      const double err = std::abs(a - numeric) / std::max(1e-8, std::abs(a) + std::abs(numeric));
      if (err > result.max_relative_error) {
        result.max_relative_error = err;
        result.worst_input = k;
        result.worst_index = i;
        result.worst_analytic = a;
        result.worst_numeric = numeric;
      }
      ++result.coordinates;
    }
  }
  for (Tensor& t : inputs) t.zero_grad();
  return result;
}

}  // namespace vtfuse
