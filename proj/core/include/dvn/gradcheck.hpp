#pragma once

#include <functional>
#include <span>
#include <string>

#include "dvn/tensor.hpp"

namespace dvn {

/// Central-difference gradient of `loss` at `params`:
/// (loss(w + eps e_i) - loss(w - eps e_i)) / (2 eps) for every coordinate.
///
/// Invalid at points where `loss` is not differentiable (relu kinks, |w| at 0);
/// callers are responsible for staying away from them.
Tensor finite_diff_grad(const std::function<double(const Tensor&)>& loss, const Tensor& params, double eps);

/// In-place variant for tensors owned by a model: perturbs `param` one entry at
/// a time, calls `loss()`, and restores the original value before returning.
Tensor finite_diff_grad(const std::function<double()>& loss, Tensor& param, double eps);

struct GradCheckResult {
  bool ok = true;
  std::size_t checked = 0;
  std::size_t worst_index = 0;  // worst failing entry, or worst entry overall when all pass
  double worst_rel = 0.0;       // over entries whose absolute error exceeds abs_tol
  double worst_abs = 0.0;
  std::string message;
};

/// Elementwise comparison: an entry passes when |a - n| <= abs_tol or
/// |a - n| / max(|a|, |n|) <= rel_tol.
GradCheckResult compare_gradients(std::span<const double> analytic, std::span<const double> numeric,
                                  double rel_tol = 1e-5, double abs_tol = 1e-8);

}  // namespace dvn
