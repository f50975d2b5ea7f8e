#include "dvn/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>
#include <stdexcept>

namespace dvn {

Tensor finite_diff_grad(const std::function<double(const Tensor&)>& loss, const Tensor& params, double eps) {
  if (!(eps > 0.0)) throw std::invalid_argument("finite_diff_grad: eps must be positive");
  Tensor probe = params;
  probe.drop_grad();
  Tensor out(params.shape());
  for (std::size_t i = 0; i < probe.size(); ++i) {
    const double w = probe[i];
    probe[i] = w + eps;
    const double up = loss(probe);
    probe[i] = w - eps;
    const double down = loss(probe);
    probe[i] = w;
    out[i] = (up - down) / (2.0 * eps);
  }
  return out;
}

Tensor finite_diff_grad(const std::function<double()>& loss, Tensor& param, double eps) {
  if (!(eps > 0.0)) throw std::invalid_argument("finite_diff_grad: eps must be positive");
  Tensor out(param.shape());
  for (std::size_t i = 0; i < param.size(); ++i) {
    const double w = param[i];
    param[i] = w + eps;
    const double up = loss();
    param[i] = w - eps;
    const double down = loss();
    param[i] = w;
    out[i] = (up - down) / (2.0 * eps);
  }
  return out;
}

GradCheckResult compare_gradients(std::span<const double> analytic, std::span<const double> numeric, double rel_tol,
                                  double abs_tol) {
  GradCheckResult r;
  double failing_rel = 0.0;
  if (analytic.size() != numeric.size()) {
    r.ok = false;
    r.message = "gradient sizes differ";
    return r;
  }
  for (std::size_t i = 0; i < analytic.size(); ++i) {
    const double a = analytic[i];
    const double n = numeric[i];
    const double diff = std::abs(a - n);
    const double scale = std::max(std::abs(a), std::abs(n));
    const double rel = scale > 0.0 ? diff / scale : 0.0;
    ++r.checked;
    const bool pass = diff <= abs_tol || rel <= rel_tol;
    const double judged_rel = diff > abs_tol ? rel : 0.0;
    if (!pass && (r.ok || rel > failing_rel)) {
      r.ok = false;
      r.worst_index = i;
      failing_rel = rel;
    } else if (r.ok && judged_rel > r.worst_rel) {
      r.worst_index = i;
    }
    r.worst_rel = std::max(r.worst_rel, judged_rel);
    r.worst_abs = std::max(r.worst_abs, diff);
  }
  if (!r.ok) {
    std::ostringstream os;
    os << "entry " << r.worst_index << ": analytic " << analytic[r.worst_index] << " vs numeric "
       << numeric[r.worst_index] << " (rel " << failing_rel << ", abs "
       << std::abs(analytic[r.worst_index] - numeric[r.worst_index]) << ")";
    r.message = os.str();
  }
  return r;
}

}  // namespace dvn
