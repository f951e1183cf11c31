#include "egonn/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <vector>

namespace egonn::ad {

GradCheckReport grad_check(ParameterStore& params, const std::function<double()>& loss_fn,
                           double h, int samples_per_param, uint64_t seed) {
  params.zero_grads();
  const double base = loss_fn();
  if (!std::isfinite(base)) throw NumericalError("grad_check: non-finite loss");

  std::vector<Mat> analytic;
  for (const auto& p : params.all()) analytic.push_back(p->grad);

  GradCheckReport report;
  Rng rng(seed);
  size_t pi = 0;
  for (const auto& p : params.all()) {
    const Mat saved_grad = analytic[pi++];
    if (!p->trainable) continue;
    const Eigen::Index n = p->values.size();
    std::vector<Eigen::Index> idx(static_cast<size_t>(n));
    std::iota(idx.begin(), idx.end(), 0);
    if (n > samples_per_param) {
      std::shuffle(idx.begin(), idx.end(), rng);
      idx.resize(static_cast<size_t>(samples_per_param));
    }
    for (Eigen::Index i : idx) {
      double* slot = p->values.data() + i;
      const double orig = *slot;
      *slot = orig + h;
      params.zero_grads();
      const double up = loss_fn();
      *slot = orig - h;
      params.zero_grads();
      const double down = loss_fn();
      *slot = orig;
      const double numeric = (up - down) / (2.0 * h);
      const double a = saved_grad.data()[i];
      const double rel = std::abs(a - numeric) / std::max({std::abs(a), std::abs(numeric), 0.01});
      report.max_rel_err = std::max(report.max_rel_err, rel);
      ++report.coords_checked;
    }
  }
  // Leave the store holding the analytic gradients of the unperturbed state.
  params.zero_grads();
  loss_fn();
  if (report.coords_checked < 1) throw NumericalError("grad_check: nothing to check");
  return report;
}

}  // namespace egonn::ad
