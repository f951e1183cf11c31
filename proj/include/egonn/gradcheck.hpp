#pragma once

#include <functional>

#include "egonn/parameter.hpp"

namespace egonn::ad {

struct GradCheckReport {
  double max_rel_err = 0.0;
  int coords_checked = 0;
};

/// Compares analytic gradients against central finite differences.
///
/// `loss_fn` must build a fresh tape, run forward and backward (accumulating
/// into parameter grads), and return the scalar loss; it must be a pure
/// function of the store's current values. Up to `samples_per_param`
/// coordinates per parameter are checked (all of them when the parameter is
/// smaller), drawn deterministically from `seed`.
///
/// Relative error per coordinate is |a - n| / max(|a|, |n|, 0.01), a mixed
/// absolute/relative criterion so near-zero gradients do not dominate.
GradCheckReport grad_check(ParameterStore& params, const std::function<double()>& loss_fn,
                           double h = 1e-5, int samples_per_param = 16, uint64_t seed = 0x9e1d);

}  // namespace egonn::ad
