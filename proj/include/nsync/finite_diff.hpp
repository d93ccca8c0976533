#pragma once

#include <functional>

#include "nsync/param_set.hpp"

namespace nsync {

// Central-difference gradient of f over the trainable parameters; the
// independent oracle for reverse-mode results. Two evaluations of f per
// coordinate. Rejects non-finite values of f.
GradVector finite_difference_grad(const std::function<double(const ParamSet&)>& f,
                                  const ParamSet& params, double h = 1e-5);

// || a - b || / max(||a||, ||b||, floor); layouts must match.
double grad_rel_error(const GradVector& a, const GradVector& b, double floor = 1e-12);

}  // namespace nsync
