#pragma once

#include <functional>

#include "disperse/tensor.hpp"

namespace disperse::ad {

/// Compares the reverse-mode gradient of f at x against central finite
/// differences with step h. Returns the max over coordinates of
/// |analytic - numeric| / max(|analytic|, |numeric|, 1e-8).
///
/// f must be deterministic and return a scalar; x is restored on exit.
double grad_check(const std::function<Tensor(const Tensor&)>& f, Tensor x,
                  double h);

}  // namespace disperse::ad
