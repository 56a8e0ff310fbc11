#pragma once

#include <functional>

#include "mapnet/tensor.hpp"

namespace mapnet {

/// Compares reverse-mode gradients of a scalar function against central differences.
///
/// Returns max over coordinates of |analytic - numeric| / max(1, |numeric|).
/// `f` must build its graph from the tensor it is given.
double grad_check(const std::function<Tensor(const Tensor&)>& f, const Tensor& x, double eps = 1e-5);

/// Same as grad_check, but with the analytic gradient supplied by the caller. Used to
/// confirm the checker flags a wrong gradient.
double grad_check_against(const std::function<Tensor(const Tensor&)>& f, const Tensor& x,
                          const std::vector<double>& analytic, double eps = 1e-5);

}  // namespace mapnet
