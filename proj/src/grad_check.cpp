#include "mapnet/grad_check.hpp"

#include <algorithm>
#include <cmath>

namespace mapnet {

double grad_check_against(const std::function<Tensor(const Tensor&)>& f, const Tensor& x,
                          const std::vector<double>& analytic, double eps) {
  if (analytic.size() != x.numel()) throw DimensionError("grad_check: analytic gradient size mismatch");
  NoGradGuard no_grad;
  std::vector<double> values = x.to_vector();
  double worst = 0.0;
  for (std::size_t i = 0; i < values.size(); ++i) {
    const double saved = values[i];
    values[i] = saved + eps;
    const double up = f(Tensor::from(x.shape(), values)).item();
    values[i] = saved - eps;
    const double down = f(Tensor::from(x.shape(), values)).item();
    values[i] = saved;
    const double numeric = (up - down) / (2.0 * eps);
    worst = std::max(worst, std::abs(analytic[i] - numeric) / std::max(1.0, std::abs(numeric)));
  }
  return worst;
}

double grad_check(const std::function<Tensor(const Tensor&)>& f, const Tensor& x, double eps) {
  Tensor leaf = x.leaf(true);
  f(leaf).backward();
  return grad_check_against(f, x, leaf.grad(), eps);
}

}  // namespace mapnet
