#include "mapnet/layers.hpp"

#include <cmath>
#include <vector>

namespace mapnet {

namespace {
std::vector<double> uniform_values(Rng& rng, std::size_t n, double bound) {
  std::vector<double> v(n);
  for (auto& x : v) x = rng.uniform(-bound, bound);
  return v;
}
}  // namespace

Conv2d make_conv(Rng& rng, std::size_t in, std::size_t out, std::size_t kernel, std::size_t stride, bool zero) {
  Conv2d c;
  c.stride = stride;
  c.padding = kernel / 2;
  const Shape wshape{out, in, kernel, kernel};
  if (zero) {
    c.weight = Tensor::zeros(wshape, true);
    c.bias = Tensor::zeros({out}, true);
    return c;
  }
  const double bound = 1.0 / std::sqrt(static_cast<double>(in * kernel * kernel));
  c.weight = Tensor::from(wshape, uniform_values(rng, shape_numel(wshape), bound), true);
  c.bias = Tensor::from({out}, uniform_values(rng, out, bound), true);
  return c;
}

Tensor make_projection(Rng& rng, std::size_t rows, std::size_t cols) {
  const double bound = 1.0 / std::sqrt(static_cast<double>(rows));
  return Tensor::from({rows, cols}, uniform_values(rng, rows * cols, bound), true);
}

}  // namespace mapnet
