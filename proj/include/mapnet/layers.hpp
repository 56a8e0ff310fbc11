#pragma once

#include <cstddef>

#include "mapnet/rng.hpp"
#include "mapnet/tensor.hpp"

namespace mapnet {

/// Negative-side slope of the network's gating nonlinearity.
inline constexpr double kLeakySlope = 0.1;

struct Conv2d {
  Tensor weight;  ///< [Co, Ci, k, k]
  Tensor bias;    ///< [Co]
  std::size_t stride = 1;
  std::size_t padding = 0;

  Tensor operator()(const Tensor& x) const { return conv2d(x, weight, bias, stride, padding); }
  std::size_t in_channels() const { return weight.dim(1); }
  std::size_t out_channels() const { return weight.dim(0); }
};

/// Uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)) weights and biases; all zeros when `zero` is set.
/// Padding is k/2 so odd kernels preserve extent at stride 1.
Conv2d make_conv(Rng& rng, std::size_t in, std::size_t out, std::size_t kernel, std::size_t stride = 1,
                 bool zero = false);

/// [rows, cols] projection with fan-in = rows.
Tensor make_projection(Rng& rng, std::size_t rows, std::size_t cols);

}  // namespace mapnet
