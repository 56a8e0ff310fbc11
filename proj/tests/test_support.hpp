#pragma once

// Shared helpers and independent reference implementations for the test programs.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "mapnet/haze.hpp"
#include "mapnet/layers.hpp"
#include "mapnet/multirange.hpp"
#include "mapnet/rng.hpp"
#include "mapnet/tensor.hpp"

namespace testing {

using namespace mapnet;

inline Tensor random_tensor(Rng& rng, const Shape& shape, double lo = -1.0, double hi = 1.0) {
  std::vector<double> v(shape_numel(shape));
  for (auto& x : v) x = rng.uniform(lo, hi);
  return Tensor::from(shape, std::move(v));
}

/// sum(y * w): a scalar with a nontrivial gradient pattern.
inline Tensor project(const Tensor& y, const Tensor& w) { return sum(mul(y, w)); }

inline double max_abs_diff(std::span<const double> a, std::span<const double> b) {
  double worst = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) worst = std::max(worst, std::abs(a[i] - b[i]));
  return worst;
}

inline Conv2d random_conv(Rng& rng, std::size_t in, std::size_t out, std::size_t k, double scale_by = 1.0) {
  Conv2d c = make_conv(rng, in, out, k);
  c.weight = Tensor::from(c.weight.shape(), random_tensor(rng, c.weight.shape(), -scale_by, scale_by).to_vector());
  c.bias = Tensor::from(c.bias.shape(), random_tensor(rng, c.bias.shape(), -scale_by, scale_by).to_vector());
  return c;
}

/// STDA parameters with every weight random, including the normally zeroed offset output.
inline StdaParams random_stda_params(Rng& rng, std::size_t c, std::size_t window, std::size_t heads) {
  StdaParams p;
  p.offset.hidden = random_conv(rng, 2 * c + 3, c, 3, 0.2);
  p.offset.out = random_conv(rng, c, 3, 3, 0.05);
  p.query_proj = random_tensor(rng, {c, c}, -0.5, 0.5);
  p.key_value_proj = random_tensor(rng, {c, 2 * c}, -0.5, 0.5);
  p.ffn_in = random_conv(rng, c, 2 * c, 1, 0.5);
  p.ffn_out = random_conv(rng, 2 * c, c, 1, 0.5);
  p.window = window;
  p.heads = heads;
  return p;
}

/// Random flow with coordinates strictly inside (-1, 1).
inline Tensor random_flow(Rng& rng, std::size_t h, std::size_t w) { return random_tensor(rng, {3, h, w}, -0.95, 0.95); }

// ---------------------------------------------------------------------------
// Oracles

inline std::vector<double> naive_matmul(const std::vector<double>& a, const std::vector<double>& b, std::size_t m,
                                        std::size_t k, std::size_t n) {
  std::vector<double> c(m * n, 0.0);
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j)
      for (std::size_t p = 0; p < k; ++p) c[i * n + j] += a[i * k + p] * b[p * n + j];
  return c;
}

/// Trilinear interpolation written as a sum of tent functions over every stack sample.
inline std::vector<double> brute_force_sample(const std::vector<double>& stack, std::size_t r, std::size_t c,
                                              std::size_t h, std::size_t w, const std::vector<double>& flow) {
  auto to_index = [](double coord, std::size_t extent) {
    coord = std::clamp(coord, -1.0, 1.0);
    return extent == 1 ? 0.0 : (coord + 1.0) * 0.5 * static_cast<double>(extent - 1);
  };
  auto tent = [](double d) { return std::max(0.0, 1.0 - std::abs(d)); };
  std::vector<double> out(c * h * w, 0.0);
  for (std::size_t y = 0; y < h; ++y) {
    for (std::size_t x = 0; x < w; ++x) {
      const std::size_t px = y * w + x;
      const double ti = r == 1 ? 0.0 : to_index(flow[px], r);
      const double yi = to_index(flow[h * w + px], h);
      const double xi = to_index(flow[2 * h * w + px], w);
      for (std::size_t ch = 0; ch < c; ++ch) {
        double acc = 0.0;
        for (std::size_t t = 0; t < r; ++t)
          for (std::size_t sy = 0; sy < h; ++sy)
            for (std::size_t sx = 0; sx < w; ++sx) {
              const double wt = tent(ti - t) * tent(yi - sy) * tent(xi - sx);
              if (wt != 0.0) acc += wt * stack[((t * c + ch) * h + sy) * w + sx];
            }
        out[ch * h * w + px] = acc;
      }
    }
  }
  return out;
}

/// Multi-head cross-attention over all tokens at once. q, k, v are [n, c] row-major.
inline std::vector<double> dense_attention(const std::vector<double>& q, const std::vector<double>& k,
                                           const std::vector<double>& v, std::size_t n, std::size_t c,
                                           std::size_t heads) {
  const std::size_t d = c / heads;
  std::vector<double> out(n * c, 0.0);
  for (std::size_t hd = 0; hd < heads; ++hd) {
    for (std::size_t i = 0; i < n; ++i) {
      std::vector<double> s(n);
      double mx = -1e300;
      for (std::size_t j = 0; j < n; ++j) {
        double dot = 0.0;
        for (std::size_t e = 0; e < d; ++e) dot += q[i * c + hd * d + e] * k[j * c + hd * d + e];
        s[j] = dot / std::sqrt(static_cast<double>(d));
        mx = std::max(mx, s[j]);
      }
      double z = 0.0;
      for (auto& x : s) z += (x = std::exp(x - mx));
      for (std::size_t j = 0; j < n; ++j)
        for (std::size_t e = 0; e < d; ++e) out[i * c + hd * d + e] += s[j] / z * v[j * c + hd * d + e];
    }
  }
  return out;
}

/// SSIM evaluated window by window with a 2-D Gaussian built directly from its formula.
inline double direct_ssim(const Frame& a, const Frame& b, double range) {
  const double c1 = std::pow(0.01 * range, 2), c2 = std::pow(0.03 * range, 2);
  double g[11][11], norm = 0.0;
  for (int i = 0; i < 11; ++i)
    for (int j = 0; j < 11; ++j) norm += g[i][j] = std::exp(-((i - 5) * (i - 5) + (j - 5) * (j - 5)) / 4.5);
  double total = 0.0;
  for (int ch = 0; ch < 3; ++ch) {
    double acc = 0.0;
    std::size_t count = 0;
    for (std::size_t y0 = 0; y0 + 11 <= a.height; ++y0) {
      for (std::size_t x0 = 0; x0 + 11 <= a.width; ++x0) {
        double mx = 0, my = 0;
        for (int i = 0; i < 11; ++i)
          for (int j = 0; j < 11; ++j) {
            mx += g[i][j] / norm * a.at(y0 + i, x0 + j, ch);
            my += g[i][j] / norm * b.at(y0 + i, x0 + j, ch);
          }
        double vx = 0, vy = 0, cov = 0;
        for (int i = 0; i < 11; ++i)
          for (int j = 0; j < 11; ++j) {
            const double dx = a.at(y0 + i, x0 + j, ch) - mx, dy = b.at(y0 + i, x0 + j, ch) - my;
            vx += g[i][j] / norm * dx * dx;
            vy += g[i][j] / norm * dy * dy;
            cov += g[i][j] / norm * dx * dy;
          }
        acc += (2 * mx * my + c1) * (2 * cov + c2) / ((mx * mx + my * my + c1) * (vx + vy + c2));
        ++count;
      }
    }
    total += acc / static_cast<double>(count);
  }
  return total / 3.0;
}

// ---------------------------------------------------------------------------
// Files

/// Fresh empty directory under the system temp dir.
inline std::filesystem::path temp_dir(const std::string& name) {
  auto dir = std::filesystem::temp_directory_path() / ("mapnet_test_" + name);
  std::filesystem::remove_all(dir);
  std::filesystem::create_directories(dir);
  return dir;
}

inline Frame random_frame(Rng& rng, std::size_t h, std::size_t w, double lo = 0.0, double hi = 1.0) {
  Frame f(h, w);
  for (auto& v : f.rgb) v = rng.uniform(lo, hi);
  return f;
}

}  // namespace testing
