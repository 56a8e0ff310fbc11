#include "mapnet/metrics.hpp"

#include <cmath>
#include <cstdio>

namespace mapnet {

namespace {

void require_same_geometry(const char* what, const Frame& a, const Frame& b) {
  if (a.height != b.height || a.width != b.width || a.rgb.size() != b.rgb.size()) {
    throw DimensionError(std::string(what) + ": frames are " + std::to_string(a.height) + "x" +
                         std::to_string(a.width) + " and " + std::to_string(b.height) + "x" + std::to_string(b.width));
  }
}

void require_range(double data_range) {
  if (!(data_range > 0.0)) throw ParameterError("data_range must be positive");
}

constexpr std::size_t kWin = 11;

// Separable valid-mode Gaussian filter of one channel. Output is (h-10) x (w-10).
std::vector<double> filter_valid(const std::vector<double>& img, std::size_t h, std::size_t w,
                                 const std::vector<double>& g) {
  const std::size_t oh = h - kWin + 1, ow = w - kWin + 1;
  std::vector<double> rows(h * ow, 0.0);
  for (std::size_t y = 0; y < h; ++y) {
    for (std::size_t x = 0; x < ow; ++x) {
      double s = 0.0;
      for (std::size_t i = 0; i < kWin; ++i) s += g[i] * img[y * w + x + i];
      rows[y * ow + x] = s;
    }
  }
  std::vector<double> out(oh * ow, 0.0);
  for (std::size_t y = 0; y < oh; ++y) {
    for (std::size_t x = 0; x < ow; ++x) {
      double s = 0.0;
      for (std::size_t i = 0; i < kWin; ++i) s += g[i] * rows[(y + i) * ow + x];
      out[y * ow + x] = s;
    }
  }
  return out;
}

}  // namespace

double psnr(const Frame& a, const Frame& b, double data_range) {
  require_same_geometry("psnr", a, b);
  require_range(data_range);
  if (a.rgb.empty()) throw DimensionError("psnr: empty frames");
  double sse = 0.0;
  for (std::size_t i = 0; i < a.rgb.size(); ++i) {
    const double d = a.rgb[i] - b.rgb[i];
    sse += d * d;
  }
  if (sse == 0.0) return kPsnrInfinity;
  const double mse = sse / static_cast<double>(a.rgb.size());
  return 10.0 * std::log10(data_range * data_range / mse);
}

std::vector<double> ssim_window_1d() {
  std::vector<double> g(kWin);
  double sum = 0.0;
  for (std::size_t i = 0; i < kWin; ++i) {
    const double x = static_cast<double>(i) - 5.0;
    g[i] = std::exp(-x * x / (2.0 * 1.5 * 1.5));
    sum += g[i];
  }
  for (auto& v : g) v /= sum;
  return g;
}

double ssim(const Frame& a, const Frame& b, double data_range) {
  require_same_geometry("ssim", a, b);
  require_range(data_range);
  if (a.height < kWin || a.width < kWin) {
    throw DimensionError("ssim: frames must be at least 11x11, got " + std::to_string(a.height) + "x" +
                         std::to_string(a.width));
  }
  const double c1 = (0.01 * data_range) * (0.01 * data_range);
  const double c2 = (0.03 * data_range) * (0.03 * data_range);
  const auto g = ssim_window_1d();
  const std::size_t h = a.height, w = a.width, n = h * w;

  double total = 0.0;
  for (std::size_t c = 0; c < 3; ++c) {
    std::vector<double> x(n), y(n), xx(n), yy(n), xy(n);
    for (std::size_t i = 0; i < n; ++i) {
      x[i] = a.rgb[i * 3 + c];
      y[i] = b.rgb[i * 3 + c];
      xx[i] = x[i] * x[i];
      yy[i] = y[i] * y[i];
      xy[i] = x[i] * y[i];
    }
    const auto mx = filter_valid(x, h, w, g), my = filter_valid(y, h, w, g);
    const auto sxx = filter_valid(xx, h, w, g), syy = filter_valid(yy, h, w, g), sxy = filter_valid(xy, h, w, g);
    double acc = 0.0;
    for (std::size_t i = 0; i < mx.size(); ++i) {
      const double vx = sxx[i] - mx[i] * mx[i];
      const double vy = syy[i] - my[i] * my[i];
      const double cov = sxy[i] - mx[i] * my[i];
      // Symmetric arrangement: for x == y numerator and denominator are the same expression.
      const double num = (2.0 * mx[i] * my[i] + c1) * (2.0 * cov + c2);
      const double den = (mx[i] * mx[i] + my[i] * my[i] + c1) * (vx + vy + c2);
      acc += num / den;
    }
    total += acc / static_cast<double>(mx.size());
  }
  return total / 3.0;
}

EvalReport evaluate_video(const Video& pred, const Video& gt, double data_range) {
  if (pred.size() != gt.size()) {
    throw DimensionError("evaluate_video: " + std::to_string(pred.size()) + " predicted frames vs " +
                         std::to_string(gt.size()) + " reference frames");
  }
  if (pred.empty()) throw DimensionError("evaluate_video: no frames");
  EvalReport report;
  double sum_psnr = 0.0, sum_ssim = 0.0;
  for (std::size_t i = 0; i < pred.size(); ++i) {
    FrameMetrics m{psnr(pred[i], gt[i], data_range), ssim(pred[i], gt[i], data_range)};
    sum_psnr += m.psnr_db;
    sum_ssim += m.ssim;
    report.frames.push_back(m);
  }
  report.mean_psnr = sum_psnr / static_cast<double>(pred.size());
  report.mean_ssim = sum_ssim / static_cast<double>(pred.size());
  return report;
}

namespace {
std::string fmt(double v) {
  if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}
}  // namespace

std::string EvalReport::to_csv() const {
  std::string out = "frame_index,psnr_db,ssim\n";
  for (std::size_t i = 0; i < frames.size(); ++i) {
    out += std::to_string(i) + "," + fmt(frames[i].psnr_db) + "," + fmt(frames[i].ssim) + "\n";
  }
  out += "AGGREGATE," + fmt(mean_psnr) + "," + fmt(mean_ssim) + "\n";
  return out;
}

}  // namespace mapnet
