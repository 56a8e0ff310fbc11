#pragma once

#include <cstddef>
#include <limits>
#include <string>
#include <vector>

#include "mapnet/haze.hpp"

namespace mapnet {

/// Returned by psnr for identical inputs.
inline constexpr double kPsnrInfinity = std::numeric_limits<double>::infinity();

/// 10 log10(range^2 / MSE) over all pixels and channels.
double psnr(const Frame& a, const Frame& b, double data_range = 1.0);

/// Single-scale SSIM with an 11x11 Gaussian window (sigma 1.5), K1 = 0.01, K2 = 0.03,
/// evaluated over the valid region of each channel and averaged over channels.
double ssim(const Frame& a, const Frame& b, double data_range = 1.0);

/// Normalized 11-tap Gaussian, sigma 1.5.
std::vector<double> ssim_window_1d();

struct FrameMetrics {
  double psnr_db = 0.0;
  double ssim = 0.0;
};

struct EvalReport {
  std::vector<FrameMetrics> frames;
  double mean_psnr = 0.0;  ///< +inf when any frame is identical to its reference
  double mean_ssim = 0.0;

  /// frame_index,psnr_db,ssim rows followed by an AGGREGATE row. Infinity is written as "inf".
  std::string to_csv() const;
};

EvalReport evaluate_video(const Video& pred, const Video& gt, double data_range = 1.0);

}  // namespace mapnet
