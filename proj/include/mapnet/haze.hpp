#pragma once

#include <cstddef>
#include <cstdint>
#include <stdexcept>
#include <vector>

#include "mapnet/tensor.hpp"

namespace mapnet {

/// Raised for out-of-domain scalar parameters (negative beta, nonpositive floors, ...).
class ParameterError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// RGB image with channel values in [0, 1], stored row-major with interleaved channels.
struct Frame {
  std::size_t height = 0;
  std::size_t width = 0;
  std::vector<double> rgb;

  Frame() = default;
  Frame(std::size_t h, std::size_t w, double fill = 0.0) : height(h), width(w), rgb(h * w * 3, fill) {}

  double& at(std::size_t y, std::size_t x, std::size_t c) { return rgb[(y * width + x) * 3 + c]; }
  double at(std::size_t y, std::size_t x, std::size_t c) const { return rgb[(y * width + x) * 3 + c]; }
};

using Video = std::vector<Frame>;

/// Single-channel scene depth in meters.
struct DepthMap {
  std::size_t height = 0;
  std::size_t width = 0;
  std::vector<double> meters;
};

/// Per-pixel transmission, 0 < t <= 1.
struct TransmissionMap {
  std::size_t height = 0;
  std::size_t width = 0;
  std::vector<double> t;
};

struct HazeParams {
  double beta = 0.0;      ///< scattering coefficient, 1/m
  double airlight = 1.0;  ///< atmospheric light A, scalar in [0, 1]
};

struct SynthesisConfig {
  std::vector<double> beta_choices{0.005, 0.01, 0.02, 0.03};
  double airlight_min = 0.75;
  double airlight_max = 1.0;
  std::uint64_t seed = 0;

  void validate() const;
};

/// t(x) = exp(-beta * d(x))
TransmissionMap transmission_from_depth(const DepthMap& depth, double beta);

/// I = J t + A (1 - t), per pixel and channel.
Frame compose_haze(const Frame& scene, const TransmissionMap& t, double airlight);

/// Inverse of compose_haze with t clamped from below by `t_floor`; result clamped to [0, 1].
Frame recover_scene(const Frame& hazy, const TransmissionMap& t, double airlight, double t_floor = 0.05);

/// Replaces non-finite or negative depth samples by the largest valid depth of the map.
/// Throws ParameterError if the map holds no valid sample.
DepthMap fill_invalid_depth(DepthMap depth);

/// Draws one (beta, A) pair: beta uniformly from the choices, then A uniformly from the range.
HazeParams sample_haze_params(const SynthesisConfig& cfg);

struct SynthesizedVideo {
  Video hazy;
  std::vector<TransmissionMap> transmissions;
  HazeParams params;
};

/// Applies one sampled (beta, A) pair to every frame of a clip.
SynthesizedVideo synthesize_video(const Video& clear, const std::vector<DepthMap>& depths,
                                  const SynthesisConfig& cfg);

/// [3, H, W] tensor view of a frame, and back.
Tensor frame_to_tensor(const Frame& frame);
Frame tensor_to_frame(const Tensor& chw);
Tensor transmission_to_tensor(const TransmissionMap& t);

}  // namespace mapnet
