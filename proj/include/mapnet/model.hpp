#pragma once

#include <cstddef>
#include <cstdint>
#include <deque>
#include <map>
#include <string>
#include <vector>

#include "mapnet/haze.hpp"
#include "mapnet/image_io.hpp"
#include "mapnet/prior_guidance.hpp"
#include "mapnet/tensor.hpp"

namespace mapnet {

/// Architecture and training hyperparameters.
struct NetworkConfig {
  std::size_t scales = 4;
  std::vector<std::size_t> channels{8, 16, 32, 64};  ///< per encoder level, finest first
  std::size_t ranges = 3;
  std::size_t dbins = 32;
  std::size_t memory = 4;
  std::size_t window = 4;
  std::size_t heads = 2;

  bool use_mpg = true;      ///< memory read, token compression and scene guidance
  bool use_msr = true;      ///< range alignment and aggregation
  bool gmra_prior = true;   ///< prior affinity term in the range weights

  double lambda_phy = 0.2;
  double lambda_flow = 0.04;
  double lr = 2e-4;
  double weight_decay = 0.01;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double adam_eps = 1e-8;
  double poly_power = 0.9;
  std::size_t schedule_steps = 40000;  ///< K in lr(k) = lr0 (1 - k/K)^power
  std::size_t clip_length = 4;

  std::uint64_t seed = 0;

  void validate() const;
  KeyValues to_key_values() const;
  /// Applies recognised keys on top of `base`; unknown keys are rejected.
  static NetworkConfig from_key_values(const KeyValues& kv, NetworkConfig base);
  static NetworkConfig from_key_values(const KeyValues& kv);
};

/// Learnable weights keyed "<module>.<level>.<name>".
using Parameters = std::map<std::string, Tensor>;

Parameters init_parameters(const NetworkConfig& cfg);
std::size_t parameter_count(const Parameters& params);

/// Recurrent per-video state, one entry per encoder level.
struct LevelState {
  std::deque<Tensor> scene_history;  ///< most recent first, at most R entries
  std::deque<Tensor> prior_history;
  TokenMemory memory;
};

struct FrameState {
  std::size_t height = 0;  ///< geometry of the frames this state belongs to; 0 before the first frame
  std::size_t width = 0;
  std::vector<LevelState> levels;

  static FrameState fresh(const NetworkConfig& cfg);
};

/// Per-scale intermediates. Scale s = 0 is the coarsest, s = S-1 full resolution.
struct ScaleOutputs {
  Tensor transmission;  ///< t_hat, [1, H, W]
  Tensor airlight;      ///< A_hat, scalar
  Tensor scene;         ///< J_hat, [3, H, W]
  Tensor hazy;          ///< I_hat = J_hat t_hat + A_hat (1 - t_hat)
  std::vector<Tensor> flows;  ///< refined flow per range; empty with MSR off
  Tensor range_weights;       ///< [R, H, W]; undefined with MSR off
  Tensor distribution;        ///< [D, H, W]; undefined with MPG off
  Tensor token;               ///< [D, C]; undefined with MPG off
};

struct DecodeResult {
  Tensor dehazed;  ///< [3, H, W]
  std::vector<ScaleOutputs> scales;
  FrameState state;
};

/// Per-level encoder features; level k has stride 2^k.
std::vector<Tensor> encode(const Tensor& frame, const Parameters& params, const NetworkConfig& cfg);

DecodeResult decode_step(const Tensor& frame, const std::vector<Tensor>& features, const FrameState& state,
                         const Parameters& params, const NetworkConfig& cfg);

/// encode + decode_step.
DecodeResult forward_frame(const Tensor& frame, const FrameState& state, const Parameters& params,
                           const NetworkConfig& cfg);

struct VideoResult {
  Video dehazed;
  std::vector<std::vector<ScaleOutputs>> intermediates;  ///< per frame, per scale
};

/// Runs the recurrent pipeline over a clip from a fresh state, without recording gradients.
VideoResult run_video(const Video& video, const Parameters& params, const NetworkConfig& cfg);

/// I_hat = J_hat t_hat + A_hat (1 - t_hat), with t_hat broadcast over RGB.
Tensor reconstruct_hazy(const Tensor& scene, const Tensor& transmission, const Tensor& airlight);

/// Average-pool pyramid indexed by scale (s = S-1 is the input itself).
std::vector<Tensor> image_pyramid(const Tensor& image, std::size_t scales);

}  // namespace mapnet
