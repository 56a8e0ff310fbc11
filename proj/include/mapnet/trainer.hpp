#pragma once

#include <cstddef>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

#include "mapnet/haze.hpp"
#include "mapnet/losses.hpp"
#include "mapnet/model.hpp"

namespace mapnet {

/// Raised when a training step produces a non-finite loss.
class TrainingError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Adaptive-moment state with decoupled weight decay. `step` counts completed updates.
struct AdamWState {
  std::uint64_t step = 0;
  Parameters m;
  Parameters v;
};

AdamWState init_optimizer(const Parameters& params);

/// lr0 * (1 - k/K)^power, zero once k reaches K.
double learning_rate(const NetworkConfig& cfg, std::uint64_t step);

/// Frame-aligned hazy and ground-truth clips. Transmissions are carried along for
/// completeness but not supervised.
struct TrainingClip {
  Video hazy;
  Video gt;
  std::vector<TransmissionMap> transmissions;

  std::size_t size() const { return hazy.size(); }
  void validate() const;
  /// Frames [start, start + length).
  TrainingClip window(std::size_t start, std::size_t length) const;
};

/// Start frame of the training window used at `step`: windows slide over the clip in order.
std::size_t window_start(std::size_t clip_frames, std::size_t window, std::uint64_t step);

/// Forward pass over a clip from a fresh state with gradients recorded. Losses are
/// averaged over frames.
struct ClipLoss {
  Tensor total;
  LossReport report;
};
ClipLoss clip_loss(const TrainingClip& clip, const Parameters& params, const NetworkConfig& cfg);

/// Loss values only, without recording gradients.
LossReport evaluate_loss(const TrainingClip& clip, const Parameters& params, const NetworkConfig& cfg);

struct StepResult {
  LossReport loss;
  Parameters params;
  AdamWState optimizer;
};

/// One forward/backward/update on `batch`. Inputs are left untouched.
StepResult train_step(const TrainingClip& batch, const Parameters& params, const AdamWState& optimizer,
                      const NetworkConfig& cfg);

// Checkpoint layout (all integers little-endian):
//   "MAPNETCK"            8 bytes
//   version               u32 (= 1)
//   config entries        u32 count, then per entry: u32 len + key bytes, u32 len + value bytes
//   parameters            u32 count, then per tensor: u32 len + key, u32 ndim, u64 dims..., f64 values...
//   optimizer step        u64
//   first moments         same encoding as parameters
//   second moments        same encoding as parameters
struct Checkpoint {
  NetworkConfig config;
  Parameters params;
  AdamWState optimizer;
};

inline constexpr std::uint32_t kCheckpointVersion = 1;

std::string encode_checkpoint(const Checkpoint& ckpt);
Checkpoint decode_checkpoint(const std::string& bytes);
void save_checkpoint(const std::string& path, const Checkpoint& ckpt);
Checkpoint load_checkpoint(const std::string& path);

}  // namespace mapnet
