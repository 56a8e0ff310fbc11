#pragma once

#include <cstddef>
#include <vector>

#include "mapnet/layers.hpp"
#include "mapnet/tensor.hpp"

namespace mapnet {

// Multi-range recovery: range sets of past features, space-time deformable attention
// (STDA) per range, and prior-guided aggregation across ranges (GMRA).
//
// A space-time flow is a [3, H, W] tensor whose channels are (time, y, x) sampling
// coordinates in [-1, 1]. Coordinates are corner-aligned: -1 addresses index 0 and +1
// addresses index extent-1 on every axis. Time slot 0 is the most recent frame.

/// Normalized corner-aligned coordinate of pixel `i` on an axis of `extent` pixels.
double normalized_coord(std::size_t i, std::size_t extent);

/// Flow that samples every pixel at its own location in time slot `time`.
Tensor identity_flow(std::size_t height, std::size_t width, double time = -1.0);

/// Trilinear sampling of stack [r, C, H, W] at flow [3, H, W]; returns [C, H, W].
/// Coordinates outside [-1, 1] are clamped. For r = 1 the time channel is ignored.
Tensor space_time_sample(const Tensor& stack, const Tensor& flow);

struct RangeSet {
  std::size_t range = 0;
  std::vector<Tensor> frames;  ///< most recent first

  /// [range, C, H, W]
  Tensor stacked() const { return stack(frames); }
};

/// Set r holds history[0 .. r-1]; short histories repeat their oldest frame. An empty
/// history is replaced by the target itself.
std::vector<RangeSet> build_range_sets(const std::vector<Tensor>& history, std::size_t ranges,
                                       const Tensor& target);

struct OffsetNet {
  Conv2d hidden;  ///< (2C + 3) -> C
  Conv2d out;     ///< C -> 3, zero-initialized
};

/// clamp(offset_net([j_target, aligned, flow_init]) + flow_init, -1, 1)
Tensor refine_flow(const Tensor& j_target, const Tensor& aligned, const Tensor& flow_init, const OffsetNet& net);

struct StdaParams {
  OffsetNet offset;
  Tensor query_proj;     ///< U_q, [C, C]
  Tensor key_value_proj; ///< U_kv, [C, 2C]
  Conv2d ffn_in;         ///< 1x1, C -> 2C
  Conv2d ffn_out;        ///< 1x1, 2C -> C
  std::size_t window = 4;
  std::size_t heads = 2;
};

/// Window used on an H x W map: min(window, H, W), which must tile both extents.
std::size_t effective_window(std::size_t height, std::size_t width, std::size_t window);

/// Multi-head cross-attention computed independently inside each non-overlapping
/// window. q, k, v are [H*W, C] in row-major pixel order.
Tensor window_cross_attention(const Tensor& q, const Tensor& k, const Tensor& v, std::size_t height,
                              std::size_t width, std::size_t window, std::size_t heads);

struct StdaOutput {
  Tensor feature;    ///< J_r, [C, H, W]
  Tensor flow;       ///< refined flow, [3, H, W]
  Tensor attention;  ///< windowed attention output before the FFN, [C, H, W]
  Tensor aligned;    ///< stack sampled at the refined flow, [C, H, W]
};

StdaOutput stda(const Tensor& j_target, const RangeSet& set, const Tensor& flow_init, const StdaParams& params);

struct GmraOutput {
  Tensor feature;  ///< [C, H, W]
  Tensor weights;  ///< [R, H, W]
};

/// Per-pixel softmax over ranges of <j_target, J_r>/sqrt(C) + <p_target, P_r>/sqrt(C),
/// then the weighted sum of range features. Pass empty `aligned_priors` to drop the
/// prior term.
GmraOutput gmra(const std::vector<Tensor>& range_feats, const std::vector<Tensor>& aligned_priors,
                const Tensor& j_target, const Tensor& p_target);

}  // namespace mapnet
