#include "mapnet/haze.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "mapnet/rng.hpp"

namespace mapnet {

namespace {

void require_geometry(const char* op, std::size_t h0, std::size_t w0, std::size_t h1, std::size_t w1) {
  if (h0 != h1 || w0 != w1) {
    throw DimensionError(std::string(op) + ": geometry mismatch " + std::to_string(h0) + "x" + std::to_string(w0) +
                         " vs " + std::to_string(h1) + "x" + std::to_string(w1));
  }
}

void require_airlight(double a) {
  if (!(a >= 0.0 && a <= 1.0)) throw ParameterError("atmospheric light must lie in [0, 1], got " + std::to_string(a));
}

}  // namespace

void SynthesisConfig::validate() const {
  if (beta_choices.empty()) throw ParameterError("synthesis: beta_choices must be nonempty");
  for (double b : beta_choices) {
    if (!(b >= 0.0) || !std::isfinite(b)) throw ParameterError("synthesis: beta must be finite and >= 0");
  }
  if (!(airlight_min >= 0.0 && airlight_min <= airlight_max && airlight_max <= 1.0)) {
    throw ParameterError("synthesis: airlight range must be a subinterval of [0, 1]");
  }
}

TransmissionMap transmission_from_depth(const DepthMap& depth, double beta) {
  if (!(beta >= 0.0)) throw ParameterError("transmission_from_depth: beta must be >= 0, got " + std::to_string(beta));
  if (depth.meters.size() != depth.height * depth.width) throw DimensionError("transmission_from_depth: bad depth map");
  TransmissionMap t{depth.height, depth.width, std::vector<double>(depth.meters.size())};
  for (std::size_t i = 0; i < t.t.size(); ++i) t.t[i] = std::exp(-beta * depth.meters[i]);
  return t;
}

Frame compose_haze(const Frame& scene, const TransmissionMap& t, double airlight) {
  require_geometry("compose_haze", scene.height, scene.width, t.height, t.width);
  require_airlight(airlight);
  Frame out(scene.height, scene.width);
  for (std::size_t p = 0; p < t.t.size(); ++p) {
    const double tp = t.t[p];
    for (std::size_t c = 0; c < 3; ++c) {
      const double v = scene.rgb[p * 3 + c] * tp + airlight * (1.0 - tp);
      out.rgb[p * 3 + c] = std::clamp(v, 0.0, 1.0);
    }
  }
  return out;
}

Frame recover_scene(const Frame& hazy, const TransmissionMap& t, double airlight, double t_floor) {
  if (!(t_floor > 0.0)) throw ParameterError("recover_scene: t_floor must be > 0, got " + std::to_string(t_floor));
  require_geometry("recover_scene", hazy.height, hazy.width, t.height, t.width);
  Frame out(hazy.height, hazy.width);
  for (std::size_t p = 0; p < t.t.size(); ++p) {
    const double tp = std::max(t.t[p], t_floor);
    for (std::size_t c = 0; c < 3; ++c) {
      const double v = (hazy.rgb[p * 3 + c] - airlight * (1.0 - tp)) / tp;
      out.rgb[p * 3 + c] = std::clamp(v, 0.0, 1.0);
    }
  }
  return out;
}

DepthMap fill_invalid_depth(DepthMap depth) {
  double far = -1.0;
  for (double d : depth.meters) {
    if (std::isfinite(d) && d >= 0.0) far = std::max(far, d);
  }
  if (far < 0.0) throw ParameterError("depth map has no valid samples");
  for (double& d : depth.meters) {
    if (!std::isfinite(d) || d < 0.0) d = far;
  }
  return depth;
}

HazeParams sample_haze_params(const SynthesisConfig& cfg) {
  cfg.validate();
  Rng rng(cfg.seed);
  HazeParams p;
  p.beta = cfg.beta_choices[rng.index(cfg.beta_choices.size())];
  p.airlight = rng.uniform(cfg.airlight_min, cfg.airlight_max);
  return p;
}

SynthesizedVideo synthesize_video(const Video& clear, const std::vector<DepthMap>& depths,
                                  const SynthesisConfig& cfg) {
  if (clear.size() != depths.size()) {
    throw DimensionError("synthesize_video: " + std::to_string(clear.size()) + " frames but " +
                         std::to_string(depths.size()) + " depth maps");
  }
  for (std::size_t i = 0; i < clear.size(); ++i) {
    require_geometry("synthesize_video", clear[i].height, clear[i].width, depths[i].height, depths[i].width);
  }
  SynthesizedVideo out;
  out.params = sample_haze_params(cfg);
  for (std::size_t i = 0; i < clear.size(); ++i) {
    out.transmissions.push_back(transmission_from_depth(fill_invalid_depth(depths[i]), out.params.beta));
    out.hazy.push_back(compose_haze(clear[i], out.transmissions.back(), out.params.airlight));
  }
  return out;
}

Tensor frame_to_tensor(const Frame& frame) {
  const std::size_t hw = frame.height * frame.width;
  std::vector<double> chw(3 * hw);
  for (std::size_t p = 0; p < hw; ++p)
    for (std::size_t c = 0; c < 3; ++c) chw[c * hw + p] = frame.rgb[p * 3 + c];
  return Tensor::from({3, frame.height, frame.width}, std::move(chw));
}

Frame tensor_to_frame(const Tensor& chw) {
  if (chw.rank() != 3 || chw.dim(0) != 3) throw DimensionError("tensor_to_frame: expected [3,H,W], got " + shape_str(chw.shape()));
  Frame f(chw.dim(1), chw.dim(2));
  const std::size_t hw = f.height * f.width;
  auto v = chw.data();
  for (std::size_t p = 0; p < hw; ++p)
    for (std::size_t c = 0; c < 3; ++c) f.rgb[p * 3 + c] = v[c * hw + p];
  return f;
}

Tensor transmission_to_tensor(const TransmissionMap& t) { return Tensor::from({1, t.height, t.width}, t.t); }

}  // namespace mapnet
