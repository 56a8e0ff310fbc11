#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <vector>

#include "mapnet/haze.hpp"

namespace mapnet {

/// Small procedurally generated clip: smooth colour bands drifting sideways over a depth
/// ramp that runs from far at the top row to near at the bottom row.
struct ToyScene {
  Video clear;
  std::vector<DepthMap> depths;
};

ToyScene make_toy_scene(std::size_t height, std::size_t width, std::size_t frames, std::uint64_t seed,
                        double near_m = 15.0, double far_m = 90.0);

/// Writes <clear_dir>/frame_NNN.png and <depth_dir>/frame_NNN.pfm.
void write_toy_scene(const ToyScene& scene, const std::filesystem::path& clear_dir,
                     const std::filesystem::path& depth_dir);

}  // namespace mapnet
