#include "mapnet/toy_scene.hpp"

#include <cmath>
#include <cstdio>
#include <numbers>

#include "mapnet/image_io.hpp"
#include "mapnet/rng.hpp"

namespace mapnet {

ToyScene make_toy_scene(std::size_t height, std::size_t width, std::size_t frames, std::uint64_t seed,
                        double near_m, double far_m) {
  if (height < 2 || width < 2 || frames == 0) throw ParameterError("toy scene needs at least 2x2 pixels and one frame");
  if (!(near_m > 0.0) || !(far_m >= near_m)) throw ParameterError("toy scene depth range must satisfy 0 < near <= far");
  Rng rng(seed);
  constexpr double two_pi = 2.0 * std::numbers::pi;
  double fx[3], fy[3], phase[3];
  for (int c = 0; c < 3; ++c) {
    fx[c] = rng.uniform(0.5, 1.5);
    fy[c] = rng.uniform(0.5, 1.5);
    phase[c] = rng.uniform(0.0, two_pi);
  }
  const double drift = rng.uniform(0.5, 1.5);  // pixels per frame

  ToyScene scene;
  for (std::size_t f = 0; f < frames; ++f) {
    Frame frame(height, width);
    DepthMap depth{height, width, std::vector<double>(height * width)};
    for (std::size_t y = 0; y < height; ++y) {
      const double v = static_cast<double>(y) / static_cast<double>(height - 1);
      for (std::size_t x = 0; x < width; ++x) {
        const double u = (static_cast<double>(x) + drift * static_cast<double>(f)) / static_cast<double>(width);
        for (int c = 0; c < 3; ++c) {
          frame.at(y, x, c) = 0.45 + 0.3 * std::sin(two_pi * (fx[c] * u + fy[c] * v) + phase[c]);
        }
        depth.meters[y * width + x] = far_m + (near_m - far_m) * v;
      }
    }
    scene.clear.push_back(std::move(frame));
    scene.depths.push_back(std::move(depth));
  }
  return scene;
}

void write_toy_scene(const ToyScene& scene, const std::filesystem::path& clear_dir,
                     const std::filesystem::path& depth_dir) {
  std::filesystem::create_directories(clear_dir);
  std::filesystem::create_directories(depth_dir);
  for (std::size_t i = 0; i < scene.clear.size(); ++i) {
    char stem[32];
    std::snprintf(stem, sizeof(stem), "frame_%03zu", i);
    write_png(clear_dir / (std::string(stem) + ".png"), scene.clear[i]);
    write_depth(depth_dir / (std::string(stem) + ".pfm"), scene.depths[i]);
  }
}

}  // namespace mapnet
