// Writes a procedurally generated clear clip and its depth maps, ready for `mapnet synthesize`.
#include <iostream>

#include "CLI11.hpp"
#include "mapnet/toy_scene.hpp"

int main(int argc, char** argv) {
  CLI::App app{"Generate a toy clear-frame clip with depth maps", "mapnet_toy"};
  std::string out;
  std::size_t frames = 8, size = 32;
  std::uint64_t seed = 0;
  app.add_option("--out", out, "Output directory (gets clear/ and depth/)")->required();
  app.add_option("--frames", frames, "Number of frames");
  app.add_option("--size", size, "Frame height and width");
  app.add_option("--seed", seed, "Scene seed");
  CLI11_PARSE(app, argc, argv);
  try {
    const auto scene = mapnet::make_toy_scene(size, size, frames, seed);
    mapnet::write_toy_scene(scene, std::filesystem::path(out) / "clear", std::filesystem::path(out) / "depth");
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }
  std::cout << "wrote " << frames << " frames to " << out << "\n";
  return 0;
}
