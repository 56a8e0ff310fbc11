#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>

#include "mapnet/image_io.hpp"
#include "test_support.hpp"

using namespace mapnet;
namespace fs = std::filesystem;

TEST_CASE("quantize_u8 rounds half to even") {
  CHECK(quantize_u8(0.0) == 0);
  CHECK(quantize_u8(1.0) == 255);
  CHECK(quantize_u8(-0.2) == 0);
  CHECK(quantize_u8(1.7) == 255);
  CHECK(quantize_u8(0.5 / 255.0) == 0);   // 0.5 -> 0
  CHECK(quantize_u8(1.5 / 255.0) == 2);   // 1.5 -> 2
  CHECK(quantize_u8(2.5 / 255.0) == 2);   // 2.5 -> 2
}

TEST_CASE("png round trip of 8-bit values is exact") {
  const fs::path dir = testing::temp_dir("png");
  Frame f(5, 7);
  for (std::size_t i = 0; i < f.rgb.size(); ++i) f.rgb[i] = static_cast<double>((i * 37) % 256) / 255.0;
  write_png(dir / "a.png", f);
  const Frame g = read_png(dir / "a.png");
  CHECK(g.height == 5);
  CHECK(g.width == 7);
  CHECK(g.rgb == f.rgb);
  CHECK_THROWS_AS(read_png(dir / "missing.png"), DataError);
  write_file_atomic(dir / "junk.png", "not a png");
  CHECK_THROWS_AS(read_png(dir / "junk.png"), DataError);
}

TEST_CASE("png writing is deterministic") {
  const fs::path dir = testing::temp_dir("png_det");
  Rng rng(1);
  const Frame f = testing::random_frame(rng, 9, 9);
  write_png(dir / "a.png", f);
  write_png(dir / "b.png", f);
  CHECK(read_file(dir / "a.png") == read_file(dir / "b.png"));
}

TEST_CASE("pfm round trip at float precision") {
  const fs::path dir = testing::temp_dir("pfm");
  Rng rng(2);
  FloatImage img{3, 4, 3, {}};
  for (int i = 0; i < 36; ++i) img.values.push_back(rng.uniform(-5.0, 5.0));
  write_pfm(dir / "a.pfm", img);
  const FloatImage back = read_pfm(dir / "a.pfm");
  CHECK(back.channels == 3);
  CHECK(back.height == 3);
  for (std::size_t i = 0; i < img.values.size(); ++i) {
    CHECK(back.values[i] == static_cast<double>(static_cast<float>(img.values[i])));
  }
  DepthMap d{2, 3, {1, 2, 3, 4, 5, 6}};
  write_depth(dir / "d.pfm", d);
  CHECK(read_depth(dir / "d.pfm").meters == d.meters);
  write_file_atomic(dir / "bad.pfm", "P5\n1 1\n255\n\x01");
  CHECK_THROWS_AS(read_pfm(dir / "bad.pfm"), DataError);
}

TEST_CASE("npy round trip is lossless") {
  const fs::path dir = testing::temp_dir("npy");
  Rng rng(3);
  const Tensor t = testing::random_tensor(rng, {2, 3, 4});
  write_npy(dir / "a.npy", t.shape(), t.data());
  const auto [shape, values] = read_npy(dir / "a.npy");
  CHECK(shape == t.shape());
  CHECK(values == t.to_vector());
  const std::string bytes = read_file(dir / "a.npy");
  CHECK(bytes.substr(1, 5) == "NUMPY");
  CHECK((bytes.size() - 2 * 3 * 4 * 8) % 64 == 0);  // header padded to a 64-byte boundary

  write_npy(dir / "s.npy", {}, std::vector<double>{0.25});
  const auto [s_shape, s_values] = read_npy(dir / "s.npy");
  CHECK(s_shape.empty());
  CHECK(s_values == std::vector<double>{0.25});
}

TEST_CASE("key-value text") {
  const KeyValues kv = parse_key_values("# comment\n a = 1 \n\nb=two words\n");
  CHECK(kv.at("a") == "1");
  CHECK(kv.at("b") == "two words");
  CHECK(parse_key_values(format_key_values(kv)) == kv);
  CHECK_THROWS_AS(parse_key_values("no equals sign"), DataError);
}

TEST_CASE("atomic writes leave no temporary behind") {
  const fs::path dir = testing::temp_dir("atomic");
  write_file_atomic(dir / "x.txt", "hello");
  write_file_atomic(dir / "x.txt", "world");
  CHECK(read_file(dir / "x.txt") == "world");
  std::size_t entries = 0;
  for ([[maybe_unused]] const auto& e : fs::directory_iterator(dir)) ++entries;
  CHECK(entries == 1);
}

TEST_CASE("list_files filters and sorts") {
  const fs::path dir = testing::temp_dir("list");
  write_file_atomic(dir / "b.png", "");
  write_file_atomic(dir / "a.png", "");
  write_file_atomic(dir / "c.txt", "");
  const auto files = list_files(dir, ".png");
  REQUIRE(files.size() == 2);
  CHECK(files[0].filename() == "a.png");
  CHECK(files[1].filename() == "b.png");
  CHECK_THROWS_AS(list_files(dir / "nope", ".png"), DataError);
}
