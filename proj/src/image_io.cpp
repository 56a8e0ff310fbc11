#include "mapnet/image_io.hpp"

#include <png.h>

#include <algorithm>
#include <bit>
#include <cfenv>
#include <cmath>
#include <cstring>
#include <fstream>
#include <sstream>

namespace mapnet {

namespace fs = std::filesystem;

static_assert(std::endian::native == std::endian::little, "binary formats assume a little-endian host");

void write_file_atomic(const fs::path& path, const std::string& bytes) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  fs::path tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw DataError("cannot open " + tmp.string() + " for writing");
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw DataError("failed writing " + tmp.string());
  }
  fs::rename(tmp, path);
}

std::string read_file(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

// ---------------------------------------------------------------------------
// PNG

std::uint8_t quantize_u8(double value) {
  // nearbyint honours the default round-to-nearest-even mode.
  const double scaled = std::nearbyint(std::clamp(value, 0.0, 1.0) * 255.0);
  return static_cast<std::uint8_t>(scaled);
}

Frame read_png(const fs::path& path) {
  const std::string bytes = read_file(path);
  png_image image;
  std::memset(&image, 0, sizeof(image));
  image.version = PNG_IMAGE_VERSION;
  if (!png_image_begin_read_from_memory(&image, bytes.data(), bytes.size())) {
    throw DataError("not a readable PNG: " + path.string() + " (" + image.message + ")");
  }
  image.format = PNG_FORMAT_RGB;
  std::vector<std::uint8_t> buffer(PNG_IMAGE_SIZE(image));
  if (!png_image_finish_read(&image, nullptr, buffer.data(), 0, nullptr)) {
    std::string msg = image.message;
    png_image_free(&image);
    throw DataError("failed decoding PNG " + path.string() + " (" + msg + ")");
  }
  Frame f(image.height, image.width);
  for (std::size_t i = 0; i < buffer.size(); ++i) f.rgb[i] = buffer[i] / 255.0;
  return f;
}

void write_png(const fs::path& path, const Frame& frame) {
  if (frame.rgb.size() != frame.height * frame.width * 3) throw DimensionError("write_png: malformed frame");
  std::vector<std::uint8_t> pixels(frame.rgb.size());
  for (std::size_t i = 0; i < pixels.size(); ++i) pixels[i] = quantize_u8(frame.rgb[i]);

  png_image image;
  std::memset(&image, 0, sizeof(image));
  image.version = PNG_IMAGE_VERSION;
  image.width = static_cast<png_uint_32>(frame.width);
  image.height = static_cast<png_uint_32>(frame.height);
  image.format = PNG_FORMAT_RGB;
  png_alloc_size_t size = 0;
  if (!png_image_write_to_memory(&image, nullptr, &size, 0, pixels.data(), 0, nullptr)) {
    throw DataError("PNG encode failed for " + path.string() + " (" + image.message + ")");
  }
  std::string out(size, '\0');
  if (!png_image_write_to_memory(&image, out.data(), &size, 0, pixels.data(), 0, nullptr)) {
    throw DataError("PNG encode failed for " + path.string() + " (" + image.message + ")");
  }
  out.resize(size);
  write_file_atomic(path, out);
}

// ---------------------------------------------------------------------------
// PFM

FloatImage read_pfm(const fs::path& path) {
  const std::string bytes = read_file(path);
  std::istringstream header(bytes);
  std::string magic;
  long long w = 0, h = 0;
  double scale = 0.0;
  header >> magic >> w >> h >> scale;
  if (!header || (magic != "PF" && magic != "Pf") || w <= 0 || h <= 0 || scale == 0.0) {
    throw DataError("malformed PFM header in " + path.string());
  }
  header.get();  // single whitespace byte before the raster
  const auto offset = static_cast<std::size_t>(header.tellg());
  FloatImage img;
  img.channels = magic == "PF" ? 3 : 1;
  img.width = static_cast<std::size_t>(w);
  img.height = static_cast<std::size_t>(h);
  const std::size_t count = img.width * img.height * img.channels;
  if (bytes.size() < offset + count * 4) throw DataError("truncated PFM raster in " + path.string());
  const bool little = scale < 0.0;
  img.values.resize(count);
  const std::size_t row = img.width * img.channels;
  for (std::size_t y = 0; y < img.height; ++y) {
    const std::size_t src_row = img.height - 1 - y;
    for (std::size_t i = 0; i < row; ++i) {
      std::uint8_t b[4];
      std::memcpy(b, bytes.data() + offset + (src_row * row + i) * 4, 4);
      if (!little) std::swap(b[0], b[3]), std::swap(b[1], b[2]);
      std::uint32_t u;
      std::memcpy(&u, b, 4);
      img.values[y * row + i] = static_cast<double>(std::bit_cast<float>(u));
    }
  }
  return img;
}

void write_pfm(const fs::path& path, const FloatImage& image) {
  if (image.channels != 1 && image.channels != 3) throw DimensionError("write_pfm: channels must be 1 or 3");
  std::string out = (image.channels == 3 ? "PF\n" : "Pf\n") + std::to_string(image.width) + " " +
                    std::to_string(image.height) + "\n-1.0\n";
  const std::size_t row = image.width * image.channels;
  for (std::size_t y = image.height; y-- > 0;) {
    for (std::size_t i = 0; i < row; ++i) {
      const auto u = std::bit_cast<std::uint32_t>(static_cast<float>(image.values[y * row + i]));
      char b[4];
      std::memcpy(b, &u, 4);
      out.append(b, 4);
    }
  }
  write_file_atomic(path, out);
}

DepthMap read_depth(const fs::path& path) {
  FloatImage img = read_pfm(path);
  if (img.channels != 1) throw DataError("depth map must be single-channel PFM: " + path.string());
  return {img.height, img.width, std::move(img.values)};
}

void write_depth(const fs::path& path, const DepthMap& depth) {
  write_pfm(path, {depth.height, depth.width, 1, depth.meters});
}

TransmissionMap read_transmission(const fs::path& path) {
  FloatImage img = read_pfm(path);
  if (img.channels != 1) throw DataError("transmission map must be single-channel PFM: " + path.string());
  return {img.height, img.width, std::move(img.values)};
}

void write_transmission(const fs::path& path, const TransmissionMap& t) {
  write_pfm(path, {t.height, t.width, 1, t.t});
}

// ---------------------------------------------------------------------------
// NPY

void write_npy(const fs::path& path, const Shape& shape, std::span<const double> values) {
  if (shape_numel(shape) != values.size()) throw DimensionError("write_npy: values do not fill " + shape_str(shape));
  std::string dims;
  for (std::size_t i = 0; i < shape.size(); ++i) {
    dims += std::to_string(shape[i]);
    if (shape.size() == 1 || i + 1 < shape.size()) dims += ",";
    if (i + 1 < shape.size()) dims += " ";
  }
  std::string header = "{'descr': '<f8', 'fortran_order': False, 'shape': (" + dims + "), }";
  const std::size_t unpadded = 10 + header.size() + 1;
  header.append((64 - unpadded % 64) % 64, ' ');
  header += '\n';
  std::string out = "\x93NUMPY";
  out += '\x01';
  out += '\x00';
  const auto hlen = static_cast<std::uint16_t>(header.size());
  out += static_cast<char>(hlen & 0xff);
  out += static_cast<char>(hlen >> 8);
  out += header;
  const std::size_t base = out.size();
  out.resize(base + values.size() * 8);
  std::memcpy(out.data() + base, values.data(), values.size() * 8);
  write_file_atomic(path, out);
}

std::pair<Shape, std::vector<double>> read_npy(const fs::path& path) {
  const std::string bytes = read_file(path);
  if (bytes.size() < 10 || bytes.compare(0, 6, "\x93NUMPY") != 0 || bytes[6] != 1) {
    throw DataError("not a version-1 .npy file: " + path.string());
  }
  const std::size_t hlen = static_cast<std::uint8_t>(bytes[8]) | (static_cast<std::size_t>(static_cast<std::uint8_t>(bytes[9])) << 8);
  if (bytes.size() < 10 + hlen) throw DataError("truncated .npy header: " + path.string());
  const std::string header = bytes.substr(10, hlen);
  if (header.find("'<f8'") == std::string::npos || header.find("'fortran_order': False") == std::string::npos) {
    throw DataError("unsupported .npy layout (need C-order <f8): " + path.string());
  }
  const auto open = header.find('(', header.find("'shape'"));
  const auto close = header.find(')', open);
  if (open == std::string::npos || close == std::string::npos) throw DataError("malformed .npy shape: " + path.string());
  Shape shape;
  std::string dims = header.substr(open + 1, close - open - 1);
  std::replace(dims.begin(), dims.end(), ',', ' ');
  std::istringstream ds(dims);
  std::size_t d;
  while (ds >> d) shape.push_back(d);
  const std::size_t n = shape_numel(shape);
  if (bytes.size() != 10 + hlen + n * 8) throw DataError("payload size mismatch in " + path.string());
  std::vector<double> values(n);
  std::memcpy(values.data(), bytes.data() + 10 + hlen, n * 8);
  return {std::move(shape), std::move(values)};
}

// ---------------------------------------------------------------------------
// Key-value text

namespace {
std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}
}  // namespace

KeyValues parse_key_values(const std::string& text) {
  KeyValues kv;
  std::istringstream in(text);
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const std::string t = trim(line);
    if (t.empty() || t[0] == '#') continue;
    const auto eq = t.find('=');
    if (eq == std::string::npos) throw DataError("line " + std::to_string(lineno) + ": expected key = value");
    kv[trim(t.substr(0, eq))] = trim(t.substr(eq + 1));
  }
  return kv;
}

KeyValues read_key_values(const fs::path& path) { return parse_key_values(read_file(path)); }

std::string format_key_values(const KeyValues& kv) {
  std::string out;
  for (const auto& [k, v] : kv) out += k + " = " + v + "\n";
  return out;
}

std::vector<fs::path> list_files(const fs::path& dir, const std::string& extension) {
  if (!fs::is_directory(dir)) throw DataError("not a directory: " + dir.string());
  std::vector<fs::path> files;
  for (const auto& entry : fs::directory_iterator(dir)) {
    if (entry.is_regular_file() && entry.path().extension() == extension) files.push_back(entry.path());
  }
  std::sort(files.begin(), files.end());
  return files;
}

}  // namespace mapnet
