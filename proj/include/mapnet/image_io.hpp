#pragma once

#include <filesystem>
#include <map>
#include <stdexcept>
#include <string>
#include <vector>

#include "mapnet/haze.hpp"

namespace mapnet {

/// Raised for unreadable, malformed or inconsistent files.
class DataError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Writes `bytes` to a sibling temporary file and renames it over `path`.
void write_file_atomic(const std::filesystem::path& path, const std::string& bytes);
std::string read_file(const std::filesystem::path& path);

/// 8-bit RGB PNG. Gray, alpha and 16-bit inputs are converted to 8-bit RGB on read.
/// On write each channel is rounded half-to-even from value * 255.
Frame read_png(const std::filesystem::path& path);
void write_png(const std::filesystem::path& path, const Frame& frame);
std::uint8_t quantize_u8(double value);

/// Portable float map: "PF" (3 channels) or "Pf" (1 channel), float32, bottom-to-top rows.
struct FloatImage {
  std::size_t height = 0;
  std::size_t width = 0;
  std::size_t channels = 1;
  std::vector<double> values;  ///< top-to-bottom, channel-interleaved
};

FloatImage read_pfm(const std::filesystem::path& path);
void write_pfm(const std::filesystem::path& path, const FloatImage& image);

DepthMap read_depth(const std::filesystem::path& path);
void write_depth(const std::filesystem::path& path, const DepthMap& depth);
TransmissionMap read_transmission(const std::filesystem::path& path);
void write_transmission(const std::filesystem::path& path, const TransmissionMap& t);

/// NumPy .npy (format 1.0, little-endian float64, C order). Used for lossless inspection dumps.
void write_npy(const std::filesystem::path& path, const Shape& shape, std::span<const double> values);
std::pair<Shape, std::vector<double>> read_npy(const std::filesystem::path& path);

/// Flat `key = value` text. Blank lines and lines starting with '#' are ignored.
using KeyValues = std::map<std::string, std::string>;
KeyValues parse_key_values(const std::string& text);
KeyValues read_key_values(const std::filesystem::path& path);
std::string format_key_values(const KeyValues& kv);

/// Regular files in `dir` with the given extension, sorted by name.
std::vector<std::filesystem::path> list_files(const std::filesystem::path& dir, const std::string& extension);

}  // namespace mapnet
