#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "mapnet/haze.hpp"
#include "mapnet/model.hpp"

namespace mapnet::cli {

namespace fs = std::filesystem;

enum ExitCode : int { kOk = 0, kUsage = 1, kDataError = 2, kNumericFailure = 3 };

/// Bad flags, bad config values or an unknown selector.
class UsageError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Network overrides given on the command line; unset fields keep config-file or default values.
struct NetworkOverrides {
  std::optional<std::size_t> scales;
  std::optional<std::size_t> ranges;
  std::optional<std::size_t> dbins;
  std::optional<std::size_t> memory;
  std::optional<std::uint64_t> seed;
};

struct SynthesizeOptions {
  fs::path clear_dir;
  fs::path depth_dir;
  fs::path out_dir;
  std::optional<fs::path> config;
  std::optional<std::uint64_t> seed;
};

struct TrainOptions {
  fs::path data_dir;
  fs::path out_checkpoint;
  std::optional<fs::path> log;
  std::optional<fs::path> resume;
  std::optional<fs::path> config;
  std::optional<std::size_t> steps;  ///< total optimizer steps, counted from scratch
  NetworkOverrides overrides;
};

struct EvalOptions {
  std::optional<fs::path> checkpoint;
  std::optional<fs::path> pred_dir;
  fs::path hazy_dir;
  fs::path gt_dir;
  fs::path report;
};

struct InspectOptions {
  fs::path checkpoint;
  fs::path video_dir;
  fs::path out_dir;
  std::string what;
};

inline const std::vector<std::string> kInspectSelectors{"flows", "weights", "priors", "components"};
inline constexpr std::size_t kDefaultTrainSteps = 300;

/// Synthesis settings from a config file (keys beta_choices, airlight_min, airlight_max, seed).
SynthesisConfig synthesis_config_from(const KeyValues& kv, SynthesisConfig base = SynthesisConfig{});

/// Applies config-file values and flag overrides. --scales without an explicit channel list
/// doubles the base channel count per level.
NetworkConfig resolve_network_config(const KeyValues& file_values, const NetworkOverrides& overrides);

/// Training data layout: <dir>/hazy/*.png, <dir>/gt/*.png, <dir>/trans/*.pfm with matching stems.
struct Dataset {
  std::vector<std::string> stems;
  Video hazy;
  Video gt;
  std::vector<TransmissionMap> transmissions;
};
Dataset load_dataset(const fs::path& dir);

Video load_video(const fs::path& dir);

int cmd_synthesize(const SynthesizeOptions& opt, std::ostream& out);
int cmd_train(const TrainOptions& opt, std::ostream& out);
int cmd_eval(const EvalOptions& opt, std::ostream& out);
int cmd_inspect(const InspectOptions& opt, std::ostream& out);

/// Parses arguments, dispatches, and maps errors to exit codes. Diagnostics go to `err`.
int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

}  // namespace mapnet::cli
