#include "mapnet/cli.hpp"

#include <algorithm>
#include <cstdio>
#include <ostream>
#include <sstream>

#include "CLI11.hpp"
#include "mapnet/image_io.hpp"
#include "mapnet/metrics.hpp"
#include "mapnet/trainer.hpp"

namespace mapnet::cli {

namespace {

std::string fmt(double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

double to_double(const std::string& key, const std::string& v) {
  std::size_t pos = 0;
  double d = 0.0;
  try {
    d = std::stod(v, &pos);
  } catch (const std::exception&) {
    pos = 0;
  }
  if (pos == 0 || pos != v.size()) throw UsageError("config key '" + key + "': not a number: " + v);
  return d;
}

std::uint64_t to_u64(const std::string& key, const std::string& v) {
  std::size_t pos = 0;
  unsigned long long n = 0;
  try {
    n = std::stoull(v, &pos);
  } catch (const std::exception&) {
    pos = 0;
  }
  if (pos == 0 || pos != v.size() || v[0] == '-') throw UsageError("config key '" + key + "': not a count: " + v);
  return n;
}

void require_dir(const fs::path& dir, const char* what) {
  if (!fs::is_directory(dir)) throw DataError(std::string(what) + " directory not found: " + dir.string());
}

void require_file(const fs::path& file, const char* what) {
  if (!fs::is_regular_file(file)) throw DataError(std::string(what) + " not found: " + file.string());
}

void require_same_geometry(const Video& video, const fs::path& dir) {
  for (std::size_t i = 1; i < video.size(); ++i) {
    if (video[i].height != video[0].height || video[i].width != video[0].width) {
      throw DataError("frames in " + dir.string() + " differ in size");
    }
  }
}

}  // namespace

SynthesisConfig synthesis_config_from(const KeyValues& kv, SynthesisConfig cfg) {
  for (const auto& [key, value] : kv) {
    if (key == "beta_choices") {
      cfg.beta_choices.clear();
      std::string item;
      std::istringstream in(value);
      while (std::getline(in, item, ',')) cfg.beta_choices.push_back(to_double(key, item));
    } else if (key == "airlight_min") {
      cfg.airlight_min = to_double(key, value);
    } else if (key == "airlight_max") {
      cfg.airlight_max = to_double(key, value);
    } else if (key == "seed") {
      cfg.seed = to_u64(key, value);
    } else {
      throw UsageError("unknown synthesis config key '" + key + "'");
    }
  }
  return cfg;
}

NetworkConfig resolve_network_config(const KeyValues& file_values, const NetworkOverrides& o) {
  NetworkConfig cfg;
  try {
    cfg = NetworkConfig::from_key_values(file_values);
  } catch (const DataError& e) {
    throw UsageError(e.what());
  }
  if (o.scales) {
    cfg.scales = *o.scales;
    if (!file_values.count("channels")) {
      const std::size_t base = cfg.channels.empty() ? 8 : cfg.channels.front();
      cfg.channels.clear();
      for (std::size_t k = 0; k < cfg.scales; ++k) cfg.channels.push_back(base << k);
    }
  }
  if (o.ranges) cfg.ranges = *o.ranges;
  if (o.dbins) cfg.dbins = *o.dbins;
  if (o.memory) cfg.memory = *o.memory;
  if (o.seed) cfg.seed = *o.seed;
  try {
    cfg.validate();
  } catch (const ContractError& e) {
    throw UsageError(e.what());
  }
  return cfg;
}

Video load_video(const fs::path& dir) {
  require_dir(dir, "video");
  Video video;
  for (const auto& file : list_files(dir, ".png")) video.push_back(read_png(file));
  if (video.empty()) throw DataError("no .png frames in " + dir.string());
  require_same_geometry(video, dir);
  return video;
}

Dataset load_dataset(const fs::path& dir) {
  require_dir(dir, "dataset");
  const fs::path hazy_dir = dir / "hazy", gt_dir = dir / "gt", trans_dir = dir / "trans";
  require_dir(hazy_dir, "hazy");
  require_dir(gt_dir, "gt");
  require_dir(trans_dir, "trans");
  Dataset ds;
  const auto hazy_files = list_files(hazy_dir, ".png");
  if (hazy_files.empty()) throw DataError("no .png frames in " + hazy_dir.string());
  if (list_files(gt_dir, ".png").size() != hazy_files.size() ||
      list_files(trans_dir, ".pfm").size() != hazy_files.size()) {
    throw DataError("dataset " + dir.string() + ": hazy, gt and trans file counts differ");
  }
  for (const auto& file : hazy_files) {
    const std::string stem = file.stem().string();
    const fs::path gt_file = gt_dir / (stem + ".png"), trans_file = trans_dir / (stem + ".pfm");
    require_file(gt_file, "ground-truth frame");
    require_file(trans_file, "transmission map");
    ds.stems.push_back(stem);
    ds.hazy.push_back(read_png(file));
    ds.gt.push_back(read_png(gt_file));
    ds.transmissions.push_back(read_transmission(trans_file));
  }
  TrainingClip{ds.hazy, ds.gt, ds.transmissions}.validate();
  return ds;
}

// ---------------------------------------------------------------------------
// synthesize

int cmd_synthesize(const SynthesizeOptions& opt, std::ostream& out) {
  SynthesisConfig cfg;
  if (opt.config) cfg = synthesis_config_from(read_key_values(*opt.config), cfg);
  if (opt.seed) cfg.seed = *opt.seed;
  try {
    cfg.validate();
  } catch (const ParameterError& e) {
    throw UsageError(e.what());
  }

  require_dir(opt.clear_dir, "clear-frame");
  require_dir(opt.depth_dir, "depth");
  const auto frames = list_files(opt.clear_dir, ".png");
  if (frames.empty()) throw DataError("no .png frames in " + opt.clear_dir.string());
  std::vector<fs::path> depth_files;
  for (const auto& f : frames) {
    const fs::path d = opt.depth_dir / (f.stem().string() + ".pfm");
    if (!fs::is_regular_file(d)) {
      throw DataError("missing depth map for frame " + f.filename().string() + " (expected " + d.string() + ")");
    }
    depth_files.push_back(d);
  }
  const auto all_depths = list_files(opt.depth_dir, ".pfm");
  if (all_depths.size() != frames.size()) {
    throw DataError("frame/depth count mismatch: " + std::to_string(frames.size()) + " frames, " +
                    std::to_string(all_depths.size()) + " depth maps");
  }

  Video clear;
  std::vector<DepthMap> depths;
  for (std::size_t i = 0; i < frames.size(); ++i) {
    clear.push_back(read_png(frames[i]));
    depths.push_back(fill_invalid_depth(read_depth(depth_files[i])));
    if (depths.back().height != clear.back().height || depths.back().width != clear.back().width) {
      throw DataError("depth map " + depth_files[i].filename().string() + " does not match the size of " +
                      frames[i].filename().string());
    }
  }

  const SynthesizedVideo synth = synthesize_video(clear, depths, cfg);

  fs::create_directories(opt.out_dir / "hazy");
  fs::create_directories(opt.out_dir / "trans");
  fs::create_directories(opt.out_dir / "gt");
  for (std::size_t i = 0; i < frames.size(); ++i) {
    const std::string stem = frames[i].stem().string();
    write_png(opt.out_dir / "hazy" / (stem + ".png"), synth.hazy[i]);
    write_transmission(opt.out_dir / "trans" / (stem + ".pfm"), synth.transmissions[i]);
    write_png(opt.out_dir / "gt" / (stem + ".png"), clear[i]);
  }
  std::string choices;
  for (std::size_t i = 0; i < cfg.beta_choices.size(); ++i) choices += (i ? "," : "") + fmt(cfg.beta_choices[i]);
  const KeyValues manifest{
      {"beta", fmt(synth.params.beta)},
      {"airlight", fmt(synth.params.airlight)},
      {"seed", std::to_string(cfg.seed)},
      {"frames", std::to_string(frames.size())},
      {"beta_choices", choices},
      {"airlight_min", fmt(cfg.airlight_min)},
      {"airlight_max", fmt(cfg.airlight_max)},
  };
  write_file_atomic(opt.out_dir / "manifest.txt", format_key_values(manifest));
  out << "synthesized " << frames.size() << " frames, beta " << fmt(synth.params.beta) << ", airlight "
      << fmt(synth.params.airlight) << "\n";
  return kOk;
}

// ---------------------------------------------------------------------------
// train

namespace {

constexpr const char* kLogHeader = "step,lr,out,phy,flow,total\n";

std::string log_row(std::uint64_t step, double lr, const LossReport& r) {
  return std::to_string(step) + "," + fmt(lr) + "," + fmt(r.out) + "," + fmt(r.phy) + "," + fmt(r.flow) + "," +
         fmt(r.total) + "\n";
}

bool has_network_overrides(const NetworkOverrides& o) {
  return o.scales || o.ranges || o.dbins || o.memory || o.seed;
}

}  // namespace

int cmd_train(const TrainOptions& opt, std::ostream& out) {
  KeyValues file_values;
  if (opt.config) file_values = read_key_values(*opt.config);
  std::optional<std::size_t> steps = opt.steps;
  if (auto it = file_values.find("steps"); it != file_values.end()) {
    if (!steps) steps = static_cast<std::size_t>(to_u64("steps", it->second));
    file_values.erase(it);
  }
  const std::size_t total_steps = steps.value_or(kDefaultTrainSteps);

  Checkpoint ckpt;
  if (opt.resume) {
    if (opt.config || has_network_overrides(opt.overrides)) {
      throw UsageError("--resume takes the network configuration from the checkpoint; drop --config and network flags");
    }
    require_file(*opt.resume, "checkpoint");
    ckpt = load_checkpoint(opt.resume->string());
    if (ckpt.optimizer.step > total_steps) {
      throw UsageError("checkpoint is already at step " + std::to_string(ckpt.optimizer.step) + ", beyond --steps " +
                       std::to_string(total_steps));
    }
  } else {
    ckpt.config = resolve_network_config(file_values, opt.overrides);
    ckpt.params = init_parameters(ckpt.config);
    ckpt.optimizer = init_optimizer(ckpt.params);
  }

  const Dataset ds = load_dataset(opt.data_dir);
  const TrainingClip clip{ds.hazy, ds.gt, ds.transmissions};
  const std::size_t div = std::size_t{1} << (ckpt.config.scales - 1);
  if (clip.hazy[0].height % div != 0 || clip.hazy[0].width % div != 0) {
    throw DataError("frames must have height and width divisible by " + std::to_string(div));
  }
  const std::size_t length = std::min(ckpt.config.clip_length, clip.size());

  std::string log = kLogHeader;
  auto flush_log = [&] {
    if (opt.log) write_file_atomic(*opt.log, log);
  };
  LossReport last;
  try {
    while (ckpt.optimizer.step < total_steps) {
      const std::uint64_t k = ckpt.optimizer.step;
      const TrainingClip batch = clip.window(window_start(clip.size(), length, k), length);
      StepResult r = train_step(batch, ckpt.params, ckpt.optimizer, ckpt.config);
      log += log_row(k, learning_rate(ckpt.config, k), r.loss);
      ckpt.params = std::move(r.params);
      ckpt.optimizer = std::move(r.optimizer);
      last = r.loss;
    }
  } catch (const TrainingError& e) {
    log += std::string("# training stopped at step ") + std::to_string(ckpt.optimizer.step) + ": " + e.what() + "\n";
    flush_log();
    throw;
  }
  save_checkpoint(opt.out_checkpoint.string(), ckpt);
  flush_log();
  out << "trained to step " << ckpt.optimizer.step << " (" << parameter_count(ckpt.params) << " parameters)";
  if (ckpt.optimizer.step > 0) out << ", last total loss " << fmt(last.total);
  out << "\n";
  return kOk;
}

// ---------------------------------------------------------------------------
// eval

int cmd_eval(const EvalOptions& opt, std::ostream& out) {
  if (opt.checkpoint.has_value() == opt.pred_dir.has_value()) {
    throw UsageError("eval needs exactly one of --checkpoint (with --hazy) or --pred");
  }
  const Video gt = load_video(opt.gt_dir);
  Video pred;
  if (opt.checkpoint) {
    if (opt.hazy_dir.empty()) throw UsageError("--checkpoint requires --hazy");
    require_file(*opt.checkpoint, "checkpoint");
    const Checkpoint ckpt = load_checkpoint(opt.checkpoint->string());
    const Video hazy = load_video(opt.hazy_dir);
    if (hazy.size() != gt.size() || hazy[0].height != gt[0].height || hazy[0].width != gt[0].width) {
      throw DataError("hazy and ground-truth videos differ in frame count or size");
    }
    pred = run_video(hazy, ckpt.params, ckpt.config).dehazed;
  } else {
    pred = load_video(*opt.pred_dir);
  }
  const EvalReport report = evaluate_video(pred, gt);
  write_file_atomic(opt.report, report.to_csv());
  out << "frames " << report.frames.size() << ", mean psnr " << fmt(report.mean_psnr) << " dB, mean ssim "
      << fmt(report.mean_ssim) << "\n";
  return kOk;
}

// ---------------------------------------------------------------------------
// inspect

namespace {

struct Dump {
  std::string name;
  Tensor value;
};

std::string frame_prefix(std::size_t f, std::size_t s) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "f%03zu_s%zu", f, s);
  return buf;
}

}  // namespace

int cmd_inspect(const InspectOptions& opt, std::ostream& out) {
  if (std::find(kInspectSelectors.begin(), kInspectSelectors.end(), opt.what) == kInspectSelectors.end()) {
    std::string valid;
    for (const auto& s : kInspectSelectors) valid += (valid.empty() ? "" : ", ") + s;
    throw UsageError("unknown selector '" + opt.what + "'; valid selectors: " + valid);
  }
  require_file(opt.checkpoint, "checkpoint");
  const Checkpoint ckpt = load_checkpoint(opt.checkpoint.string());
  if ((opt.what == "flows" || opt.what == "weights") && !ckpt.config.use_msr) {
    throw DataError("checkpoint has multi-range recovery disabled; no " + opt.what + " to dump");
  }
  if (opt.what == "priors" && !ckpt.config.use_mpg) {
    throw DataError("checkpoint has prior guidance disabled; no priors to dump");
  }
  const Video video = load_video(opt.video_dir);
  const VideoResult result = run_video(video, ckpt.params, ckpt.config);

  std::vector<Dump> dumps;
  for (std::size_t f = 0; f < result.intermediates.size(); ++f) {
    for (std::size_t s = 0; s < result.intermediates[f].size(); ++s) {
      const ScaleOutputs& so = result.intermediates[f][s];
      const std::string p = frame_prefix(f, s);
      if (opt.what == "components") {
        dumps.push_back({p + "_t", so.transmission});
        dumps.push_back({p + "_A", so.airlight});
        dumps.push_back({p + "_J", so.scene});
        dumps.push_back({p + "_I", so.hazy});
      } else if (opt.what == "flows") {
        for (std::size_t r = 0; r < so.flows.size(); ++r) {
          dumps.push_back({p + "_r" + std::to_string(r + 1) + "_flow", so.flows[r]});
        }
      } else if (opt.what == "weights") {
        const std::size_t R = so.range_weights.dim(0), h = so.range_weights.dim(1), w = so.range_weights.dim(2);
        for (std::size_t r = 0; r < R; ++r) {
          dumps.push_back({p + "_r" + std::to_string(r + 1) + "_weight",
                           reshape(slice(so.range_weights, 0, r, r + 1), {h, w})});
        }
      } else {
        dumps.push_back({p + "_dist", so.distribution});
        dumps.push_back({p + "_token", so.token});
      }
    }
  }
  fs::create_directories(opt.out_dir);
  for (const auto& d : dumps) write_npy(opt.out_dir / (d.name + ".npy"), d.value.shape(), d.value.data());
  out << "wrote " << dumps.size() << " " << opt.what << " files to " << opt.out_dir.string() << "\n";
  return kOk;
}

// ---------------------------------------------------------------------------
// argument parsing

int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  CLI::App app{"Video dehazing with memory-guided priors and multi-range recovery", "mapnet"};
  app.require_subcommand(1);

  SynthesizeOptions syn;
  auto* s = app.add_subcommand("synthesize", "Render hazy frames from clear frames and depth maps");
  s->add_option("--clear", syn.clear_dir, "Directory of clear .png frames")->required();
  s->add_option("--depth", syn.depth_dir, "Directory of .pfm depth maps (meters), one per frame stem")->required();
  s->add_option("--out", syn.out_dir, "Output directory")->required();
  s->add_option("--config", syn.config, "key = value synthesis config");
  s->add_option("--seed", syn.seed, "Random seed");

  TrainOptions tr;
  auto* t = app.add_subcommand("train", "Train on a dataset directory (hazy/, gt/, trans/)");
  t->add_option("--data", tr.data_dir, "Dataset directory")->required();
  t->add_option("--out", tr.out_checkpoint, "Checkpoint to write")->required();
  t->add_option("--log", tr.log, "CSV training log");
  t->add_option("--resume", tr.resume, "Checkpoint to continue from");
  t->add_option("--config", tr.config, "key = value network config");
  t->add_option("--steps", tr.steps, "Total optimizer steps");
  t->add_option("--scales", tr.overrides.scales, "Number of scales");
  t->add_option("--ranges", tr.overrides.ranges, "Number of temporal ranges");
  t->add_option("--dbins", tr.overrides.dbins, "Transmission bins per prior token");
  t->add_option("--memory", tr.overrides.memory, "Token memory capacity");
  t->add_option("--seed", tr.overrides.seed, "Random seed");

  EvalOptions ev;
  std::string hazy_dir;
  auto* e = app.add_subcommand("eval", "Score dehazed output against ground truth");
  e->add_option("--checkpoint", ev.checkpoint, "Checkpoint used to dehaze --hazy");
  e->add_option("--pred", ev.pred_dir, "Directory of already dehazed frames");
  e->add_option("--hazy", hazy_dir, "Directory of hazy frames");
  e->add_option("--gt", ev.gt_dir, "Directory of ground-truth frames")->required();
  e->add_option("--report", ev.report, "CSV report to write")->required();

  InspectOptions in;
  auto* i = app.add_subcommand("inspect", "Dump intermediate maps as .npy files");
  i->add_option("--checkpoint", in.checkpoint, "Checkpoint")->required();
  i->add_option("--video", in.video_dir, "Directory of hazy frames")->required();
  i->add_option("--out", in.out_dir, "Output directory")->required();
  i->add_option("--what", in.what, "flows | weights | priors | components")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& pe) {
    return app.exit(pe, out, err) == 0 ? kOk : kUsage;
  }
  ev.hazy_dir = hazy_dir;

  try {
    if (s->parsed()) return cmd_synthesize(syn, out);
    if (t->parsed()) return cmd_train(tr, out);
    if (e->parsed()) return cmd_eval(ev, out);
    return cmd_inspect(in, out);
  } catch (const UsageError& ex) {
    err << "error: " << ex.what() << "\n";
    return kUsage;
  } catch (const TrainingError& ex) {
    err << "numeric failure: " << ex.what() << "\n";
    return kNumericFailure;
  } catch (const std::exception& ex) {
    err << "error: " << ex.what() << "\n";
    return kDataError;
  }
}

}  // namespace mapnet::cli
