#include "mapnet/model.hpp"

#include <algorithm>
#include <sstream>

#include "mapnet/layers.hpp"
#include "mapnet/multirange.hpp"
#include "mapnet/rng.hpp"

namespace mapnet {

// ---------------------------------------------------------------------------
// Config

void NetworkConfig::validate() const {
  auto fail = [](const std::string& msg) { throw ContractError("network config: " + msg); };
  if (scales < 2) fail("scales must be >= 2");
  if (channels.size() != scales) fail("channels must list one entry per scale");
  for (auto c : channels) {
    if (c == 0) fail("channel counts must be positive");
    if (c % heads != 0) fail("every channel count must be divisible by heads");
  }
  if (ranges < 1) fail("ranges must be >= 1");
  if (dbins < 1 || memory < 1 || window < 1 || heads < 1) fail("counts must be positive");
  if (lambda_phy < 0 || lambda_flow < 0) fail("loss weights must be >= 0");
  if (lr < 0 || weight_decay < 0) fail("lr and weight_decay must be >= 0");
  if (schedule_steps < 1) fail("schedule_steps must be >= 1");
  if (clip_length < 1) fail("clip_length must be >= 1");
}

namespace {

std::string fmt_double(double v) {
  std::ostringstream os;
  os.precision(17);
  os << v;
  return os.str();
}

std::string join_sizes(const std::vector<std::size_t>& v) {
  std::string out;
  for (std::size_t i = 0; i < v.size(); ++i) out += (i ? "," : "") + std::to_string(v[i]);
  return out;
}

std::size_t parse_size(const std::string& key, const std::string& v) {
  std::size_t pos = 0;
  unsigned long long n = 0;
  try {
    n = std::stoull(v, &pos);
  } catch (const std::exception&) {
    pos = 0;
  }
  if (pos == 0 || pos != v.size() || v[0] == '-') throw DataError("config key '" + key + "': not a count: " + v);
  return static_cast<std::size_t>(n);
}

double parse_double(const std::string& key, const std::string& v) {
  std::size_t pos = 0;
  double d = 0;
  try {
    d = std::stod(v, &pos);
  } catch (const std::exception&) {
    pos = 0;
  }
  if (pos == 0 || pos != v.size()) throw DataError("config key '" + key + "': not a number: " + v);
  return d;
}

bool parse_bool(const std::string& key, const std::string& v) {
  if (v == "1" || v == "true" || v == "on") return true;
  if (v == "0" || v == "false" || v == "off") return false;
  throw DataError("config key '" + key + "': not a boolean: " + v);
}

}  // namespace

KeyValues NetworkConfig::to_key_values() const {
  return {
      {"scales", std::to_string(scales)},
      {"channels", join_sizes(channels)},
      {"ranges", std::to_string(ranges)},
      {"dbins", std::to_string(dbins)},
      {"memory", std::to_string(memory)},
      {"window", std::to_string(window)},
      {"heads", std::to_string(heads)},
      {"use_mpg", use_mpg ? "1" : "0"},
      {"use_msr", use_msr ? "1" : "0"},
      {"gmra_prior", gmra_prior ? "1" : "0"},
      {"lambda_phy", fmt_double(lambda_phy)},
      {"lambda_flow", fmt_double(lambda_flow)},
      {"lr", fmt_double(lr)},
      {"weight_decay", fmt_double(weight_decay)},
      {"beta1", fmt_double(beta1)},
      {"beta2", fmt_double(beta2)},
      {"adam_eps", fmt_double(adam_eps)},
      {"poly_power", fmt_double(poly_power)},
      {"schedule_steps", std::to_string(schedule_steps)},
      {"clip_length", std::to_string(clip_length)},
      {"seed", std::to_string(seed)},
  };
}

NetworkConfig NetworkConfig::from_key_values(const KeyValues& kv, NetworkConfig cfg) {
  for (const auto& [key, value] : kv) {
    if (key == "scales") cfg.scales = parse_size(key, value);
    else if (key == "channels") {
      cfg.channels.clear();
      std::string item;
      std::istringstream in(value);
      while (std::getline(in, item, ',')) cfg.channels.push_back(parse_size(key, item));
    } else if (key == "ranges") cfg.ranges = parse_size(key, value);
    else if (key == "dbins") cfg.dbins = parse_size(key, value);
    else if (key == "memory") cfg.memory = parse_size(key, value);
    else if (key == "window") cfg.window = parse_size(key, value);
    else if (key == "heads") cfg.heads = parse_size(key, value);
    else if (key == "use_mpg") cfg.use_mpg = parse_bool(key, value);
    else if (key == "use_msr") cfg.use_msr = parse_bool(key, value);
    else if (key == "gmra_prior") cfg.gmra_prior = parse_bool(key, value);
    else if (key == "lambda_phy") cfg.lambda_phy = parse_double(key, value);
    else if (key == "lambda_flow") cfg.lambda_flow = parse_double(key, value);
    else if (key == "lr") cfg.lr = parse_double(key, value);
    else if (key == "weight_decay") cfg.weight_decay = parse_double(key, value);
    else if (key == "beta1") cfg.beta1 = parse_double(key, value);
    else if (key == "beta2") cfg.beta2 = parse_double(key, value);
    else if (key == "adam_eps") cfg.adam_eps = parse_double(key, value);
    else if (key == "poly_power") cfg.poly_power = parse_double(key, value);
    else if (key == "schedule_steps") cfg.schedule_steps = parse_size(key, value);
    else if (key == "clip_length") cfg.clip_length = parse_size(key, value);
    else if (key == "seed") cfg.seed = parse_size(key, value);
    else throw DataError("unknown network config key '" + key + "'");
  }
  return cfg;
}

NetworkConfig NetworkConfig::from_key_values(const KeyValues& kv) { return from_key_values(kv, NetworkConfig{}); }

// ---------------------------------------------------------------------------
// Parameters

Parameters init_parameters(const NetworkConfig& cfg) {
  cfg.validate();
  Rng rng(cfg.seed);
  Parameters params;
  auto add_conv = [&](const std::string& name, std::size_t in, std::size_t out, std::size_t k, bool zero = false) {
    Conv2d c = make_conv(rng, in, out, k, 1, zero);
    params[name + ".w"] = c.weight;
    params[name + ".b"] = c.bias;
  };
  const auto& ch = cfg.channels;
  const std::size_t top = cfg.scales - 1;
  for (std::size_t k = 0; k < cfg.scales; ++k) {
    const std::string p = "enc." + std::to_string(k) + ".";
    add_conv(p + "conv1", k == 0 ? 3 : ch[k - 1], ch[k], 3);
    add_conv(p + "conv2", ch[k], ch[k], 3);
  }
  for (std::size_t k = cfg.scales; k-- > 0;) {
    const std::size_t c = ch[k];
    const std::string lvl = "." + std::to_string(k) + ".";
    const std::size_t in = k == top ? c : 2 * c;
    if (k < top) {
      add_conv("dec" + lvl + "prior_up", ch[k + 1], 4 * c, 3);
      add_conv("dec" + lvl + "scene_up", ch[k + 1], 4 * c, 3);
    }
    add_conv("dec" + lvl + "prior_in", in, c, 3);
    add_conv("dec" + lvl + "scene_in", in, c, 3);
    if (cfg.use_mpg) {
      add_conv("mpg" + lvl + "dist", c, cfg.dbins, 1);
      add_conv("mpg" + lvl + "fuse_in", 2 * c, c, 3);
      add_conv("mpg" + lvl + "fuse_out", c, c, 3, true);
    }
    if (cfg.use_msr) {
      add_conv("msr" + lvl + "offset_hidden", 2 * c + 3, c, 3);
      add_conv("msr" + lvl + "offset_out", c, 3, 3, true);
      params["msr" + lvl + "uq"] = make_projection(rng, c, c);
      params["msr" + lvl + "ukv"] = make_projection(rng, c, 2 * c);
      add_conv("msr" + lvl + "ffn_in", c, 2 * c, 1);
      add_conv("msr" + lvl + "ffn_out", 2 * c, c, 1);
    }
    add_conv("head" + lvl + "t", c + 3, 1, 3);
    add_conv("head" + lvl + "a", c + 3, 1, 1);
    add_conv("head" + lvl + "j", c + 3, 3, 3);
  }
  add_conv("out.res_in", ch[0] + 3, ch[0], 3);
  add_conv("out.res_out", ch[0], 3, 3, true);
  return params;
}

std::size_t parameter_count(const Parameters& params) {
  std::size_t n = 0;
  for (const auto& [_, t] : params) n += t.numel();
  return n;
}

namespace {

const Tensor& param(const Parameters& params, const std::string& key) {
  auto it = params.find(key);
  if (it == params.end()) throw ContractError("missing parameter '" + key + "'");
  return it->second;
}

Conv2d conv(const Parameters& params, const std::string& name, std::size_t stride = 1) {
  Conv2d c;
  c.weight = param(params, name + ".w");
  c.bias = param(params, name + ".b");
  c.stride = stride;
  c.padding = c.weight.dim(2) / 2;
  return c;
}

Tensor act(const Tensor& x) { return leaky_relu(x, kLeakySlope); }

StdaParams stda_params(const Parameters& params, const std::string& lvl, const NetworkConfig& cfg) {
  StdaParams p;
  p.offset = {conv(params, "msr" + lvl + "offset_hidden"), conv(params, "msr" + lvl + "offset_out")};
  p.query_proj = param(params, "msr" + lvl + "uq");
  p.key_value_proj = param(params, "msr" + lvl + "ukv");
  p.ffn_in = conv(params, "msr" + lvl + "ffn_in");
  p.ffn_out = conv(params, "msr" + lvl + "ffn_out");
  p.window = cfg.window;
  p.heads = cfg.heads;
  return p;
}

}  // namespace

FrameState FrameState::fresh(const NetworkConfig& cfg) {
  FrameState s;
  s.levels.assign(cfg.scales, LevelState{{}, {}, TokenMemory(cfg.memory)});
  return s;
}

// ---------------------------------------------------------------------------
// Forward

std::vector<Tensor> encode(const Tensor& frame, const Parameters& params, const NetworkConfig& cfg) {
  if (frame.rank() != 3 || frame.dim(0) != 3) throw DimensionError("encode: expected [3,H,W], got " + shape_str(frame.shape()));
  const std::size_t div = std::size_t{1} << (cfg.scales - 1);
  if (frame.dim(1) % div != 0 || frame.dim(2) % div != 0) {
    throw DimensionError("encode: frame " + std::to_string(frame.dim(1)) + "x" + std::to_string(frame.dim(2)) +
                         " must have height and width divisible by 2^(scales-1) = " + std::to_string(div));
  }
  std::vector<Tensor> feats;
  Tensor x = frame;
  for (std::size_t k = 0; k < cfg.scales; ++k) {
    const std::string p = "enc." + std::to_string(k) + ".";
    x = act(conv(params, p + "conv1", k == 0 ? 1 : 2)(x));
    x = act(conv(params, p + "conv2")(x));
    feats.push_back(x);
  }
  return feats;
}

Tensor reconstruct_hazy(const Tensor& scene, const Tensor& transmission, const Tensor& airlight) {
  Tensor t3 = concat({transmission, transmission, transmission}, 0);
  Tensor haze = add_scalar(scale(t3, -1.0), 1.0);
  return add(mul(scene, t3), mul_scalar(airlight, haze));
}

DecodeResult decode_step(const Tensor& frame, const std::vector<Tensor>& features, const FrameState& state,
                         const Parameters& params, const NetworkConfig& cfg) {
  const std::size_t S = cfg.scales, top = S - 1;
  if (features.size() != S) throw ContractError("decode_step: expected one feature map per scale");
  if (state.levels.size() != S) throw ContractError("decode_step: state built for a different scale count");
  const std::size_t height = frame.dim(1), width = frame.dim(2);
  if (state.height != 0 && (state.height != height || state.width != width)) {
    throw ContractError("decode_step: state belongs to " + std::to_string(state.height) + "x" +
                        std::to_string(state.width) + " frames, got " + std::to_string(height) + "x" +
                        std::to_string(width));
  }

  DecodeResult result;
  result.state = state;
  result.state.height = height;
  result.state.width = width;
  result.scales.resize(S);

  const std::vector<Tensor> pyramid = image_pyramid(frame, S);
  std::vector<Tensor> image_logits;
  for (const auto& img : pyramid) {
    Tensor p = clamp(img, 1e-3, 1.0 - 1e-3);
    image_logits.push_back(sub(log(p), log(add_scalar(scale(p, -1.0), 1.0))));
  }
  Tensor prior_prev, scene_prev;
  std::vector<Tensor> flows_prev;
  for (std::size_t k = S; k-- > 0;) {
    const std::string lvl = "." + std::to_string(k) + ".";
    const Tensor& feat = features[k];
    const std::size_t h = feat.dim(1), w = feat.dim(2);
    LevelState& ls = result.state.levels[k];
    ScaleOutputs& so = result.scales[top - k];

    Tensor prior_in = feat, scene_in = feat;
    if (k < top) {
      prior_in = concat({feat, pixel_shuffle(conv(params, "dec" + lvl + "prior_up")(prior_prev), 2)}, 0);
      scene_in = concat({feat, pixel_shuffle(conv(params, "dec" + lvl + "scene_up")(scene_prev), 2)}, 0);
    }
    Tensor prior_init = act(conv(params, "dec" + lvl + "prior_in")(prior_in));
    Tensor scene_init = act(conv(params, "dec" + lvl + "scene_in")(scene_in));

    // Memory-based prior guidance. The current frame reads history, then contributes its token.
    Tensor prior = prior_init, scene = scene_init;
    if (cfg.use_mpg) {
      prior = memory_read(prior_init, ls.memory);
      PriorCompression comp = compress_prior(prior_init, conv(params, "mpg" + lvl + "dist"), cfg.dbins);
      ls.memory.push(comp.token);
      so.distribution = comp.distribution;
      so.token = comp.token;
      scene = guide_scene(prior, scene_init,
                          {conv(params, "mpg" + lvl + "fuse_in"), conv(params, "mpg" + lvl + "fuse_out")});
    }

    // Multi-range recovery.
    Tensor recovered = scene;
    if (cfg.use_msr) {
      const std::vector<Tensor> scene_hist(ls.scene_history.begin(), ls.scene_history.end());
      const std::vector<Tensor> prior_hist(ls.prior_history.begin(), ls.prior_history.end());
      auto scene_sets = build_range_sets(scene_hist, cfg.ranges, scene);
      auto prior_sets = build_range_sets(prior_hist, cfg.ranges, prior);
      const StdaParams sp = stda_params(params, lvl, cfg);
      std::vector<Tensor> range_feats, aligned_priors;
      for (std::size_t r = 0; r < cfg.ranges; ++r) {
        Tensor flow_init = k == top ? identity_flow(h, w, -1.0) : resize_bilinear(flows_prev[r], h, w);
        StdaOutput out = stda(scene, scene_sets[r], flow_init, sp);
        range_feats.push_back(out.feature);
        if (cfg.gmra_prior) aligned_priors.push_back(space_time_sample(prior_sets[r].stacked(), out.flow));
        so.flows.push_back(out.flow);
      }
      GmraOutput agg = gmra(range_feats, aligned_priors, scene, prior);
      recovered = agg.feature;
      so.range_weights = agg.weights;
      flows_prev = so.flows;

      ls.scene_history.push_front(recovered);
      ls.prior_history.push_front(prior);
      while (ls.scene_history.size() > cfg.ranges) ls.scene_history.pop_back();
      while (ls.prior_history.size() > cfg.ranges) ls.prior_history.pop_back();
    }

    // Prediction heads and physical recombination.
    // Heads also see the input image at this scale.
    const Tensor prior_head = concat({prior, pyramid[top - k]}, 0);
    so.transmission = sigmoid(conv(params, "head" + lvl + "t")(prior_head));
    so.airlight = sigmoid(mean(conv(params, "head" + lvl + "a")(prior_head)));
    so.scene = sigmoid(add(image_logits[top - k], conv(params, "head" + lvl + "j")(concat({recovered, pyramid[top - k]}, 0))));
    so.hazy = reconstruct_hazy(so.scene, so.transmission, so.airlight);

    prior_prev = prior;
    scene_prev = recovered;
  }

  Tensor residual = conv(params, "out.res_out")(act(conv(params, "out.res_in")(concat({scene_prev, frame}, 0))));
  result.dehazed = clamp(add(frame, residual), 0.0, 1.0);
  return result;
}

DecodeResult forward_frame(const Tensor& frame, const FrameState& state, const Parameters& params,
                           const NetworkConfig& cfg) {
  return decode_step(frame, encode(frame, params, cfg), state, params, cfg);
}

VideoResult run_video(const Video& video, const Parameters& params, const NetworkConfig& cfg) {
  if (video.empty()) throw ContractError("run_video: empty video");
  for (const auto& f : video) {
    if (f.height != video[0].height || f.width != video[0].width) {
      throw DimensionError("run_video: frames differ in geometry");
    }
  }
  NoGradGuard no_grad;
  VideoResult out;
  FrameState state = FrameState::fresh(cfg);
  for (const auto& f : video) {
    DecodeResult r = forward_frame(frame_to_tensor(f), state, params, cfg);
    out.dehazed.push_back(tensor_to_frame(r.dehazed));
    out.intermediates.push_back(std::move(r.scales));
    state = std::move(r.state);
  }
  return out;
}

std::vector<Tensor> image_pyramid(const Tensor& image, std::size_t scales) {
  std::vector<Tensor> pyr(scales);
  pyr[scales - 1] = image;
  for (std::size_t s = scales - 1; s-- > 0;) pyr[s] = avg_pool2(pyr[s + 1]);
  return pyr;
}

}  // namespace mapnet
