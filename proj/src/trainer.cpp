#include "mapnet/trainer.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>

#include "mapnet/image_io.hpp"

namespace mapnet {

AdamWState init_optimizer(const Parameters& params) {
  AdamWState s;
  for (const auto& [key, p] : params) {
    s.m[key] = Tensor::zeros(p.shape());
    s.v[key] = Tensor::zeros(p.shape());
  }
  return s;
}

double learning_rate(const NetworkConfig& cfg, std::uint64_t step) {
  if (step >= cfg.schedule_steps) return 0.0;
  const double frac = 1.0 - static_cast<double>(step) / static_cast<double>(cfg.schedule_steps);
  return cfg.lr * std::pow(frac, cfg.poly_power);
}

void TrainingClip::validate() const {
  if (hazy.empty()) throw ContractError("training clip is empty");
  if (gt.size() != hazy.size()) {
    throw DimensionError("training clip: " + std::to_string(hazy.size()) + " hazy frames but " +
                         std::to_string(gt.size()) + " ground-truth frames");
  }
  if (!transmissions.empty() && transmissions.size() != hazy.size()) {
    throw DimensionError("training clip: transmission count does not match frame count");
  }
  for (std::size_t i = 0; i < hazy.size(); ++i) {
    const Frame& a = hazy[i];
    if (a.height != hazy[0].height || a.width != hazy[0].width || gt[i].height != a.height ||
        gt[i].width != a.width) {
      throw DimensionError("training clip: frame " + std::to_string(i) + " geometry mismatch");
    }
    if (!transmissions.empty() && (transmissions[i].height != a.height || transmissions[i].width != a.width)) {
      throw DimensionError("training clip: transmission " + std::to_string(i) + " geometry mismatch");
    }
  }
}

TrainingClip TrainingClip::window(std::size_t start, std::size_t length) const {
  if (start + length > hazy.size()) throw ContractError("training clip window out of range");
  TrainingClip out;
  out.hazy.assign(hazy.begin() + start, hazy.begin() + start + length);
  out.gt.assign(gt.begin() + start, gt.begin() + start + length);
  if (!transmissions.empty()) {
    out.transmissions.assign(transmissions.begin() + start, transmissions.begin() + start + length);
  }
  return out;
}

std::size_t window_start(std::size_t clip_frames, std::size_t window, std::uint64_t step) {
  if (window == 0 || clip_frames == 0) throw ContractError("window_start: empty clip or window");
  if (window >= clip_frames) return 0;
  return static_cast<std::size_t>(step % (clip_frames - window + 1));
}

ClipLoss clip_loss(const TrainingClip& clip, const Parameters& params, const NetworkConfig& cfg) {
  clip.validate();
  const std::size_t S = cfg.scales;
  FrameState state = FrameState::fresh(cfg);
  std::vector<std::vector<Tensor>> gt_history(S);  // past GT pyramids, most recent first

  Tensor out_sum = Tensor::scalar(0.0), phy_sum = Tensor::scalar(0.0), flow_sum = Tensor::scalar(0.0);
  for (std::size_t i = 0; i < clip.size(); ++i) {
    Tensor hazy = frame_to_tensor(clip.hazy[i]);
    Tensor gt = frame_to_tensor(clip.gt[i]);
    DecodeResult r = forward_frame(hazy, state, params, cfg);
    state = std::move(r.state);

    const auto hazy_pyr = image_pyramid(hazy, S);
    const auto gt_pyr = image_pyramid(gt, S);
    std::vector<Tensor> i_hat, j_hat;
    std::vector<std::vector<Tensor>> flows;
    for (const auto& so : r.scales) {
      i_hat.push_back(so.hazy);
      j_hat.push_back(so.scene);
      flows.push_back(so.flows);
    }
    out_sum = add(out_sum, output_loss(r.dehazed, gt));
    phy_sum = add(phy_sum, physical_loss(i_hat, j_hat, hazy_pyr, gt_pyr, S));
    if (cfg.use_msr) {
      flow_sum = add(flow_sum, flow_loss(gt_history, flows, gt_pyr, S, cfg.ranges));
      for (std::size_t s = 0; s < S; ++s) {
        gt_history[s].insert(gt_history[s].begin(), gt_pyr[s]);
        if (gt_history[s].size() > cfg.ranges) gt_history[s].pop_back();
      }
    }
  }
  const double inv = 1.0 / static_cast<double>(clip.size());
  Tensor out = scale(out_sum, inv), phy = scale(phy_sum, inv), flow = scale(flow_sum, inv);
  ClipLoss result;
  result.total = total_loss(out, phy, flow, cfg.lambda_phy, cfg.lambda_flow);
  result.report = {out.item(), phy.item(), flow.item(), result.total.item()};
  return result;
}

LossReport evaluate_loss(const TrainingClip& clip, const Parameters& params, const NetworkConfig& cfg) {
  NoGradGuard no_grad;
  return clip_loss(clip, params, cfg).report;
}

namespace {

void check_finite(const LossReport& r) {
  const std::pair<const char*, double> parts[] = {
      {"output", r.out}, {"physical", r.phy}, {"flow", r.flow}, {"total", r.total}};
  for (const auto& [name, value] : parts) {
    if (!std::isfinite(value)) {
      throw TrainingError(std::string("non-finite ") + name + " loss (out=" + std::to_string(r.out) +
                          ", phy=" + std::to_string(r.phy) + ", flow=" + std::to_string(r.flow) + ")");
    }
  }
}

}  // namespace

StepResult train_step(const TrainingClip& batch, const Parameters& params, const AdamWState& optimizer,
                      const NetworkConfig& cfg) {
  Parameters live;
  for (const auto& [key, p] : params) live[key] = p.leaf(true);

  ClipLoss loss = clip_loss(batch, live, cfg);
  check_finite(loss.report);
  loss.total.backward();

  const double lr = learning_rate(cfg, optimizer.step);
  const double t = static_cast<double>(optimizer.step + 1);
  const double bias1 = 1.0 - std::pow(cfg.beta1, t);
  const double bias2 = 1.0 - std::pow(cfg.beta2, t);

  StepResult out;
  out.loss = loss.report;
  out.optimizer.step = optimizer.step + 1;
  for (const auto& [key, p] : params) {
    const auto g = live.at(key).grad();
    for (double gi : g) {
      if (!std::isfinite(gi)) throw TrainingError("non-finite gradient in parameter '" + key + "'");
    }
    const auto it_m = optimizer.m.find(key);
    const auto it_v = optimizer.v.find(key);
    if (it_m == optimizer.m.end() || it_v == optimizer.v.end()) {
      throw ContractError("optimizer state lacks parameter '" + key + "'");
    }
    std::vector<double> w = p.to_vector(), m = it_m->second.to_vector(), v = it_v->second.to_vector();
    for (std::size_t i = 0; i < w.size(); ++i) {
      m[i] = cfg.beta1 * m[i] + (1.0 - cfg.beta1) * g[i];
      v[i] = cfg.beta2 * v[i] + (1.0 - cfg.beta2) * g[i] * g[i];
      if (lr == 0.0) continue;
      w[i] -= lr * cfg.weight_decay * w[i];
      w[i] -= lr * (m[i] / bias1) / (std::sqrt(v[i] / bias2) + cfg.adam_eps);
    }
    out.params[key] = Tensor::from(p.shape(), std::move(w));
    out.optimizer.m[key] = Tensor::from(p.shape(), std::move(m));
    out.optimizer.v[key] = Tensor::from(p.shape(), std::move(v));
  }
  return out;
}

// ---------------------------------------------------------------------------
// Checkpoint encoding

namespace {

constexpr char kMagic[8] = {'M', 'A', 'P', 'N', 'E', 'T', 'C', 'K'};

template <typename T>
void put(std::string& out, T value) {
  unsigned char buf[sizeof(T)];
  std::memcpy(buf, &value, sizeof(T));
  if constexpr (std::endian::native == std::endian::big) std::reverse(buf, buf + sizeof(T));
  out.append(reinterpret_cast<const char*>(buf), sizeof(T));
}

void put_string(std::string& out, const std::string& s) {
  put<std::uint32_t>(out, static_cast<std::uint32_t>(s.size()));
  out += s;
}

void put_params(std::string& out, const Parameters& params) {
  put<std::uint32_t>(out, static_cast<std::uint32_t>(params.size()));
  for (const auto& [key, t] : params) {
    put_string(out, key);
    put<std::uint32_t>(out, static_cast<std::uint32_t>(t.rank()));
    for (auto d : t.shape()) put<std::uint64_t>(out, d);
    for (double v : t.data()) put<double>(out, v);
  }
}

class Reader {
 public:
  Reader(const std::string& bytes, std::size_t pos) : bytes_(bytes), pos_(pos) {}

  template <typename T>
  T get() {
    need(sizeof(T));
    unsigned char buf[sizeof(T)];
    std::memcpy(buf, bytes_.data() + pos_, sizeof(T));
    if constexpr (std::endian::native == std::endian::big) std::reverse(buf, buf + sizeof(T));
    pos_ += sizeof(T);
    T value;
    std::memcpy(&value, buf, sizeof(T));
    return value;
  }

  std::string get_string() {
    const auto n = get<std::uint32_t>();
    need(n);
    std::string s = bytes_.substr(pos_, n);
    pos_ += n;
    return s;
  }

  Parameters get_params() {
    Parameters params;
    const auto count = get<std::uint32_t>();
    for (std::uint32_t i = 0; i < count; ++i) {
      std::string key = get_string();
      const auto ndim = get<std::uint32_t>();
      if (ndim > 8) throw DataError("checkpoint: tensor '" + key + "' has implausible rank");
      Shape shape;
      for (std::uint32_t d = 0; d < ndim; ++d) shape.push_back(static_cast<std::size_t>(get<std::uint64_t>()));
      const std::size_t n = shape_numel(shape);
      need(n * sizeof(double));
      std::vector<double> values(n);
      for (auto& v : values) v = get<double>();
      params[key] = Tensor::from(shape, std::move(values));
    }
    return params;
  }

  bool done() const { return pos_ == bytes_.size(); }

 private:
  void need(std::size_t n) const {
    if (bytes_.size() - pos_ < n) throw DataError("checkpoint is truncated");
  }
  const std::string& bytes_;
  std::size_t pos_ = 0;
};

void require_same_keys(const Parameters& a, const Parameters& b, const char* what) {
  if (a.size() != b.size()) throw DataError(std::string("checkpoint: ") + what + " does not match parameters");
  for (const auto& [key, t] : a) {
    auto it = b.find(key);
    if (it == b.end() || it->second.shape() != t.shape()) {
      throw DataError(std::string("checkpoint: ") + what + " entry for '" + key + "' does not match");
    }
  }
}

}  // namespace

std::string encode_checkpoint(const Checkpoint& ckpt) {
  std::string out(kMagic, sizeof(kMagic));
  put<std::uint32_t>(out, kCheckpointVersion);
  const KeyValues kv = ckpt.config.to_key_values();
  put<std::uint32_t>(out, static_cast<std::uint32_t>(kv.size()));
  for (const auto& [k, v] : kv) {
    put_string(out, k);
    put_string(out, v);
  }
  put_params(out, ckpt.params);
  put<std::uint64_t>(out, ckpt.optimizer.step);
  put_params(out, ckpt.optimizer.m);
  put_params(out, ckpt.optimizer.v);
  return out;
}

Checkpoint decode_checkpoint(const std::string& bytes) {
  if (bytes.size() < sizeof(kMagic) || bytes.compare(0, sizeof(kMagic), kMagic, sizeof(kMagic)) != 0) {
    throw DataError("not a checkpoint file (bad magic)");
  }
  Reader in(bytes, sizeof(kMagic));
  const auto version = in.get<std::uint32_t>();
  if (version != kCheckpointVersion) {
    throw DataError("unsupported checkpoint version " + std::to_string(version));
  }
  KeyValues kv;
  const auto n = in.get<std::uint32_t>();
  for (std::uint32_t i = 0; i < n; ++i) {
    std::string k = in.get_string();
    kv[k] = in.get_string();
  }
  Checkpoint ckpt;
  ckpt.config = NetworkConfig::from_key_values(kv);
  ckpt.config.validate();
  ckpt.params = in.get_params();
  ckpt.optimizer.step = in.get<std::uint64_t>();
  ckpt.optimizer.m = in.get_params();
  ckpt.optimizer.v = in.get_params();
  if (!in.done()) throw DataError("checkpoint has trailing bytes");

  const Parameters expected = init_parameters(ckpt.config);
  require_same_keys(expected, ckpt.params, "parameter set");
  require_same_keys(ckpt.params, ckpt.optimizer.m, "first-moment state");
  require_same_keys(ckpt.params, ckpt.optimizer.v, "second-moment state");
  return ckpt;
}

void save_checkpoint(const std::string& path, const Checkpoint& ckpt) {
  write_file_atomic(path, encode_checkpoint(ckpt));
}

Checkpoint load_checkpoint(const std::string& path) { return decode_checkpoint(read_file(path)); }

}  // namespace mapnet
