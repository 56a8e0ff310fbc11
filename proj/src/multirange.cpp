#include "mapnet/multirange.hpp"

#include <algorithm>
#include <cmath>
#include <string>

namespace mapnet {

namespace {

// Linear interpolation setup along one axis.
struct AxisTap {
  std::size_t i0 = 0;
  std::size_t i1 = 0;
  double frac = 0.0;
  double dfrac = 0.0;  // d frac / d normalized coordinate
};

AxisTap axis_tap(double coord, std::size_t extent) {
  AxisTap tap;
  if (extent <= 1) return tap;
  const double span = static_cast<double>(extent - 1);
  const bool inside = coord >= -1.0 && coord <= 1.0;
  double idx = (std::clamp(coord, -1.0, 1.0) + 1.0) * 0.5 * span;
  // Snap index values that are integers up to rounding, so identity flows reproduce exactly.
  const double nearest = std::round(idx);
  if (std::abs(idx - nearest) < 1e-10) idx = nearest;
  tap.i0 = std::min(static_cast<std::size_t>(std::floor(idx)), extent - 2);
  tap.i1 = tap.i0 + 1;
  tap.frac = idx - static_cast<double>(tap.i0);
  tap.dfrac = inside ? 0.5 * span : 0.0;
  return tap;
}

}  // namespace

double normalized_coord(std::size_t i, std::size_t extent) {
  if (extent <= 1) return 0.0;
  return -1.0 + 2.0 * static_cast<double>(i) / static_cast<double>(extent - 1);
}

Tensor identity_flow(std::size_t height, std::size_t width, double time) {
  const std::size_t hw = height * width;
  std::vector<double> v(3 * hw);
  for (std::size_t y = 0; y < height; ++y)
    for (std::size_t x = 0; x < width; ++x) {
      const std::size_t p = y * width + x;
      v[p] = time;
      v[hw + p] = normalized_coord(y, height);
      v[2 * hw + p] = normalized_coord(x, width);
    }
  return Tensor::from({3, height, width}, std::move(v));
}

Tensor space_time_sample(const Tensor& stack, const Tensor& flow) {
  if (stack.rank() != 4) throw DimensionError("space_time_sample: stack must be [r,C,H,W], got " + shape_str(stack.shape()));
  const std::size_t r = stack.dim(0), c = stack.dim(1), h = stack.dim(2), w = stack.dim(3);
  if (flow.shape() != Shape{3, h, w}) {
    throw DimensionError("space_time_sample: flow " + shape_str(flow.shape()) + " does not match stack " +
                         shape_str(stack.shape()));
  }
  const std::size_t hw = h * w;
  auto fv = flow.data();
  struct Taps {
    AxisTap t, y, x;
  };
  std::vector<Taps> taps(hw);
  for (std::size_t p = 0; p < hw; ++p) {
    taps[p] = {axis_tap(fv[p], r), axis_tap(fv[hw + p], h), axis_tap(fv[2 * hw + p], w)};
  }

  auto sv = stack.data();
  auto at = [&](std::size_t t, std::size_t ch, std::size_t y, std::size_t x) {
    return sv[((t * c + ch) * h + y) * w + x];
  };
  std::vector<double> out(c * hw);
  for (std::size_t ch = 0; ch < c; ++ch) {
    for (std::size_t p = 0; p < hw; ++p) {
      const auto& [tt, ty, tx] = taps[p];
      const double wt[2] = {1.0 - tt.frac, tt.frac};
      const double wy[2] = {1.0 - ty.frac, ty.frac};
      const double wx[2] = {1.0 - tx.frac, tx.frac};
      const std::size_t ti[2] = {tt.i0, tt.i1}, yi[2] = {ty.i0, ty.i1}, xi[2] = {tx.i0, tx.i1};
      double acc = 0.0;
      for (int a = 0; a < 2; ++a) {
        if (wt[a] == 0.0) continue;
        for (int b = 0; b < 2; ++b) {
          if (wy[b] == 0.0) continue;
          for (int e = 0; e < 2; ++e) {
            if (wx[e] == 0.0) continue;
            acc += wt[a] * wy[b] * wx[e] * at(ti[a], ch, yi[b], xi[e]);
          }
        }
      }
      out[ch * hw + p] = acc;
    }
  }

  return autograd::record(
      {c, h, w}, std::move(out), {stack, flow},
      [stack, flow, taps = std::move(taps), c, h, w, hw](std::span<const double> g) {
        auto sv = stack.data();
        auto idx = [&](std::size_t t, std::size_t ch, std::size_t y, std::size_t x) {
          return ((t * c + ch) * h + y) * w + x;
        };
        const bool want_stack = autograd::wants_grad(stack), want_flow = autograd::wants_grad(flow);
        double* gs = want_stack ? autograd::input_grad(stack).data() : nullptr;
        double* gf = want_flow ? autograd::input_grad(flow).data() : nullptr;
        for (std::size_t p = 0; p < hw; ++p) {
          const auto& [tt, ty, tx] = taps[p];
          const double wt[2] = {1.0 - tt.frac, tt.frac};
          const double wy[2] = {1.0 - ty.frac, ty.frac};
          const double wx[2] = {1.0 - tx.frac, tx.frac};
          const double dw[2] = {-1.0, 1.0};
          const std::size_t ti[2] = {tt.i0, tt.i1}, yi[2] = {ty.i0, ty.i1}, xi[2] = {tx.i0, tx.i1};
          double dt = 0.0, dy = 0.0, dx = 0.0;
          for (std::size_t ch = 0; ch < c; ++ch) {
            const double go = g[ch * hw + p];
            if (go == 0.0) continue;
            for (int a = 0; a < 2; ++a)
              for (int b = 0; b < 2; ++b)
                for (int e = 0; e < 2; ++e) {
                  const std::size_t k = idx(ti[a], ch, yi[b], xi[e]);
                  if (gs) gs[k] += go * wt[a] * wy[b] * wx[e];
                  if (gf) {
                    const double v = go * sv[k];
                    dt += v * dw[a] * wy[b] * wx[e];
                    dy += v * wt[a] * dw[b] * wx[e];
                    dx += v * wt[a] * wy[b] * dw[e];
                  }
                }
          }
          if (gf) {
            gf[p] += dt * tt.dfrac;
            gf[hw + p] += dy * ty.dfrac;
            gf[2 * hw + p] += dx * tx.dfrac;
          }
        }
      });
}

std::vector<RangeSet> build_range_sets(const std::vector<Tensor>& history, std::size_t ranges,
                                       const Tensor& target) {
  if (ranges == 0) throw ContractError("build_range_sets: need at least one range");
  const std::vector<Tensor> past = history.empty() ? std::vector<Tensor>{target} : history;
  std::vector<RangeSet> sets;
  sets.reserve(ranges);
  for (std::size_t r = 1; r <= ranges; ++r) {
    RangeSet set{r, {}};
    for (std::size_t i = 0; i < r; ++i) set.frames.push_back(past[std::min(i, past.size() - 1)]);
    sets.push_back(std::move(set));
  }
  return sets;
}

Tensor refine_flow(const Tensor& j_target, const Tensor& aligned, const Tensor& flow_init, const OffsetNet& net) {
  if (j_target.shape() != aligned.shape() || flow_init.rank() != 3 || flow_init.dim(0) != 3 ||
      flow_init.dim(1) != j_target.dim(1) || flow_init.dim(2) != j_target.dim(2)) {
    throw DimensionError("refine_flow: target " + shape_str(j_target.shape()) + ", aligned " +
                         shape_str(aligned.shape()) + ", flow " + shape_str(flow_init.shape()));
  }
  Tensor hidden = leaky_relu(net.hidden(concat({j_target, aligned, flow_init}, 0)), kLeakySlope);
  return clamp(add(net.out(hidden), flow_init), -1.0, 1.0);
}

std::size_t effective_window(std::size_t height, std::size_t width, std::size_t window) {
  const std::size_t w = std::min({window, height, width});
  if (w == 0 || height % w != 0 || width % w != 0) {
    throw DimensionError("window " + std::to_string(window) + " does not tile a " + std::to_string(height) + "x" +
                         std::to_string(width) + " map");
  }
  return w;
}

Tensor window_cross_attention(const Tensor& q, const Tensor& k, const Tensor& v, std::size_t height,
                              std::size_t width, std::size_t window, std::size_t heads) {
  if (q.rank() != 2 || q.shape() != k.shape() || q.shape() != v.shape() || q.dim(0) != height * width) {
    throw DimensionError("window_cross_attention: q " + shape_str(q.shape()) + ", k " + shape_str(k.shape()) +
                         ", v " + shape_str(v.shape()) + " for a " + std::to_string(height) + "x" +
                         std::to_string(width) + " map");
  }
  const std::size_t c = q.dim(1);
  if (heads == 0 || c % heads != 0) {
    throw DimensionError("window_cross_attention: " + std::to_string(c) + " channels not divisible by " +
                         std::to_string(heads) + " heads");
  }
  const std::size_t ws = effective_window(height, width, window);
  const std::size_t ny = height / ws, nx = width / ws, d = c / heads;
  const Shape split{ny, ws, nx, ws, heads, d};
  const Shape batched{ny * nx * heads, ws * ws, d};
  auto partition = [&](const Tensor& t) { return reshape(permute(reshape(t, split), {0, 2, 4, 1, 3, 5}), batched); };

  Tensor qw = partition(q), kw = partition(k), vw = partition(v);
  Tensor scores = scale(bmm(qw, permute(kw, {0, 2, 1})), 1.0 / std::sqrt(static_cast<double>(d)));
  Tensor attn = bmm(softmax(scores, 2), vw);
  return reshape(permute(reshape(attn, {ny, nx, heads, ws, ws, d}), {0, 3, 1, 4, 2, 5}), {height * width, c});
}

StdaOutput stda(const Tensor& j_target, const RangeSet& set, const Tensor& flow_init, const StdaParams& params) {
  const std::size_t c = j_target.dim(0), h = j_target.dim(1), w = j_target.dim(2);
  Tensor stacked = set.stacked();
  if (stacked.dim(1) != c || stacked.dim(2) != h || stacked.dim(3) != w) {
    throw DimensionError("stda: range stack " + shape_str(stacked.shape()) + " does not match target " +
                         shape_str(j_target.shape()));
  }
  StdaOutput out;
  Tensor initial = space_time_sample(stacked, flow_init);
  out.flow = refine_flow(j_target, initial, flow_init, params.offset);
  out.aligned = space_time_sample(stacked, out.flow);

  Tensor q = matmul(chw_to_tokens(j_target), params.query_proj);
  Tensor kv = matmul(chw_to_tokens(out.aligned), params.key_value_proj);
  Tensor k = slice(kv, 1, 0, c), v = slice(kv, 1, c, 2 * c);
  out.attention = tokens_to_chw(window_cross_attention(q, k, v, h, w, params.window, params.heads), h, w);
  Tensor ffn = params.ffn_out(leaky_relu(params.ffn_in(out.attention), kLeakySlope));
  out.feature = add(out.attention, ffn);
  return out;
}

GmraOutput gmra(const std::vector<Tensor>& range_feats, const std::vector<Tensor>& aligned_priors,
                const Tensor& j_target, const Tensor& p_target) {
  if (range_feats.empty()) throw DimensionError("gmra: no range features");
  if (!aligned_priors.empty() && aligned_priors.size() != range_feats.size()) {
    throw DimensionError("gmra: " + std::to_string(range_feats.size()) + " range features but " +
                         std::to_string(aligned_priors.size()) + " aligned priors");
  }
  const std::size_t ranges = range_feats.size();
  const std::size_t c = j_target.dim(0), h = j_target.dim(1), w = j_target.dim(2), hw = h * w;
  const double inv_sqrt_c = 1.0 / std::sqrt(static_cast<double>(c));

  // [R, C, H, W] -> [HW, R, C]
  auto per_pixel = [&](const std::vector<Tensor>& maps) {
    return reshape(permute(stack(maps), {2, 3, 0, 1}), {hw, ranges, c});
  };
  auto score = [&](const Tensor& query, const Tensor& keys) {
    if (query.shape() != Shape{c, h, w}) {
      throw DimensionError("gmra: query " + shape_str(query.shape()) + " does not match " + shape_str(j_target.shape()));
    }
    Tensor q = reshape(chw_to_tokens(query), {hw, 1, c});
    return scale(bmm(q, permute(keys, {0, 2, 1})), inv_sqrt_c);  // [HW, 1, R]
  };

  Tensor values = per_pixel(range_feats);
  Tensor logits = score(j_target, values);
  if (!aligned_priors.empty()) logits = add(logits, score(p_target, per_pixel(aligned_priors)));
  Tensor weights = softmax(logits, 2);

  GmraOutput out;
  out.feature = tokens_to_chw(reshape(bmm(weights, values), {hw, c}), h, w);
  out.weights = reshape(transpose(reshape(weights, {hw, ranges})), {ranges, h, w});
  return out;
}

}  // namespace mapnet
