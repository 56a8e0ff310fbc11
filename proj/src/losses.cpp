#include "mapnet/losses.hpp"

#include <cmath>
#include <string>

#include "mapnet/multirange.hpp"

namespace mapnet {

Tensor l1_loss(const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape()) {
    throw DimensionError("l1_loss: shape mismatch " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
  }
  return mean(abs(sub(a, b)));
}

Tensor output_loss(const Tensor& j_hat, const Tensor& j_gt) { return l1_loss(j_hat, j_gt); }

double scale_weight(std::size_t s, std::size_t scales) {
  return std::ldexp(1.0, static_cast<int>(s) - static_cast<int>(scales) + 1);
}

namespace {
void require_scales(const char* what, std::size_t got, std::size_t scales) {
  if (got != scales) {
    throw ContractError(std::string(what) + ": expected " + std::to_string(scales) + " scales, got " +
                        std::to_string(got));
  }
}
}  // namespace

Tensor physical_loss(const std::vector<Tensor>& i_hat, const std::vector<Tensor>& j_hat,
                     const std::vector<Tensor>& i_gt, const std::vector<Tensor>& j_gt, std::size_t scales) {
  require_scales("physical_loss predicted I", i_hat.size(), scales);
  require_scales("physical_loss predicted J", j_hat.size(), scales);
  require_scales("physical_loss target I", i_gt.size(), scales);
  require_scales("physical_loss target J", j_gt.size(), scales);
  Tensor total = Tensor::scalar(0.0);
  for (std::size_t s = 0; s < scales; ++s) {
    if (!i_hat[s].defined() || !j_hat[s].defined() || !i_gt[s].defined() || !j_gt[s].defined()) {
      throw ContractError("physical_loss: scale " + std::to_string(s) + " is missing");
    }
    Tensor term = add(scale(l1_loss(i_hat[s], i_gt[s]), scale_weight(s, scales)), l1_loss(j_hat[s], j_gt[s]));
    total = add(total, term);
  }
  return total;
}

Tensor flow_loss(const std::vector<std::vector<Tensor>>& gt_history, const std::vector<std::vector<Tensor>>& flows,
                 const std::vector<Tensor>& targets, std::size_t scales, std::size_t ranges) {
  require_scales("flow_loss history", gt_history.size(), scales);
  require_scales("flow_loss flows", flows.size(), scales);
  require_scales("flow_loss targets", targets.size(), scales);
  Tensor total = Tensor::scalar(0.0);
  for (std::size_t s = 0; s < scales; ++s) {
    if (flows[s].size() != ranges) {
      throw ContractError("flow_loss: scale " + std::to_string(s) + " has " + std::to_string(flows[s].size()) +
                          " flows, expected " + std::to_string(ranges));
    }
    auto sets = build_range_sets(gt_history[s], ranges, targets[s]);
    for (std::size_t r = 0; r < ranges; ++r) {
      if (!flows[s][r].defined()) {
        throw ContractError("flow_loss: flow for scale " + std::to_string(s) + ", range " + std::to_string(r + 1) +
                            " is missing");
      }
      Tensor warped = space_time_sample(sets[r].stacked(), flows[s][r]);
      total = add(total, scale(l1_loss(warped, targets[s]), scale_weight(s, scales)));
    }
  }
  return total;
}

LossReport total_loss(double out, double phy, double flow, double lambda_phy, double lambda_flow) {
  if (lambda_phy < 0.0 || lambda_flow < 0.0) throw ContractError("total_loss: loss weights must be >= 0");
  return {out, phy, flow, out + lambda_phy * phy + lambda_flow * flow};
}

Tensor total_loss(const Tensor& out, const Tensor& phy, const Tensor& flow, double lambda_phy, double lambda_flow) {
  if (lambda_phy < 0.0 || lambda_flow < 0.0) throw ContractError("total_loss: loss weights must be >= 0");
  return add(add(out, scale(phy, lambda_phy)), scale(flow, lambda_flow));
}

}  // namespace mapnet
