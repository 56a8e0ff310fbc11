#pragma once

#include <cstddef>
#include <vector>

#include "mapnet/tensor.hpp"

namespace mapnet {

struct LossReport {
  double out = 0.0;
  double phy = 0.0;
  double flow = 0.0;
  double total = 0.0;
};

inline constexpr double kDefaultLambdaPhy = 0.2;
inline constexpr double kDefaultLambdaFlow = 0.04;

/// Mean absolute error.
Tensor l1_loss(const Tensor& a, const Tensor& b);

Tensor output_loss(const Tensor& j_hat, const Tensor& j_gt);

/// Weight 2^(s - (S-1)) of scale s, where s = S-1 is full resolution.
double scale_weight(std::size_t s, std::size_t scales);

/// sum_s [2^(s-(S-1)) * L1(I_hat_s, I_s) + L1(J_hat_s, J_s)]. Only the reconstruction term is
/// scale-weighted. Every list must hold `scales` entries.
Tensor physical_loss(const std::vector<Tensor>& i_hat, const std::vector<Tensor>& j_hat,
                     const std::vector<Tensor>& i_gt, const std::vector<Tensor>& j_gt, std::size_t scales);

/// sum_s sum_r 2^(s-(S-1)) * L1(sample(range set r of gt_history[s], flows[s][r]), targets[s]).
/// gt_history[s] holds past ground-truth frames at scale s, most recent first.
Tensor flow_loss(const std::vector<std::vector<Tensor>>& gt_history, const std::vector<std::vector<Tensor>>& flows,
                 const std::vector<Tensor>& targets, std::size_t scales, std::size_t ranges);

LossReport total_loss(double out, double phy, double flow, double lambda_phy = kDefaultLambdaPhy,
                      double lambda_flow = kDefaultLambdaFlow);

Tensor total_loss(const Tensor& out, const Tensor& phy, const Tensor& flow, double lambda_phy, double lambda_flow);

}  // namespace mapnet
