#include "mapnet/prior_guidance.hpp"

#include <cmath>
#include <string>

namespace mapnet {

Tensor pool_prior_token(const Tensor& distribution, const Tensor& prior) {
  if (distribution.rank() != 3 || prior.rank() != 3 || distribution.dim(1) != prior.dim(1) ||
      distribution.dim(2) != prior.dim(2)) {
    throw DimensionError("pool_prior_token: distribution " + shape_str(distribution.shape()) +
                         " and prior " + shape_str(prior.shape()) + " disagree spatially");
  }
  const std::size_t bins = distribution.dim(0), hw = distribution.dim(1) * distribution.dim(2);
  // [D, HW] x [HW, C]
  return matmul(reshape(distribution, {bins, hw}), chw_to_tokens(prior));
}

PriorCompression compress_prior(const Tensor& prior, const Conv2d& head, std::size_t bins) {
  Tensor logits = head(prior);
  if (logits.dim(0) != bins) {
    throw DimensionError("compress_prior: head emits " + std::to_string(logits.dim(0)) + " channels, expected " +
                         std::to_string(bins) + " bins");
  }
  PriorCompression out;
  out.distribution = softmax(logits, 0);
  out.token = pool_prior_token(out.distribution, prior);
  return out;
}

TokenMemory::TokenMemory(std::size_t capacity) : capacity_(capacity) {
  if (capacity == 0) throw ContractError("TokenMemory: capacity must be positive");
}

void TokenMemory::push(Tensor token) {
  if (!tokens_.empty() && token.shape() != tokens_.front().shape()) {
    throw DimensionError("TokenMemory: token " + shape_str(token.shape()) + " differs from stored " +
                         shape_str(tokens_.front().shape()));
  }
  tokens_.push_back(std::move(token));
  while (tokens_.size() > capacity_) tokens_.pop_front();
}

Tensor TokenMemory::keys() const {
  if (tokens_.empty()) throw ContractError("TokenMemory: keys() on empty memory");
  return concat({tokens_.begin(), tokens_.end()}, 0);
}

TokenMemory memory_push(TokenMemory memory, Tensor token) {
  memory.push(std::move(token));
  return memory;
}

MemoryReadResult memory_read_detailed(const Tensor& prior, const TokenMemory& memory) {
  if (memory.empty()) return {prior, Tensor()};
  const std::size_t c = prior.dim(0);
  Tensor keys = memory.keys();
  if (keys.dim(1) != c) {
    throw DimensionError("memory_read: tokens have " + std::to_string(keys.dim(1)) + " channels, prior has " +
                         std::to_string(c));
  }
  Tensor query = chw_to_tokens(prior);
  Tensor weights = softmax(scale(matmul(query, transpose(keys)), 1.0 / std::sqrt(static_cast<double>(c))), 1);
  return {tokens_to_chw(matmul(weights, keys), prior.dim(1), prior.dim(2)), weights};
}

Tensor memory_read(const Tensor& prior, const TokenMemory& memory) {
  return memory_read_detailed(prior, memory).enhanced;
}

Tensor guide_scene(const Tensor& p_enh, const Tensor& j_init, const GuideParams& params) {
  if (p_enh.shape() != j_init.shape()) {
    throw DimensionError("guide_scene: prior " + shape_str(p_enh.shape()) + " vs scene " + shape_str(j_init.shape()));
  }
  Tensor hidden = leaky_relu(params.fuse_in(concat({p_enh, j_init}, 0)), kLeakySlope);
  return add(j_init, params.fuse_out(hidden));
}

}  // namespace mapnet
