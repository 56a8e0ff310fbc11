#pragma once

#include <cstddef>
#include <deque>

#include "mapnet/layers.hpp"
#include "mapnet/tensor.hpp"

namespace mapnet {

// Memory-based prior guidance. Feature maps are [C, H, W]; flattened views are [H*W, C].

struct PriorCompression {
  Tensor distribution;  ///< [D, H, W], softmax over D at every pixel
  Tensor token;         ///< [D, C]
};

/// token = flatten(D)^T-pooling of the prior: row r = sum_x D[r, x] * P(x). No renormalization.
Tensor pool_prior_token(const Tensor& distribution, const Tensor& prior);

/// Bins the prior with a per-pixel classification head and pools it into a token.
PriorCompression compress_prior(const Tensor& prior, const Conv2d& head, std::size_t bins);

/// Bounded FIFO of prior tokens. Pushing past capacity evicts the oldest token.
class TokenMemory {
 public:
  explicit TokenMemory(std::size_t capacity = 4);

  void push(Tensor token);
  std::size_t size() const { return tokens_.size(); }
  std::size_t capacity() const { return capacity_; }
  bool empty() const { return tokens_.empty(); }
  const std::deque<Tensor>& tokens() const { return tokens_; }

  /// Tokens stacked vertically in insertion order: [size * D, C].
  Tensor keys() const;

 private:
  std::size_t capacity_;
  std::deque<Tensor> tokens_;
};

TokenMemory memory_push(TokenMemory memory, Tensor token);

struct MemoryReadResult {
  Tensor enhanced;  ///< [C, H, W]
  Tensor weights;   ///< [H*W, N*D]; undefined when the memory was empty
};

/// softmax(Q K^T / sqrt(C)) V with Q the flattened prior and K = V the stacked tokens.
/// An empty memory passes the prior through unchanged.
MemoryReadResult memory_read_detailed(const Tensor& prior, const TokenMemory& memory);
Tensor memory_read(const Tensor& prior, const TokenMemory& memory);

struct GuideParams {
  Conv2d fuse_in;   ///< 2C -> C
  Conv2d fuse_out;  ///< C -> C, zero-initialized
};

/// j_init + fuse_out(act(fuse_in([p_enh, j_init])))
Tensor guide_scene(const Tensor& p_enh, const Tensor& j_init, const GuideParams& params);

}  // namespace mapnet
