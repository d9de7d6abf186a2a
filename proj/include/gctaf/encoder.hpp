#pragma once

#include <span>

#include "gctaf/attention.hpp"
#include "gctaf/tensor.hpp"

namespace gctaf {

// Pre-norm transformer encoder block: x + Dropout(MHSA(LN(x))), then
// y = x' + FFN(LN(x')) with FFN = linear -> ReLU -> dropout -> linear.
// The feedforward width may be smaller than N.
struct EncoderBlockParams {
  Tensor norm1_gamma, norm1_beta;  // undefined when layer_norm is disabled
  Tensor norm2_gamma, norm2_beta;
  MhaParams mha;
  Tensor ffn_w1, ffn_b1;  // [N, d_ff], [d_ff]
  Tensor ffn_w2, ffn_b2;  // [d_ff, N], [N]
  double dropout_p = 0.0;
  bool layer_norm = true;

  static EncoderBlockParams init(size_t n_features, size_t heads, size_t head_size, size_t ff_dim,
                                 double dropout_p, bool layer_norm, Rng& rng);

  std::vector<Tensor> parameters() const;
};

Tensor encoder_block_forward(const EncoderBlockParams& params, const Tensor& x, bool training,
                             Rng& rng);

// Sequential composition of blocks; each block preserves [B, S, N].
Tensor encoder_stack_forward(std::span<const EncoderBlockParams> blocks, const Tensor& x,
                             bool training, Rng& rng);

}  // namespace gctaf
