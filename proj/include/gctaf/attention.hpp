#pragma once

#include "gctaf/tensor.hpp"

namespace gctaf {

// Multi-head attention projections. "Head size" is the per-head width d_k;
// the query/key/value projections map the feature width N up to heads * d_k
// and w_o maps back down to N, so d_k may exceed N.
struct MhaParams {
  Tensor w_q, b_q;  // [N, heads * d_k], [heads * d_k]
  Tensor w_k, b_k;
  Tensor w_v, b_v;
  Tensor w_o, b_o;  // [heads * d_k, N], [N]
  size_t heads = 1;
  size_t head_size = 1;

  static MhaParams init(size_t n_features, size_t heads, size_t head_size, Rng& rng);

  size_t n_features() const;
  std::vector<Tensor> parameters() const;
};

// Scaled dot-product attention over all heads: per head i,
// softmax(Q_i K_i^T / sqrt(d_k)) V_i, heads concatenated and projected back to
// N by w_o. Dropout is applied once, to the projected output. No masking;
// sequences are fixed-length.
Tensor multi_head_attention(const MhaParams& params, const Tensor& query, const Tensor& key,
                            const Tensor& value, double dropout_p, bool training, Rng& rng);

Tensor self_attention(const MhaParams& params, const Tensor& x, double dropout_p, bool training,
                      Rng& rng);

}  // namespace gctaf
