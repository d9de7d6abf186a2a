#include "gctaf/encoder.hpp"

#include <cmath>

#include "gctaf/errors.hpp"

namespace gctaf {

EncoderBlockParams EncoderBlockParams::init(size_t n_features, size_t heads, size_t head_size,
                                            size_t ff_dim, double dropout_p, bool layer_norm,
                                            Rng& rng) {
  if (ff_dim < 1) throw ConfigError("encoder block requires ff_dim >= 1");
  EncoderBlockParams p;
  p.dropout_p = dropout_p;
  p.layer_norm = layer_norm;
  if (layer_norm) {
    p.norm1_gamma = Tensor::full({n_features}, 1.0).set_requires_grad();
    p.norm1_beta = Tensor::zeros({n_features}).set_requires_grad();
    p.norm2_gamma = Tensor::full({n_features}, 1.0).set_requires_grad();
    p.norm2_beta = Tensor::zeros({n_features}).set_requires_grad();
  }
  p.mha = MhaParams::init(n_features, heads, head_size, rng);
  double bound1 = 1.0 / std::sqrt(static_cast<double>(n_features));
  p.ffn_w1 = Tensor::uniform({n_features, ff_dim}, -bound1, bound1, rng).set_requires_grad();
  p.ffn_b1 = Tensor::zeros({ff_dim}).set_requires_grad();
  double bound2 = 1.0 / std::sqrt(static_cast<double>(ff_dim));
  p.ffn_w2 = Tensor::uniform({ff_dim, n_features}, -bound2, bound2, rng).set_requires_grad();
  p.ffn_b2 = Tensor::zeros({n_features}).set_requires_grad();
  return p;
}

std::vector<Tensor> EncoderBlockParams::parameters() const {
  std::vector<Tensor> out;
  if (layer_norm) {
    out.insert(out.end(), {norm1_gamma, norm1_beta, norm2_gamma, norm2_beta});
  }
  auto mha_params = mha.parameters();
  out.insert(out.end(), mha_params.begin(), mha_params.end());
  out.insert(out.end(), {ffn_w1, ffn_b1, ffn_w2, ffn_b2});
  return out;
}

Tensor encoder_block_forward(const EncoderBlockParams& params, const Tensor& x, bool training,
                             Rng& rng) {
  if (x.rank() != 3 || x.shape()[2] != params.mha.n_features()) {
    throw DimensionError("encoder block expects [batch, length, " +
                         std::to_string(params.mha.n_features()) + "]; got " +
                         shape_str(x.shape()));
  }
  Tensor x_norm = params.layer_norm ? layer_norm(x, params.norm1_gamma, params.norm1_beta) : x;
  // The attention output already carries the post-attention dropout.
  Tensor attn = self_attention(params.mha, x_norm, params.dropout_p, training, rng);
  Tensor x1 = add(x, attn);

  Tensor x1_norm = params.layer_norm ? layer_norm(x1, params.norm2_gamma, params.norm2_beta) : x1;
  Tensor hidden = relu(linear(x1_norm, params.ffn_w1, params.ffn_b1));
  hidden = dropout(hidden, params.dropout_p, training, rng);
  Tensor ffn = linear(hidden, params.ffn_w2, params.ffn_b2);
  return add(x1, ffn);
}

Tensor encoder_stack_forward(std::span<const EncoderBlockParams> blocks, const Tensor& x,
                             bool training, Rng& rng) {
  if (blocks.empty()) throw ConfigError("encoder stack requires at least one block");
  Tensor out = x;
  for (const EncoderBlockParams& block : blocks) {
    out = encoder_block_forward(block, out, training, rng);
  }
  return out;
}

}  // namespace gctaf
