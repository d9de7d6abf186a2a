#include "gctaf/attention.hpp"

#include <cmath>

#include "gctaf/errors.hpp"

namespace gctaf {

static Tensor init_weight(size_t fan_in, size_t fan_out, Rng& rng) {
  double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
  return Tensor::uniform({fan_in, fan_out}, -bound, bound, rng).set_requires_grad();
}

MhaParams MhaParams::init(size_t n_features, size_t heads, size_t head_size, Rng& rng) {
  if (heads < 1 || head_size < 1) {
    throw ConfigError("attention requires heads >= 1 and head_size >= 1");
  }
  size_t width = heads * head_size;
  MhaParams p;
  p.heads = heads;
  p.head_size = head_size;
  p.w_q = init_weight(n_features, width, rng);
  p.b_q = Tensor::zeros({width}).set_requires_grad();
  p.w_k = init_weight(n_features, width, rng);
  p.b_k = Tensor::zeros({width}).set_requires_grad();
  p.w_v = init_weight(n_features, width, rng);
  p.b_v = Tensor::zeros({width}).set_requires_grad();
  p.w_o = init_weight(width, n_features, rng);
  p.b_o = Tensor::zeros({n_features}).set_requires_grad();
  return p;
}

size_t MhaParams::n_features() const { return w_q.shape()[0]; }

std::vector<Tensor> MhaParams::parameters() const {
  return {w_q, b_q, w_k, b_k, w_v, b_v, w_o, b_o};
}

// Projects [B, L, N] to per-head layout [B, heads, L, d_k].
static Tensor project_heads(const Tensor& x, const Tensor& w, const Tensor& b, size_t heads,
                            size_t head_size) {
  size_t batch = x.shape()[0];
  size_t len = x.shape()[1];
  Tensor proj = linear(x, w, b);  // [B, L, heads * d_k]
  proj = reshape(proj, {batch, len, heads, head_size});
  return transpose(proj, 1, 2);
}

Tensor multi_head_attention(const MhaParams& params, const Tensor& query, const Tensor& key,
                            const Tensor& value, double dropout_p, bool training, Rng& rng) {
  if (query.rank() != 3 || key.rank() != 3 || value.rank() != 3) {
    throw DimensionError("attention expects rank-3 [batch, length, features] inputs; got " +
                         shape_str(query.shape()) + ", " + shape_str(key.shape()) + ", " +
                         shape_str(value.shape()));
  }
  size_t batch = query.shape()[0];
  size_t n = params.n_features();
  if (key.shape()[0] != batch || value.shape()[0] != batch) {
    throw DimensionError("attention batch extents disagree: " + shape_str(query.shape()) + ", " +
                         shape_str(key.shape()) + ", " + shape_str(value.shape()));
  }
  if (key.shape()[1] != value.shape()[1]) {
    throw DimensionError("key and value lengths disagree: " + shape_str(key.shape()) + " vs " +
                         shape_str(value.shape()));
  }
  if (query.shape()[2] != n || key.shape()[2] != n || value.shape()[2] != n) {
    throw DimensionError("attention feature width must be " + std::to_string(n) + "; got " +
                         shape_str(query.shape()) + ", " + shape_str(key.shape()) + ", " +
                         shape_str(value.shape()));
  }

  size_t lq = query.shape()[1];
  Tensor q = project_heads(query, params.w_q, params.b_q, params.heads, params.head_size);
  Tensor k = project_heads(key, params.w_k, params.b_k, params.heads, params.head_size);
  Tensor v = project_heads(value, params.w_v, params.b_v, params.heads, params.head_size);

  Tensor scores = matmul(q, transpose(k, 2, 3));  // [B, h, Lq, Lk]
  scores = scale(scores, 1.0 / std::sqrt(static_cast<double>(params.head_size)));
  Tensor weights = softmax(scores, 3);
  Tensor context = matmul(weights, v);  // [B, h, Lq, d_k]
  context = transpose(context, 1, 2);
  context = reshape(context, {batch, lq, params.heads * params.head_size});
  Tensor out = linear(context, params.w_o, params.b_o);
  return dropout(out, dropout_p, training, rng);
}

Tensor self_attention(const MhaParams& params, const Tensor& x, double dropout_p, bool training,
                      Rng& rng) {
  return multi_head_attention(params, x, x, x, dropout_p, training, rng);
}

}  // namespace gctaf
