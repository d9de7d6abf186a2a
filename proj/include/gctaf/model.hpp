#pragma once

#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "gctaf/encoder.hpp"
#include "gctaf/tensor.hpp"

#include "json.hpp"

namespace gctaf {

enum class Ablation { none, no_global_tokens, no_cross_attention, no_layer_norm };

const char* ablation_key(Ablation a);                 // config token, e.g. "no_global_tokens"
const char* ablation_label(Ablation a);               // human label, e.g. "no global tokens"
Ablation ablation_from_key(const std::string& key);

struct ModelConfig {
  size_t tau = 60;
  size_t n_features = 24;
  size_t num_classes = 2;
  size_t global_tokens = 4;
  size_t num_blocks = 1;
  size_t heads = 4;
  size_t head_size = 256;
  size_t ff_dim = 4;
  std::vector<size_t> mlp_units = {128, 64};
  double dropout = 0.1;
  Ablation ablation = Ablation::none;
  bool positional_encoding = false;
  uint64_t seed = 42;

  void validate() const;  // throws ConfigError
  nlohmann::json to_json() const;
  static ModelConfig from_json(const nlohmann::json& j);
};

// All learnable state. global_tokens and cross_attn are undefined for the
// ablations that remove them; block norm tensors are undefined under
// no_layer_norm. Removed components contribute no parameters.
struct GctafParams {
  Tensor global_tokens;  // [1, G, N]
  MhaParams cross_attn;
  std::vector<EncoderBlockParams> blocks;
  std::vector<std::pair<Tensor, Tensor>> mlp;  // (weights, bias) per hidden layer
  Tensor out_w, out_b;                         // [last width, C], [C]

  bool has_global_tokens() const { return global_tokens.defined(); }
  bool has_cross_attention() const { return cross_attn.w_q.defined(); }

  std::vector<std::pair<std::string, Tensor>> named_parameters() const;  // canonical order
  std::vector<Tensor> parameters() const;
  GctafParams clone() const;  // deep copy of values, fresh leaves
};

GctafParams init_params(const ModelConfig& cfg, Rng& rng);

// Closed-form learnable-parameter count for a config (see README for the
// expression); matches the brute-force sum over init_params tensors.
size_t parameter_count(const ModelConfig& cfg);

// Stage shapes of one forward pass, for shape-contract checks.
struct ForwardTrace {
  Shape cross_out;   // [B, G, N]
  Shape fused_seq;   // [B, tau+G, N]
  Shape local_pool;  // [B, N]
  Shape global_pool; // [B, N]
  Shape fused_vec;   // [B, 2N]
  Shape logits;      // [B, C]
};

// Full classifier forward: cross-attention of the global tokens over the
// input, concatenation along time, encoder stack, split at tau, pooling,
// fusion to [B, 2N], MLP head, final linear to C logits. Handles every
// ablation variant.
Tensor forward(const GctafParams& params, const ModelConfig& cfg, const Tensor& x, bool training,
               Rng& rng, ForwardTrace* trace = nullptr);

// Same as forward but insists the config is an ablation variant.
Tensor forward_ablated(const GctafParams& params, const ModelConfig& cfg, const Tensor& x,
                       bool training, Rng& rng, ForwardTrace* trace = nullptr);

// Checkpoint container: magic "GCTAF1", length-prefixed canonical-JSON
// ModelConfig, then every tensor as (name length, name, rank, extents,
// little-endian float64 payload). Round-trips bit-exactly.
void save_params(const GctafParams& params, const ModelConfig& cfg, const std::string& path);
std::pair<GctafParams, ModelConfig> load_params(const std::string& path);

}  // namespace gctaf
