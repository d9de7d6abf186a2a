#include "gctaf/model.hpp"

#include <array>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>

#include "gctaf/errors.hpp"

namespace gctaf {

const char* ablation_key(Ablation a) {
  switch (a) {
    case Ablation::none: return "none";
    case Ablation::no_global_tokens: return "no_global_tokens";
    case Ablation::no_cross_attention: return "no_cross_attention";
    case Ablation::no_layer_norm: return "no_layer_norm";
  }
  return "none";
}

const char* ablation_label(Ablation a) {
  switch (a) {
    case Ablation::none: return "full";
    case Ablation::no_global_tokens: return "no global tokens";
    case Ablation::no_cross_attention: return "no cross-attention";
    case Ablation::no_layer_norm: return "no layer normalization";
  }
  return "full";
}

Ablation ablation_from_key(const std::string& key) {
  if (key == "none") return Ablation::none;
  if (key == "no_global_tokens") return Ablation::no_global_tokens;
  if (key == "no_cross_attention") return Ablation::no_cross_attention;
  if (key == "no_layer_norm") return Ablation::no_layer_norm;
  throw ConfigError("unknown ablation '" + key +
                    "' (expected none | no_global_tokens | no_cross_attention | no_layer_norm)");
}

void ModelConfig::validate() const {
  if (tau < 1) throw ConfigError("tau must be >= 1");
  if (n_features < 1) throw ConfigError("n_features must be >= 1");
  if (num_classes < 2) throw ConfigError("num_classes must be >= 2");
  if (num_blocks < 1) throw ConfigError("num_blocks must be >= 1");
  if (heads < 1) throw ConfigError("heads must be >= 1");
  if (head_size < 1) throw ConfigError("head_size must be >= 1");
  if (ff_dim < 1) throw ConfigError("ff_dim must be >= 1");
  if (mlp_units.empty()) throw ConfigError("mlp_units must be non-empty");
  for (size_t u : mlp_units) {
    if (u < 1) throw ConfigError("mlp_units entries must be >= 1");
  }
  if (dropout < 0.0 || dropout >= 1.0) throw ConfigError("dropout must satisfy 0 <= p < 1");
  if (ablation != Ablation::no_global_tokens && global_tokens < 1) {
    throw ConfigError("global_tokens must be >= 1 unless ablation is no_global_tokens");
  }
}

nlohmann::json ModelConfig::to_json() const {
  return {
      {"tau", tau},
      {"n_features", n_features},
      {"num_classes", num_classes},
      {"global_tokens", global_tokens},
      {"num_blocks", num_blocks},
      {"heads", heads},
      {"head_size", head_size},
      {"ff_dim", ff_dim},
      {"mlp_units", mlp_units},
      {"dropout", dropout},
      {"ablation", ablation_key(ablation)},
      {"positional_encoding", positional_encoding},
      {"seed", seed},
  };
}

ModelConfig ModelConfig::from_json(const nlohmann::json& j) {
  static const std::array<const char*, 13> known = {
      "tau",     "n_features", "num_classes", "global_tokens",       "num_blocks",
      "heads",   "head_size",  "ff_dim",      "mlp_units",           "dropout",
      "ablation", "positional_encoding", "seed"};
  for (const auto& item : j.items()) {
    bool ok = false;
    for (const char* k : known) ok = ok || item.key() == k;
    if (!ok) throw ConfigError("unknown model config key '" + item.key() + "'");
  }
  ModelConfig cfg;
  cfg.tau = j.value("tau", cfg.tau);
  cfg.n_features = j.value("n_features", cfg.n_features);
  cfg.num_classes = j.value("num_classes", cfg.num_classes);
  cfg.global_tokens = j.value("global_tokens", cfg.global_tokens);
  cfg.num_blocks = j.value("num_blocks", cfg.num_blocks);
  cfg.heads = j.value("heads", cfg.heads);
  cfg.head_size = j.value("head_size", cfg.head_size);
  cfg.ff_dim = j.value("ff_dim", cfg.ff_dim);
  cfg.mlp_units = j.value("mlp_units", cfg.mlp_units);
  cfg.dropout = j.value("dropout", cfg.dropout);
  cfg.ablation = ablation_from_key(j.value("ablation", std::string(ablation_key(cfg.ablation))));
  cfg.positional_encoding = j.value("positional_encoding", cfg.positional_encoding);
  cfg.seed = j.value("seed", cfg.seed);
  cfg.validate();
  return cfg;
}

// ---------------------------------------------------------------------------
// parameters

static Tensor init_weight(size_t fan_in, size_t fan_out, Rng& rng) {
  double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
  return Tensor::uniform({fan_in, fan_out}, -bound, bound, rng).set_requires_grad();
}

GctafParams init_params(const ModelConfig& cfg, Rng& rng) {
  cfg.validate();
  GctafParams p;
  size_t n = cfg.n_features;
  if (cfg.ablation != Ablation::no_global_tokens) {
    double bound = 1.0 / std::sqrt(static_cast<double>(n));
    p.global_tokens =
        Tensor::uniform({1, cfg.global_tokens, n}, -bound, bound, rng).set_requires_grad();
  }
  if (cfg.ablation != Ablation::no_global_tokens &&
      cfg.ablation != Ablation::no_cross_attention) {
    p.cross_attn = MhaParams::init(n, cfg.heads, cfg.head_size, rng);
  }
  bool layer_norm = cfg.ablation != Ablation::no_layer_norm;
  p.blocks.reserve(cfg.num_blocks);
  for (size_t i = 0; i < cfg.num_blocks; ++i) {
    p.blocks.push_back(EncoderBlockParams::init(n, cfg.heads, cfg.head_size, cfg.ff_dim,
                                                cfg.dropout, layer_norm, rng));
  }
  size_t width = 2 * n;
  for (size_t u : cfg.mlp_units) {
    Tensor w = init_weight(width, u, rng);
    Tensor b = Tensor::zeros({u}).set_requires_grad();
    p.mlp.emplace_back(w, b);
    width = u;
  }
  p.out_w = init_weight(width, cfg.num_classes, rng);
  p.out_b = Tensor::zeros({cfg.num_classes}).set_requires_grad();
  return p;
}

size_t parameter_count(const ModelConfig& cfg) {
  cfg.validate();
  size_t n = cfg.n_features;
  size_t width = cfg.heads * cfg.head_size;
  size_t mha = 3 * (n * width + width) + (width * n + n);
  size_t count = 0;
  if (cfg.ablation != Ablation::no_global_tokens) count += cfg.global_tokens * n;
  if (cfg.ablation != Ablation::no_global_tokens &&
      cfg.ablation != Ablation::no_cross_attention) {
    count += mha;
  }
  size_t ln = cfg.ablation == Ablation::no_layer_norm ? 0 : 4 * n;
  size_t ffn = n * cfg.ff_dim + cfg.ff_dim + cfg.ff_dim * n + n;
  count += cfg.num_blocks * (ln + mha + ffn);
  size_t in = 2 * n;
  for (size_t u : cfg.mlp_units) {
    count += in * u + u;
    in = u;
  }
  count += in * cfg.num_classes + cfg.num_classes;
  return count;
}

static void push_mha(std::vector<std::pair<std::string, Tensor>>& out, const std::string& prefix,
                     const MhaParams& mha) {
  out.emplace_back(prefix + ".w_q", mha.w_q);
  out.emplace_back(prefix + ".b_q", mha.b_q);
  out.emplace_back(prefix + ".w_k", mha.w_k);
  out.emplace_back(prefix + ".b_k", mha.b_k);
  out.emplace_back(prefix + ".w_v", mha.w_v);
  out.emplace_back(prefix + ".b_v", mha.b_v);
  out.emplace_back(prefix + ".w_o", mha.w_o);
  out.emplace_back(prefix + ".b_o", mha.b_o);
}

std::vector<std::pair<std::string, Tensor>> GctafParams::named_parameters() const {
  std::vector<std::pair<std::string, Tensor>> out;
  if (has_global_tokens()) out.emplace_back("global_tokens", global_tokens);
  if (has_cross_attention()) push_mha(out, "cross_attn", cross_attn);
  for (size_t i = 0; i < blocks.size(); ++i) {
    const auto& b = blocks[i];
    std::string prefix = "blocks." + std::to_string(i);
    if (b.layer_norm) {
      out.emplace_back(prefix + ".norm1.gamma", b.norm1_gamma);
      out.emplace_back(prefix + ".norm1.beta", b.norm1_beta);
      out.emplace_back(prefix + ".norm2.gamma", b.norm2_gamma);
      out.emplace_back(prefix + ".norm2.beta", b.norm2_beta);
    }
    push_mha(out, prefix + ".mha", b.mha);
    out.emplace_back(prefix + ".ffn_w1", b.ffn_w1);
    out.emplace_back(prefix + ".ffn_b1", b.ffn_b1);
    out.emplace_back(prefix + ".ffn_w2", b.ffn_w2);
    out.emplace_back(prefix + ".ffn_b2", b.ffn_b2);
  }
  for (size_t i = 0; i < mlp.size(); ++i) {
    out.emplace_back("mlp." + std::to_string(i) + ".w", mlp[i].first);
    out.emplace_back("mlp." + std::to_string(i) + ".b", mlp[i].second);
  }
  out.emplace_back("output.w", out_w);
  out.emplace_back("output.b", out_b);
  return out;
}

std::vector<Tensor> GctafParams::parameters() const {
  std::vector<Tensor> out;
  for (auto& [name, t] : named_parameters()) out.push_back(t);
  return out;
}

static Tensor clone_tensor(const Tensor& t) {
  if (!t.defined()) return Tensor{};
  std::vector<double> data(t.data().begin(), t.data().end());
  Tensor copy = Tensor::from_data(t.shape(), std::move(data));
  copy.set_requires_grad(t.requires_grad());
  return copy;
}

static MhaParams clone_mha(const MhaParams& m) {
  MhaParams out;
  out.heads = m.heads;
  out.head_size = m.head_size;
  out.w_q = clone_tensor(m.w_q);
  out.b_q = clone_tensor(m.b_q);
  out.w_k = clone_tensor(m.w_k);
  out.b_k = clone_tensor(m.b_k);
  out.w_v = clone_tensor(m.w_v);
  out.b_v = clone_tensor(m.b_v);
  out.w_o = clone_tensor(m.w_o);
  out.b_o = clone_tensor(m.b_o);
  return out;
}

GctafParams GctafParams::clone() const {
  GctafParams out;
  out.global_tokens = clone_tensor(global_tokens);
  if (has_cross_attention()) out.cross_attn = clone_mha(cross_attn);
  out.blocks.reserve(blocks.size());
  for (const auto& b : blocks) {
    EncoderBlockParams nb;
    nb.dropout_p = b.dropout_p;
    nb.layer_norm = b.layer_norm;
    nb.norm1_gamma = clone_tensor(b.norm1_gamma);
    nb.norm1_beta = clone_tensor(b.norm1_beta);
    nb.norm2_gamma = clone_tensor(b.norm2_gamma);
    nb.norm2_beta = clone_tensor(b.norm2_beta);
    nb.mha = clone_mha(b.mha);
    nb.ffn_w1 = clone_tensor(b.ffn_w1);
    nb.ffn_b1 = clone_tensor(b.ffn_b1);
    nb.ffn_w2 = clone_tensor(b.ffn_w2);
    nb.ffn_b2 = clone_tensor(b.ffn_b2);
    out.blocks.push_back(std::move(nb));
  }
  for (const auto& [w, b] : mlp) out.mlp.emplace_back(clone_tensor(w), clone_tensor(b));
  out.out_w = clone_tensor(out_w);
  out.out_b = clone_tensor(out_b);
  return out;
}

// ---------------------------------------------------------------------------
// forward

static void check_params_match(const GctafParams& p, const ModelConfig& cfg) {
  bool want_tokens = cfg.ablation != Ablation::no_global_tokens;
  bool want_cross = cfg.ablation != Ablation::no_global_tokens &&
                    cfg.ablation != Ablation::no_cross_attention;
  bool want_ln = cfg.ablation != Ablation::no_layer_norm;
  if (p.has_global_tokens() != want_tokens) {
    throw ConfigError(std::string("parameters ") +
                      (p.has_global_tokens() ? "carry" : "lack") +
                      " global tokens, which is inconsistent with ablation '" +
                      ablation_key(cfg.ablation) + "'");
  }
  if (p.has_cross_attention() != want_cross) {
    throw ConfigError(std::string("parameters ") +
                      (p.has_cross_attention() ? "carry" : "lack") +
                      " cross-attention projections, which is inconsistent with ablation '" +
                      ablation_key(cfg.ablation) + "'");
  }
  if (p.blocks.size() != cfg.num_blocks) {
    throw ConfigError("parameter block count " + std::to_string(p.blocks.size()) +
                      " does not match num_blocks " + std::to_string(cfg.num_blocks));
  }
  for (const auto& b : p.blocks) {
    if (b.layer_norm != want_ln) {
      throw ConfigError("block layer-norm state is inconsistent with ablation '" +
                        std::string(ablation_key(cfg.ablation)) + "'");
    }
  }
  if (want_tokens &&
      p.global_tokens.shape() != Shape{1, cfg.global_tokens, cfg.n_features}) {
    throw ConfigError("global token shape " + shape_str(p.global_tokens.shape()) +
                      " does not match config " +
                      shape_str({1, cfg.global_tokens, cfg.n_features}));
  }
  if (p.mlp.size() != cfg.mlp_units.size()) {
    throw ConfigError("MLP depth " + std::to_string(p.mlp.size()) +
                      " does not match mlp_units of length " +
                      std::to_string(cfg.mlp_units.size()));
  }
}

static Tensor sinusoidal_encoding(size_t tau, size_t n) {
  std::vector<double> pe(tau * n);
  for (size_t t = 0; t < tau; ++t) {
    for (size_t i = 0; i < n; ++i) {
      double freq = std::pow(10000.0, -2.0 * static_cast<double>(i / 2) / static_cast<double>(n));
      double angle = static_cast<double>(t) * freq;
      pe[t * n + i] = (i % 2 == 0) ? std::sin(angle) : std::cos(angle);
    }
  }
  return Tensor::from_data({tau, n}, std::move(pe));
}

Tensor forward(const GctafParams& params, const ModelConfig& cfg, const Tensor& x, bool training,
               Rng& rng, ForwardTrace* trace) {
  cfg.validate();
  check_params_match(params, cfg);
  if (x.rank() != 3 || x.shape()[1] != cfg.tau || x.shape()[2] != cfg.n_features) {
    throw DimensionError("forward expects input of shape [batch, " + std::to_string(cfg.tau) +
                         ", " + std::to_string(cfg.n_features) + "]; got " +
                         shape_str(x.shape()));
  }
  size_t batch = x.shape()[0];

  Tensor input = x;
  if (cfg.positional_encoding) {
    input = add(input, sinusoidal_encoding(cfg.tau, cfg.n_features));
  }

  Tensor seq;
  if (cfg.ablation == Ablation::no_global_tokens) {
    seq = input;
    if (trace) trace->cross_out = {};
  } else {
    Tensor tokens = expand(params.global_tokens, {batch, cfg.global_tokens, cfg.n_features});
    Tensor enriched;
    if (cfg.ablation == Ablation::no_cross_attention) {
      enriched = tokens;  // tokens present but never attend to the input
    } else {
      enriched =
          multi_head_attention(params.cross_attn, tokens, input, input, cfg.dropout, training, rng);
    }
    if (trace) trace->cross_out = enriched.shape();
    std::array<Tensor, 2> parts{input, enriched};
    seq = concat(parts, 1);  // [B, tau+G, N]
  }
  if (trace) trace->fused_seq = seq.shape();

  seq = encoder_stack_forward(params.blocks, seq, training, rng);

  Tensor v_local, v_global;
  if (cfg.ablation == Ablation::no_global_tokens) {
    // No token rows; duplicating the local pool keeps the MLP input width at
    // 2N so the variant differs only in the mechanism under test.
    v_local = mean(seq, 1);
    v_global = v_local;
  } else {
    Tensor x_local = slice(seq, 1, 0, cfg.tau);
    Tensor x_global = slice(seq, 1, cfg.tau, cfg.tau + cfg.global_tokens);
    v_local = mean(x_local, 1);
    v_global = mean(x_global, 1);
  }
  if (trace) {
    trace->local_pool = v_local.shape();
    trace->global_pool = v_global.shape();
  }

  std::array<Tensor, 2> pooled{v_local, v_global};
  Tensor fused = concat(pooled, 1);  // [B, 2N]
  if (trace) trace->fused_vec = fused.shape();

  Tensor z = fused;
  for (const auto& [w, b] : params.mlp) {
    z = dropout(relu(linear(z, w, b)), cfg.dropout, training, rng);
  }
  Tensor logits = linear(z, params.out_w, params.out_b);
  if (trace) trace->logits = logits.shape();
  return logits;
}

Tensor forward_ablated(const GctafParams& params, const ModelConfig& cfg, const Tensor& x,
                       bool training, Rng& rng, ForwardTrace* trace) {
  if (cfg.ablation == Ablation::none) {
    throw ContractError("forward_ablated requires an ablation variant config");
  }
  return forward(params, cfg, x, training, rng, trace);
}

// ---------------------------------------------------------------------------
// checkpoint io

namespace {

constexpr char kMagic[6] = {'G', 'C', 'T', 'A', 'F', '1'};

template <typename T>
void append_le(std::string& out, T value) {
  static_assert(std::is_trivially_copyable_v<T>);
  char buf[sizeof(T)];
  std::memcpy(buf, &value, sizeof(T));
  if constexpr (std::endian::native == std::endian::big) {
    std::reverse(buf, buf + sizeof(T));
  }
  out.append(buf, sizeof(T));
}

struct Cursor {
  const std::string& bytes;
  size_t pos = 0;

  void need(size_t n, const char* what) const {
    if (pos + n > bytes.size()) {
      throw FormatError(std::string("checkpoint truncated at byte ") + std::to_string(pos) +
                        " while reading " + what);
    }
  }

  template <typename T>
  T take(const char* what) {
    need(sizeof(T), what);
    char buf[sizeof(T)];
    std::memcpy(buf, bytes.data() + pos, sizeof(T));
    if constexpr (std::endian::native == std::endian::big) {
      std::reverse(buf, buf + sizeof(T));
    }
    T value;
    std::memcpy(&value, buf, sizeof(T));
    pos += sizeof(T);
    return value;
  }

  std::string take_bytes(size_t n, const char* what) {
    need(n, what);
    std::string out = bytes.substr(pos, n);
    pos += n;
    return out;
  }
};

}  // namespace

void save_params(const GctafParams& params, const ModelConfig& cfg, const std::string& path) {
  check_params_match(params, cfg);
  std::string out;
  out.append(kMagic, sizeof(kMagic));
  std::string meta = cfg.to_json().dump();
  append_le<uint64_t>(out, meta.size());
  out += meta;
  for (const auto& [name, t] : params.named_parameters()) {
    append_le<uint32_t>(out, static_cast<uint32_t>(name.size()));
    out += name;
    append_le<uint32_t>(out, static_cast<uint32_t>(t.rank()));
    for (size_t extent : t.shape()) append_le<uint64_t>(out, extent);
    for (double v : t.data()) append_le<double>(out, v);
  }
  std::ofstream file(path, std::ios::binary | std::ios::trunc);
  if (!file) throw IoError("cannot open '" + path + "' for writing");
  file.write(out.data(), static_cast<std::streamsize>(out.size()));
  if (!file) throw IoError("failed writing checkpoint '" + path + "'");
}

std::pair<GctafParams, ModelConfig> load_params(const std::string& path) {
  std::ifstream file(path, std::ios::binary);
  if (!file) throw IoError("cannot open checkpoint '" + path + "'");
  std::string bytes((std::istreambuf_iterator<char>(file)), std::istreambuf_iterator<char>());

  Cursor cur{bytes};
  std::string magic = cur.take_bytes(sizeof(kMagic), "magic");
  if (std::memcmp(magic.data(), kMagic, sizeof(kMagic)) != 0) {
    throw FormatError("bad checkpoint magic at byte 0 in '" + path + "'");
  }
  auto meta_len = cur.take<uint64_t>("metadata length");
  size_t meta_at = cur.pos;
  std::string meta = cur.take_bytes(meta_len, "metadata");
  ModelConfig cfg;
  try {
    cfg = ModelConfig::from_json(nlohmann::json::parse(meta));
  } catch (const nlohmann::json::exception& e) {
    throw FormatError("invalid checkpoint metadata at byte " + std::to_string(meta_at) + ": " +
                      e.what());
  }

  Rng scratch(cfg.seed);
  GctafParams params = init_params(cfg, scratch);
  // Tensor handles share storage with params, so filling them in place
  // rebuilds the saved state.
  for (auto [name, t] : params.named_parameters()) {
    size_t record_at = cur.pos;
    auto name_len = cur.take<uint32_t>("tensor name length");
    std::string got = cur.take_bytes(name_len, "tensor name");
    if (got != name) {
      throw FormatError("unexpected tensor '" + got + "' at byte " + std::to_string(record_at) +
                        " (expected '" + name + "')");
    }
    auto rank = cur.take<uint32_t>("tensor rank");
    Shape shape(rank);
    for (auto& extent : shape) extent = cur.take<uint64_t>("tensor extent");
    if (shape != t.shape()) {
      throw FormatError("tensor '" + name + "' at byte " + std::to_string(record_at) +
                        " has shape " + shape_str(shape) + " but config implies " +
                        shape_str(t.shape()));
    }
    double* out = t.mutable_data();
    for (size_t i = 0; i < shape_size(shape); ++i) out[i] = cur.take<double>("tensor payload");
  }
  if (cur.pos != bytes.size()) {
    throw FormatError("trailing bytes at byte " + std::to_string(cur.pos) + " in '" + path + "'");
  }
  return {std::move(params), cfg};
}

}  // namespace gctaf
