#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "infdit/geometry.hpp"
#include "infdit/rope.hpp"
#include "infdit/tensor.hpp"

namespace infdit {

struct ModelConfig {
  std::int64_t layers = 4;
  std::int64_t hidden = 64;  // d
  std::int64_t heads = 4;
  std::int64_t head_dim = 16;
  std::int64_t ffn_dim = 256;
  std::int64_t block_size = 32;  // B, pixels
  std::int64_t patch_size = 4;   // p, pixels
  std::int64_t in_channels = 6;  // 3 noisy + 3 LR-upsampled
  std::int64_t semantic_dim = 64;
  double rope_base = 10000.0;
  double ln_eps = 1e-6;

  void validate() const {
    if (layers < 1) throw std::invalid_argument("config: layers must be >= 1");
    if (heads * head_dim != hidden)
      throw std::invalid_argument("config: heads * head_dim != hidden");
    if (head_dim % 4 != 0)
      throw std::invalid_argument("config: head_dim must be divisible by 4 for 2D rope");
    if (block_size % patch_size != 0)
      throw std::invalid_argument("config: block size not divisible by patch size");
    if (semantic_dim < 1 || ffn_dim < 1) throw std::invalid_argument("config: bad dims");
  }

  std::int64_t patches_per_side() const { return block_size / patch_size; }
  std::int64_t tokens_per_block() const {
    return patches_per_side() * patches_per_side();
  }
  std::int64_t patch_dim() const { return patch_size * patch_size * in_channels; }
  std::int64_t lr_patch_dim() const { return patch_size * patch_size * 3; }

  // Full-scale defaults (never trained here; honored as config only).
  static ModelConfig full_scale() {
    ModelConfig cfg;
    cfg.layers = 28;
    cfg.hidden = 1280;
    cfg.heads = 16;
    cfg.head_dim = 80;
    cfg.ffn_dim = 5120;
    cfg.block_size = 128;
    cfg.patch_size = 4;
    cfg.semantic_dim = 768;
    return cfg;
  }

  static ModelConfig toy() { return ModelConfig{}; }

  bool operator==(const ModelConfig&) const = default;
};

// Per-layer cache entry cost: K and V, [tokens, hidden] each.
inline double cache_bytes_per_block(const ModelConfig& cfg, std::int64_t scalar_bytes) {
  return static_cast<double>(cfg.layers) * 2.0 *
         static_cast<double>(cfg.tokens_per_block()) * static_cast<double>(cfg.hidden) *
         static_cast<double>(scalar_bytes);
}

// Transient working state while one block moves through one layer:
// x_tilde + q/k/v + assembled 4T keys/values + per-head scores + ffn mid.
inline double work_bytes_per_block(const ModelConfig& cfg, std::int64_t scalar_bytes) {
  const double t = static_cast<double>(cfg.tokens_per_block());
  const double d = static_cast<double>(cfg.hidden);
  const double per_layer = t * d * 12.0 + static_cast<double>(cfg.heads) * t * 4.0 * t +
                           t * static_cast<double>(cfg.ffn_dim);
  return per_layer * static_cast<double>(scalar_bytes);
}

template <typename S>
struct AttentionParams {
  LinearParams<S> wq, wk, wv, wo;
  LayerNormParams<S> q_norm, k_norm;  // per-head, over head_dim

  AttentionParams() = default;
  AttentionParams(std::int64_t d, std::int64_t head_dim, double eps)
      : wq(d, d), wk(d, d), wv(d, d), wo(d, d), q_norm(head_dim, eps), k_norm(head_dim, eps) {}
};

template <typename S>
struct FfnParams {
  LinearParams<S> w1, w2;

  FfnParams() = default;
  FfnParams(std::int64_t d, std::int64_t ffn_dim) : w1(d, ffn_dim), w2(ffn_dim, d) {}
};

// Learnable embeddings distinguishing the self / upper-left / left / top
// key slots; added to the key path only, shared across layers.
template <typename S>
struct BlockRelPosEmbeds {
  Tensor<S> p_self, p_upper_left, p_left, p_top;  // each [d]

  const Tensor<S>& slot(int s) const {
    switch (s) {
      case 0: return p_self;
      case 1: return p_upper_left;
      case 2: return p_left;
      case 3: return p_top;
    }
    throw std::out_of_range("rel-pos slot");
  }
  Tensor<S>& slot(int s) { return const_cast<Tensor<S>&>(std::as_const(*this).slot(s)); }
};

template <typename S>
struct DiTBlockParams {
  AttentionParams<S> attn;
  std::optional<AttentionParams<S>> cross;  // nearby-LR cross attention, first layer only
  FfnParams<S> ffn;
  LinearParams<S> ada;  // silu(cond) -> chunks*d modulation

  std::int64_t mod_chunks() const { return cross ? 9 : 6; }
};

template <typename S>
struct ModelParams {
  ModelConfig cfg;
  LinearParams<S> patch_embed;  // in_channels*p^2 -> d
  LinearParams<S> lr_embed;     // 3*p^2 -> d, feeds cross-attention keys/values
  BlockRelPosEmbeds<S> rel;
  std::vector<DiTBlockParams<S>> blocks;
  LinearParams<S> time_mlp1, time_mlp2;  // d -> d
  LinearParams<S> sem_proj;              // semantic_dim -> d
  LinearParams<S> final_ada;             // d -> 2d (shift, scale)
  LinearParams<S> head;                  // d -> p^2*3

  // Visits every learnable tensor with a stable name; the enumeration
  // order defines the checkpoint and optimizer layout.
  template <typename Fn>
  void visit(Fn&& fn) {
    auto lin = [&](const std::string& name, LinearParams<S>& p) {
      fn(name + ".weight", p.weight);
      fn(name + ".bias", p.bias);
    };
    auto norm = [&](const std::string& name, LayerNormParams<S>& p) {
      fn(name + ".gain", p.gain);
      fn(name + ".shift", p.shift);
    };
    auto attn = [&](const std::string& name, AttentionParams<S>& p) {
      lin(name + ".wq", p.wq);
      lin(name + ".wk", p.wk);
      lin(name + ".wv", p.wv);
      lin(name + ".wo", p.wo);
      norm(name + ".q_norm", p.q_norm);
      norm(name + ".k_norm", p.k_norm);
    };

    lin("patch_embed", patch_embed);
    lin("lr_embed", lr_embed);
    fn("rel.p_self", rel.p_self);
    fn("rel.p_upper_left", rel.p_upper_left);
    fn("rel.p_left", rel.p_left);
    fn("rel.p_top", rel.p_top);
    for (std::size_t l = 0; l < blocks.size(); ++l) {
      const std::string base = "layers." + std::to_string(l);
      attn(base + ".attn", blocks[l].attn);
      if (blocks[l].cross) attn(base + ".cross", *blocks[l].cross);
      lin(base + ".ffn.w1", blocks[l].ffn.w1);
      lin(base + ".ffn.w2", blocks[l].ffn.w2);
      lin(base + ".ada", blocks[l].ada);
    }
    lin("time_mlp1", time_mlp1);
    lin("time_mlp2", time_mlp2);
    lin("sem_proj", sem_proj);
    lin("final_ada", final_ada);
    lin("head", head);
  }

  template <typename Fn>
  void visit(Fn&& fn) const {
    const_cast<ModelParams*>(this)->visit(
        [&](const std::string& name, Tensor<S>& t) { fn(name, std::as_const(t)); });
  }
};

// Allocates the parameter set with every tensor zero.
template <typename S>
ModelParams<S> make_model_params(const ModelConfig& cfg) {
  cfg.validate();
  ModelParams<S> p;
  p.cfg = cfg;
  const std::int64_t d = cfg.hidden;
  p.patch_embed = LinearParams<S>(cfg.patch_dim(), d);
  p.lr_embed = LinearParams<S>(cfg.lr_patch_dim(), d);
  for (auto* t : {&p.rel.p_self, &p.rel.p_upper_left, &p.rel.p_left, &p.rel.p_top})
    *t = Tensor<S>({d});
  p.blocks.resize(static_cast<std::size_t>(cfg.layers));
  for (std::int64_t l = 0; l < cfg.layers; ++l) {
    auto& blk = p.blocks[static_cast<std::size_t>(l)];
    blk.attn = AttentionParams<S>(d, cfg.head_dim, cfg.ln_eps);
    if (l == 0) blk.cross = AttentionParams<S>(d, cfg.head_dim, cfg.ln_eps);
    blk.ffn = FfnParams<S>(d, cfg.ffn_dim);
    blk.ada = LinearParams<S>(d, blk.mod_chunks() * d);
  }
  p.time_mlp1 = LinearParams<S>(d, d);
  p.time_mlp2 = LinearParams<S>(d, d);
  p.sem_proj = LinearParams<S>(cfg.semantic_dim, d);
  p.final_ada = LinearParams<S>(d, 2 * d);
  p.head = LinearParams<S>(d, cfg.patch_size * cfg.patch_size * 3);
  return p;
}

// Scaled-normal weights (std 1/sqrt(d_in)), zero biases. Modulation
// projections are zero-initialized so every block starts as identity;
// tests that need gradient through the gates pass zero_init_mod=false.
template <typename S>
ModelParams<S> init_model_params(const ModelConfig& cfg, std::uint64_t seed,
                                 bool zero_init_mod = true) {
  ModelParams<S> p = make_model_params<S>(cfg);
  std::uint64_t ordinal = 0;
  p.visit([&](const std::string& name, Tensor<S>& t) {
    const std::uint64_t tensor_seed = Rng(seed).child(ordinal++).seed();
    const bool is_bias = name.ends_with(".bias");
    const bool is_norm = name.ends_with(".gain") || name.ends_with(".shift");
    const bool is_mod = name.find(".ada.") != std::string::npos ||
                        name.find("final_ada.") != std::string::npos;
    if (is_norm) return;  // gains 1, shifts 0 from construction
    if (is_bias || (is_mod && zero_init_mod)) {
      std::fill(t.data.begin(), t.data.end(), S(0));
      return;
    }
    t = seeded_init<S>(t.shape, tensor_seed, InitScheme::kScaledNormal);
  });
  return p;
}

// Gradient accumulator mirroring the parameter layout.
template <typename S>
ModelParams<S> make_zero_grads(const ModelConfig& cfg) {
  ModelParams<S> g = make_model_params<S>(cfg);
  g.visit([](const std::string&, Tensor<S>& t) {
    std::fill(t.data.begin(), t.data.end(), S(0));
  });
  // norm gains default to 1 in construction; grads start at zero
  return g;
}

template <typename S>
std::int64_t parameter_count(const ModelParams<S>& p) {
  std::int64_t n = 0;
  p.visit([&](const std::string&, const Tensor<S>& t) { n += t.numel(); });
  return n;
}

}  // namespace infdit
