#pragma once

#include <array>
#include <cstdint>
#include <map>
#include <optional>
#include <utility>
#include <vector>

#include "infdit/geometry.hpp"
#include "infdit/model.hpp"
#include "infdit/rope.hpp"
#include "infdit/tensor.hpp"

namespace infdit {

// Hidden states of every block, the whole-image training-path state.
template <typename S>
struct TokenGrid {
  std::int64_t h = 0;
  std::int64_t w = 0;
  std::vector<Tensor<S>> blocks;  // h*w entries, each [tokens, d]

  TokenGrid() = default;
  TokenGrid(std::int64_t h_, std::int64_t w_) : h(h_), w(w_), blocks(static_cast<std::size_t>(h_ * w_)) {}

  Tensor<S>& at(BlockCoord c) { return blocks[static_cast<std::size_t>(c.i * w + c.j)]; }
  const Tensor<S>& at(BlockCoord c) const {
    return blocks[static_cast<std::size_t>(c.i * w + c.j)];
  }
};

template <typename S>
struct ModelInputs {
  Tensor<S> x;      // [H, W, 3] noisy input, model range
  Tensor<S> lr_up;  // [H, W, 3] upsampled LR condition, model range
  double sigma = 1.0;
  Tensor<S> sem;    // [semantic_dim]
};

// ---- forward tape (captured only on the whole-image training path) ----

template <typename S>
struct LnTape {
  Tensor<S> x_hat;            // normalized, pre gain/shift
  std::vector<S> inv_std;     // one per vector
};

template <typename S>
struct AttnSlotTape {
  BlockCoord coord;
  Tensor<S> k_pre;   // [T,d] k_base(coord) + p_tilde[slot]
  LnTape<S> k_ln;    // per-head
  Tensor<S> k_rot;   // [T,d]
};

template <typename S>
struct AttnBlockTape {
  Tensor<S> h_in;             // [T,d]
  LnTape<S> ln;               // token LN
  Tensor<S> x_tilde;
  Tensor<S> q_raw, k_base, v;
  LnTape<S> q_ln;             // per-head
  Tensor<S> q_rot;
  std::array<AttnSlotTape<S>, 4> slots;
  Tensor<S> v_cat;            // [4T, d]
  Tensor<S> probs;            // [heads, T, 4T]
  Tensor<S> ctx;              // [T,d]
  Tensor<S> attn_out;         // [T,d]
};

template <typename S>
struct CrossBlockTape {
  Tensor<S> h_in;
  LnTape<S> ln;
  Tensor<S> x_tilde;
  Tensor<S> q_raw;
  LnTape<S> q_ln;
  Tensor<S> q_rot;
  std::vector<BlockCoord> neighborhood;
  std::vector<Tensor<S>> k_pre;  // per neighbor [T,d]
  std::vector<LnTape<S>> k_ln;
  Tensor<S> k_rot_cat;           // [nT, d]
  Tensor<S> v_cat;               // [nT, d]
  Tensor<S> probs;               // [heads, T, nT]
  Tensor<S> ctx;
  Tensor<S> cross_out;
};

template <typename S>
struct FfnBlockTape {
  Tensor<S> h_in;
  LnTape<S> ln;
  Tensor<S> x_tilde;
  Tensor<S> mid_pre;  // [T, ffn]
  Tensor<S> mid_act;
  Tensor<S> ffn_out;  // [T, d]
};

template <typename S>
struct LayerTape {
  Tensor<S> mod;  // [chunks*d]
  std::vector<AttnBlockTape<S>> attn;
  std::vector<CrossBlockTape<S>> cross;  // layer 0 only
  std::vector<FfnBlockTape<S>> ffn;
};

template <typename S>
struct ForwardTape {
  double c_noise = 0;
  Tensor<S> sin_emb, t_mid_pre, t_mid_act, t_emb;
  Tensor<S> sem_in, sem_out;
  Tensor<S> cond, silu_cond;
  std::vector<Tensor<S>> patch_in;     // per block [T, in_ch*p^2]
  std::vector<Tensor<S>> lr_patch_in;  // per block [T, 3*p^2]
  std::vector<Tensor<S>> lr_tok;       // per block [T, d]
  std::vector<LayerTape<S>> layers;
  Tensor<S> final_mod;  // [2d]
  std::vector<LnTape<S>> final_ln;
  std::vector<Tensor<S>> final_xtilde;
  std::vector<Tensor<S>> h_final;      // per block, input to the final norm
  std::int64_t grid_h = 0, grid_w = 0;
};

// ---- shared primitives (full and streamed paths must agree bitwise) ----

template <typename S>
Tensor<S> sinusoidal_embedding(double t, std::int64_t dim) {
  Tensor<S> out({dim});
  const std::int64_t half = dim / 2;
  for (std::int64_t k = 0; k < half; ++k) {
    const double freq = std::exp(-std::log(10000.0) * static_cast<double>(k) /
                                 static_cast<double>(half));
    out[k] = static_cast<S>(std::cos(t * freq));
    out[half + k] = static_cast<S>(std::sin(t * freq));
  }
  return out;
}

// Non-affine LN over the last axis; returns normalized values and 1/std.
template <typename S>
Tensor<S> token_layernorm(const Tensor<S>& x, double eps, std::vector<S>* inv_std_out) {
  const std::int64_t d = x.last_dim();
  const std::int64_t rows = x.rows();
  Tensor<S> out(x.shape);
  if (inv_std_out) inv_std_out->resize(static_cast<std::size_t>(rows));
  for (std::int64_t r = 0; r < rows; ++r) {
    const S* xr = x.data.data() + r * d;
    S* yr = out.data.data() + r * d;
    S mean = S(0);
    for (std::int64_t j = 0; j < d; ++j) mean += xr[j];
    mean /= S(d);
    S var = S(0);
    for (std::int64_t j = 0; j < d; ++j) {
      const S c = xr[j] - mean;
      var += c * c;
    }
    var /= S(d);
    const S inv = S(1) / std::sqrt(var + S(eps));
    if (inv_std_out) (*inv_std_out)[static_cast<std::size_t>(r)] = inv;
    for (std::int64_t j = 0; j < d; ++j) yr[j] = (xr[j] - mean) * inv;
  }
  return out;
}

// Affine LN applied independently to each head slice of each token.
template <typename S>
Tensor<S> head_layernorm(const Tensor<S>& x, const LayerNormParams<S>& p, std::int64_t heads,
                         LnTape<S>* tape) {
  const std::int64_t d = x.last_dim();
  const std::int64_t dh = d / heads;
  const std::int64_t rows = x.rows();
  Tensor<S> x_hat(x.shape);
  std::vector<S> inv_std(static_cast<std::size_t>(rows * heads));
  for (std::int64_t r = 0; r < rows; ++r)
    for (std::int64_t h = 0; h < heads; ++h) {
      const S* xr = x.data.data() + r * d + h * dh;
      S* hr = x_hat.data.data() + r * d + h * dh;
      S mean = S(0);
      for (std::int64_t j = 0; j < dh; ++j) mean += xr[j];
      mean /= S(dh);
      S var = S(0);
      for (std::int64_t j = 0; j < dh; ++j) {
        const S c = xr[j] - mean;
        var += c * c;
      }
      var /= S(dh);
      const S inv = S(1) / std::sqrt(var + S(p.epsilon));
      inv_std[static_cast<std::size_t>(r * heads + h)] = inv;
      for (std::int64_t j = 0; j < dh; ++j) hr[j] = (xr[j] - mean) * inv;
    }
  Tensor<S> out(x.shape);
  for (std::int64_t r = 0; r < rows; ++r)
    for (std::int64_t h = 0; h < heads; ++h)
      for (std::int64_t j = 0; j < dh; ++j)
        out[r * d + h * dh + j] = x_hat[r * d + h * dh + j] * p.gain[j] + p.shift[j];
  if (tape) {
    tape->x_hat = std::move(x_hat);
    tape->inv_std = std::move(inv_std);
  }
  return out;
}

// x_hat * (1 + scale) + shift, scale/shift broadcast over tokens.
template <typename S>
Tensor<S> modulate(const Tensor<S>& x_hat, const S* shift, const S* scale) {
  const std::int64_t d = x_hat.last_dim();
  Tensor<S> out(x_hat.shape);
  for (std::int64_t r = 0; r < x_hat.rows(); ++r)
    for (std::int64_t j = 0; j < d; ++j)
      out[r * d + j] = x_hat[r * d + j] * (S(1) + scale[j]) + shift[j];
  return out;
}

// Absolute patch positions (x, y) of a block's tokens, raster order.
template <typename S>
std::vector<std::pair<std::int64_t, std::int64_t>> block_token_positions(
    BlockCoord c, std::int64_t patches_per_side, const RopeTable<S>& rope) {
  std::vector<std::pair<std::int64_t, std::int64_t>> pos(
      static_cast<std::size_t>(patches_per_side * patches_per_side));
  for (std::int64_t t = 0; t < static_cast<std::int64_t>(pos.size()); ++t) {
    const std::int64_t px = c.j * patches_per_side + (t % patches_per_side);
    const std::int64_t py = c.i * patches_per_side + (t / patches_per_side);
    pos[static_cast<std::size_t>(t)] = {rope.start_x + px, rope.start_y + py};
  }
  return pos;
}

// Key-slot source blocks in the order [self, upper-left, left, top], with
// the duplicate-and-prepend rule: a missing neighbor clamps to row/col 0,
// so boundary blocks reuse themselves (or their remaining neighbor) while
// still carrying the slot's embedding.
inline std::array<BlockCoord, 4> uniba_slot_coords(BlockCoord b) {
  const std::int64_t iu = std::max<std::int64_t>(b.i - 1, 0);
  const std::int64_t jl = std::max<std::int64_t>(b.j - 1, 0);
  return {BlockCoord{b.i, b.j}, BlockCoord{iu, jl}, BlockCoord{b.i, jl}, BlockCoord{iu, b.j}};
}

// Per-layer projected slot embeddings: p_tilde[s] = P_s * W_k (no bias;
// the key projection bias already rides on k_base).
template <typename S>
std::array<Tensor<S>, 4> projected_slot_embeds(const BlockRelPosEmbeds<S>& rel,
                                               const LinearParams<S>& wk) {
  std::array<Tensor<S>, 4> out;
  for (int s = 0; s < 4; ++s) {
    const Tensor<S>& p = rel.slot(s);
    out[s] = matmul(p.reshaped({1, p.numel()}), wk.weight).reshaped({wk.d_out()});
  }
  return out;
}

// Multi-head attention over pre-rotated q against assembled keys/values.
// scores = q.k / sqrt(head_dim) per head.
template <typename S>
Tensor<S> attend_heads(const Tensor<S>& q_rot, const Tensor<S>& k_cat, const Tensor<S>& v_cat,
                       std::int64_t heads, Tensor<S>* probs_out) {
  const std::int64_t t_q = q_rot.shape[0];
  const std::int64_t t_k = k_cat.shape[0];
  const std::int64_t d = q_rot.shape[1];
  const std::int64_t dh = d / heads;
  const S scale = S(1) / std::sqrt(static_cast<S>(dh));

  Tensor<S> probs({heads, t_q, t_k});
  for (std::int64_t h = 0; h < heads; ++h) {
    for (std::int64_t tq = 0; tq < t_q; ++tq) {
      S* row = probs.data.data() + (h * t_q + tq) * t_k;
      const S* qv = q_rot.data.data() + tq * d + h * dh;
      for (std::int64_t tk = 0; tk < t_k; ++tk) {
        const S* kv = k_cat.data.data() + tk * d + h * dh;
        S acc = S(0);
        for (std::int64_t j = 0; j < dh; ++j) acc += qv[j] * kv[j];
        row[tk] = acc * scale;
      }
    }
  }
  probs = softmax_rows(probs);

  Tensor<S> ctx({t_q, d});
  for (std::int64_t h = 0; h < heads; ++h)
    for (std::int64_t tq = 0; tq < t_q; ++tq) {
      const S* row = probs.data.data() + (h * t_q + tq) * t_k;
      S* out = ctx.data.data() + tq * d + h * dh;
      for (std::int64_t tk = 0; tk < t_k; ++tk) {
        const S p = row[tk];
        const S* vv = v_cat.data.data() + tk * d + h * dh;
        for (std::int64_t j = 0; j < dh; ++j) out[j] += p * vv[j];
      }
    }
  if (probs_out) *probs_out = std::move(probs);
  return ctx;
}

// Pass-1 result of the UniBA sublayer for one block at one layer.
template <typename S>
struct QkvBundle {
  Tensor<S> q_raw, k_base, v;  // [T,d] each
};

template <typename S>
QkvBundle<S> uniba_pass1(const AttentionParams<S>& ap, const Tensor<S>& h, double ln_eps,
                         const S* shift, const S* scale, AttnBlockTape<S>* tape) {
  std::vector<S> inv_std;
  Tensor<S> x_hat = token_layernorm(h, ln_eps, &inv_std);
  Tensor<S> x_tilde = modulate(x_hat, shift, scale);
  QkvBundle<S> out;
  out.q_raw = linear(x_tilde, ap.wq);
  out.k_base = linear(x_tilde, ap.wk);
  out.v = linear(x_tilde, ap.wv);
  if (tape) {
    tape->h_in = h;
    tape->ln.x_hat = std::move(x_hat);
    tape->ln.inv_std = std::move(inv_std);
    tape->x_tilde = std::move(x_tilde);
    tape->q_raw = out.q_raw;
    tape->k_base = out.k_base;
    tape->v = out.v;
  }
  return out;
}

// Pass 2: assemble the four key slots, attend, project, and apply the
// gated residual. `kv` resolves a slot coordinate to that block's
// (k_base, v) at this layer: grid arrays for the full path, tile buffer
// or cache for the streamed path.
template <typename S, typename KvResolver>
Tensor<S> uniba_pass2(const ModelConfig& cfg, const AttentionParams<S>& ap,
                      const std::array<Tensor<S>, 4>& p_tilde, const RopeTable<S>& rope,
                      BlockCoord b, const Tensor<S>& h, const Tensor<S>& q_raw,
                      const KvResolver& kv, const S* gate, AttnBlockTape<S>* tape) {
  const std::int64_t t = cfg.tokens_per_block();
  const std::int64_t d = cfg.hidden;
  const std::int64_t pps = cfg.patches_per_side();

  LnTape<S> q_ln_tape;
  Tensor<S> q_ln = head_layernorm(q_raw, ap.q_norm, cfg.heads, tape ? &q_ln_tape : nullptr);
  Tensor<S> q_rot = apply_rope_2d(q_ln, block_token_positions(b, pps, rope), rope);

  const auto slots = uniba_slot_coords(b);
  Tensor<S> k_cat({4 * t, d});
  Tensor<S> v_cat({4 * t, d});
  for (int s = 0; s < 4; ++s) {
    const auto [k_base_ptr, v_ptr] = kv(slots[static_cast<std::size_t>(s)]);
    Tensor<S> k_pre = *k_base_ptr;
    for (std::int64_t r = 0; r < t; ++r)
      for (std::int64_t j = 0; j < d; ++j) k_pre[r * d + j] += p_tilde[static_cast<std::size_t>(s)][j];
    LnTape<S> k_ln_tape;
    Tensor<S> k_ln = head_layernorm(k_pre, ap.k_norm, cfg.heads, tape ? &k_ln_tape : nullptr);
    Tensor<S> k_rot = apply_rope_2d(
        k_ln, block_token_positions(slots[static_cast<std::size_t>(s)], pps, rope), rope);
    std::copy(k_rot.data.begin(), k_rot.data.end(), k_cat.data.begin() + s * t * d);
    std::copy(v_ptr->data.begin(), v_ptr->data.end(), v_cat.data.begin() + s * t * d);
    if (tape) {
      auto& st = tape->slots[static_cast<std::size_t>(s)];
      st.coord = slots[static_cast<std::size_t>(s)];
      st.k_pre = std::move(k_pre);
      st.k_ln = std::move(k_ln_tape);
      st.k_rot = std::move(k_rot);
    }
  }

  Tensor<S> probs;
  Tensor<S> ctx = attend_heads(q_rot, k_cat, v_cat, cfg.heads, tape ? &probs : nullptr);
  Tensor<S> attn_out = linear(ctx, ap.wo);

  Tensor<S> h_new = h;
  for (std::int64_t r = 0; r < t; ++r)
    for (std::int64_t j = 0; j < d; ++j) h_new[r * d + j] += gate[j] * attn_out[r * d + j];

  if (tape) {
    tape->q_ln = std::move(q_ln_tape);
    tape->q_rot = std::move(q_rot);
    tape->v_cat = std::move(v_cat);
    tape->probs = std::move(probs);
    tape->ctx = std::move(ctx);
    tape->attn_out = std::move(attn_out);
  }
  return h_new;
}

// 3x3 LR neighborhood of a block, clipped at the grid, raster order.
inline std::vector<BlockCoord> lr_neighborhood(BlockCoord b, std::int64_t h, std::int64_t w) {
  std::vector<BlockCoord> out;
  for (std::int64_t di = -1; di <= 1; ++di)
    for (std::int64_t dj = -1; dj <= 1; ++dj) {
      const std::int64_t i = b.i + di, j = b.j + dj;
      if (i >= 0 && i < h && j >= 0 && j < w) out.push_back({i, j});
    }
  return out;
}

// Nearby-LR cross attention sublayer (first transformer layer only):
// queries from the block tokens, keys/values from the surrounding LR
// block tokens, residual gated like the other sublayers.
template <typename S, typename LrResolver>
Tensor<S> cross_sublayer(const ModelConfig& cfg, const AttentionParams<S>& ap,
                         const RopeTable<S>& rope, BlockCoord b, std::int64_t grid_h,
                         std::int64_t grid_w, const Tensor<S>& h, const S* shift, const S* scale,
                         const S* gate, const LrResolver& lr_tok, CrossBlockTape<S>* tape) {
  const std::int64_t t = cfg.tokens_per_block();
  const std::int64_t d = cfg.hidden;
  const std::int64_t pps = cfg.patches_per_side();

  std::vector<S> inv_std;
  Tensor<S> x_hat = token_layernorm(h, cfg.ln_eps, &inv_std);
  Tensor<S> x_tilde = modulate(x_hat, shift, scale);
  Tensor<S> q_raw = linear(x_tilde, ap.wq);
  LnTape<S> q_ln_tape;
  Tensor<S> q_ln = head_layernorm(q_raw, ap.q_norm, cfg.heads, tape ? &q_ln_tape : nullptr);
  Tensor<S> q_rot = apply_rope_2d(q_ln, block_token_positions(b, pps, rope), rope);

  const auto neigh = lr_neighborhood(b, grid_h, grid_w);
  const std::int64_t nt = static_cast<std::int64_t>(neigh.size()) * t;
  Tensor<S> k_cat({nt, d});
  Tensor<S> v_cat({nt, d});
  std::vector<Tensor<S>> k_pre_tape;
  std::vector<LnTape<S>> k_ln_tapes;
  for (std::size_t s = 0; s < neigh.size(); ++s) {
    const Tensor<S>* tok = lr_tok(neigh[s]);
    Tensor<S> k_pre = linear(*tok, ap.wk);
    LnTape<S> k_ln_tape;
    Tensor<S> k_ln = head_layernorm(k_pre, ap.k_norm, cfg.heads, tape ? &k_ln_tape : nullptr);
    Tensor<S> k_rot = apply_rope_2d(k_ln, block_token_positions(neigh[s], pps, rope), rope);
    Tensor<S> v = linear(*tok, ap.wv);
    std::copy(k_rot.data.begin(), k_rot.data.end(),
              k_cat.data.begin() + static_cast<std::int64_t>(s) * t * d);
    std::copy(v.data.begin(), v.data.end(),
              v_cat.data.begin() + static_cast<std::int64_t>(s) * t * d);
    if (tape) {
      k_pre_tape.push_back(std::move(k_pre));
      k_ln_tapes.push_back(std::move(k_ln_tape));
    }
  }

  Tensor<S> probs;
  Tensor<S> ctx = attend_heads(q_rot, k_cat, v_cat, cfg.heads, tape ? &probs : nullptr);
  Tensor<S> cross_out = linear(ctx, ap.wo);

  Tensor<S> h_new = h;
  for (std::int64_t r = 0; r < t; ++r)
    for (std::int64_t j = 0; j < d; ++j) h_new[r * d + j] += gate[j] * cross_out[r * d + j];

  if (tape) {
    tape->h_in = h;
    tape->ln.x_hat = std::move(x_hat);
    tape->ln.inv_std = std::move(inv_std);
    tape->x_tilde = std::move(x_tilde);
    tape->q_raw = std::move(q_raw);
    tape->q_ln = std::move(q_ln_tape);
    tape->q_rot = std::move(q_rot);
    tape->neighborhood = neigh;
    tape->k_pre = std::move(k_pre_tape);
    tape->k_ln = std::move(k_ln_tapes);
    tape->k_rot_cat = std::move(k_cat);
    tape->v_cat = std::move(v_cat);
    tape->probs = std::move(probs);
    tape->ctx = std::move(ctx);
    tape->cross_out = std::move(cross_out);
  }
  return h_new;
}

template <typename S>
Tensor<S> ffn_sublayer(const ModelConfig& cfg, const FfnParams<S>& fp, const Tensor<S>& h,
                       const S* shift, const S* scale, const S* gate, FfnBlockTape<S>* tape) {
  const std::int64_t d = cfg.hidden;
  std::vector<S> inv_std;
  Tensor<S> x_hat = token_layernorm(h, cfg.ln_eps, &inv_std);
  Tensor<S> x_tilde = modulate(x_hat, shift, scale);
  Tensor<S> mid_pre = linear(x_tilde, fp.w1);
  Tensor<S> mid_act = gelu(mid_pre);
  Tensor<S> ffn_out = linear(mid_act, fp.w2);

  Tensor<S> h_new = h;
  for (std::int64_t r = 0; r < h.rows(); ++r)
    for (std::int64_t j = 0; j < d; ++j) h_new[r * d + j] += gate[j] * ffn_out[r * d + j];

  if (tape) {
    tape->h_in = h;
    tape->ln.x_hat = std::move(x_hat);
    tape->ln.inv_std = std::move(inv_std);
    tape->x_tilde = std::move(x_tilde);
    tape->mid_pre = std::move(mid_pre);
    tape->mid_act = std::move(mid_act);
    tape->ffn_out = std::move(ffn_out);
  }
  return h_new;
}

// ---- input embedding ----

// Extracts block (i,j) pixels from [H,W,3] rasters, concatenates noisy and
// LR channels to 6, and patchifies to [T, 6*p^2].
template <typename S>
Tensor<S> block_patch_input(const Tensor<S>& x, const Tensor<S>& lr_up, BlockCoord c,
                            std::int64_t block_size, std::int64_t patch_size) {
  const std::int64_t width = x.shape[1];
  Tensor<S> blk({block_size, block_size, 6});
  for (std::int64_t y = 0; y < block_size; ++y)
    for (std::int64_t xx = 0; xx < block_size; ++xx) {
      const std::int64_t sy = c.i * block_size + y;
      const std::int64_t sx = c.j * block_size + xx;
      for (int ch = 0; ch < 3; ++ch) {
        blk[(y * block_size + xx) * 6 + ch] = x[(sy * width + sx) * 3 + ch];
        blk[(y * block_size + xx) * 6 + 3 + ch] = lr_up[(sy * width + sx) * 3 + ch];
      }
    }
  return patchify(blk, patch_size);
}

template <typename S>
Tensor<S> block_lr_patch_input(const Tensor<S>& lr_up, BlockCoord c, std::int64_t block_size,
                               std::int64_t patch_size) {
  const std::int64_t width = lr_up.shape[1];
  Tensor<S> blk({block_size, block_size, 3});
  for (std::int64_t y = 0; y < block_size; ++y)
    for (std::int64_t xx = 0; xx < block_size; ++xx) {
      const std::int64_t sy = c.i * block_size + y;
      const std::int64_t sx = c.j * block_size + xx;
      for (int ch = 0; ch < 3; ++ch)
        blk[(y * block_size + xx) * 3 + ch] = lr_up[(sy * width + sx) * 3 + ch];
    }
  return patchify(blk, patch_size);
}

// ---- conditioning ----

template <typename S>
Tensor<S> compute_conditioning(const ModelParams<S>& p, double sigma, const Tensor<S>& sem,
                               ForwardTape<S>* tape) {
  if (sigma <= 0.0) throw std::invalid_argument("model: sigma must be > 0");
  if (sem.numel() != p.cfg.semantic_dim)
    throw std::invalid_argument("model: semantic embedding dimension mismatch");
  const double c_noise = std::log(sigma) / 4.0;
  Tensor<S> sin_emb = sinusoidal_embedding<S>(c_noise, p.cfg.hidden);
  Tensor<S> t_mid_pre = linear(sin_emb, p.time_mlp1);
  Tensor<S> t_mid_act = silu(t_mid_pre);
  Tensor<S> t_emb = linear(t_mid_act, p.time_mlp2);
  Tensor<S> sem_out = linear(sem, p.sem_proj);
  Tensor<S> cond({p.cfg.hidden});
  for (std::int64_t j = 0; j < p.cfg.hidden; ++j) cond[j] = t_emb[j] + sem_out[j];
  if (tape) {
    tape->c_noise = c_noise;
    tape->sin_emb = std::move(sin_emb);
    tape->t_mid_pre = std::move(t_mid_pre);
    tape->t_mid_act = std::move(t_mid_act);
    tape->t_emb = std::move(t_emb);
    tape->sem_in = sem;
    tape->sem_out = std::move(sem_out);
    tape->cond = cond;
    tape->silu_cond = silu(cond);
  }
  return cond;
}

// ---- whole-image (training) path ----

template <typename S>
Tensor<S> model_forward_full(const ModelParams<S>& p, const RopeTable<S>& rope,
                             const ModelInputs<S>& in, ForwardTape<S>* tape = nullptr) {
  const ModelConfig& cfg = p.cfg;
  cfg.validate();
  if (in.x.rank() != 3 || in.x.shape[2] != 3 || !in.x.same_shape(in.lr_up))
    throw std::invalid_argument("model: inputs must be matching [H,W,3] tensors");
  const BlockGridSpec spec =
      partition(in.x.shape[0], in.x.shape[1], cfg.block_size, cfg.patch_size);
  const std::int64_t t = cfg.tokens_per_block();
  const std::int64_t d = cfg.hidden;

  Tensor<S> cond = compute_conditioning(p, in.sigma, in.sem, tape);
  Tensor<S> silu_cond = tape ? tape->silu_cond : silu(cond);

  // patch embedding + LR tokens
  TokenGrid<S> z(spec.h, spec.w);
  TokenGrid<S> lrtok(spec.h, spec.w);
  if (tape) {
    tape->grid_h = spec.h;
    tape->grid_w = spec.w;
    tape->patch_in.resize(static_cast<std::size_t>(spec.blocks()));
    tape->lr_patch_in.resize(static_cast<std::size_t>(spec.blocks()));
    tape->lr_tok.resize(static_cast<std::size_t>(spec.blocks()));
  }
  for (std::int64_t i = 0; i < spec.h; ++i)
    for (std::int64_t j = 0; j < spec.w; ++j) {
      const BlockCoord c{i, j};
      Tensor<S> pin = block_patch_input(in.x, in.lr_up, c, cfg.block_size, cfg.patch_size);
      Tensor<S> lin_ = block_lr_patch_input(in.lr_up, c, cfg.block_size, cfg.patch_size);
      z.at(c) = linear(pin, p.patch_embed);
      lrtok.at(c) = linear(lin_, p.lr_embed);
      if (tape) {
        tape->patch_in[static_cast<std::size_t>(i * spec.w + j)] = std::move(pin);
        tape->lr_patch_in[static_cast<std::size_t>(i * spec.w + j)] = std::move(lin_);
        tape->lr_tok[static_cast<std::size_t>(i * spec.w + j)] = lrtok.at(c);
      }
    }

  if (tape) tape->layers.resize(static_cast<std::size_t>(cfg.layers));
  for (std::int64_t l = 0; l < cfg.layers; ++l) {
    const auto& blk = p.blocks[static_cast<std::size_t>(l)];
    Tensor<S> mod = linear(silu_cond, blk.ada);
    const S* m = mod.data.data();
    const std::int64_t chunks = blk.mod_chunks();
    const S* attn_shift = m + 0 * d;
    const S* attn_scale = m + 1 * d;
    const S* attn_gate = m + 2 * d;
    const S* ffn_shift = m + (chunks - 3) * d;
    const S* ffn_scale = m + (chunks - 2) * d;
    const S* ffn_gate = m + (chunks - 1) * d;

    LayerTape<S>* lt = tape ? &tape->layers[static_cast<std::size_t>(l)] : nullptr;
    if (lt) {
      lt->attn.resize(static_cast<std::size_t>(spec.blocks()));
      lt->ffn.resize(static_cast<std::size_t>(spec.blocks()));
      if (blk.cross) lt->cross.resize(static_cast<std::size_t>(spec.blocks()));
    }

    // pass 1: every block's q/k/v from this layer's input hidden states
    std::vector<QkvBundle<S>> qkv(static_cast<std::size_t>(spec.blocks()));
    for (std::int64_t bi = 0; bi < spec.blocks(); ++bi) {
      const BlockCoord c{bi / spec.w, bi % spec.w};
      qkv[static_cast<std::size_t>(bi)] =
          uniba_pass1(blk.attn, z.at(c), cfg.ln_eps, attn_shift, attn_scale,
                      lt ? &lt->attn[static_cast<std::size_t>(bi)] : nullptr);
    }
    const auto p_tilde = projected_slot_embeds(p.rel, blk.attn.wk);

    // pass 2: attention + (layer 0) cross + ffn
    auto kv = [&](BlockCoord c) {
      const auto& b = qkv[static_cast<std::size_t>(c.i * spec.w + c.j)];
      return std::pair<const Tensor<S>*, const Tensor<S>*>(&b.k_base, &b.v);
    };
    for (std::int64_t bi = 0; bi < spec.blocks(); ++bi) {
      const BlockCoord c{bi / spec.w, bi % spec.w};
      Tensor<S> h = uniba_pass2(cfg, blk.attn, p_tilde, rope, c, z.at(c),
                                qkv[static_cast<std::size_t>(bi)].q_raw, kv, attn_gate,
                                lt ? &lt->attn[static_cast<std::size_t>(bi)] : nullptr);
      if (blk.cross) {
        auto lr = [&](BlockCoord cc) { return &lrtok.at(cc); };
        h = cross_sublayer(cfg, *blk.cross, rope, c, spec.h, spec.w, h, m + 3 * d, m + 4 * d,
                           m + 5 * d, lr, lt ? &lt->cross[static_cast<std::size_t>(bi)] : nullptr);
      }
      z.at(c) = ffn_sublayer(cfg, blk.ffn, h, ffn_shift, ffn_scale, ffn_gate,
                             lt ? &lt->ffn[static_cast<std::size_t>(bi)] : nullptr);
    }
    if (lt) lt->mod = std::move(mod);
  }

  // final modulated norm + linear head, unpatchified to pixels
  Tensor<S> final_mod = linear(silu_cond, p.final_ada);
  Tensor<S> out({in.x.shape[0], in.x.shape[1], 3});
  if (tape) {
    tape->final_ln.resize(static_cast<std::size_t>(spec.blocks()));
    tape->final_xtilde.resize(static_cast<std::size_t>(spec.blocks()));
    tape->h_final.resize(static_cast<std::size_t>(spec.blocks()));
  }
  for (std::int64_t bi = 0; bi < spec.blocks(); ++bi) {
    const BlockCoord c{bi / spec.w, bi % spec.w};
    std::vector<S> inv_std;
    Tensor<S> x_hat = token_layernorm(z.at(c), cfg.ln_eps, &inv_std);
    Tensor<S> x_tilde = modulate(x_hat, final_mod.data.data(), final_mod.data.data() + d);
    Tensor<S> tok = linear(x_tilde, p.head);
    Tensor<S> pix = unpatchify(tok, cfg.patch_size, cfg.block_size, cfg.block_size, 3);
    for (std::int64_t y = 0; y < cfg.block_size; ++y)
      for (std::int64_t x = 0; x < cfg.block_size; ++x)
        for (int ch = 0; ch < 3; ++ch)
          out[((c.i * cfg.block_size + y) * in.x.shape[1] + c.j * cfg.block_size + x) * 3 + ch] =
              pix[(y * cfg.block_size + x) * 3 + ch];
    if (tape) {
      tape->h_final[static_cast<std::size_t>(bi)] = z.at(c);
      tape->final_ln[static_cast<std::size_t>(bi)].x_hat = std::move(x_hat);
      tape->final_ln[static_cast<std::size_t>(bi)].inv_std = std::move(inv_std);
      tape->final_xtilde[static_cast<std::size_t>(bi)] = std::move(x_tilde);
    }
  }
  if (tape) tape->final_mod = std::move(final_mod);
  return out;
}

// ---- streamed (inference) path ----

struct StreamStats {
  std::int64_t high_water_blocks = 0;
  std::int64_t high_water_bytes = 0;
  std::int64_t batches = 0;
};

// Processes one tile of the plan: reads dependency K/V from the cache,
// produces the tile's denoiser output tokens and the tile blocks' cache
// entries. Numerically identical to the same blocks of the full path.
template <typename S>
std::pair<std::vector<std::pair<BlockCoord, Tensor<S>>>,
          std::map<BlockCoord, KVCacheEntry<S>>>
uniba_streamed_tile(const ModelParams<S>& p, const RopeTable<S>& rope, const ModelInputs<S>& in,
                    const std::vector<BlockCoord>& tile, std::int64_t grid_h,
                    std::int64_t grid_w, const Tensor<S>& silu_cond,
                    const KVCacheStore<S>& cache) {
  const ModelConfig& cfg = p.cfg;
  const std::int64_t d = cfg.hidden;

  // per-block hidden state for this tile, plus this tile's cache entries
  std::map<BlockCoord, Tensor<S>> h;
  std::map<BlockCoord, KVCacheEntry<S>> entries;
  for (const auto& c : tile) {
    Tensor<S> pin = block_patch_input(in.x, in.lr_up, c, cfg.block_size, cfg.patch_size);
    h[c] = linear(pin, p.patch_embed);
    entries[c].k_base.resize(static_cast<std::size_t>(cfg.layers));
    entries[c].v.resize(static_cast<std::size_t>(cfg.layers));
  }

  for (std::int64_t l = 0; l < cfg.layers; ++l) {
    const auto& blk = p.blocks[static_cast<std::size_t>(l)];
    Tensor<S> mod = linear(silu_cond, blk.ada);
    const S* m = mod.data.data();
    const std::int64_t chunks = blk.mod_chunks();
    const S* attn_shift = m + 0 * d;
    const S* attn_scale = m + 1 * d;
    const S* attn_gate = m + 2 * d;
    const S* ffn_shift = m + (chunks - 3) * d;
    const S* ffn_scale = m + (chunks - 2) * d;
    const S* ffn_gate = m + (chunks - 1) * d;

    // pass 1 over the tile; keep q_raw, bank k_base/v as cache entries
    std::map<BlockCoord, Tensor<S>> q_raw;
    for (const auto& c : tile) {
      QkvBundle<S> b = uniba_pass1(blk.attn, h.at(c), cfg.ln_eps, attn_shift, attn_scale,
                                   static_cast<AttnBlockTape<S>*>(nullptr));
      q_raw[c] = std::move(b.q_raw);
      entries.at(c).k_base[static_cast<std::size_t>(l)] = std::move(b.k_base);
      entries.at(c).v[static_cast<std::size_t>(l)] = std::move(b.v);
    }
    const auto p_tilde = projected_slot_embeds(p.rel, blk.attn.wk);

    auto kv = [&](BlockCoord c) -> std::pair<const Tensor<S>*, const Tensor<S>*> {
      if (auto it = entries.find(c); it != entries.end())
        return {&it->second.k_base[static_cast<std::size_t>(l)],
                &it->second.v[static_cast<std::size_t>(l)]};
      const KVCacheEntry<S>& e = cache.get(c);
      return {&e.k_base[static_cast<std::size_t>(l)], &e.v[static_cast<std::size_t>(l)]};
    };
    std::map<BlockCoord, Tensor<S>> lrtok_local;
    auto lr = [&](BlockCoord c) {
      auto it = lrtok_local.find(c);
      if (it == lrtok_local.end()) {
        Tensor<S> lin_ = block_lr_patch_input(in.lr_up, c, cfg.block_size, cfg.patch_size);
        it = lrtok_local.emplace(c, linear(lin_, p.lr_embed)).first;
      }
      return &it->second;
    };

    for (const auto& c : tile) {
      Tensor<S> hc = uniba_pass2(cfg, blk.attn, p_tilde, rope, c, h.at(c), q_raw.at(c), kv,
                                 attn_gate, static_cast<AttnBlockTape<S>*>(nullptr));
      if (blk.cross)
        hc = cross_sublayer(cfg, *blk.cross, rope, c, grid_h, grid_w, hc, m + 3 * d, m + 4 * d,
                            m + 5 * d, lr, static_cast<CrossBlockTape<S>*>(nullptr));
      h.at(c) = ffn_sublayer(cfg, blk.ffn, hc, ffn_shift, ffn_scale, ffn_gate,
                             static_cast<FfnBlockTape<S>*>(nullptr));
    }
  }

  Tensor<S> final_mod = linear(silu_cond, p.final_ada);
  std::vector<std::pair<BlockCoord, Tensor<S>>> outputs;
  for (const auto& c : tile) {
    Tensor<S> x_hat = token_layernorm(h.at(c), cfg.ln_eps, static_cast<std::vector<S>*>(nullptr));
    Tensor<S> x_tilde = modulate(x_hat, final_mod.data.data(), final_mod.data.data() + d);
    outputs.emplace_back(c, linear(x_tilde, p.head));
  }
  return {std::move(outputs), std::move(entries)};
}

// Full streamed sweep over a generation plan. Peak cached state is w+n
// blocks; hidden-state memory never covers the whole image.
template <typename S>
Tensor<S> model_forward_streamed(const ModelParams<S>& p, const RopeTable<S>& rope,
                                 const ModelInputs<S>& in, const GenerationPlan& plan,
                                 StreamStats* stats = nullptr) {
  const ModelConfig& cfg = p.cfg;
  cfg.validate();
  const BlockGridSpec spec =
      partition(in.x.shape[0], in.x.shape[1], cfg.block_size, cfg.patch_size);
  if (spec.h != plan.h || spec.w != plan.w)
    throw std::invalid_argument("streamed: plan grid does not match input dims");

  Tensor<S> cond = compute_conditioning(p, in.sigma, in.sem, static_cast<ForwardTape<S>*>(nullptr));
  Tensor<S> silu_cond = silu(cond);

  KVCacheStore<S> cache;
  Tensor<S> out({in.x.shape[0], in.x.shape[1], 3});
  for (const auto& batch : plan.batches) {
    auto [outputs, entries] =
        uniba_streamed_tile(p, rope, in, batch.blocks, spec.h, spec.w, silu_cond, cache);
    for (auto& [c, tok] : outputs) {
      Tensor<S> pix = unpatchify(tok, cfg.patch_size, cfg.block_size, cfg.block_size, 3);
      for (std::int64_t y = 0; y < cfg.block_size; ++y)
        for (std::int64_t x = 0; x < cfg.block_size; ++x)
          for (int ch = 0; ch < 3; ++ch)
            out[((c.i * cfg.block_size + y) * in.x.shape[1] + c.j * cfg.block_size + x) * 3 +
                ch] = pix[(y * cfg.block_size + x) * 3 + ch];
    }
    for (const auto& e : batch.evictions) cache.evict(e);
    for (const auto& s : batch.stores) cache.put(s, std::move(entries.at(s)));
  }
  if (stats) {
    stats->high_water_blocks = cache.high_water_blocks();
    stats->high_water_bytes = cache.high_water_bytes();
    stats->batches = static_cast<std::int64_t>(plan.batches.size());
  }
  return out;
}

}  // namespace infdit
