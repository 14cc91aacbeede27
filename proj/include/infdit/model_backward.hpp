#pragma once

#include <array>
#include <cstdint>
#include <vector>

#include "infdit/model_forward.hpp"

namespace infdit {

namespace detail {

template <typename S>
void axpy(Tensor<S>& dst, const Tensor<S>& src) {
  for (std::int64_t i = 0; i < dst.numel(); ++i) dst[i] += src[i];
}

}  // namespace detail

// y = xW + b: accumulates dW += x^T dy and db += colsum(dy), returns dx.
template <typename S>
Tensor<S> linear_backward(const Tensor<S>& x, const Tensor<S>& dy, const LinearParams<S>& p,
                          LinearParams<S>& gp) {
  const std::int64_t rows = x.rows();
  const std::int64_t d_in = p.d_in();
  const std::int64_t d_out = p.d_out();
  Tensor<S> x2 = x.reshaped({rows, d_in});
  Tensor<S> dy2 = dy.reshaped({rows, d_out});
  detail::axpy(gp.weight, matmul(transpose_2d(x2), dy2));
  for (std::int64_t r = 0; r < rows; ++r)
    for (std::int64_t j = 0; j < d_out; ++j) gp.bias[j] += dy2[r * d_out + j];
  Tensor<S> dx = matmul(dy2, transpose_2d(p.weight));
  return dx.reshaped(x.shape);
}

// Backward of the non-affine token LN given the saved normalization.
template <typename S>
Tensor<S> token_layernorm_backward(const LnTape<S>& t, const Tensor<S>& d_x_hat) {
  const std::int64_t d = d_x_hat.last_dim();
  const std::int64_t rows = d_x_hat.rows();
  Tensor<S> dx(d_x_hat.shape);
  for (std::int64_t r = 0; r < rows; ++r) {
    const S* g = d_x_hat.data.data() + r * d;
    const S* xh = t.x_hat.data.data() + r * d;
    S mean_g = S(0), mean_gx = S(0);
    for (std::int64_t j = 0; j < d; ++j) {
      mean_g += g[j];
      mean_gx += g[j] * xh[j];
    }
    mean_g /= S(d);
    mean_gx /= S(d);
    const S inv = t.inv_std[static_cast<std::size_t>(r)];
    S* out = dx.data.data() + r * d;
    for (std::int64_t j = 0; j < d; ++j) out[j] = inv * (g[j] - mean_g - xh[j] * mean_gx);
  }
  return dx;
}

// Backward of the affine per-head q/k LayerNorm; accumulates gain/shift
// gradients.
template <typename S>
Tensor<S> head_layernorm_backward(const LnTape<S>& t, const LayerNormParams<S>& p,
                                  LayerNormParams<S>& gp, const Tensor<S>& d_out,
                                  std::int64_t heads) {
  const std::int64_t d = d_out.last_dim();
  const std::int64_t dh = d / heads;
  const std::int64_t rows = d_out.rows();
  Tensor<S> dx(d_out.shape);
  for (std::int64_t r = 0; r < rows; ++r)
    for (std::int64_t h = 0; h < heads; ++h) {
      const S* g_out = d_out.data.data() + r * d + h * dh;
      const S* xh = t.x_hat.data.data() + r * d + h * dh;
      const S inv = t.inv_std[static_cast<std::size_t>(r * heads + h)];
      S mean_g = S(0), mean_gx = S(0);
      for (std::int64_t j = 0; j < dh; ++j) {
        gp.gain[j] += g_out[j] * xh[j];
        gp.shift[j] += g_out[j];
      }
      // chain through the gain, then the normalization
      S* out = dx.data.data() + r * d + h * dh;
      for (std::int64_t j = 0; j < dh; ++j) {
        const S g = g_out[j] * p.gain[j];
        mean_g += g;
        mean_gx += g * xh[j];
      }
      mean_g /= S(dh);
      mean_gx /= S(dh);
      for (std::int64_t j = 0; j < dh; ++j) {
        const S g = g_out[j] * p.gain[j];
        out[j] = inv * (g - mean_g - xh[j] * mean_gx);
      }
    }
  return dx;
}

// x_tilde = x_hat*(1+scale)+shift: accumulates modulation gradients,
// returns d_x_hat.
template <typename S>
Tensor<S> modulate_backward(const Tensor<S>& x_hat, const Tensor<S>& d_x_tilde, const S* scale,
                            S* d_shift, S* d_scale) {
  const std::int64_t d = x_hat.last_dim();
  Tensor<S> dx(x_hat.shape);
  for (std::int64_t r = 0; r < x_hat.rows(); ++r)
    for (std::int64_t j = 0; j < d; ++j) {
      const S g = d_x_tilde[r * d + j];
      d_shift[j] += g;
      d_scale[j] += g * x_hat[r * d + j];
      dx[r * d + j] = g * (S(1) + scale[j]);
    }
  return dx;
}

// h_new = h + gate (.) u: accumulates d_gate, returns du.
template <typename S>
Tensor<S> gate_backward(const Tensor<S>& u, const Tensor<S>& d_h_new, const S* gate,
                        S* d_gate) {
  const std::int64_t d = u.last_dim();
  Tensor<S> du(u.shape);
  for (std::int64_t r = 0; r < u.rows(); ++r)
    for (std::int64_t j = 0; j < d; ++j) {
      const S g = d_h_new[r * d + j];
      d_gate[j] += g * u[r * d + j];
      du[r * d + j] = g * gate[j];
    }
  return du;
}

// Backward of attend_heads: consumes saved probs and the rotated q / keys
// / values, returns (dq_rot, dk_cat, dv_cat).
template <typename S>
void attend_heads_backward(const Tensor<S>& probs, const Tensor<S>& q_rot,
                           const Tensor<S>& k_cat, const Tensor<S>& v_cat,
                           const Tensor<S>& d_ctx, std::int64_t heads, Tensor<S>& dq_rot,
                           Tensor<S>& dk_cat, Tensor<S>& dv_cat) {
  const std::int64_t t_q = q_rot.shape[0];
  const std::int64_t t_k = k_cat.shape[0];
  const std::int64_t d = q_rot.shape[1];
  const std::int64_t dh = d / heads;
  const S scale = S(1) / std::sqrt(static_cast<S>(dh));

  dq_rot = Tensor<S>(q_rot.shape);
  dk_cat = Tensor<S>(k_cat.shape);
  dv_cat = Tensor<S>(v_cat.shape);

  std::vector<S> d_scores(static_cast<std::size_t>(t_k));
  for (std::int64_t h = 0; h < heads; ++h)
    for (std::int64_t tq = 0; tq < t_q; ++tq) {
      const S* p_row = probs.data.data() + (h * t_q + tq) * t_k;
      const S* dc = d_ctx.data.data() + tq * d + h * dh;

      // dprobs then softmax backward, fused into d_scores
      S dot = S(0);
      for (std::int64_t tk = 0; tk < t_k; ++tk) {
        const S* vv = v_cat.data.data() + tk * d + h * dh;
        S dp = S(0);
        for (std::int64_t j = 0; j < dh; ++j) dp += dc[j] * vv[j];
        d_scores[static_cast<std::size_t>(tk)] = dp;
        dot += dp * p_row[tk];
      }
      for (std::int64_t tk = 0; tk < t_k; ++tk)
        d_scores[static_cast<std::size_t>(tk)] =
            p_row[tk] * (d_scores[static_cast<std::size_t>(tk)] - dot);

      // dv += probs^T dctx ; dq += dscores*k*scale ; dk += dscores*q*scale
      const S* qv = q_rot.data.data() + tq * d + h * dh;
      S* dq = dq_rot.data.data() + tq * d + h * dh;
      for (std::int64_t tk = 0; tk < t_k; ++tk) {
        const S p = p_row[tk];
        const S ds = d_scores[static_cast<std::size_t>(tk)] * scale;
        const S* kv = k_cat.data.data() + tk * d + h * dh;
        S* dv = dv_cat.data.data() + tk * d + h * dh;
        S* dk = dk_cat.data.data() + tk * d + h * dh;
        for (std::int64_t j = 0; j < dh; ++j) {
          dv[j] += p * dc[j];
          dq[j] += ds * kv[j];
          dk[j] += ds * qv[j];
        }
      }
    }
}

// Whole-image backward pass: consumes the forward tape and the gradient
// of the loss w.r.t. the raw model output, accumulating into `grads`.
template <typename S>
void model_backward(const ModelParams<S>& p, const RopeTable<S>& rope,
                    const ForwardTape<S>& tape, const Tensor<S>& d_raw,
                    ModelParams<S>& grads) {
  const ModelConfig& cfg = p.cfg;
  const std::int64_t d = cfg.hidden;
  const std::int64_t t = cfg.tokens_per_block();
  const std::int64_t pps = cfg.patches_per_side();
  const std::int64_t blocks = tape.grid_h * tape.grid_w;
  const std::int64_t width = tape.grid_w * cfg.block_size;

  Tensor<S> d_silu_cond({d});

  // ---- final head + modulated norm ----
  Tensor<S> d_final_mod({2 * d});
  std::vector<Tensor<S>> dh(static_cast<std::size_t>(blocks));
  for (std::int64_t bi = 0; bi < blocks; ++bi) {
    const BlockCoord c{bi / tape.grid_w, bi % tape.grid_w};
    Tensor<S> blk({cfg.block_size, cfg.block_size, 3});
    for (std::int64_t y = 0; y < cfg.block_size; ++y)
      for (std::int64_t x = 0; x < cfg.block_size; ++x)
        for (int ch = 0; ch < 3; ++ch)
          blk[(y * cfg.block_size + x) * 3 + ch] =
              d_raw[((c.i * cfg.block_size + y) * width + c.j * cfg.block_size + x) * 3 + ch];
    Tensor<S> d_tok = patchify(blk, cfg.patch_size);  // backward of unpatchify
    Tensor<S> d_xtilde =
        linear_backward(tape.final_xtilde[static_cast<std::size_t>(bi)], d_tok, p.head, grads.head);
    Tensor<S> d_xhat =
        modulate_backward(tape.final_ln[static_cast<std::size_t>(bi)].x_hat, d_xtilde,
                          tape.final_mod.data.data() + d, d_final_mod.data.data(),
                          d_final_mod.data.data() + d);
    dh[static_cast<std::size_t>(bi)] =
        token_layernorm_backward(tape.final_ln[static_cast<std::size_t>(bi)], d_xhat);
  }
  detail::axpy(d_silu_cond,
               linear_backward(tape.silu_cond.reshaped({1, d}), d_final_mod.reshaped({1, 2 * d}),
                               p.final_ada, grads.final_ada)
                   .reshaped({d}));

  // ---- transformer layers, reverse order ----
  std::vector<Tensor<S>> d_lrtok(static_cast<std::size_t>(blocks));
  for (std::int64_t bi = 0; bi < blocks; ++bi)
    d_lrtok[static_cast<std::size_t>(bi)] = Tensor<S>({t, d});

  for (std::int64_t l = cfg.layers - 1; l >= 0; --l) {
    const auto& blk = p.blocks[static_cast<std::size_t>(l)];
    auto& gblk = grads.blocks[static_cast<std::size_t>(l)];
    const LayerTape<S>& lt = tape.layers[static_cast<std::size_t>(l)];
    const std::int64_t chunks = blk.mod_chunks();
    const S* mod = lt.mod.data.data();
    Tensor<S> d_mod({chunks * d});
    S* dm = d_mod.data.data();

    // ffn sublayer
    for (std::int64_t bi = 0; bi < blocks; ++bi) {
      const FfnBlockTape<S>& ft = lt.ffn[static_cast<std::size_t>(bi)];
      Tensor<S>& g = dh[static_cast<std::size_t>(bi)];
      Tensor<S> d_ffn = gate_backward(ft.ffn_out, g, mod + (chunks - 1) * d,
                                      dm + (chunks - 1) * d);
      Tensor<S> d_mid_act = linear_backward(ft.mid_act, d_ffn, blk.ffn.w2, gblk.ffn.w2);
      Tensor<S> d_mid_pre(d_mid_act.shape);
      for (std::int64_t i = 0; i < d_mid_pre.numel(); ++i)
        d_mid_pre[i] = d_mid_act[i] * gelu_grad_scalar(ft.mid_pre[i]);
      Tensor<S> d_xtilde = linear_backward(ft.x_tilde, d_mid_pre, blk.ffn.w1, gblk.ffn.w1);
      Tensor<S> d_xhat = modulate_backward(ft.ln.x_hat, d_xtilde, mod + (chunks - 2) * d,
                                           dm + (chunks - 3) * d, dm + (chunks - 2) * d);
      detail::axpy(g, token_layernorm_backward(ft.ln, d_xhat));
    }

    // cross-attention sublayer (first layer only)
    if (blk.cross) {
      auto& gcross = *gblk.cross;
      for (std::int64_t bi = 0; bi < blocks; ++bi) {
        const CrossBlockTape<S>& ct = lt.cross[static_cast<std::size_t>(bi)];
        const BlockCoord c{bi / tape.grid_w, bi % tape.grid_w};
        Tensor<S>& g = dh[static_cast<std::size_t>(bi)];
        Tensor<S> d_out = gate_backward(ct.cross_out, g, mod + 5 * d, dm + 5 * d);
        Tensor<S> d_ctx = linear_backward(ct.ctx, d_out, blk.cross->wo, gcross.wo);

        Tensor<S> dq_rot, dk_cat, dv_cat;
        attend_heads_backward(ct.probs, ct.q_rot, ct.k_rot_cat, ct.v_cat, d_ctx, cfg.heads,
                              dq_rot, dk_cat, dv_cat);

        Tensor<S> dq_ln = apply_rope_2d(dq_rot, block_token_positions(c, pps, rope), rope, -1);
        Tensor<S> dq_raw = head_layernorm_backward(ct.q_ln, blk.cross->q_norm, gcross.q_norm,
                                                   dq_ln, cfg.heads);
        Tensor<S> d_xtilde = linear_backward(ct.x_tilde, dq_raw, blk.cross->wq, gcross.wq);

        for (std::size_t s = 0; s < ct.neighborhood.size(); ++s) {
          const BlockCoord nc = ct.neighborhood[s];
          const std::int64_t ni = nc.i * tape.grid_w + nc.j;
          Tensor<S> dk_seg({t, d});
          Tensor<S> dv_seg({t, d});
          std::copy_n(dk_cat.data.begin() + static_cast<std::int64_t>(s) * t * d, t * d,
                      dk_seg.data.begin());
          std::copy_n(dv_cat.data.begin() + static_cast<std::int64_t>(s) * t * d, t * d,
                      dv_seg.data.begin());
          Tensor<S> dk_ln = apply_rope_2d(dk_seg, block_token_positions(nc, pps, rope), rope, -1);
          Tensor<S> dk_pre = head_layernorm_backward(ct.k_ln[s], blk.cross->k_norm,
                                                     gcross.k_norm, dk_ln, cfg.heads);
          const Tensor<S>& tok = tape.lr_tok[static_cast<std::size_t>(ni)];
          detail::axpy(d_lrtok[static_cast<std::size_t>(ni)],
                       linear_backward(tok, dk_pre, blk.cross->wk, gcross.wk));
          detail::axpy(d_lrtok[static_cast<std::size_t>(ni)],
                       linear_backward(tok, dv_seg, blk.cross->wv, gcross.wv));
        }

        Tensor<S> d_xhat =
            modulate_backward(ct.ln.x_hat, d_xtilde, mod + 4 * d, dm + 3 * d, dm + 4 * d);
        detail::axpy(g, token_layernorm_backward(ct.ln, d_xhat));
      }
    }

    // uniba attention sublayer: phase A scatters through the key slots,
    // phase B folds each block's projections back to its own input.
    std::vector<Tensor<S>> dq_raw(static_cast<std::size_t>(blocks));
    std::vector<Tensor<S>> dk_base(static_cast<std::size_t>(blocks));
    std::vector<Tensor<S>> dv(static_cast<std::size_t>(blocks));
    for (std::int64_t bi = 0; bi < blocks; ++bi) {
      dq_raw[static_cast<std::size_t>(bi)] = Tensor<S>({t, d});
      dk_base[static_cast<std::size_t>(bi)] = Tensor<S>({t, d});
      dv[static_cast<std::size_t>(bi)] = Tensor<S>({t, d});
    }
    std::array<Tensor<S>, 4> d_p_tilde;
    for (auto& g : d_p_tilde) g = Tensor<S>({d});

    for (std::int64_t bi = 0; bi < blocks; ++bi) {
      const AttnBlockTape<S>& at = lt.attn[static_cast<std::size_t>(bi)];
      const BlockCoord c{bi / tape.grid_w, bi % tape.grid_w};
      Tensor<S>& g = dh[static_cast<std::size_t>(bi)];
      Tensor<S> d_attn = gate_backward(at.attn_out, g, mod + 2 * d, dm + 2 * d);
      Tensor<S> d_ctx = linear_backward(at.ctx, d_attn, blk.attn.wo, gblk.attn.wo);

      Tensor<S> k_cat({4 * t, d});
      for (int s = 0; s < 4; ++s)
        std::copy(at.slots[static_cast<std::size_t>(s)].k_rot.data.begin(),
                  at.slots[static_cast<std::size_t>(s)].k_rot.data.end(),
                  k_cat.data.begin() + s * t * d);

      Tensor<S> dq_rot, dk_cat, dv_cat;
      attend_heads_backward(at.probs, at.q_rot, k_cat, at.v_cat, d_ctx, cfg.heads, dq_rot,
                            dk_cat, dv_cat);

      Tensor<S> dq_ln = apply_rope_2d(dq_rot, block_token_positions(c, pps, rope), rope, -1);
      detail::axpy(dq_raw[static_cast<std::size_t>(bi)],
                   head_layernorm_backward(at.q_ln, blk.attn.q_norm, gblk.attn.q_norm, dq_ln,
                                           cfg.heads));

      for (int s = 0; s < 4; ++s) {
        const auto& st = at.slots[static_cast<std::size_t>(s)];
        const std::int64_t ni = st.coord.i * tape.grid_w + st.coord.j;
        Tensor<S> dk_seg({t, d});
        Tensor<S> dv_seg({t, d});
        std::copy_n(dk_cat.data.begin() + s * t * d, t * d, dk_seg.data.begin());
        std::copy_n(dv_cat.data.begin() + s * t * d, t * d, dv_seg.data.begin());
        Tensor<S> dk_ln =
            apply_rope_2d(dk_seg, block_token_positions(st.coord, pps, rope), rope, -1);
        Tensor<S> dk_pre =
            head_layernorm_backward(st.k_ln, blk.attn.k_norm, gblk.attn.k_norm, dk_ln, cfg.heads);
        detail::axpy(dk_base[static_cast<std::size_t>(ni)], dk_pre);
        for (std::int64_t r = 0; r < t; ++r)
          for (std::int64_t j = 0; j < d; ++j)
            d_p_tilde[static_cast<std::size_t>(s)][j] += dk_pre[r * d + j];
        detail::axpy(dv[static_cast<std::size_t>(ni)], dv_seg);
      }
    }

    for (std::int64_t bi = 0; bi < blocks; ++bi) {
      const AttnBlockTape<S>& at = lt.attn[static_cast<std::size_t>(bi)];
      Tensor<S> d_xtilde =
          linear_backward(at.x_tilde, dq_raw[static_cast<std::size_t>(bi)], blk.attn.wq,
                          gblk.attn.wq);
      detail::axpy(d_xtilde, linear_backward(at.x_tilde, dk_base[static_cast<std::size_t>(bi)],
                                             blk.attn.wk, gblk.attn.wk));
      detail::axpy(d_xtilde, linear_backward(at.x_tilde, dv[static_cast<std::size_t>(bi)],
                                             blk.attn.wv, gblk.attn.wv));
      Tensor<S> d_xhat = modulate_backward(at.ln.x_hat, d_xtilde, mod + 1 * d, dm + 0 * d,
                                           dm + 1 * d);
      detail::axpy(dh[static_cast<std::size_t>(bi)], token_layernorm_backward(at.ln, d_xhat));
    }

    // p_tilde[s] = P_s W_k: fold into P and W_k gradients
    for (int s = 0; s < 4; ++s) {
      const Tensor<S>& p_s = p.rel.slot(s);
      Tensor<S>& gp_s = grads.rel.slot(s);
      const Tensor<S>& dpt = d_p_tilde[static_cast<std::size_t>(s)];
      for (std::int64_t i = 0; i < d; ++i) {
        S acc = S(0);
        for (std::int64_t j = 0; j < d; ++j) {
          acc += blk.attn.wk.weight[i * d + j] * dpt[j];
          gblk.attn.wk.weight[i * d + j] += p_s[i] * dpt[j];
        }
        gp_s[i] += acc;
      }
    }

    // layer modulation
    detail::axpy(d_silu_cond,
                 linear_backward(tape.silu_cond.reshaped({1, d}),
                                 d_mod.reshaped({1, chunks * d}), blk.ada, gblk.ada)
                     .reshaped({d}));
  }

  // ---- embeddings ----
  for (std::int64_t bi = 0; bi < blocks; ++bi) {
    linear_backward(tape.patch_in[static_cast<std::size_t>(bi)], dh[static_cast<std::size_t>(bi)],
                    p.patch_embed, grads.patch_embed);
    linear_backward(tape.lr_patch_in[static_cast<std::size_t>(bi)],
                    d_lrtok[static_cast<std::size_t>(bi)], p.lr_embed, grads.lr_embed);
  }

  // ---- conditioning ----
  Tensor<S> d_cond({d});
  for (std::int64_t j = 0; j < d; ++j)
    d_cond[j] = d_silu_cond[j] * silu_grad_scalar(tape.cond[j]);
  // time branch
  Tensor<S> d_mid_act = linear_backward(tape.t_mid_act.reshaped({1, d}), d_cond.reshaped({1, d}),
                                        p.time_mlp2, grads.time_mlp2)
                            .reshaped({d});
  Tensor<S> d_mid_pre({d});
  for (std::int64_t j = 0; j < d; ++j)
    d_mid_pre[j] = d_mid_act[j] * silu_grad_scalar(tape.t_mid_pre[j]);
  linear_backward(tape.sin_emb.reshaped({1, d}), d_mid_pre.reshaped({1, d}), p.time_mlp1,
                  grads.time_mlp1);
  // semantic branch
  linear_backward(tape.sem_in.reshaped({1, cfg.semantic_dim}), d_cond.reshaped({1, d}),
                  p.sem_proj, grads.sem_proj);
}

}  // namespace infdit
