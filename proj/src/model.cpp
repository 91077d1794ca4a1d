#include "dits/model.hpp"

#include <cmath>

#include "dits/ops.hpp"

namespace dits {

AttentionVariant parse_attention_variant(const std::string& s) {
  if (s == "dits") return AttentionVariant::Dits;
  if (s == "timer-xl") return AttentionVariant::TimerXl;
  if (s == "prefix") return AttentionVariant::Prefix;
  if (s == "timexer") return AttentionVariant::TimeXer;
  if (s == "itransformer") return AttentionVariant::ITransformer;
  throw Error("unknown attention variant '" + s + "'");
}

ConditionVariant parse_condition_variant(const std::string& s) {
  if (s == "dits") return ConditionVariant::Dits;
  if (s == "joint") return ConditionVariant::Joint;
  if (s == "cross") return ConditionVariant::Cross;
  if (s == "adaln") return ConditionVariant::AdaLN;
  throw Error("unknown condition variant '" + s + "'");
}

TimeMask parse_time_mask(const std::string& s) {
  if (s == "full") return TimeMask::Full;
  if (s == "causal") return TimeMask::Causal;
  throw Error("unknown time mask '" + s + "'");
}

const char* to_string(AttentionVariant v) {
  switch (v) {
    case AttentionVariant::Dits: return "dits";
    case AttentionVariant::TimerXl: return "timer-xl";
    case AttentionVariant::Prefix: return "prefix";
    case AttentionVariant::TimeXer: return "timexer";
    case AttentionVariant::ITransformer: return "itransformer";
  }
  return "?";
}

const char* to_string(ConditionVariant v) {
  switch (v) {
    case ConditionVariant::Dits: return "dits";
    case ConditionVariant::Joint: return "joint";
    case ConditionVariant::Cross: return "cross";
    case ConditionVariant::AdaLN: return "adaln";
  }
  return "?";
}

const char* to_string(TimeMask m) {
  return m == TimeMask::Full ? "full" : "causal";
}

void ModelConfig::validate() const {
  std::vector<std::string> errs;
  if (d_model == 0) errs.push_back("d_model must be positive");
  if (n_heads == 0) errs.push_back("n_heads must be positive");
  if (n_heads && d_model % n_heads != 0)
    errs.push_back("d_model must be divisible by n_heads");
  if (d_model % 2 != 0)
    errs.push_back("d_model must be even for the sinusoidal encoding");
  if (n_layers == 0) errs.push_back("n_layers must be positive");
  if (patch_len == 0) errs.push_back("patch_len must be positive");
  if (patch_len && input_len % patch_len != 0)
    errs.push_back("input_len must be a multiple of patch_len");
  if (patch_len && horizon % patch_len != 0)
    errs.push_back("horizon must be a multiple of patch_len");
  if (horizon == 0) errs.push_back("horizon must be positive");
  if (input_len == 0) errs.push_back("input_len must be positive");
  if (dropout < 0.0 || dropout >= 1.0)
    errs.push_back("dropout must lie in [0, 1)");
  if (attention_variant != AttentionVariant::Dits &&
      condition_variant != ConditionVariant::Dits)
    errs.push_back(
        "attention and condition variants cannot both deviate from 'dits'");
  if (time_mask == TimeMask::Causal &&
      !(attention_variant == AttentionVariant::Dits ||
        attention_variant == AttentionVariant::Prefix ||
        attention_variant == AttentionVariant::TimeXer))
    errs.push_back("causal masking requires a per-variate time attention");
  if (time_mask == TimeMask::Causal &&
      (condition_variant == ConditionVariant::Joint ||
       condition_variant == ConditionVariant::Cross))
    errs.push_back("causal masking is not defined for token-conditioning");
  if (!errs.empty()) {
    std::string msg = "invalid model config:";
    for (const auto& e : errs) msg += "\n  - " + e;
    throw Error(msg);
  }
}

namespace {

// number of (shift, scale, gate) triples the block consumes
std::size_t mod_sets(const ModelConfig& cfg) {
  if (cfg.condition_variant == ConditionVariant::AdaLN) return 2;
  switch (cfg.attention_variant) {
    case AttentionVariant::Dits: return 3;       // time, variate, ffn
    case AttentionVariant::TimeXer: return 3;    // self, cross, ffn
    case AttentionVariant::TimerXl:
    case AttentionVariant::Prefix:
    case AttentionVariant::ITransformer: return 2;
  }
  return 2;
}

bool uses_adaln(const ModelConfig& cfg) {
  return cfg.condition_variant == ConditionVariant::Dits ||
         cfg.condition_variant == ConditionVariant::AdaLN;
}

bool uses_c_patches(const ModelConfig& cfg) {
  return cfg.condition_variant == ConditionVariant::Dits &&
         (cfg.attention_variant == AttentionVariant::Dits ||
          cfg.attention_variant == AttentionVariant::TimerXl);
}

bool uses_variate_embed(const ModelConfig& cfg) {
  if (cfg.n_cov == 0 && uses_adaln(cfg)) return false;
  if (cfg.n_cov == 0) return false;
  return true;  // conditioning embedding or variate tokens
}

struct InitMode {
  bool randomize_all = false;
};

LinearParams make_linear(std::size_t in, std::size_t out, Rng& rng,
                         bool zero, const InitMode& mode) {
  LinearParams lp;
  if (zero && !mode.randomize_all) {
    lp.w = Tensor({in, out});
    lp.b = Tensor({out});
    return lp;
  }
  const double bound = 1.0 / std::sqrt(static_cast<double>(in));
  lp.w = randu(rng, {in, out}, -bound, bound);
  lp.b = mode.randomize_all ? randu(rng, {out}, -bound, bound)
                            : Tensor({out});
  return lp;
}

AttentionParams make_attention(std::size_t d, Rng& rng, const InitMode& mode) {
  AttentionParams ap;
  ap.q = make_linear(d, d, rng, false, mode);
  ap.k = make_linear(d, d, rng, false, mode);
  ap.v = make_linear(d, d, rng, false, mode);
  ap.o = make_linear(d, d, rng, false, mode);
  return ap;
}

DitsParams init_impl(const ModelConfig& cfg, Rng& rng, const InitMode& mode) {
  cfg.validate();
  const std::size_t D = cfg.d_model;
  const std::size_t P = cfg.patch_len;
  const std::size_t T = cfg.total_len();
  DitsParams p;

  const bool itrans = cfg.attention_variant == AttentionVariant::ITransformer;
  if (itrans) {
    p.series_x = make_linear(T, D, rng, false, mode);
  } else {
    p.patch_x = make_linear(P, D, rng, false, mode);
    const double bound = 1.0 / std::sqrt(static_cast<double>(D));
    p.pos_table = randu(rng, {cfg.n_patches(), D}, -bound, bound);
  }
  if (uses_c_patches(cfg)) p.patch_c = make_linear(P, D, rng, false, mode);
  if (uses_variate_embed(cfg))
    p.variate_embed = make_linear(T, D, rng, false, mode);

  const std::size_t n_mod = mod_sets(cfg);
  const bool adaln = uses_adaln(cfg);
  p.blocks.resize(cfg.n_layers);
  for (auto& b : p.blocks) {
    if (adaln) b.mod = make_linear(D, 3 * n_mod * D, rng, true, mode);
    b.time_attn = make_attention(D, rng, mode);
    if (cfg.attention_variant == AttentionVariant::Dits &&
        cfg.condition_variant == ConditionVariant::Dits) {
      b.var_x = make_attention(D, rng, mode);
      if (cfg.n_cov > 0) b.var_c = make_attention(D, rng, mode);
    }
    if (cfg.attention_variant == AttentionVariant::TimeXer ||
        cfg.condition_variant == ConditionVariant::Cross)
      b.cross = make_attention(D, rng, mode);
    b.ffn_in = make_linear(D, cfg.ff_dim(), rng, false, mode);
    b.ffn_out = make_linear(cfg.ff_dim(), D, rng, false, mode);
  }
  if (adaln) p.head_mod = make_linear(D, 2 * D, rng, true, mode);
  p.head = make_linear(D, itrans ? T : P, rng, true, mode);
  return p;
}

}  // namespace

DitsParams init_params(const ModelConfig& cfg, Rng& rng) {
  return init_impl(cfg, rng, {});
}

DitsParams init_params_random_all(const ModelConfig& cfg, Rng& rng) {
  return init_impl(cfg, rng, {.randomize_all = true});
}

DitsParams bind(Graph& g, const DitsParams& p) {
  DitsParams bound = p;
  bound.for_each([&](const std::string&, Tensor& t) { t = g.leaf(t); });
  return bound;
}

std::vector<ParameterInfo> parameter_report(const DitsParams& p) {
  std::vector<ParameterInfo> out;
  p.for_each([&](const std::string& name, const Tensor& t) {
    out.push_back({name, t.shape(), t.size()});
  });
  return out;
}

DitsModel build_model(const ModelConfig& cfg, std::uint64_t seed) {
  cfg.validate();
  Rng rng(seed);
  return DitsModel{cfg, init_params(cfg, rng)};
}

Tensor sinusoidal_time_embedding(const std::vector<double>& t, std::size_t d) {
  if (d % 2 != 0)
    throw Error("sinusoidal_time_embedding: dimension must be even");
  const std::size_t b = t.size();
  const std::size_t half = d / 2;
  Tensor e({b, d});
  for (std::size_t k = 0; k < half; ++k) {
    const double freq =
        half == 1 ? 1.0
                  : std::pow(10000.0, -static_cast<double>(k) /
                                          static_cast<double>(half - 1));
    for (std::size_t i = 0; i < b; ++i) {
      const double arg = t[i] * 1000.0 * freq;
      e.at(i, 2 * k) = std::sin(arg);
      e.at(i, 2 * k + 1) = std::cos(arg);
    }
  }
  return e;
}

namespace {

/// Variate tokens: each covariate's whole window embedded to one D-vector.
/// cov: [B, total, C] -> [B, C, D]
Tensor covariate_tokens(const LinearParams& embed, const Tensor& cov) {
  Tensor cols = transpose(cov, 1, 2);  // [B, C, total]
  return linear(cols, embed.w, embed.b);
}

Tensor broadcast_mod(const Tensor& v, std::size_t rank) {
  // [B, D] -> [B, 1, ..., 1, D] matching the stream rank
  Shape s(rank, 1);
  s[0] = v.shape()[0];
  s[rank - 1] = v.shape()[1];
  return reshape(v, std::move(s));
}

struct ModSet {
  Tensor beta, gamma, alpha;  // each [B, D]
};

std::vector<ModSet> block_mods(const LinearParams& mod, const Tensor& z_y,
                               std::size_t n_sets) {
  Tensor m = linear(silu(z_y), mod.w, mod.b);  // [B, 3*n_sets*D]
  const std::size_t d = z_y.shape()[1];
  std::vector<ModSet> sets;
  sets.reserve(n_sets);
  for (std::size_t i = 0; i < n_sets; ++i) {
    const std::size_t base = 3 * i * d;
    sets.push_back(ModSet{slice(m, 1, base, base + d),
                          slice(m, 1, base + d, base + 2 * d),
                          slice(m, 1, base + 2 * d, base + 3 * d)});
  }
  return sets;
}

Tensor gate(const Tensor& h, const Tensor& alpha) {
  return mul(broadcast_mod(alpha, h.rank()), h);
}

Tensor dropout_mask(const Tensor& h, const ForwardOptions& opts,
                    double rate) {
  Tensor mask(h.shape());
  const double keep = 1.0 - rate;
  for (auto& v : mask.values())
    v = opts.dropout_rng->uniform() < keep ? 1.0 / keep : 0.0;
  return mask;
}

Tensor maybe_dropout(const Tensor& h, const ModelConfig& cfg,
                     const ForwardOptions& opts) {
  if (!opts.training || cfg.dropout <= 0.0) return h;
  if (!opts.dropout_rng)
    throw Error("forward: dropout requires a generator in training mode");
  return mul(h, dropout_mask(h, opts, cfg.dropout));
}

/// Scaled dot-product attention with head split/merge. No projections.
/// q: [lead..., Tq, D], k/v: [lead..., Tk, D] -> [lead..., Tq, D]
Tensor attend(const Tensor& q_in, const Tensor& k_in, const Tensor& v_in,
              std::size_t n_heads, const Tensor* mask, ForwardTrace* trace) {
  const Shape& qs = q_in.shape();
  const std::size_t rank = qs.size();
  const std::size_t d = qs[rank - 1];
  const std::size_t tq = qs[rank - 2];
  const std::size_t tk = k_in.shape()[rank - 2];
  const std::size_t dh = d / n_heads;
  std::size_t lead = 1;
  for (std::size_t r = 0; r + 2 < rank; ++r) lead *= qs[r];

  auto split = [&](const Tensor& t, std::size_t tt) {
    return transpose(reshape(t, {lead, tt, n_heads, dh}), 1, 2);
  };
  Tensor q = split(q_in, tq);
  Tensor k = split(k_in, tk);
  Tensor v = split(v_in, tk);
  Tensor scores =
      scale(matmul(q, transpose(k, 2, 3)), 1.0 / std::sqrt(double(dh)));
  if (mask) scores = add(scores, *mask);
  if (trace) trace->attention_shapes.push_back(scores.shape());
  Tensor ctx = matmul(softmax(scores), v);  // [lead, h, Tq, dh]
  return reshape(transpose(ctx, 1, 2), qs);
}

Tensor causal_mask(std::size_t tq, std::size_t prefix_len) {
  // queries may see all prefix columns and x positions <= their own
  Tensor m({tq, prefix_len + tq});
  for (std::size_t i = 0; i < tq; ++i)
    for (std::size_t j = 0; j < prefix_len + tq; ++j)
      m.at(i, j) = (j < prefix_len || j - prefix_len <= i) ? 0.0 : -1e30;
  return m;
}

struct BlockCtx {
  const ModelConfig& cfg;
  const ForwardOptions& opts;
  const Tensor* time_mask;  // nullptr for full attention
};

/// One projected multi-head attention call: mod -> QKV -> attend -> O.
Tensor projected_attention(const AttentionParams& ap, const BlockCtx& ctx,
                           const Tensor& q_src, const Tensor& kv_src,
                           const Tensor* mask) {
  Tensor q = linear(q_src, ap.q.w, ap.q.b);
  Tensor k = linear(kv_src, ap.k.w, ap.k.b);
  Tensor v = linear(kv_src, ap.v.w, ap.v.b);
  Tensor h = attend(q, k, v, ctx.cfg.n_heads, mask, ctx.opts.trace);
  return maybe_dropout(linear(h, ap.o.w, ap.o.b), ctx.cfg, ctx.opts);
}

/// Time attention, one shared weight set applied per stream.
Tensor time_sublayer(const BlockParams& bp, const BlockCtx& ctx,
                     const Tensor& z, const ModSet& m) {
  Tensor u = modulate(z, m.gamma, m.beta);
  Tensor h = projected_attention(*bp.time_attn, ctx, u, u, ctx.time_mask);
  return add(z, gate(h, m.alpha));
}

/// Joint variate attention per patch position: stream-specific projections,
/// one attention over the 1+C variate tokens, stream-specific output maps.
/// z_x: [B, 1, N, D], z_c: [B, C, N, D] (C may be 0).
std::pair<Tensor, Tensor> variate_sublayer(const BlockParams& bp,
                                           const BlockCtx& ctx,
                                           const Tensor& z_x,
                                           const Tensor& z_c, ModSet m) {
  if (ctx.opts.zero_variate_gate)
    m.alpha = Tensor(m.alpha.shape());  // detached zeros: gate clamped
  const std::size_t c = z_c.shape()[1];
  Tensor u_x = modulate(z_x, m.gamma, m.beta);
  auto patch_major = [](const Tensor& t) { return transpose(t, 1, 2); };

  Tensor q = patch_major(linear(u_x, bp.var_x->q.w, bp.var_x->q.b));
  Tensor k = patch_major(linear(u_x, bp.var_x->k.w, bp.var_x->k.b));
  Tensor v = patch_major(linear(u_x, bp.var_x->v.w, bp.var_x->v.b));
  if (c > 0) {
    Tensor u_c = modulate(z_c, m.gamma, m.beta);
    q = concat({q, patch_major(linear(u_c, bp.var_c->q.w, bp.var_c->q.b))}, 2);
    k = concat({k, patch_major(linear(u_c, bp.var_c->k.w, bp.var_c->k.b))}, 2);
    v = concat({v, patch_major(linear(u_c, bp.var_c->v.w, bp.var_c->v.b))}, 2);
  }
  Tensor ctx_tokens =
      attend(q, k, v, ctx.cfg.n_heads, nullptr, ctx.opts.trace);  // [B,N,1+C,D]

  Tensor h_x = transpose(slice(ctx_tokens, 2, 0, 1), 1, 2);
  h_x = maybe_dropout(linear(h_x, bp.var_x->o.w, bp.var_x->o.b), ctx.cfg,
                      ctx.opts);
  Tensor out_x = add(z_x, gate(h_x, m.alpha));
  Tensor out_c = z_c;
  if (c > 0) {
    Tensor h_c = transpose(slice(ctx_tokens, 2, 1, 1 + c), 1, 2);
    h_c = maybe_dropout(linear(h_c, bp.var_c->o.w, bp.var_c->o.b), ctx.cfg,
                        ctx.opts);
    out_c = add(z_c, gate(h_c, m.alpha));
  }
  return {out_x, out_c};
}

Tensor ffn_sublayer(const BlockParams& bp, const BlockCtx& ctx,
                    const Tensor& z, const ModSet& m) {
  Tensor u = modulate(z, m.gamma, m.beta);
  Tensor h = maybe_dropout(gelu(linear(u, bp.ffn_in.w, bp.ffn_in.b)),
                           ctx.cfg, ctx.opts);
  h = linear(h, bp.ffn_out.w, bp.ffn_out.b);
  return add(z, gate(h, m.alpha));
}

// plain pre-LN residual FFN for the no-AdaLN condition variants
Tensor plain_ffn(const BlockParams& bp, const BlockCtx& ctx, const Tensor& z) {
  Tensor h = maybe_dropout(
      gelu(linear(layer_norm(z), bp.ffn_in.w, bp.ffn_in.b)), ctx.cfg,
      ctx.opts);
  return add(z, linear(h, bp.ffn_out.w, bp.ffn_out.b));
}

/// x patch tokens with the position table added: [B, N, D]
Tensor embed_x_patches(const DitsParams& p, const ModelConfig& cfg,
                       const Tensor& x_full) {
  const std::size_t b = x_full.shape()[0];
  Tensor xp = reshape(x_full, {b, cfg.n_patches(), cfg.patch_len});
  Tensor z = linear(xp, p.patch_x->w, p.patch_x->b);
  return add(z, p.pos_table);
}

/// c patch tokens with the position table added: [B, C, N, D]
Tensor embed_c_patches(const DitsParams& p, const ModelConfig& cfg,
                       const Tensor& cov) {
  const std::size_t b = cov.shape()[0];
  Tensor cols = transpose(cov, 1, 2);  // [B, C, total]
  Tensor cp = reshape(cols, {b, cfg.n_cov, cfg.n_patches(), cfg.patch_len});
  Tensor z = linear(cp, p.patch_c->w, p.patch_c->b);
  return add(z, p.pos_table);
}

Tensor output_head(const DitsParams& p, const ModelConfig& cfg,
                   const Tensor& tokens, const Tensor* z_y) {
  const std::size_t b = tokens.shape()[0];
  Tensor h;
  if (p.head_mod) {
    Tensor m = linear(silu(*z_y), p.head_mod->w, p.head_mod->b);
    const std::size_t d = cfg.d_model;
    h = modulate(tokens, slice(m, 1, d, 2 * d), slice(m, 1, 0, d));
  } else {
    h = layer_norm(tokens);
  }
  Tensor out = linear(h, p.head.w, p.head.b);  // [B, N, P]
  return reshape(out, {b, cfg.total_len()});
}

}  // namespace

Tensor modulate(const Tensor& h, const Tensor& gamma, const Tensor& beta) {
  Tensor normed = layer_norm(h);
  return add(mul(broadcast_mod(gamma, h.rank()), normed),
             broadcast_mod(beta, h.rank()));
}

std::pair<Tensor, Tensor> patch_embed(const DitsParams& params,
                                      const ModelConfig& cfg,
                                      const Tensor& x_full,
                                      const Tensor& cov) {
  const std::size_t b = x_full.shape()[0];
  const std::size_t n = cfg.n_patches();
  Tensor z_x =
      reshape(embed_x_patches(params, cfg, x_full), {b, 1, n, cfg.d_model});
  Tensor z_c = params.patch_c ? embed_c_patches(params, cfg, cov)
                              : Tensor({b, 0, n, cfg.d_model});
  return {z_x, z_c};
}

Tensor scaled_dot_attention(const Tensor& q, const Tensor& k, const Tensor& v,
                            std::size_t n_heads, const Tensor* mask) {
  return attend(q, k, v, n_heads, mask, nullptr);
}

Tensor condition_embedding(const DitsParams& params, const ModelConfig& cfg,
                           const Tensor& cov, const std::vector<double>& t) {
  Tensor e_time = sinusoidal_time_embedding(t, cfg.d_model);
  if (cfg.n_cov == 0 || !params.variate_embed) return e_time;
  Tensor tokens = covariate_tokens(*params.variate_embed, cov);  // [B, C, D]
  Tensor e_cov = mean(tokens, 1);
  return add(e_cov, e_time);
}

Tensor forward(const DitsParams& params, const ModelConfig& cfg,
               const Tensor& x_full, const Tensor& cov,
               const std::vector<double>& t, const ForwardOptions& opts) {
  const std::size_t total = cfg.total_len();
  if (x_full.rank() != 2 || x_full.shape()[1] != total)
    throw Error("forward: endogenous window must be [B, " +
                std::to_string(total) + "], got " + shape_str(x_full.shape()));
  const std::size_t b = x_full.shape()[0];
  if (cov.rank() != 3 || cov.shape()[0] != b || cov.shape()[1] != total ||
      cov.shape()[2] != cfg.n_cov)
    throw Error("forward: covariate window must be [" + std::to_string(b) +
                ", " + std::to_string(total) + ", " +
                std::to_string(cfg.n_cov) + "], got " +
                shape_str(cov.shape()));
  if (t.size() != b)
    throw Error("forward: need one diffusion time per sample");

  const std::size_t n = cfg.n_patches();
  const std::size_t d = cfg.d_model;
  const Tensor& cond_cov = opts.condition_cov ? *opts.condition_cov : cov;

  Tensor mask;
  const Tensor* mask_ptr = nullptr;
  if (cfg.time_mask == TimeMask::Causal &&
      cfg.attention_variant != AttentionVariant::Prefix) {
    mask = causal_mask(n, 0);
    mask_ptr = &mask;
  }
  BlockCtx ctx{cfg, opts, mask_ptr};

  // --- no-AdaLN condition variants: single stream with conditioning tokens
  if (cfg.condition_variant == ConditionVariant::Joint ||
      cfg.condition_variant == ConditionVariant::Cross) {
    Tensor x_tokens = embed_x_patches(params, cfg, x_full);  // [B, N, D]
    Tensor t_token =
        reshape(sinusoidal_time_embedding(t, d), {b, std::size_t(1), d});
    Tensor cond_tokens = t_token;  // [B, 1+C, D]
    if (cfg.n_cov > 0)
      cond_tokens = concat(
          {t_token, covariate_tokens(*params.variate_embed, cond_cov)}, 1);

    if (cfg.condition_variant == ConditionVariant::Joint) {
      Tensor seq = concat({x_tokens, cond_tokens}, 1);  // [B, N+1+C, D]
      for (const auto& bp : params.blocks) {
        Tensor u = layer_norm(seq);
        seq = add(seq,
                  projected_attention(*bp.time_attn, ctx, u, u, nullptr));
        seq = plain_ffn(bp, ctx, seq);
      }
      return output_head(params, cfg, slice(seq, 1, 0, n), nullptr);
    }
    // Cross: self-attention over x, cross-attention into the static tokens
    Tensor z = x_tokens;
    Tensor kv = layer_norm(cond_tokens);
    for (const auto& bp : params.blocks) {
      Tensor u = layer_norm(z);
      z = add(z, projected_attention(*bp.time_attn, ctx, u, u, nullptr));
      z = add(z, projected_attention(*bp.cross, ctx, layer_norm(z), kv,
                                     nullptr));
      z = plain_ffn(bp, ctx, z);
    }
    return output_head(params, cfg, z, nullptr);
  }

  // --- AdaLN paths
  Tensor z_y = condition_embedding(params, cfg, cond_cov, t);
  const std::size_t n_mod = mod_sets(cfg);

  switch (cfg.attention_variant) {
    case AttentionVariant::Dits: {
      if (cfg.condition_variant == ConditionVariant::AdaLN) {
        // covariates reach the network only through Z_y
        Tensor z = embed_x_patches(params, cfg, x_full);
        for (const auto& bp : params.blocks) {
          auto mods = block_mods(*bp.mod, z_y, n_mod);
          z = time_sublayer(bp, ctx, z, mods[0]);
          z = ffn_sublayer(bp, ctx, z, mods[1]);
        }
        return output_head(params, cfg, z, &z_y);
      }
      // dual stream
      Tensor z_x =
          reshape(embed_x_patches(params, cfg, x_full), {b, 1, n, d});
      Tensor z_c = embed_c_patches(params, cfg, cov);  // [B, C, N, D]
      for (const auto& bp : params.blocks) {
        auto mods = block_mods(*bp.mod, z_y, n_mod);
        Tensor zx = time_sublayer(bp, ctx, z_x, mods[0]);
        Tensor zc = time_sublayer(bp, ctx, z_c, mods[0]);
        std::tie(zx, zc) = variate_sublayer(bp, ctx, zx, zc, mods[1]);
        z_x = ffn_sublayer(bp, ctx, zx, mods[2]);
        z_c = ffn_sublayer(bp, ctx, zc, mods[2]);
      }
      return output_head(params, cfg, reshape(z_x, {b, n, d}), &z_y);
    }

    case AttentionVariant::TimerXl: {
      // one attention over the flattened variate-time grid
      Tensor z_x =
          reshape(embed_x_patches(params, cfg, x_full), {b, 1, n, d});
      Tensor z = z_x;
      if (cfg.n_cov > 0)
        z = concat({z_x, embed_c_patches(params, cfg, cov)}, 1);
      const std::size_t v = 1 + cfg.n_cov;
      z = reshape(z, {b, v * n, d});
      for (const auto& bp : params.blocks) {
        auto mods = block_mods(*bp.mod, z_y, n_mod);
        z = time_sublayer(bp, ctx, z, mods[0]);
        z = ffn_sublayer(bp, ctx, z, mods[1]);
      }
      Tensor x_tokens = slice(z, 1, 0, n);  // x tokens were laid out first
      return output_head(params, cfg, x_tokens, &z_y);
    }

    case AttentionVariant::Prefix: {
      Tensor z = embed_x_patches(params, cfg, x_full);  // [B, N, D]
      Tensor prefix;  // [B, C, D]
      const std::size_t c = cfg.n_cov;
      if (c > 0) prefix = covariate_tokens(*params.variate_embed, cov);
      Tensor pmask;
      const Tensor* pmask_ptr = nullptr;
      if (cfg.time_mask == TimeMask::Causal) {
        pmask = causal_mask(n, c);
        pmask_ptr = &pmask;
      }
      for (const auto& bp : params.blocks) {
        auto mods = block_mods(*bp.mod, z_y, n_mod);
        Tensor u_q = modulate(z, mods[0].gamma, mods[0].beta);
        Tensor u_kv = u_q;
        if (c > 0)
          u_kv = concat(
              {modulate(prefix, mods[0].gamma, mods[0].beta), u_q}, 1);
        Tensor h =
            projected_attention(*bp.time_attn, ctx, u_q, u_kv, pmask_ptr);
        z = add(z, gate(h, mods[0].alpha));
        z = ffn_sublayer(bp, ctx, z, mods[1]);
      }
      return output_head(params, cfg, z, &z_y);
    }

    case AttentionVariant::TimeXer: {
      Tensor z = embed_x_patches(params, cfg, x_full);
      Tensor tokens;
      const bool has_c = cfg.n_cov > 0;
      if (has_c) tokens = covariate_tokens(*params.variate_embed, cov);
      for (const auto& bp : params.blocks) {
        auto mods = block_mods(*bp.mod, z_y, n_mod);
        z = time_sublayer(bp, ctx, z, mods[0]);
        if (has_c) {
          Tensor u_q = modulate(z, mods[1].gamma, mods[1].beta);
          Tensor u_kv = modulate(tokens, mods[1].gamma, mods[1].beta);
          Tensor h = projected_attention(*bp.cross, ctx, u_q, u_kv, nullptr);
          z = add(z, gate(h, mods[1].alpha));
        }
        z = ffn_sublayer(bp, ctx, z, mods[2]);
      }
      return output_head(params, cfg, z, &z_y);
    }

    case AttentionVariant::ITransformer: {
      // whole series per variate token
      Tensor x_tok = linear(reshape(x_full, {b, std::size_t(1), total}),
                            params.series_x->w, params.series_x->b);
      Tensor seq = x_tok;  // [B, 1+C, D]
      if (cfg.n_cov > 0)
        seq = concat(
            {x_tok, covariate_tokens(*params.variate_embed, cov)}, 1);
      for (const auto& bp : params.blocks) {
        auto mods = block_mods(*bp.mod, z_y, n_mod);
        seq = time_sublayer(bp, ctx, seq, mods[0]);
        seq = ffn_sublayer(bp, ctx, seq, mods[1]);
      }
      Tensor x_out = slice(seq, 1, 0, 1);  // [B, 1, D]
      Tensor h;
      {
        Tensor m = linear(silu(z_y), params.head_mod->w, params.head_mod->b);
        h = modulate(x_out, slice(m, 1, d, 2 * d), slice(m, 1, 0, d));
      }
      Tensor out = linear(h, params.head.w, params.head.b);  // [B, 1, total]
      return reshape(out, {b, total});
    }
  }
  throw Error("forward: unreachable");
}

}  // namespace dits
