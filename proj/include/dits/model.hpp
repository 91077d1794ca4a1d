#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "dits/tensor.hpp"

namespace dits {

/// How endogenous and exogenous tokens interact inside a block.
/// Dits is the dual-stream default: shared time attention per variate plus
/// joint variate attention with stream-specific projections. The others are
/// the ablation wirings: TimerXl flattens the variate-time grid into one
/// sequence, Prefix prepends covariate variate tokens as extra keys/values,
/// TimeXer cross-attends from the endogenous patches to covariate variate
/// tokens, ITransformer attends over whole-series variate tokens.
enum class AttentionVariant { Dits, TimerXl, Prefix, TimeXer, ITransformer };

/// How the diffusion time and covariates steer the network. Dits combines
/// joint variate attention with adaptive layer norm; Joint appends a t-token
/// and covariate tokens to the sequence with plain layer norm; Cross routes
/// them through cross-attention; AdaLN drops the covariate stream entirely
/// and conditions through modulation alone.
enum class ConditionVariant { Dits, Joint, Cross, AdaLN };

enum class TimeMask { Full, Causal };

AttentionVariant parse_attention_variant(const std::string& s);
ConditionVariant parse_condition_variant(const std::string& s);
TimeMask parse_time_mask(const std::string& s);
const char* to_string(AttentionVariant v);
const char* to_string(ConditionVariant v);
const char* to_string(TimeMask m);

struct ModelConfig {
  std::size_t d_model = 64;
  std::size_t n_layers = 2;
  std::size_t n_heads = 4;
  std::size_t d_ff = 0;  // 0 -> 4 * d_model
  std::size_t patch_len = 24;
  std::size_t n_cov = 0;
  std::size_t input_len = 168;  // history fed to the model; a patch multiple
  std::size_t horizon = 24;
  double dropout = 0.0;
  AttentionVariant attention_variant = AttentionVariant::Dits;
  ConditionVariant condition_variant = ConditionVariant::Dits;
  TimeMask time_mask = TimeMask::Full;

  std::size_t ff_dim() const { return d_ff ? d_ff : 4 * d_model; }
  std::size_t total_len() const { return input_len + horizon; }
  std::size_t n_patches() const { return total_len() / patch_len; }
  std::size_t head_dim() const { return d_model / n_heads; }

  /// Throws with every violation listed, not just the first.
  void validate() const;
};

struct LinearParams {
  Tensor w, b;
};

struct AttentionParams {
  LinearParams q, k, v, o;
};

struct BlockParams {
  /// SiLU + linear producing the per-sublayer (shift, scale, gate) triples;
  /// zero-initialised so every sublayer starts as the identity.
  std::optional<LinearParams> mod;
  std::optional<AttentionParams> time_attn;  // shared between streams
  std::optional<AttentionParams> var_x, var_c;
  std::optional<AttentionParams> cross;
  LinearParams ffn_in, ffn_out;  // shared between streams
};

/// All learnable state. Which optionals exist depends on the variant wiring;
/// for_each visits present tensors in a fixed order, which is what the
/// optimizer, serialization, and seeding rely on.
struct DitsParams {
  std::optional<LinearParams> patch_x;       // P -> D
  std::optional<LinearParams> patch_c;       // P -> D, shared across covariates
  std::optional<LinearParams> series_x;      // total_len -> D (ITransformer)
  std::optional<LinearParams> variate_embed; // total_len -> D, shared
  Tensor pos_table;                          // [N, D]; empty when unused
  std::vector<BlockParams> blocks;
  std::optional<LinearParams> head_mod;      // D -> 2D, zero-init
  LinearParams head;                         // D -> P (or D -> total_len), zero-init

  template <class Fn>
  void for_each(Fn&& fn) {
    for_each_impl(*this, fn);
  }
  template <class Fn>
  void for_each(Fn&& fn) const {
    for_each_impl(*this, fn);
  }

  std::size_t count() const {
    std::size_t n = 0;
    for_each([&](const std::string&, const Tensor& t) { n += t.size(); });
    return n;
  }

  DitsParams clone() const {
    DitsParams p = *this;
    p.for_each([](const std::string&, Tensor& t) { t = t.clone(); });
    return p;
  }

 private:
  template <class Self, class Fn>
  static void for_each_impl(Self& self, Fn& fn) {
    auto lin = [&](const std::string& name, auto& lp) {
      fn(name + ".w", lp.w);
      fn(name + ".b", lp.b);
    };
    auto opt_lin = [&](const std::string& name, auto& olp) {
      if (olp) lin(name, *olp);
    };
    auto opt_attn = [&](const std::string& name, auto& oap) {
      if (!oap) return;
      lin(name + ".q", oap->q);
      lin(name + ".k", oap->k);
      lin(name + ".v", oap->v);
      lin(name + ".o", oap->o);
    };
    opt_lin("patch_x", self.patch_x);
    opt_lin("patch_c", self.patch_c);
    opt_lin("series_x", self.series_x);
    opt_lin("variate_embed", self.variate_embed);
    if (self.pos_table.size() > 0) fn("pos_table", self.pos_table);
    for (std::size_t i = 0; i < self.blocks.size(); ++i) {
      const std::string p = "blocks." + std::to_string(i);
      auto& b = self.blocks[i];
      opt_lin(p + ".mod", b.mod);
      opt_attn(p + ".time", b.time_attn);
      opt_attn(p + ".var_x", b.var_x);
      opt_attn(p + ".var_c", b.var_c);
      opt_attn(p + ".cross", b.cross);
      lin(p + ".ffn_in", b.ffn_in);
      lin(p + ".ffn_out", b.ffn_out);
    }
    opt_lin("head_mod", self.head_mod);
    lin("head", self.head);
  }
};

/// Seeded initialization: weights uniform in +-1/sqrt(fan_in), biases zero,
/// modulation projections and the output head exactly zero so the whole
/// network is the identity map onto a zero velocity field at start.
DitsParams init_params(const ModelConfig& cfg, Rng& rng);

/// Every tensor randomized, gates and head included. Gradient checks and
/// permutation probes need a non-degenerate network; with the zero
/// initialization above they would only exercise the zero function.
DitsParams init_params_random_all(const ModelConfig& cfg, Rng& rng);

/// Attached copy: every tensor routed through g.leaf(), sharing buffers.
DitsParams bind(Graph& g, const DitsParams& p);

struct ParameterInfo {
  std::string name;
  Shape shape;
  std::size_t count = 0;
};
std::vector<ParameterInfo> parameter_report(const DitsParams& p);

struct ForwardTrace {
  std::vector<Shape> attention_shapes;  // score-tensor shape per attention
};

struct ForwardOptions {
  bool zero_variate_gate = false;        // force the variate-attention gate to 0
  const Tensor* condition_cov = nullptr; // covariates for the conditioning
                                         // embedding only (holds Z_y fixed
                                         // while the stream input varies)
  ForwardTrace* trace = nullptr;
  bool training = false;
  Rng* dropout_rng = nullptr;
};

struct DitsModel {
  ModelConfig config;
  DitsParams params;
};

/// Validates the config and initializes parameters for the requested
/// attention/condition wiring. Unknown combinations are rejected up front.
DitsModel build_model(const ModelConfig& cfg, std::uint64_t seed);

/// The velocity network. x_full is the normalized window with the clean
/// history and the noised horizon, cov the (normalized) covariate window,
/// t the per-sample diffusion times. Returns v_hat over the full window;
/// the loss masks it to the horizon.
///   x_full: [B, total_len]   cov: [B, total_len, C]   ->   [B, total_len]
Tensor forward(const DitsParams& params, const ModelConfig& cfg,
               const Tensor& x_full, const Tensor& cov,
               const std::vector<double>& t, const ForwardOptions& opts = {});

/// Interleaved sin/cos positional encoding of diffusion time, one frequency
/// pair per two channels, geometric from 1 down to 1/10000; the continuous
/// t in [0,1] is scaled by 1000 to span that range. Detached.
Tensor sinusoidal_time_embedding(const std::vector<double>& t, std::size_t d);

/// Z_y = mean of covariate variate-token embeddings plus the time encoding;
/// reduces to the time encoding alone when there are no covariates.
Tensor condition_embedding(const DitsParams& params, const ModelConfig& cfg,
                           const Tensor& cov, const std::vector<double>& t);

/// gamma * LN(h) + beta, with [B, D] modulation broadcast over token axes.
Tensor modulate(const Tensor& h, const Tensor& gamma, const Tensor& beta);

/// Dual patch embeddings with the position table added to both streams.
/// Returns Z_x [B, 1, N, D] and Z_c [B, C, N, D] (variate extent 0 when the
/// wiring has no covariate patch stream).
std::pair<Tensor, Tensor> patch_embed(const DitsParams& params,
                                      const ModelConfig& cfg,
                                      const Tensor& x_full, const Tensor& cov);

/// Scaled dot-product attention with head split/merge, no projections.
/// q: [lead..., Tq, D], k/v: [lead..., Tk, D]; the optional additive mask
/// broadcasts over the score tensor.
Tensor scaled_dot_attention(const Tensor& q, const Tensor& k, const Tensor& v,
                            std::size_t n_heads,
                            const Tensor* mask = nullptr);

}  // namespace dits
