#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "dits/model.hpp"

#include <cmath>

#include "dits/grad_check.hpp"
#include "dits/ops.hpp"
#include "doctest.h"

using namespace dits;

namespace {

// D=8, heads=2, one block, N=3 (input 8 + horizon 4, patch 4), C=2
ModelConfig tiny_config() {
  ModelConfig cfg;
  cfg.d_model = 8;
  cfg.n_layers = 1;
  cfg.n_heads = 2;
  cfg.patch_len = 4;
  cfg.n_cov = 2;
  cfg.input_len = 8;
  cfg.horizon = 4;
  return cfg;
}

Tensor random_inputs(Rng& rng, std::size_t b, std::size_t total) {
  return randu(rng, {b, total}, -2.0, 2.0);
}

double max_abs_diff(const Tensor& a, const Tensor& b) {
  double m = 0;
  for (std::size_t i = 0; i < a.size(); ++i)
    m = std::max(m, std::fabs(a.data()[i] - b.data()[i]));
  return m;
}

}  // namespace

TEST_CASE("patch_embed: token counts, positional table, degenerate C=0") {
  ModelConfig cfg = tiny_config();
  cfg.input_len = 168;
  cfg.horizon = 24;
  cfg.patch_len = 24;
  CHECK(cfg.n_patches() == 8);  // 192 / 24

  Rng rng(1);
  DitsParams p = init_params(cfg, rng);
  Tensor x({2, cfg.total_len()});
  Tensor cov({2, cfg.total_len(), 2});
  auto [zx, zc] = patch_embed(p, cfg, x, cov);
  CHECK(zx.shape() == Shape{2, 1, 8, 8});
  CHECK(zc.shape() == Shape{2, 2, 8, 8});

  // zero window and zero bias leave only the positional table
  for (std::size_t n = 0; n < 8; ++n)
    for (std::size_t d = 0; d < 8; ++d) {
      CHECK(zx.at(std::size_t(0), std::size_t(0), n, d) ==
            p.pos_table.at(n, d));
      CHECK(zc.at(std::size_t(1), std::size_t(1), n, d) ==
            p.pos_table.at(n, d));
    }

  ModelConfig c0 = cfg;
  c0.n_cov = 0;
  Rng rng2(1);
  DitsParams p0 = init_params(c0, rng2);
  auto [zx0, zc0] = patch_embed(p0, c0, x, Tensor({2, c0.total_len(), 0}));
  CHECK(zc0.shape() == Shape{2, 0, 8, 8});
  CHECK(zx0.shape() == Shape{2, 1, 8, 8});
}

TEST_CASE("sinusoidal embedding: t=0 interleaves sin 0 = 0, cos 0 = 1") {
  Tensor e = sinusoidal_time_embedding({0.0, 0.0}, 8);
  for (std::size_t b = 0; b < 2; ++b)
    for (std::size_t k = 0; k < 4; ++k) {
      CHECK(e.at(b, 2 * k) == 0.0);
      CHECK(e.at(b, 2 * k + 1) == 1.0);
    }
  // frequencies run geometrically from 1 to 1/10000
  Tensor e2 = sinusoidal_time_embedding({0.001}, 8);  // t*1000 = 1
  CHECK(e2.at(std::size_t(0), std::size_t(0)) == doctest::Approx(std::sin(1.0)));
  CHECK(e2.at(std::size_t(0), std::size_t(6)) ==
        doctest::Approx(std::sin(1e-4)));
}

TEST_CASE("condition_embedding: covariate permutation invariance and C=0") {
  ModelConfig cfg = tiny_config();
  cfg.n_cov = 3;
  Rng rng(7);
  DitsParams p = init_params_random_all(cfg, rng);
  Tensor cov = randu(rng, {2, cfg.total_len(), 3}, -1.0, 1.0);
  Tensor z1 = condition_embedding(p, cfg, cov, {0.3, 0.7});

  // permute covariate columns 0,1,2 -> 2,0,1
  Tensor perm({2, cfg.total_len(), 3});
  for (std::size_t b = 0; b < 2; ++b)
    for (std::size_t t = 0; t < cfg.total_len(); ++t) {
      perm.at(b, t, std::size_t(0)) = cov.at(b, t, std::size_t(2));
      perm.at(b, t, std::size_t(1)) = cov.at(b, t, std::size_t(0));
      perm.at(b, t, std::size_t(2)) = cov.at(b, t, std::size_t(1));
    }
  Tensor z2 = condition_embedding(p, cfg, perm, {0.3, 0.7});
  CHECK(max_abs_diff(z1, z2) < 1e-12);

  ModelConfig c0 = cfg;
  c0.n_cov = 0;
  Rng rng2(7);
  DitsParams p0 = init_params(c0, rng2);
  Tensor z0 = condition_embedding(p0, c0, Tensor({1, c0.total_len(), 0}), {0.25});
  Tensor et = sinusoidal_time_embedding({0.25}, cfg.d_model);
  CHECK(max_abs_diff(z0, et) == 0.0);
}

TEST_CASE("modulation: zero MLP yields zero, identity gamma recovers LN, hand case") {
  Tensor h({1, 4}, {1, 2, 3, 4});

  SUBCASE("gamma=0, beta=0 annihilates any input") {
    Tensor zero({1, 4});
    Tensor out = modulate(h, Tensor({1, 4}), Tensor({1, 4}));
    CHECK(max_abs_diff(out, zero) == 0.0);
  }
  SUBCASE("gamma=1, beta=0 is plain layer norm") {
    Tensor out = modulate(h, Tensor::full({1, 4}, 1.0), Tensor({1, 4}));
    CHECK(max_abs_diff(out, layer_norm(h)) == 0.0);
  }
  SUBCASE("gamma=2, beta=1 matches the hand-computed 2*LN(h)+1") {
    Tensor out = modulate(h, Tensor::full({1, 4}, 2.0),
                          Tensor::full({1, 4}, 1.0));
    const double want[4] = {-1.6832708399378538, 0.105576386687382,
                            1.894423613312618, 3.6832708399378538};
    for (std::size_t i = 0; i < 4; ++i)
      CHECK(out.at(std::size_t(0), i) == doctest::Approx(want[i]).epsilon(1e-12));
  }
}

TEST_CASE("attention: one key means softmax of one, i.e. the value path") {
  Tensor q({1, 1, 4}, {1, 2, 3, 4});
  Tensor k({1, 1, 4}, {0.5, -1, 2, 0});
  Tensor v({1, 1, 4}, {9, 8, 7, 6});
  Tensor out = scaled_dot_attention(q, k, v, 2);
  CHECK(max_abs_diff(out, v) == 0.0);
}

TEST_CASE("attention: single-head N=2 case matches the hand computation") {
  Tensor z({2, 2}, {0.5, -1.0, 1.5, 2.0});
  Tensor wq({2, 2}, {0.2, -0.3, 0.1, 0.4});
  Tensor wk({2, 2}, {-0.5, 0.2, 0.3, 0.1});
  Tensor wv({2, 2}, {1.0, 0.5, -0.2, 0.3});
  Tensor out = scaled_dot_attention(matmul(z, wq), matmul(z, wk),
                                    matmul(z, wv), 1);
  const double want[4] = {0.8806156060911072, 0.5821546213188751,
                          0.9263622188807262, 0.7422677660825417};
  for (std::size_t i = 0; i < 4; ++i)
    CHECK(out.data()[i] == doctest::Approx(want[i]).epsilon(1e-12));
}

TEST_CASE("attention: two-token joint case with per-stream projections") {
  Tensor ux({1, 2}, {0.3, -0.7});
  Tensor uc({1, 2}, {1.1, 0.4});
  Tensor wq_x({2, 2}, {0.5, 0.1, -0.2, 0.3});
  Tensor wk_x({2, 2}, {0.4, -0.1, 0.2, 0.2});
  Tensor wv_x({2, 2}, {0.3, 0.6, 0.1, -0.4});
  Tensor wq_c({2, 2}, {-0.3, 0.2, 0.5, 0.1});
  Tensor wk_c({2, 2}, {0.1, 0.3, -0.4, 0.2});
  Tensor wv_c({2, 2}, {0.2, -0.1, 0.3, 0.5});
  Tensor q = concat({matmul(ux, wq_x), matmul(uc, wq_c)}, 0);
  Tensor k = concat({matmul(ux, wk_x), matmul(uc, wk_c)}, 0);
  Tensor v = concat({matmul(ux, wv_x), matmul(uc, wv_c)}, 0);
  Tensor out = scaled_dot_attention(q, k, v, 1);
  const double want[4] = {0.1736055056421627, 0.2823936341012494,
                          0.18874243756196973, 0.26489155656897256};
  for (std::size_t i = 0; i < 4; ++i)
    CHECK(out.data()[i] == doctest::Approx(want[i]).epsilon(1e-12));
}

TEST_CASE("ffn pieces: zero hidden weights reduce to the output bias") {
  Tensor u({2, 3}, {1, -1, 2, 0.5, 0, -2});
  Tensor w1({3, 5});
  Tensor b1({5});
  Tensor w2({5, 3});
  Tensor b2({3}, {1.5, -2.5, 0.25});
  Tensor h = linear(gelu(linear(u, w1, b1)), w2, b2);
  for (std::size_t r = 0; r < 2; ++r)
    for (std::size_t c = 0; c < 3; ++c)
      CHECK(h.at(r, c) == b2.at(c));
}

TEST_CASE("ffn pieces: library composition equals a hand-rolled reference") {
  Rng rng(3);
  Tensor u = randu(rng, {4, 6}, -2, 2);
  Tensor w1 = randu(rng, {6, 10}, -0.5, 0.5);
  Tensor b1 = randu(rng, {10}, -0.1, 0.1);
  Tensor w2 = randu(rng, {10, 6}, -0.5, 0.5);
  Tensor b2 = randu(rng, {6}, -0.1, 0.1);
  Tensor got = linear(gelu(linear(u, w1, b1)), w2, b2);

  // independent reference: plain loops and std::erf
  for (std::size_t r = 0; r < 4; ++r)
    for (std::size_t c = 0; c < 6; ++c) {
      double acc2 = b2.at(c);
      for (std::size_t j = 0; j < 10; ++j) {
        double acc1 = b1.at(j);
        for (std::size_t i = 0; i < 6; ++i)
          acc1 += u.at(r, i) * w1.at(i, j);
        const double g =
            0.5 * acc1 * (1.0 + std::erf(acc1 / std::sqrt(2.0)));
        acc2 += g * w2.at(j, c);
      }
      CHECK(std::fabs(got.at(r, c) - acc2) < 1e-12);
    }
}

TEST_CASE("forward: zero-initialized network emits exactly zero velocity") {
  for (const char* attn : {"dits", "timer-xl", "prefix", "timexer",
                           "itransformer"}) {
    ModelConfig cfg = tiny_config();
    cfg.attention_variant = parse_attention_variant(attn);
    DitsModel m = build_model(cfg, 11);
    Rng rng(5);
    Tensor x = random_inputs(rng, 2, cfg.total_len());
    Tensor cov = randu(rng, {2, cfg.total_len(), 2}, -1, 1);
    Tensor v = forward(m.params, cfg, x, cov, {0.2, 0.9});
    CHECK(v.shape() == Shape{2, cfg.total_len()});
    for (double x_i : v.values()) CHECK(x_i == 0.0);
  }
  for (const char* cond : {"joint", "cross", "adaln"}) {
    ModelConfig cfg = tiny_config();
    cfg.condition_variant = parse_condition_variant(cond);
    DitsModel m = build_model(cfg, 11);
    Rng rng(5);
    Tensor x = random_inputs(rng, 2, cfg.total_len());
    Tensor cov = randu(rng, {2, cfg.total_len(), 2}, -1, 1);
    Tensor v = forward(m.params, cfg, x, cov, {0.2, 0.9});
    for (double x_i : v.values()) CHECK(x_i == 0.0);
  }
}

TEST_CASE("forward: shape contract and head-count independence of shapes") {
  ModelConfig cfg = tiny_config();
  Rng rng(2);
  Tensor x = random_inputs(rng, 3, cfg.total_len());
  Tensor cov = randu(rng, {3, cfg.total_len(), 2}, -1, 1);

  Rng r1(21);
  DitsParams p1 = init_params_random_all(cfg, r1);
  Tensor v1 = forward(p1, cfg, x, cov, {0.1, 0.5, 0.9});
  CHECK(v1.shape() == Shape{3, cfg.total_len()});

  ModelConfig cfg4 = cfg;
  cfg4.n_heads = 4;
  Rng r2(21);
  DitsParams p2 = init_params_random_all(cfg4, r2);
  Tensor v2 = forward(p2, cfg4, x, cov, {0.1, 0.5, 0.9});
  CHECK(v2.shape() == v1.shape());
  CHECK(max_abs_diff(v1, v2) > 1e-9);  // values move, shapes never
}

TEST_CASE("forward: shape violations from config mismatch are rejected") {
  ModelConfig cfg = tiny_config();
  DitsModel m = build_model(cfg, 1);
  Tensor x({2, cfg.total_len() + 1});
  Tensor cov({2, cfg.total_len(), 2});
  CHECK_THROWS_AS(forward(m.params, cfg, x, cov, {0.1, 0.2}), Error);
  Tensor x_ok({2, cfg.total_len()});
  CHECK_THROWS_AS(
      forward(m.params, cfg, x_ok, Tensor({2, cfg.total_len(), 1}),
              {0.1, 0.2}),
      Error);
  CHECK_THROWS_AS(forward(m.params, cfg, x_ok, cov, {0.1}), Error);
}

TEST_CASE("forward: dits velocity is invariant to covariate permutations") {
  ModelConfig cfg = tiny_config();
  cfg.n_cov = 4;
  Rng rng(31);
  DitsParams p = init_params_random_all(cfg, rng);
  Rng data_rng(8);
  Tensor x = random_inputs(data_rng, 2, cfg.total_len());
  Tensor cov = randu(data_rng, {2, cfg.total_len(), 4}, -1.5, 1.5);
  Tensor v1 = forward(p, cfg, x, cov, {0.4, 0.6});

  const std::size_t perm[4] = {2, 0, 3, 1};
  Tensor cov_p({2, cfg.total_len(), 4});
  for (std::size_t b = 0; b < 2; ++b)
    for (std::size_t t = 0; t < cfg.total_len(); ++t)
      for (std::size_t c = 0; c < 4; ++c)
        cov_p.at(b, t, c) = cov.at(b, t, perm[c]);
  Tensor v2 = forward(p, cfg, x, cov_p, {0.4, 0.6});
  CHECK(max_abs_diff(v1, v2) < 1e-10);
}

TEST_CASE("forward: clamped variate gate cuts the covariate stream exactly") {
  ModelConfig cfg = tiny_config();
  Rng rng(13);
  DitsParams p = init_params_random_all(cfg, rng);
  Rng data_rng(9);
  Tensor x = random_inputs(data_rng, 2, cfg.total_len());
  Tensor cov_a = randu(data_rng, {2, cfg.total_len(), 2}, -1, 1);
  Tensor cov_b = randu(data_rng, {2, cfg.total_len(), 2}, -1, 1);

  ForwardOptions opts;
  opts.zero_variate_gate = true;
  opts.condition_cov = &cov_a;  // hold Z_y fixed while the stream input moves
  Tensor v1 = forward(p, cfg, x, cov_a, {0.3, 0.8}, opts);
  Tensor v2 = forward(p, cfg, x, cov_b, {0.3, 0.8}, opts);
  CHECK(max_abs_diff(v1, v2) == 0.0);

  // sanity: without the clamp the covariate values do matter
  ForwardOptions open;
  open.condition_cov = &cov_a;
  Tensor w1 = forward(p, cfg, x, cov_a, {0.3, 0.8}, open);
  Tensor w2 = forward(p, cfg, x, cov_b, {0.3, 0.8}, open);
  CHECK(max_abs_diff(w1, w2) > 1e-9);
}

TEST_CASE("shared attention weights accumulate gradients from both streams") {
  // grad through a shared projection equals the sum of the per-stream grads
  Rng rng(17);
  Tensor w = randu(rng, {4, 4}, -0.5, 0.5);
  Tensor zx = randu(rng, {1, 3, 4}, -1, 1);
  Tensor zc = randu(rng, {2, 3, 4}, -1, 1);

  auto branch_loss = [&](const Tensor& wl, const Tensor& z) {
    Tensor q = matmul(z, wl);
    return sum(scaled_dot_attention(q, q, q, 2));
  };

  Graph g_both;
  Tensor wb = g_both.leaf(w);
  g_both.backward(add(branch_loss(wb, zx), branch_loss(wb, zc)));
  Tensor g_sum = g_both.grad(wb);

  Graph gx;
  Tensor wx = gx.leaf(w);
  gx.backward(branch_loss(wx, zx));
  Graph gc;
  Tensor wc = gc.leaf(w);
  gc.backward(branch_loss(wc, zc));

  for (std::size_t i = 0; i < w.size(); ++i)
    CHECK(g_sum.data()[i] ==
          doctest::Approx(gx.grad(wx).data()[i] + gc.grad(wc).data()[i])
              .epsilon(1e-12));
}

TEST_CASE("build_variant: parameter stores match the wiring") {
  ModelConfig cfg = tiny_config();

  SUBCASE("adaln has no variate-attention weights") {
    cfg.condition_variant = ConditionVariant::AdaLN;
    DitsModel m = build_model(cfg, 3);
    for (const auto& info : parameter_report(m.params)) {
      CHECK(info.name.find("var_x") == std::string::npos);
      CHECK(info.name.find("var_c") == std::string::npos);
      CHECK(info.name.find("patch_c") == std::string::npos);
    }
  }
  SUBCASE("timer-xl flattens the grid to N*(1+C) tokens") {
    cfg.input_len = 144;
    cfg.horizon = 48;
    cfg.patch_len = 24;  // N = 8, C = 2 -> 24 tokens
    cfg.attention_variant = AttentionVariant::TimerXl;
    DitsModel m = build_model(cfg, 3);
    Rng rng(1);
    Tensor x = randu(rng, {1, cfg.total_len()}, -1, 1);
    Tensor cov = randu(rng, {1, cfg.total_len(), 2}, -1, 1);
    ForwardTrace trace;
    ForwardOptions opts;
    opts.trace = &trace;
    forward(m.params, cfg, x, cov, {0.5}, opts);
    REQUIRE(!trace.attention_shapes.empty());
    const Shape& s = trace.attention_shapes.front();
    CHECK(s[s.size() - 2] == 24);
    CHECK(s[s.size() - 1] == 24);
  }
  SUBCASE("explicit dits variant is bit-identical to the default") {
    DitsModel a = build_model(cfg, 3);
    ModelConfig explicit_cfg = cfg;
    explicit_cfg.attention_variant = parse_attention_variant("dits");
    explicit_cfg.condition_variant = parse_condition_variant("dits");
    DitsModel b = build_model(explicit_cfg, 3);
    Rng rng(1);
    Tensor x = randu(rng, {1, cfg.total_len()}, -1, 1);
    Tensor cov = randu(rng, {1, cfg.total_len(), 2}, -1, 1);
    Tensor va = forward(a.params, a.config, x, cov, {0.5});
    Tensor vb = forward(b.params, b.config, x, cov, {0.5});
    for (std::size_t i = 0; i < va.size(); ++i)
      CHECK(va.data()[i] == vb.data()[i]);
  }
  SUBCASE("unknown names and bad combinations are rejected") {
    CHECK_THROWS_AS(parse_attention_variant("dist"), Error);
    CHECK_THROWS_AS(parse_condition_variant("ada"), Error);
    ModelConfig bad = cfg;
    bad.attention_variant = AttentionVariant::TimeXer;
    bad.condition_variant = ConditionVariant::AdaLN;
    CHECK_THROWS_AS(build_model(bad, 1), Error);
    ModelConfig odd = cfg;
    odd.n_heads = 3;  // 8 % 3 != 0
    CHECK_THROWS_AS(build_model(odd, 1), Error);
  }
}

TEST_CASE("forward: every variant runs with and without covariates") {
  for (const char* attn : {"dits", "timer-xl", "prefix", "timexer",
                           "itransformer"}) {
    for (std::size_t c : {std::size_t(0), std::size_t(2)}) {
      ModelConfig cfg = tiny_config();
      cfg.attention_variant = parse_attention_variant(attn);
      cfg.n_cov = c;
      Rng rng(4);
      DitsParams p = init_params_random_all(cfg, rng);
      Rng dr(5);
      Tensor x = random_inputs(dr, 2, cfg.total_len());
      Tensor cov = randu(dr, {2, cfg.total_len(), c}, -1, 1);
      Tensor v = forward(p, cfg, x, cov, {0.1, 0.9});
      CHECK(v.shape() == Shape{2, cfg.total_len()});
      for (double y : v.values()) CHECK(std::isfinite(y));
    }
  }
  for (const char* cond : {"joint", "cross", "adaln"}) {
    for (std::size_t c : {std::size_t(0), std::size_t(2)}) {
      ModelConfig cfg = tiny_config();
      cfg.condition_variant = parse_condition_variant(cond);
      cfg.n_cov = c;
      Rng rng(4);
      DitsParams p = init_params_random_all(cfg, rng);
      Rng dr(5);
      Tensor x = random_inputs(dr, 2, cfg.total_len());
      Tensor cov = randu(dr, {2, cfg.total_len(), c}, -1, 1);
      Tensor v = forward(p, cfg, x, cov, {0.1, 0.9});
      CHECK(v.shape() == Shape{2, cfg.total_len()});
      for (double y : v.values()) CHECK(std::isfinite(y));
    }
  }
}

TEST_CASE("forward: causal mask stops information flowing backwards") {
  ModelConfig cfg = tiny_config();
  cfg.time_mask = TimeMask::Causal;
  cfg.n_cov = 0;
  Rng rng(23);
  DitsParams p = init_params_random_all(cfg, rng);
  Rng dr(3);
  Tensor x1 = random_inputs(dr, 1, cfg.total_len());
  Tensor x2 = x1.clone();
  // perturb only the last patch; earlier patch outputs must not move
  for (std::size_t i = cfg.total_len() - cfg.patch_len; i < cfg.total_len();
       ++i)
    x2.at(std::size_t(0), i) += 0.5;
  Tensor cov({1, cfg.total_len(), 0});
  Tensor v1 = forward(p, cfg, x1, cov, {0.5});
  Tensor v2 = forward(p, cfg, x2, cov, {0.5});
  for (std::size_t i = 0; i < cfg.total_len() - cfg.patch_len; ++i)
    CHECK(v1.at(std::size_t(0), i) == v2.at(std::size_t(0), i));
  double tail = 0;
  for (std::size_t i = cfg.total_len() - cfg.patch_len; i < cfg.total_len();
       ++i)
    tail = std::max(tail, std::fabs(v1.at(std::size_t(0), i) -
                                    v2.at(std::size_t(0), i)));
  CHECK(tail > 1e-9);
}

TEST_CASE("grad_check: tiny dual-stream network against central differences") {
  ModelConfig cfg = tiny_config();
  cfg.n_cov = 1;
  cfg.d_model = 4;
  cfg.n_heads = 2;
  Rng rng(41);
  DitsParams p = init_params_random_all(cfg, rng);

  Rng dr(6);
  Tensor x = random_inputs(dr, 1, cfg.total_len());
  Tensor cov = randu(dr, {1, cfg.total_len(), 1}, -1, 1);
  Tensor target = randu(dr, {1, cfg.horizon}, -1, 1);

  std::vector<ParamRef> refs;
  p.for_each([&](const std::string& name, Tensor& t) {
    refs.push_back({name, &t});
  });
  auto eval = [&](Graph* g) -> Tensor {
    const DitsParams& use = p;
    DitsParams bound = g ? bind(*g, use) : use;
    Tensor v = forward(bound, cfg, x, cov, {0.37});
    Tensor vh = slice(v, 1, cfg.input_len, cfg.total_len());
    return mse_loss(vh, target);
  };
  GradReport rep = grad_check(refs, eval);
  INFO("max rel err ", rep.max_rel_err);
  CHECK(rep.max_rel_err < 1e-4);
}
