#include <cmath>

#include "doctest.h"
#include "domprompt/encoder.hpp"
#include "domprompt/gradcheck.hpp"
#include "domprompt/ops.hpp"
#include "domprompt/rng.hpp"

using namespace domprompt;

namespace {

constexpr auto f64 = Precision::f64;

Tensor random_tensor(Rng& rng, Shape shape, double lo = -1.0, double hi = 1.0) {
  std::vector<double> v(shape_numel(shape));
  for (auto& x : v) x = rng.uniform(lo, hi);
  return Tensor::from_values(std::move(shape), v, f64);
}

double max_abs_diff(const Tensor& a, const Tensor& b) {
  auto x = a.values(), y = b.values();
  REQUIRE(x.size() == y.size());
  double m = 0;
  for (std::size_t i = 0; i < x.size(); ++i) m = std::max(m, std::abs(x[i] - y[i]));
  return m;
}

void zero_out(Tensor t) {
  for (auto& v : t.mutable_data<double>()) v = 0.0;
}

EncoderConfig small(Backbone b) {
  EncoderConfig c;
  c.backbone = b;
  c.image_size = 32;
  c.patch = 4;
  c.dim = 16;
  c.heads = 2;
  c.layers = 4;
  c.swin_patch = 2;
  c.swin_dim = 8;
  c.swin_heads = 1;
  c.cnn_widths = {4, 6, 8, 8};
  c.prompt_dim = 8;
  c.fpn_width = 8;
  return c;
}

Tensor prompt_vec(std::uint64_t seed, std::size_t dim) {
  Rng rng(seed);
  return random_tensor(rng, {dim});
}

}  // namespace

TEST_CASE("layer taps") {
  CHECK(tap_layers(12) == std::vector<std::size_t>{4, 6, 8, 12});
  CHECK(tap_layers(4) == std::vector<std::size_t>{2, 3, 4});
  CHECK(tap_layers(1) == std::vector<std::size_t>{1});
  CHECK(tap_layers(6) == std::vector<std::size_t>{2, 3, 4, 6});
}

TEST_CASE("patch embedding") {
  ParamStore store(1, f64);
  EncoderConfig cfg;
  Encoder enc(cfg, store);
  Rng rng(2);
  Tensor img = random_tensor(rng, {1, 64, 64}, 0, 1);
  Tensor tokens = enc.patch_embed(img);
  CHECK(tokens.shape() == Shape{64, 64});

  ParamStore zs(1, f64);
  Encoder zero_enc(cfg, zs);
  zero_out(zs.at("encoder.pos"));
  for (double v : zero_enc.patch_embed(Tensor::zeros({1, 64, 64}, f64)).values()) CHECK(v == 0.0);

  // Change one pixel inside patch (row 2, col 5) -> token 2*8+5 only.
  Tensor img2 = img.detach();
  img2.mutable_data<double>()[(2 * 8 + 3) * 64 + 5 * 8 + 1] += 0.5;
  auto a = tokens.values(), b = enc.patch_embed(img2).values();
  for (std::size_t t = 0; t < 64; ++t) {
    bool same = true;
    for (std::size_t d = 0; d < 64; ++d) same = same && a[t * 64 + d] == b[t * 64 + d];
    CHECK(same == (t != 21));
  }
  CHECK_THROWS_AS(enc.patch_embed(Tensor::zeros({1, 60, 60}, f64)), DimensionError);
}

TEST_CASE("config validation") {
  EncoderConfig c;
  c.depth = PromptDepth::spe;
  c.shared_mlp = true;
  CHECK_THROWS(c.validate());
  c.depth = PromptDepth::dpe;
  CHECK_NOTHROW(c.validate());
  c.backbone = Backbone::cnn;
  CHECK_THROWS(c.validate());
  EncoderConfig d;
  d.prompted = false;
  d.prompt_mask = true;
  CHECK_THROWS(d.validate());
  EncoderConfig e;
  e.patch = 7;
  CHECK_THROWS(e.validate());
  CHECK(EncoderConfig().fingerprint() == EncoderConfig().fingerprint());
  CHECK(EncoderConfig().fingerprint() != d.fingerprint());
}

TEST_CASE("vit fusion sequence and DPE sharing") {
  EncoderConfig cfg = small(Backbone::vit);
  cfg.shared_mlp = true;
  ParamStore store(3, f64);
  Encoder enc(cfg, store);
  Tensor p = prompt_vec(4, 8);
  Rng rng(5);
  Tensor tokens = enc.patch_embed(random_tensor(rng, {1, 32, 32}));
  Tensor seq = enc.vit_fuse(tokens, p, 0);
  CHECK(seq.shape() == Shape{65, 16});
  CHECK(enc.vit_fuse(seq, p, 2).shape() == Shape{65, 16});
  for (std::size_t i = 1; i < 4; ++i) {
    for (std::size_t j = 1; j < 4; ++j) {
      CHECK(enc.vit_prompt(p, i).values() == enc.vit_prompt(p, j).values());
    }
  }
  EncoderConfig unshared = small(Backbone::vit);
  ParamStore s2(3, f64);
  Encoder e2(unshared, s2);
  CHECK(e2.vit_prompt(p, 1).values() != e2.vit_prompt(p, 2).values());
}

TEST_CASE("prompt parameter counts for SPE, DPE and shared DPE") {
  for (std::size_t layers : {2u, 4u, 6u}) {
    auto count = [&](PromptDepth depth, bool shared) {
      EncoderConfig c = small(Backbone::vit);
      c.layers = layers;
      c.depth = depth;
      c.shared_mlp = shared;
      ParamStore s(1, f64);
      Encoder e(c, s);
      return std::pair{s.numel(), s.numel(std::string(Encoder::kPromptPrefix))};
    };
    const std::size_t mlp = 8 * 16 + 16 + 16 * 16 + 16;
    auto [spe, spe_prompt] = count(PromptDepth::spe, false);
    auto [dpe, dpe_prompt] = count(PromptDepth::dpe, false);
    auto [shared, shared_prompt] = count(PromptDepth::dpe, true);
    CHECK(spe_prompt == mlp);
    CHECK(dpe - spe == (layers - 1) * mlp);
    CHECK(shared - spe == mlp);
    CHECK(dpe_prompt == layers * mlp);
    CHECK(shared_prompt == 2 * mlp);
  }
}

TEST_CASE("masked prompt reproduces the unprompted encoder") {
  for (Backbone b : {Backbone::vit, Backbone::swin, Backbone::cnn}) {
    for (PromptDepth depth : {PromptDepth::spe, PromptDepth::dpe}) {
      EncoderConfig masked = small(b);
      masked.depth = depth;
      masked.prompt_mask = true;
      EncoderConfig plain = small(b);
      plain.prompted = false;
      ParamStore sm(11, f64), sp(11, f64);
      Encoder em(masked, sm), ep(plain, sp);
      Rng rng(12);
      Tensor img = random_tensor(rng, {1, 32, 32}, 0, 1);
      auto fm = em.encode(img, prompt_vec(13, 8));
      auto fp = ep.encode(img, Tensor());
      REQUIRE(fm.levels.size() == fp.levels.size());
      INFO(backbone_name(b));
      for (std::size_t l = 0; l < fm.levels.size(); ++l) {
        CHECK(max_abs_diff(fm.levels[l], fp.levels[l]) < 1e-6);
      }
      // The unmasked prompt does change the features.
      EncoderConfig open = masked;
      open.prompt_mask = false;
      ParamStore so(11, f64);
      Encoder eo(open, so);
      CHECK(max_abs_diff(eo.encode(img, prompt_vec(13, 8)).levels[0], fp.levels[0]) > 1e-6);
    }
  }
}

TEST_CASE("swin stage prompts") {
  EncoderConfig cfg = small(Backbone::swin);
  ParamStore store(21, f64);
  Encoder enc(cfg, store);
  Tensor p = prompt_vec(22, 8);
  Tensor s0 = enc.swin_prompt(p, 0), s1 = enc.swin_prompt(p, 1);
  CHECK(s0.shape() == Shape{1, 8});
  CHECK(s1.shape() == Shape{1, 16});
  CHECK(max_abs_diff(s0, slice(s1, 1, 0, 8)) > 1e-6);
  WindowLayout layout{16, 16, 4, false, true, false};
  CHECK(layout.windows() == 16);
}

TEST_CASE("cnn prompt planes") {
  EncoderConfig cfg = small(Backbone::cnn);
  ParamStore store(31, f64);
  Encoder enc(cfg, store);
  Tensor a = enc.cnn_prompt_plane(prompt_vec(1, 8), 0, 8, 8);
  Tensor b = enc.cnn_prompt_plane(prompt_vec(2, 8), 0, 8, 8);
  CHECK(a.shape() == Shape{1, 8, 8});
  auto av = a.values();
  for (double v : av) CHECK(v == av[0]);
  CHECK(av[0] != b.values()[0]);

  // Zero projection -> zero plane.
  ParamStore zs(31, f64);
  Encoder ze(cfg, zs);
  zero_out(zs.at("encoder.prompt.stage0.fc2.weight"));
  for (double v : ze.cnn_prompt_plane(prompt_vec(1, 8), 0, 4, 4).values()) CHECK(v == 0.0);

  // Stage inputs: visual channels plus one plane.
  Rng rng(32);
  auto taps = enc.taps(random_tensor(rng, {1, 32, 32}), prompt_vec(1, 8));
  CHECK(taps.size() == 4);
  CHECK(taps[0].shape() == Shape{4, 8, 8});
}

TEST_CASE("pyramid shapes") {
  for (Backbone b : {Backbone::vit, Backbone::swin, Backbone::cnn}) {
    EncoderConfig cfg;
    cfg.backbone = b;
    ParamStore store(41);
    Encoder enc(cfg, store);
    Rng rng(42);
    Tensor img = random_tensor(rng, {1, 64, 64}, 0, 1).cast(Precision::f32);
    auto f = enc.encode(img, FrozenTextEncoder().encode("A document page comes from patent"));
    INFO(backbone_name(b));
    REQUIRE(f.levels.size() == f.strides.size());
    for (std::size_t l = 0; l < f.levels.size(); ++l) {
      CHECK(f.levels[l].dim(0) == 32);
      CHECK(f.levels[l].dim(1) * f.strides[l] == 64);
      if (l > 0) CHECK(f.levels[l].dim(1) < f.levels[l - 1].dim(1));
    }
    if (b == Backbone::cnn) CHECK(f.strides == std::vector<std::size_t>{4, 8, 16, 32});
    if (b == Backbone::vit) CHECK(f.strides == std::vector<std::size_t>{4, 8, 16});
    if (b == Backbone::swin) CHECK(f.strides == std::vector<std::size_t>{4, 8});
  }
}

TEST_CASE("fpn degenerate cases") {
  ParamStore store(51, f64);
  Fpn one(store, "one", {6}, 4);
  Rng rng(52);
  Tensor tap = random_tensor(rng, {6, 4, 4});
  Tensor expected = conv2d(tap, store.at("one.level0.lateral.weight"),
                           store.at("one.level0.lateral.bias"), 1, 0);
  CHECK(one.merge({tap})[0].values() == expected.values());

  Fpn three(store, "three", {6, 5, 3}, 4);
  auto out = three.merge({Tensor::zeros({6, 8, 8}, f64), Tensor::zeros({5, 4, 4}, f64),
                          Tensor::zeros({3, 2, 2}, f64)});
  for (const auto& level : out) {
    CHECK(level.dim(0) == 4);
    for (double v : level.values()) CHECK(v == 0.0);
  }
  CHECK_THROWS(three.merge({tap}));
}

TEST_CASE("zero positional embedding makes the vit permutation-equivariant") {
  EncoderConfig cfg = small(Backbone::vit);
  ParamStore store(61, f64);
  Encoder enc(cfg, store);
  zero_out(store.at("encoder.pos"));
  Rng rng(62);
  Tensor tokens = enc.patch_embed(random_tensor(rng, {1, 32, 32}));
  std::vector<std::size_t> perm(64);
  for (std::size_t i = 0; i < 64; ++i) perm[i] = (i * 37 + 11) % 64;
  Tensor p = prompt_vec(63, 8);
  auto base = enc.vit_layers(tokens, p);
  auto moved = enc.vit_layers(gather_rows(tokens, perm), p);
  for (std::size_t l = 0; l < base.size(); ++l) {
    CHECK(max_abs_diff(gather_rows(base[l], perm), moved[l]) < 1e-12);
  }
}

TEST_CASE("encoder is deterministic and differentiable") {
  for (Backbone b : {Backbone::vit, Backbone::swin, Backbone::cnn}) {
    EncoderConfig cfg = small(b);
    cfg.image_size = 16;
    cfg.cnn_widths = {3, 4};
    ParamStore store(71, f64);
    Encoder enc(cfg, store);
    Rng rng(72);
    Tensor img = random_tensor(rng, {1, 16, 16}, 0, 1);
    Tensor p = prompt_vec(73, 8);
    auto a = enc.encode(img, p), c = enc.encode(img, p);
    for (std::size_t l = 0; l < a.levels.size(); ++l) CHECK(a.levels[l].values() == c.levels[l].values());
    std::vector<Tensor> params;
    for (const auto& [name, t] : store.params()) params.push_back(t);
    auto loss = [&] {
      auto f = enc.encode(img, p);
      Tensor total = Tensor::scalar(0.0, f64);
      for (const auto& level : f.levels) total = add(total, mean(mul(level, level)));
      return total;
    };
    INFO(backbone_name(b));
    CHECK(finite_diff_check_params(loss, params, 50, 1e-5, 74) < 1e-4);
  }
}
