#include "domprompt/encoder.hpp"

#include <sstream>

#include "domprompt/ops.hpp"

namespace domprompt {
namespace {

std::string join(const std::vector<std::size_t>& v) {
  std::string s;
  for (std::size_t i = 0; i < v.size(); ++i) s += (i ? "," : "") + std::to_string(v[i]);
  return s;
}

// [H x W x D] <-> [D x H x W]
Tensor grid_to_chw(const Tensor& grid) { return permute(grid, {2, 0, 1}); }

}  // namespace

std::string_view backbone_name(Backbone b) {
  switch (b) {
    case Backbone::vit: return "vit";
    case Backbone::swin: return "swin";
    case Backbone::cnn: return "cnn";
  }
  return "?";
}

Backbone parse_backbone(std::string_view text) {
  if (text == "vit") return Backbone::vit;
  if (text == "swin") return Backbone::swin;
  if (text == "cnn") return Backbone::cnn;
  throw std::invalid_argument("unknown backbone " + std::string(text));
}

std::string_view depth_name(PromptDepth d) { return d == PromptDepth::spe ? "spe" : "dpe"; }

PromptDepth parse_depth(std::string_view text) {
  if (text == "spe") return PromptDepth::spe;
  if (text == "dpe") return PromptDepth::dpe;
  throw std::invalid_argument("unknown prompt depth " + std::string(text));
}

void EncoderConfig::validate() const {
  auto fail = [](const std::string& msg) { throw std::invalid_argument("encoder config: " + msg); };
  if (image_size == 0 || channels == 0) fail("empty image");
  if (shared_mlp && !(prompted && depth == PromptDepth::dpe)) {
    fail("shared_mlp requires a prompted DPE encoder");
  }
  if (shared_mlp && backbone != Backbone::vit) fail("shared_mlp applies to the vit backbone only");
  if (prompt_mask && !prompted) fail("prompt_mask requires a prompted encoder");
  if (fpn_width == 0 || prompt_dim == 0) fail("zero width");
  switch (backbone) {
    case Backbone::vit:
      if (patch == 0 || image_size % patch != 0) fail("image not divisible by patch size");
      if (heads == 0 || dim % heads != 0) fail("dim not divisible by heads");
      if (layers == 0) fail("zero layers");
      if ((image_size / patch) % 4 != 0) fail("patch grid must be divisible by 4");
      break;
    case Backbone::swin: {
      if (swin_patch == 0 || image_size % swin_patch != 0) fail("image not divisible by patch size");
      if (swin_stages == 0) fail("zero stages");
      std::size_t grid = image_size / swin_patch;
      for (std::size_t s = 0; s < swin_stages; ++s) {
        if (window == 0 || grid % window != 0) fail("stage grid not divisible by window");
        if ((swin_dim << s) % (swin_heads << s) != 0) fail("stage dim not divisible by heads");
        if (s + 1 < swin_stages && grid % 2 != 0) fail("odd grid before patch merging");
        grid /= 2;
      }
      break;
    }
    case Backbone::cnn:
      if (cnn_widths.empty()) fail("no cnn stages");
      if (image_size % (std::size_t{2} << cnn_widths.size()) != 0) {
        fail("image not divisible by the cnn total stride");
      }
      break;
  }
}

std::string EncoderConfig::fingerprint() const {
  std::ostringstream s;
  s << "backbone=" << backbone_name(backbone) << ";image=" << image_size << "x" << channels;
  switch (backbone) {
    case Backbone::vit:
      s << ";patch=" << patch << ";dim=" << dim << ";heads=" << heads << ";layers=" << layers
        << ";ffn=" << ffn_mult;
      break;
    case Backbone::swin:
      s << ";patch=" << swin_patch << ";dim=" << swin_dim << ";heads=" << swin_heads
        << ";window=" << window << ";stages=" << swin_stages << ";ffn=" << ffn_mult;
      break;
    case Backbone::cnn:
      s << ";widths=" << join(cnn_widths) << ";dim=" << dim;
      break;
  }
  s << ";prompt_dim=" << prompt_dim << ";fpn=" << fpn_width << ";prompted=" << prompted;
  if (prompted) {
    s << ";depth=" << depth_name(depth) << ";shared=" << shared_mlp << ";mask=" << prompt_mask;
  }
  return s.str();
}

std::vector<std::size_t> tap_layers(std::size_t layers) {
  auto ceil_div = [](std::size_t a, std::size_t b) { return (a + b - 1) / b; };
  std::vector<std::size_t> raw = {ceil_div(layers, 3), ceil_div(layers, 2),
                                  ceil_div(2 * layers, 3), layers};
  std::vector<std::size_t> out;
  for (std::size_t l : raw) {
    if (l >= 1 && (out.empty() || out.back() != l)) out.push_back(l);
  }
  return out;
}

Fpn::Fpn(ParamStore& store, const std::string& name, const std::vector<std::size_t>& in_channels,
         std::size_t width)
    : width_(width) {
  for (std::size_t l = 0; l < in_channels.size(); ++l) {
    const std::string p = name + ".level" + std::to_string(l);
    lateral_w_.push_back(store.uniform(p + ".lateral.weight", {width, in_channels[l], 1, 1}, in_channels[l]));
    lateral_b_.push_back(store.constant(p + ".lateral.bias", {width}, 0.0));
    if (in_channels.size() > 1) {
      smooth_w_.push_back(store.uniform(p + ".smooth.weight", {width, width, 3, 3}, width * 9));
      smooth_b_.push_back(store.constant(p + ".smooth.bias", {width}, 0.0));
    }
  }
}

std::vector<Tensor> Fpn::merge(const std::vector<Tensor>& taps) const {
  if (taps.size() != lateral_w_.size()) {
    throw DimensionError("fpn: " + std::to_string(taps.size()) + " taps for " +
                         std::to_string(lateral_w_.size()) + " levels");
  }
  const std::size_t n = taps.size();
  std::vector<Tensor> lat(n);
  for (std::size_t l = 0; l < n; ++l) lat[l] = conv2d(taps[l], lateral_w_[l], lateral_b_[l], 1, 0);
  if (n == 1) return lat;
  std::vector<Tensor> out(n);
  Tensor top = lat[n - 1];
  out[n - 1] = conv2d(top, smooth_w_[n - 1], smooth_b_[n - 1], 1, 1);
  for (std::size_t l = n - 1; l-- > 0;) {
    top = add(lat[l], upsample2(top));
    out[l] = conv2d(top, smooth_w_[l], smooth_b_[l], 1, 1);
  }
  return out;
}

Encoder::Encoder(const EncoderConfig& cfg, ParamStore& store) : cfg_(cfg) {
  cfg_.validate();
  const std::string pp(kPromptPrefix);
  const std::size_t c = cfg_.channels;
  switch (cfg_.backbone) {
    case Backbone::vit: {
      const std::size_t m = (cfg_.image_size / cfg_.patch) * (cfg_.image_size / cfg_.patch);
      patch_proj_ = Linear::create(store, "encoder.patch", c * cfg_.patch * cfg_.patch, cfg_.dim);
      pos_ = store.uniform_range("encoder.pos", {m, cfg_.dim}, 0.02);
      for (std::size_t l = 0; l < cfg_.layers; ++l) {
        const std::string p = "encoder.layer" + std::to_string(l);
        vit_blocks_.push_back({AttentionParams::create(store, p + ".attn", cfg_.dim, cfg_.heads),
                               FeedForwardParams::create(store, p + ".ffn", cfg_.dim, cfg_.ffn_mult)});
      }
      if (cfg_.prompted) {
        prompt_mlps_.push_back(PromptMlp::create(store, pp + "0", cfg_.prompt_dim, cfg_.dim));
        if (cfg_.depth == PromptDepth::dpe && cfg_.layers > 1) {
          if (cfg_.shared_mlp) {
            prompt_mlps_.push_back(PromptMlp::create(store, pp + "shared", cfg_.prompt_dim, cfg_.dim));
          } else {
            for (std::size_t l = 1; l < cfg_.layers; ++l) {
              prompt_mlps_.push_back(
                  PromptMlp::create(store, pp + std::to_string(l), cfg_.prompt_dim, cfg_.dim));
            }
          }
        }
      }
      break;
    }
    case Backbone::swin: {
      const std::size_t g = cfg_.image_size / cfg_.swin_patch;
      patch_proj_ = Linear::create(store, "encoder.patch", c * cfg_.swin_patch * cfg_.swin_patch,
                                   cfg_.swin_dim);
      pos_ = store.uniform_range("encoder.pos", {g * g, cfg_.swin_dim}, 0.02);
      for (std::size_t s = 0; s < cfg_.swin_stages; ++s) {
        const std::size_t d = cfg_.swin_dim << s, h = cfg_.swin_heads << s;
        const std::string p = "encoder.stage" + std::to_string(s);
        SwinStage st;
        for (std::size_t b = 0; b < 2; ++b) {
          const std::string bp = p + ".block" + std::to_string(b);
          st.blocks.push_back({AttentionParams::create(store, bp + ".attn", d, h),
                               FeedForwardParams::create(store, bp + ".ffn", d, cfg_.ffn_mult)});
        }
        if (s + 1 < cfg_.swin_stages) {
          st.merge_norm = LayerNorm::create(store, p + ".merge.norm", 4 * d);
          st.merge = Linear::create(store, p + ".merge", 4 * d, 2 * d);
        }
        swin_stages_.push_back(std::move(st));
        if (cfg_.prompted) {
          prompt_mlps_.push_back(
              PromptMlp::create(store, pp + "stage" + std::to_string(s), cfg_.prompt_dim, d));
        }
      }
      break;
    }
    case Backbone::cnn: {
      const std::size_t w0 = cfg_.cnn_widths[0];
      stem_w_ = store.uniform("encoder.stem.weight", {w0, c, 3, 3}, c * 9);
      stem_b_ = store.constant("encoder.stem.bias", {w0}, 0.0);
      for (std::size_t s = 0; s < cfg_.cnn_widths.size(); ++s) {
        const std::size_t in = s == 0 ? w0 : cfg_.cnn_widths[s - 1];
        cnn_stages_.push_back(ConvStageParams::create(store, "encoder.stage" + std::to_string(s), in,
                                                      cfg_.cnn_widths[s], cfg_.prompted));
        if (cfg_.prompted) {
          const std::string p = pp + "stage" + std::to_string(s);
          prompt_mlps_.push_back(PromptMlp::create(store, p, cfg_.prompt_dim, cfg_.dim));
          cnn_reduce_.push_back(Linear::create(store, p + ".reduce", cfg_.dim, 1));
        }
      }
      break;
    }
  }
  fpn_ = Fpn(store, "fpn", tap_channels(), cfg_.fpn_width);
}

bool Encoder::use_prompt(const Tensor& p_v) const {
  if (!cfg_.prompted) return false;
  if (!p_v.defined()) throw std::invalid_argument("prompted encoder needs a prompt embedding");
  return true;
}

Tensor Encoder::patch_embed(const Tensor& image) const {
  if (cfg_.backbone == Backbone::cnn) throw std::logic_error("patch_embed: cnn backbone");
  const std::size_t p = cfg_.backbone == Backbone::vit ? cfg_.patch : cfg_.swin_patch;
  const std::size_t c = cfg_.channels, s = cfg_.image_size;
  if (image.rank() != 3 || image.dim(0) != c || image.dim(1) != s || image.dim(2) != s) {
    throw DimensionError("patch_embed: expected [" + std::to_string(c) + "x" + std::to_string(s) +
                         "x" + std::to_string(s) + "], got " + shape_str(image.shape()));
  }
  const std::size_t g = s / p;
  Tensor x = reshape(image.precision() == pos_.precision() ? image : image.cast(pos_.precision()),
                     {c, g, p, g, p});
  x = reshape(permute(x, {1, 3, 0, 2, 4}), {g * g, c * p * p});
  return add(patch_proj_(x), pos_);
}

Tensor Encoder::vit_prompt(const Tensor& p_v, std::size_t layer) const {
  if (cfg_.backbone != Backbone::vit || !cfg_.prompted) throw std::logic_error("vit_prompt: no vit prompt");
  std::size_t idx = 0;
  if (layer > 0) {
    if (cfg_.depth == PromptDepth::spe) throw std::out_of_range("vit_prompt: SPE injects at layer 0 only");
    idx = cfg_.shared_mlp ? 1 : layer;
  }
  if (idx >= prompt_mlps_.size()) throw std::out_of_range("vit_prompt: layer out of range");
  return project_prompt(p_v, prompt_mlps_[idx]);
}

Tensor Encoder::swin_prompt(const Tensor& p_v, std::size_t stage) const {
  if (cfg_.backbone != Backbone::swin || !cfg_.prompted) throw std::logic_error("swin_prompt: no swin prompt");
  return project_prompt(p_v, prompt_mlps_.at(stage));
}

Tensor Encoder::cnn_prompt_plane(const Tensor& p_v, std::size_t stage, std::size_t height,
                                 std::size_t width) const {
  if (cfg_.backbone != Backbone::cnn || !cfg_.prompted) throw std::logic_error("cnn_prompt_plane: no cnn prompt");
  if (cfg_.prompt_mask) return Tensor::zeros({1, height, width}, stem_w_.precision());
  Tensor v = cnn_reduce_.at(stage)(project_prompt(p_v, prompt_mlps_.at(stage)));
  return broadcast_scalar(v, {1, height, width});
}

Tensor Encoder::vit_fuse(const Tensor& seq, const Tensor& p_v, std::size_t layer) const {
  if (layer == 0) return concat({vit_prompt(p_v, 0), seq}, 0);
  if (cfg_.depth == PromptDepth::spe) return seq;
  return concat({vit_prompt(p_v, layer), slice(seq, 0, 1, seq.dim(0) - 1)}, 0);
}

std::vector<Tensor> Encoder::vit_layers(const Tensor& tokens, const Tensor& p_v) const {
  const bool prompt = use_prompt(p_v);
  const std::size_t m = tokens.dim(0);
  const auto taps = tap_layers(cfg_.layers);
  AttnMask mask;
  if (prompt && cfg_.prompt_mask) {
    mask = AttnMask::all(m + 1, m + 1);
    for (std::size_t q = 1; q <= m; ++q) mask.set(q, 0, false);
  }
  const AttnMask* mask_ptr = mask.allowed.empty() ? nullptr : &mask;
  std::vector<Tensor> out;
  Tensor seq = tokens;
  std::size_t next_tap = 0;
  for (std::size_t l = 0; l < cfg_.layers; ++l) {
    if (prompt) seq = vit_fuse(seq, p_v, l);
    seq = attention(seq, vit_blocks_[l].attn, mask_ptr);
    seq = feedforward(seq, vit_blocks_[l].ffn);
    if (next_tap < taps.size() && taps[next_tap] == l + 1) {
      out.push_back(prompt ? slice(seq, 0, 1, m) : seq);
      ++next_tap;
    }
  }
  return out;
}

std::vector<Tensor> Encoder::swin_taps(const Tensor& image, const Tensor& p_v) const {
  const bool prompt = use_prompt(p_v);
  std::size_t g = cfg_.image_size / cfg_.swin_patch;
  Tensor grid = reshape(patch_embed(image), {g, g, cfg_.swin_dim});
  std::vector<Tensor> out;
  for (std::size_t s = 0; s < swin_stages_.size(); ++s) {
    const std::size_t d = cfg_.swin_dim << s;
    const SwinStage& st = swin_stages_[s];
    Tensor token = prompt ? swin_prompt(p_v, s) : Tensor();
    for (std::size_t b = 0; b < st.blocks.size(); ++b) {
      grid = windowed_attention(grid, cfg_.window, b % 2 == 1, st.blocks[b].attn, token,
                                cfg_.prompt_mask);
      grid = reshape(feedforward(reshape(grid, {g * g, d}), st.blocks[b].ffn), {g, g, d});
    }
    out.push_back(grid_to_chw(grid));
    if (s + 1 < swin_stages_.size()) {
      // Patch merging: concatenate each 2x2 neighbourhood, then project.
      const std::size_t h = g / 2;
      Tensor flat = reshape(grid, {g * g, d});
      std::vector<Tensor> parts;
      for (std::size_t dy = 0; dy < 2; ++dy) {
        for (std::size_t dx = 0; dx < 2; ++dx) {
          std::vector<std::size_t> idx;
          idx.reserve(h * h);
          for (std::size_t i = 0; i < h; ++i) {
            for (std::size_t j = 0; j < h; ++j) idx.push_back((2 * i + dy) * g + 2 * j + dx);
          }
          parts.push_back(gather_rows(flat, idx));
        }
      }
      Tensor merged = st.merge(st.merge_norm(concat(parts, 1)));
      g = h;
      grid = reshape(merged, {g, g, 2 * d});
    }
  }
  return out;
}

std::vector<Tensor> Encoder::cnn_taps(const Tensor& image, const Tensor& p_v) const {
  const bool prompt = use_prompt(p_v);
  if (image.rank() != 3 || image.dim(0) != cfg_.channels || image.dim(1) != cfg_.image_size ||
      image.dim(2) != cfg_.image_size) {
    throw DimensionError("cnn encoder: unexpected image " + shape_str(image.shape()));
  }
  Tensor x = image.precision() == stem_w_.precision() ? image : image.cast(stem_w_.precision());
  x = avg_pool2(gelu(conv2d(x, stem_w_, stem_b_, 1, 1)));
  std::vector<Tensor> out;
  for (std::size_t s = 0; s < cnn_stages_.size(); ++s) {
    if (prompt) x = concat({x, cnn_prompt_plane(p_v, s, x.dim(1), x.dim(2))}, 0);
    x = conv2d_stage(x, cnn_stages_[s]);
    out.push_back(x);
  }
  return out;
}

std::vector<Tensor> Encoder::taps(const Tensor& image, const Tensor& p_v) const {
  switch (cfg_.backbone) {
    case Backbone::vit: {
      const std::size_t g = cfg_.image_size / cfg_.patch;
      auto layers = vit_layers(patch_embed(image), p_v);
      std::vector<Tensor> out;
      for (std::size_t i = 0; i < layers.size(); ++i) {
        Tensor grid = reshape(transpose(layers[i]), {cfg_.dim, g, g});
        // Resample equal-resolution taps to x2, x1, /2, /4 of the patch grid.
        if (i == 0) grid = upsample2(grid);
        for (std::size_t k = 2; k <= i; ++k) grid = avg_pool2(grid);
        out.push_back(grid);
      }
      return out;
    }
    case Backbone::swin: return swin_taps(image, p_v);
    case Backbone::cnn: return cnn_taps(image, p_v);
  }
  return {};
}

std::vector<std::size_t> Encoder::tap_strides() const {
  std::vector<std::size_t> out;
  switch (cfg_.backbone) {
    case Backbone::vit: {
      const std::size_t n = tap_layers(cfg_.layers).size();
      for (std::size_t i = 0; i < n; ++i) out.push_back(i == 0 ? cfg_.patch / 2 : cfg_.patch << (i - 1));
      break;
    }
    case Backbone::swin:
      for (std::size_t s = 0; s < cfg_.swin_stages; ++s) out.push_back(cfg_.swin_patch << s);
      break;
    case Backbone::cnn:
      for (std::size_t s = 0; s < cfg_.cnn_widths.size(); ++s) out.push_back(std::size_t{4} << s);
      break;
  }
  return out;
}

std::vector<std::size_t> Encoder::tap_channels() const {
  std::vector<std::size_t> out;
  switch (cfg_.backbone) {
    case Backbone::vit: out.assign(tap_layers(cfg_.layers).size(), cfg_.dim); break;
    case Backbone::swin:
      for (std::size_t s = 0; s < cfg_.swin_stages; ++s) out.push_back(cfg_.swin_dim << s);
      break;
    case Backbone::cnn: out = cfg_.cnn_widths; break;
  }
  return out;
}

FeaturePyramid Encoder::encode(const Tensor& image, const Tensor& p_v) const {
  FeaturePyramid f;
  f.levels = fpn_.merge(taps(image, p_v));
  f.strides = tap_strides();
  return f;
}

}  // namespace domprompt
