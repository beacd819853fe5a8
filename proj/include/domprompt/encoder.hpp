#pragma once

#include <cstddef>
#include <string>
#include <string_view>
#include <vector>

#include "domprompt/nn.hpp"
#include "domprompt/prompt.hpp"
#include "domprompt/tensor.hpp"

// Patch embedding, the three prompt-fusion backbones and the FPN merge.

namespace domprompt {

enum class Backbone { vit, swin, cnn };
enum class PromptDepth { spe, dpe };

std::string_view backbone_name(Backbone b);
Backbone parse_backbone(std::string_view text);
std::string_view depth_name(PromptDepth d);
PromptDepth parse_depth(std::string_view text);

struct EncoderConfig {
  Backbone backbone = Backbone::vit;
  std::size_t image_size = 64;
  std::size_t channels = 1;

  // ViT
  std::size_t patch = 8;
  std::size_t dim = 64;
  std::size_t heads = 4;
  std::size_t layers = 4;
  std::size_t ffn_mult = 2;

  // Swin: stage s runs at swin_dim * 2^s with swin_heads * 2^s heads.
  std::size_t swin_patch = 4;
  std::size_t swin_dim = 32;
  std::size_t swin_heads = 2;
  std::size_t window = 4;
  std::size_t swin_stages = 2;

  // CNN
  std::vector<std::size_t> cnn_widths = {8, 16, 32, 64};

  std::size_t prompt_dim = 32;
  std::size_t fpn_width = 32;

  /// Structural switch: an unprompted encoder has no prompt parameters.
  bool prompted = true;
  PromptDepth depth = PromptDepth::dpe;
  /// ViT DPE only: one MLP serves every layer after the first.
  bool shared_mlp = false;
  /// Diagnostic: keep the prompt parameters but hide the prompt from the
  /// visual features.
  bool prompt_mask = false;

  void validate() const;
  /// Canonical key=value text; equal strings mean interchangeable weights.
  std::string fingerprint() const;
};

/// Multi-scale features, finest first.
struct FeaturePyramid {
  std::vector<Tensor> levels;  // [C x H_l x W_l]
  std::vector<std::size_t> strides;
};

/// Evenly spaced 1-based layer taps: ceil(L/3), ceil(L/2), ceil(2L/3), L,
/// with duplicates removed.
std::vector<std::size_t> tap_layers(std::size_t layers);

/// Lateral 1x1 projections, top-down upsample-add and 3x3 smoothing.
class Fpn {
 public:
  Fpn() = default;
  Fpn(ParamStore& store, const std::string& name, const std::vector<std::size_t>& in_channels,
      std::size_t width);

  /// `taps` are ordered finest first and each halves the previous size. A
  /// single tap gets the lateral projection only.
  std::vector<Tensor> merge(const std::vector<Tensor>& taps) const;
  std::size_t width() const { return width_; }

 private:
  std::size_t width_ = 0;
  std::vector<Tensor> lateral_w_, lateral_b_, smooth_w_, smooth_b_;
};

class Encoder {
 public:
  Encoder(const EncoderConfig& cfg, ParamStore& store);

  const EncoderConfig& config() const { return cfg_; }

  /// Image [C x H x W] -> [M x D] patch tokens with positional embedding.
  Tensor patch_embed(const Tensor& image) const;

  /// ViT: runs the prompted transformer on `tokens` and returns the visual
  /// tokens [M x D] after each tap layer.
  std::vector<Tensor> vit_layers(const Tensor& tokens, const Tensor& p_v) const;

  /// Prompt insertion before ViT layer `layer` (0-based). Layer 0 prepends
  /// the prompt token to the [M x D] visual tokens; under DPE later layers
  /// overwrite slot 0 of the [(M+1) x D] sequence with a fresh projection.
  Tensor vit_fuse(const Tensor& seq, const Tensor& p_v, std::size_t layer) const;

  /// Prompt token injected at ViT layer `layer` (0-based), [1 x D].
  Tensor vit_prompt(const Tensor& p_v, std::size_t layer) const;
  /// Prompt token used by every window of Swin stage `stage`, [1 x D_s].
  Tensor swin_prompt(const Tensor& p_v, std::size_t stage) const;
  /// Prompt plane [1 x H x W] appended at CNN stage `stage`.
  Tensor cnn_prompt_plane(const Tensor& p_v, std::size_t stage, std::size_t height,
                          std::size_t width) const;

  /// Backbone features before the FPN, finest first.
  std::vector<Tensor> taps(const Tensor& image, const Tensor& p_v) const;
  std::vector<std::size_t> tap_strides() const;
  std::vector<std::size_t> tap_channels() const;

  FeaturePyramid encode(const Tensor& image, const Tensor& p_v) const;

  /// Parameter-name prefix of every prompt projection.
  static constexpr std::string_view kPromptPrefix = "encoder.prompt.";

 private:
  struct Block {
    AttentionParams attn;
    FeedForwardParams ffn;
  };
  struct SwinStage {
    std::vector<Block> blocks;  // regular, shifted
    LayerNorm merge_norm;
    Linear merge;  // 4 D_s -> 2 D_s, absent on the last stage
  };

  bool use_prompt(const Tensor& p_v) const;
  std::vector<Tensor> swin_taps(const Tensor& image, const Tensor& p_v) const;
  std::vector<Tensor> cnn_taps(const Tensor& image, const Tensor& p_v) const;

  EncoderConfig cfg_;
  Linear patch_proj_;
  Tensor pos_;
  std::vector<Block> vit_blocks_;
  std::vector<PromptMlp> prompt_mlps_;
  std::vector<SwinStage> swin_stages_;
  Tensor stem_w_, stem_b_;
  std::vector<ConvStageParams> cnn_stages_;
  std::vector<Linear> cnn_reduce_;
  Fpn fpn_;
};

}  // namespace domprompt
