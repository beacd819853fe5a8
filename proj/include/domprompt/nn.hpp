#pragma once

#include <cstddef>
#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "domprompt/tensor.hpp"

// Transformer and convolution building blocks assembled from tensor ops.

namespace domprompt {

/// Named trainable parameters. Each tensor is initialised from a stream
/// seeded by (store seed, parameter name), so two models that declare a
/// parameter under the same name start from identical values regardless of
/// what else they contain.
class ParamStore {
 public:
  explicit ParamStore(std::uint64_t seed = 0, Precision precision = Precision::f32);

  /// Uniform in +/- 1/sqrt(fan_in).
  Tensor uniform(const std::string& name, Shape shape, std::size_t fan_in);
  Tensor uniform_range(const std::string& name, Shape shape, double bound);
  Tensor constant(const std::string& name, Shape shape, double value);

  bool contains(const std::string& name) const { return params_.count(name) != 0; }
  const Tensor& at(const std::string& name) const;
  Tensor& at(const std::string& name);

  const std::map<std::string, Tensor>& params() const { return params_; }
  std::size_t size() const { return params_.size(); }
  /// Total scalar count of parameters whose name starts with `prefix`.
  std::size_t numel(const std::string& prefix = "") const;

  std::uint64_t seed() const { return seed_; }
  Precision precision() const { return precision_; }

 private:
  Tensor add(const std::string& name, Tensor t);

  std::uint64_t seed_;
  Precision precision_;
  std::map<std::string, Tensor> params_;
};

struct Linear {
  Tensor weight;  // [in x out]
  Tensor bias;    // [out]

  static Linear create(ParamStore& store, const std::string& name, std::size_t in,
                       std::size_t out);
  /// [N x in] -> [N x out]
  Tensor operator()(const Tensor& x) const;
};

struct LayerNorm {
  Tensor gamma;
  Tensor beta;

  static LayerNorm create(ParamStore& store, const std::string& name, std::size_t dim);
  Tensor operator()(const Tensor& x) const;
};

struct AttentionParams {
  std::size_t dim = 0;
  std::size_t heads = 1;
  LayerNorm norm;
  Linear q, k, v, o;

  static AttentionParams create(ParamStore& store, const std::string& name, std::size_t dim,
                                std::size_t heads);
  std::size_t head_dim() const { return dim / heads; }
};

/// Query x key boolean matrix; row r lists the keys query r may attend to.
struct AttnMask {
  std::size_t queries = 0;
  std::size_t keys = 0;
  std::vector<std::uint8_t> allowed;

  static AttnMask all(std::size_t queries, std::size_t keys);
  void set(std::size_t q, std::size_t k, bool value) { allowed[q * keys + k] = value ? 1 : 0; }
  bool get(std::size_t q, std::size_t k) const { return allowed[q * keys + k] != 0; }
};

/// Multi-head scaled dot-product attention without norm or residual.
///
/// `queries` is [G*T x D] and `memory` is [G*S x D]: G independent groups of
/// T queries over S keys. `masks` holds either 0, 1 or G masks of T x S.
Tensor multi_head(const Tensor& queries, const Tensor& memory, const AttentionParams& params,
                  std::size_t groups, const std::vector<AttnMask>& masks = {});

/// Pre-norm self-attention block: x + Attn(LN(x)). `tokens` is [N x D].
Tensor attention(const Tensor& tokens, const AttentionParams& params,
                 const AttnMask* mask = nullptr);

struct FeedForwardParams {
  LayerNorm norm;
  Linear up, down;

  static FeedForwardParams create(ParamStore& store, const std::string& name, std::size_t dim,
                                  std::size_t hidden_mult);
};

/// x + W2 GELU(W1 LN(x)) on [N x D].
Tensor feedforward(const Tensor& x, const FeedForwardParams& params);

/// Window partition of an H x W grid with optional cyclic shift by window/2.
/// The prompt, if any, is appended to every window after partitioning and
/// never shifted.
struct WindowLayout {
  std::size_t height = 0, width = 0, window = 0;
  bool shifted = false;
  bool prompt = false;
  bool mask_prompt = false;

  std::size_t windows() const { return (height / window) * (width / window); }
  std::size_t tokens_per_window() const { return window * window + (prompt ? 1 : 0); }
  /// Row of the flattened H*W (+1 prompt) token table for each slot of each
  /// window, in window-major order.
  std::vector<std::size_t> gather_index() const;
  /// One mask per window; empty when every key is visible to every query.
  std::vector<AttnMask> masks() const;
};

/// Pre-norm windowed self-attention over `tokens` [H x W x D]. `prompt`, when
/// defined, is a [1 x D] token joining every window as key, value and query;
/// its output rows are dropped. `mask_prompt` hides the prompt key from the
/// visual queries.
Tensor windowed_attention(const Tensor& tokens, std::size_t window, bool shifted,
                          const AttentionParams& params, const Tensor& prompt = Tensor(),
                          bool mask_prompt = false);

/// Residual stage: conv3x3 -> GELU -> conv3x3 added to a 1x1 shortcut,
/// followed by 2x2 average pooling.
struct ConvStageParams {
  std::size_t in_channels = 0;
  std::size_t out_channels = 0;
  Tensor conv1_w, conv1_b, conv2_w, conv2_b, skip_w, skip_b;
  /// Weights applied to the extra prompt channel; undefined for a stage
  /// without prompt input.
  Tensor conv1_prompt_w, skip_prompt_w;

  static ConvStageParams create(ParamStore& store, const std::string& name, std::size_t in,
                                std::size_t out, bool prompt_channel);
  bool accepts_prompt() const { return conv1_prompt_w.defined(); }
};

/// `x` is [C x H x W] with C == in_channels, or in_channels + 1 when the
/// stage accepts a prompt plane as the last channel.
Tensor conv2d_stage(const Tensor& x, const ConvStageParams& params, bool downsample = true);

}  // namespace domprompt
