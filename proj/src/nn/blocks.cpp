#include <cmath>
#include <limits>

#include "domprompt/nn.hpp"
#include "domprompt/ops.hpp"

namespace domprompt {
namespace {

// [G*T x D] -> [h*G x T x dh]; head-major so slice h*G + g maps to mask g.
Tensor split_heads(const Tensor& x, std::size_t groups, std::size_t heads) {
  const std::size_t rows = x.dim(0) / groups;
  const std::size_t dh = x.dim(1) / heads;
  Tensor t = reshape(x, {groups, rows, heads, dh});
  t = permute(t, {2, 0, 1, 3});
  return reshape(t, {heads * groups, rows, dh});
}

Tensor merge_heads(const Tensor& x, std::size_t groups, std::size_t heads) {
  const std::size_t rows = x.dim(1);
  const std::size_t dh = x.dim(2);
  Tensor t = reshape(x, {heads, groups, rows, dh});
  t = permute(t, {1, 2, 0, 3});
  return reshape(t, {groups * rows, heads * dh});
}

void check_mask(const AttnMask& m, std::size_t queries, std::size_t keys) {
  if (m.queries != queries || m.keys != keys || m.allowed.size() != queries * keys) {
    throw DimensionError("attention mask " + std::to_string(m.queries) + "x" +
                         std::to_string(m.keys) + " does not match " + std::to_string(queries) +
                         "x" + std::to_string(keys));
  }
  for (std::size_t q = 0; q < queries; ++q) {
    bool any = false;
    for (std::size_t k = 0; k < keys && !any; ++k) any = m.get(q, k);
    if (!any) throw std::invalid_argument("attention mask row " + std::to_string(q) + " is empty");
  }
}

}  // namespace

AttnMask AttnMask::all(std::size_t queries, std::size_t keys) {
  return {queries, keys, std::vector<std::uint8_t>(queries * keys, 1)};
}

Tensor multi_head(const Tensor& queries, const Tensor& memory, const AttentionParams& params,
                  std::size_t groups, const std::vector<AttnMask>& masks) {
  if (groups == 0 || queries.dim(0) % groups != 0 || memory.dim(0) % groups != 0) {
    throw DimensionError("multi_head: rows not divisible into " + std::to_string(groups) +
                         " groups");
  }
  const std::size_t t = queries.dim(0) / groups;
  const std::size_t s = memory.dim(0) / groups;
  const std::size_t h = params.heads;
  Tensor q = split_heads(params.q(queries), groups, h);
  Tensor k = split_heads(params.k(memory), groups, h);
  Tensor v = split_heads(params.v(memory), groups, h);
  Tensor scores = mul(bmm(q, k, true), 1.0 / std::sqrt(static_cast<double>(params.head_dim())));
  if (!masks.empty()) {
    if (masks.size() != 1 && masks.size() != groups) {
      throw DimensionError("multi_head: " + std::to_string(masks.size()) + " masks for " +
                           std::to_string(groups) + " groups");
    }
    std::vector<std::uint8_t> bytes;
    bytes.reserve(masks.size() * t * s);
    for (const AttnMask& m : masks) {
      check_mask(m, t, s);
      bytes.insert(bytes.end(), m.allowed.begin(), m.allowed.end());
    }
    scores = masked_fill(scores, bytes, masks.size(), -std::numeric_limits<double>::infinity());
  }
  Tensor out = bmm(softmax(scores, 2), v);
  return params.o(merge_heads(out, groups, h));
}

Tensor attention(const Tensor& tokens, const AttentionParams& params, const AttnMask* mask) {
  if (tokens.rank() != 2 || tokens.dim(1) != params.dim) {
    throw DimensionError("attention: expected [N x " + std::to_string(params.dim) + "], got " +
                         shape_str(tokens.shape()));
  }
  Tensor normed = params.norm(tokens);
  std::vector<AttnMask> masks;
  if (mask != nullptr) masks.push_back(*mask);
  return add(tokens, multi_head(normed, normed, params, 1, masks));
}

Tensor feedforward(const Tensor& x, const FeedForwardParams& params) {
  return add(x, params.down(gelu(params.up(params.norm(x)))));
}

std::vector<std::size_t> WindowLayout::gather_index() const {
  const std::size_t shift = shifted ? window / 2 : 0;
  const std::size_t per_row = width / window;
  std::vector<std::size_t> index;
  index.reserve(windows() * tokens_per_window());
  for (std::size_t w = 0; w < windows(); ++w) {
    const std::size_t wy = w / per_row, wx = w % per_row;
    for (std::size_t a = 0; a < window; ++a) {
      for (std::size_t b = 0; b < window; ++b) {
        const std::size_t i = (wy * window + a + shift) % height;
        const std::size_t j = (wx * window + b + shift) % width;
        index.push_back(i * width + j);
      }
    }
    if (prompt) index.push_back(height * width);
  }
  return index;
}

std::vector<AttnMask> WindowLayout::masks() const {
  if (!shifted && !(prompt && mask_prompt)) return {};
  const std::size_t shift = window / 2;
  const std::size_t per_row = width / window;
  const std::size_t t = tokens_per_window();
  const std::size_t visual = window * window;
  // Region of a position in the shifted frame; tokens from different regions
  // were not neighbours before the cyclic shift.
  auto region = [&](std::size_t pos, std::size_t extent) -> std::size_t {
    if (!shifted || pos < extent - window) return 0;
    return pos < extent - shift ? 1 : 2;
  };
  std::vector<AttnMask> out;
  out.reserve(windows());
  for (std::size_t w = 0; w < windows(); ++w) {
    const std::size_t wy = w / per_row, wx = w % per_row;
    std::vector<std::size_t> label(visual);
    for (std::size_t a = 0; a < window; ++a) {
      for (std::size_t b = 0; b < window; ++b) {
        label[a * window + b] = region(wy * window + a, height) * 3 + region(wx * window + b, width);
      }
    }
    AttnMask m = AttnMask::all(t, t);
    for (std::size_t q = 0; q < visual; ++q) {
      for (std::size_t k = 0; k < visual; ++k) m.set(q, k, label[q] == label[k]);
      if (prompt && mask_prompt) m.set(q, visual, false);
    }
    out.push_back(std::move(m));
  }
  return out;
}

Tensor windowed_attention(const Tensor& tokens, std::size_t window, bool shifted,
                          const AttentionParams& params, const Tensor& prompt, bool mask_prompt) {
  if (tokens.rank() != 3 || tokens.dim(2) != params.dim) {
    throw DimensionError("windowed_attention: expected [H x W x " + std::to_string(params.dim) +
                         "], got " + shape_str(tokens.shape()));
  }
  WindowLayout layout;
  layout.height = tokens.dim(0);
  layout.width = tokens.dim(1);
  layout.window = window;
  layout.shifted = shifted;
  layout.prompt = prompt.defined();
  layout.mask_prompt = mask_prompt;
  if (window == 0 || layout.height % window != 0 || layout.width % window != 0) {
    throw DimensionError("windowed_attention: grid " + shape_str(tokens.shape()) +
                         " not divisible by window " + std::to_string(window));
  }
  const std::size_t n = layout.height * layout.width;
  Tensor flat = reshape(tokens, {n, params.dim});
  Tensor table = flat;
  if (layout.prompt) table = concat({flat, reshape(prompt, {1, params.dim})}, 0);
  const std::vector<std::size_t> index = layout.gather_index();
  Tensor seq = gather_rows(params.norm(table), index);
  Tensor attended = multi_head(seq, seq, params, layout.windows(), layout.masks());
  // Each visual token occupies exactly one window slot; map it back.
  std::vector<std::size_t> inverse(n);
  for (std::size_t slot = 0; slot < index.size(); ++slot) {
    if (index[slot] < n) inverse[index[slot]] = slot;
  }
  Tensor out = add(flat, gather_rows(attended, inverse));
  return reshape(out, tokens.shape());
}

Tensor conv2d_stage(const Tensor& x, const ConvStageParams& p, bool downsample) {
  if (x.rank() != 3) {
    throw DimensionError("conv2d_stage: expected [C x H x W], got " + shape_str(x.shape()));
  }
  const std::size_t c = x.dim(0);
  Tensor w1 = p.conv1_w, ws = p.skip_w;
  if (c == p.in_channels + 1 && p.accepts_prompt()) {
    w1 = concat({p.conv1_w, p.conv1_prompt_w}, 1);
    ws = concat({p.skip_w, p.skip_prompt_w}, 1);
  } else if (c != p.in_channels) {
    throw DimensionError("conv2d_stage: " + std::to_string(c) + " input channels, stage declares " +
                         std::to_string(p.in_channels) +
                         (p.accepts_prompt() ? " (+1 prompt)" : ""));
  }
  if (downsample && (x.dim(1) % 2 != 0 || x.dim(2) % 2 != 0)) {
    throw DimensionError("conv2d_stage: odd spatial size " + shape_str(x.shape()));
  }
  Tensor h = gelu(conv2d(x, w1, p.conv1_b, 1, 1));
  h = conv2d(h, p.conv2_w, p.conv2_b, 1, 1);
  Tensor y = add(h, conv2d(x, ws, p.skip_b, 1, 0));
  return downsample ? avg_pool2(y) : y;
}

}  // namespace domprompt
