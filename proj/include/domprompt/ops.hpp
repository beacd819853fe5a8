#pragma once

#include <cstdint>
#include <vector>

#include "domprompt/tensor.hpp"

// Differentiable primitives. Every function records a backward rule on the
// active tape when one of its inputs is tracked. Broadcasting is limited to
// rank-0 operands and to the explicitly named row/channel helpers below.

namespace domprompt {

// -- linear algebra ---------------------------------------------------------

/// [m x k] * [k x n] -> [m x n]
Tensor matmul(const Tensor& a, const Tensor& b);
/// Batched product [B x m x k] * [B x k x n]; with `transpose_b` the second
/// operand is given as [B x n x k].
Tensor bmm(const Tensor& a, const Tensor& b, bool transpose_b = false);
/// 2-D transpose.
Tensor transpose(const Tensor& a);
Tensor permute(const Tensor& a, const std::vector<std::size_t>& perm);
Tensor reshape(const Tensor& a, Shape shape);

// -- elementwise ------------------------------------------------------------

Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor div(const Tensor& a, const Tensor& b);
Tensor add(const Tensor& a, double b);
Tensor mul(const Tensor& a, double b);
Tensor neg(const Tensor& a);
Tensor exp(const Tensor& a);
/// Throws DomainError when any element is <= 0.
Tensor log(const Tensor& a);
/// tanh approximation: 0.5 x (1 + tanh(sqrt(2/pi) (x + 0.044715 x^3))).
Tensor gelu(const Tensor& a);
Tensor relu(const Tensor& a);
Tensor sigmoid(const Tensor& a);
Tensor abs(const Tensor& a);
/// Elementwise min/max of equal-shaped tensors; ties route gradient to `a`.
Tensor minimum(const Tensor& a, const Tensor& b);
Tensor maximum(const Tensor& a, const Tensor& b);
Tensor clamp_min(const Tensor& a, double lo);
/// 0.5 x^2 / beta for |x| < beta, |x| - 0.5 beta otherwise.
Tensor smooth_l1(const Tensor& a, double beta = 1.0);

// -- reductions and normalizations ------------------------------------------

/// Sum of all elements, rank-0 result.
Tensor sum(const Tensor& a);
Tensor mean(const Tensor& a);
/// [N x D] -> [1 x D]
Tensor mean_rows(const Tensor& a);
/// Numerically stabilized softmax along `axis`.
Tensor softmax(const Tensor& a, std::size_t axis);
Tensor log_softmax(const Tensor& a, std::size_t axis);
/// Per-row negative log-likelihood of `targets` under softmax(logits):
/// [N x K] -> [N].
Tensor cross_entropy_rows(const Tensor& logits, const std::vector<int>& targets);
/// Row-wise layer normalization of [N x D] with affine [D] parameters.
Tensor layer_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta, double eps = 1e-5);
/// [N x D] + [D] added to every row.
Tensor add_bias(const Tensor& x, const Tensor& bias);

// -- indexing and layout ----------------------------------------------------

Tensor slice(const Tensor& a, std::size_t axis, std::size_t start, std::size_t length);
Tensor concat(const std::vector<Tensor>& parts, std::size_t axis);
/// Selects leading-axis slices: out[i] = a[index[i]]. Indices may repeat.
Tensor gather_rows(const Tensor& a, const std::vector<std::size_t>& index);
/// Replaces entries whose mask byte is 0 with `value`. `x` is [G x T x S]
/// (or [T x S]); `allowed` holds `mask_batches` consecutive T x S masks and
/// slice g uses mask g % mask_batches.
Tensor masked_fill(const Tensor& x, const std::vector<std::uint8_t>& allowed,
                   std::size_t mask_batches, double value);
/// Copies a one-element tensor into every position of `shape`.
Tensor broadcast_scalar(const Tensor& a, Shape shape);

// -- spatial (channel-first [C x H x W]) ------------------------------------

/// Direct 2-D convolution. `weight` is [O x C x k x k]; `bias` is [O] or
/// undefined.
Tensor conv2d(const Tensor& x, const Tensor& weight, const Tensor& bias, std::size_t stride,
              std::size_t padding);
/// 2x2 average pooling with stride 2.
Tensor avg_pool2(const Tensor& x);
/// Nearest-neighbour 2x upsampling.
Tensor upsample2(const Tensor& x);

}  // namespace domprompt
