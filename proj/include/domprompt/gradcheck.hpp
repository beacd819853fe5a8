#pragma once

#include <cstdint>
#include <functional>
#include <vector>

#include "domprompt/tensor.hpp"

namespace domprompt {

/// Compares the tape gradient of a scalar function against central
/// differences. Returns max over checked coordinates of
/// |analytic - numeric| / max(1, |analytic|).
///
/// `eps` is rounded to the nearest power of two. `x` must be 64-bit. When
/// `max_coords` is non-zero only that many coordinates, drawn with `seed`,
/// are checked.
double finite_diff_check(const std::function<Tensor(const Tensor&)>& f, const Tensor& x,
                         double eps = 1e-5, std::size_t max_coords = 0, std::uint64_t seed = 0);

/// Same oracle over coordinates spread across a set of trainable leaves.
/// `loss` is re-evaluated after perturbing the leaves in place.
double finite_diff_check_params(const std::function<Tensor()>& loss, std::vector<Tensor> params,
                                std::size_t coords, double eps = 1e-5, std::uint64_t seed = 0);

}  // namespace domprompt
