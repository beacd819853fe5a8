#include <numeric>

#include "ops_common.hpp"

namespace domprompt {

using detail::out_data;

Tensor matmul(const Tensor& a, const Tensor& b) {
  detail::require_defined(a, "matmul");
  detail::require_defined(b, "matmul");
  if (a.rank() != 2 || b.rank() != 2 || a.dim(1) != b.dim(0)) {
    throw DimensionError("matmul: cannot multiply " + shape_str(a.shape()) + " by " +
                         shape_str(b.shape()));
  }
  detail::require_same_precision(a, b, "matmul");
  const std::size_t m = a.dim(0), k = a.dim(1), n = b.dim(1);
  Tensor out = make_tensor({m, n}, a.precision());
  visit_precision(a.precision(), [&]<class T>() {
    kernels::table<T>().gemm(m, n, k, a.data<T>().data(), b.data<T>().data(),
                             out_data<T>(out).data(), false);
    record_op(out, {a, b}, [a, b, m, n, k](GradContext& ctx) {
      const auto& kt = kernels::table<T>();
      auto g = ctx.out_grad<T>();
      if (auto ga = ctx.in_grad<T>(0); !ga.empty()) {
        std::vector<T> bt(k * n);
        detail::transpose_into(b.data<T>().data(), k, n, bt.data());
        kt.gemm(m, k, n, g.data(), bt.data(), ga.data(), true);
      }
      if (auto gb = ctx.in_grad<T>(1); !gb.empty()) {
        std::vector<T> at(m * k);
        detail::transpose_into(a.data<T>().data(), m, k, at.data());
        kt.gemm(k, n, m, at.data(), g.data(), gb.data(), true);
      }
    });
  });
  return out;
}

Tensor bmm(const Tensor& a, const Tensor& b, bool transpose_b) {
  detail::require_defined(a, "bmm");
  detail::require_defined(b, "bmm");
  detail::require_rank(a, 3, "bmm");
  detail::require_rank(b, 3, "bmm");
  detail::require_same_precision(a, b, "bmm");
  const std::size_t batch = a.dim(0), m = a.dim(1), k = a.dim(2);
  const std::size_t n = transpose_b ? b.dim(1) : b.dim(2);
  const std::size_t bk = transpose_b ? b.dim(2) : b.dim(1);
  if (b.dim(0) != batch || bk != k) {
    throw DimensionError("bmm: cannot multiply " + shape_str(a.shape()) + " by " +
                         shape_str(b.shape()) + (transpose_b ? " (transposed)" : ""));
  }
  Tensor out = make_tensor({batch, m, n}, a.precision());
  visit_precision(a.precision(), [&]<class T>() {
    const auto& kt = kernels::table<T>();
    const T* pa = a.data<T>().data();
    const T* pb = b.data<T>().data();
    T* pc = out_data<T>(out).data();
    std::vector<T> tmp(transpose_b ? k * n : 0);
    for (std::size_t s = 0; s < batch; ++s) {
      const T* bs = pb + s * k * n;
      if (transpose_b) {
        detail::transpose_into(bs, n, k, tmp.data());
        bs = tmp.data();
      }
      kt.gemm(m, n, k, pa + s * m * k, bs, pc + s * m * n, false);
    }
    record_op(out, {a, b}, [a, b, batch, m, n, k, transpose_b](GradContext& ctx) {
      const auto& kt = kernels::table<T>();
      auto g = ctx.out_grad<T>();
      const T* pa = a.data<T>().data();
      const T* pb = b.data<T>().data();
      auto ga = ctx.in_grad<T>(0);
      auto gb = ctx.in_grad<T>(1);
      std::vector<T> t1, t2;
      for (std::size_t s = 0; s < batch; ++s) {
        const T* gs = g.data() + s * m * n;
        const T* as = pa + s * m * k;
        const T* bs = pb + s * k * n;
        if (!ga.empty()) {
          // dA = dC * B_eff^T; B_eff^T is the stored b when transposed.
          if (transpose_b) {
            kt.gemm(m, k, n, gs, bs, ga.data() + s * m * k, true);
          } else {
            t1.resize(n * k);
            detail::transpose_into(bs, k, n, t1.data());
            kt.gemm(m, k, n, gs, t1.data(), ga.data() + s * m * k, true);
          }
        }
        if (!gb.empty()) {
          if (transpose_b) {
            // dB_stored = dC^T * A  ([n x m] * [m x k])
            t1.resize(n * m);
            detail::transpose_into(gs, m, n, t1.data());
            kt.gemm(n, k, m, t1.data(), as, gb.data() + s * k * n, true);
          } else {
            t2.resize(k * m);
            detail::transpose_into(as, m, k, t2.data());
            kt.gemm(k, n, m, t2.data(), gs, gb.data() + s * k * n, true);
          }
        }
      }
    });
  });
  return out;
}

Tensor transpose(const Tensor& a) {
  detail::require_defined(a, "transpose");
  detail::require_rank(a, 2, "transpose");
  const std::size_t r = a.dim(0), c = a.dim(1);
  Tensor out = make_tensor({c, r}, a.precision());
  visit_precision(a.precision(), [&]<class T>() {
    detail::transpose_into(a.data<T>().data(), r, c, out_data<T>(out).data());
    record_op(out, {a}, [r, c](GradContext& ctx) {
      auto ga = ctx.in_grad<T>(0);
      auto g = ctx.out_grad<T>();
      for (std::size_t i = 0; i < r; ++i) {
        for (std::size_t j = 0; j < c; ++j) ga[i * c + j] += g[j * r + i];
      }
    });
  });
  return out;
}

Tensor permute(const Tensor& a, const std::vector<std::size_t>& perm) {
  detail::require_defined(a, "permute");
  const std::size_t rank = a.rank();
  if (perm.size() != rank) throw DimensionError("permute: permutation rank mismatch");
  std::vector<bool> seen(rank, false);
  for (std::size_t p : perm) {
    if (p >= rank || seen[p]) throw DimensionError("permute: invalid permutation");
    seen[p] = true;
  }
  Shape out_shape(rank);
  for (std::size_t i = 0; i < rank; ++i) out_shape[i] = a.dim(perm[i]);
  // Source offset for each destination element, computed once.
  std::vector<std::size_t> in_strides(rank, 1);
  for (std::size_t i = rank; i-- > 1;) in_strides[i - 1] = in_strides[i] * a.dim(i);
  const std::size_t n = a.numel();
  auto src_index = std::make_shared<std::vector<std::size_t>>(n);
  std::vector<std::size_t> idx(rank, 0);
  for (std::size_t flat = 0; flat < n; ++flat) {
    std::size_t off = 0;
    for (std::size_t i = 0; i < rank; ++i) off += idx[i] * in_strides[perm[i]];
    (*src_index)[flat] = off;
    for (std::size_t i = rank; i-- > 0;) {
      if (++idx[i] < out_shape[i]) break;
      idx[i] = 0;
    }
  }
  Tensor out = make_tensor(out_shape, a.precision());
  visit_precision(a.precision(), [&]<class T>() {
    auto src = a.data<T>();
    auto dst = out_data<T>(out);
    for (std::size_t i = 0; i < n; ++i) dst[i] = src[(*src_index)[i]];
    record_op(out, {a}, [src_index, n](GradContext& ctx) {
      auto ga = ctx.in_grad<T>(0);
      auto g = ctx.out_grad<T>();
      for (std::size_t i = 0; i < n; ++i) ga[(*src_index)[i]] += g[i];
    });
  });
  return out;
}

Tensor reshape(const Tensor& a, Shape shape) {
  detail::require_defined(a, "reshape");
  if (shape_numel(shape) != a.numel()) {
    throw DimensionError("reshape: cannot view " + shape_str(a.shape()) + " as " +
                         shape_str(shape));
  }
  Tensor out = make_tensor(std::move(shape), a.precision());
  visit_precision(a.precision(), [&]<class T>() {
    auto src = a.data<T>();
    std::copy(src.begin(), src.end(), out_data<T>(out).begin());
    record_op(out, {a}, [](GradContext& ctx) {
      auto ga = ctx.in_grad<T>(0);
      auto g = ctx.out_grad<T>();
      kernels::table<T>().axpy(g.size(), T(1), g.data(), ga.data());
    });
  });
  return out;
}

}  // namespace domprompt
