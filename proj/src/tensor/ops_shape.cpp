#include <algorithm>

#include "ops_common.hpp"

namespace domprompt {

using detail::out_data;

Tensor slice(const Tensor& a, std::size_t axis, std::size_t start, std::size_t length) {
  detail::require_defined(a, "slice");
  if (axis >= a.rank()) throw DimensionError("slice: axis out of range for " + shape_str(a.shape()));
  if (length == 0 || start + length > a.dim(axis)) {
    throw DimensionError("slice: range [" + std::to_string(start) + ", " +
                         std::to_string(start + length) + ") exceeds axis " + std::to_string(axis) +
                         " of " + shape_str(a.shape()));
  }
  std::size_t outer = 1, inner = 1;
  for (std::size_t i = 0; i < axis; ++i) outer *= a.dim(i);
  for (std::size_t i = axis + 1; i < a.rank(); ++i) inner *= a.dim(i);
  const std::size_t full = a.dim(axis);
  Shape shape = a.shape();
  shape[axis] = length;
  Tensor out = make_tensor(shape, a.precision());
  visit_precision(a.precision(), [&]<class T>() {
    auto x = a.data<T>();
    auto o = out_data<T>(out);
    for (std::size_t i = 0; i < outer; ++i) {
      std::copy_n(x.data() + (i * full + start) * inner, length * inner, o.data() + i * length * inner);
    }
    record_op(out, {a}, [outer, inner, full, start, length](GradContext& ctx) {
      auto ga = ctx.in_grad<T>(0);
      auto g = ctx.out_grad<T>();
      for (std::size_t i = 0; i < outer; ++i) {
        kernels::table<T>().axpy(length * inner, T(1), g.data() + i * length * inner,
                                 ga.data() + (i * full + start) * inner);
      }
    });
  });
  return out;
}

Tensor concat(const std::vector<Tensor>& parts, std::size_t axis) {
  if (parts.empty()) throw DimensionError("concat: no inputs");
  const Tensor& first = parts.front();
  detail::require_defined(first, "concat");
  if (axis >= first.rank()) throw DimensionError("concat: axis out of range");
  std::size_t total = 0;
  for (const Tensor& p : parts) {
    detail::require_defined(p, "concat");
    detail::require_same_precision(first, p, "concat");
    bool ok = p.rank() == first.rank();
    for (std::size_t i = 0; ok && i < p.rank(); ++i) ok = (i == axis) || p.dim(i) == first.dim(i);
    if (!ok) {
      throw DimensionError("concat: incompatible shapes " + shape_str(first.shape()) + " and " +
                           shape_str(p.shape()) + " along axis " + std::to_string(axis));
    }
    total += p.dim(axis);
  }
  std::size_t outer = 1, inner = 1;
  for (std::size_t i = 0; i < axis; ++i) outer *= first.dim(i);
  for (std::size_t i = axis + 1; i < first.rank(); ++i) inner *= first.dim(i);
  Shape shape = first.shape();
  shape[axis] = total;
  std::vector<std::size_t> lengths;
  for (const Tensor& p : parts) lengths.push_back(p.dim(axis));
  Tensor out = make_tensor(shape, first.precision());
  visit_precision(first.precision(), [&]<class T>() {
    auto o = out_data<T>(out);
    std::size_t offset = 0;
    for (std::size_t pi = 0; pi < parts.size(); ++pi) {
      auto x = parts[pi].data<T>();
      const std::size_t len = lengths[pi];
      for (std::size_t i = 0; i < outer; ++i) {
        std::copy_n(x.data() + i * len * inner, len * inner, o.data() + (i * total + offset) * inner);
      }
      offset += len;
    }
    record_op(out, std::span<const Tensor>(parts), [lengths, outer, inner, total](GradContext& ctx) {
      auto g = ctx.out_grad<T>();
      std::size_t offset = 0;
      for (std::size_t pi = 0; pi < lengths.size(); ++pi) {
        const std::size_t len = lengths[pi];
        if (auto gp = ctx.in_grad<T>(pi); !gp.empty()) {
          for (std::size_t i = 0; i < outer; ++i) {
            kernels::table<T>().axpy(len * inner, T(1), g.data() + (i * total + offset) * inner,
                                     gp.data() + i * len * inner);
          }
        }
        offset += len;
      }
    });
  });
  return out;
}

Tensor gather_rows(const Tensor& a, const std::vector<std::size_t>& index) {
  detail::require_defined(a, "gather_rows");
  if (a.rank() == 0) throw DimensionError("gather_rows: rank-0 input");
  if (index.empty()) throw DimensionError("gather_rows: empty index");
  const std::size_t rows = a.dim(0);
  const std::size_t width = a.numel() / rows;
  for (std::size_t i : index) {
    if (i >= rows) throw std::out_of_range("gather_rows: index " + std::to_string(i) + " >= " +
                                           std::to_string(rows));
  }
  Shape shape = a.shape();
  shape[0] = index.size();
  Tensor out = make_tensor(shape, a.precision());
  visit_precision(a.precision(), [&]<class T>() {
    auto x = a.data<T>();
    auto o = out_data<T>(out);
    for (std::size_t r = 0; r < index.size(); ++r) {
      std::copy_n(x.data() + index[r] * width, width, o.data() + r * width);
    }
    record_op(out, {a}, [index, width](GradContext& ctx) {
      auto ga = ctx.in_grad<T>(0);
      auto g = ctx.out_grad<T>();
      for (std::size_t r = 0; r < index.size(); ++r) {
        kernels::table<T>().axpy(width, T(1), g.data() + r * width, ga.data() + index[r] * width);
      }
    });
  });
  return out;
}

Tensor masked_fill(const Tensor& x, const std::vector<std::uint8_t>& allowed,
                   std::size_t mask_batches, double value) {
  detail::require_defined(x, "masked_fill");
  if (x.rank() != 2 && x.rank() != 3) {
    throw DimensionError("masked_fill: expected rank 2 or 3, got " + shape_str(x.shape()));
  }
  const std::size_t groups = x.rank() == 3 ? x.dim(0) : 1;
  const std::size_t plane = x.numel() / groups;
  if (mask_batches == 0 || groups % mask_batches != 0 || allowed.size() != mask_batches * plane) {
    throw DimensionError("masked_fill: mask of " + std::to_string(allowed.size()) +
                         " entries in " + std::to_string(mask_batches) +
                         " batches does not fit " + shape_str(x.shape()));
  }
  Tensor out = make_tensor(x.shape(), x.precision());
  visit_precision(x.precision(), [&]<class T>() {
    auto in = x.data<T>();
    auto o = out_data<T>(out);
    const T fill = static_cast<T>(value);
    for (std::size_t gi = 0; gi < groups; ++gi) {
      const std::uint8_t* m = allowed.data() + (gi % mask_batches) * plane;
      for (std::size_t i = 0; i < plane; ++i) o[gi * plane + i] = m[i] ? in[gi * plane + i] : fill;
    }
    record_op(out, {x}, [allowed, mask_batches, groups, plane](GradContext& ctx) {
      auto gx = ctx.in_grad<T>(0);
      auto g = ctx.out_grad<T>();
      for (std::size_t gi = 0; gi < groups; ++gi) {
        const std::uint8_t* m = allowed.data() + (gi % mask_batches) * plane;
        for (std::size_t i = 0; i < plane; ++i) {
          if (m[i]) gx[gi * plane + i] += g[gi * plane + i];
        }
      }
    });
  });
  return out;
}

Tensor broadcast_scalar(const Tensor& a, Shape shape) {
  detail::require_defined(a, "broadcast_scalar");
  if (a.numel() != 1) {
    throw DimensionError("broadcast_scalar: expected one element, got " + shape_str(a.shape()));
  }
  Tensor out = make_tensor(std::move(shape), a.precision());
  visit_precision(a.precision(), [&]<class T>() {
    auto o = out_data<T>(out);
    std::fill(o.begin(), o.end(), a.data<T>()[0]);
    record_op(out, {a}, [](GradContext& ctx) {
      auto g = ctx.out_grad<T>();
      ctx.in_grad<T>(0)[0] += kernels::table<T>().sum(g.size(), g.data());
    });
  });
  return out;
}

}  // namespace domprompt
