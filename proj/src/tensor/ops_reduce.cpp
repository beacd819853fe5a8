#include <cmath>
#include <limits>

#include "ops_common.hpp"

namespace domprompt {
namespace {

using detail::out_data;

struct AxisSplit {
  std::size_t outer = 1, length = 1, inner = 1;
};

AxisSplit split_axis(const Shape& shape, std::size_t axis, const char* op) {
  if (axis >= shape.size()) {
    throw DimensionError(std::string(op) + ": axis " + std::to_string(axis) +
                         " out of range for " + shape_str(shape));
  }
  AxisSplit s;
  for (std::size_t i = 0; i < axis; ++i) s.outer *= shape[i];
  s.length = shape[axis];
  for (std::size_t i = axis + 1; i < shape.size(); ++i) s.inner *= shape[i];
  return s;
}

}  // namespace

Tensor sum(const Tensor& a) {
  detail::require_defined(a, "sum");
  Tensor out = make_tensor({}, a.precision());
  visit_precision(a.precision(), [&]<class T>() {
    auto x = a.data<T>();
    out_data<T>(out)[0] = kernels::table<T>().sum(x.size(), x.data());
    record_op(out, {a}, [](GradContext& ctx) {
      auto ga = ctx.in_grad<T>(0);
      const T g = ctx.out_grad<T>()[0];
      for (auto& v : ga) v += g;
    });
  });
  return out;
}

Tensor mean(const Tensor& a) {
  detail::require_defined(a, "mean");
  return mul(sum(a), 1.0 / static_cast<double>(a.numel()));
}

Tensor mean_rows(const Tensor& a) {
  detail::require_defined(a, "mean_rows");
  detail::require_rank(a, 2, "mean_rows");
  const std::size_t n = a.dim(0), d = a.dim(1);
  Tensor out = make_tensor({1, d}, a.precision());
  visit_precision(a.precision(), [&]<class T>() {
    auto x = a.data<T>();
    auto o = out_data<T>(out);
    const T inv = T(1) / static_cast<T>(n);
    for (std::size_t i = 0; i < n; ++i) kernels::table<T>().axpy(d, T(1), x.data() + i * d, o.data());
    for (auto& v : o) v *= inv;
    record_op(out, {a}, [n, d, inv](GradContext& ctx) {
      auto ga = ctx.in_grad<T>(0);
      auto g = ctx.out_grad<T>();
      for (std::size_t i = 0; i < n; ++i) kernels::table<T>().axpy(d, inv, g.data(), ga.data() + i * d);
    });
  });
  return out;
}

Tensor softmax(const Tensor& a, std::size_t axis) {
  detail::require_defined(a, "softmax");
  const AxisSplit s = split_axis(a.shape(), axis, "softmax");
  Tensor out = make_tensor(a.shape(), a.precision());
  visit_precision(a.precision(), [&]<class T>() {
    auto x = a.data<T>();
    auto y = out_data<T>(out);
    for (std::size_t o = 0; o < s.outer; ++o) {
      for (std::size_t in = 0; in < s.inner; ++in) {
        const std::size_t base = o * s.length * s.inner + in;
        T mx = -std::numeric_limits<T>::infinity();
        for (std::size_t k = 0; k < s.length; ++k) mx = std::max(mx, x[base + k * s.inner]);
        T total = 0;
        for (std::size_t k = 0; k < s.length; ++k) {
          const T e = std::exp(x[base + k * s.inner] - mx);
          y[base + k * s.inner] = e;
          total += e;
        }
        const T inv = T(1) / total;
        for (std::size_t k = 0; k < s.length; ++k) y[base + k * s.inner] *= inv;
      }
    }
    record_op(out, {a}, [s, out_impl = out.impl()](GradContext& ctx) {
      auto ga = ctx.in_grad<T>(0);
      auto g = ctx.out_grad<T>();
      const auto& y = out_impl->data.get<T>();
      for (std::size_t o = 0; o < s.outer; ++o) {
        for (std::size_t in = 0; in < s.inner; ++in) {
          const std::size_t base = o * s.length * s.inner + in;
          T dot = 0;
          for (std::size_t k = 0; k < s.length; ++k) {
            dot += g[base + k * s.inner] * y[base + k * s.inner];
          }
          for (std::size_t k = 0; k < s.length; ++k) {
            const std::size_t i = base + k * s.inner;
            ga[i] += y[i] * (g[i] - dot);
          }
        }
      }
    });
  });
  return out;
}

Tensor log_softmax(const Tensor& a, std::size_t axis) {
  detail::require_defined(a, "log_softmax");
  const AxisSplit s = split_axis(a.shape(), axis, "log_softmax");
  Tensor out = make_tensor(a.shape(), a.precision());
  visit_precision(a.precision(), [&]<class T>() {
    auto x = a.data<T>();
    auto y = out_data<T>(out);
    for (std::size_t o = 0; o < s.outer; ++o) {
      for (std::size_t in = 0; in < s.inner; ++in) {
        const std::size_t base = o * s.length * s.inner + in;
        T mx = -std::numeric_limits<T>::infinity();
        for (std::size_t k = 0; k < s.length; ++k) mx = std::max(mx, x[base + k * s.inner]);
        T total = 0;
        for (std::size_t k = 0; k < s.length; ++k) total += std::exp(x[base + k * s.inner] - mx);
        const T lse = mx + std::log(total);
        for (std::size_t k = 0; k < s.length; ++k) {
          y[base + k * s.inner] = x[base + k * s.inner] - lse;
        }
      }
    }
    record_op(out, {a}, [s, out_impl = out.impl()](GradContext& ctx) {
      auto ga = ctx.in_grad<T>(0);
      auto g = ctx.out_grad<T>();
      const auto& y = out_impl->data.get<T>();
      for (std::size_t o = 0; o < s.outer; ++o) {
        for (std::size_t in = 0; in < s.inner; ++in) {
          const std::size_t base = o * s.length * s.inner + in;
          T gsum = 0;
          for (std::size_t k = 0; k < s.length; ++k) gsum += g[base + k * s.inner];
          for (std::size_t k = 0; k < s.length; ++k) {
            const std::size_t i = base + k * s.inner;
            ga[i] += g[i] - std::exp(y[i]) * gsum;
          }
        }
      }
    });
  });
  return out;
}

Tensor cross_entropy_rows(const Tensor& logits, const std::vector<int>& targets) {
  detail::require_defined(logits, "cross_entropy_rows");
  detail::require_rank(logits, 2, "cross_entropy_rows");
  const std::size_t n = logits.dim(0), k = logits.dim(1);
  if (targets.size() != n) {
    throw DimensionError("cross_entropy_rows: " + std::to_string(targets.size()) +
                         " targets for " + std::to_string(n) + " rows");
  }
  for (int t : targets) {
    if (t < 0 || static_cast<std::size_t>(t) >= k) {
      throw std::out_of_range("cross_entropy_rows: target " + std::to_string(t) + " out of range");
    }
  }
  Tensor out = make_tensor({n}, logits.precision());
  visit_precision(logits.precision(), [&]<class T>() {
    auto x = logits.data<T>();
    auto o = out_data<T>(out);
    auto probs = std::make_shared<std::vector<T>>(n * k);
    for (std::size_t i = 0; i < n; ++i) {
      const T* row = x.data() + i * k;
      const T mx = kernels::table<T>().max(k, row);
      T total = 0;
      for (std::size_t j = 0; j < k; ++j) {
        const T e = std::exp(row[j] - mx);
        (*probs)[i * k + j] = e;
        total += e;
      }
      for (std::size_t j = 0; j < k; ++j) (*probs)[i * k + j] /= total;
      o[i] = -(row[targets[i]] - mx - std::log(total));
    }
    record_op(out, {logits}, [probs, targets, n, k](GradContext& ctx) {
      auto ga = ctx.in_grad<T>(0);
      auto g = ctx.out_grad<T>();
      for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t j = 0; j < k; ++j) ga[i * k + j] += g[i] * (*probs)[i * k + j];
        ga[i * k + targets[i]] -= g[i];
      }
    });
  });
  return out;
}

Tensor layer_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta, double eps) {
  detail::require_defined(x, "layer_norm");
  detail::require_rank(x, 2, "layer_norm");
  const std::size_t n = x.dim(0), d = x.dim(1);
  if (gamma.shape() != Shape{d} || beta.shape() != Shape{d}) {
    throw DimensionError("layer_norm: affine parameters must be [" + std::to_string(d) +
                         "], got " + shape_str(gamma.shape()) + " and " + shape_str(beta.shape()));
  }
  detail::require_same_precision(x, gamma, "layer_norm");
  detail::require_same_precision(x, beta, "layer_norm");
  Tensor out = make_tensor(x.shape(), x.precision());
  visit_precision(x.precision(), [&]<class T>() {
    auto in = x.data<T>();
    auto gm = gamma.data<T>();
    auto bt = beta.data<T>();
    auto o = out_data<T>(out);
    auto xhat = std::make_shared<std::vector<T>>(n * d);
    auto inv_std = std::make_shared<std::vector<T>>(n);
    for (std::size_t i = 0; i < n; ++i) {
      const T* row = in.data() + i * d;
      T mu = 0;
      for (std::size_t j = 0; j < d; ++j) mu += row[j];
      mu /= static_cast<T>(d);
      T var = 0;
      for (std::size_t j = 0; j < d; ++j) var += (row[j] - mu) * (row[j] - mu);
      var /= static_cast<T>(d);
      const T is = T(1) / std::sqrt(var + static_cast<T>(eps));
      (*inv_std)[i] = is;
      for (std::size_t j = 0; j < d; ++j) {
        const T h = (row[j] - mu) * is;
        (*xhat)[i * d + j] = h;
        o[i * d + j] = gm[j] * h + bt[j];
      }
    }
    record_op(out, {x, gamma, beta}, [gamma, xhat, inv_std, n, d](GradContext& ctx) {
      auto g = ctx.out_grad<T>();
      auto gm = gamma.data<T>();
      auto gx = ctx.in_grad<T>(0);
      auto gg = ctx.in_grad<T>(1);
      auto gb = ctx.in_grad<T>(2);
      std::vector<T> dh(d);
      for (std::size_t i = 0; i < n; ++i) {
        const T* h = xhat->data() + i * d;
        const T* gr = g.data() + i * d;
        if (!gg.empty()) {
          for (std::size_t j = 0; j < d; ++j) gg[j] += gr[j] * h[j];
        }
        if (!gb.empty()) {
          for (std::size_t j = 0; j < d; ++j) gb[j] += gr[j];
        }
        if (!gx.empty()) {
          T mean_dh = 0, mean_dh_h = 0;
          for (std::size_t j = 0; j < d; ++j) {
            dh[j] = gr[j] * gm[j];
            mean_dh += dh[j];
            mean_dh_h += dh[j] * h[j];
          }
          mean_dh /= static_cast<T>(d);
          mean_dh_h /= static_cast<T>(d);
          const T is = (*inv_std)[i];
          for (std::size_t j = 0; j < d; ++j) {
            gx[i * d + j] += is * (dh[j] - mean_dh - h[j] * mean_dh_h);
          }
        }
      }
    });
  });
  return out;
}

Tensor add_bias(const Tensor& x, const Tensor& bias) {
  detail::require_defined(x, "add_bias");
  detail::require_rank(x, 2, "add_bias");
  const std::size_t n = x.dim(0), d = x.dim(1);
  if (bias.shape() != Shape{d}) {
    throw DimensionError("add_bias: bias " + shape_str(bias.shape()) + " does not match rows of " +
                         shape_str(x.shape()));
  }
  detail::require_same_precision(x, bias, "add_bias");
  Tensor out = make_tensor(x.shape(), x.precision());
  visit_precision(x.precision(), [&]<class T>() {
    auto in = x.data<T>();
    auto b = bias.data<T>();
    auto o = out_data<T>(out);
    const auto& kt = kernels::table<T>();
    for (std::size_t i = 0; i < n; ++i) kt.add(d, in.data() + i * d, b.data(), o.data() + i * d);
    record_op(out, {x, bias}, [n, d](GradContext& ctx) {
      auto g = ctx.out_grad<T>();
      const auto& kt = kernels::table<T>();
      if (auto gx = ctx.in_grad<T>(0); !gx.empty()) kt.axpy(n * d, T(1), g.data(), gx.data());
      if (auto gb = ctx.in_grad<T>(1); !gb.empty()) {
        for (std::size_t i = 0; i < n; ++i) kt.axpy(d, T(1), g.data() + i * d, gb.data());
      }
    });
  });
  return out;
}

}  // namespace domprompt
