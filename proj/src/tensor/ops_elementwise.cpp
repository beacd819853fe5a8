#include <cmath>

#include "ops_common.hpp"

namespace domprompt {
namespace {

using detail::out_data;

// y = f(x); dx += g * df(x, y)
template <class F, class DF>
Tensor unary(const Tensor& a, const char* name, F f, DF df) {
  detail::require_defined(a, name);
  Tensor out = make_tensor(a.shape(), a.precision());
  visit_precision(a.precision(), [&]<class T>() {
    auto x = a.data<T>();
    auto y = out_data<T>(out);
    for (std::size_t i = 0; i < x.size(); ++i) y[i] = static_cast<T>(f(x[i]));
    record_op(out, {a}, [a, out_impl = out.impl(), df](GradContext& ctx) {
      auto ga = ctx.in_grad<T>(0);
      auto g = ctx.out_grad<T>();
      auto x = a.data<T>();
      const auto& y = out_impl->data.get<T>();
      for (std::size_t i = 0; i < ga.size(); ++i) ga[i] += g[i] * static_cast<T>(df(x[i], y[i]));
    });
  });
  return out;
}

enum class BinOp { add, sub, mul, div };

Tensor binary(const Tensor& a, const Tensor& b, BinOp op, const char* name) {
  detail::require_defined(a, name);
  detail::require_defined(b, name);
  detail::require_same_precision(a, b, name);
  const bool a_scalar = a.rank() == 0 && b.rank() != 0;
  const bool b_scalar = b.rank() == 0 && a.rank() != 0;
  if (!a_scalar && !b_scalar && a.shape() != b.shape()) {
    throw DimensionError(std::string(name) + ": shape mismatch " + shape_str(a.shape()) + " vs " +
                         shape_str(b.shape()));
  }
  const Shape& shape = a_scalar ? b.shape() : a.shape();
  const std::size_t n = shape_numel(shape);
  Tensor out = make_tensor(shape, a.precision());
  visit_precision(a.precision(), [&]<class T>() {
    auto x = a.data<T>();
    auto y = b.data<T>();
    auto o = out_data<T>(out);
    const auto& kt = kernels::table<T>();
    auto xa = [&](std::size_t i) { return a_scalar ? x[0] : x[i]; };
    auto yb = [&](std::size_t i) { return b_scalar ? y[0] : y[i]; };
    if (!a_scalar && !b_scalar && op != BinOp::div) {
      if (op == BinOp::add) kt.add(n, x.data(), y.data(), o.data());
      if (op == BinOp::sub) kt.sub(n, x.data(), y.data(), o.data());
      if (op == BinOp::mul) kt.mul(n, x.data(), y.data(), o.data());
    } else {
      for (std::size_t i = 0; i < n; ++i) {
        switch (op) {
          case BinOp::add: o[i] = xa(i) + yb(i); break;
          case BinOp::sub: o[i] = xa(i) - yb(i); break;
          case BinOp::mul: o[i] = xa(i) * yb(i); break;
          case BinOp::div: o[i] = xa(i) / yb(i); break;
        }
      }
    }
    record_op(out, {a, b}, [a, b, op, a_scalar, b_scalar, n](GradContext& ctx) {
      auto g = ctx.out_grad<T>();
      auto x = a.data<T>();
      auto y = b.data<T>();
      auto xa = [&](std::size_t i) { return a_scalar ? x[0] : x[i]; };
      auto yb = [&](std::size_t i) { return b_scalar ? y[0] : y[i]; };
      auto accumulate = [&](std::span<T> target, bool is_scalar, auto&& term) {
        if (target.empty()) return;
        if (is_scalar) {
          T s = 0;
          for (std::size_t i = 0; i < n; ++i) s += term(i);
          target[0] += s;
        } else {
          for (std::size_t i = 0; i < n; ++i) target[i] += term(i);
        }
      };
      auto ga = ctx.in_grad<T>(0);
      auto gb = ctx.in_grad<T>(1);
      switch (op) {
        case BinOp::add:
          accumulate(ga, a_scalar, [&](std::size_t i) { return g[i]; });
          accumulate(gb, b_scalar, [&](std::size_t i) { return g[i]; });
          break;
        case BinOp::sub:
          accumulate(ga, a_scalar, [&](std::size_t i) { return g[i]; });
          accumulate(gb, b_scalar, [&](std::size_t i) { return -g[i]; });
          break;
        case BinOp::mul:
          accumulate(ga, a_scalar, [&](std::size_t i) { return g[i] * yb(i); });
          accumulate(gb, b_scalar, [&](std::size_t i) { return g[i] * xa(i); });
          break;
        case BinOp::div:
          accumulate(ga, a_scalar, [&](std::size_t i) { return g[i] / yb(i); });
          accumulate(gb, b_scalar,
                     [&](std::size_t i) { return -g[i] * xa(i) / (yb(i) * yb(i)); });
          break;
      }
    });
  });
  return out;
}

constexpr double kGeluC = 0.7978845608028654;  // sqrt(2 / pi)
constexpr double kGeluA = 0.044715;

}  // namespace

Tensor add(const Tensor& a, const Tensor& b) { return binary(a, b, BinOp::add, "add"); }
Tensor sub(const Tensor& a, const Tensor& b) { return binary(a, b, BinOp::sub, "sub"); }
Tensor mul(const Tensor& a, const Tensor& b) { return binary(a, b, BinOp::mul, "mul"); }
Tensor div(const Tensor& a, const Tensor& b) { return binary(a, b, BinOp::div, "div"); }

Tensor add(const Tensor& a, double b) {
  return unary(a, "add", [b](auto x) { return x + b; }, [](auto, auto) { return 1.0; });
}

Tensor mul(const Tensor& a, double b) {
  return unary(a, "mul", [b](auto x) { return x * b; }, [b](auto, auto) { return b; });
}

Tensor neg(const Tensor& a) { return mul(a, -1.0); }

Tensor exp(const Tensor& a) {
  return unary(a, "exp", [](auto x) { return std::exp(x); }, [](auto, auto y) { return y; });
}

Tensor log(const Tensor& a) {
  detail::require_defined(a, "log");
  for (double v : a.values()) {
    if (!(v > 0.0)) throw DomainError("log: non-positive input " + std::to_string(v));
  }
  return unary(a, "log", [](auto x) { return std::log(x); },
               [](auto x, auto) { return 1.0 / static_cast<double>(x); });
}

Tensor gelu(const Tensor& a) {
  return unary(
      a, "gelu",
      [](auto x) {
        const double v = x;
        return 0.5 * v * (1.0 + std::tanh(kGeluC * (v + kGeluA * v * v * v)));
      },
      [](auto x, auto) {
        const double v = x;
        const double t = std::tanh(kGeluC * (v + kGeluA * v * v * v));
        return 0.5 * (1.0 + t) + 0.5 * v * (1.0 - t * t) * kGeluC * (1.0 + 3.0 * kGeluA * v * v);
      });
}

Tensor relu(const Tensor& a) {
  return unary(a, "relu", [](auto x) { return x > 0 ? x : decltype(x)(0); },
               [](auto x, auto) { return x > 0 ? 1.0 : 0.0; });
}

Tensor sigmoid(const Tensor& a) {
  return unary(a, "sigmoid", [](auto x) { return 1.0 / (1.0 + std::exp(-static_cast<double>(x))); },
               [](auto, auto y) { return static_cast<double>(y) * (1.0 - y); });
}

Tensor abs(const Tensor& a) {
  return unary(a, "abs", [](auto x) { return std::abs(x); },
               [](auto x, auto) { return x > 0 ? 1.0 : (x < 0 ? -1.0 : 0.0); });
}

Tensor clamp_min(const Tensor& a, double lo) {
  return unary(a, "clamp_min", [lo](auto x) { return x >= lo ? static_cast<double>(x) : lo; },
               [lo](auto x, auto) { return x >= lo ? 1.0 : 0.0; });
}

Tensor smooth_l1(const Tensor& a, double beta) {
  if (beta <= 0) throw std::invalid_argument("smooth_l1: beta must be positive");
  return unary(
      a, "smooth_l1",
      [beta](auto x) {
        const double v = std::abs(static_cast<double>(x));
        return v < beta ? 0.5 * v * v / beta : v - 0.5 * beta;
      },
      [beta](auto x, auto) {
        const double v = x;
        if (std::abs(v) < beta) return v / beta;
        return v > 0 ? 1.0 : -1.0;
      });
}

namespace {

Tensor select(const Tensor& a, const Tensor& b, bool take_min, const char* name) {
  detail::require_defined(a, name);
  detail::require_defined(b, name);
  detail::require_same_shape(a, b, name);
  detail::require_same_precision(a, b, name);
  Tensor out = make_tensor(a.shape(), a.precision());
  visit_precision(a.precision(), [&]<class T>() {
    auto x = a.data<T>();
    auto y = b.data<T>();
    auto o = out_data<T>(out);
    auto pick_a = std::make_shared<std::vector<bool>>(x.size());
    for (std::size_t i = 0; i < x.size(); ++i) {
      const bool first = take_min ? x[i] <= y[i] : x[i] >= y[i];
      (*pick_a)[i] = first;
      o[i] = first ? x[i] : y[i];
    }
    record_op(out, {a, b}, [pick_a](GradContext& ctx) {
      auto g = ctx.out_grad<T>();
      auto ga = ctx.in_grad<T>(0);
      auto gb = ctx.in_grad<T>(1);
      for (std::size_t i = 0; i < g.size(); ++i) {
        if ((*pick_a)[i]) {
          if (!ga.empty()) ga[i] += g[i];
        } else if (!gb.empty()) {
          gb[i] += g[i];
        }
      }
    });
  });
  return out;
}

}  // namespace

Tensor minimum(const Tensor& a, const Tensor& b) { return select(a, b, true, "minimum"); }
Tensor maximum(const Tensor& a, const Tensor& b) { return select(a, b, false, "maximum"); }

}  // namespace domprompt
