#include "ops_common.hpp"

namespace domprompt {

using detail::out_data;

namespace {

struct ConvGeom {
  std::size_t c, h, w, o, k, stride, pad, oh, ow;
};

// cols[(ci * k + ky) * k + kx][oy * ow + ox]
template <class T>
void im2col(const T* x, const ConvGeom& g, T* cols) {
  const std::size_t npix = g.oh * g.ow;
  for (std::size_t ci = 0; ci < g.c; ++ci) {
    for (std::size_t ky = 0; ky < g.k; ++ky) {
      for (std::size_t kx = 0; kx < g.k; ++kx) {
        T* row = cols + ((ci * g.k + ky) * g.k + kx) * npix;
        for (std::size_t oy = 0; oy < g.oh; ++oy) {
          const long iy = static_cast<long>(oy * g.stride + ky) - static_cast<long>(g.pad);
          for (std::size_t ox = 0; ox < g.ow; ++ox) {
            const long ix = static_cast<long>(ox * g.stride + kx) - static_cast<long>(g.pad);
            const bool inside = iy >= 0 && ix >= 0 && iy < static_cast<long>(g.h) &&
                                ix < static_cast<long>(g.w);
            row[oy * g.ow + ox] = inside ? x[(ci * g.h + iy) * g.w + ix] : T(0);
          }
        }
      }
    }
  }
}

template <class T>
void col2im_add(const T* cols, const ConvGeom& g, T* dx) {
  const std::size_t npix = g.oh * g.ow;
  for (std::size_t ci = 0; ci < g.c; ++ci) {
    for (std::size_t ky = 0; ky < g.k; ++ky) {
      for (std::size_t kx = 0; kx < g.k; ++kx) {
        const T* row = cols + ((ci * g.k + ky) * g.k + kx) * npix;
        for (std::size_t oy = 0; oy < g.oh; ++oy) {
          const long iy = static_cast<long>(oy * g.stride + ky) - static_cast<long>(g.pad);
          if (iy < 0 || iy >= static_cast<long>(g.h)) continue;
          for (std::size_t ox = 0; ox < g.ow; ++ox) {
            const long ix = static_cast<long>(ox * g.stride + kx) - static_cast<long>(g.pad);
            if (ix < 0 || ix >= static_cast<long>(g.w)) continue;
            dx[(ci * g.h + iy) * g.w + ix] += row[oy * g.ow + ox];
          }
        }
      }
    }
  }
}

}  // namespace

Tensor conv2d(const Tensor& x, const Tensor& weight, const Tensor& bias, std::size_t stride,
              std::size_t padding) {
  detail::require_defined(x, "conv2d");
  detail::require_defined(weight, "conv2d");
  detail::require_rank(x, 3, "conv2d");
  detail::require_rank(weight, 4, "conv2d");
  detail::require_same_precision(x, weight, "conv2d");
  if (stride == 0) throw std::invalid_argument("conv2d: stride must be positive");
  const std::size_t k = weight.dim(2);
  if (weight.dim(3) != k) throw DimensionError("conv2d: kernel must be square");
  if (weight.dim(1) != x.dim(0)) {
    throw DimensionError("conv2d: weight " + shape_str(weight.shape()) + " expects " +
                         std::to_string(weight.dim(1)) + " input channels, input is " +
                         shape_str(x.shape()));
  }
  const bool has_bias = bias.defined();
  if (has_bias) {
    detail::require_same_precision(x, bias, "conv2d");
    if (bias.shape() != Shape{weight.dim(0)}) throw DimensionError("conv2d: bias shape mismatch");
  }
  ConvGeom g{x.dim(0), x.dim(1), x.dim(2), weight.dim(0), k, stride, padding, 0, 0};
  if (g.h + 2 * padding < k || g.w + 2 * padding < k) {
    throw DimensionError("conv2d: kernel larger than padded input");
  }
  g.oh = (g.h + 2 * padding - k) / stride + 1;
  g.ow = (g.w + 2 * padding - k) / stride + 1;
  const std::size_t npix = g.oh * g.ow;
  const std::size_t ck = g.c * k * k;
  Tensor out = make_tensor({g.o, g.oh, g.ow}, x.precision());
  visit_precision(x.precision(), [&]<class T>() {
    const auto& kt = kernels::table<T>();
    auto cols = std::make_shared<std::vector<T>>(ck * npix);
    im2col(x.data<T>().data(), g, cols->data());
    auto o = out_data<T>(out);
    kt.gemm(g.o, npix, ck, weight.data<T>().data(), cols->data(), o.data(), false);
    if (has_bias) {
      auto b = bias.data<T>();
      for (std::size_t oc = 0; oc < g.o; ++oc) {
        for (std::size_t p = 0; p < npix; ++p) o[oc * npix + p] += b[oc];
      }
    }
    std::vector<Tensor> inputs{x, weight};
    if (has_bias) inputs.push_back(bias);
    record_op(out, std::span<const Tensor>(inputs), [g, cols, weight, npix, ck, has_bias](GradContext& ctx) {
      const auto& kt = kernels::table<T>();
      auto gy = ctx.out_grad<T>();
      if (auto gw = ctx.in_grad<T>(1); !gw.empty()) {
        std::vector<T> cols_t(npix * ck);
        detail::transpose_into(cols->data(), ck, npix, cols_t.data());
        kt.gemm(g.o, ck, npix, gy.data(), cols_t.data(), gw.data(), true);
      }
      if (auto gx = ctx.in_grad<T>(0); !gx.empty()) {
        std::vector<T> w_t(ck * g.o);
        detail::transpose_into(weight.data<T>().data(), g.o, ck, w_t.data());
        std::vector<T> dcols(ck * npix);
        kt.gemm(ck, npix, g.o, w_t.data(), gy.data(), dcols.data(), false);
        col2im_add(dcols.data(), g, gx.data());
      }
      if (has_bias) {
        if (auto gb = ctx.in_grad<T>(2); !gb.empty()) {
          for (std::size_t oc = 0; oc < g.o; ++oc) gb[oc] += kt.sum(npix, gy.data() + oc * npix);
        }
      }
    });
  });
  return out;
}

Tensor avg_pool2(const Tensor& x) {
  detail::require_defined(x, "avg_pool2");
  detail::require_rank(x, 3, "avg_pool2");
  const std::size_t c = x.dim(0), h = x.dim(1), w = x.dim(2);
  if (h % 2 || w % 2) throw DimensionError("avg_pool2: odd spatial size " + shape_str(x.shape()));
  const std::size_t oh = h / 2, ow = w / 2;
  Tensor out = make_tensor({c, oh, ow}, x.precision());
  visit_precision(x.precision(), [&]<class T>() {
    auto in = x.data<T>();
    auto o = out_data<T>(out);
    for (std::size_t ci = 0; ci < c; ++ci) {
      for (std::size_t y = 0; y < oh; ++y) {
        for (std::size_t xx = 0; xx < ow; ++xx) {
          const T* p = in.data() + (ci * h + 2 * y) * w + 2 * xx;
          o[(ci * oh + y) * ow + xx] = T(0.25) * (p[0] + p[1] + p[w] + p[w + 1]);
        }
      }
    }
    record_op(out, {x}, [c, h, w, oh, ow](GradContext& ctx) {
      auto gx = ctx.in_grad<T>(0);
      auto g = ctx.out_grad<T>();
      for (std::size_t ci = 0; ci < c; ++ci) {
        for (std::size_t y = 0; y < oh; ++y) {
          for (std::size_t xx = 0; xx < ow; ++xx) {
            const T v = T(0.25) * g[(ci * oh + y) * ow + xx];
            T* p = gx.data() + (ci * h + 2 * y) * w + 2 * xx;
            p[0] += v;
            p[1] += v;
            p[w] += v;
            p[w + 1] += v;
          }
        }
      }
    });
  });
  return out;
}

Tensor upsample2(const Tensor& x) {
  detail::require_defined(x, "upsample2");
  detail::require_rank(x, 3, "upsample2");
  const std::size_t c = x.dim(0), h = x.dim(1), w = x.dim(2);
  const std::size_t oh = 2 * h, ow = 2 * w;
  Tensor out = make_tensor({c, oh, ow}, x.precision());
  visit_precision(x.precision(), [&]<class T>() {
    auto in = x.data<T>();
    auto o = out_data<T>(out);
    for (std::size_t ci = 0; ci < c; ++ci) {
      for (std::size_t y = 0; y < oh; ++y) {
        for (std::size_t xx = 0; xx < ow; ++xx) {
          o[(ci * oh + y) * ow + xx] = in[(ci * h + y / 2) * w + xx / 2];
        }
      }
    }
    record_op(out, {x}, [c, h, w, oh, ow](GradContext& ctx) {
      auto gx = ctx.in_grad<T>(0);
      auto g = ctx.out_grad<T>();
      for (std::size_t ci = 0; ci < c; ++ci) {
        for (std::size_t y = 0; y < oh; ++y) {
          for (std::size_t xx = 0; xx < ow; ++xx) {
            gx[(ci * h + y / 2) * w + xx / 2] += g[(ci * oh + y) * ow + xx];
          }
        }
      }
    });
  });
  return out;
}

}  // namespace domprompt
