#include "domprompt/box.hpp"

#include <algorithm>

#include "domprompt/ops.hpp"

namespace domprompt {

Box Box::from_corners(double x0, double y0, double x1, double y1, int label) {
  return {(x0 + x1) / 2, (y0 + y1) / 2, x1 - x0, y1 - y0, label};
}

std::array<double, 4> Box::corners() const {
  return {cx - w / 2, cy - h / 2, cx + w / 2, cy + h / 2};
}

Box Box::clipped() const {
  auto [x0, y0, x1, y1] = corners();
  x0 = std::clamp(x0, 0.0, 1.0);
  y0 = std::clamp(y0, 0.0, 1.0);
  x1 = std::clamp(x1, 0.0, 1.0);
  y1 = std::clamp(y1, 0.0, 1.0);
  Box b = from_corners(x0, y0, x1, y1, label);
  if (b.w < kBoxEps) {
    b.w = kBoxEps;
    b.cx = std::clamp(b.cx, kBoxEps / 2, 1.0 - kBoxEps / 2);
  }
  if (b.h < kBoxEps) {
    b.h = kBoxEps;
    b.cy = std::clamp(b.cy, kBoxEps / 2, 1.0 - kBoxEps / 2);
  }
  return b;
}

bool Box::valid() const {
  const auto [x0, y0, x1, y1] = corners();
  constexpr double tol = 1e-9;
  return w > 0 && h > 0 && x0 >= -tol && y0 >= -tol && x1 <= 1 + tol && y1 <= 1 + tol;
}

namespace {

struct Overlap {
  double inter, uni, enclosure;
};

Overlap overlap(const Box& a, const Box& b) {
  const auto [ax0, ay0, ax1, ay1] = a.corners();
  const auto [bx0, by0, bx1, by1] = b.corners();
  const double iw = std::max(0.0, std::min(ax1, bx1) - std::max(ax0, bx0));
  const double ih = std::max(0.0, std::min(ay1, by1) - std::max(ay0, by0));
  const double inter = iw * ih;
  const double uni = std::max(a.w, kBoxEps) * std::max(a.h, kBoxEps) +
                     std::max(b.w, kBoxEps) * std::max(b.h, kBoxEps) - inter;
  const double enclosure = (std::max(ax1, bx1) - std::min(ax0, bx0)) *
                           (std::max(ay1, by1) - std::min(ay0, by0));
  return {inter, uni, std::max(enclosure, uni)};
}

}  // namespace

double iou(const Box& a, const Box& b) {
  const Overlap o = overlap(a, b);
  return o.uni > 0 ? o.inter / o.uni : 0.0;
}

double giou(const Box& a, const Box& b) {
  const Overlap o = overlap(a, b);
  return o.inter / o.uni - (o.enclosure - o.uni) / o.enclosure;
}

Tensor giou_rows(const Tensor& a, const Tensor& b) {
  if (a.rank() != 2 || a.dim(1) != 4 || a.shape() != b.shape()) {
    throw DimensionError("giou_rows: expected two [N x 4], got " + shape_str(a.shape()) + " and " +
                         shape_str(b.shape()));
  }
  auto col = [](const Tensor& t, std::size_t c) { return slice(t, 1, c, 1); };
  auto edges = [&](const Tensor& t) {
    Tensor w = clamp_min(col(t, 2), kBoxEps), h = clamp_min(col(t, 3), kBoxEps);
    Tensor hw = mul(w, 0.5), hh = mul(h, 0.5);
    return std::array<Tensor, 6>{sub(col(t, 0), hw), sub(col(t, 1), hh), add(col(t, 0), hw),
                                 add(col(t, 1), hh), w, h};
  };
  const auto [ax0, ay0, ax1, ay1, aw, ah] = edges(a);
  const auto [bx0, by0, bx1, by1, bw, bh] = edges(b);
  Tensor iw = clamp_min(sub(minimum(ax1, bx1), maximum(ax0, bx0)), 0.0);
  Tensor ih = clamp_min(sub(minimum(ay1, by1), maximum(ay0, by0)), 0.0);
  Tensor inter = mul(iw, ih);
  Tensor uni = sub(add(mul(aw, ah), mul(bw, bh)), inter);
  Tensor enc = mul(sub(maximum(ax1, bx1), minimum(ax0, bx0)), sub(maximum(ay1, by1), minimum(ay0, by0)));
  return sub(div(inter, uni), div(sub(enc, uni), enc));
}

}  // namespace domprompt
