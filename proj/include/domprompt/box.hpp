#pragma once

#include <array>

#include "domprompt/tensor.hpp"

namespace domprompt {

inline constexpr double kBoxEps = 1e-6;

/// Axis-aligned box in normalised page coordinates (centre form).
struct Box {
  double cx = 0.5, cy = 0.5, w = kBoxEps, h = kBoxEps;
  int label = -1;

  static Box from_corners(double x0, double y0, double x1, double y1, int label = -1);
  std::array<double, 4> corners() const;  // x0, y0, x1, y1
  double area() const { return w * h; }
  /// Clips to the unit square and clamps w, h to at least kBoxEps.
  Box clipped() const;
  bool valid() const;

  friend bool operator==(const Box&, const Box&) = default;
};

double iou(const Box& a, const Box& b);
/// IoU - (enclosure - union) / enclosure, in [-1, 1].
double giou(const Box& a, const Box& b);

/// Differentiable GIoU of matching rows of two [N x 4] centre-form tensors;
/// returns [N x 1].
Tensor giou_rows(const Tensor& a, const Tensor& b);

}  // namespace domprompt
