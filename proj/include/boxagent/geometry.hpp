#pragma once

// Box representations and overlap metrics. Coordinates are normalized to the
// unit square; anchor boxes are stored as logits and mapped through sigmoid.

#include <array>

#include "boxagent/tensor.hpp"

namespace boxagent::geometry {

constexpr double kInverseSigmoidEps = 1e-3;
// Lower bound on w and h before a box is condensed into agent points.
constexpr double kMinBoxSide = 1e-4;

struct BoxCCWH {
  double cx = 0.5;
  double cy = 0.5;
  double w = 0.0;
  double h = 0.0;

  bool valid() const;
  std::array<double, 4> as_array() const { return {cx, cy, w, h}; }
};

struct BoxXYXY {
  double x0 = 0.0;
  double y0 = 0.0;
  double x1 = 0.0;
  double y1 = 0.0;

  bool valid() const { return x0 <= x1 && y0 <= y1; }
  double area() const { return (x1 - x0) * (y1 - y0); }
};

BoxXYXY to_corners(const BoxCCWH& b);
BoxCCWH from_corners(const BoxXYXY& b);

double iou(const BoxXYXY& a, const BoxXYXY& b);
// Two zero-area boxes give 0.
double giou(const BoxXYXY& a, const BoxXYXY& b);

double inverse_sigmoid(double p, double eps = kInverseSigmoidEps);
double sigmoid(double x);

double box_l1(const BoxCCWH& a, const BoxCCWH& b);

// ---- differentiable forms over [R,4] tensors of (cx, cy, w, h) ----------------

numerics::Tensor inverse_sigmoid(const numerics::Tensor& p, double eps = kInverseSigmoidEps);

// Row-paired GIoU, shape [R].
numerics::Tensor giou(const numerics::Tensor& a_ccwh, const numerics::Tensor& b_ccwh);

// Row-paired L1 distance, shape [R].
numerics::Tensor box_l1(const numerics::Tensor& a_ccwh, const numerics::Tensor& b_ccwh);

}  // namespace boxagent::geometry
