#include "boxagent/geometry.hpp"

#include <algorithm>
#include <cmath>

#include "boxagent/ops.hpp"

namespace boxagent::geometry {

namespace nx = boxagent::numerics;
using nx::Tensor;

bool BoxCCWH::valid() const {
  auto unit = [](double v) { return v >= 0.0 && v <= 1.0; };
  return unit(cx) && unit(cy) && unit(w) && unit(h);
}

BoxXYXY to_corners(const BoxCCWH& b) {
  return {b.cx - b.w / 2, b.cy - b.h / 2, b.cx + b.w / 2, b.cy + b.h / 2};
}

BoxCCWH from_corners(const BoxXYXY& b) {
  return {(b.x0 + b.x1) / 2, (b.y0 + b.y1) / 2, b.x1 - b.x0, b.y1 - b.y0};
}

namespace {

struct Overlap {
  double inter;
  double uni;
  double hull;
};

Overlap overlap(const BoxXYXY& a, const BoxXYXY& b) {
  const double iw = std::max(0.0, std::min(a.x1, b.x1) - std::max(a.x0, b.x0));
  const double ih = std::max(0.0, std::min(a.y1, b.y1) - std::max(a.y0, b.y0));
  const double inter = iw * ih;
  const double uni = a.area() + b.area() - inter;
  const double hull = (std::max(a.x1, b.x1) - std::min(a.x0, b.x0)) * (std::max(a.y1, b.y1) - std::min(a.y0, b.y0));
  return {inter, uni, hull};
}

}  // namespace

double iou(const BoxXYXY& a, const BoxXYXY& b) {
  const Overlap o = overlap(a, b);
  return o.uni > 0 ? o.inter / o.uni : 0.0;
}

double giou(const BoxXYXY& a, const BoxXYXY& b) {
  if (a.area() <= 0 && b.area() <= 0) return 0.0;
  const Overlap o = overlap(a, b);
  const double i = o.uni > 0 ? o.inter / o.uni : 0.0;
  return o.hull > 0 ? i - (o.hull - o.uni) / o.hull : i;
}

double inverse_sigmoid(double p, double eps) {
  const double q = std::clamp(p, eps, 1.0 - eps);
  return std::log(q / (1.0 - q));
}

double sigmoid(double x) {
  if (x >= 0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

double box_l1(const BoxCCWH& a, const BoxCCWH& b) {
  return std::fabs(a.cx - b.cx) + std::fabs(a.cy - b.cy) + std::fabs(a.w - b.w) + std::fabs(a.h - b.h);
}

Tensor inverse_sigmoid(const Tensor& p, double eps) {
  const Tensor q = nx::clamp(p, eps, 1.0 - eps);
  return nx::log(nx::div(q, nx::add_scalar(nx::neg(q), 1.0)));
}

namespace {

void require_boxes(const char* op, const Tensor& a, const Tensor& b) {
  if (a.rank() != 2 || a.dim(1) != 4 || a.shape() != b.shape()) {
    throw nx::ShapeError(std::string(op) + ": expected matching [R,4] boxes, got " + nx::shape_str(a.shape()) +
                         " and " + nx::shape_str(b.shape()));
  }
}

struct Corners {
  Tensor x0, y0, x1, y1, w, h;
};

Corners corners_of(const Tensor& box) {
  const Tensor cx = nx::slice(box, 1, 0, 1);
  const Tensor cy = nx::slice(box, 1, 1, 1);
  const Tensor w = nx::slice(box, 1, 2, 1);
  const Tensor h = nx::slice(box, 1, 3, 1);
  const Tensor hw = nx::scale(w, 0.5);
  const Tensor hh = nx::scale(h, 0.5);
  return {cx - hw, cy - hh, cx + hw, cy + hh, w, h};
}

}  // namespace

Tensor giou(const Tensor& a_ccwh, const Tensor& b_ccwh) {
  require_boxes("giou", a_ccwh, b_ccwh);
  const std::size_t rows = a_ccwh.dim(0);
  const Corners a = corners_of(a_ccwh);
  const Corners b = corners_of(b_ccwh);
  const Tensor iw = nx::relu(nx::minimum(a.x1, b.x1) - nx::maximum(a.x0, b.x0));
  const Tensor ih = nx::relu(nx::minimum(a.y1, b.y1) - nx::maximum(a.y0, b.y0));
  const Tensor inter = iw * ih;
  const Tensor uni = a.w * a.h + b.w * b.h - inter;
  const Tensor tiny = Tensor::scalar(1e-12);
  const Tensor iou = nx::div(inter, nx::maximum(uni, tiny));
  const Tensor hull = (nx::maximum(a.x1, b.x1) - nx::minimum(a.x0, b.x0)) *
                      (nx::maximum(a.y1, b.y1) - nx::minimum(a.y0, b.y0));
  const Tensor g = iou - nx::div(hull - uni, nx::maximum(hull, tiny));
  return nx::reshape(g, {rows});
}

Tensor box_l1(const Tensor& a_ccwh, const Tensor& b_ccwh) {
  require_boxes("box_l1", a_ccwh, b_ccwh);
  return nx::sum_last(nx::abs(a_ccwh - b_ccwh));
}

}  // namespace boxagent::geometry
