#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <stdexcept>
#include <string>

namespace cfinet {

// Axis-aligned box, corner convention with continuous coordinates.
// x2/y2 are exclusive edges, so area == (x2-x1)*(y2-y1) exactly.
struct Box {
  double x1 = 0.0, y1 = 0.0, x2 = 0.0, y2 = 0.0;

  Box() = default;
  Box(double x1_, double y1_, double x2_, double y2_) : x1(x1_), y1(y1_), x2(x2_), y2(y2_) {}

  double width() const { return x2 - x1; }
  double height() const { return y2 - y1; }
  double area() const { return width() * height(); }
  double cx() const { return 0.5 * (x1 + x2); }
  double cy() const { return 0.5 * (y1 + y2); }

  bool valid() const {
    return std::isfinite(x1) && std::isfinite(y1) && std::isfinite(x2) && std::isfinite(y2) &&
           x2 >= x1 && y2 >= y1;
  }
  bool degenerate() const { return area() <= 0.0; }

  bool operator==(const Box& o) const {
    return x1 == o.x1 && y1 == o.y1 && x2 == o.x2 && y2 == o.y2;
  }
};

struct LabeledBox {
  Box box;
  int label = 0;  // class id in [1, N]
};

// Center-offset / log-size regression parameterization.
struct BoxDelta {
  double dx = 0.0, dy = 0.0, dw = 0.0, dh = 0.0;
};

enum class AreaSubset { eS, rS, gS, Normal };

inline const char* subset_name(AreaSubset s) {
  switch (s) {
    case AreaSubset::eS: return "eS";
    case AreaSubset::rS: return "rS";
    case AreaSubset::gS: return "gS";
    default: return "Normal";
  }
}

constexpr int kNumSubsets = 4;

inline Box intersect(const Box& a, const Box& b) {
  Box r(std::max(a.x1, b.x1), std::max(a.y1, b.y1), std::min(a.x2, b.x2), std::min(a.y2, b.y2));
  if (r.x2 < r.x1) r.x2 = r.x1;
  if (r.y2 < r.y1) r.y2 = r.y1;
  return r;
}

inline double intersection_area(const Box& a, const Box& b) {
  double ox = std::min(a.x2, b.x2) - std::max(a.x1, b.x1);
  double oy = std::min(a.y2, b.y2) - std::max(a.y1, b.y1);
  if (ox <= 0.0 || oy <= 0.0) return 0.0;
  return ox * oy;
}

// Intersection-over-union. Returns 0 when the union is empty (both boxes
// degenerate), so iou == 1 only for coinciding positive-area boxes.
inline double iou(const Box& a, const Box& b) {
  double inter = intersection_area(a, b);
  double uni = a.area() + b.area() - inter;
  if (uni <= 0.0) return 0.0;
  return inter / uni;
}

// Intersection-over-area-of-a. Used for ignore-region overlap tests.
inline double intersection_over_first(const Box& a, const Box& b) {
  double area = a.area();
  if (area <= 0.0) return 0.0;
  return intersection_area(a, b) / area;
}

// Linear IoU loss, 1 - iou, in [0, 1].
inline double iou_loss(const Box& pred, const Box& target) {
  if (target.area() <= 0.0)
    throw std::invalid_argument("iou_loss: degenerate regression target");
  double v = 1.0 - iou(pred, target);
  return std::clamp(v, 0.0, 1.0);
}

// Analytic gradient of iou_loss w.r.t. (px1, py1, px2, py2).
// Subgradient convention at ties follows the max/min selectors below.
inline std::array<double, 4> iou_loss_grad(const Box& pred, const Box& target) {
  if (target.area() <= 0.0)
    throw std::invalid_argument("iou_loss_grad: degenerate regression target");
  std::array<double, 4> g{0.0, 0.0, 0.0, 0.0};
  double ox = std::min(pred.x2, target.x2) - std::max(pred.x1, target.x1);
  double oy = std::min(pred.y2, target.y2) - std::max(pred.y1, target.y1);
  if (ox <= 0.0 || oy <= 0.0) return g;  // disjoint: flat region
  double inter = ox * oy;
  double uni = pred.area() + target.area() - inter;
  if (uni <= 0.0) return g;

  // dI/d(coord): only the selected edge carries derivative.
  double dI_px1 = (pred.x1 >= target.x1) ? -oy : 0.0;
  double dI_px2 = (pred.x2 <= target.x2) ? oy : 0.0;
  double dI_py1 = (pred.y1 >= target.y1) ? -ox : 0.0;
  double dI_py2 = (pred.y2 <= target.y2) ? ox : 0.0;

  double w = pred.width(), h = pred.height();
  double dA_px1 = -h, dA_px2 = h, dA_py1 = -w, dA_py2 = w;

  double inv_u2 = 1.0 / (uni * uni);
  // d(iou) = (dI*U - I*(dA - dI)) / U^2 ; loss = 1 - iou.
  g[0] = -((dI_px1 * uni - inter * (dA_px1 - dI_px1)) * inv_u2);
  g[1] = -((dI_py1 * uni - inter * (dA_py1 - dI_py1)) * inv_u2);
  g[2] = -((dI_px2 * uni - inter * (dA_px2 - dI_px2)) * inv_u2);
  g[3] = -((dI_py2 * uni - inter * (dA_py2 - dI_py2)) * inv_u2);
  return g;
}

// Standard delta encoding: center offsets normalized by anchor size,
// log-scale size ratios. No target normalization constants.
inline BoxDelta encode(const Box& target, const Box& anchor) {
  double aw = anchor.width(), ah = anchor.height();
  if (aw <= 0.0 || ah <= 0.0) throw std::invalid_argument("encode: zero-size anchor");
  double tw = target.width(), th = target.height();
  if (tw <= 0.0 || th <= 0.0) throw std::invalid_argument("encode: zero-size target");
  BoxDelta d;
  d.dx = (target.cx() - anchor.cx()) / aw;
  d.dy = (target.cy() - anchor.cy()) / ah;
  d.dw = std::log(tw / aw);
  d.dh = std::log(th / ah);
  return d;
}

// Largest |dw|/|dh| applied on the training decode path; keeps exp() bounded
// for unconstrained network outputs. The plain decode below stays exact so it
// inverts encode for any valid pair.
constexpr double kDeltaWHClip = 4.135166556742356;  // log(1000/16)

inline Box decode(const BoxDelta& d, const Box& anchor) {
  double aw = anchor.width(), ah = anchor.height();
  if (aw <= 0.0 || ah <= 0.0) throw std::invalid_argument("decode: zero-size anchor");
  double cx = anchor.cx() + d.dx * aw;
  double cy = anchor.cy() + d.dy * ah;
  double w = aw * std::exp(d.dw);
  double h = ah * std::exp(d.dh);
  return Box(cx - 0.5 * w, cy - 0.5 * h, cx + 0.5 * w, cy + 0.5 * h);
}

inline Box decode_clipped_delta(const BoxDelta& d, const Box& anchor) {
  BoxDelta c{d.dx, d.dy, std::clamp(d.dw, -kDeltaWHClip, kDeltaWHClip),
             std::clamp(d.dh, -kDeltaWHClip, kDeltaWHClip)};
  return decode(c, anchor);
}

inline Box clip_box(const Box& b, double image_w, double image_h) {
  Box r(std::clamp(b.x1, 0.0, image_w), std::clamp(b.y1, 0.0, image_h),
        std::clamp(b.x2, 0.0, image_w), std::clamp(b.y2, 0.0, image_h));
  if (r.x2 < r.x1) r.x2 = r.x1;
  if (r.y2 < r.y1) r.y2 = r.y1;
  return r;
}

inline Box decode(const BoxDelta& d, const Box& anchor, double image_w, double image_h) {
  return clip_box(decode(d, anchor), image_w, image_h);
}

// SODA area partition: (0,144] -> eS, (144,400] -> rS, (400,1024] -> gS,
// (1024,inf) -> Normal. Boundaries are inclusive on the right.
inline AreaSubset classify_area(const Box& b) {
  double a = b.area();
  if (a <= 0.0) throw std::invalid_argument("classify_area: zero-area box");
  if (a <= 144.0) return AreaSubset::eS;
  if (a <= 400.0) return AreaSubset::rS;
  if (a <= 1024.0) return AreaSubset::gS;
  return AreaSubset::Normal;
}

inline AreaSubset classify_area_value(double a) {
  if (a <= 0.0) throw std::invalid_argument("classify_area: non-positive area");
  if (a <= 144.0) return AreaSubset::eS;
  if (a <= 400.0) return AreaSubset::rS;
  if (a <= 1024.0) return AreaSubset::gS;
  return AreaSubset::Normal;
}

}  // namespace cfinet
