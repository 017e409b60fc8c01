#pragma once

#include <cmath>
#include <limits>
#include <optional>
#include <stdexcept>
#include <vector>

#include "cfinet/geometry.hpp"

namespace cfinet {

// One square prior per feature cell on P2..P5, side = anchor_scale * stride.
struct AnchorLevel {
  int level_id = 2;        // P{level_id}
  double stride = 4.0;
  int height = 0, width = 0;  // feature cells, row-major anchor layout
  std::vector<Box> anchors;
};

struct AnchorGrid {
  std::vector<AnchorLevel> levels;

  int total() const {
    int n = 0;
    for (const auto& l : levels) n += static_cast<int>(l.anchors.size());
    return n;
  }
  std::vector<Box> flatten() const {
    std::vector<Box> out;
    out.reserve(static_cast<size_t>(total()));
    for (const auto& l : levels) out.insert(out.end(), l.anchors.begin(), l.anchors.end());
    return out;
  }
};

constexpr double kPyramidStrides[4] = {4.0, 8.0, 16.0, 32.0};

inline AnchorGrid build_grid(double image_w, double image_h, double anchor_scale = 4.0) {
  if (image_w <= 0 || image_h <= 0) throw std::invalid_argument("build_grid: empty image");
  AnchorGrid grid;
  for (int li = 0; li < 4; ++li) {
    AnchorLevel lvl;
    lvl.level_id = li + 2;
    lvl.stride = kPyramidStrides[li];
    lvl.width = static_cast<int>(std::ceil(image_w / lvl.stride));
    lvl.height = static_cast<int>(std::ceil(image_h / lvl.stride));
    double side = anchor_scale * lvl.stride;
    lvl.anchors.reserve(static_cast<size_t>(lvl.width) * lvl.height);
    for (int j = 0; j < lvl.height; ++j) {
      for (int i = 0; i < lvl.width; ++i) {
        double cx = lvl.stride * (i + 0.5);
        double cy = lvl.stride * (j + 0.5);
        lvl.anchors.push_back(Box(cx - side / 2, cy - side / 2, cx + side / 2, cy + side / 2));
      }
    }
    grid.levels.push_back(std::move(lvl));
  }
  return grid;
}

struct DynamicThresholdParams {
  double gamma = 0.15;
  double floor = 0.25;
  double base = 0.20;
  double ref_size = 12.0;
};

// Area-adaptive positive-IoU threshold, floored so tiny objects are not
// swamped by arbitrarily low-quality priors.
inline double dynamic_threshold(double w, double h, const DynamicThresholdParams& p = {}) {
  if (w <= 0.0 || h <= 0.0)
    throw std::invalid_argument("dynamic_threshold: non-positive box dimensions");
  return std::max(p.floor, p.base + p.gamma * std::log(std::sqrt(w * h) / p.ref_size));
}

struct Assignment {
  static constexpr int kNegative = -1;
  static constexpr int kIgnore = -2;

  std::vector<int> labels;                 // per anchor: gt index, or kNegative/kIgnore
  std::vector<double> assigned_iou;        // iou to assigned gt (0 for non-positive)
  std::vector<double> max_iou;             // per anchor: max iou over all gts
  std::vector<std::vector<int>> gt_anchors;  // per gt: matched anchor indices
  int unmatched_gt_count = 0;

  bool is_positive(int i) const { return labels[static_cast<size_t>(i)] >= 0; }
  int positive_count() const {
    int n = 0;
    for (int l : labels) n += (l >= 0);
    return n;
  }
};

namespace detail {

inline void apply_ignore_regions(const std::vector<Box>& anchors, const std::vector<Box>& ignores,
                                 double overlap_thr, Assignment& as) {
  if (ignores.empty()) return;
  for (size_t i = 0; i < anchors.size(); ++i) {
    if (as.labels[i] >= 0) continue;  // positives keep their supervision
    for (const Box& ig : ignores) {
      if (intersection_over_first(anchors[i], ig) > overlap_thr) {
        as.labels[i] = Assignment::kIgnore;
        break;
      }
    }
  }
}

}  // namespace detail

// Threshold-mining assignment over a flat anchor list. Every anchor whose
// IoU with a ground truth strictly exceeds that ground truth's threshold
// becomes positive; contested anchors go to the max-IoU ground truth with
// ties broken toward the smaller box, then the lower index.
inline Assignment mine_anchor_boxes(const std::vector<Box>& anchors,
                                    const std::vector<LabeledBox>& gts,
                                    const std::vector<Box>& ignores,
                                    const DynamicThresholdParams& params = {},
                                    std::optional<double> fixed_threshold = std::nullopt,
                                    double ignore_overlap_thr = 0.5) {
  size_t na = anchors.size(), ng = gts.size();
  Assignment as;
  as.labels.assign(na, Assignment::kNegative);
  as.assigned_iou.assign(na, 0.0);
  as.max_iou.assign(na, 0.0);
  as.gt_anchors.assign(ng, {});

  std::vector<double> thr(ng);
  for (size_t g = 0; g < ng; ++g) {
    const Box& b = gts[g].box;
    thr[g] = fixed_threshold ? *fixed_threshold : dynamic_threshold(b.width(), b.height(), params);
  }

  for (size_t a = 0; a < na; ++a) {
    int best_gt = -1;
    double best_iou = 0.0;
    for (size_t g = 0; g < ng; ++g) {
      double v = iou(anchors[a], gts[g].box);
      as.max_iou[a] = std::max(as.max_iou[a], v);
      if (v <= thr[g]) continue;
      bool better = v > best_iou;
      if (!better && v == best_iou && best_gt >= 0) {
        double cur_area = gts[static_cast<size_t>(best_gt)].box.area();
        double new_area = gts[g].box.area();
        better = new_area < cur_area;  // tie: smaller gt wins; equal area: keep lower index
      }
      if (best_gt < 0 || better) {
        best_gt = static_cast<int>(g);
        best_iou = v;
      }
    }
    if (best_gt >= 0) {
      as.labels[a] = best_gt;
      as.assigned_iou[a] = best_iou;
      as.gt_anchors[static_cast<size_t>(best_gt)].push_back(static_cast<int>(a));
    }
  }
  detail::apply_ignore_regions(anchors, ignores, ignore_overlap_thr, as);
  for (size_t g = 0; g < ng; ++g)
    if (as.gt_anchors[g].empty()) ++as.unmatched_gt_count;
  return as;
}

inline Assignment mine_anchors(const AnchorGrid& grid, const std::vector<LabeledBox>& gts,
                               const std::vector<Box>& ignores,
                               const DynamicThresholdParams& params = {},
                               std::optional<double> fixed_threshold = std::nullopt,
                               double ignore_overlap_thr = 0.5) {
  return mine_anchor_boxes(grid.flatten(), gts, ignores, params, fixed_threshold,
                           ignore_overlap_thr);
}

// Classical max-IoU assignment with low-quality-match rescue: anchors at or
// above pos_thr are positive, below neg_thr negative, in between ignored.
// Each ground truth additionally claims its single best-overlapping anchor.
inline Assignment assign_fixed_boxes(const std::vector<Box>& anchors,
                                     const std::vector<LabeledBox>& gts, double pos_thr,
                                     double neg_thr, const std::vector<Box>& ignores = {},
                                     bool rescue = true, double ignore_overlap_thr = 0.5) {
  size_t na = anchors.size(), ng = gts.size();
  Assignment as;
  as.labels.assign(na, Assignment::kNegative);
  as.assigned_iou.assign(na, 0.0);
  as.max_iou.assign(na, 0.0);
  as.gt_anchors.assign(ng, {});

  std::vector<int> argmax(na, -1);
  for (size_t a = 0; a < na; ++a) {
    for (size_t g = 0; g < ng; ++g) {
      double v = iou(anchors[a], gts[g].box);
      if (v > as.max_iou[a]) {
        as.max_iou[a] = v;
        argmax[a] = static_cast<int>(g);
      }
    }
    if (argmax[a] >= 0 && as.max_iou[a] >= pos_thr) {
      as.labels[a] = argmax[a];
      as.assigned_iou[a] = as.max_iou[a];
    } else if (as.max_iou[a] >= neg_thr) {
      as.labels[a] = Assignment::kIgnore;
    }
  }

  if (rescue) {
    for (size_t g = 0; g < ng; ++g) {
      int best_a = -1;
      double best = 0.0;
      for (size_t a = 0; a < na; ++a) {
        double v = iou(anchors[a], gts[g].box);
        if (v > best) {
          best = v;
          best_a = static_cast<int>(a);
        }
      }
      if (best_a >= 0 && (as.labels[static_cast<size_t>(best_a)] < 0 ||
                          as.assigned_iou[static_cast<size_t>(best_a)] < best)) {
        as.labels[static_cast<size_t>(best_a)] = static_cast<int>(g);
        as.assigned_iou[static_cast<size_t>(best_a)] = best;
      }
    }
  }

  for (size_t a = 0; a < na; ++a)
    if (as.labels[a] >= 0) as.gt_anchors[static_cast<size_t>(as.labels[a])].push_back(static_cast<int>(a));
  detail::apply_ignore_regions(anchors, ignores, ignore_overlap_thr, as);
  for (size_t g = 0; g < ng; ++g)
    if (as.gt_anchors[g].empty()) ++as.unmatched_gt_count;
  return as;
}

inline Assignment assign_fixed(const AnchorGrid& grid, const std::vector<LabeledBox>& gts,
                               double pos_thr, double neg_thr,
                               const std::vector<Box>& ignores = {}) {
  return assign_fixed_boxes(grid.flatten(), gts, pos_thr, neg_thr, ignores);
}

}  // namespace cfinet
