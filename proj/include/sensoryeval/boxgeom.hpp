#pragma once

// Bounding-box overlap measures plus crop and anchor helpers.

#include <algorithm>
#include <cmath>
#include <numbers>
#include <string>
#include <vector>

#include "sensoryeval/error.hpp"
#include "sensoryeval/image.hpp"

namespace sensoryeval::boxgeom {

/// Center-format box. Pixel or normalized units; callers keep them consistent.
struct BoundingBox {
  double bx = 0.0;
  double by = 0.0;
  double bw = 0.0;
  double bh = 0.0;

  friend bool operator==(const BoundingBox&, const BoundingBox&) = default;
};

struct Corners {
  double x1 = 0.0;
  double y1 = 0.0;
  double x2 = 0.0;
  double y2 = 0.0;
};

struct Detection {
  BoundingBox box;
  std::string category;
  double confidence = 0.0;
};

inline void validate(const BoundingBox& b) {
  if (!(b.bw > 0.0) || !(b.bh > 0.0) || !std::isfinite(b.bw) || !std::isfinite(b.bh) ||
      !std::isfinite(b.bx) || !std::isfinite(b.by)) {
    throw ValidationError("bounding box needs finite center and positive width/height");
  }
}

inline void validate(const Detection& d) {
  validate(d.box);
  if (d.category.empty()) throw ValidationError("detection category must be non-empty");
  if (!(d.confidence >= 0.0 && d.confidence <= 1.0)) {
    throw ValidationError("detection confidence must be in [0, 1]");
  }
}

inline Corners to_corners(const BoundingBox& b) {
  return {b.bx - b.bw / 2.0, b.by - b.bh / 2.0, b.bx + b.bw / 2.0, b.by + b.bh / 2.0};
}

inline BoundingBox from_corners(const Corners& c) {
  return {(c.x1 + c.x2) / 2.0, (c.y1 + c.y2) / 2.0, c.x2 - c.x1, c.y2 - c.y1};
}

inline BoundingBox from_corners(double x1, double y1, double x2, double y2) {
  return from_corners(Corners{x1, y1, x2, y2});
}

/// Normalized [0,1] box to pixel units of a width x height image.
inline BoundingBox to_pixels(const BoundingBox& b, int width, int height) {
  return {b.bx * width, b.by * height, b.bw * width, b.bh * height};
}

inline BoundingBox to_normalized(const BoundingBox& b, int width, int height) {
  return {b.bx / width, b.by / height, b.bw / width, b.bh / height};
}

/// Clamps corners into the unit square. A box entirely outside collapses to
/// zero width or height, which validate() rejects. Boxes already inside
/// are returned unchanged.
inline BoundingBox clamp_normalized(const BoundingBox& b) {
  Corners c = to_corners(b);
  if (c.x1 >= 0.0 && c.y1 >= 0.0 && c.x2 <= 1.0 && c.y2 <= 1.0) return b;
  c.x1 = std::clamp(c.x1, 0.0, 1.0);
  c.y1 = std::clamp(c.y1, 0.0, 1.0);
  c.x2 = std::clamp(c.x2, 0.0, 1.0);
  c.y2 = std::clamp(c.y2, 0.0, 1.0);
  return from_corners(c);
}

inline double area(const BoundingBox& b) { return b.bw * b.bh; }

inline double intersection_area(const BoundingBox& a, const BoundingBox& b) {
  const Corners ca = to_corners(a);
  const Corners cb = to_corners(b);
  const double w = std::min(ca.x2, cb.x2) - std::max(ca.x1, cb.x1);
  const double h = std::min(ca.y2, cb.y2) - std::max(ca.y1, cb.y1);
  return (w > 0.0 && h > 0.0) ? w * h : 0.0;
}

inline double iou(const BoundingBox& a, const BoundingBox& b) {
  validate(a);
  validate(b);
  const Corners ca = to_corners(a);
  const Corners cb = to_corners(b);
  const double inter = intersection_area(a, b);
  const double uni = (ca.x2 - ca.x1) * (ca.y2 - ca.y1) + (cb.x2 - cb.x1) * (cb.y2 - cb.y1) - inter;
  return std::clamp(inter / uni, 0.0, 1.0);
}

struct CiouTerms {
  double iou = 0.0;
  double diou = 0.0;
  double ciou = 0.0;
  double v = 0.0;      // aspect-ratio dissimilarity
  double alpha = 0.0;  // trade-off weight on v
  double rho2 = 0.0;   // squared center distance
  double c2 = 0.0;     // squared diagonal of the smallest enclosing box
};

inline CiouTerms ciou_terms(const BoundingBox& pred, const BoundingBox& gt) {
  CiouTerms t;
  t.iou = iou(pred, gt);
  const Corners cp = to_corners(pred);
  const Corners cg = to_corners(gt);
  const double ew = std::max(cp.x2, cg.x2) - std::min(cp.x1, cg.x1);
  const double eh = std::max(cp.y2, cg.y2) - std::min(cp.y1, cg.y1);
  t.c2 = ew * ew + eh * eh;
  const double dx = pred.bx - gt.bx;
  const double dy = pred.by - gt.by;
  t.rho2 = dx * dx + dy * dy;
  const double dtheta = std::atan(gt.bw / gt.bh) - std::atan(pred.bw / pred.bh);
  t.v = 4.0 / (std::numbers::pi * std::numbers::pi) * dtheta * dtheta;
  const double denom = (1.0 - t.iou) + t.v;
  // Coinciding boxes get alpha 0.
  t.alpha = denom > 0.0 ? t.v / denom : 0.0;
  t.diou = t.iou - t.rho2 / t.c2;
  t.ciou = t.diou - t.alpha * t.v;
  return t;
}

inline double diou(const BoundingBox& a, const BoundingBox& b) { return ciou_terms(a, b).diou; }

/// Pixel window [x0, x1) x [y0, y1) a pixel-unit box covers after clamping.
struct PixelWindow {
  int x0 = 0;
  int y0 = 0;
  int x1 = 0;
  int y1 = 0;

  int width() const { return x1 - x0; }
  int height() const { return y1 - y0; }
};

inline PixelWindow crop_window(const BoundingBox& box, int image_w, int image_h) {
  validate(box);
  const Corners c = to_corners(box);
  auto clamp_to = [](double v, int hi) {
    return static_cast<int>(std::clamp<long>(std::lround(v), 0L, static_cast<long>(hi)));
  };
  return {clamp_to(c.x1, image_w), clamp_to(c.y1, image_h), clamp_to(c.x2, image_w),
          clamp_to(c.y2, image_h)};
}

/// Copies the pixels covered by a pixel-unit box; the box is clamped to the image.
inline Image8 crop(const Image8& image, const BoundingBox& box) {
  if (image.empty()) throw ValidationError("cannot crop an empty image");
  const PixelWindow w = crop_window(box, image.width(), image.height());
  if (w.width() <= 0 || w.height() <= 0) throw ValidationError("empty crop");
  Image8 out(w.width(), w.height(), image.channels());
  for (int y = 0; y < w.height(); ++y) {
    for (int x = 0; x < w.width(); ++x) {
      for (int c = 0; c < image.channels(); ++c) out.at(x, y, c) = image.at(w.x0 + x, w.y0 + y, c);
    }
  }
  return out;
}

struct AnchorSpec {
  std::vector<double> scales;         // pixels
  std::vector<double> aspect_ratios;  // w / h
  int stride = 8;
};

/// Anchors are emitted row-major over grid cells, then scale, then ratio.
inline std::vector<BoundingBox> generate_anchors(const AnchorSpec& spec, int image_w, int image_h) {
  if (image_w <= 0 || image_h <= 0) throw ValidationError("image dimensions must be positive");
  if (spec.scales.empty() || spec.aspect_ratios.empty()) {
    throw ValidationError("anchor scales and ratios must be non-empty");
  }
  if (spec.stride <= 0 || spec.stride > image_w || spec.stride > image_h) {
    throw ValidationError("anchor stride must be in (0, image side]");
  }
  for (double s : spec.scales) {
    if (!(s > 0.0)) throw ValidationError("anchor scales must be positive");
  }
  for (double r : spec.aspect_ratios) {
    if (!(r > 0.0)) throw ValidationError("anchor aspect ratios must be positive");
  }
  const int cols = image_w / spec.stride;
  const int rows = image_h / spec.stride;
  std::vector<BoundingBox> anchors;
  anchors.reserve(static_cast<std::size_t>(cols) * rows * spec.scales.size() *
                  spec.aspect_ratios.size());
  for (int j = 0; j < rows; ++j) {
    for (int i = 0; i < cols; ++i) {
      const double cx = (i + 0.5) * spec.stride;
      const double cy = (j + 0.5) * spec.stride;
      for (double s : spec.scales) {
        for (double r : spec.aspect_ratios) {
          const double root = std::sqrt(r);
          anchors.push_back({cx, cy, s * root, s / root});
        }
      }
    }
  }
  return anchors;
}

enum class AnchorLabel { kPositive, kNegative, kIgnore };

inline std::vector<AnchorLabel> label_anchors(const std::vector<BoundingBox>& anchors,
                                              const std::vector<BoundingBox>& gts,
                                              double pos_thresh, double neg_thresh) {
  if (!(0.0 <= neg_thresh && neg_thresh <= pos_thresh && pos_thresh <= 1.0)) {
    throw ValidationError("anchor thresholds need 0 <= neg <= pos <= 1");
  }
  std::vector<AnchorLabel> labels;
  labels.reserve(anchors.size());
  for (const auto& a : anchors) {
    double best = 0.0;
    for (const auto& g : gts) best = std::max(best, iou(a, g));
    if (best > pos_thresh) {
      labels.push_back(AnchorLabel::kPositive);
    } else if (best < neg_thresh) {
      labels.push_back(AnchorLabel::kNegative);
    } else {
      labels.push_back(AnchorLabel::kIgnore);
    }
  }
  return labels;
}

}  // namespace sensoryeval::boxgeom
