#pragma once

// Detection-set evaluation: greedy one-to-one matching, precision/recall/F1,
// all-points interpolated AP, mAP and (DIoU-)NMS.

#include <algorithm>
#include <map>
#include <numeric>
#include <set>
#include <span>
#include <string>
#include <vector>

#include "sensoryeval/boxgeom.hpp"
#include "sensoryeval/error.hpp"

namespace sensoryeval::detmetrics {

using boxgeom::BoundingBox;
using boxgeom::Detection;

struct GroundTruth {
  BoundingBox box;
  std::string category;
};

enum class MatchFlag { kTruePositive, kFalsePositive };

struct MatchReport {
  int tp = 0;
  int fp = 0;
  int fn = 0;
  std::vector<double> matched_ious;
  /// Indexed like the (confidence-filtered) input detections, not by rank.
  std::vector<MatchFlag> per_detection_flags;
  /// For each flagged detection, the ground truth it claimed or -1.
  std::vector<int> matched_gt;

  MatchReport& operator+=(const MatchReport& other) {
    tp += other.tp;
    fp += other.fp;
    fn += other.fn;
    matched_ious.insert(matched_ious.end(), other.matched_ious.begin(), other.matched_ious.end());
    per_detection_flags.insert(per_detection_flags.end(), other.per_detection_flags.begin(),
                               other.per_detection_flags.end());
    matched_gt.insert(matched_gt.end(), other.matched_gt.begin(), other.matched_gt.end());
    return *this;
  }
};

/// Descending confidence; equal confidences keep input order.
inline std::vector<std::size_t> confidence_order(std::span<const Detection> dets) {
  std::vector<std::size_t> order(dets.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    return dets[a].confidence > dets[b].confidence;
  });
  return order;
}

inline void check_threshold(double iou_thresh) {
  if (!(iou_thresh > 0.0 && iou_thresh <= 1.0)) {
    throw ValidationError("IoU threshold must be in (0, 1]");
  }
}

/// Greedy matching in descending confidence. A detection is a true positive
/// when its best-overlapping unmatched ground truth of the same category
/// reaches iou_thresh; ties go to the lower ground-truth index.
inline MatchReport match_detections(std::span<const Detection> dets,
                                    std::span<const GroundTruth> gts, double iou_thresh) {
  check_threshold(iou_thresh);
  for (const auto& d : dets) boxgeom::validate(d);
  for (const auto& g : gts) boxgeom::validate(g.box);

  MatchReport report;
  report.per_detection_flags.assign(dets.size(), MatchFlag::kFalsePositive);
  report.matched_gt.assign(dets.size(), -1);
  std::vector<bool> taken(gts.size(), false);
  for (std::size_t di : confidence_order(dets)) {
    int best = -1;
    double best_iou = -1.0;
    for (std::size_t gi = 0; gi < gts.size(); ++gi) {
      if (taken[gi] || gts[gi].category != dets[di].category) continue;
      const double o = boxgeom::iou(dets[di].box, gts[gi].box);
      if (o > best_iou) {
        best_iou = o;
        best = static_cast<int>(gi);
      }
    }
    if (best >= 0 && best_iou >= iou_thresh) {
      taken[static_cast<std::size_t>(best)] = true;
      report.per_detection_flags[di] = MatchFlag::kTruePositive;
      report.matched_gt[di] = best;
      report.matched_ious.push_back(best_iou);
      ++report.tp;
    } else {
      ++report.fp;
    }
  }
  report.fn = static_cast<int>(gts.size()) - report.tp;
  return report;
}

/// Drops detections below min_confidence before matching.
inline MatchReport match_detections(std::span<const Detection> dets,
                                    std::span<const GroundTruth> gts, double iou_thresh,
                                    double min_confidence) {
  std::vector<Detection> kept;
  for (const auto& d : dets) {
    if (d.confidence >= min_confidence) kept.push_back(d);
  }
  return match_detections(kept, gts, iou_thresh);
}

struct PrecisionRecall {
  double precision = 0.0;
  double recall = 0.0;
  double f1 = 0.0;
  /// Set when a denominator was zero and the affected value defaulted to 0.
  bool degenerate = false;
};

inline PrecisionRecall precision_recall_f1(int tp, int fp, int fn) {
  if (tp < 0 || fp < 0 || fn < 0) throw ValidationError("counts must be non-negative");
  PrecisionRecall out;
  if (tp + fp > 0) {
    out.precision = static_cast<double>(tp) / (tp + fp);
  } else {
    out.degenerate = true;
  }
  if (tp + fn > 0) {
    out.recall = static_cast<double>(tp) / (tp + fn);
  } else {
    out.degenerate = true;
  }
  const double s = out.precision + out.recall;
  out.f1 = s > 0.0 ? 2.0 * out.precision * out.recall / s : 0.0;
  return out;
}

inline PrecisionRecall precision_recall_f1(const MatchReport& r) {
  return precision_recall_f1(r.tp, r.fp, r.fn);
}

/// Mean IoU over true positives; 0 when there are none.
inline double average_iou(const MatchReport& r) {
  if (r.matched_ious.empty()) return 0.0;
  return std::accumulate(r.matched_ious.begin(), r.matched_ious.end(), 0.0) /
         static_cast<double>(r.matched_ious.size());
}

/// One image's detections and ground truths.
struct ImageEval {
  std::vector<Detection> dets;
  std::vector<GroundTruth> gts;
};

/// Area under the all-points monotone-interpolated precision-recall curve.
/// Detections from all images are swept together in descending confidence;
/// each is matched only against its own image. No ground truths gives 0.
inline double average_precision(std::span<const ImageEval> images, double iou_thresh) {
  check_threshold(iou_thresh);
  struct Ranked {
    double confidence;
    std::size_t image;
    std::size_t det;
    bool tp;
  };
  std::vector<Ranked> ranked;
  std::size_t total_gts = 0;
  for (std::size_t i = 0; i < images.size(); ++i) {
    const auto report = match_detections(images[i].dets, images[i].gts, iou_thresh);
    total_gts += images[i].gts.size();
    for (std::size_t d = 0; d < images[i].dets.size(); ++d) {
      ranked.push_back({images[i].dets[d].confidence, i, d,
                        report.per_detection_flags[d] == MatchFlag::kTruePositive});
    }
  }
  if (total_gts == 0) return 0.0;
  std::stable_sort(ranked.begin(), ranked.end(), [](const Ranked& a, const Ranked& b) {
    if (a.confidence != b.confidence) return a.confidence > b.confidence;
    if (a.image != b.image) return a.image < b.image;
    return a.det < b.det;
  });

  std::vector<double> precision;
  std::vector<double> recall;
  int tp = 0;
  int fp = 0;
  for (const auto& r : ranked) {
    r.tp ? ++tp : ++fp;
    precision.push_back(static_cast<double>(tp) / (tp + fp));
    recall.push_back(static_cast<double>(tp) / static_cast<double>(total_gts));
  }
  for (std::size_t i = precision.size(); i-- > 1;) {
    precision[i - 1] = std::max(precision[i - 1], precision[i]);
  }
  double ap = 0.0;
  double prev_recall = 0.0;
  for (std::size_t i = 0; i < precision.size(); ++i) {
    ap += (recall[i] - prev_recall) * precision[i];
    prev_recall = recall[i];
  }
  return ap;
}

inline double average_precision(std::span<const Detection> dets, std::span<const GroundTruth> gts,
                                double iou_thresh) {
  ImageEval single{{dets.begin(), dets.end()}, {gts.begin(), gts.end()}};
  return average_precision(std::span<const ImageEval>(&single, 1), iou_thresh);
}

struct MapResult {
  double map = 0.0;
  std::map<std::string, double> per_category;
  /// Categories that only appear in detections; excluded from the mean.
  std::vector<std::string> excluded;
};

/// Unweighted mean of per-category AP over categories with ground truths.
inline MapResult map_at(std::span<const ImageEval> images, double iou_thresh) {
  std::set<std::string> gt_categories;
  std::set<std::string> det_categories;
  for (const auto& im : images) {
    for (const auto& g : im.gts) gt_categories.insert(g.category);
    for (const auto& d : im.dets) det_categories.insert(d.category);
  }
  MapResult out;
  for (const auto& cat : gt_categories) {
    std::vector<ImageEval> filtered;
    filtered.reserve(images.size());
    for (const auto& im : images) {
      ImageEval f;
      for (const auto& d : im.dets) {
        if (d.category == cat) f.dets.push_back(d);
      }
      for (const auto& g : im.gts) {
        if (g.category == cat) f.gts.push_back(g);
      }
      filtered.push_back(std::move(f));
    }
    out.per_category[cat] = average_precision(filtered, iou_thresh);
  }
  for (const auto& cat : det_categories) {
    if (!gt_categories.contains(cat)) out.excluded.push_back(cat);
  }
  if (!out.per_category.empty()) {
    double sum = 0.0;
    for (const auto& [cat, ap] : out.per_category) sum += ap;
    out.map = sum / static_cast<double>(out.per_category.size());
  }
  return out;
}

enum class NmsVariant { kStandard, kDiou };

/// Greedy per-category suppression. Output is in descending confidence.
inline std::vector<Detection> nms(std::span<const Detection> dets, double iou_thresh,
                                  NmsVariant variant = NmsVariant::kStandard) {
  if (!(iou_thresh > 0.0 && iou_thresh < 1.0)) {
    throw ValidationError("NMS threshold must be in (0, 1)");
  }
  for (const auto& d : dets) boxgeom::validate(d);
  const auto order = confidence_order(dets);
  std::vector<bool> suppressed(dets.size(), false);
  std::vector<Detection> kept;
  for (std::size_t oi = 0; oi < order.size(); ++oi) {
    const std::size_t i = order[oi];
    if (suppressed[i]) continue;
    kept.push_back(dets[i]);
    for (std::size_t oj = oi + 1; oj < order.size(); ++oj) {
      const std::size_t j = order[oj];
      if (suppressed[j] || dets[j].category != dets[i].category) continue;
      const double overlap = variant == NmsVariant::kDiou ? boxgeom::diou(dets[i].box, dets[j].box)
                                                          : boxgeom::iou(dets[i].box, dets[j].box);
      if (overlap >= iou_thresh) suppressed[j] = true;
    }
  }
  return kept;
}

}  // namespace sensoryeval::detmetrics
