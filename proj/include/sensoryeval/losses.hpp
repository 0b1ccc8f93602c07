#pragma once

#include <cmath>
#include <span>
#include <vector>

#include "sensoryeval/boxgeom.hpp"
#include "sensoryeval/error.hpp"

namespace sensoryeval::losses {

struct ResidualRow {
  double y = 0.0;
  double y_hat = 0.0;
  double residual = 0.0;  // y - y_hat
  double abs_residual = 0.0;
  double sq_residual = 0.0;
};

struct ResidualTable {
  std::vector<ResidualRow> rows;
  double sum_abs = 0.0;
  double sum_sq = 0.0;
  double mae = 0.0;
  double mse = 0.0;
  double rmse = 0.0;
};

inline ResidualTable regression_errors(std::span<const double> y, std::span<const double> y_hat) {
  if (y.size() != y_hat.size()) throw ValidationError("y and y_hat lengths differ");
  if (y.empty()) throw ValidationError("regression_errors needs at least one observation");
  ResidualTable t;
  t.rows.reserve(y.size());
  for (std::size_t i = 0; i < y.size(); ++i) {
    ResidualRow r;
    r.y = y[i];
    r.y_hat = y_hat[i];
    r.residual = y[i] - y_hat[i];
    r.abs_residual = std::abs(r.residual);
    r.sq_residual = r.residual * r.residual;
    t.sum_abs += r.abs_residual;
    t.sum_sq += r.sq_residual;
    t.rows.push_back(r);
  }
  const double n = static_cast<double>(y.size());
  t.mae = t.sum_abs / n;
  t.mse = t.sum_sq / n;
  t.rmse = std::sqrt(t.mse);
  return t;
}

/// 1 - CIoU; zero only for identical boxes.
inline double ciou_loss(const boxgeom::BoundingBox& pred, const boxgeom::BoundingBox& gt) {
  return 1.0 - boxgeom::ciou_terms(pred, gt).ciou;
}

struct YoloLossWeights {
  double coord = 5.0;
  double wh = 5.0;
  double conf = 5.0;
  double cls = 5.0;
};

/// One box slot of one grid cell.
struct YoloBox {
  double x = 0.0;
  double y = 0.0;
  double w = 0.0;
  double h = 0.0;
  double confidence = 0.0;
  std::vector<double> class_probs;
};

/// S*S cells times B boxes per cell, stored cell-major.
struct YoloGrid {
  int cells = 0;
  int boxes_per_cell = 0;
  std::vector<YoloBox> slots;
  /// Responsibility indicator per slot; only meaningful on targets.
  std::vector<bool> responsible;

  const YoloBox& at(int cell, int box) const {
    return slots[static_cast<std::size_t>(cell) * boxes_per_cell + box];
  }
};

struct YoloLossTerms {
  double coord = 0.0;
  double wh = 0.0;
  double conf = 0.0;
  double cls = 0.0;
  double total = 0.0;
};

/// Sum-of-squares detector loss gated by the responsibility indicator of the
/// targets. Only responsible slots contribute; there is no no-object term.
inline YoloLossTerms yolo_loss_terms(const YoloGrid& preds, const YoloGrid& targets,
                                     const YoloLossWeights& weights = {}) {
  if (preds.cells != targets.cells || preds.boxes_per_cell != targets.boxes_per_cell) {
    throw ValidationError("prediction and target grid shapes differ");
  }
  const std::size_t n = static_cast<std::size_t>(preds.cells) * preds.boxes_per_cell;
  if (preds.slots.size() != n || targets.slots.size() != n || targets.responsible.size() != n) {
    throw ValidationError("grid storage does not match its declared shape");
  }
  for (double w : {weights.coord, weights.wh, weights.conf, weights.cls}) {
    if (!(w >= 0.0)) throw ValidationError("loss weights must be non-negative");
  }
  YoloLossTerms t;
  for (std::size_t i = 0; i < n; ++i) {
    if (!targets.responsible[i]) continue;
    const YoloBox& p = preds.slots[i];
    const YoloBox& g = targets.slots[i];
    if (p.w < 0.0 || p.h < 0.0 || g.w < 0.0 || g.h < 0.0) {
      throw ValidationError("box widths and heights must be non-negative");
    }
    if (p.class_probs.size() != g.class_probs.size()) {
      throw ValidationError("class probability vectors differ in length");
    }
    t.coord += (g.x - p.x) * (g.x - p.x) + (g.y - p.y) * (g.y - p.y);
    const double dw = std::sqrt(g.w) - std::sqrt(p.w);
    const double dh = std::sqrt(g.h) - std::sqrt(p.h);
    t.wh += dw * dw + dh * dh;
    t.conf += (g.confidence - p.confidence) * (g.confidence - p.confidence);
    for (std::size_t c = 0; c < p.class_probs.size(); ++c) {
      const double d = g.class_probs[c] - p.class_probs[c];
      t.cls += d * d;
    }
  }
  t.coord *= weights.coord;
  t.wh *= weights.wh;
  t.conf *= weights.conf;
  t.cls *= weights.cls;
  t.total = t.coord + t.wh + t.conf + t.cls;
  return t;
}

inline double yolo_composite_loss(const YoloGrid& preds, const YoloGrid& targets,
                                  const YoloLossWeights& weights = {}) {
  return yolo_loss_terms(preds, targets, weights).total;
}

}  // namespace sensoryeval::losses
