#pragma once

// Column-stable text and CSV rendering for residual tables, detector
// metrics, training summaries, evaluation rows and pipeline results.

#include <fmt/format.h>

#include <algorithm>
#include <string>
#include <vector>

#include "sensoryeval/dataset.hpp"
#include "sensoryeval/detector.hpp"
#include "sensoryeval/hedonic.hpp"
#include "sensoryeval/losses.hpp"
#include "sensoryeval/model.hpp"
#include "sensoryeval/pipeline.hpp"

namespace sensoryeval::report {

enum class Format { kText, kCsv };

inline std::optional<Format> parse_format(std::string_view s) {
  if (s == "text") return Format::kText;
  if (s == "csv") return Format::kCsv;
  return std::nullopt;
}

/// Fixed decimals with trailing zeros (and a bare point) removed.
inline std::string trimmed(double v, int decimals = 2) {
  std::string s = fmt::format("{:.{}f}", v, decimals);
  if (s.find('.') != std::string::npos) {
    while (s.back() == '0') s.pop_back();
    if (s.back() == '.') s.pop_back();
  }
  if (s == "-0") s = "0";
  return s;
}

inline std::string fixed(double v, int decimals) { return fmt::format("{:.{}f}", v, decimals); }
inline std::string percent(double v) { return fmt::format("{:.2f}%", 100.0 * v); }

struct Table {
  std::vector<std::string> header;
  std::vector<std::vector<std::string>> rows;
};

/// Pipe-separated, each column padded to its widest cell; no trailing blanks.
inline std::string render_table(const Table& t, Format format) {
  std::string out;
  const std::size_t ncol = t.header.size();
  if (format == Format::kCsv) {
    auto line = [&](const std::vector<std::string>& cells) {
      for (std::size_t c = 0; c < cells.size(); ++c) {
        if (c) out += ',';
        out += dataset::csv::quote(cells[c]);
      }
      out += '\n';
    };
    line(t.header);
    for (const auto& r : t.rows) line(r);
    return out;
  }
  std::vector<std::size_t> width(ncol, 0);
  for (std::size_t c = 0; c < ncol; ++c) width[c] = t.header[c].size();
  for (const auto& r : t.rows) {
    for (std::size_t c = 0; c < ncol && c < r.size(); ++c) width[c] = std::max(width[c], r[c].size());
  }
  auto line = [&](const std::vector<std::string>& cells) {
    std::string l;
    for (std::size_t c = 0; c < ncol; ++c) {
      const std::string& cell = c < cells.size() ? cells[c] : std::string();
      if (c) l += " | ";
      l += cell;
      if (c + 1 < ncol) l.append(width[c] - cell.size(), ' ');
    }
    while (!l.empty() && l.back() == ' ') l.pop_back();
    out += l;
    out += '\n';
  };
  line(t.header);
  for (const auto& r : t.rows) line(r);
  return out;
}

// --- residual table ----------------------------------------------------------

inline std::string render(const losses::ResidualTable& t, Format format) {
  Table tab{{"Observation", "y", "y_hat", "y - y_hat", "|y - y_hat|", "(y - y_hat)^2"}, {}};
  for (std::size_t i = 0; i < t.rows.size(); ++i) {
    const auto& r = t.rows[i];
    tab.rows.push_back({std::to_string(i + 1), trimmed(r.y, 4), trimmed(r.y_hat, 4), trimmed(r.residual, 4),
                        trimmed(r.abs_residual, 4), trimmed(r.sq_residual, 4)});
  }
  if (t.rows.empty()) return render_table(tab, format);
  if (format == Format::kCsv) {
    tab.rows.push_back({"sum", "", "", "", trimmed(t.sum_abs, 4), trimmed(t.sum_sq, 4)});
    std::string out = render_table(tab, format);
    out += fmt::format("mae,{}\nmse,{}\nrmse,{}\n", trimmed(t.mae), trimmed(t.mse), trimmed(t.rmse));
    return out;
  }
  tab.rows.push_back({"Sum", "", "", "", trimmed(t.sum_abs, 4), trimmed(t.sum_sq, 4)});
  std::string out = render_table(tab, format);
  out += fmt::format("MAE : {}  MSE : {}  RMSE : {}\n", trimmed(t.mae), trimmed(t.mse), trimmed(t.rmse));
  return out;
}

// --- detector metrics ----------------------------------------------------------

inline Table detector_table(const std::vector<detector::DetectorReport>& reports) {
  const double thresh = reports.empty() ? 0.5 : reports.front().iou_threshold;
  Table tab{{"TP", "FP", "FN", "Average IoU", fmt::format("mAP@{}", trimmed(thresh)), "Precision", "Recall",
             "F1 Score"},
            {}};
  for (const auto& r : reports) {
    tab.rows.push_back({std::to_string(r.tp), std::to_string(r.fp), std::to_string(r.fn), percent(r.average_iou),
                        percent(r.map), fixed(r.precision, 2), fixed(r.recall, 2), fixed(r.f1, 2)});
  }
  return tab;
}

inline std::string render(const std::vector<detector::DetectorReport>& reports, Format format) {
  return render_table(detector_table(reports), format);
}

inline std::string render(const detector::DetectorReport& report, Format format) {
  return render(std::vector<detector::DetectorReport>{report}, format);
}

// --- training summaries ----------------------------------------------------------

struct TrainingRow {
  std::string network;
  int epochs = 0;
  double train_loss = 0.0;
  double test_loss = 0.0;
  double best_test_loss = 0.0;
  double mae = 0.0;
};

/// Last-epoch losses, best validation loss and the MAE at the best epoch.
inline TrainingRow training_row(std::string network, const model::TrainHistory& h) {
  if (h.epochs.empty()) throw ValidationError("training history is empty");
  return {std::move(network), static_cast<int>(h.epochs.size()), h.epochs.back().train_loss,
          h.epochs.back().val_loss, h.best_val_loss, h.best_val_mae};
}

inline std::string render(const std::vector<TrainingRow>& rows, Format format) {
  Table tab{{"Network", "Epochs", "Train loss", "Test loss", "Best test loss", "MAE"}, {}};
  for (const auto& r : rows) {
    tab.rows.push_back({r.network, std::to_string(r.epochs), fixed(r.train_loss, 3), fixed(r.test_loss, 3),
                        fixed(r.best_test_loss, 3), fixed(r.mae, 2)});
  }
  return render_table(tab, format);
}

/// Per-epoch trace of one training run.
inline std::string render(const model::TrainHistory& h, Format format) {
  Table tab{{"Epoch", "Train loss", "Test loss", "MAE"}, {}};
  for (const auto& e : h.epochs) {
    tab.rows.push_back({std::to_string(e.epoch), fixed(e.train_loss, 3), fixed(e.val_loss, 3), fixed(e.val_mae, 2)});
  }
  return render_table(tab, format);
}

// --- regression evaluation ----------------------------------------------------------

/// Per-image rows followed (in text mode) by MAE and level agreement, so
/// index error and level match are both visible.
inline std::string render(const model::EvaluationReport& r, Format format) {
  Table tab{{"Image", "Truth", "Prediction", "Error", "Truth level", "Predicted level", "Level match"}, {}};
  for (const auto& row : r.rows) {
    tab.rows.push_back({row.image_path, fixed(row.truth, 2), fixed(row.prediction, 2),
                        fixed(std::abs(row.truth - row.prediction), 2),
                        std::string(hedonic::level_label(row.truth_level)),
                        std::string(hedonic::level_label(row.level)), row.level == row.truth_level ? "yes" : "no"});
  }
  std::string out = render_table(tab, format);
  if (r.rows.empty()) return out;
  if (format == Format::kText) {
    out += fmt::format("MAE : {}  Level agreement : {}\n", fixed(r.mae, 2), percent(r.level_agreement));
    for (const auto& e : r.errors) out += fmt::format("error: {}: {}\n", e.image_path, e.message);
  }
  return out;
}

// --- pipeline ----------------------------------------------------------

inline std::string render(const pipeline::PipelineResult& r, Format format) {
  Table tab{{"Category", "Confidence", "bx", "by", "bw", "bh", "Index", "Level"}, {}};
  for (const auto& o : r.objects) {
    const auto& b = o.detection.box;
    tab.rows.push_back({o.detection.category, fixed(o.detection.confidence, 2), fixed(b.bx, 3), fixed(b.by, 3),
                        fixed(b.bw, 3), fixed(b.bh, 3), o.acceptability ? fixed(o.acceptability->index, 2) : "-",
                        o.acceptability ? std::string(hedonic::level_label(o.acceptability->level)) : "-"});
  }
  return render_table(tab, format);
}

}  // namespace sensoryeval::report
