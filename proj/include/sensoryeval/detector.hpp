#pragma once

// Object-detector adapter. Two backends: a darknet-format network run through
// OpenCV's dnn module, and a stub that replays detections from a sidecar file.

#include <fmt/format.h>
#include <opencv2/dnn.hpp>
#include <opencv2/imgproc.hpp>

#include <algorithm>
#include <filesystem>
#include <map>
#include <mutex>
#include <optional>
#include <string>
#include <vector>

#include "sensoryeval/boxgeom.hpp"
#include "sensoryeval/detmetrics.hpp"
#include "sensoryeval/error.hpp"
#include "sensoryeval/image.hpp"
#include "sensoryeval/image_io.hpp"
#include "sensoryeval/interchange.hpp"

namespace sensoryeval::detector {

using boxgeom::Detection;
using detmetrics::NmsVariant;

enum class Backend { kStub, kPretrained };

struct DetectorConfig {
  Backend backend = Backend::kStub;
  /// Darknet weights and network description (pretrained backend).
  std::filesystem::path weights_path;
  std::filesystem::path cfg_path;
  /// Detections interchange file replayed by the stub backend.
  std::filesystem::path sidecar_path;
  /// Class index -> name for the pretrained backend.
  std::vector<std::string> category_names = {"guava"};
  double confidence_threshold = 0.25;
  double nms_iou_threshold = 0.45;
  NmsVariant nms_variant = NmsVariant::kStandard;
  /// Square network input side for the pretrained backend.
  int input_size = 416;
};

inline void validate(const DetectorConfig& cfg) {
  if (!(cfg.confidence_threshold >= 0.0 && cfg.confidence_threshold <= 1.0)) {
    throw ValidationError("confidence_threshold must be in [0, 1]");
  }
  if (!(cfg.nms_iou_threshold > 0.0 && cfg.nms_iou_threshold < 1.0)) {
    throw ValidationError("nms_iou_threshold must be in (0, 1)");
  }
  if (cfg.category_names.empty()) throw ValidationError("category_names must not be empty");
  for (const auto& c : cfg.category_names) {
    if (c.empty()) throw ValidationError("category names must be non-empty");
  }
  if (cfg.backend == Backend::kPretrained && cfg.input_size <= 0) {
    throw ValidationError("input_size must be > 0");
  }
}

inline std::optional<Backend> parse_backend(std::string_view name) {
  if (name == "stub") return Backend::kStub;
  if (name == "pretrained") return Backend::kPretrained;
  return std::nullopt;
}

inline std::optional<NmsVariant> parse_nms_variant(std::string_view name) {
  if (name == "standard") return NmsVariant::kStandard;
  if (name == "diou") return NmsVariant::kDiou;
  return std::nullopt;
}

/// Immutable after construction; detect() may be called concurrently.
class Detector {
 public:
  explicit Detector(DetectorConfig cfg) : cfg_(std::move(cfg)) {
    validate(cfg_);
    if (cfg_.backend == Backend::kStub) {
      if (!cfg_.sidecar_path.empty()) {
        for (const auto& rec : interchange::read_file(cfg_.sidecar_path)) {
          sidecar_[rec.image].push_back(rec.detection);
        }
      }
      return;
    }
    for (const auto* p : {&cfg_.weights_path, &cfg_.cfg_path}) {
      if (p->empty() || !std::filesystem::exists(*p)) {
        throw IoError("detector file not found: '" + p->string() + "'");
      }
    }
    try {
      net_ = cv::dnn::readNetFromDarknet(cfg_.cfg_path.string(), cfg_.weights_path.string());
    } catch (const cv::Exception& e) {
      throw IoError(std::string("cannot load detector weights: ") + e.what());
    }
    if (net_.empty()) throw IoError("cannot load detector weights: " + cfg_.weights_path.string());
    net_.setPreferableBackend(cv::dnn::DNN_BACKEND_OPENCV);
    net_.setPreferableTarget(cv::dnn::DNN_TARGET_CPU);
    out_names_ = net_.getUnconnectedOutLayersNames();
  }

  const DetectorConfig& config() const { return cfg_; }

  /// Thresholded, suppressed detections with normalized center-format boxes.
  /// `key` identifies the image for the stub backend (path or file name).
  std::vector<Detection> detect(const Image8& image, const std::string& key = "") const {
    if (image.empty()) throw ValidationError("unsupported image: empty");
    std::vector<Detection> raw = cfg_.backend == Backend::kStub ? replay(key) : run_network(image);
    std::vector<Detection> kept;
    for (auto& d : raw) {
      if (d.confidence < cfg_.confidence_threshold || d.confidence <= 0.0) continue;
      d.box = boxgeom::clamp_normalized(d.box);
      if (!(d.box.bw > 0.0 && d.box.bh > 0.0)) continue;
      kept.push_back(std::move(d));
    }
    return detmetrics::nms(kept, cfg_.nms_iou_threshold, cfg_.nms_variant);
  }

 private:
  std::vector<Detection> replay(const std::string& key) const {
    auto it = sidecar_.find(key);
    if (it == sidecar_.end()) {
      const std::string base = std::filesystem::path(key).filename().string();
      it = std::find_if(sidecar_.begin(), sidecar_.end(), [&](const auto& kv) {
        return std::filesystem::path(kv.first).filename().string() == base;
      });
    }
    return it == sidecar_.end() ? std::vector<Detection>{} : it->second;
  }

  std::vector<Detection> run_network(const Image8& image) const {
    cv::Mat bgr = io::to_mat(image);
    if (image.channels() == 1) cv::cvtColor(bgr, bgr, cv::COLOR_GRAY2BGR);
    const cv::Mat blob = cv::dnn::blobFromImage(bgr, 1.0 / 255.0, cv::Size(cfg_.input_size, cfg_.input_size),
                                                cv::Scalar(), true, false);
    std::vector<cv::Mat> outs;
    {
      std::lock_guard<std::mutex> lock(mu_);
      net_.setInput(blob);
      net_.forward(outs, out_names_);
    }
    std::vector<Detection> dets;
    for (const cv::Mat& out : outs) {
      // Rows: cx, cy, w, h, objectness, per-class scores (all normalized).
      for (int r = 0; r < out.rows; ++r) {
        const float* row = out.ptr<float>(r);
        const int classes = out.cols - 5;
        if (classes <= 0) continue;
        const auto best = std::max_element(row + 5, row + 5 + classes);
        const int cls = static_cast<int>(best - (row + 5));
        if (*best <= 0.0f || cls >= static_cast<int>(cfg_.category_names.size())) continue;
        Detection d;
        d.box = {row[0], row[1], row[2], row[3]};
        d.category = cfg_.category_names[static_cast<std::size_t>(cls)];
        d.confidence = std::clamp(static_cast<double>(*best), 0.0, 1.0);
        if (d.box.bw > 0.0 && d.box.bh > 0.0) dets.push_back(d);
      }
    }
    return dets;
  }

  DetectorConfig cfg_;
  std::map<std::string, std::vector<Detection>> sidecar_;
  mutable cv::dnn::Net net_;
  mutable std::mutex mu_;
  std::vector<std::string> out_names_;
};

// --- evaluation ------------------------------------------------------------

struct DetectorReport {
  int tp = 0;
  int fp = 0;
  int fn = 0;
  double average_iou = 0.0;
  double map = 0.0;
  double precision = 0.0;
  double recall = 0.0;
  double f1 = 0.0;
  /// Set when precision or recall had an empty denominator.
  bool degenerate = false;
  double iou_threshold = 0.5;

  /// Derives precision/recall/F1 from counts; IoU and mAP are supplied.
  static DetectorReport from_counts(int tp, int fp, int fn, double average_iou, double map,
                                    double iou_threshold = 0.5) {
    DetectorReport r;
    r.tp = tp;
    r.fp = fp;
    r.fn = fn;
    r.average_iou = average_iou;
    r.map = map;
    r.iou_threshold = iou_threshold;
    const auto pr = detmetrics::precision_recall_f1(tp, fp, fn);
    r.precision = pr.precision;
    r.recall = pr.recall;
    r.f1 = pr.f1;
    r.degenerate = pr.degenerate;
    return r;
  }
};

inline DetectorReport evaluate_detections(std::span<const detmetrics::ImageEval> images, double iou_thresh) {
  detmetrics::MatchReport total;
  for (const auto& im : images) total += detmetrics::match_detections(im.dets, im.gts, iou_thresh);
  const auto m = detmetrics::map_at(images, iou_thresh);
  return DetectorReport::from_counts(total.tp, total.fp, total.fn, detmetrics::average_iou(total), m.map,
                                     iou_thresh);
}

struct LabeledImage {
  std::string key;
  Image8 image;
  std::vector<detmetrics::GroundTruth> gts;
};

inline DetectorReport evaluate_detector(const Detector& det, const std::vector<LabeledImage>& set,
                                        double iou_thresh = 0.5) {
  if (set.empty()) throw ValidationError("evaluation set is empty");
  std::vector<detmetrics::ImageEval> evals;
  evals.reserve(set.size());
  for (const auto& s : set) evals.push_back({det.detect(s.image, s.key), s.gts});
  return evaluate_detections(evals, iou_thresh);
}

}  // namespace sensoryeval::detector
