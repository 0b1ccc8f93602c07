#pragma once

// Detect -> filter category -> crop -> regress -> level.

#include <nlohmann/json.hpp>

#include <chrono>
#include <optional>
#include <string>
#include <vector>

#include "sensoryeval/boxgeom.hpp"
#include "sensoryeval/detector.hpp"
#include "sensoryeval/hedonic.hpp"
#include "sensoryeval/image.hpp"
#include "sensoryeval/model.hpp"

namespace sensoryeval::pipeline {

inline constexpr std::string_view kDefaultTarget = "guava";

struct ObjectResult {
  /// Normalized center-format box as reported by the detector.
  boxgeom::Detection detection;
  /// The same box in pixels of the original image.
  boxgeom::BoundingBox pixel_box;
  std::optional<hedonic::AcceptabilityResult> acceptability;
};

struct PipelineResult {
  int image_width = 0;
  int image_height = 0;
  std::string target_category;
  std::vector<ObjectResult> objects;
  double elapsed_ms = 0.0;

  std::size_t scored_count() const {
    std::size_t n = 0;
    for (const auto& o : objects) n += o.acceptability ? 1 : 0;
    return n;
  }
};

/// Crops come from the original-resolution image. Objects of other
/// categories are listed without an index.
inline PipelineResult run_pipeline(const Image8& image, const std::string& key,
                                   const detector::Detector& det, const model::Regressor& regressor,
                                   const std::string& target_category = std::string(kDefaultTarget)) {
  const auto start = std::chrono::steady_clock::now();
  PipelineResult out;
  out.image_width = image.width();
  out.image_height = image.height();
  out.target_category = target_category;
  for (const auto& d : det.detect(image, key)) {
    ObjectResult o;
    o.detection = d;
    o.pixel_box = boxgeom::to_pixels(d.box, image.width(), image.height());
    if (d.category == target_category) {
      o.acceptability = model::predict_index(regressor, boxgeom::crop(image, o.pixel_box));
    }
    out.objects.push_back(std::move(o));
  }
  out.elapsed_ms = std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - start).count();
  return out;
}

/// JSON body for the predict endpoint, without timing.
inline nlohmann::json to_json(const PipelineResult& r) {
  nlohmann::json objects = nlohmann::json::array();
  for (const auto& o : r.objects) {
    const auto& b = o.detection.box;
    nlohmann::json j{{"category", o.detection.category},
                     {"confidence", o.detection.confidence},
                     {"bbox", {b.bx, b.by, b.bw, b.bh}},
                     {"acceptability", nullptr}};
    if (o.acceptability) {
      j["acceptability"] = {{"index", o.acceptability->index},
                            {"level", std::string(hedonic::level_label(o.acceptability->level))}};
    }
    objects.push_back(std::move(j));
  }
  return {{"image_width", r.image_width},
          {"image_height", r.image_height},
          {"target_category", r.target_category},
          {"objects", objects}};
}

}  // namespace sensoryeval::pipeline
