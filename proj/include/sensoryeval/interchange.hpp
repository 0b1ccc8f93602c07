#pragma once

// Detections interchange format: UTF-8, one JSON object per line,
//   {"image": <path>, "category": <text>, "confidence": <real>, "bbox": [bx, by, bw, bh]}
// with bbox in normalized center format.

#include <nlohmann/json.hpp>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "sensoryeval/boxgeom.hpp"
#include "sensoryeval/error.hpp"

namespace sensoryeval::interchange {

struct DetectionRecord {
  std::string image;
  boxgeom::Detection detection;
};

inline nlohmann::json to_json(const DetectionRecord& r) {
  const auto& b = r.detection.box;
  return nlohmann::json{{"image", r.image},
                        {"category", r.detection.category},
                        {"confidence", r.detection.confidence},
                        {"bbox", {b.bx, b.by, b.bw, b.bh}}};
}

inline DetectionRecord from_json(const nlohmann::json& j) {
  DetectionRecord r;
  try {
    r.image = j.at("image").get<std::string>();
    r.detection.category = j.at("category").get<std::string>();
    // Ground-truth files may omit confidence.
    r.detection.confidence = j.contains("confidence") ? j.at("confidence").get<double>() : 1.0;
    const auto& bbox = j.at("bbox");
    if (!bbox.is_array() || bbox.size() != 4) throw ValidationError("bbox must have 4 numbers");
    r.detection.box = {bbox[0].get<double>(), bbox[1].get<double>(), bbox[2].get<double>(),
                       bbox[3].get<double>()};
  } catch (const nlohmann::json::exception& e) {
    throw ValidationError(std::string("malformed detection record: ") + e.what());
  }
  boxgeom::validate(r.detection);
  return r;
}

inline std::string format_line(const DetectionRecord& r) { return to_json(r).dump(); }

inline std::vector<DetectionRecord> parse(std::istream& in) {
  std::vector<DetectionRecord> out;
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    try {
      out.push_back(from_json(nlohmann::json::parse(line)));
    } catch (const nlohmann::json::exception& e) {
      throw ValidationError("line " + std::to_string(lineno) + ": " + e.what());
    } catch (const ValidationError& e) {
      throw ValidationError("line " + std::to_string(lineno) + ": " + e.what());
    }
  }
  return out;
}

inline std::vector<DetectionRecord> read_file(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open detections file: " + path.string());
  return parse(in);
}

inline void write_file(const std::filesystem::path& path, const std::vector<DetectionRecord>& recs) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path);
  if (!out) throw IoError("cannot write detections file: " + path.string());
  for (const auto& r : recs) out << format_line(r) << '\n';
}

/// Groups records by image key, preserving file order within each image.
inline std::map<std::string, std::vector<boxgeom::Detection>> group_by_image(
    const std::vector<DetectionRecord>& recs) {
  std::map<std::string, std::vector<boxgeom::Detection>> out;
  for (const auto& r : recs) out[r.image].push_back(r.detection);
  return out;
}

}  // namespace sensoryeval::interchange
