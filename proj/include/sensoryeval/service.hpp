#pragma once

// HTTP API for the annotation workbench and single-image prediction.

#include <fcntl.h>
#include <sys/file.h>
#include <unistd.h>

#include <fmt/chrono.h>
#include <fmt/format.h>
#include <nlohmann/json.hpp>

#include <algorithm>
#include <chrono>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <memory>
#include <mutex>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "sensoryeval/dataset.hpp"
#include "sensoryeval/detector.hpp"
#include "sensoryeval/error.hpp"
#include "sensoryeval/hedonic.hpp"
#include "sensoryeval/image_io.hpp"
#include "sensoryeval/model.hpp"
#include "sensoryeval/pipeline.hpp"

// Kept after the Eigen-based headers.
#include <httplib.h>

namespace sensoryeval::service {

namespace fs = std::filesystem;

inline constexpr std::string_view kRegressorFile = "regressor.ckpt";
inline constexpr std::string_view kDetectorCfgFile = "detector.cfg";
inline constexpr std::string_view kDetectorWeightsFile = "detector.weights";
inline constexpr std::string_view kDetectorNamesFile = "detector.names";
inline constexpr std::string_view kStubSidecarFile = "detections.jsonl";

struct ServiceConfig {
  /// Holds images/ and annotations.csv.
  fs::path data_dir = ".";
  fs::path weights_dir;
  std::string target_category = std::string(pipeline::kDefaultTarget);
};

/// SENSORYEVAL_DATA_DIR and SENSORYEVAL_WEIGHTS_DIR.
inline ServiceConfig config_from_env() {
  ServiceConfig c;
  if (const char* d = std::getenv("SENSORYEVAL_DATA_DIR")) c.data_dir = d;
  if (const char* w = std::getenv("SENSORYEVAL_WEIGHTS_DIR")) c.weights_dir = w;
  return c;
}

inline std::string utc_timestamp() {
  const auto now = std::chrono::floor<std::chrono::seconds>(std::chrono::system_clock::now());
  return fmt::format("{:%Y-%m-%dT%H:%M:%SZ}", fmt::gmtime(std::chrono::system_clock::to_time_t(now)));
}

inline bool is_image_file(const fs::path& p) {
  std::string ext = p.extension().string();
  std::transform(ext.begin(), ext.end(), ext.begin(), [](unsigned char c) { return std::tolower(c); });
  return ext == ".png" || ext == ".jpg" || ext == ".jpeg";
}

inline std::string content_type_for(const fs::path& p) {
  std::string ext = p.extension().string();
  std::transform(ext.begin(), ext.end(), ext.begin(), [](unsigned char c) { return std::tolower(c); });
  return ext == ".png" ? "image/png" : "image/jpeg";
}

struct ImageEntry {
  int id = 0;
  /// Relative to the data directory, e.g. "images/a.png".
  std::string path;
};

class Conflict : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// annotations.csv under the data directory. Appends are serialized by a
/// process mutex plus an exclusive advisory file lock.
class AnnotationStore {
 public:
  explicit AnnotationStore(fs::path data_dir) : dir_(std::move(data_dir)) {}

  fs::path csv_path() const { return dir_ / "annotations.csv"; }
  const fs::path& data_dir() const { return dir_; }

  /// Image files under images/, sorted by path; ids are positions.
  std::vector<ImageEntry> images() const {
    std::vector<std::string> paths;
    const fs::path root = dir_ / "images";
    if (fs::is_directory(root)) {
      for (const auto& e : fs::recursive_directory_iterator(root)) {
        if (e.is_regular_file() && is_image_file(e.path())) {
          paths.push_back(fs::relative(e.path(), dir_).generic_string());
        }
      }
    }
    std::sort(paths.begin(), paths.end());
    std::vector<ImageEntry> out;
    for (std::size_t i = 0; i < paths.size(); ++i) out.push_back({static_cast<int>(i), paths[i]});
    return out;
  }

  std::vector<dataset::AnnotationRecord> records() const {
    std::lock_guard<std::mutex> lock(mu_);
    return read_unlocked();
  }

  /// Throws Conflict when this annotator already scored the image.
  dataset::AnnotationRecord append(const std::string& image_path, const hedonic::HedonicScore& score,
                                   const std::string& annotator) {
    std::lock_guard<std::mutex> lock(mu_);
    fs::create_directories(dir_);
    const std::string path = csv_path().string();
    const int fd = ::open(path.c_str(), O_RDWR | O_CREAT | O_APPEND, 0644);
    if (fd < 0) throw IoError("cannot open " + path);
    struct Closer {
      int fd;
      ~Closer() {
        ::flock(fd, LOCK_UN);
        ::close(fd);
      }
    } closer{fd};
    if (::flock(fd, LOCK_EX) != 0) throw IoError("cannot lock " + path);

    const auto existing = read_unlocked();
    for (const auto& r : existing) {
      if (r.image_path == image_path && r.annotator == annotator) {
        throw Conflict(fmt::format("{} already annotated by {}", image_path, annotator));
      }
    }
    const auto rec = dataset::make_record(image_path, score, annotator, utc_timestamp());
    std::string text;
    if (fs::file_size(csv_path()) == 0) text = std::string(dataset::kCsvHeader) + "\n";
    text += dataset::format_row(rec) + "\n";
    const char* p = text.data();
    std::size_t left = text.size();
    while (left > 0) {
      const ssize_t n = ::write(fd, p, left);
      if (n <= 0) throw IoError("short write to " + path);
      p += n;
      left -= static_cast<std::size_t>(n);
    }
    ::fsync(fd);
    return rec;
  }

 private:
  std::vector<dataset::AnnotationRecord> read_unlocked() const {
    const fs::path p = csv_path();
    if (!fs::exists(p) || fs::file_size(p) == 0) return {};
    return dataset::load_annotations(p);
  }

  fs::path dir_;
  mutable std::mutex mu_;
};

struct Models {
  std::unique_ptr<detector::Detector> detector;
  std::optional<model::Regressor> regressor;
  std::vector<std::string> warnings;
};

/// Loads whatever is present in the weights directory: regressor.ckpt, and
/// either detector.cfg + detector.weights (class names from detector.names)
/// or a detections.jsonl stub sidecar.
inline Models load_models(const fs::path& weights_dir) {
  Models m;
  if (weights_dir.empty()) {
    m.warnings.push_back("no weights directory configured; prediction disabled");
    return m;
  }
  const fs::path ckpt = weights_dir / kRegressorFile;
  if (fs::exists(ckpt)) {
    m.regressor.emplace(model::Regressor::load(ckpt));
  } else {
    m.warnings.push_back("regressor checkpoint not found: " + ckpt.string());
  }
  detector::DetectorConfig dc;
  if (fs::exists(weights_dir / kDetectorNamesFile)) {
    dc.category_names.clear();
    std::ifstream in(weights_dir / kDetectorNamesFile);
    for (std::string line; std::getline(in, line);) {
      if (!line.empty() && line.back() == '\r') line.pop_back();
      if (!line.empty()) dc.category_names.push_back(line);
    }
  }
  if (fs::exists(weights_dir / kDetectorWeightsFile)) {
    dc.backend = detector::Backend::kPretrained;
    dc.weights_path = weights_dir / kDetectorWeightsFile;
    dc.cfg_path = weights_dir / kDetectorCfgFile;
    m.detector = std::make_unique<detector::Detector>(dc);
  } else if (fs::exists(weights_dir / kStubSidecarFile)) {
    dc.backend = detector::Backend::kStub;
    dc.sidecar_path = weights_dir / kStubSidecarFile;
    m.detector = std::make_unique<detector::Detector>(dc);
  } else {
    m.warnings.push_back("no detector weights or stub sidecar in " + weights_dir.string());
  }
  return m;
}

inline nlohmann::json record_json(const dataset::AnnotationRecord& r, std::optional<int> image_id) {
  nlohmann::json j{{"image_path", r.image_path},
                   {"color", r.score.color},
                   {"shape", r.score.shape},
                   {"texture", r.score.texture},
                   {"annotator", r.annotator},
                   {"timestamp", r.timestamp},
                   {"index", r.index},
                   {"level", std::string(hedonic::level_label(r.level))}};
  j["image_id"] = image_id ? nlohmann::json(*image_id) : nlohmann::json(nullptr);
  return j;
}

/// Weights, score range and level bands, so clients need not duplicate them.
inline nlohmann::json config_json(const std::string& target_category) {
  const hedonic::AttributeWeights w;
  nlohmann::json levels = nlohmann::json::array();
  for (std::size_t i = 0; i < hedonic::kAllLevels.size(); ++i) {
    const auto level = hedonic::kAllLevels[i];
    levels.push_back({{"label", std::string(hedonic::level_label(level))},
                      {"min_inclusive", i == 0 ? nlohmann::json(nullptr)
                                               : nlohmann::json(hedonic::kLevelLowerBounds[i - 1])},
                      {"max_exclusive", i + 1 == hedonic::kAllLevels.size()
                                            ? nlohmann::json(nullptr)
                                            : nlohmann::json(hedonic::kLevelLowerBounds[i])}});
  }
  return {{"weights", {{"color", w.color}, {"shape", w.shape}, {"texture", w.texture}}},
          {"score_min", hedonic::kMinScore},
          {"score_max", hedonic::kMaxScore},
          {"index_decimals", 2},
          {"levels", levels},
          {"target_category", target_category}};
}

class Service {
 public:
  Service(ServiceConfig cfg, Models models)
      : cfg_(std::move(cfg)), store_(cfg_.data_dir), models_(std::move(models)) {
    mount();
  }

  httplib::Server& server() { return server_; }
  const Models& models() const { return models_; }

  bool listen(const std::string& host, int port) { return server_.listen(host, port); }
  void stop() { server_.stop(); }

 private:
  static void send_json(httplib::Response& res, int status, const nlohmann::json& body) {
    res.status = status;
    res.set_content(body.dump(), "application/json");
  }

  static void send_error(httplib::Response& res, int status, const std::string& message,
                         nlohmann::json fields = nullptr) {
    nlohmann::json body{{"error", message}};
    if (!fields.is_null()) body["fields"] = std::move(fields);
    send_json(res, status, body);
  }

  void mount() {
    server_.set_default_headers({{"Access-Control-Allow-Origin", "*"},
                                 {"Access-Control-Allow-Headers", "Content-Type"},
                                 {"Access-Control-Allow-Methods", "GET, POST, OPTIONS"}});
    server_.Options(R"(/api/.*)", [](const httplib::Request&, httplib::Response& res) { res.status = 204; });
    server_.set_exception_handler([](const httplib::Request&, httplib::Response& res, std::exception_ptr ep) {
      try {
        std::rethrow_exception(ep);
      } catch (const std::exception& e) {
        send_error(res, 500, e.what());
      } catch (...) {
        send_error(res, 500, "internal error");
      }
    });

    server_.Get("/api/health", [](const httplib::Request&, httplib::Response& res) {
      send_json(res, 200, {{"status", "ok"}});
    });

    server_.Get("/api/config", [this](const httplib::Request&, httplib::Response& res) {
      send_json(res, 200, config_json(cfg_.target_category));
    });

    server_.Get("/api/images", [this](const httplib::Request&, httplib::Response& res) {
      std::set<std::string> annotated;
      for (const auto& r : store_.records()) annotated.insert(r.image_path);
      nlohmann::json out = nlohmann::json::array();
      for (const auto& e : store_.images()) {
        out.push_back({{"id", e.id}, {"path", e.path}, {"annotated", annotated.contains(e.path)}});
      }
      send_json(res, 200, out);
    });

    server_.Get(R"(/api/images/(\d+))", [this](const httplib::Request& req, httplib::Response& res) {
      const auto entry = find_image(std::stoll(req.matches[1].str()));
      if (!entry) return send_error(res, 404, "unknown image id");
      std::ifstream in(cfg_.data_dir / entry->path, std::ios::binary);
      if (!in) return send_error(res, 404, "image file unreadable");
      std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
      res.set_content(std::move(bytes), content_type_for(entry->path));
    });

    server_.Get("/api/annotations", [this](const httplib::Request&, httplib::Response& res) {
      std::map<std::string, int> ids;
      for (const auto& e : store_.images()) ids[e.path] = e.id;
      nlohmann::json out = nlohmann::json::array();
      for (const auto& r : store_.records()) {
        const auto it = ids.find(r.image_path);
        out.push_back(record_json(r, it == ids.end() ? std::nullopt : std::optional<int>(it->second)));
      }
      send_json(res, 200, out);
    });

    server_.Post("/api/annotations", [this](const httplib::Request& req, httplib::Response& res) {
      handle_annotation(req, res);
    });

    server_.Post("/api/predict", [this](const httplib::Request& req, httplib::Response& res) {
      handle_predict(req, res);
    });
  }

  std::optional<ImageEntry> find_image(long long id) const {
    const auto all = store_.images();
    if (id < 0 || id >= static_cast<long long>(all.size())) return std::nullopt;
    return all[static_cast<std::size_t>(id)];
  }

  void handle_annotation(const httplib::Request& req, httplib::Response& res) {
    nlohmann::json body;
    try {
      body = nlohmann::json::parse(req.body);
    } catch (const nlohmann::json::exception&) {
      return send_error(res, 400, "body is not valid JSON");
    }
    if (!body.is_object()) return send_error(res, 400, "body must be a JSON object");

    nlohmann::json field_errors = nlohmann::json::array();
    auto number = [&](const char* name) -> double {
      if (!body.contains(name)) {
        field_errors.push_back({{"field", name}, {"message", "is required"}});
        return 0.0;
      }
      if (!body[name].is_number()) {
        field_errors.push_back({{"field", name}, {"message", "must be an integer"}});
        return 0.0;
      }
      return body[name].get<double>();
    };
    const double color = number("color");
    const double shape = number("shape");
    const double texture = number("texture");
    std::string annotator;
    if (!body.contains("annotator") || !body["annotator"].is_string() ||
        body["annotator"].get<std::string>().empty()) {
      field_errors.push_back({{"field", "annotator"}, {"message", "must be a non-empty string"}});
    } else {
      annotator = body["annotator"].get<std::string>();
    }
    std::optional<long long> image_id;
    if (body.contains("image_id") && body["image_id"].is_number_integer()) {
      image_id = body["image_id"].get<long long>();
    } else if (body.contains("image_id") && body["image_id"].is_string()) {
      try {
        std::size_t used = 0;
        const std::string s = body["image_id"].get<std::string>();
        image_id = std::stoll(s, &used);
        if (used != s.size()) image_id.reset();
      } catch (const std::exception&) {
      }
    }
    if (!image_id) field_errors.push_back({{"field", "image_id"}, {"message", "must be an integer id"}});

    const auto v = hedonic::validate_score(color, shape, texture);
    for (const auto& e : v.errors) {
      const bool dup = std::any_of(field_errors.begin(), field_errors.end(),
                                   [&](const nlohmann::json& f) { return f["field"] == e.field; });
      if (!dup) field_errors.push_back({{"field", e.field}, {"message", e.message}});
    }
    if (!field_errors.empty()) return send_error(res, 400, "validation failed", field_errors);

    const auto entry = find_image(*image_id);
    if (!entry) return send_error(res, 404, "unknown image id");
    try {
      const auto rec = store_.append(entry->path, *v.score, annotator);
      send_json(res, 201, record_json(rec, entry->id));
    } catch (const Conflict& e) {
      send_error(res, 409, e.what());
    }
  }

  void handle_predict(const httplib::Request& req, httplib::Response& res) {
    if (!models_.detector || !models_.regressor) {
      std::string why = "models not loaded";
      for (const auto& w : models_.warnings) why += "; " + w;
      return send_error(res, 503, why);
    }
    const httplib::MultipartFormData* file = nullptr;
    if (req.has_file("image")) {
      file = &req.files.find("image")->second;
    } else if (!req.files.empty()) {
      file = &req.files.begin()->second;
    }
    if (file == nullptr || file->content.empty()) return send_error(res, 400, "multipart field 'image' required");
    Image8 image;
    try {
      image = io::decode_image(file->content);
    } catch (const std::exception& e) {
      return send_error(res, 400, std::string("unsupported image: ") + e.what());
    }
    const auto result =
        pipeline::run_pipeline(image, file->filename, *models_.detector, *models_.regressor, cfg_.target_category);
    res.set_header("X-Elapsed-Ms", fmt::format("{:.3f}", result.elapsed_ms));
    send_json(res, 200, pipeline::to_json(result));
  }

  ServiceConfig cfg_;
  AnnotationStore store_;
  Models models_;
  httplib::Server server_;
};

}  // namespace sensoryeval::service
