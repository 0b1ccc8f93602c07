#include <gtest/gtest.h>

#include <filesystem>
#include <random>
#include <thread>

#include "sensoryeval/dataset.hpp"
#include "sensoryeval/interchange.hpp"
#include "sensoryeval/service.hpp"

using namespace sensoryeval;
using nlohmann::json;
namespace fs = std::filesystem;

namespace {

class TempDir {
 public:
  TempDir() {
    std::random_device rd;
    path_ = fs::temp_directory_path() / ("sensoryeval_svc_" + std::to_string(rd()));
    fs::create_directories(path_);
  }
  ~TempDir() { fs::remove_all(path_); }
  const fs::path& path() const { return path_; }

 private:
  fs::path path_;
};

Image8 solid(int w, int h, std::uint8_t v) {
  Image8 img(w, h, 3);
  for (auto& p : img.data()) p = v;
  return img;
}

/// Runs a Service on an ephemeral localhost port for the test's lifetime.
class Running {
 public:
  Running(service::ServiceConfig cfg, service::Models models)
      : svc_(std::make_unique<service::Service>(std::move(cfg), std::move(models))) {
    port_ = svc_->server().bind_to_any_port("127.0.0.1");
    thread_ = std::thread([this] { svc_->server().listen_after_bind(); });
    svc_->server().wait_until_ready();
  }
  ~Running() {
    svc_->stop();
    thread_.join();
  }
  httplib::Client client() const {
    httplib::Client c("127.0.0.1", port_);
    c.set_read_timeout(60, 0);
    return c;
  }

 private:
  std::unique_ptr<service::Service> svc_;
  int port_ = 0;
  std::thread thread_;
};

struct DataDir {
  TempDir dir;
  DataDir() {
    fs::create_directories(dir.path() / "images" / "sub");
    io::write_image(dir.path() / "images" / "b.png", solid(8, 8, 10));
    io::write_image(dir.path() / "images" / "a.png", solid(8, 6, 200));
    io::write_image(dir.path() / "images" / "sub" / "c.jpg", solid(8, 8, 90));
    std::ofstream(dir.path() / "images" / "notes.txt") << "x";
  }
  service::ServiceConfig config() const {
    service::ServiceConfig c;
    c.data_dir = dir.path();
    return c;
  }
};

std::string annotation(int id, int c, int s, int t, const std::string& who) {
  return json{{"image_id", id}, {"color", c}, {"shape", s}, {"texture", t}, {"annotator", who}}.dump();
}

}  // namespace

TEST(Service, HealthAndConfig) {
  DataDir data;
  Running run(data.config(), {});
  auto cli = run.client();
  auto h = cli.Get("/api/health");
  ASSERT_TRUE(h);
  EXPECT_EQ(h->status, 200);
  EXPECT_EQ(json::parse(h->body), (json{{"status", "ok"}}));
  EXPECT_EQ(h->get_header_value("Access-Control-Allow-Origin"), "*");

  auto c = cli.Get("/api/config");
  ASSERT_TRUE(c);
  const json cfg = json::parse(c->body);
  EXPECT_EQ(cfg["weights"], (json{{"color", 2}, {"shape", 1}, {"texture", 2}}));
  EXPECT_EQ(cfg["score_min"], 1);
  EXPECT_EQ(cfg["score_max"], 9);
  EXPECT_EQ(cfg["target_category"], "guava");
  ASSERT_EQ(cfg["levels"].size(), hedonic::kAllLevels.size());
  EXPECT_TRUE(cfg["levels"][0]["min_inclusive"].is_null());
  EXPECT_TRUE(cfg["levels"].back()["max_exclusive"].is_null());

  // A client classifying from the served bands agrees with level_for everywhere.
  auto classify = [&](double x) {
    for (const auto& l : cfg["levels"]) {
      const bool lo = l["min_inclusive"].is_null() || x >= l["min_inclusive"].get<double>();
      const bool hi = l["max_exclusive"].is_null() || x < l["max_exclusive"].get<double>();
      if (lo && hi) return l["label"].get<std::string>();
    }
    return std::string();
  };
  for (int c9 = 1; c9 <= 9; ++c9) {
    for (int s9 = 1; s9 <= 9; ++s9) {
      for (int t9 = 1; t9 <= 9; ++t9) {
        const auto r = hedonic::assess({c9, s9, t9});
        ASSERT_EQ(classify(r.index), hedonic::level_label(r.level)) << c9 << s9 << t9;
      }
    }
  }
}

TEST(Service, ListsAndServesImages) {
  DataDir data;
  Running run(data.config(), {});
  auto cli = run.client();
  auto r = cli.Get("/api/images");
  ASSERT_TRUE(r);
  const json list = json::parse(r->body);
  ASSERT_EQ(list.size(), 3u);
  EXPECT_EQ(list[0], (json{{"id", 0}, {"path", "images/a.png"}, {"annotated", false}}));
  EXPECT_EQ(list[1]["path"], "images/b.png");
  EXPECT_EQ(list[2]["path"], "images/sub/c.jpg");

  auto img = cli.Get("/api/images/0");
  ASSERT_TRUE(img);
  EXPECT_EQ(img->status, 200);
  EXPECT_EQ(img->get_header_value("Content-Type"), "image/png");
  EXPECT_EQ(io::decode_image(img->body), solid(8, 6, 200));
  auto jpg = cli.Get("/api/images/2");
  ASSERT_TRUE(jpg);
  EXPECT_EQ(jpg->get_header_value("Content-Type"), "image/jpeg");
  EXPECT_EQ(cli.Get("/api/images/3")->status, 404);
}

TEST(Service, AnnotationLifecycle) {
  DataDir data;
  Running run(data.config(), {});
  auto cli = run.client();
  auto r = cli.Post("/api/annotations", annotation(1, 7, 6, 8, "ana"), "application/json");
  ASSERT_TRUE(r);
  EXPECT_EQ(r->status, 201);
  const json rec = json::parse(r->body);
  EXPECT_EQ(rec["image_path"], "images/b.png");
  EXPECT_EQ(rec["image_id"], 1);
  EXPECT_DOUBLE_EQ(rec["index"].get<double>(), 7.2);
  EXPECT_EQ(rec["level"], "Like extremely");
  EXPECT_EQ(rec["annotator"], "ana");
  EXPECT_EQ(rec["timestamp"].get<std::string>().size(), 20u);

  EXPECT_EQ(cli.Post("/api/annotations", annotation(1, 1, 1, 1, "ana"), "application/json")->status, 409);
  EXPECT_EQ(cli.Post("/api/annotations", annotation(1, 1, 1, 1, "ben"), "application/json")->status, 201);
  EXPECT_EQ(cli.Post("/api/annotations", annotation(9, 1, 1, 1, "ana"), "application/json")->status, 404);

  const json all = json::parse(cli.Get("/api/annotations")->body);
  ASSERT_EQ(all.size(), 2u);
  EXPECT_EQ(all[1]["annotator"], "ben");
  EXPECT_EQ(all[1]["level"], "Dislike extremely");
  const json list = json::parse(cli.Get("/api/images")->body);
  EXPECT_FALSE(list[0]["annotated"].get<bool>());
  EXPECT_TRUE(list[1]["annotated"].get<bool>());

  const auto on_disk = dataset::load_annotations(data.dir.path() / "annotations.csv");
  ASSERT_EQ(on_disk.size(), 2u);
  EXPECT_EQ(on_disk[0].score, (hedonic::HedonicScore{7, 6, 8}));
}

TEST(Service, AnnotationValidation) {
  DataDir data;
  Running run(data.config(), {});
  auto cli = run.client();
  auto post = [&](const std::string& body) { return cli.Post("/api/annotations", body, "application/json"); };
  EXPECT_EQ(post("{not json")->status, 400);
  EXPECT_EQ(post("[1,2]")->status, 400);

  auto r = post(json{{"image_id", 0}, {"color", 10}, {"shape", 2.5}, {"annotator", ""}}.dump());
  ASSERT_EQ(r->status, 400);
  const json err = json::parse(r->body);
  std::map<std::string, std::string> fields;
  for (const auto& f : err["fields"]) fields[f["field"]] = f["message"];
  EXPECT_EQ(fields["color"], "must be in [1, 9]");
  EXPECT_EQ(fields["shape"], "must be an integer");
  EXPECT_EQ(fields["texture"], "is required");
  EXPECT_EQ(fields["annotator"], "must be a non-empty string");
  EXPECT_EQ(fields.count("image_id"), 0u);

  EXPECT_EQ(post(json{{"image_id", "x1"}, {"color", 5}, {"shape", 5}, {"texture", 5}, {"annotator", "a"}}.dump())
                ->status,
            400);
  EXPECT_EQ(post(json{{"image_id", "2"}, {"color", 5}, {"shape", 5}, {"texture", 5}, {"annotator", "a"}}.dump())
                ->status,
            201);
}

TEST(Service, ConcurrentAppendsAreAllKept) {
  DataDir data;
  Running run(data.config(), {});
  std::vector<std::thread> workers;
  std::atomic<int> created{0};
  for (int w = 0; w < 6; ++w) {
    workers.emplace_back([&, w] {
      auto cli = run.client();
      for (int id = 0; id < 3; ++id) {
        auto r = cli.Post("/api/annotations", annotation(id, 1 + w, 5, 9 - w, "a" + std::to_string(w)),
                          "application/json");
        if (r && r->status == 201) ++created;
      }
    });
  }
  for (auto& t : workers) t.join();
  EXPECT_EQ(created.load(), 18);
  EXPECT_EQ(dataset::load_annotations(data.dir.path() / "annotations.csv").size(), 18u);
}

TEST(Service, PredictWithoutModelsIsUnavailable) {
  DataDir data;
  Running run(data.config(), service::load_models({}));
  auto cli = run.client();
  httplib::MultipartFormDataItems items = {{"image", io::encode_png(solid(8, 8, 1)), "x.png", "image/png"}};
  auto r = cli.Post("/api/predict", items);
  ASSERT_TRUE(r);
  EXPECT_EQ(r->status, 503);
  EXPECT_NE(json::parse(r->body)["error"].get<std::string>().find("not loaded"), std::string::npos);
}

TEST(Service, PredictRunsThePipeline) {
  DataDir data;
  TempDir weights;
  model::RegressorSpec spec;
  spec.width_divisor = 8;
  spec.input_size = 32;
  spec.backbone_weights = weights.path() / "bb.bin";
  model::save_backbone_weights(spec.backbone_weights, spec.backbone, 8, 2);
  model::build_regressor(spec).save(weights.path() / service::kRegressorFile);
  interchange::write_file(weights.path() / service::kStubSidecarFile,
                          {{"scene.png", {{0.25, 0.5, 0.4, 0.8}, "guava", 0.9}},
                           {"scene.png", {{0.75, 0.5, 0.4, 0.8}, "apple", 0.8}}});
  auto models = service::load_models(weights.path());
  EXPECT_TRUE(models.warnings.empty());

  Image8 scene(40, 20, 3);
  for (int y = 0; y < 20; ++y) {
    for (int x = 0; x < 40; ++x) scene.at(x, y, 1) = static_cast<std::uint8_t>(x * 6);
  }
  const auto direct = model::predict_index(*models.regressor, boxgeom::crop(scene, {10, 10, 16, 16}));

  Running run(data.config(), std::move(models));
  auto cli = run.client();
  const std::string png = io::encode_png(scene);
  httplib::MultipartFormDataItems items = {{"image", png, "scene.png", "image/png"}};
  auto a = cli.Post("/api/predict", items);
  ASSERT_TRUE(a);
  ASSERT_EQ(a->status, 200) << a->body;
  EXPECT_FALSE(a->get_header_value("X-Elapsed-Ms").empty());
  const json body = json::parse(a->body);
  EXPECT_EQ(body["image_width"], 40);
  ASSERT_EQ(body["objects"].size(), 2u);
  EXPECT_EQ(body["objects"][0]["acceptability"]["index"].get<double>(), direct.index);
  EXPECT_TRUE(body["objects"][1]["acceptability"].is_null());

  auto b = cli.Post("/api/predict", items);
  EXPECT_EQ(b->body, a->body);

  httplib::MultipartFormDataItems junk = {{"image", "not an image", "scene.png", "image/png"}};
  EXPECT_EQ(cli.Post("/api/predict", junk)->status, 400);
  httplib::MultipartFormDataItems none = {{"other", "", "", ""}};
  EXPECT_EQ(cli.Post("/api/predict", none)->status, 400);
}
