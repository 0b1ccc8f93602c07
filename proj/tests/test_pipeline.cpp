#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>
#include <random>
#include <sstream>

#include "sensoryeval/dataset.hpp"
#include "sensoryeval/interchange.hpp"
#include "sensoryeval/losses.hpp"
#include "sensoryeval/pipeline.hpp"
#include "sensoryeval/report.hpp"

using namespace sensoryeval;
using boxgeom::BoundingBox;
using report::Format;
namespace fs = std::filesystem;

namespace {

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

class TempDir {
 public:
  TempDir() {
    std::random_device rd;
    path_ = fs::temp_directory_path() / ("sensoryeval_pipe_" + std::to_string(rd()));
    fs::create_directories(path_);
  }
  ~TempDir() { fs::remove_all(path_); }
  const fs::path& path() const { return path_; }

 private:
  fs::path path_;
};

/// Two synthetic fruits pasted side by side, with normalized boxes.
struct Scene {
  Image8 image;
  std::vector<BoundingBox> boxes;
};

Scene two_fruit_scene() {
  dataset::SynthSpec s;
  s.count = 2;
  s.seed = 21;
  s.image_size = 64;
  const auto samples = dataset::synth_generate(s);
  Scene sc;
  sc.image = Image8(128, 64, 3);
  for (int k = 0; k < 2; ++k) {
    const Image8& src = samples[k].image;
    for (int y = 0; y < 64; ++y) {
      for (int x = 0; x < 64; ++x) {
        for (int c = 0; c < 3; ++c) sc.image.at(x + 64 * k, y, c) = src.at(x, y, c);
      }
    }
    const BoundingBox& b = samples[k].box;
    sc.boxes.push_back({(b.bx + 64 * k) / 128.0, b.by / 64.0, b.bw / 128.0, b.bh / 64.0});
  }
  return sc;
}

struct Models {
  TempDir dir;
  std::unique_ptr<model::Regressor> regressor;

  Models() {
    model::RegressorSpec spec;
    spec.width_divisor = 8;
    spec.input_size = 32;
    spec.backbone_weights = dir.path() / "bb.bin";
    model::save_backbone_weights(spec.backbone_weights, spec.backbone, 8, 1);
    regressor = std::make_unique<model::Regressor>(model::build_regressor(spec));
  }

  detector::Detector stub(const std::vector<interchange::DetectionRecord>& recs) const {
    const fs::path p = dir.path() / "sidecar.jsonl";
    interchange::write_file(p, recs);
    detector::DetectorConfig cfg;
    cfg.sidecar_path = p;
    return detector::Detector(cfg);
  }
};

}  // namespace

TEST(ReportGolden, ResidualTable) {
  const auto t = losses::regression_errors(std::vector<double>{10, 15, 20, 25, 30},
                                           std::vector<double>{13, 17, 22, 26, 34});
  const std::string text = report::render(t, Format::kText);
  EXPECT_EQ(text, slurp(fs::path(SENSORYEVAL_GOLDEN_DIR) / "residual_table.txt"));
  EXPECT_NE(text.find("MAE : 2.4"), std::string::npos);
  EXPECT_EQ(report::render(t, Format::kText), text);
}

TEST(ReportGolden, DetectorReport) {
  const auto r = detector::DetectorReport::from_counts(229, 17, 5, 0.8341, 0.9756);
  EXPECT_EQ(report::render(r, Format::kText), slurp(fs::path(SENSORYEVAL_GOLDEN_DIR) / "detector_report.txt"));
}

TEST(Report, EmptyInputsGiveHeaderOnly) {
  const auto text = report::render(losses::ResidualTable{}, Format::kText);
  EXPECT_EQ(text, "Observation | y | y_hat | y - y_hat | |y - y_hat| | (y - y_hat)^2\n");
  EXPECT_EQ(report::render(std::vector<detector::DetectorReport>{}, Format::kCsv),
            "TP,FP,FN,Average IoU,mAP@0.5,Precision,Recall,F1 Score\n");
}

TEST(Report, CsvResidualTable) {
  const auto t = losses::regression_errors(std::vector<double>{1, 2}, std::vector<double>{2, 2});
  EXPECT_EQ(report::render(t, Format::kCsv),
            "Observation,y,y_hat,y - y_hat,|y - y_hat|,(y - y_hat)^2\n"
            "1,1,2,-1,1,1\n"
            "2,2,2,0,0,0\n"
            "sum,,,,1,1\n"
            "mae,0.5\nmse,0.5\nrmse,0.71\n");
}

TEST(Report, TrimmedAndFixedFormatting) {
  EXPECT_EQ(report::trimmed(2.4), "2.4");
  EXPECT_EQ(report::trimmed(2.6077), "2.61");
  EXPECT_EQ(report::trimmed(3.0), "3");
  EXPECT_EQ(report::trimmed(-0.001), "0");
  EXPECT_EQ(report::percent(0.9756), "97.56%");
  EXPECT_EQ(report::fixed(0.5, 3), "0.500");
}

TEST(Report, EvaluationShowsIndexErrorAndLevelAgreement) {
  model::EvaluationReport r;
  r.rows.push_back({"a.png", 1.4, 3.12, hedonic::level_for(3.12), hedonic::level_for(1.4)});
  r.rows.push_back({"b.png", 7.0, 7.63, hedonic::level_for(7.63), hedonic::level_for(6.0)});
  r.mae = (1.72 + 0.63) / 2;
  r.level_agreement = 0.5;
  const std::string text = report::render(r, Format::kText);
  EXPECT_NE(text.find("a.png | 1.40  | 3.12       | 1.72  | Dislike extremely | Dislike extremely | yes"),
            std::string::npos)
      << text;
  EXPECT_NE(text.find("Level agreement : 50.00%"), std::string::npos);
}

TEST(Pipeline, TwoFruitsGiveTwoIndices) {
  const Models m;
  const Scene sc = two_fruit_scene();
  const auto det = m.stub({{"scene.png", {sc.boxes[0], "guava", 0.9}}, {"scene.png", {sc.boxes[1], "guava", 0.8}}});
  const auto r = pipeline::run_pipeline(sc.image, "scene.png", det, *m.regressor);
  ASSERT_EQ(r.objects.size(), 2u);
  EXPECT_EQ(r.scored_count(), 2u);
  EXPECT_EQ(r.image_width, 128);
  EXPECT_EQ(r.image_height, 64);
  for (const auto& o : r.objects) {
    ASSERT_TRUE(o.acceptability);
    const Image8 crop = boxgeom::crop(sc.image, boxgeom::to_pixels(o.detection.box, 128, 64));
    const auto direct = model::predict_index(*m.regressor, crop);
    EXPECT_EQ(o.acceptability->index, direct.index);
    EXPECT_EQ(o.acceptability->level, direct.level);
  }
}

TEST(Pipeline, OnlyTargetCategoryIsScored) {
  const Models m;
  const Scene sc = two_fruit_scene();
  const auto det = m.stub({{"s.png", {sc.boxes[0], "apple", 0.9}}, {"s.png", {sc.boxes[1], "guava", 0.8}}});
  const auto r = pipeline::run_pipeline(sc.image, "s.png", det, *m.regressor);
  ASSERT_EQ(r.objects.size(), 2u);
  EXPECT_EQ(r.scored_count(), 1u);
  for (const auto& o : r.objects) EXPECT_EQ(o.acceptability.has_value(), o.detection.category == "guava");
  const auto j = pipeline::to_json(r);
  EXPECT_TRUE(j["objects"][0]["acceptability"].is_null());
  EXPECT_TRUE(j["objects"][1]["acceptability"].is_object());
  EXPECT_EQ(j["target_category"], "guava");

  const auto apples = pipeline::run_pipeline(sc.image, "s.png", det, *m.regressor, "apple");
  EXPECT_EQ(apples.scored_count(), 1u);
  EXPECT_TRUE(apples.objects[0].acceptability);
}

TEST(Pipeline, EmptyDetectionsAreNotAnError) {
  const Models m;
  const Scene sc = two_fruit_scene();
  const auto det = m.stub({});
  const auto r = pipeline::run_pipeline(sc.image, "none.png", det, *m.regressor);
  EXPECT_TRUE(r.objects.empty());
  EXPECT_EQ(pipeline::to_json(r)["objects"].size(), 0u);
}

TEST(Pipeline, JsonIsDeterministic) {
  const Models m;
  const Scene sc = two_fruit_scene();
  const auto det = m.stub({{"d.png", {sc.boxes[0], "guava", 0.9}}, {"d.png", {sc.boxes[1], "guava", 0.7}}});
  const auto a = pipeline::to_json(pipeline::run_pipeline(sc.image, "d.png", det, *m.regressor)).dump();
  const auto b = pipeline::to_json(pipeline::run_pipeline(sc.image, "d.png", det, *m.regressor)).dump();
  EXPECT_EQ(a, b);
  EXPECT_EQ(a.find("elapsed"), std::string::npos);
  const auto j = nlohmann::json::parse(a);
  EXPECT_EQ(j["objects"][0]["bbox"].size(), 4u);
  EXPECT_EQ(j["objects"][0]["acceptability"]["level"],
            std::string(hedonic::level_label(hedonic::level_for(j["objects"][0]["acceptability"]["index"].get<double>()))));
}
