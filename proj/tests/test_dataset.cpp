#include <gtest/gtest.h>

#include <filesystem>
#include <set>
#include <sstream>

#include <unistd.h>

#include "sensoryeval/dataset.hpp"
#include "sensoryeval/image_io.hpp"
#include "sensoryeval/interchange.hpp"

using namespace sensoryeval;
using namespace sensoryeval::dataset;
namespace fs = std::filesystem;

namespace {

std::vector<AnnotationRecord> sample_records(int n) {
  std::vector<AnnotationRecord> out;
  for (int i = 0; i < n; ++i) {
    out.push_back(make_record(fmt::format("img/{:03d}.png", i), {1 + i % 9, 1 + (i * 4) % 9, 1 + (i * 7) % 9},
                              "ann", "2024-01-02T03:04:05Z"));
  }
  return out;
}

std::vector<AnnotationRecord> parse_text(const std::string& text) {
  std::istringstream in(text);
  return parse_annotations(in, {}, nullptr);
}

fs::path temp_dir(const std::string& name) {
  const fs::path p = fs::temp_directory_path() / ("sensoryeval_" + name + "_" + std::to_string(::getpid()));
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

}  // namespace

TEST(Annotations, RecordDerivesIndexAndLevel) {
  const auto r = make_record("a.png", {8, 4, 6}, "x", "t");
  EXPECT_NEAR(r.index, 6.4, 1e-12);
  EXPECT_EQ(r.level, hedonic::Level::kLikeModerately);
  EXPECT_EQ(format_row(r), "a.png,8,4,6,x,t,6.400,Like moderately");
}

TEST(Annotations, ParsesWellFormedFile) {
  const std::string text = std::string(kCsvHeader) +
                           "\na.png,9,9,9,x,t,9.000,Like extremely\n"
                           "b.png,5,5,5,x,t,5.000,Neither like nor dislike\n"
                           "\"c,1.png\",8,4,6,\"a \"\"b\"\"\",t,6.400,Like moderately\n";
  const auto recs = parse_text(text);
  ASSERT_EQ(recs.size(), 3u);
  EXPECT_EQ(recs[2].image_path, "c,1.png");
  EXPECT_EQ(recs[2].annotator, "a \"b\"");
}

TEST(Annotations, RejectsOutOfRangeScoreWithRowAndField) {
  const std::string text = std::string(kCsvHeader) +
                           "\na.png,9,9,9,x,t,9.000,Like extremely\n"
                           "b.png,5,5,10,x,t,6.000,Like moderately\n";
  try {
    parse_text(text);
    FAIL();
  } catch (const ValidationError& e) {
    const std::string msg = e.what();
    EXPECT_NE(msg.find("row 3"), std::string::npos) << msg;
    EXPECT_NE(msg.find("texture"), std::string::npos) << msg;
  }
}

TEST(Annotations, DetectsStaleDerivedColumns) {
  const std::string corrupt_index = std::string(kCsvHeader) + "\na.png,8,4,6,x,t,6.500,Like moderately\n";
  const std::string corrupt_level = std::string(kCsvHeader) + "\na.png,8,4,6,x,t,6.400,Like slightly\n";
  for (const auto& text : {corrupt_index, corrupt_level}) {
    try {
      parse_text(text);
      FAIL();
    } catch (const ValidationError& e) {
      EXPECT_NE(std::string(e.what()).find("stale label"), std::string::npos);
    }
  }
}

TEST(Annotations, RejectsMalformedRows) {
  const std::string h(kCsvHeader);
  EXPECT_THROW(parse_text(""), ValidationError);
  EXPECT_THROW(parse_text("a,b,c\n"), ValidationError);
  EXPECT_THROW(parse_text(h + "\na.png,8,4,6,x,t,6.400\n"), ValidationError);
  EXPECT_THROW(parse_text(h + "\n\"a.png,8,4,6,x,t,6.400,Like moderately\n"), ValidationError);
  EXPECT_THROW(parse_text(h + "\na.png,8x,4,6,x,t,6.400,Like moderately\n"), ValidationError);
  EXPECT_THROW(parse_text(h + "\na.png,4.5,4,6,x,t,6.400,Like moderately\n"), ValidationError);
}

TEST(Annotations, AcceptsCrlfAndBom) {
  const std::string text = "\xEF\xBB\xBF" + std::string(kCsvHeader) + "\r\na.png,9,9,9,x,t,9.000,Like extremely\r\n";
  EXPECT_EQ(parse_text(text).size(), 1u);
}

TEST(Annotations, SaveLoadRoundTrip) {
  const fs::path dir = temp_dir("roundtrip");
  auto recs = sample_records(40);
  recs[3].annotator = "name, with comma";
  recs[4].timestamp = "quote \" inside";
  save_annotations(dir / "annotations.csv", recs);
  std::vector<std::string> warnings;
  const auto back = load_annotations(dir / "annotations.csv", &warnings);
  EXPECT_EQ(back, recs);
  EXPECT_EQ(warnings.size(), 40u);
  fs::remove_all(dir);
}

TEST(Annotations, MissingFileIsIoError) {
  EXPECT_THROW(load_annotations("/nonexistent/annotations.csv"), IoError);
}

TEST(Split, SizesFollowRatio) {
  auto s = split(sample_records(299), 0.8, 1);
  EXPECT_EQ(s.train.size(), 239u);
  EXPECT_EQ(s.val.size(), 60u);
  s = split(sample_records(10), 0.8, 1);
  EXPECT_EQ(s.train.size(), 8u);
  EXPECT_EQ(s.val.size(), 2u);
  s = split(sample_records(2), 0.99, 1);
  EXPECT_EQ(s.train.size(), 1u);
}

TEST(Split, Validation) {
  EXPECT_THROW(split(sample_records(1), 0.8, 0), ValidationError);
  EXPECT_THROW(split(sample_records(5), 1.0, 0), ValidationError);
  EXPECT_THROW(split(sample_records(5), 0.0, 0), ValidationError);
}

TEST(Split, DeterministicAndDisjoint) {
  const auto recs = sample_records(57);
  std::set<std::string> all;
  for (const auto& r : recs) all.insert(r.image_path);
  for (std::uint64_t seed = 0; seed < 1000; ++seed) {
    const auto a = split(recs, 0.8, seed);
    const auto b = split(recs, 0.8, seed);
    ASSERT_EQ(a.train, b.train);
    ASSERT_EQ(a.val, b.val);
    std::set<std::string> seen;
    for (const auto& r : a.train) seen.insert(r.image_path);
    for (const auto& r : a.val) ASSERT_TRUE(seen.insert(r.image_path).second);
    ASSERT_EQ(seen, all);
    ASSERT_LE(std::abs(static_cast<double>(a.train.size()) - 0.8 * 57), 1.0);
  }
  EXPECT_NE(split(recs, 0.8, 1).train, split(recs, 0.8, 2).train);
}

TEST(Synth, OracleScores) {
  EXPECT_EQ(oracle_score({0, 0, 0}), (hedonic::HedonicScore{9, 9, 9}));
  EXPECT_EQ(oracle_score({1, 1, 1}), (hedonic::HedonicScore{1, 1, 1}));
  EXPECT_EQ(oracle_score({0.5, 0.5, 0.5}), (hedonic::HedonicScore{5, 5, 5}));
  const auto r = hedonic::assess(oracle_score({0.5, 0.5, 0.5}));
  EXPECT_DOUBLE_EQ(r.index, 5.0);
  EXPECT_EQ(r.level, hedonic::Level::kNeither);
  // color follows g, shape follows e, texture follows d.
  EXPECT_EQ(oracle_score({1, 0, 0.5}), (hedonic::HedonicScore{1, 5, 9}));
}

TEST(Synth, OracleIsMonotone) {
  for (int i = 0; i <= 100; ++i) {
    const double v = i / 100.0;
    const double w = std::min(1.0, v + 0.01);
    const auto a = oracle_score({v, v, v});
    const auto b = oracle_score({w, w, w});
    ASSERT_LE(b.color, a.color);
    ASSERT_LE(b.shape, a.shape);
    ASSERT_LE(b.texture, a.texture);
  }
}

TEST(Synth, DeterministicForFixedSeed) {
  SynthSpec spec;
  spec.count = 4;
  spec.seed = 9;
  spec.image_size = 48;
  const auto a = synth_generate(spec);
  const auto b = synth_generate(spec);
  ASSERT_EQ(a.size(), 4u);
  for (std::size_t i = 0; i < a.size(); ++i) {
    EXPECT_EQ(a[i].image, b[i].image);
    EXPECT_EQ(a[i].record, b[i].record);
    EXPECT_EQ(a[i].box, b[i].box);
  }
  EXPECT_EQ(a[2].record.image_path, "synth_0002.png");
  spec.seed = 10;
  EXPECT_NE(synth_generate(spec)[0].image, a[0].image);
}

TEST(Synth, BoxAgreesWithSegmentation) {
  SynthSpec spec;
  spec.count = 60;
  spec.seed = 3;
  spec.image_size = 96;
  for (const auto& s : synth_generate(spec)) {
    int x0 = 1 << 30, y0 = 1 << 30, x1 = -1, y1 = -1;
    for (int y = 0; y < s.image.height(); ++y)
      for (int x = 0; x < s.image.width(); ++x) {
        if (!is_fruit_pixel(s.image.at(x, y, 0), s.image.at(x, y, 1), s.image.at(x, y, 2))) continue;
        x0 = std::min(x0, x);
        y0 = std::min(y0, y);
        x1 = std::max(x1, x + 1);
        y1 = std::max(y1, y + 1);
      }
    ASSERT_GT(x1, x0);
    EXPECT_GE(boxgeom::iou(s.box, boxgeom::from_corners(x0, y0, x1, y1)), 0.95)
        << fmt::format("g={} d={} e={}", s.params.g, s.params.d, s.params.e);
  }
}

TEST(Synth, ParameterValidation) {
  SynthSpec spec;
  spec.count = 0;
  EXPECT_THROW(synth_generate(spec), ValidationError);
  spec.count = 1;
  spec.eccentricity = {0.2, 1.5};
  EXPECT_THROW(synth_generate(spec), ValidationError);
  EXPECT_THROW(render_fruit({0, 0, 0}, 8, 0), ValidationError);
}

TEST(ImageIo, PngRoundTripIsBitExact) {
  const fs::path dir = temp_dir("png");
  SynthSpec spec;
  spec.image_size = 40;
  const Image8 img = synth_generate(spec)[0].image;
  io::write_image(dir / "a.png", img);
  EXPECT_EQ(io::read_image(dir / "a.png"), img);
  EXPECT_EQ(io::decode_image(io::encode_png(img)), img);
  Image8 gray(5, 3, 1, 17);
  io::write_image(dir / "g.png", gray);
  EXPECT_EQ(io::read_image(dir / "g.png"), gray);
  EXPECT_THROW(io::read_image(dir / "missing.png"), IoError);
  EXPECT_THROW(io::decode_image("not an image"), IoError);
  fs::remove_all(dir);
}

TEST(Interchange, LineRoundTrip) {
  interchange::DetectionRecord r{"images/a.png", {{0.5, 0.25, 0.2, 0.1}, "guava", 0.875}};
  const std::string line = interchange::format_line(r);
  std::istringstream in(line + "\n\n" + line + "\n");
  const auto back = interchange::parse(in);
  ASSERT_EQ(back.size(), 2u);
  EXPECT_EQ(back[0].image, r.image);
  EXPECT_EQ(back[0].detection.box, r.detection.box);
  EXPECT_EQ(back[0].detection.confidence, 0.875);
  EXPECT_EQ(interchange::group_by_image(back).at("images/a.png").size(), 2u);
}

TEST(Interchange, GroundTruthMayOmitConfidence) {
  std::istringstream in(R"({"image":"a.png","category":"guava","bbox":[0.5,0.5,0.2,0.2]})");
  EXPECT_EQ(interchange::parse(in)[0].detection.confidence, 1.0);
}

TEST(Interchange, ErrorsNameTheLine) {
  std::istringstream in("{\"image\":\"a.png\",\"category\":\"guava\",\"bbox\":[0.5,0.5,0.2,0.2]}\n{\"image\":1}\n");
  try {
    interchange::parse(in);
    FAIL();
  } catch (const ValidationError& e) {
    EXPECT_NE(std::string(e.what()).find("line 2"), std::string::npos);
  }
  std::istringstream bad_box(R"({"image":"a.png","category":"guava","bbox":[0.5,0.5,0,0.2]})");
  EXPECT_THROW(interchange::parse(bad_box), ValidationError);
}
