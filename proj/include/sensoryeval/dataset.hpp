#pragma once

// Annotation records, the annotations CSV, train/validation splitting and a
// synthetic fruit generator whose labels come from its own render parameters.

#include <fmt/format.h>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <numbers>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "sensoryeval/boxgeom.hpp"
#include "sensoryeval/error.hpp"
#include "sensoryeval/hedonic.hpp"
#include "sensoryeval/image.hpp"

namespace sensoryeval::dataset {

inline constexpr std::string_view kCsvHeader =
    "image_path,color,shape,texture,annotator,timestamp,index,level";

struct AnnotationRecord {
  std::string image_path;
  hedonic::HedonicScore score;
  std::string annotator;
  std::string timestamp;  // ISO-8601
  double index = 0.0;
  hedonic::Level level = hedonic::Level::kDislikeExtremely;

  friend bool operator==(const AnnotationRecord&, const AnnotationRecord&) = default;
};

/// Builds a record with index and level derived from the score.
inline AnnotationRecord make_record(std::string image_path, const hedonic::HedonicScore& score,
                                    std::string annotator, std::string timestamp) {
  const auto result = hedonic::assess(score);
  return {std::move(image_path), score, std::move(annotator), std::move(timestamp), result.index,
          result.level};
}

inline std::string format_index(double index) { return fmt::format("{:.3f}", index); }

// --- CSV -------------------------------------------------------------------

namespace csv {

inline std::string quote(const std::string& field) {
  if (field.find_first_of(",\"\n\r") == std::string::npos) return field;
  std::string out = "\"";
  for (char c : field) {
    if (c == '"') out += '"';
    out += c;
  }
  out += '"';
  return out;
}

/// Splits one logical CSV row (RFC 4180 quoting). Returns false on an
/// unterminated quote.
inline bool split_row(const std::string& line, std::vector<std::string>& fields) {
  fields.clear();
  std::string cur;
  bool quoted = false;
  for (std::size_t i = 0; i < line.size(); ++i) {
    const char c = line[i];
    if (quoted) {
      if (c == '"') {
        if (i + 1 < line.size() && line[i + 1] == '"') {
          cur += '"';
          ++i;
        } else {
          quoted = false;
        }
      } else {
        cur += c;
      }
    } else if (c == '"') {
      quoted = true;
    } else if (c == ',') {
      fields.push_back(std::move(cur));
      cur.clear();
    } else {
      cur += c;
    }
  }
  fields.push_back(std::move(cur));
  return !quoted;
}

}  // namespace csv

inline std::string format_row(const AnnotationRecord& r) {
  return fmt::format("{},{},{},{},{},{},{},{}", csv::quote(r.image_path), r.score.color,
                     r.score.shape, r.score.texture, csv::quote(r.annotator),
                     csv::quote(r.timestamp), format_index(r.index),
                     csv::quote(std::string(hedonic::level_label(r.level))));
}

inline void write_annotations(std::ostream& out, const std::vector<AnnotationRecord>& records) {
  out << kCsvHeader << '\n';
  for (const auto& r : records) out << format_row(r) << '\n';
}

inline void save_annotations(const std::filesystem::path& path,
                             const std::vector<AnnotationRecord>& records) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path);
  if (!out) throw IoError("cannot write annotations: " + path.string());
  write_annotations(out, records);
}

/// Parses an annotations file. Derived columns are recomputed from the score
/// and must agree with the stored text. `base_dir`, when non-empty, is used
/// to check that referenced images exist; missing ones only add a warning.
inline std::vector<AnnotationRecord> parse_annotations(std::istream& in,
                                                       const std::filesystem::path& base_dir,
                                                       std::vector<std::string>* warnings) {
  std::string line;
  if (!std::getline(in, line)) throw ValidationError("annotations file is empty");
  if (!line.empty() && line.back() == '\r') line.pop_back();
  if (line.starts_with("\xEF\xBB\xBF")) line.erase(0, 3);
  if (line != kCsvHeader) throw ValidationError("unexpected annotations header: " + line);

  std::vector<AnnotationRecord> out;
  std::vector<std::string> f;
  int row = 1;
  while (std::getline(in, line)) {
    ++row;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    auto fail = [&](const std::string& what) {
      throw ValidationError(fmt::format("row {}: {}", row, what));
    };
    if (!csv::split_row(line, f)) fail("unterminated quoted field");
    if (f.size() != 8) fail(fmt::format("expected 8 fields, found {}", f.size()));

    double raw[3];
    const char* names[3] = {"color", "shape", "texture"};
    for (int k = 0; k < 3; ++k) {
      std::size_t used = 0;
      try {
        raw[k] = std::stod(f[1 + k], &used);
      } catch (const std::exception&) {
        fail(fmt::format("field {} is not a number", names[k]));
      }
      if (used != f[1 + k].size()) fail(fmt::format("field {} is not a number", names[k]));
    }
    const auto v = hedonic::validate_score(raw[0], raw[1], raw[2]);
    if (!v.ok()) {
      std::string msg;
      for (const auto& e : v.errors) msg += fmt::format(" field {} {};", e.field, e.message);
      fail("invalid score:" + msg);
    }
    AnnotationRecord rec = make_record(f[0], *v.score, f[4], f[5]);
    if (f[6] != format_index(rec.index)) {
      fail(fmt::format("stale label: stored index {} but score gives {}", f[6],
                       format_index(rec.index)));
    }
    if (f[7] != hedonic::level_label(rec.level)) {
      fail(fmt::format("stale label: stored level '{}' but score gives '{}'", f[7],
                       hedonic::level_label(rec.level)));
    }
    if (!base_dir.empty() && warnings != nullptr &&
        !std::filesystem::exists(base_dir / rec.image_path)) {
      warnings->push_back(fmt::format("row {}: image not found: {}", row, rec.image_path));
    }
    out.push_back(std::move(rec));
  }
  return out;
}

inline std::vector<AnnotationRecord> load_annotations(const std::filesystem::path& path,
                                                      std::vector<std::string>* warnings = nullptr) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open annotations: " + path.string());
  return parse_annotations(in, path.parent_path(), warnings);
}

// --- splitting -------------------------------------------------------------

struct DatasetSplit {
  std::vector<AnnotationRecord> train;
  std::vector<AnnotationRecord> val;
  std::uint64_t seed = 0;
  double ratio = 0.8;
};

/// Fisher-Yates driven directly by mt19937_64 so the permutation does not
/// depend on the standard library's distribution implementations.
template <typename T>
void seeded_shuffle(std::vector<T>& items, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  for (std::size_t i = items.size(); i > 1; --i) {
    const std::size_t j = static_cast<std::size_t>(rng() % i);
    std::swap(items[i - 1], items[j]);
  }
}

/// Train size is floor(ratio * N), kept within [1, N - 1].
inline std::size_t train_size(std::size_t n, double ratio) {
  auto k = static_cast<std::size_t>(std::floor(ratio * static_cast<double>(n) + 1e-9));
  return std::clamp<std::size_t>(k, 1, n - 1);
}

inline DatasetSplit split(std::vector<AnnotationRecord> records, double ratio, std::uint64_t seed) {
  if (!(ratio > 0.0 && ratio < 1.0)) throw ValidationError("split ratio must be in (0, 1)");
  if (records.size() < 2) throw ValidationError("split needs at least 2 records");
  const std::size_t k = train_size(records.size(), ratio);
  seeded_shuffle(records, seed);
  DatasetSplit out;
  out.seed = seed;
  out.ratio = ratio;
  out.train.assign(records.begin(), records.begin() + static_cast<std::ptrdiff_t>(k));
  out.val.assign(records.begin() + static_cast<std::ptrdiff_t>(k), records.end());
  return out;
}

// --- synthetic fruit -------------------------------------------------------

struct Range {
  double lo = 0.0;
  double hi = 1.0;
};

struct SynthSpec {
  int count = 1;
  std::uint64_t seed = 0;
  int image_size = 128;
  Range hue_degradation;   // g
  Range blemish_density;   // d
  Range eccentricity;      // e
};

/// Degradation parameters of one fruit, each in [0, 1]; 0 is pristine.
struct FruitParams {
  double g = 0.0;
  double d = 0.0;
  double e = 0.0;
};

/// Ground-truth scores implied by the render parameters.
inline hedonic::HedonicScore oracle_score(const FruitParams& p) {
  auto pts = [](double v) { return static_cast<int>(std::lround(1.0 + 8.0 * (1.0 - v))); };
  return {pts(p.g), pts(p.e), pts(p.d)};
}

struct SynthSample {
  Image8 image;
  boxgeom::BoundingBox box;  // pixels, tight around the rendered fruit
  FruitParams params;
  AnnotationRecord record;
};

namespace detail {

struct Rgb {
  double r, g, b;
};

inline Rgb lerp(const Rgb& a, const Rgb& b, double t) {
  return {a.r + (b.r - a.r) * t, a.g + (b.g - a.g) * t, a.b + (b.b - a.b) * t};
}

inline double unit(std::mt19937_64& rng) {
  return static_cast<double>(rng() >> 11) * (1.0 / 9007199254740992.0);
}

inline double in_range(std::mt19937_64& rng, const Range& r) { return r.lo + (r.hi - r.lo) * unit(rng); }

}  // namespace detail

/// Fruit foreground test used by the generator's own segmentation check:
/// the background is blue-dominant, the fruit is not.
inline bool is_fruit_pixel(std::uint8_t r, std::uint8_t g, std::uint8_t b) {
  return std::max<int>(r, g) - static_cast<int>(b) > 30;
}

/// Renders one fruit: a 45-degree rotated ellipse whose minor axis shrinks
/// with e, whose skin color runs from green to brown with g, and whose
/// surface carries a number of dark spots proportional to d.
inline SynthSample render_fruit(const FruitParams& p, int size, std::uint64_t seed) {
  if (size < 16) throw ValidationError("synthetic image size must be >= 16");
  for (double v : {p.g, p.d, p.e}) {
    if (!(v >= 0.0 && v <= 1.0)) throw ValidationError("fruit parameters must lie in [0, 1]");
  }
  using detail::Rgb;
  std::mt19937_64 rng(seed);
  auto u = [&] { return detail::unit(rng); };

  SynthSample s;
  s.params = p;
  s.image = Image8(size, size, 3);

  // Textured bluish-gray background.
  const int tile = std::max(4, size / 16);
  for (int y = 0; y < size; ++y) {
    for (int x = 0; x < size; ++x) {
      const bool check = ((x / tile) + (y / tile)) % 2 == 0;
      const double base = check ? 0.0 : 12.0;
      const double n = (u() - 0.5) * 20.0;
      s.image.at(x, y, 0) = saturate_u8(80 + base + n);
      s.image.at(x, y, 1) = saturate_u8(92 + base + n);
      s.image.at(x, y, 2) = saturate_u8(140 + base + n);
    }
  }

  const double a = size * (0.30 + 0.04 * u());       // semi-major
  const double b = a * (1.0 - 0.6 * p.e);            // semi-minor
  const double theta = std::numbers::pi / 4.0 + (u() - 0.5) * 0.2;
  const double ct = std::cos(theta);
  const double st = std::sin(theta);
  const double half_w = std::sqrt(a * a * ct * ct + b * b * st * st);
  const double half_h = std::sqrt(a * a * st * st + b * b * ct * ct);
  const double margin_x = size / 2.0 - half_w - 1.0;
  const double margin_y = size / 2.0 - half_h - 1.0;
  const double cx = size / 2.0 + (u() - 0.5) * std::max(0.0, margin_x);
  const double cy = size / 2.0 + (u() - 0.5) * std::max(0.0, margin_y);

  const Rgb pristine{105.0, 185.0, 55.0};
  const Rgb degraded{170.0, 118.0, 48.0};
  const Rgb skin = detail::lerp(pristine, degraded, p.g);
  const Rgb spot{78.0, 50.0, 18.0};

  struct Spot {
    double x, y, r;
  };
  std::vector<Spot> spots;
  const int n_spots = static_cast<int>(std::lround(p.d * 40.0));
  for (int i = 0; i < n_spots; ++i) {
    const double rr = std::sqrt(u()) * 0.85;
    const double ang = 2.0 * std::numbers::pi * u();
    const double lx = rr * a * std::cos(ang);
    const double ly = rr * b * std::sin(ang);
    spots.push_back({cx + lx * ct - ly * st, cy + lx * st + ly * ct, size * (0.015 + 0.02 * u())});
  }

  // Pixel (x, y) covers [x, x+1) x [y, y+1); its center is (x+0.5, y+0.5).
  for (int y = 0; y < size; ++y) {
    for (int x = 0; x < size; ++x) {
      const double dx = x + 0.5 - cx;
      const double dy = y + 0.5 - cy;
      const double lx = dx * ct + dy * st;
      const double ly = -dx * st + dy * ct;
      const double q = (lx * lx) / (a * a) + (ly * ly) / (b * b);
      if (q > 1.0) continue;
      const double shade = 1.0 - 0.22 * q;
      Rgb c = skin;
      for (const auto& sp : spots) {
        const double ddx = x + 0.5 - sp.x;
        const double ddy = y + 0.5 - sp.y;
        if (ddx * ddx + ddy * ddy <= sp.r * sp.r) {
          c = spot;
          break;
        }
      }
      const double n = (u() - 0.5) * 10.0;
      s.image.at(x, y, 0) = saturate_u8(c.r * shade + n);
      s.image.at(x, y, 1) = saturate_u8(c.g * shade + n);
      s.image.at(x, y, 2) = saturate_u8(c.b * shade + n * 0.5);
    }
  }

  s.box = {cx, cy, 2.0 * half_w, 2.0 * half_h};
  return s;
}

/// Deterministic for a fixed spec. Image paths are "synth_NNNN.png".
inline std::vector<SynthSample> synth_generate(const SynthSpec& spec) {
  if (spec.count <= 0) throw ValidationError("synthetic count must be positive");
  for (const Range& r : {spec.hue_degradation, spec.blemish_density, spec.eccentricity}) {
    if (!(0.0 <= r.lo && r.lo <= r.hi && r.hi <= 1.0)) {
      throw ValidationError("synthetic parameter ranges must lie within [0, 1]");
    }
  }
  std::mt19937_64 rng(spec.seed);
  std::vector<SynthSample> out;
  out.reserve(static_cast<std::size_t>(spec.count));
  for (int i = 0; i < spec.count; ++i) {
    FruitParams p;
    p.g = detail::in_range(rng, spec.hue_degradation);
    p.d = detail::in_range(rng, spec.blemish_density);
    p.e = detail::in_range(rng, spec.eccentricity);
    const std::uint64_t render_seed = rng();
    SynthSample s = render_fruit(p, spec.image_size, render_seed);
    s.record = make_record(fmt::format("synth_{:04d}.png", i), oracle_score(p), "synth",
                           "2000-01-01T00:00:00Z");
    out.push_back(std::move(s));
  }
  return out;
}

}  // namespace sensoryeval::dataset
