#pragma once

// Nine-point hedonic scoring: per-attribute scores, the weighted
// acceptability index and its consumer-likeability level.

#include <array>
#include <cmath>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "sensoryeval/error.hpp"

namespace sensoryeval::hedonic {

inline constexpr int kMinScore = 1;
inline constexpr int kMaxScore = 9;

/// Per-attribute hedonic points; 9 = extreme like, 1 = extreme dislike.
struct HedonicScore {
  int color = kMinScore;
  int shape = kMinScore;
  int texture = kMinScore;

  friend bool operator==(const HedonicScore&, const HedonicScore&) = default;
};

struct AttributeWeights {
  double color = 2.0;
  double shape = 1.0;
  double texture = 2.0;

  friend bool operator==(const AttributeWeights&, const AttributeWeights&) = default;
};

enum class Level {
  kDislikeExtremely,
  kDislikeVeryMuch,
  kDislikeModerately,
  kDislikeSlightly,
  kNeither,
  kLikeSlightly,
  kLikeModerately,
  kLikeExtremely,
};

inline constexpr std::array<Level, 8> kAllLevels = {
    Level::kDislikeExtremely, Level::kDislikeVeryMuch, Level::kDislikeModerately,
    Level::kDislikeSlightly,  Level::kNeither,         Level::kLikeSlightly,
    Level::kLikeModerately,   Level::kLikeExtremely,
};

/// Lower bounds (inclusive) of each level band above "Dislike extremely",
/// in the same order as kAllLevels[1..].
inline constexpr std::array<double, 7> kLevelLowerBounds = {3.5, 4.0, 4.5, 5.0, 5.5, 6.0, 6.5};

inline std::string_view level_label(Level level) {
  switch (level) {
    case Level::kDislikeExtremely: return "Dislike extremely";
    case Level::kDislikeVeryMuch: return "Dislike very much";
    case Level::kDislikeModerately: return "Dislike moderately";
    case Level::kDislikeSlightly: return "Dislike slightly";
    case Level::kNeither: return "Neither like nor dislike";
    case Level::kLikeSlightly: return "Like slightly";
    case Level::kLikeModerately: return "Like moderately";
    case Level::kLikeExtremely: return "Like extremely";
  }
  return "";
}

inline std::optional<Level> parse_level(std::string_view label) {
  for (Level level : kAllLevels) {
    if (level_label(level) == label) return level;
  }
  return std::nullopt;
}

/// Index 6.5 belongs to "Like extremely"; every other band is left-closed.
inline Level level_for(double index) {
  if (!std::isfinite(index)) {
    throw ValidationError("acceptability index must be finite");
  }
  int band = 0;
  for (double bound : kLevelLowerBounds) {
    if (index >= bound) ++band;
  }
  return kAllLevels[static_cast<std::size_t>(band)];
}

struct AcceptabilityResult {
  double index = 0.0;
  Level level = Level::kDislikeExtremely;
};

inline AcceptabilityResult make_result(double index) { return {index, level_for(index)}; }

struct FieldError {
  std::string field;
  std::string message;
};

struct ScoreValidation {
  std::optional<HedonicScore> score;
  std::vector<FieldError> errors;

  bool ok() const { return score.has_value(); }
};

/// Checks every field and reports all violations, not just the first.
/// Reals are accepted only when they carry an exact integer value.
inline ScoreValidation validate_score(double color, double shape, double texture) {
  ScoreValidation out;
  HedonicScore score;
  auto check = [&](std::string_view name, double raw, int& slot) {
    if (!std::isfinite(raw) || std::floor(raw) != raw) {
      out.errors.push_back({std::string(name), "must be an integer"});
      return;
    }
    if (raw < kMinScore || raw > kMaxScore) {
      out.errors.push_back({std::string(name), "must be in [1, 9]"});
      return;
    }
    slot = static_cast<int>(raw);
  };
  check("color", color, score.color);
  check("shape", shape, score.shape);
  check("texture", texture, score.texture);
  if (out.errors.empty()) out.score = score;
  return out;
}

inline void require_valid(const HedonicScore& s) {
  auto v = validate_score(s.color, s.shape, s.texture);
  if (!v.ok()) {
    std::string msg = "invalid hedonic score:";
    for (const auto& e : v.errors) msg += " " + e.field + " " + e.message + ";";
    throw ValidationError(msg);
  }
}

inline void require_valid(const AttributeWeights& w) {
  for (double x : {w.color, w.shape, w.texture}) {
    if (!std::isfinite(x) || x < 0.0) throw ValidationError("weights must be finite and >= 0");
  }
  if (w.color + w.shape + w.texture <= 0.0) throw ValidationError("degenerate weights");
}

/// Weighted mean of the three attribute scores.
inline double weighted_acceptability(const HedonicScore& score,
                                     const AttributeWeights& weights = {}) {
  require_valid(score);
  require_valid(weights);
  const double num = weights.color * score.color + weights.shape * score.shape +
                     weights.texture * score.texture;
  const double den = weights.color + weights.shape + weights.texture;
  return num / den;
}

inline AcceptabilityResult assess(const HedonicScore& score, const AttributeWeights& weights = {}) {
  return make_result(weighted_acceptability(score, weights));
}

}  // namespace sensoryeval::hedonic
