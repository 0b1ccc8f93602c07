#include <gtest/gtest.h>

#include <random>

#include "sensoryeval/losses.hpp"

using namespace sensoryeval;
using namespace sensoryeval::losses;

TEST(RegressionErrors, WorkedTable) {
  const std::vector<double> y = {10, 15, 20, 25, 30};
  const std::vector<double> yh = {13, 17, 22, 26, 34};
  const auto t = regression_errors(y, yh);
  EXPECT_NEAR(t.mae, 2.4, 1e-12);
  EXPECT_NEAR(t.mse, 6.8, 1e-12);
  EXPECT_NEAR(t.rmse, 2.6077, 1e-4);
  EXPECT_DOUBLE_EQ(t.sum_abs, 12.0);
  EXPECT_DOUBLE_EQ(t.sum_sq, 34.0);
  ASSERT_EQ(t.rows.size(), 5u);
  EXPECT_DOUBLE_EQ(t.rows[4].residual, -4.0);
  EXPECT_DOUBLE_EQ(t.rows[4].sq_residual, 16.0);
}

TEST(RegressionErrors, PerfectFit) {
  const std::vector<double> y = {1.5, -2, 7};
  const auto t = regression_errors(y, y);
  EXPECT_EQ(t.mae, 0.0);
  EXPECT_EQ(t.mse, 0.0);
  EXPECT_EQ(t.rmse, 0.0);
}

TEST(RegressionErrors, SingleResidual) {
  const std::vector<double> y = {0};
  const std::vector<double> yh = {3};
  const auto t = regression_errors(y, yh);
  EXPECT_EQ(t.mae, 3.0);
  EXPECT_EQ(t.mse, 9.0);
  EXPECT_EQ(t.rmse, 3.0);
}

TEST(RegressionErrors, RejectsBadLengths) {
  const std::vector<double> a = {1, 2};
  const std::vector<double> b = {1};
  EXPECT_THROW(regression_errors(a, b), ValidationError);
  EXPECT_THROW(regression_errors(std::vector<double>{}, std::vector<double>{}), ValidationError);
}

TEST(RegressionErrors, RandomProperties) {
  std::mt19937_64 rng(1);
  std::normal_distribution<double> n(0.0, 3.0);
  std::uniform_int_distribution<int> len(1, 20);
  for (int i = 0; i < 5000; ++i) {
    std::vector<double> y(static_cast<std::size_t>(len(rng))), yh(y.size());
    for (std::size_t k = 0; k < y.size(); ++k) {
      y[k] = n(rng);
      yh[k] = n(rng);
    }
    const auto t = regression_errors(y, yh);
    ASSERT_NEAR(t.rmse * t.rmse, t.mse, 1e-9);
    ASSERT_LE(t.mae, t.rmse + 1e-12);

    const double shift = n(rng);
    const double k = n(rng);
    std::vector<double> ys = y, yhs = yh, yk = y, yhk = yh;
    for (std::size_t j = 0; j < y.size(); ++j) {
      ys[j] += shift;
      yhs[j] += shift;
      yk[j] *= k;
      yhk[j] *= k;
    }
    const auto ts = regression_errors(ys, yhs);
    ASSERT_NEAR(ts.mae, t.mae, 1e-9);
    ASSERT_NEAR(ts.mse, t.mse, 1e-8);
    const auto tk = regression_errors(yk, yhk);
    ASSERT_NEAR(tk.mae, std::abs(k) * t.mae, 1e-9 * (1 + std::abs(k) * t.mae));
    ASSERT_NEAR(tk.rmse, std::abs(k) * t.rmse, 1e-9 * (1 + std::abs(k) * t.rmse));
    ASSERT_NEAR(tk.mse, k * k * t.mse, 1e-9 * (1 + k * k * t.mse));
  }
}

TEST(RegressionErrors, MaeEqualsRmseForEqualMagnitudes) {
  const std::vector<double> y = {1, 2, 3};
  const std::vector<double> yh = {2, 1, 4};
  const auto t = regression_errors(y, yh);
  EXPECT_NEAR(t.mae, t.rmse, 1e-15);
}

TEST(CiouLoss, IdenticalIsZero) {
  const boxgeom::BoundingBox b{1, 2, 3, 4};
  EXPECT_DOUBLE_EQ(ciou_loss(b, b), 0.0);
}

TEST(CiouLoss, ConcentricSameAspect) {
  const boxgeom::BoundingBox a{0, 0, 2, 4};
  const boxgeom::BoundingBox b{0, 0, 1, 2};
  EXPECT_NEAR(ciou_loss(a, b), 1.0 - 0.25, 1e-15);
}

TEST(CiouLoss, AgreesWithTerms) {
  std::mt19937_64 rng(4);
  std::uniform_real_distribution<double> u(0.1, 5.0);
  for (int i = 0; i < 1000; ++i) {
    const boxgeom::BoundingBox p{u(rng), u(rng), u(rng), u(rng)};
    const boxgeom::BoundingBox g{u(rng), u(rng), u(rng), u(rng)};
    ASSERT_NEAR(ciou_loss(p, g), 1.0 - boxgeom::ciou_terms(p, g).ciou, 1e-15);
    ASSERT_GT(ciou_loss(p, g), 0.0);
  }
}

namespace {

YoloGrid make_grid(int cells, int boxes, int classes) {
  YoloGrid g;
  g.cells = cells;
  g.boxes_per_cell = boxes;
  g.slots.assign(static_cast<std::size_t>(cells) * boxes, YoloBox{0.5, 0.5, 0.25, 0.25, 1.0,
                                                                   std::vector<double>(classes, 0.0)});
  g.responsible.assign(g.slots.size(), false);
  return g;
}

}  // namespace

TEST(YoloLoss, EqualGridsGiveZero) {
  auto t = make_grid(9, 2, 3);
  t.responsible[4] = true;
  EXPECT_EQ(yolo_composite_loss(t, t), 0.0);
}

TEST(YoloLoss, SingleCoordinateOffByOne) {
  auto t = make_grid(4, 1, 1);
  t.responsible[2] = true;
  auto p = t;
  p.slots[2].x += 1.0;
  EXPECT_DOUBLE_EQ(yolo_composite_loss(p, t, {1, 1, 1, 1}), 1.0);
  EXPECT_DOUBLE_EQ(yolo_composite_loss(p, t), 5.0);
}

TEST(YoloLoss, MatchesTermByTermSum) {
  std::mt19937_64 rng(8);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  for (int trial = 0; trial < 200; ++trial) {
    auto t = make_grid(9, 2, 3);
    auto p = t;
    for (std::size_t i = 0; i < t.slots.size(); ++i) {
      for (YoloGrid* g : {&t, &p}) {
        auto& s = g->slots[i];
        s = {u(rng), u(rng), u(rng), u(rng), u(rng), {u(rng), u(rng), u(rng)}};
      }
      t.responsible[i] = u(rng) < 0.4;
    }
    const YoloLossWeights w{u(rng), u(rng), u(rng), u(rng)};
    double coord = 0, wh = 0, conf = 0, cls = 0;
    for (std::size_t i = 0; i < t.slots.size(); ++i) {
      if (!t.responsible[i]) continue;
      const auto& a = t.slots[i];
      const auto& b = p.slots[i];
      coord += std::pow(a.x - b.x, 2) + std::pow(a.y - b.y, 2);
      wh += std::pow(std::sqrt(a.w) - std::sqrt(b.w), 2) + std::pow(std::sqrt(a.h) - std::sqrt(b.h), 2);
      conf += std::pow(a.confidence - b.confidence, 2);
      for (int c = 0; c < 3; ++c) cls += std::pow(a.class_probs[c] - b.class_probs[c], 2);
    }
    const double expected = w.coord * coord + w.wh * wh + w.conf * conf + w.cls * cls;
    ASSERT_NEAR(yolo_composite_loss(p, t, w), expected, 1e-9);

    // Additivity over a split of the responsible slots.
    auto ta = t, tb = t;
    for (std::size_t i = 0; i < t.slots.size(); ++i) {
      ta.responsible[i] = t.responsible[i] && i % 2 == 0;
      tb.responsible[i] = t.responsible[i] && i % 2 == 1;
    }
    ASSERT_NEAR(yolo_composite_loss(p, ta, w) + yolo_composite_loss(p, tb, w), expected, 1e-9);
  }
}

TEST(YoloLoss, Validation) {
  auto t = make_grid(4, 1, 1);
  t.responsible[0] = true;
  auto p = t;
  p.slots[0].w = -0.1;
  EXPECT_THROW(yolo_composite_loss(p, t), ValidationError);
  EXPECT_THROW(yolo_composite_loss(make_grid(4, 2, 1), t), ValidationError);
  EXPECT_THROW(yolo_composite_loss(t, t, {-1, 1, 1, 1}), ValidationError);
}
