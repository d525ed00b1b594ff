#include <gtest/gtest.h>

#include <cmath>

#include "clipgeom/separability_classifier.hpp"
#include "test_util.hpp"

using namespace clipgeom;

namespace {

RowMatrix column(std::initializer_list<double> values) {
  RowMatrix m(static_cast<Eigen::Index>(values.size()), 1);
  Eigen::Index r = 0;
  for (double v : values) m(r++, 0) = v;
  return m;
}

// Two 2-D classes split by x0 = 0 with a gap of 2 * half_gap, x1 uniform noise.
std::pair<RowMatrix, RowMatrix> separable_2d(std::size_t per_class, double half_gap,
                                            std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  RowMatrix pos(static_cast<Eigen::Index>(per_class), 2), neg(static_cast<Eigen::Index>(per_class), 2);
  for (Eigen::Index r = 0; r < pos.rows(); ++r) {
    pos(r, 0) = half_gap + u(rng);
    pos(r, 1) = 2 * u(rng) - 1;
    neg(r, 0) = -half_gap - u(rng);
    neg(r, 1) = 2 * u(rng) - 1;
  }
  return {pos, neg};
}

}  // namespace

TEST(TopFeatures, HandValues) {
  EXPECT_EQ(top_separable_features(Eigen::Vector3d(0.1, 5.0, 2.0), 2), (std::vector<std::size_t>{1, 2}));
  EXPECT_EQ(top_separable_features(Eigen::Vector3d(1, 1, 1), 3), (std::vector<std::size_t>{0, 1, 2}));
  EXPECT_THROW(top_separable_features(Eigen::Vector3d(1, 1, 1), 4), InvalidArgument);
  EXPECT_THROW(top_separable_features(Eigen::Vector3d(1, 1, 1), 0), InvalidArgument);
}

TEST(TopFeatures, PlantedFeaturesComeFirst) {
  RowMatrix a = testutil::gaussian_matrix(300, 10, 1);
  RowMatrix b = testutil::gaussian_matrix(300, 10, 2);
  a.col(7).array() += 6.0;
  a.col(3).array() -= 3.0;
  const auto top = top_separable_features(compute_stats(EmbeddingSet(Modality::image, a)),
                                          compute_stats(EmbeddingSet(Modality::text, b)), 2);
  EXPECT_EQ(top, (std::vector<std::size_t>{7, 3}));
}

TEST(TrainLinear, OneDimensionalSeparable) {
  const auto model = train_linear(column({2, 3}), column({-2, -3}));
  const auto ev = evaluate(model, column({2, 3}), column({-2, -3}));
  EXPECT_EQ(ev.accuracy, 1.0);
  EXPECT_GT(model.margin, 0.0);
}

TEST(TrainLinear, XorIsNotSeparable) {
  RowMatrix pos(2, 2), neg(2, 2);
  pos << 1, 1, -1, -1;
  neg << 1, -1, -1, 1;
  const auto model = train_linear(pos, neg);
  EXPECT_LT(evaluate(model, pos, neg).accuracy, 1.0);
  EXPECT_LE(model.margin, 0.0);
}

TEST(TrainLinear, Errors) {
  EXPECT_THROW(train_linear(RowMatrix(0, 1), column({1})), InvalidArgument);
  EXPECT_THROW(train_linear(column({1}), column({1}), 0.0), InvalidArgument);
  EXPECT_THROW(train_linear(column({1}), column({1}), 1e-4, 0), InvalidArgument);
  RowMatrix two(1, 2);
  two << 1, 2;
  EXPECT_THROW(train_linear(column({1}), two), InvalidArgument);
}

TEST(TrainLinearProperty, SeparableWithinEpochBudget) {
  for (std::uint64_t seed = 1; seed <= 10; ++seed) {
    const auto [pos, neg] = separable_2d(100, 0.5, seed);
    const auto probe = train_linear(pos, neg, kDefaultSvmLambda, 1, seed);
    // geometric margin of x0 = 0 and data radius, both in standardized units
    RowMatrix all(200, 2);
    all << pos, neg;
    const RowMatrix z = (all.rowwise() - probe.center.transpose()) * probe.scale.cwiseInverse().asDiagonal();
    const double r = z.rowwise().norm().maxCoeff();
    const double gamma =
        std::min(z.topRows(100).col(0).minCoeff(), -z.bottomRows(100).col(0).maxCoeff());
    ASSERT_GT(gamma, 0.0);
    const auto epochs = static_cast<std::size_t>(std::ceil(10.0 * (r / gamma) * (r / gamma)));
    const auto model = train_linear(pos, neg, kDefaultSvmLambda, epochs, seed);
    EXPECT_EQ(evaluate(model, pos, neg).accuracy, 1.0) << "seed " << seed << " epochs " << epochs;
  }
}

TEST(TrainLinearProperty, DeterministicPerSeed) {
  const auto [pos, neg] = separable_2d(50, 0.2, 3);
  const auto a = train_linear(pos, neg, 1e-3, 20, 9);
  const auto b = train_linear(pos, neg, 1e-3, 20, 9);
  EXPECT_EQ(a.weights, b.weights);
  EXPECT_EQ(a.bias, b.bias);
  EXPECT_EQ(a.margin, b.margin);
}

TEST(LinearModelProperty, PredictionInvariantToJointPositiveScaling) {
  const auto [pos, neg] = separable_2d(40, 0.1, 4);
  auto model = train_linear(pos, neg, 1e-2, 5, 1);
  const RowMatrix probe = testutil::gaussian_matrix(200, 2, 8);
  std::vector<bool> before;
  for (Eigen::Index r = 0; r < probe.rows(); ++r) before.push_back(model.predict_positive(probe.row(r)));
  for (double k : {1e-3, 0.5, 7.0, 1e4}) {
    auto scaled = model;
    scaled.weights *= k;
    scaled.bias *= k;
    for (Eigen::Index r = 0; r < probe.rows(); ++r) {
      EXPECT_EQ(scaled.predict_positive(probe.row(r)), before[static_cast<std::size_t>(r)]);
    }
  }
}

TEST(Evaluate, AllPositiveModelOnBalancedData) {
  LinearModel m;
  m.weights = Vector::Zero(1);
  m.bias = 1.0;
  m.feature_indices = {0};
  m.center = Vector::Zero(1);
  m.scale = Vector::Ones(1);
  const auto ev = evaluate(m, column({1, 2, 3}), column({4, 5, 6}));
  EXPECT_EQ(ev.accuracy, 0.5);
  EXPECT_EQ(ev.confusion[0][0], 3u);
  EXPECT_EQ(ev.confusion[1][0], 3u);
}

TEST(TrainModalitySeparator, HeldOutSeparableGaussians) {
  // feature 4 carries a 10-sigma gap between modalities
  RowMatrix img = testutil::gaussian_matrix(400, 8, 1);
  RowMatrix txt = testutil::gaussian_matrix(400, 8, 2);
  img.col(4).array() += 10.0;
  const EmbeddingSet ti(Modality::image, img.topRows(200)), tt(Modality::text, txt.topRows(200));
  const auto model = train_modality_separator(ti, tt, {4, 0});
  EXPECT_EQ(model.feature_indices, (std::vector<std::size_t>{4, 0}));
  const auto train = evaluate(model, select_features(ti.data(), {4, 0}), select_features(tt.data(), {4, 0}));
  const auto held = evaluate(model, select_features(img.bottomRows(200), {4, 0}),
                             select_features(txt.bottomRows(200), {4, 0}));
  EXPECT_EQ(train.accuracy, 1.0);
  EXPECT_EQ(held.accuracy, 1.0);
  EXPECT_THROW(train_modality_separator(ti, tt, {4, 4}), InvalidArgument);
  EXPECT_THROW(train_modality_separator(ti, tt, {}), InvalidArgument);
  EXPECT_THROW(train_modality_separator(ti, tt, {8}), InvalidArgument);
}
