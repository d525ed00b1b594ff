#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <limits>
#include <numeric>
#include <unordered_set>
#include <vector>

#include <Eigen/Dense>

#include "clipgeom/embedding_store.hpp"
#include "clipgeom/error.hpp"
#include "clipgeom/moment_stats.hpp"
#include "clipgeom/random.hpp"

namespace clipgeom {

/// Linear decision rule over a subset of features. Inputs are standardized
/// with the stored centre/scale before the dot product; the positive class is
/// predicted when w . z + bias > 0.
struct LinearModel {
  Vector weights;
  double bias = 0.0;
  std::vector<std::size_t> feature_indices;
  Vector center;  // standardization fitted on the training pool
  Vector scale;
  double margin = 0.0;  // min_i y_i (w . z_i + bias) over the training data

  std::size_t width() const noexcept { return static_cast<std::size_t>(weights.size()); }

  double score(const Eigen::Ref<const Eigen::RowVectorXd>& x) const {
    const Vector z = ((x.transpose() - center).array() / scale.array()).matrix();
    return weights.dot(z) + bias;
  }
  bool predict_positive(const Eigen::Ref<const Eigen::RowVectorXd>& x) const {
    return score(x) > 0.0;
  }
};

inline constexpr double kDefaultSvmLambda = 1e-4;
inline constexpr std::size_t kDefaultSvmEpochs = 200;

/// Indices of the k most separable features, descending; ties to lower index.
inline std::vector<std::size_t> top_separable_features(const Vector& sep, std::size_t k) {
  detail::require(k >= 1 && k <= static_cast<std::size_t>(sep.size()),
                  "top_separable_features: k must lie in [1, n]");
  auto order = detail::descending_order(sep);
  order.resize(k);
  return order;
}

inline std::vector<std::size_t> top_separable_features(const ModalityStats& a,
                                                       const ModalityStats& b, std::size_t k) {
  return top_separable_features(separability(a, b).values, k);
}

/// Columns `indices` of `data`, in the given order.
inline RowMatrix select_features(const RowMatrix& data, const std::vector<std::size_t>& indices) {
  RowMatrix out(data.rows(), static_cast<Eigen::Index>(indices.size()));
  for (std::size_t c = 0; c < indices.size(); ++c) {
    detail::require(indices[c] < static_cast<std::size_t>(data.cols()),
                    "feature index out of range");
    out.col(static_cast<Eigen::Index>(c)) = data.col(static_cast<Eigen::Index>(indices[c]));
  }
  return out;
}

/// Hinge-loss linear SVM trained with the Pegasos stochastic subgradient
/// schedule eta_t = 1 / (lambda t). Each epoch visits every training point
/// once in a seeded random order. The bias is learned as the weight of a
/// constant feature. Returns the final iterate.
inline LinearModel train_linear(const RowMatrix& pos, const RowMatrix& neg,
                                double lambda = kDefaultSvmLambda,
                                std::size_t epochs = kDefaultSvmEpochs, std::uint64_t seed = 0) {
  detail::require(pos.rows() > 0 && neg.rows() > 0, "train_linear: both classes must be nonempty");
  detail::require(pos.cols() >= 1 && pos.cols() == neg.cols(),
                  "train_linear: classes must share a positive feature width");
  detail::require(lambda > 0.0 && std::isfinite(lambda), "train_linear: lambda must be positive");
  detail::require(epochs >= 1, "train_linear: epochs must be >= 1");
  if (!pos.allFinite() || !neg.allFinite()) throw NumericError("train_linear: non-finite features");

  const Eigen::Index k = pos.cols();
  const Eigen::Index np = pos.rows();
  const Eigen::Index total = np + neg.rows();
  RowMatrix x(total, k);
  x.topRows(np) = pos;
  x.bottomRows(neg.rows()) = neg;
  Vector y(total);
  y.head(np).setOnes();
  y.tail(neg.rows()).setConstant(-1.0);

  LinearModel model;
  model.center = x.colwise().mean().transpose();
  x.rowwise() -= model.center.transpose();
  model.scale = (x.colwise().squaredNorm() / static_cast<double>(total)).cwiseSqrt().transpose();
  for (Eigen::Index c = 0; c < k; ++c) {
    if (!(model.scale(c) > 0.0)) model.scale(c) = 1.0;  // constant feature
  }
  x = x * model.scale.cwiseInverse().asDiagonal();

  // Augmented weight vector: last entry multiplies a constant 1.
  Vector w = Vector::Zero(k + 1);
  SplitMix64 rng(seed);
  std::uint64_t t = 0;
  for (std::size_t e = 0; e < epochs; ++e) {
    const auto order = seeded_permutation(static_cast<std::size_t>(total), rng);
    for (std::size_t idx : order) {
      ++t;
      const auto i = static_cast<Eigen::Index>(idx);
      const double eta = 1.0 / (lambda * static_cast<double>(t));
      const double fx = x.row(i).dot(w.head(k)) + w(k);
      w *= 1.0 - eta * lambda;
      if (y(i) * fx < 1.0) {
        w.head(k) += eta * y(i) * x.row(i).transpose();
        w(k) += eta * y(i);
      }
    }
  }

  model.weights = w.head(k);
  model.bias = w(k);
  model.feature_indices.resize(static_cast<std::size_t>(k));
  std::iota(model.feature_indices.begin(), model.feature_indices.end(), std::size_t{0});
  const Vector f = (x * model.weights).array() + model.bias;
  model.margin = (y.array() * f.array()).minCoeff();
  return model;
}

struct Evaluation {
  double accuracy = 0.0;
  // confusion[actual][predicted], index 0 = positive class, 1 = negative class.
  std::array<std::array<std::size_t, 2>, 2> confusion{};
};

inline Evaluation evaluate(const LinearModel& model, const RowMatrix& pos, const RowMatrix& neg) {
  const auto w = static_cast<Eigen::Index>(model.width());
  detail::require(pos.cols() == w && neg.cols() == w, "evaluate: feature width mismatch");
  Evaluation ev;
  for (Eigen::Index r = 0; r < pos.rows(); ++r) {
    ++ev.confusion[0][model.predict_positive(pos.row(r)) ? 0 : 1];
  }
  for (Eigen::Index r = 0; r < neg.rows(); ++r) {
    ++ev.confusion[1][model.predict_positive(neg.row(r)) ? 0 : 1];
  }
  const auto n = static_cast<double>(pos.rows() + neg.rows());
  ev.accuracy = n > 0 ? static_cast<double>(ev.confusion[0][0] + ev.confusion[1][1]) / n : 0.0;
  return ev;
}

/// Trains an image-vs-text separator on the chosen feature subset of two sets.
inline LinearModel train_modality_separator(const EmbeddingSet& images, const EmbeddingSet& texts,
                                            const std::vector<std::size_t>& features,
                                            double lambda = kDefaultSvmLambda,
                                            std::size_t epochs = kDefaultSvmEpochs,
                                            std::uint64_t seed = 0) {
  detail::require(!features.empty(), "train_modality_separator: empty feature list");
  std::unordered_set<std::size_t> seen(features.begin(), features.end());
  detail::require(seen.size() == features.size(), "train_modality_separator: duplicate feature");
  auto model = train_linear(select_features(images.data(), features),
                            select_features(texts.data(), features), lambda, epochs, seed);
  model.feature_indices = features;
  return model;
}

}  // namespace clipgeom
