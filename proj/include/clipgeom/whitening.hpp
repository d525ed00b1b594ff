#pragma once

#include <cmath>
#include <optional>

#include <Eigen/Dense>

#include "clipgeom/embedding_store.hpp"
#include "clipgeom/error.hpp"
#include "clipgeom/moment_stats.hpp"

namespace clipgeom {

/// Symmetric whitening y = W (v - mean) with W = Q diag(1/sqrt(lambda + eps)) Q^T,
/// the unique symmetric positive definite inverse square root of Sigma + eps I.
struct WhiteningTransform {
  Eigen::MatrixXd W;
  Vector mean;
  double eigen_floor = 0.0;
  bool undersampled = false;  // count <= dim at fit time

  std::size_t dim() const noexcept { return static_cast<std::size_t>(mean.size()); }
};

inline constexpr double kRelativeEigenFloor = 1e-8;

/// Fits the transform on the population covariance of `set`. Without an
/// explicit floor, eps = 1e-8 * max eigenvalue.
inline WhiteningTransform fit_whitening(const EmbeddingSet& set,
                                        std::optional<double> eigen_floor = std::nullopt) {
  detail::require_count(set, 2);
  if (eigen_floor) {
    detail::require(std::isfinite(*eigen_floor) && *eigen_floor >= 0.0,
                    "fit_whitening: eigen_floor must be finite and >= 0");
  }
  const auto& data = set.data();
  const double m = static_cast<double>(set.count());
  const Vector mean = data.colwise().sum().transpose() / m;
  const RowMatrix c = detail::centered(data, mean);
  Eigen::MatrixXd cov = (c.transpose() * c) / m;
  cov = 0.5 * (cov + cov.transpose()).eval();
  if (!cov.allFinite()) throw NumericError("fit_whitening: non-finite covariance");

  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(cov);
  if (eig.info() != Eigen::Success) throw NumericError("fit_whitening: eigendecomposition failed");
  const Vector lambda = eig.eigenvalues().cwiseMax(0.0);
  const double lmax = lambda.maxCoeff();
  if (!(lmax > 0.0)) throw NumericError("fit_whitening: covariance is identically zero");

  const double eps = eigen_floor.value_or(kRelativeEigenFloor * lmax);
  Vector inv_sqrt(lambda.size());
  for (Eigen::Index k = 0; k < lambda.size(); ++k) {
    const double v = lambda(k) + eps;
    if (!(v > 0.0)) {
      throw NumericError("fit_whitening: singular covariance; use a positive eigen_floor");
    }
    inv_sqrt(k) = 1.0 / std::sqrt(v);
  }

  WhiteningTransform t;
  const auto& q = eig.eigenvectors();
  t.W = q * inv_sqrt.asDiagonal() * q.transpose();
  t.W = 0.5 * (t.W + t.W.transpose()).eval();
  t.mean = mean;
  t.eigen_floor = eps;
  t.undersampled = set.count() <= set.dim();
  return t;
}

inline EmbeddingSet apply_whitening(const WhiteningTransform& t, const EmbeddingSet& set) {
  detail::require(t.dim() == set.dim(), "apply_whitening: dimension mismatch");
  // Row form of y = W (v - m): Y = (V - 1 m^T) W^T.
  RowMatrix y = detail::centered(set.data(), t.mean) * t.W.transpose();
  return EmbeddingSet(set.modality(), std::move(y), set.ids());
}

struct WhitenedNormCheck {
  double mean_norm = 0.0;
  double std_norm = 0.0;
  double predicted_std = 0.0;  // sqrt(n - mean_norm^2)
  double sqrt_n = 0.0;
  double rel_err_mean = 0.0;   // |mean_norm - sqrt(n)| / sqrt(n)
  double rel_err_std = 0.0;    // |std_norm - predicted_std| / predicted_std
  bool mean_exceeds_sqrt_n = false;
};

/// Norm statistics of an (already whitened) set against E||y|| ~ sqrt(n) and
/// std ||y|| = sqrt(n - E^2||y||).
inline WhitenedNormCheck whitened_norm_check(const EmbeddingSet& set) {
  const auto nm = detail::norm_moments(set.data());
  const double n = static_cast<double>(set.dim());
  WhitenedNormCheck r;
  r.mean_norm = nm.mean;
  r.std_norm = std::sqrt(nm.var);
  r.sqrt_n = std::sqrt(n);
  r.rel_err_mean = std::abs(r.mean_norm - r.sqrt_n) / r.sqrt_n;
  const double gap = n - r.mean_norm * r.mean_norm;
  // Rounding can push an exact-sphere mean marginally past sqrt(n).
  if (gap < -1e-9 * n) r.mean_exceeds_sqrt_n = true;
  r.predicted_std = gap > 0.0 ? std::sqrt(gap) : 0.0;
  if (r.predicted_std > 0.0) {
    r.rel_err_std = std::abs(r.std_norm - r.predicted_std) / r.predicted_std;
  } else {
    r.rel_err_std = r.std_norm > 1e-9 * std::max(1.0, r.mean_norm)
                        ? std::numeric_limits<double>::infinity()
                        : 0.0;
  }
  return r;
}

struct ChiMoments {
  double mean = 0.0;
  double std = 0.0;
};

/// Mean and standard deviation of the chi distribution with n degrees of
/// freedom (the norm of an n-dimensional standard normal vector).
inline ChiMoments chi_reference(std::size_t n) {
  detail::require(n >= 1, "chi_reference: n must be >= 1");
  const long double half = static_cast<long double>(n) / 2.0L;
  const long double mean =
      std::sqrt(2.0L) * std::exp(std::lgamma(half + 0.5L) - std::lgamma(half));
  const long double var = static_cast<long double>(n) - mean * mean;
  return ChiMoments{static_cast<double>(mean), static_cast<double>(std::sqrt(std::max(var, 0.0L)))};
}

}  // namespace clipgeom
