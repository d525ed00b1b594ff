#pragma once

#include <algorithm>
#include <cmath>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include <Eigen/Dense>

#include "clipgeom/embedding_store.hpp"
#include "clipgeom/error.hpp"
#include "clipgeom/moment_stats.hpp"
#include "clipgeom/parallel.hpp"

namespace clipgeom {

namespace detail {

inline RowMatrix unit_rows(const RowMatrix& data, std::string_view who) {
  const Vector norms = data.rowwise().norm();
  for (Eigen::Index j = 0; j < norms.size(); ++j) {
    if (!(norms(j) > 0.0)) {
      throw NumericError(std::string(who) + ": zero-norm row " + std::to_string(j));
    }
  }
  return norms.cwiseInverse().asDiagonal() * data;
}

inline Vector column_mean(const RowMatrix& data) {
  return data.colwise().sum().transpose() / static_cast<double>(data.rows());
}

}  // namespace detail

/// Mean cosine similarity of each row to every other row of the same set.
/// Computed as u_j . (S - u_j) / (M - 1), S the sum of unit rows.
inline Vector conformity(const RowMatrix& data) {
  detail::require(data.rows() >= 2, "conformity: need at least 2 rows");
  const RowMatrix u = detail::unit_rows(data, "conformity");
  const Vector sum = u.colwise().sum().transpose();
  const double denom = static_cast<double>(u.rows() - 1);
  Vector c = ((u * sum).array() - u.rowwise().squaredNorm().array()) / denom;
  return c.cwiseMax(-1.0).cwiseMin(1.0);
}

inline Vector conformity(const EmbeddingSet& set) { return conformity(set.data()); }

/// cos(mean, v_j) for every row.
inline Vector cosines_to(const RowMatrix& data, const Vector& mean) {
  detail::require(static_cast<Eigen::Index>(mean.size()) == data.cols(),
                  "cosines_to: dimension mismatch");
  const double mnorm = mean.norm();
  if (!(mnorm > 0.0)) throw NumericError("cosines_to: zero mean vector");
  const RowMatrix u = detail::unit_rows(data, "cosines_to");
  return ((u * mean) / mnorm).cwiseMax(-1.0).cwiseMin(1.0);
}

/// a * cos(mean, v_j) + b.
inline Vector estimated_conformity(const EmbeddingSet& set, const Vector& mean, double a,
                                   double b) {
  return (a * cosines_to(set.data(), mean)).array() + b;
}

/// Pearson product-moment correlation.
inline double pearson(const Vector& x, const Vector& y) {
  detail::require(x.size() == y.size(), "pearson: length mismatch");
  detail::require(x.size() >= 2, "pearson: need at least 2 samples");
  const Vector dx = x.array() - x.mean();
  const Vector dy = y.array() - y.mean();
  const double sxx = dx.squaredNorm();
  const double syy = dy.squaredNorm();
  if (!(sxx > 0.0) || !(syy > 0.0)) throw NumericError("pearson: constant input");
  const double r = dx.dot(dy) / std::sqrt(sxx * syy);
  return std::clamp(r, -1.0, 1.0);
}

struct EstimatorFit {
  double a = 0.0;
  double b = 0.0;
  double pearson_r = 0.0;
};

/// Ordinary least squares of c on cosines: c ~ a * cos + b.
inline EstimatorFit fit_estimator(const Vector& c, const Vector& cosines) {
  detail::require(c.size() == cosines.size(), "fit_estimator: length mismatch");
  detail::require(c.size() >= 3, "fit_estimator: need at least 3 samples");
  const double mx = cosines.mean();
  const double my = c.mean();
  const Vector dx = cosines.array() - mx;
  const Vector dy = c.array() - my;
  const double sxx = dx.squaredNorm();
  if (!(sxx > 0.0)) throw NumericError("fit_estimator: degenerate (constant) cosines");
  EstimatorFit f;
  f.a = dx.dot(dy) / sxx;
  f.b = my - f.a * mx;
  const double syy = dy.squaredNorm();
  f.pearson_r = syy > 0.0 ? std::clamp(dx.dot(dy) / std::sqrt(sxx * syy), -1.0, 1.0) : 0.0;
  return f;
}

struct ConformityReport {
  Vector conformity;
  Vector cosines_to_mean;
  Vector estimate;
  Vector mean;  // raw modality mean used for the cosines
  double a = 0.0;
  double b = 0.0;
  double pearson_r = 0.0;
};

/// Exact conformity, cosines to the raw mean (self included), the OLS-fitted
/// estimator and its correlation with the exact values.
inline ConformityReport conformity_report(const EmbeddingSet& set) {
  ConformityReport r;
  r.conformity = conformity(set);
  r.mean = detail::column_mean(set.data());
  r.cosines_to_mean = cosines_to(set.data(), r.mean);
  const auto fit = fit_estimator(r.conformity, r.cosines_to_mean);
  r.a = fit.a;
  r.b = fit.b;
  r.estimate = (r.a * r.cosines_to_mean).array() + r.b;
  // corr(C, a cos + b) = sign(a) corr(C, cos), and OLS gives sign(a) = sign(r).
  r.pearson_r = std::abs(fit.pearson_r);
  return r;
}

// ---------------------------------------------------------------------------
// Modality-gap KL sweep
// ---------------------------------------------------------------------------

enum class ShiftTarget { image, text, both };

inline std::string_view to_string(ShiftTarget t) {
  switch (t) {
    case ShiftTarget::image: return "image";
    case ShiftTarget::text: return "text";
    case ShiftTarget::both: return "both";
  }
  return "image";
}

inline ShiftTarget shift_target_from_string(std::string_view s) {
  if (s == "image") return ShiftTarget::image;
  if (s == "text") return ShiftTarget::text;
  if (s == "both") return ShiftTarget::both;
  throw InvalidArgument("unknown shift target '" + std::string(s) + "'");
}

enum class KlDirection { image_text, text_image };

/// The alpha grid lo, lo+step, ..., up to hi inclusive (within step/1e6).
inline std::vector<double> alpha_grid(double lo, double hi, double step) {
  detail::require(step > 0.0 && std::isfinite(step), "alpha grid: step must be positive");
  detail::require(lo <= hi, "alpha grid: lo must be <= hi");
  std::vector<double> out;
  const auto n = static_cast<long>(std::floor((hi - lo) / step + 1e-6));
  for (long k = 0; k <= n; ++k) {
    double a = lo + static_cast<double>(k) * step;
    if (std::abs(a) < 1e-12 * std::max(1.0, std::abs(step))) a = 0.0;
    out.push_back(a);
  }
  return out;
}

inline std::vector<double> default_alpha_grid() { return alpha_grid(-1.0, 1.0, 0.05); }

namespace detail {

// v' = v - alpha * mean for every row.
inline RowMatrix shifted(const RowMatrix& data, const Vector& mean, double alpha) {
  if (alpha == 0.0) return data;
  return data.rowwise() - (alpha * mean).transpose();
}

}  // namespace detail

struct KlSweepPoint {
  double alpha = 0.0;
  double kl = 0.0;
};

/// For each alpha, shifts the targeted modality by -alpha times its own mean,
/// recomputes both conformity distributions, and measures KL between their
/// histograms over a shared range padded by 1% of the span.
inline std::vector<KlSweepPoint> conformity_kl_sweep(const PairedEmbeddings& pair,
                                                     const std::vector<double>& alphas,
                                                     ShiftTarget target,
                                                     std::size_t bins = kDefaultBins,
                                                     KlDirection dir = KlDirection::image_text) {
  detail::require(bins >= 10, "conformity_kl_sweep: bins must be >= 10");
  const auto& img = pair.images.data();
  const auto& txt = pair.texts.data();
  const Vector m_i = detail::column_mean(img);
  const Vector m_t = detail::column_mean(txt);
  const bool shift_i = target != ShiftTarget::text;
  const bool shift_t = target != ShiftTarget::image;

  std::vector<KlSweepPoint> out(alphas.size());
  parallel_for(alphas.size(), [&](std::size_t k) {
    const double alpha = alphas[k];
    const Vector ci = conformity(shift_i ? detail::shifted(img, m_i, alpha) : img);
    const Vector ct = conformity(shift_t ? detail::shifted(txt, m_t, alpha) : txt);
    const auto range = shared_range(ci, ct);
    const auto hi = histogram(ci, bins, range);
    const auto ht = histogram(ct, bins, range);
    out[k].alpha = alpha;
    out[k].kl = dir == KlDirection::image_text ? histogram_kl(hi, ht) : histogram_kl(ht, hi);
  });
  return out;
}

}  // namespace clipgeom
