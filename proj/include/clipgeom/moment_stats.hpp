#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <optional>
#include <span>
#include <tuple>
#include <utility>
#include <vector>

#include <Eigen/Dense>

#include "clipgeom/embedding_store.hpp"
#include "clipgeom/error.hpp"

namespace clipgeom {

/// First and second moments of one modality. Covariance is the population
/// covariance (divide by M) so that trace(cov) equals the mean squared
/// centered norm exactly.
struct ModalityStats {
  Vector mean;
  Vector std;
  Eigen::MatrixXd cov;
  std::size_t count = 0;
  double mu_norm = 0.0;           // E ||v - m||
  double var_norm = 0.0;          // var ||v - m||
  double mean_sigma_ratio = 0.0;  // ||m|| / ||sigma||

  std::size_t dim() const noexcept { return static_cast<std::size_t>(mean.size()); }
};

namespace detail {

inline void require_count(const EmbeddingSet& set, std::size_t min_count) {
  require(set.count() >= min_count,
          "operation needs at least " + std::to_string(min_count) + " rows, got " +
              std::to_string(set.count()));
}

inline RowMatrix centered(const RowMatrix& data, const Vector& mean) {
  return data.rowwise() - mean.transpose();
}

struct NormMoments {
  Vector norms;
  double mean = 0.0;
  double var = 0.0;
  double mean_sq = 0.0;
};

inline NormMoments norm_moments(const RowMatrix& rows) {
  NormMoments out;
  out.norms = rows.rowwise().norm();
  const auto m = static_cast<double>(out.norms.size());
  out.mean = out.norms.sum() / m;
  out.var = (out.norms.array() - out.mean).square().sum() / m;
  out.mean_sq = rows.rowwise().squaredNorm().sum() / m;
  return out;
}

}  // namespace detail

inline ModalityStats compute_stats(const EmbeddingSet& set) {
  detail::require_count(set, 2);
  const auto& data = set.data();
  const double m = static_cast<double>(set.count());

  ModalityStats s;
  s.count = set.count();
  s.mean = data.colwise().sum().transpose() / m;
  const RowMatrix c = detail::centered(data, s.mean);
  s.cov = (c.transpose() * c) / m;
  s.cov = 0.5 * (s.cov + s.cov.transpose()).eval();
  s.std = s.cov.diagonal().cwiseMax(0.0).cwiseSqrt();

  const auto nm = detail::norm_moments(c);
  s.mu_norm = nm.mean;
  s.var_norm = nm.var;
  const double sigma_norm = s.std.norm();
  s.mean_sigma_ratio = sigma_norm > 0.0 ? s.mean.norm() / sigma_norm
                                        : std::numeric_limits<double>::infinity();
  return s;
}

// ---------------------------------------------------------------------------
// Feature separability
// ---------------------------------------------------------------------------

struct Separability {
  Vector values;                    // Sep(l) per feature
  std::vector<std::size_t> order;   // indices by descending Sep, ties -> lower index
};

namespace detail {

inline std::vector<std::size_t> descending_order(const Vector& v) {
  std::vector<std::size_t> idx(static_cast<std::size_t>(v.size()));
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  std::stable_sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) {
    return v(static_cast<Eigen::Index>(a)) > v(static_cast<Eigen::Index>(b));
  });
  return idx;
}

}  // namespace detail

/// Standardized mean difference |m_i - m_t| / sqrt(var_i + var_t) per feature.
/// Zero pooled variance gives +inf for unequal means and 0 for equal means.
inline Separability separability(const ModalityStats& a, const ModalityStats& b) {
  detail::require(a.dim() == b.dim(), "separability: dimension mismatch");
  Separability out;
  out.values.resize(a.mean.size());
  for (Eigen::Index l = 0; l < a.mean.size(); ++l) {
    const double diff = std::abs(a.mean(l) - b.mean(l));
    const double pooled = a.cov(l, l) + b.cov(l, l);
    if (pooled > 0.0) {
      out.values(l) = diff / std::sqrt(pooled);
    } else {
      out.values(l) = diff > 0.0 ? std::numeric_limits<double>::infinity() : 0.0;
    }
  }
  out.order = detail::descending_order(out.values);
  return out;
}

/// Off-diagonal dominance of each covariance row: sum_{k != l} |C_lk| / C_ll.
inline Vector odd(const Eigen::MatrixXd& cov) {
  detail::require(cov.rows() == cov.cols() && cov.rows() > 0, "odd: matrix must be square");
  Vector out(cov.rows());
  for (Eigen::Index l = 0; l < cov.rows(); ++l) {
    const double diag = cov(l, l);
    if (!(diag > 0.0)) {
      throw NumericError("odd: non-positive diagonal entry at row " + std::to_string(l));
    }
    out(l) = (cov.row(l).cwiseAbs().sum() - std::abs(diag)) / diag;
  }
  return out;
}

// ---------------------------------------------------------------------------
// Norm / thin-shell summaries
// ---------------------------------------------------------------------------

struct NormSummary {
  double mu_norm = 0.0;
  double var_norm = 0.0;
  double sqrt_trace = 0.0;  // sqrt(E ||v||^2), i.e. sqrt(trace(C)) when centered
  double rel_error = 0.0;   // |sqrt(mu^2 + var) - mu| / mu
  bool centered = true;
};

/// Norm statistics behind the approximation E||x|| ~ sqrt(trace(C)). With
/// `center` the norms are taken of v - m; otherwise of the raw vectors.
inline NormSummary norm_summary(const EmbeddingSet& set, bool center = true) {
  detail::require_count(set, 2);
  const auto& data = set.data();
  const double m = static_cast<double>(set.count());
  const RowMatrix rows =
      center ? detail::centered(data, data.colwise().sum().transpose() / m) : RowMatrix(data);
  const auto nm = detail::norm_moments(rows);

  // E||x||^2 = mu^2 + var(y) holds algebraically for population moments.
  const double lhs = nm.mean_sq;
  const double rhs = nm.mean * nm.mean + nm.var;
  if (std::abs(lhs - rhs) > 1e-9 * std::max(1.0, std::abs(lhs))) {
    throw NumericError("norm_summary: second-moment identity violated beyond rounding");
  }

  NormSummary s;
  s.centered = center;
  s.mu_norm = nm.mean;
  s.var_norm = nm.var;
  s.sqrt_trace = std::sqrt(lhs);
  s.rel_error = nm.mean > 0.0 ? std::abs(std::sqrt(rhs) - nm.mean) / nm.mean : 0.0;
  return s;
}

struct ThinShellReport {
  double mu_norm = 0.0;
  double sigma_norm = 0.0;
  double min_centered_norm = 0.0;
  double max_centered_norm = 0.0;
  double frac_within_k_sigma = 0.0;
  double mass_near_mean = 0.0;  // fraction with ||v - m|| < mu_norm / 2
  double k = 0.0;
};

inline ThinShellReport thin_shell_report(const EmbeddingSet& set, double k) {
  detail::require_count(set, 2);
  detail::require(k > 0.0, "thin_shell_report: k must be positive");
  const auto& data = set.data();
  const double m = static_cast<double>(set.count());
  const auto nm = detail::norm_moments(detail::centered(data, data.colwise().sum().transpose() / m));

  ThinShellReport r;
  r.k = k;
  r.mu_norm = nm.mean;
  r.sigma_norm = std::sqrt(nm.var);
  r.min_centered_norm = nm.norms.minCoeff();
  r.max_centered_norm = nm.norms.maxCoeff();
  const double lo = r.mu_norm - k * r.sigma_norm;
  const double hi = r.mu_norm + k * r.sigma_norm;
  std::size_t within = 0, near = 0;
  for (Eigen::Index j = 0; j < nm.norms.size(); ++j) {
    const double x = nm.norms(j);
    // Tolerate rounding when every norm is equal (sigma == 0).
    const double slack = 1e-12 * std::max(1.0, r.mu_norm);
    if (x >= lo - slack && x <= hi + slack) ++within;
    if (x < 0.5 * r.mu_norm) ++near;
  }
  r.frac_within_k_sigma = static_cast<double>(within) / m;
  r.mass_near_mean = static_cast<double>(near) / m;
  return r;
}

// ---------------------------------------------------------------------------
// Histograms and histogram KL
// ---------------------------------------------------------------------------

inline constexpr std::size_t kDefaultBins = 100;
inline constexpr double kKlSmoothing = 1e-10;

/// Uniform-width histogram. Densities are derived on demand so that
/// sum(density * width) == 1.
struct Histogram {
  std::vector<double> edges;
  std::vector<std::size_t> counts;

  std::size_t bins() const noexcept { return counts.size(); }
  std::size_t total() const noexcept {
    return std::accumulate(counts.begin(), counts.end(), std::size_t{0});
  }
  std::vector<double> densities() const {
    std::vector<double> d(counts.size(), 0.0);
    const double n = static_cast<double>(total());
    if (n == 0.0) return d;
    for (std::size_t b = 0; b < counts.size(); ++b) {
      d[b] = static_cast<double>(counts[b]) / (n * (edges[b + 1] - edges[b]));
    }
    return d;
  }
};

/// Bins `values` over [lo, hi] (default: data min/max). With an explicit range,
/// out-of-range values are clipped into the end bins.
inline Histogram histogram(std::span<const double> values, std::size_t bins,
                           std::optional<std::pair<double, double>> range = std::nullopt) {
  detail::require(!values.empty(), "histogram: empty input");
  detail::require(bins >= 1, "histogram: bins must be >= 1");
  for (double v : values) detail::require(std::isfinite(v), "histogram: non-finite value");

  double lo, hi;
  if (range) {
    std::tie(lo, hi) = *range;
    detail::require(std::isfinite(lo) && std::isfinite(hi) && lo < hi,
                    "histogram: range requires lo < hi");
  } else {
    const auto [mn, mx] = std::minmax_element(values.begin(), values.end());
    lo = *mn;
    hi = *mx;
    if (!(lo < hi)) {
      lo -= 0.5;
      hi += 0.5;
    }
  }

  Histogram h;
  h.edges.resize(bins + 1);
  const double width = (hi - lo) / static_cast<double>(bins);
  for (std::size_t b = 0; b <= bins; ++b) h.edges[b] = lo + width * static_cast<double>(b);
  h.edges.back() = hi;
  h.counts.assign(bins, 0);
  for (double v : values) {
    double pos = std::floor((v - lo) / width);
    auto b = pos < 0.0 ? std::size_t{0} : static_cast<std::size_t>(pos);
    if (b >= bins) b = bins - 1;
    ++h.counts[b];
  }
  return h;
}

inline Histogram histogram(const Vector& values, std::size_t bins,
                           std::optional<std::pair<double, double>> range = std::nullopt) {
  return histogram(std::span<const double>(values.data(), static_cast<std::size_t>(values.size())),
                   bins, range);
}

/// KL(P || Q) over bin masses of two histograms with identical edges. Each
/// bin mass gets kKlSmoothing added before renormalization.
inline double histogram_kl(const Histogram& p, const Histogram& q) {
  detail::require(p.edges == q.edges, "histogram_kl: edge mismatch");
  const double np = static_cast<double>(p.total());
  const double nq = static_cast<double>(q.total());
  detail::require(np > 0 && nq > 0, "histogram_kl: empty histogram");

  const auto bins = p.bins();
  const double z = 1.0 + kKlSmoothing * static_cast<double>(bins);
  double kl = 0.0;
  for (std::size_t b = 0; b < bins; ++b) {
    const double pb = (static_cast<double>(p.counts[b]) / np + kKlSmoothing) / z;
    const double qb = (static_cast<double>(q.counts[b]) / nq + kKlSmoothing) / z;
    kl += pb * std::log(pb / qb);
  }
  return std::max(kl, 0.0);
}

/// Range [min - d, max + d] covering both samples, d = margin_frac * span.
inline std::pair<double, double> shared_range(const Vector& a, const Vector& b,
                                              double margin_frac = 0.01) {
  const double mn = std::min(a.minCoeff(), b.minCoeff());
  const double mx = std::max(a.maxCoeff(), b.maxCoeff());
  const double span = mx - mn;
  if (!(span > 0.0)) return {mn - 0.5, mx + 0.5};
  return {mn - margin_frac * span, mx + margin_frac * span};
}

/// KL between one feature's image and text marginals over shared edges.
inline double feature_kl(const EmbeddingSet& p, const EmbeddingSet& q, std::size_t feature,
                         std::size_t bins = kDefaultBins) {
  detail::require(p.dim() == q.dim(), "feature_kl: dimension mismatch");
  detail::require(feature < p.dim(), "feature_kl: feature index out of range");
  const Vector a = p.data().col(static_cast<Eigen::Index>(feature));
  const Vector b = q.data().col(static_cast<Eigen::Index>(feature));
  const auto range = shared_range(a, b);
  return histogram_kl(histogram(a, bins, range), histogram(b, bins, range));
}

}  // namespace clipgeom
