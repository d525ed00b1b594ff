#pragma once

#include <cmath>
#include <cstdint>
#include <variant>
#include <vector>

#include <Eigen/Dense>

#include "clipgeom/conformity.hpp"
#include "clipgeom/embedding_store.hpp"
#include "clipgeom/error.hpp"
#include "clipgeom/moment_stats.hpp"
#include "clipgeom/random.hpp"

namespace clipgeom {

/// Generative parameters of an anisotropic Gaussian x = mean + L z, with
/// L = diag(scale) or a full n x n factor.
struct SyntheticSpec {
  std::size_t dim = 1;
  std::size_t count = 1;
  Vector mean;  // empty means the origin
  std::variant<Vector, Eigen::MatrixXd> scale = Vector();
  std::uint64_t seed = 0;
  Modality modality = Modality::other;

  static SyntheticSpec isotropic(std::size_t dim, std::size_t count, std::uint64_t seed,
                                 Modality modality = Modality::other) {
    SyntheticSpec s;
    s.dim = dim;
    s.count = count;
    s.mean = Vector::Zero(static_cast<Eigen::Index>(dim));
    s.scale = Vector(Vector::Ones(static_cast<Eigen::Index>(dim)));
    s.seed = seed;
    s.modality = modality;
    return s;
  }
};

namespace detail {

inline Vector spec_mean(const SyntheticSpec& spec) {
  if (spec.mean.size() == 0) return Vector::Zero(static_cast<Eigen::Index>(spec.dim));
  require(static_cast<std::size_t>(spec.mean.size()) == spec.dim, "synthetic: mean length != dim");
  require(spec.mean.allFinite(), "synthetic: non-finite mean");
  return spec.mean;
}

inline void validate_spec(const SyntheticSpec& spec) {
  require(spec.dim >= 1, "synthetic: dim must be >= 1");
  require(spec.count >= 1, "synthetic: count must be >= 1");
  const auto n = static_cast<Eigen::Index>(spec.dim);
  if (const auto* s = std::get_if<Vector>(&spec.scale)) {
    if (s->size() != 0) {
      require(s->size() == n, "synthetic: scale length != dim");
      if (!s->allFinite()) throw NumericError("synthetic: non-finite scale");
      require((s->array() >= 0.0).all(), "synthetic: scales must be nonnegative");
    }
  } else {
    const auto& f = std::get<Eigen::MatrixXd>(spec.scale);
    require(f.rows() == n && f.cols() == n, "synthetic: covariance factor must be dim x dim");
    if (!f.allFinite()) throw NumericError("synthetic: invalid covariance factor (non-finite)");
  }
}

// Draws count x dim standard normals row by row from one stream.
inline RowMatrix standard_normals(std::size_t count, std::size_t dim, SplitMix64& rng) {
  RowMatrix z(static_cast<Eigen::Index>(count), static_cast<Eigen::Index>(dim));
  for (Eigen::Index r = 0; r < z.rows(); ++r)
    for (Eigen::Index c = 0; c < z.cols(); ++c) z(r, c) = rng.normal();
  return z;
}

inline RowMatrix apply_scale(const RowMatrix& z, const SyntheticSpec& spec) {
  if (const auto* s = std::get_if<Vector>(&spec.scale)) {
    if (s->size() == 0) return z;
    return z * s->asDiagonal();
  }
  // Row form of L z.
  return z * std::get<Eigen::MatrixXd>(spec.scale).transpose();
}

}  // namespace detail

/// Rows mean + L z with z drawn from SplitMix64(seed) through Box-Muller,
/// row-major (row 0 feature 0 first).
inline EmbeddingSet generate_gaussian(const SyntheticSpec& spec) {
  detail::validate_spec(spec);
  SplitMix64 rng(spec.seed);
  const RowMatrix z = detail::standard_normals(spec.count, spec.dim, rng);
  RowMatrix x = detail::apply_scale(z, spec);
  x.rowwise() += detail::spec_mean(spec).transpose();
  return EmbeddingSet(spec.modality, std::move(x));
}

// ---------------------------------------------------------------------------
// Semantic blur demonstration
// ---------------------------------------------------------------------------

struct BlurDemo {
  Histogram hist_mean_sim;  // cos(m, v_j) over all j
  Histogram hist_far_sim;   // cos(v_far, v_j) over j != far
  double mean_of_mean_sim = 0.0;
  double mean_of_far_sim = 0.0;
  std::size_t far_index = 0;
  double analytic_mean_sim = 0.0;  // ||c|| / sqrt(||c||^2 + n)
};

/// Draws `count` vectors from N(center, I_n), then contrasts similarity to the
/// empirical mean with similarity to the vector least similar to that mean.
inline BlurDemo blur_demo(std::size_t n, std::size_t count, const Vector& center,
                          std::uint64_t seed, std::size_t bins = kDefaultBins) {
  detail::require(count >= 3, "blur_demo: count must be >= 3");
  detail::require(static_cast<std::size_t>(center.size()) == n, "blur_demo: center length != n");
  SyntheticSpec spec = SyntheticSpec::isotropic(n, count, seed);
  spec.mean = center;
  const EmbeddingSet set = generate_gaussian(spec);
  const auto& x = set.data();

  const Vector m = detail::column_mean(x);
  const Vector to_mean = cosines_to(x, m);
  Eigen::Index far = 0;
  for (Eigen::Index j = 1; j < to_mean.size(); ++j) {
    if (to_mean(j) < to_mean(far)) far = j;
  }
  const Vector far_all = cosines_to(x, x.row(far).transpose());
  Vector to_far(far_all.size() - 1);
  for (Eigen::Index j = 0, o = 0; j < far_all.size(); ++j) {
    if (j != far) to_far(o++) = far_all(j);
  }

  BlurDemo d;
  d.far_index = static_cast<std::size_t>(far);
  d.hist_mean_sim = histogram(to_mean, bins);
  d.hist_far_sim = histogram(to_far, bins);
  d.mean_of_mean_sim = to_mean.mean();
  d.mean_of_far_sim = to_far.mean();
  const double c2 = center.squaredNorm();
  d.analytic_mean_sim = std::sqrt(c2) / std::sqrt(c2 + static_cast<double>(n));
  return d;
}

// ---------------------------------------------------------------------------
// Paired generation with planted false negatives
// ---------------------------------------------------------------------------

/// Pairs built from a shared per-pair latent u_j ~ N(0, I):
///   image_j = mean_i + L_i (c u_j + sqrt(1 - c^2) e_j)
///   text_j  = mean_t + L_t (c u_j + sqrt(1 - c^2) f_j)
/// with c = coupling and e, f independent noise. The last `duplicates` pairs
/// reuse the latent of pairs 0, 1, ... (in order, wrapping) with fresh e, f:
/// the same concept drawn again, i.e. a planted false negative for its source.
/// spec_i.count sets M; the count, seed and modality of the specs are ignored
/// in favour of `seed` and image/text.
inline PairedEmbeddings generate_paired(const SyntheticSpec& spec_i, const SyntheticSpec& spec_t,
                                        double coupling, std::size_t duplicates,
                                        std::uint64_t seed) {
  detail::validate_spec(spec_i);
  detail::validate_spec(spec_t);
  detail::require(spec_i.dim == spec_t.dim, "generate_paired: dim mismatch");
  detail::require(coupling >= 0.0 && coupling <= 1.0, "generate_paired: coupling must be in [0,1]");
  const std::size_t m = spec_i.count;
  detail::require(duplicates < m, "generate_paired: duplicates must be < count");
  const std::size_t n = spec_i.dim;
  const std::size_t base = m - duplicates;

  SplitMix64 rng(seed);
  RowMatrix latent = detail::standard_normals(m, n, rng);
  const RowMatrix noise_i = detail::standard_normals(m, n, rng);
  const RowMatrix noise_t = detail::standard_normals(m, n, rng);
  for (std::size_t d = 0; d < duplicates; ++d) {
    latent.row(static_cast<Eigen::Index>(base + d)) = latent.row(static_cast<Eigen::Index>(d % base));
  }
  const double keep = std::sqrt(std::max(0.0, 1.0 - coupling * coupling));
  RowMatrix img = detail::apply_scale(coupling * latent + keep * noise_i, spec_i);
  RowMatrix txt = detail::apply_scale(coupling * latent + keep * noise_t, spec_t);
  img.rowwise() += detail::spec_mean(spec_i).transpose();
  txt.rowwise() += detail::spec_mean(spec_t).transpose();
  return PairedEmbeddings{EmbeddingSet(Modality::image, std::move(img)),
                          EmbeddingSet(Modality::text, std::move(txt))};
}

}  // namespace clipgeom
