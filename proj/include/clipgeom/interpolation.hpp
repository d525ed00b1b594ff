#pragma once

#include <cmath>

#include <Eigen/Dense>

#include "clipgeom/embedding_store.hpp"
#include "clipgeom/error.hpp"

namespace clipgeom {

inline constexpr double kSlerpParallelSin = 1e-7;

/// Spherical linear interpolation between a and b at position t in [0, 1].
///
/// The angle comes from the normalized inputs; the weights are applied to the
/// raw vectors, so unequal norms blend sinusoidally. Near-parallel inputs
/// (sin < 1e-7) fall back to linear interpolation; antipodal inputs throw.
inline Vector slerp(const Vector& a, const Vector& b, double t) {
  detail::require(a.size() == b.size(), "slerp: dimension mismatch");
  detail::require(t >= 0.0 && t <= 1.0, "slerp: t must lie in [0, 1]");
  const double na = a.norm();
  const double nb = b.norm();
  if (!(na > 0.0) || !(nb > 0.0)) throw NumericError("slerp: zero input vector");
  if (t == 0.0) return a;
  if (t == 1.0) return b;

  const Vector ua = a / na;
  const Vector ub = b / nb;
  const double omega = 2.0 * std::atan2((ua - ub).norm(), (ua + ub).norm());
  const double s = std::sin(omega);
  if (s < kSlerpParallelSin) {
    if (ua.dot(ub) < 0.0) throw NumericError("slerp: antipodal inputs have no unique path");
    return (1.0 - t) * a + t * b;
  }
  return (std::sin((1.0 - t) * omega) * a + std::sin(t * omega) * b) / s;
}

/// Vertical SLERP: interpolate on the sphere centred at alpha * mean,
/// slerp(a - alpha m, b - alpha m, t) + alpha m.
inline Vector vslerp(const Vector& a, const Vector& b, double t, double alpha,
                     const Vector& mean) {
  detail::require(mean.size() == a.size(), "vslerp: mean dimension mismatch");
  detail::require(std::isfinite(alpha), "vslerp: alpha must be finite");
  if (t == 0.0 || t == 1.0) {
    // Shift and unshift cancel exactly in real arithmetic; keep it exact here.
    (void)slerp(a - alpha * mean, b - alpha * mean, t);
    return t == 0.0 ? a : b;
  }
  const Vector shift = alpha * mean;
  return slerp(a - shift, b - shift, t) + shift;
}

}  // namespace clipgeom
