#pragma once

#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <string>
#include <vector>

#include <Eigen/Dense>
#include <nlohmann/json.hpp>

#include "clipgeom/conformity.hpp"
#include "clipgeom/contrastive_lab.hpp"
#include "clipgeom/embedding_store.hpp"
#include "clipgeom/error.hpp"
#include "clipgeom/moment_stats.hpp"
#include "clipgeom/separability_classifier.hpp"
#include "clipgeom/synthetic_lab.hpp"
#include "clipgeom/whitening.hpp"

// JSON / CSV / TSV encodings of the report records. Every real number is
// written with 9 significant digits so reports are byte-stable across runs.
namespace clipgeom::io {

using Json = nlohmann::ordered_json;

inline constexpr int kSignificantDigits = 9;

/// "%.9g" text of x; non-finite values as inf / -inf / nan.
inline std::string format_real(double x) {
  if (std::isnan(x)) return "nan";
  if (std::isinf(x)) return x > 0 ? "inf" : "-inf";
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.*g", kSignificantDigits, x);
  return buf;
}

/// JSON value of x rounded to 9 significant digits. The JSON writer prints the
/// shortest round-trip form of the rounded double, which is at most 9 digits.
/// Non-finite values become the strings "inf", "-inf" or "nan".
inline Json real(double x) {
  if (!std::isfinite(x)) return format_real(x);
  const double rounded = std::strtod(format_real(x).c_str(), nullptr);
  return rounded == 0.0 ? Json(0.0) : Json(rounded);
}

template <typename Derived>
Json reals(const Eigen::DenseBase<Derived>& v) {
  Json arr = Json::array();
  for (Eigen::Index i = 0; i < v.size(); ++i) arr.push_back(real(v.derived()(i)));
  return arr;
}

inline Json reals(const std::vector<double>& v) {
  Json arr = Json::array();
  for (double x : v) arr.push_back(real(x));
  return arr;
}

inline Json matrix(const Eigen::MatrixXd& m) {
  Json rows = Json::array();
  for (Eigen::Index r = 0; r < m.rows(); ++r) rows.push_back(reals(m.row(r)));
  return rows;
}

inline double to_real(const Json& j) {
  if (j.is_string()) {
    const auto s = j.get<std::string>();
    if (s == "inf") return INFINITY;
    if (s == "-inf") return -INFINITY;
    if (s == "nan") return NAN;
    throw FormatError("expected a number, got string '" + s + "'");
  }
  if (!j.is_number()) throw FormatError("expected a number");
  return j.get<double>();
}

inline Vector to_vector(const Json& j) {
  if (!j.is_array()) throw FormatError("expected an array of numbers");
  Vector v(static_cast<Eigen::Index>(j.size()));
  for (std::size_t i = 0; i < j.size(); ++i) v(static_cast<Eigen::Index>(i)) = to_real(j[i]);
  return v;
}

inline std::string dump(const Json& j) { return j.dump(2) + "\n"; }

// ---------------------------------------------------------------------------
// Records
// ---------------------------------------------------------------------------

inline Json to_json(const ModalityStats& s, bool with_cov = true) {
  Json j;
  j["count"] = s.count;
  j["dim"] = s.dim();
  j["mu_norm"] = real(s.mu_norm);
  j["var_norm"] = real(s.var_norm);
  j["sqrt_trace"] = real(std::sqrt(s.cov.trace()));
  j["mean_norm"] = real(s.mean.norm());
  j["sigma_norm"] = real(s.std.norm());
  j["mean_sigma_ratio"] = real(s.mean_sigma_ratio);
  j["mean"] = reals(s.mean);
  j["std"] = reals(s.std);
  if (with_cov) j["cov"] = matrix(s.cov);
  return j;
}

inline Json to_json(const NormSummary& s) {
  Json j;
  j["mu_norm"] = real(s.mu_norm);
  j["var_norm"] = real(s.var_norm);
  j["sqrt_trace"] = real(s.sqrt_trace);
  j["rel_error"] = real(s.rel_error);
  j["centered"] = s.centered;
  return j;
}

inline Json to_json(const ThinShellReport& r) {
  Json j;
  j["k"] = real(r.k);
  j["mu_norm"] = real(r.mu_norm);
  j["sigma_norm"] = real(r.sigma_norm);
  j["min_centered_norm"] = real(r.min_centered_norm);
  j["max_centered_norm"] = real(r.max_centered_norm);
  j["frac_within_k_sigma"] = real(r.frac_within_k_sigma);
  j["mass_near_mean"] = real(r.mass_near_mean);
  j["mass_near_mean_threshold"] = "mu_norm/2";
  return j;
}

inline Json to_json(const WhitenedNormCheck& r) {
  Json j;
  j["mean_norm"] = real(r.mean_norm);
  j["std_norm"] = real(r.std_norm);
  j["predicted_std"] = real(r.predicted_std);
  j["sqrt_n"] = real(r.sqrt_n);
  j["rel_err_mean"] = real(r.rel_err_mean);
  j["rel_err_std"] = real(r.rel_err_std);
  j["mean_exceeds_sqrt_n"] = r.mean_exceeds_sqrt_n;
  return j;
}

inline Json to_json(const ChiMoments& c, std::size_t n) {
  Json j;
  j["n"] = n;
  j["mean"] = real(c.mean);
  j["std"] = real(c.std);
  j["variance"] = real(c.std * c.std);
  j["sqrt_n"] = real(std::sqrt(static_cast<double>(n)));
  j["asymptotic_std"] = real(std::sqrt(0.5));
  return j;
}

inline Json to_json(const LossBreakdown& b) {
  Json j;
  j["total"] = real(b.total);
  j["alignment"] = real(b.alignment);
  j["uniformity"] = real(b.uniformity);
  j["loss_correct"] = real(b.loss_correct);
  j["loss_misclassified"] = real(b.loss_misclassified);
  j["accuracy"] = real(b.accuracy);
  j["count"] = b.count;
  j["count_correct"] = b.count_correct;
  j["tau"] = real(b.tau);
  j["alpha"] = real(b.alpha);
  j["shift_target"] = std::string(to_string(b.shift_target));
  return j;
}

inline Json to_json(const WhiteningTransform& t) {
  Json j;
  j["dim"] = t.dim();
  j["eigen_floor"] = real(t.eigen_floor);
  j["undersampled"] = t.undersampled;
  j["mean"] = reals(t.mean);
  return j;
}

// A transform is stored as W in an EMB1 file (modality other, one row per
// output feature) plus a JSON sidecar at <path>.json holding mean and floor.
inline std::filesystem::path whitening_sidecar_path(const std::filesystem::path& w_path) {
  auto p = w_path;
  p += ".json";
  return p;
}

inline EmbeddingSet whitening_matrix_set(const WhiteningTransform& t) {
  return EmbeddingSet(Modality::other, RowMatrix(t.W));
}

inline void save_whitening(const WhiteningTransform& t, const std::filesystem::path& w_path) {
  save_emb(whitening_matrix_set(t), w_path);
  detail::write_file_atomic(whitening_sidecar_path(w_path), dump(to_json(t)));
}

inline WhiteningTransform load_whitening(const std::filesystem::path& w_path) {
  const auto w = load_emb(w_path);
  const auto side = whitening_sidecar_path(w_path);
  Json j;
  try {
    j = Json::parse(detail::read_file_bytes(side));
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(side.string() + ": " + e.what());
  }
  WhiteningTransform t;
  try {
    t.mean = to_vector(j.at("mean"));
    t.eigen_floor = to_real(j.at("eigen_floor"));
    t.undersampled = j.at("undersampled").get<bool>();
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(side.string() + ": malformed whitening sidecar: " + e.what());
  }
  if (w.count() != w.dim() || static_cast<std::size_t>(t.mean.size()) != w.dim()) {
    throw FormatError(w_path.string() + ": whitening matrix and mean disagree in size");
  }
  t.W = w.data();
  return t;
}

inline Json to_json(const LinearModel& m) {
  Json j;
  j["feature_indices"] = m.feature_indices;
  j["center"] = reals(m.center);
  j["scale"] = reals(m.scale);
  j["weights"] = reals(m.weights);
  j["bias"] = real(m.bias);
  j["margin"] = real(m.margin);
  return j;
}

inline LinearModel linear_model_from_json(const Json& j) {
  try {
    LinearModel m;
    m.feature_indices = j.at("feature_indices").get<std::vector<std::size_t>>();
    m.center = to_vector(j.at("center"));
    m.scale = to_vector(j.at("scale"));
    m.weights = to_vector(j.at("weights"));
    m.bias = to_real(j.at("bias"));
    m.margin = to_real(j.at("margin"));
    const auto k = m.feature_indices.size();
    if (static_cast<std::size_t>(m.center.size()) != k ||
        static_cast<std::size_t>(m.scale.size()) != k ||
        static_cast<std::size_t>(m.weights.size()) != k) {
      throw FormatError("model arrays disagree in length");
    }
    return m;
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("malformed model JSON: ") + e.what());
  }
}

inline Json to_json(const SyntheticSpec& s) {
  Json j;
  j["dim"] = s.dim;
  j["count"] = s.count;
  j["seed"] = s.seed;
  j["modality"] = std::string(to_string(s.modality));
  j["mean"] = s.mean.size() ? reals(s.mean) : Json::array();
  if (const auto* v = std::get_if<Vector>(&s.scale)) {
    j["scale"] = reals(*v);
  } else {
    j["factor"] = matrix(std::get<Eigen::MatrixXd>(s.scale));
  }
  return j;
}

inline Json to_json(const Histogram& h) {
  Json j;
  j["edges"] = reals(h.edges);
  j["counts"] = h.counts;
  return j;
}

/// One line per bin: edge_lo, edge_hi, count, density.
inline std::string histogram_tsv(const Histogram& h) {
  std::string out = "edge_lo\tedge_hi\tcount\tdensity\n";
  const auto d = h.densities();
  for (std::size_t b = 0; b < h.bins(); ++b) {
    out += format_real(h.edges[b]) + "\t" + format_real(h.edges[b + 1]) + "\t" +
           std::to_string(h.counts[b]) + "\t" + format_real(d[b]) + "\n";
  }
  return out;
}

inline std::string loss_sweep_csv(const std::vector<LossBreakdown>& sweep) {
  std::string out = "alpha,total,alignment,uniformity,loss_correct,loss_misclassified,accuracy\n";
  for (const auto& b : sweep) {
    out += format_real(b.alpha) + "," + format_real(b.total) + "," + format_real(b.alignment) +
           "," + format_real(b.uniformity) + "," + format_real(b.loss_correct) + "," +
           format_real(b.loss_misclassified) + "," + format_real(b.accuracy) + "\n";
  }
  return out;
}

inline std::string kl_sweep_csv(const std::vector<KlSweepPoint>& sweep) {
  std::string out = "alpha,kl\n";
  for (const auto& p : sweep) out += format_real(p.alpha) + "," + format_real(p.kl) + "\n";
  return out;
}

/// Per-instance conformity lines: id, C, cos_to_mean, C_hat. Rows without
/// ids use their index.
inline std::string conformity_tsv(const ConformityReport& r,
                                  const std::optional<std::vector<std::string>>& ids) {
  std::string out = "id\tC\tcos_to_mean\tC_hat\n";
  for (Eigen::Index j = 0; j < r.conformity.size(); ++j) {
    out += (ids ? (*ids)[static_cast<std::size_t>(j)] : std::to_string(j)) + "\t" +
           format_real(r.conformity(j)) + "\t" + format_real(r.cosines_to_mean(j)) + "\t" +
           format_real(r.estimate(j)) + "\n";
  }
  return out;
}

}  // namespace clipgeom::io
