#pragma once

#include <cmath>
#include <cstdint>
#include <limits>
#include <string_view>
#include <vector>

#include <Eigen/Dense>

#include "clipgeom/conformity.hpp"
#include "clipgeom/embedding_store.hpp"
#include "clipgeom/error.hpp"
#include "clipgeom/parallel.hpp"
#include "clipgeom/random.hpp"

namespace clipgeom {

// Which retrieval directions must hit the paired partner for an instance to
// count as correctly classified.
enum class MatchRule { symmetric, text_to_image, image_to_text };

inline std::string_view to_string(MatchRule r) {
  switch (r) {
    case MatchRule::symmetric: return "symmetric";
    case MatchRule::text_to_image: return "text-to-image";
    case MatchRule::image_to_text: return "image-to-text";
  }
  return "symmetric";
}

inline MatchRule match_rule_from_string(std::string_view s) {
  if (s == "symmetric") return MatchRule::symmetric;
  if (s == "text-to-image") return MatchRule::text_to_image;
  if (s == "image-to-text") return MatchRule::image_to_text;
  throw InvalidArgument("unknown match rule '" + std::string(s) + "'");
}

inline constexpr double kDefaultTau = 0.01;

struct LossOptions {
  double tau = kDefaultTau;
  MatchRule rule = MatchRule::symmetric;
  std::size_t batch_size = 0;  // 0 or >= M: the whole set is one batch
  std::uint64_t seed = 0;      // batch shuffling
};

/// NT-Xent loss with its alignment/uniformity split and the split by
/// correctly classified vs misclassified instances.
///
/// `alignment` is the already-negated term -E[t_j . i_j / tau], so that
/// total == alignment + uniformity.
struct LossBreakdown {
  double total = 0.0;
  double alignment = 0.0;
  double uniformity = 0.0;
  double loss_correct = 0.0;        // 0 when no instance is correct
  double loss_misclassified = 0.0;  // 0 when every instance is correct
  double accuracy = 0.0;
  std::size_t count = 0;
  std::size_t count_correct = 0;
  double tau = kDefaultTau;
  double alpha = 0.0;
  ShiftTarget shift_target = ShiftTarget::image;
};

/// Per-instance quantities of one batch. Row j of the similarity matrix is
/// text j against every image; column j is image j against every text.
struct InstanceTerms {
  Vector diag;     // t_j . i_j / tau
  Vector row_lse;  // log sum_k exp(t_j . i_k / tau)
  Vector col_lse;  // log sum_k exp(t_k . i_j / tau)
  std::vector<std::uint8_t> text_to_image_hit;
  std::vector<std::uint8_t> image_to_text_hit;

  double instance_loss(Eigen::Index j) const {
    return -0.5 * ((diag(j) - row_lse(j)) + (diag(j) - col_lse(j)));
  }
};

namespace detail {

inline constexpr Eigen::Index kSimilarityBlock = 256;

inline void require_tau(double tau) {
  require(tau > 0.0 && std::isfinite(tau), "tau must be positive and finite");
}

// Streams the M x M similarity matrix in row blocks. Row statistics are
// finished per block; column statistics use an online log-sum-exp that
// rescales the running sum whenever the running max grows. Argmax ties go to
// the lowest index.
inline InstanceTerms instance_terms(const RowMatrix& unit_images, const RowMatrix& unit_texts,
                                    double tau) {
  const Eigen::Index m = unit_images.rows();
  const double inv_tau = 1.0 / tau;
  InstanceTerms out;
  out.diag.resize(m);
  out.row_lse.resize(m);
  out.col_lse.resize(m);
  out.text_to_image_hit.assign(static_cast<std::size_t>(m), 0);
  out.image_to_text_hit.assign(static_cast<std::size_t>(m), 0);

  Eigen::ArrayXd col_max = Eigen::ArrayXd::Constant(m, -std::numeric_limits<double>::infinity());
  Eigen::ArrayXd col_sum = Eigen::ArrayXd::Zero(m);
  Eigen::ArrayXd col_best = Eigen::ArrayXd::Constant(m, -std::numeric_limits<double>::infinity());
  std::vector<Eigen::Index> col_arg(static_cast<std::size_t>(m), 0);

  RowMatrix block;
  for (Eigen::Index r0 = 0; r0 < m; r0 += kSimilarityBlock) {
    const Eigen::Index rows = std::min(kSimilarityBlock, m - r0);
    block.noalias() = unit_texts.middleRows(r0, rows) * unit_images.transpose();

    for (Eigen::Index r = 0; r < rows; ++r) {
      const Eigen::Index j = r0 + r;
      const auto row = block.row(r);
      Eigen::Index arg = 0;
      double best = row(0);
      for (Eigen::Index k = 1; k < m; ++k) {
        if (row(k) > best) {
          best = row(k);
          arg = k;
        }
      }
      out.text_to_image_hit[static_cast<std::size_t>(j)] = arg == j;
      const double mx = best * inv_tau;
      out.row_lse(j) = mx + std::log(((row.array() * inv_tau) - mx).exp().sum());
      out.diag(j) = block(r, j) * inv_tau;
    }

    for (Eigen::Index r = 0; r < rows; ++r) {
      const auto row = block.row(r).array();
      for (Eigen::Index k = 0; k < m; ++k) {
        if (row(k) > col_best(k)) {
          col_best(k) = row(k);
          col_arg[static_cast<std::size_t>(k)] = r0 + r;
        }
      }
    }
    const Eigen::ArrayXd block_max = (block.colwise().maxCoeff().array() * inv_tau).transpose();
    const Eigen::ArrayXd new_max = col_max.max(block_max);
    col_sum *= (col_max - new_max).exp();
    col_max = new_max;
    for (Eigen::Index r = 0; r < rows; ++r) {
      col_sum += ((block.row(r).array().transpose() * inv_tau) - col_max).exp();
    }
  }
  out.col_lse = (col_max + col_sum.log()).matrix();
  for (Eigen::Index k = 0; k < m; ++k) {
    out.image_to_text_hit[static_cast<std::size_t>(k)] = col_arg[static_cast<std::size_t>(k)] == k;
  }
  return out;
}

inline bool is_correct(const InstanceTerms& t, std::size_t j, MatchRule rule) {
  switch (rule) {
    case MatchRule::symmetric: return t.text_to_image_hit[j] && t.image_to_text_hit[j];
    case MatchRule::text_to_image: return t.text_to_image_hit[j] != 0;
    case MatchRule::image_to_text: return t.image_to_text_hit[j] != 0;
  }
  return false;
}

struct InstanceResults {
  Vector loss;
  Vector diag;
  Vector uniformity;  // (row_lse + col_lse) / 2
  std::vector<std::uint8_t> correct;
};

inline InstanceResults evaluate_instances(const RowMatrix& unit_images,
                                          const RowMatrix& unit_texts,
                                          const LossOptions& opts) {
  const Eigen::Index m = unit_images.rows();
  InstanceResults res;
  res.loss.resize(m);
  res.diag.resize(m);
  res.uniformity.resize(m);
  res.correct.assign(static_cast<std::size_t>(m), 0);

  auto absorb = [&](const InstanceTerms& t, const std::vector<Eigen::Index>& members) {
    for (std::size_t b = 0; b < members.size(); ++b) {
      const auto j = members[b];
      const auto bi = static_cast<Eigen::Index>(b);
      res.loss(j) = t.instance_loss(bi);
      res.diag(j) = t.diag(bi);
      res.uniformity(j) = 0.5 * (t.row_lse(bi) + t.col_lse(bi));
      res.correct[static_cast<std::size_t>(j)] = is_correct(t, b, opts.rule);
    }
  };

  if (opts.batch_size == 0 || opts.batch_size >= static_cast<std::size_t>(m)) {
    std::vector<Eigen::Index> all(static_cast<std::size_t>(m));
    for (Eigen::Index j = 0; j < m; ++j) all[static_cast<std::size_t>(j)] = j;
    absorb(instance_terms(unit_images, unit_texts, opts.tau), all);
    return res;
  }

  SplitMix64 rng(opts.seed);
  const auto perm = seeded_permutation(static_cast<std::size_t>(m), rng);
  for (std::size_t start = 0; start < perm.size(); start += opts.batch_size) {
    const std::size_t end = std::min(perm.size(), start + opts.batch_size);
    std::vector<Eigen::Index> members;
    for (std::size_t p = start; p < end; ++p) members.push_back(static_cast<Eigen::Index>(perm[p]));
    RowMatrix bi(static_cast<Eigen::Index>(members.size()), unit_images.cols());
    RowMatrix bt(static_cast<Eigen::Index>(members.size()), unit_texts.cols());
    for (std::size_t b = 0; b < members.size(); ++b) {
      bi.row(static_cast<Eigen::Index>(b)) = unit_images.row(members[b]);
      bt.row(static_cast<Eigen::Index>(b)) = unit_texts.row(members[b]);
    }
    absorb(instance_terms(bi, bt, opts.tau), members);
  }
  return res;
}

inline LossBreakdown summarize(const InstanceResults& r, const LossOptions& opts) {
  LossBreakdown lb;
  const auto m = static_cast<double>(r.loss.size());
  lb.count = static_cast<std::size_t>(r.loss.size());
  lb.tau = opts.tau;
  lb.total = r.loss.sum() / m;
  lb.alignment = -r.diag.sum() / m;
  lb.uniformity = r.uniformity.sum() / m;
  double sum_ok = 0.0, sum_bad = 0.0;
  for (Eigen::Index j = 0; j < r.loss.size(); ++j) {
    if (r.correct[static_cast<std::size_t>(j)]) {
      sum_ok += r.loss(j);
      ++lb.count_correct;
    } else {
      sum_bad += r.loss(j);
    }
  }
  const std::size_t bad = lb.count - lb.count_correct;
  lb.loss_correct = lb.count_correct ? sum_ok / static_cast<double>(lb.count_correct) : 0.0;
  lb.loss_misclassified = bad ? sum_bad / static_cast<double>(bad) : 0.0;
  lb.accuracy = static_cast<double>(lb.count_correct) / m;
  return lb;
}

}  // namespace detail

/// NT-Xent over the whole pair set (or seeded mini-batches when
/// opts.batch_size is set). Rows are unit-normalized internally.
inline LossBreakdown clip_loss(const PairedEmbeddings& pair, const LossOptions& opts = {}) {
  detail::require_tau(opts.tau);
  const RowMatrix ui = detail::unit_rows(pair.images.data(), "clip_loss");
  const RowMatrix ut = detail::unit_rows(pair.texts.data(), "clip_loss");
  return detail::summarize(detail::evaluate_instances(ui, ut, opts), opts);
}

/// Correct iff the paired partner is the top-1 cosine match in the direction(s)
/// required by `rule`; ties resolve toward the lowest index. Independent of tau.
inline std::vector<bool> classify_pairs(const PairedEmbeddings& pair, double tau = kDefaultTau,
                                        MatchRule rule = MatchRule::symmetric) {
  detail::require_tau(tau);
  const RowMatrix ui = detail::unit_rows(pair.images.data(), "classify_pairs");
  const RowMatrix ut = detail::unit_rows(pair.texts.data(), "classify_pairs");
  // Argmax is taken on cosines, so any positive temperature gives the same answer.
  const auto terms = detail::instance_terms(ui, ut, 1.0);
  std::vector<bool> out(pair.count());
  for (std::size_t j = 0; j < out.size(); ++j) out[j] = detail::is_correct(terms, j, rule);
  return out;
}

/// Loss landscape over translations v' = v - alpha * m of the targeted
/// modality (or both). Means come from the unshifted input.
inline std::vector<LossBreakdown> alpha_sweep(const PairedEmbeddings& pair,
                                              const std::vector<double>& alphas,
                                              ShiftTarget target, const LossOptions& opts = {}) {
  detail::require_tau(opts.tau);
  const auto& img = pair.images.data();
  const auto& txt = pair.texts.data();
  const Vector m_i = detail::column_mean(img);
  const Vector m_t = detail::column_mean(txt);
  const bool shift_i = target != ShiftTarget::text;
  const bool shift_t = target != ShiftTarget::image;

  std::vector<LossBreakdown> out(alphas.size());
  parallel_for(alphas.size(), [&](std::size_t k) {
    const double alpha = alphas[k];
    const RowMatrix ui =
        detail::unit_rows(shift_i ? detail::shifted(img, m_i, alpha) : img, "alpha_sweep");
    const RowMatrix ut =
        detail::unit_rows(shift_t ? detail::shifted(txt, m_t, alpha) : txt, "alpha_sweep");
    out[k] = detail::summarize(detail::evaluate_instances(ui, ut, opts), opts);
    out[k].alpha = alpha;
    out[k].shift_target = target;
  });
  return out;
}

}  // namespace clipgeom
