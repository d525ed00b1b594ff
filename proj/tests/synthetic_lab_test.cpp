#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>

#include "clipgeom/contrastive_lab.hpp"
#include "clipgeom/random.hpp"
#include "clipgeom/synthetic_lab.hpp"
#include "clipgeom/whitening.hpp"
#include "test_util.hpp"

using namespace clipgeom;

TEST(SplitMix64, ReferenceOutputs) {
  SplitMix64 zero(0);
  EXPECT_EQ(zero(), 0xE220A8397B1DCDAFull);
  SplitMix64 rng(1234567);
  EXPECT_EQ(rng(), 6457827717110365317ull);
  EXPECT_EQ(rng(), 3203168211198807973ull);
  EXPECT_EQ(rng(), 9817491932198370423ull);
  EXPECT_EQ(rng(), 4593380528125082431ull);
  EXPECT_EQ(rng(), 16408922859458223821ull);
}

TEST(SplitMix64, NormalIsBoxMullerOfConsecutiveDraws) {
  SplitMix64 raw(99), rng(99);
  const double u1 = static_cast<double>((raw() >> 11) + 1) * 0x1.0p-53;
  const double u2 = static_cast<double>(raw() >> 11) * 0x1.0p-53;
  const double r = std::sqrt(-2.0 * std::log(u1));
  EXPECT_EQ(rng.normal(), r * std::cos(2.0 * M_PI * u2));
  EXPECT_EQ(rng.normal(), r * std::sin(2.0 * M_PI * u2));
}

TEST(SeededPermutation, IsPermutationAndSeeded) {
  SplitMix64 a(5), b(5);
  const auto p = seeded_permutation(100, a);
  EXPECT_EQ(p, seeded_permutation(100, b));
  auto sorted = p;
  std::sort(sorted.begin(), sorted.end());
  for (std::size_t i = 0; i < 100; ++i) EXPECT_EQ(sorted[i], i);
}

TEST(GenerateGaussian, ZeroScaleGivesMeanRows) {
  SyntheticSpec spec = SyntheticSpec::isotropic(4, 6, 1);
  spec.scale = Vector(Vector::Zero(4));
  spec.mean = Eigen::Vector4d(1, -2, 3, 0.5);
  const auto set = generate_gaussian(spec);
  for (std::size_t j = 0; j < set.count(); ++j) EXPECT_EQ(Vector(set.row(j).transpose()), spec.mean);
}

TEST(GenerateGaussian, MonteCarloMoments) {
  const auto set = generate_gaussian(SyntheticSpec::isotropic(512, 10000, 3));
  const RowMatrix& x = set.data();
  const Vector mean = x.colwise().mean().transpose();
  const Vector sd = ((x.rowwise() - mean.transpose()).colwise().squaredNorm() / 10000.0).cwiseSqrt().transpose();
  EXPECT_LT(mean.cwiseAbs().maxCoeff(), 0.05);
  EXPECT_LT((sd.array() - 1.0).abs().maxCoeff(), 0.03);
}

TEST(GenerateGaussian, SameSeedSameBits) {
  SyntheticSpec spec = SyntheticSpec::isotropic(16, 50, 8);
  spec.scale = Vector(Vector::LinSpaced(16, 0.1, 3.0));
  EXPECT_EQ(generate_gaussian(spec), generate_gaussian(spec));
  auto other = spec;
  other.seed = 9;
  EXPECT_NE(generate_gaussian(spec).data(), generate_gaussian(other).data());
}

TEST(GenerateGaussian, Errors) {
  auto spec = SyntheticSpec::isotropic(3, 5, 1);
  spec.scale = Vector(Eigen::Vector3d(1, -1, 1));
  EXPECT_THROW(generate_gaussian(spec), InvalidArgument);
  spec.scale = Vector(Eigen::Vector2d(1, 1));
  EXPECT_THROW(generate_gaussian(spec), InvalidArgument);
  spec = SyntheticSpec::isotropic(3, 5, 1);
  spec.scale = Eigen::MatrixXd(Eigen::MatrixXd::Constant(3, 3, NAN));
  EXPECT_THROW(generate_gaussian(spec), NumericError);
  EXPECT_THROW(generate_gaussian(SyntheticSpec::isotropic(0, 5, 1)), InvalidArgument);
  EXPECT_THROW(generate_gaussian(SyntheticSpec::isotropic(3, 0, 1)), InvalidArgument);
}

TEST(GenerateGaussian, FullFactorWhitensBackToIdentity) {
  // well conditioned, so the relative eigen floor is negligible
  const Eigen::MatrixXd l = 0.3 * Eigen::MatrixXd(testutil::gaussian_matrix(8, 8, 31)) + 2.0 * Eigen::MatrixXd::Identity(8, 8);
  SyntheticSpec spec = SyntheticSpec::isotropic(8, 20000, 6);
  spec.scale = l;
  spec.mean = Vector::Constant(8, 4.0);
  const auto set = generate_gaussian(spec);
  const auto stats = compute_stats(set);
  EXPECT_LE((stats.cov - l * l.transpose()).cwiseAbs().maxCoeff(), 0.05 * (l * l.transpose()).cwiseAbs().maxCoeff());
  const auto y = apply_whitening(fit_whitening(set), set);
  EXPECT_LE((compute_stats(y).cov - Eigen::MatrixXd::Identity(8, 8)).cwiseAbs().maxCoeff(), 1e-6);
}

TEST(BlurDemo, CentredAtOriginBothNearZero) {
  const auto d = blur_demo(512, 1000, Vector::Zero(512), 1);
  EXPECT_LT(std::abs(d.mean_of_mean_sim), 0.1);
  EXPECT_LT(std::abs(d.mean_of_far_sim), 0.1);
}

TEST(BlurDemo, ShiftedCentreContrast) {
  Vector c = Vector::Zero(512);
  c.head(3) << 10, 5, 5;
  const auto d = blur_demo(512, 1000, c, 1);
  EXPECT_NEAR(d.analytic_mean_sim, std::sqrt(150.0) / std::sqrt(662.0), 1e-15);
  EXPECT_NEAR(d.mean_of_mean_sim, d.analytic_mean_sim, 0.05);
  EXPECT_GT(d.mean_of_mean_sim - d.mean_of_far_sim, 0.3);
  EXPECT_EQ(d.hist_mean_sim.total(), 1000u);
  EXPECT_EQ(d.hist_far_sim.total(), 999u);
  const auto origin = blur_demo(512, 1000, Vector::Zero(512), 1);
  EXPECT_GT(d.mean_of_mean_sim - origin.mean_of_mean_sim, 0.3);
}

TEST(BlurDemo, TinyCountStillValid) {
  const auto d = blur_demo(4, 3, Vector::Ones(4), 2);
  EXPECT_EQ(d.hist_mean_sim.total(), 3u);
  EXPECT_EQ(d.hist_far_sim.total(), 2u);
  EXPECT_LT(d.far_index, 3u);
  EXPECT_THROW(blur_demo(4, 2, Vector::Ones(4), 2), InvalidArgument);
}

TEST(GeneratePaired, PerfectCouplingIsAligned) {
  const auto spec = SyntheticSpec::isotropic(64, 300, 0);
  const auto p = generate_paired(spec, spec, 1.0, 0, 5);
  const auto ok = classify_pairs(p);
  EXPECT_EQ(std::count(ok.begin(), ok.end(), true), 300);
  EXPECT_EQ(p.images.modality(), Modality::image);
  EXPECT_EQ(p.texts.modality(), Modality::text);
}

TEST(GeneratePaired, ZeroCouplingIsChance) {
  const auto spec = SyntheticSpec::isotropic(64, 500, 0);
  const auto ok = classify_pairs(generate_paired(spec, spec, 0.0, 0, 5));
  EXPECT_LE(std::count(ok.begin(), ok.end(), true), 5);
}

TEST(GeneratePaired, DuplicatesShareTheirSourceConcept) {
  const auto spec = SyntheticSpec::isotropic(64, 40, 0);
  const auto p = generate_paired(spec, spec, 0.9, 10, 5);
  const auto& img = p.images.data();
  // duplicate 30 + d reuses the latent of pair d: close, but not identical
  for (Eigen::Index d = 0; d < 10; ++d) {
    const double cos_dup = img.row(30 + d).normalized().dot(img.row(d).normalized());
    const double cos_other = img.row(30 + d).normalized().dot(img.row(d + 10).normalized());
    EXPECT_GT(cos_dup, 0.6);
    EXPECT_LT(cos_other, 0.5);
    EXPECT_NE(img.row(30 + d), img.row(d));
  }
}

TEST(GeneratePaired, DeterministicAndValidated) {
  const auto spec = SyntheticSpec::isotropic(8, 20, 0);
  const auto a = generate_paired(spec, spec, 0.5, 5, 3);
  const auto b = generate_paired(spec, spec, 0.5, 5, 3);
  EXPECT_EQ(a.images, b.images);
  EXPECT_EQ(a.texts, b.texts);
  EXPECT_THROW(generate_paired(spec, SyntheticSpec::isotropic(9, 20, 0), 0.5, 0, 1), InvalidArgument);
  EXPECT_THROW(generate_paired(spec, spec, 0.5, 20, 1), InvalidArgument);
  EXPECT_THROW(generate_paired(spec, spec, 1.5, 0, 1), InvalidArgument);
}
