#include <gtest/gtest.h>

#include "icc/errors.hpp"
#include "icc/linalg.hpp"
#include "icc/linear_dgp.hpp"

using namespace icc;

namespace {

// Covariance of (Z, W, A, Y) written out as loadings on the independent
// shocks (U, e_z, e_w, e_a, e_y).  No covariates.
struct Loadings {
  MatrixXd z, w, a, y;
};

Loadings loadings(LinearDGPSpec s) {
  s.validate();
  const int k = s.d_u + s.d_z + s.d_w + s.d_a + 1;
  MatrixXd lu = MatrixXd::Zero(s.d_u, k);
  if (s.d_u) lu.leftCols(s.d_u) = Eigen::LLT<MatrixXd>(s.sigma_u).matrixL().toDenseMatrix();
  Loadings l;
  l.z = s.gamma_z.transpose() * lu;
  l.z.block(0, s.d_u, s.d_z, s.d_z) += s.sd_z * MatrixXd::Identity(s.d_z, s.d_z);
  l.w = s.gamma_w.transpose() * lu;
  l.w.block(0, s.d_u + s.d_z, s.d_w, s.d_w) += s.sd_w * MatrixXd::Identity(s.d_w, s.d_w);
  l.a = s.zeta.transpose() * l.z + s.gamma_a.transpose() * lu + s.upsilon_a.transpose() * l.w;
  l.a.block(0, s.d_u + s.d_z + s.d_w, s.d_a, s.d_a) += s.sd_a * MatrixXd::Identity(s.d_a, s.d_a);
  l.y = s.beta.transpose() * l.a + s.gamma_y.transpose() * lu + s.upsilon_y.transpose() * l.w;
  l.y(0, k - 1) += s.sd_y;
  return l;
}

VectorXd plain_2sls(const Loadings& l) {
  const MatrixXd szz = l.z * l.z.transpose();
  const MatrixXd saz = l.a * l.z.transpose();
  const MatrixXd szy = l.z * l.y.transpose();
  const MatrixXd p = szz.inverse();
  return (saz * p * saz.transpose()).inverse() * (saz * p * szy);
}

}  // namespace

TEST(LinearDgp, S1CrossCovarianceHasRankOne) {
  PopulationMoments m(spec_s1());
  const MatrixXd szw = m.block(Var::Z, Var::W);
  EXPECT_EQ(linalg::numerical_rank(szw, 1e-12), 1);
  const MatrixXd expect = (MatrixXd(3, 2) << 1, 1, 1, 1, 0, 0).finished();
  EXPECT_LT((szw - expect).cwiseAbs().maxCoeff(), 1e-14);
}

TEST(LinearDgp, MomentsMatchIndependentLoadings) {
  Rng rng({21, 0});
  for (int rep = 0; rep < 10; ++rep) {
    auto s = random_identified_spec(rng, 2, 4, 3, 1);
    PopulationMoments m(s);
    auto l = loadings(s);
    EXPECT_LT((m.block(Var::Z, Var::W) - l.z * l.w.transpose()).cwiseAbs().maxCoeff(), 1e-10);
    EXPECT_LT((m.block(Var::A, Var::Z) - l.a * l.z.transpose()).cwiseAbs().maxCoeff(), 1e-10);
    EXPECT_LT((m.block(Var::Y, Var::A) - l.y * l.a.transpose()).cwiseAbs().maxCoeff(), 1e-10);
    EXPECT_LT((m.block(Var::Y, Var::Y) - l.y * l.y.transpose()).cwiseAbs().maxCoeff(), 1e-10);
  }
}

TEST(LinearDgp, NoConfounderGivesZeroCrossCovariance) {
  auto s = spec_s1();
  s.d_u = 0;
  s.sigma_u = s.gamma_z = s.gamma_w = s.gamma_a = s.gamma_y = MatrixXd();
  s.validate();
  EXPECT_EQ(PopulationMoments(s).block(Var::Z, Var::W).cwiseAbs().maxCoeff(), 0.0);
}

TEST(LinearDgp, Bilinearity) {
  LinearDGPSpec s;
  s.d_u = 1;
  s.d_z = 2;
  s.d_w = 1;
  s.gamma_z = (MatrixXd(1, 2) << 1, 0).finished();
  s.gamma_w = MatrixXd::Constant(1, 1, 0.7);
  s.beta = VectorXd::Ones(1);
  s.validate();
  const MatrixXd base = PopulationMoments(s).block(Var::Z, Var::W);
  s.gamma_z *= 2;
  EXPECT_LT((PopulationMoments(s).block(Var::Z, Var::W) - 2 * base).cwiseAbs().maxCoeff(), 1e-15);
}

TEST(LinearDgp, S1TrueFactorRecoversBeta) {
  PopulationMoments m(spec_s1());
  VectorXd b = population_icc_beta(m, factor_zw(m, 1));
  EXPECT_NEAR(b(0), 2.0, 1e-10);
}

// Plain IV with the three instruments: 33/14 from the hand-worked moments
// Sigma_Z = [[2,1,0],[1,2,0],[0,0,1]], Sigma_ZA = (3,2,0), Sigma_ZY = (7,5,0).
TEST(LinearDgp, S1IgnoringConfoundingIsBiased) {
  const auto s = spec_s1();
  const double oracle = plain_2sls(loadings(s))(0);
  EXPECT_NEAR(oracle, 33.0 / 14.0, 1e-12);
  PopulationMoments m(s);
  VectorXd b = population_icc_beta(m, MatrixXd(3, 0));
  EXPECT_NEAR(b(0), 33.0 / 14.0, 1e-12);
  EXPECT_GT(b(0) - 2.0, 0.35);
}

TEST(LinearDgp, NoConfoundingEmptyControlIsPlain2sls) {
  Rng rng({5, 0});
  auto s = random_identified_spec(rng, 1, 3, 2, 1);
  s.d_u = 0;
  s.sigma_u = s.gamma_z = s.gamma_w = s.gamma_a = s.gamma_y = MatrixXd();
  s.validate();
  VectorXd b = population_icc_beta(PopulationMoments(s), MatrixXd(3, 0));
  EXPECT_NEAR(b(0), plain_2sls(loadings(s))(0), 1e-10);
  EXPECT_NEAR(b(0), s.beta(0), 1e-10);
}

TEST(LinearDgp, RandomSpecsRecoverBetaExactly) {
  Rng rng({77, 0});
  double worst = 0;
  for (int rep = 0; rep < 50; ++rep) {
    const int d_u = 1 + rep % 2, d_a = 1 + (rep / 2) % 2;
    auto s = random_identified_spec(rng, d_u, d_u + d_a + rep % 3, d_u + rep % 2, d_a, rep % 3 == 0 ? 1 : 0);
    PopulationMoments m(s);
    VectorXd b = population_icc_beta(m, factor_zw(m, d_u));
    worst = std::max(worst, (b - s.beta).cwiseAbs().maxCoeff());
  }
  EXPECT_LT(worst, 1e-8);
}

TEST(LinearDgp, ExhaustingInstrumentsFailsRelevance) {
  auto s = spec_sweep();
  PopulationMoments m(s);
  EXPECT_THROW(population_icc_beta(m, factor_zw(m, 3)), IdentificationError);
}

TEST(LinearDgp, NoiselessDegenerateCase) {
  LinearDGPSpec s;
  s.d_u = 0;
  s.d_z = 2;
  s.d_w = 1;
  s.d_a = 1;
  s.zeta = (MatrixXd(2, 1) << 1, -0.5).finished();
  s.beta = VectorXd::Constant(1, 1.7);
  s.sd_a = s.sd_y = s.sd_w = 0;
  s.validate();
  Dataset d = sample_linear(s, 50, {1, 0});
  EXPECT_LT((d.y() - d.a() * s.beta).cwiseAbs().maxCoeff(), 1e-12);
}

TEST(LinearDgp, SampleCovarianceConverges) {
  const auto s = spec_s1();
  const Eigen::Index n = 100000;
  Dataset d = sample_linear(s, n, {2024, 0});
  PopulationMoments m(s);
  const double tol = 5.0 / std::sqrt(static_cast<double>(n));
  EXPECT_LT((linalg::covariance(d.z(), d.w()) - m.block(Var::Z, Var::W)).cwiseAbs().maxCoeff(), tol);
  EXPECT_LT((linalg::covariance(d.z(), d.z()) - m.block(Var::Z, Var::Z)).cwiseAbs().maxCoeff(), tol);
  EXPECT_LT((linalg::covariance(d.w(), d.w()) - m.block(Var::W, Var::W)).cwiseAbs().maxCoeff(), tol);
}

TEST(LinearDgp, UnconfoundedInstrumentsAreUncorrelatedWithProxies) {
  auto s = spec_s1();
  s.gamma_z.setZero();
  const Eigen::Index n = 100000;
  Dataset d = sample_linear(s, n, {8, 0});
  const MatrixXd c = linalg::covariance(d.z(), d.w());
  const VectorXd sz = linalg::column_sd(d.z()), sw = linalg::column_sd(d.w());
  const MatrixXd corr = sz.cwiseInverse().asDiagonal() * c * sw.cwiseInverse().asDiagonal();
  EXPECT_LT(corr.cwiseAbs().maxCoeff(), 4.0 / std::sqrt(static_cast<double>(n)));
}

TEST(LinearDgp, OutcomeNoiseIsExogenous) {
  auto s = spec_s1();
  const Eigen::Index n = 100000;
  Dataset d = sample_linear(s, n, {19, 0});
  // eps_Y = Y - A beta - U gamma_Y; U is not observed, but W and Z are
  // uncorrelated with the structural residual after removing U's share.
  PopulationMoments m(s);
  const MatrixXd szy = linalg::covariance(d.z(), d.y()) - linalg::covariance(d.z(), d.a()) * s.beta;
  const MatrixXd pop = m.block(Var::Z, Var::U) * s.gamma_y;
  EXPECT_LT((szy - pop).cwiseAbs().maxCoeff(), 5.0 / std::sqrt(static_cast<double>(n)));
}

TEST(LinearDgp, SpecJsonRoundTrip) {
  Rng rng({3, 0});
  auto s = random_identified_spec(rng, 2, 4, 3, 1, 1);
  auto back = spec_from_json(to_json(s));
  EXPECT_EQ(to_json(back).dump(), to_json(s).dump());
}
