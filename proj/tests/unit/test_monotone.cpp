#include <gtest/gtest.h>

#include "icc/errors.hpp"
#include "icc/monotone.hpp"
#include "stats.hpp"

using namespace icc;

namespace {

// Scalar treatment A = f(Z1 + eta) with eta ~ U(0, 1), one proxy tracking Z1.
struct Simple {
  Dataset data;
  VectorXd eta;
};

Simple simple(Eigen::Index n, std::uint64_t seed, const std::function<double(double)>& f,
              const std::function<double(double, double)>& y_of = nullptr) {
  Rng rng({seed, 0});
  MatrixXd z = rng.normal_matrix(n, 1);
  MatrixXd w = z + 0.5 * rng.normal_matrix(n, 1);
  VectorXd eta(n);
  for (auto& e : eta) e = rng.uniform();
  MatrixXd a(n, 1);
  VectorXd y(n);
  for (Eigen::Index i = 0; i < n; ++i) {
    a(i, 0) = f(z(i, 0) + eta(i));
    y(i) = y_of ? y_of(a(i, 0), z(i, 0)) : a(i, 0) + rng.normal();
  }
  return {Dataset(y, a, z, w), eta};
}

// A = Z1 + Z2 + eta with the proxy tracking Z1 only, so Z2 moves A given (V, T).
Dataset spread(Eigen::Index n, std::uint64_t seed, const std::function<double(double, double)>& y_of) {
  Rng rng({seed, 0});
  MatrixXd z = rng.normal_matrix(n, 2);
  z.col(1) *= 2.0;
  MatrixXd w = z.col(0) + 0.5 * rng.normal_matrix(n, 1);
  MatrixXd a(n, 1);
  VectorXd y(n);
  for (Eigen::Index i = 0; i < n; ++i) {
    const double eta = rng.uniform();
    a(i, 0) = z(i, 0) + z(i, 1) + eta;
    y(i) = y_of(a(i, 0), eta) + 0.5 * rng.normal();
  }
  return Dataset(y, a, z, w);
}

double corr(const VectorXd& a, const VectorXd& b) {
  const VectorXd x = a.array() - a.mean(), y = b.array() - b.mean();
  return x.dot(y) / std::sqrt(x.squaredNorm() * y.squaredNorm());
}

std::vector<double> as_vec(const VectorXd& v) { return {v.data(), v.data() + v.size()}; }

AverageCausalConfig quick(int boot = 0) {
  AverageCausalConfig c;
  c.bootstrap = boot;
  c.workers = 1;
  return c;
}

}  // namespace

TEST(Vt, TracksFirstStageDisturbance) {
  auto s = simple(10000, 1, [](double v) { return v; });
  auto cf = estimate_control(s.data, 1);
  for (VtMethod m : {VtMethod::Rank, VtMethod::LocalLinear}) {
    VtConfig cfg;
    cfg.method = m;
    auto mc = estimate_vt(s.data, cf, cfg);
    EXPECT_GT(corr(mc.v, s.eta), 0.95);
    EXPECT_LT(icc::testing::ks_uniform(as_vec(mc.v)), 0.05);
    EXPECT_GT(mc.v.minCoeff(), 0.0);
    EXPECT_LT(mc.v.maxCoeff(), 1.0);
    EXPECT_FALSE(mc.degenerate);
  }
}

TEST(Vt, RankInvariance) {
  auto s = simple(3000, 2, [](double v) { return v; });
  auto cf = estimate_control(s.data, 1);
  VtConfig rank;
  rank.method = VtMethod::Rank;
  const VectorXd v0 = estimate_vt(s.data, cf, rank).v;
  const MatrixXd a_exp = s.data.a().array().exp().matrix();
  const MatrixXd a_cube = s.data.a().array().cube().matrix() + s.data.a();
  EXPECT_LT((estimate_vt(s.data.with_a(a_exp), cf, rank).v - v0).cwiseAbs().maxCoeff(), 1e-12);
  EXPECT_LT((estimate_vt(s.data.with_a(a_cube), cf, rank).v - v0).cwiseAbs().maxCoeff(), 1e-12);

  VtConfig ll;
  const VectorXd l0 = estimate_vt(s.data, cf, ll).v;
  const MatrixXd affine = (3.0 * s.data.a().array() - 7.0).matrix();
  EXPECT_LT((estimate_vt(s.data.with_a(affine), cf, ll).v - l0).cwiseAbs().maxCoeff(), 1e-12);
}

TEST(Vt, NoTiesWithinCells) {
  auto s = simple(2000, 3, [](double v) { return v; });
  auto mc = estimate_vt(s.data, estimate_control(s.data, 1));
  std::map<int, std::vector<double>> by_cell;
  for (Eigen::Index i = 0; i < mc.v.size(); ++i) by_cell[mc.z_cell[i]].push_back(mc.v(i));
  EXPECT_EQ(static_cast<int>(by_cell.size()), mc.cells);
  for (auto& [cell, v] : by_cell) {
    std::sort(v.begin(), v.end());
    EXPECT_EQ(std::adjacent_find(v.begin(), v.end()), v.end()) << "cell " << cell;
  }
}

TEST(Vt, DeterministicTreatmentIsDegenerate) {
  auto s = simple(3000, 4, [](double v) { return v; });
  Dataset d = s.data.with_a((2.0 * s.data.z().array() - 1.0).matrix());
  auto mc = estimate_vt(d, estimate_control(d, 1));
  EXPECT_TRUE(mc.degenerate);
  EXPECT_THROW(average_causal(d, mc, Contrast::difference(0, 1), quick(), {1, 0}), PreconditionError);
}

// A curved function of Z leaves a small local-linear residual, so the gate that
// catches it is common support rather than the degeneracy flag.
TEST(Vt, CurvedDeterministicTreatmentFailsSupport) {
  auto s = simple(3000, 4, [](double v) { return v; });
  Dataset d = s.data.with_a((s.data.z().array().cube() + 0.5 * s.data.z().array()).matrix());
  auto mc = estimate_vt(d, estimate_control(d, 1));
  EXPECT_LT(mc.residual_ratio, 0.05);
  EXPECT_THROW(average_causal(d, mc, Contrast::difference(0, 1), quick(), {1, 0}), IdentificationError);
}

TEST(Vt, SmallSampleMergesCells) {
  auto s = simple(25, 5, [](double v) { return v; });
  auto mc = estimate_vt(s.data, estimate_control(s.data, 1));
  EXPECT_TRUE(mc.merged);
  EXPECT_EQ(mc.cells, 1);
  auto rep = check_common_support(mc, s.data.a().col(0), VectorXd::Constant(1, s.data.a().mean()));
  EXPECT_EQ(rep.entries[0].grid, 1);
  EXPECT_EQ(rep.worst, 0.0);
}

TEST(Support, CensoredTreatmentAtItsMaximum) {
  auto s = simple(10000, 6, [](double v) { return std::min(v, 1.0); });
  auto mc = estimate_vt(s.data, estimate_control(s.data, 1));
  auto rep = check_common_support(mc, s.data.a().col(0), VectorXd::Constant(1, 1.0));
  EXPECT_GT(rep.worst, 0.05);
  EXPECT_FALSE(rep.ok());
}

TEST(Support, RichDisturbanceCoversInterior) {
  MonotoneDGP g;
  Dataset d = sample_monotone(g, 10000, {7, 0});
  auto mc = estimate_vt(d, estimate_control(d, 1));
  auto rep = check_common_support(mc, d.a().col(0), (VectorXd(2) << 0.0, 1.0).finished());
  EXPECT_LT(rep.worst, 0.05);
  EXPECT_TRUE(rep.ok());
}

TEST(AverageCausal, IdentityEffect) {
  Dataset d = spread(10000, 8, [](double a, double eta) { return a + 20 * eta; });
  auto r = average_causal(d, Contrast::difference(0.2, 1.2), quick(60), {8, 0});
  EXPECT_GT(r.se, 0);
  EXPECT_LT(std::abs(r.theta - 1.0), 3 * r.se);
  EXPECT_GT(r.naive - 1.0, 0.1);
}

TEST(AverageCausal, NoEffectGivesZero) {
  // Y depends on the first-stage disturbance only; any contrast in A is zero.
  Dataset d = spread(10000, 9, [](double, double eta) { return 2 * eta; });
  auto r = average_causal(d, Contrast::difference(0.2, 1.2), quick(60), {9, 0});
  EXPECT_LT(std::abs(r.theta), 3 * r.se + 1e-9);
}

TEST(AverageCausal, NonseparableDesignSingleDraw) {
  MonotoneDGP g;
  Dataset d = sample_monotone(g, 10000, {10, 0});
  auto r = average_causal(d, Contrast::difference(0, 1), quick(), {10, 0});
  EXPECT_NEAR(r.theta, g.true_effect(0, 1), 0.05);
  EXPECT_GT(r.naive - g.true_effect(0, 1), 0.1);
  EXPECT_EQ(r.dropped_mass, 0.0);
}

TEST(AverageCausal, BootstrapIsDeterministic) {
  MonotoneDGP g;
  Dataset d = sample_monotone(g, 2000, {11, 0});
  auto c = quick(20);
  auto a = average_causal(d, Contrast::difference(0, 1), c, {5, 0});
  c.workers = 2;
  auto b = average_causal(d, Contrast::difference(0, 1), c, {5, 0});
  EXPECT_EQ(a.theta, b.theta);
  EXPECT_EQ(a.se, b.se);
  EXPECT_EQ(to_json(a).dump(), to_json(b).dump());
}

TEST(MonotoneDgp, JsonRoundTripAndTruth) {
  MonotoneDGP g;
  g.mu = 1.7;
  auto back = monotone_dgp_from_json(to_json(g));
  EXPECT_EQ(back.mu, 1.7);
  EXPECT_DOUBLE_EQ(back.true_effect(-1, 1), 3.4);
  VectorXd eta;
  Dataset d = sample_monotone(g, 500, {12, 0}, &eta);
  EXPECT_EQ(eta.size(), 500);
  EXPECT_EQ(d.d_w(), 2);
  EXPECT_EQ(d.d_z(), 2);
}
