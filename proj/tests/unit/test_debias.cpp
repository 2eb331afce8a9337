#include <gtest/gtest.h>

#include <optional>

#include "brute.hpp"
#include "icc/debias.hpp"
#include "icc/errors.hpp"
#include "stats.hpp"

using namespace icc;
using namespace icc::discrete;

namespace {

GeneratorConfig fixture_config() {
  GeneratorConfig c;
  c.n_u1 = 2;
  c.n_eta = 2;
  c.n_groups = 2;
  c.n_within = 3;
  c.n_w = 4;
  c.n_a = 2;
  c.y_depends_on_w = false;
  c.treatment_independent_of_control = true;
  return c;
}

VectorXd diff_pi() { return (VectorXd(2) << -1, 1).finished(); }

// Draws fixtures until one passes the identification gate.
struct Fixture {
  DiscreteModel model;
  std::optional<JointTable> joint;
  std::optional<ExactMomentModel> em;
};

Fixture draw_fixture(Rng& rng, GeneratorConfig cfg = fixture_config()) {
  for (int attempt = 0; attempt < 50; ++attempt) {
    Fixture f;
    f.model = random_model(rng, cfg);
    f.joint.emplace(f.model);
    try {
      f.em.emplace(*f.joint, diff_pi());
      return f;
    } catch (const IdentificationError&) {
    }
  }
  throw std::runtime_error("no identified fixture");
}

VectorXd noise(Rng& rng, Eigen::Index n, double s) { return s * rng.normal_matrix(n, 1).col(0); }

NuisanceTables perturbed(const ExactMomentModel& em, Rng& rng, double s) {
  const auto& t = em.truth();
  NuisanceTables p;
  p.g = t.g + s * em.random_direction(Nuisance::G, rng);
  p.tau = em.tau_of(p.g) + s * em.random_direction(Nuisance::Tau, rng);
  p.k = em.k_of(p.tau, p.g);
  p.q_k = t.q_k + s * em.random_direction(Nuisance::QK, rng);
  p.q_tau = em.qtau_of(p.q_k) + s * em.random_direction(Nuisance::QTau, rng);
  p.alpha_g = em.alpha_of(p.q_k, p.q_tau) + s * em.random_direction(Nuisance::AlphaG, rng);
  return p;
}

}  // namespace

TEST(ExactModel, FredholmAndRieszResiduals) {
  Rng rng({1, 0});
  for (int rep = 0; rep < 30; ++rep) {
    auto f = draw_fixture(rng);
    const auto& d = f.em->diagnostics();
    EXPECT_LT(d.tau_residual, 1e-10);
    EXPECT_LT(d.k_residual, 1e-10);
    EXPECT_LT(d.riesz_residual, 1e-10);
    EXPECT_LT(d.qtau_residual, 1e-10);
    icc::testing::Brute b(f.model);
    EXPECT_NEAR(f.em->theta0(), b.potential_mean(1) - b.potential_mean(0), 1e-8);
  }
}

TEST(ExactModel, RieszRepresenterOnRandomK) {
  Rng rng({2, 0});
  auto f = draw_fixture(rng);
  const VectorXd alpha = f.em->alpha_k();
  const VectorXd pa = f.em->p_a();
  for (int rep = 0; rep < 20; ++rep) {
    const VectorXd k = rng.normal_matrix(pa.size(), 1).col(0);
    EXPECT_NEAR(f.em->m0(k), pa.cwiseProduct(alpha).dot(k), 1e-10);
  }
}

TEST(ExactModel, IndependentProxiesMakeTauConstant) {
  Rng rng({3, 0});
  auto cfg = fixture_config();
  for (int attempt = 0; attempt < 20; ++attempt) {
    auto m = random_model(rng, cfg);
    for (int u = 1; u < m.n_u(); ++u) m.p_w_given_u.row(u) = m.p_w_given_u.row(0);
    JointTable j(m);
    const auto t = minimal_discrete_control(j);
    EXPECT_EQ(t.classes, 1);
    try {
      ExactMomentModel em(j, diff_pi());
      const VectorXd tau = em.truth().tau;
      const double eg = em.p_z().dot(em.truth().g);
      EXPECT_LT((tau.array() - eg).abs().maxCoeff(), 1e-12);
      return;
    } catch (const IdentificationError&) {
    }
  }
  FAIL() << "no identified draw";
}

TEST(Moment, ZeroDebiasingReducesToPlugIn) {
  Rng rng({4, 0});
  auto f = draw_fixture(rng);
  NuisanceTables n = perturbed(*f.em, rng, 0.3);
  n.q_k.setZero();
  n.q_tau.setZero();
  n.alpha_g.setZero();
  EXPECT_NEAR(f.em->expected_m3(n), f.em->m0(n.k), 1e-12);
}

TEST(Moment, ExactNuisancesGiveTheta) {
  Rng rng({5, 0});
  for (int rep = 0; rep < 20; ++rep) {
    auto f = draw_fixture(rng);
    EXPECT_NEAR(f.em->expected_m3(f.em->truth()), f.em->theta0(), 1e-10);
    auto dec = f.em->decompose(f.em->truth());
    EXPECT_NEAR(dec.lhs, 0.0, 1e-10);
    for (double t : dec.terms) EXPECT_NEAR(t, 0.0, 1e-12);
  }
}

TEST(Moment, PerturbedGWithExactPartners) {
  Rng rng({6, 0});
  auto f = draw_fixture(rng);
  NuisanceTables n = f.em->truth();
  n.g += f.em->random_direction(Nuisance::G, rng);
  EXPECT_NEAR(f.em->expected_m3(n), f.em->theta0(), 1e-10);
}

TEST(Decomposition, GapVanishes) {
  Rng rng({7, 0});
  double worst = 0;
  for (int rep = 0; rep < 50; ++rep) {
    auto f = draw_fixture(rng);
    auto dec = f.em->decompose(perturbed(*f.em, rng, 0.1));
    worst = std::max(worst, std::abs(dec.gap()));
    EXPECT_LE(std::abs(dec.lhs), dec.bound() + 1e-12);
  }
  EXPECT_LT(worst, 1e-10);
}

TEST(Decomposition, OnlyQkMovesFirstTerm) {
  Rng rng({8, 0});
  auto f = draw_fixture(rng);
  NuisanceTables n = f.em->truth();
  n.q_k += f.em->random_direction(Nuisance::QK, rng);
  auto dec = f.em->decompose(n);
  EXPECT_NEAR(dec.lhs, dec.terms[0], 1e-10);
  EXPECT_NEAR(dec.terms[1], 0.0, 1e-12);
  EXPECT_NEAR(dec.terms[2], 0.0, 1e-12);
  // With k moved too the first term carries the whole error.
  n.k += f.em->random_direction(Nuisance::K, rng);
  dec = f.em->decompose(n);
  EXPECT_GT(std::abs(dec.lhs), 1e-6);
  EXPECT_NEAR(dec.lhs, dec.terms[0], 1e-10);
}

TEST(DoubleRobustness, AllConfigurations) {
  Rng rng({9, 0});
  for (int rep = 0; rep < 20; ++rep) {
    auto f = draw_fixture(rng);
    const auto& t = f.em->truth();
    const NuisanceTables p = perturbed(*f.em, rng, 1.0);
    for (int mask = 0; mask < 8; ++mask) {
      NuisanceTables x;
      const bool kq = mask & 1, tq = mask & 2, gq = mask & 4;
      x.k = kq ? p.k : t.k;
      x.q_k = kq ? t.q_k : p.q_k;
      x.tau = tq ? p.tau : t.tau;
      x.q_tau = tq ? f.em->qtau_of(x.q_k) : p.q_tau;
      x.g = gq ? p.g : t.g;
      x.alpha_g = gq ? f.em->alpha_of(x.q_k, x.q_tau) : p.alpha_g;
      EXPECT_NEAR(f.em->expected_m3(x), f.em->theta0(), 1e-10) << "mask " << mask;
    }
  }
}

TEST(Orthogonality, DerivativesVanishAtTruth) {
  Rng rng({10, 0});
  ExactMomentModel::Tracking all;
  all.tau = all.k = all.q_tau = all.alpha = true;
  ExactMomentModel::Tracking none;
  for (int rep = 0; rep < 20; ++rep) {
    auto f = draw_fixture(rng);
    for (int w = 0; w < 6; ++w) {
      const auto nu = static_cast<Nuisance>(w);
      const VectorXd dir = f.em->random_direction(nu, rng);
      EXPECT_LT(std::abs(f.em->directional_derivative(f.em->truth(), nu, dir, all)), 1e-6);
    }
    // k at exact q_k and alpha_g at exact g need no tracking.
    EXPECT_LT(std::abs(f.em->directional_derivative(f.em->truth(), Nuisance::K,
                                                    f.em->random_direction(Nuisance::K, rng), none)), 1e-6);
    EXPECT_LT(std::abs(f.em->directional_derivative(f.em->truth(), Nuisance::AlphaG,
                                                    f.em->random_direction(Nuisance::AlphaG, rng), none)), 1e-6);
  }
}

TEST(Orthogonality, NegativeControl) {
  Rng rng({11, 0});
  ExactMomentModel::Tracking k_only;
  k_only.k = true;
  for (int rep = 0; rep < 10; ++rep) {
    auto f = draw_fixture(rng);
    double best = 0;
    for (int d = 0; d < 3; ++d) {
      NuisanceTables b = f.em->truth();
      b.q_k += f.em->random_direction(Nuisance::QK, rng);
      best = std::max(best, std::abs(f.em->directional_derivative(b, Nuisance::Tau,
                                                                  f.em->random_direction(Nuisance::Tau, rng), k_only)));
    }
    EXPECT_GT(best, 1e-3);
  }
}

TEST(Exact, ConvenienceWrapper) {
  Rng rng({12, 0});
  auto f = draw_fixture(rng);
  auto ex = compute_nuisances_exact(*f.joint, diff_pi());
  EXPECT_EQ(ex.theta0, f.em->theta0());
  EXPECT_EQ(ex.tables.q_k, f.em->truth().q_k);
}

namespace {

Dataset fixture_sample(const Fixture& f, Eigen::Index n, std::uint64_t seed) {
  return to_dataset(f.model, sample_discrete(f.model, n, {seed, 0}));
}

DmlOptions given_classes(const Fixture& f) {
  DmlOptions o;
  const auto groups = generator_groups(fixture_config());
  for (int z = 0; z < f.model.n_z(); ++z) o.sieve.control_classes[f.model.z_support(z)] = groups.label[z];
  return o;
}

}  // namespace

TEST(Dml, NoiselessModelIsConsistent) {
  Rng rng({13, 0});
  auto cfg = fixture_config();
  cfg.noise = 0;
  Fixture f = draw_fixture(rng, cfg);
  // Y = k0(A): drop the confounder share of the outcome.
  for (int a = 0; a < f.model.n_a(); ++a)
    for (int u = 0; u < f.model.n_u(); ++u)
      for (int w = 0; w < f.model.n_w(); ++w) {
        const int row = f.model.y_row(a, u, w);
        f.model.y_support(2 * row) = f.model.y_support(2 * row + 1) = 1.5 + 2.5 * a;
      }
  f.joint.emplace(f.model);
  f.em.emplace(*f.joint, diff_pi());
  EXPECT_NEAR(f.em->theta0(), 2.5, 1e-12);
  // Sample frequencies of A still vary across control classes, so the fit is
  // not exact at finite n; the error has to shrink at the root-n rate.
  DmlOptions o = given_classes(f);
  auto small = dml_estimate(fixture_sample(f, 2000, 14), Contrast::difference(0, 1), o, {15, 0});
  auto large = dml_estimate(fixture_sample(f, 32000, 14), Contrast::difference(0, 1), o, {15, 0});
  EXPECT_LT(std::abs(small.theta - 2.5), 3 * small.se);
  EXPECT_LT(std::abs(large.theta - 2.5), 3 * large.se);
  EXPECT_GT(small.se / large.se, 2.5);
}

TEST(Dml, FoldCountStability) {
  Rng rng({16, 0});
  Fixture f = draw_fixture(rng);
  Dataset d = fixture_sample(f, 2000, 17);
  DmlOptions o2 = given_classes(f), o5 = given_classes(f);
  o2.folds = 2;
  auto r2 = dml_estimate(d, Contrast::difference(0, 1), o2, {18, 0});
  auto r5 = dml_estimate(d, Contrast::difference(0, 1), o5, {18, 0});
  EXPECT_LT(std::abs(r2.theta - r5.theta), 3 * std::max(r2.se, r5.se));
  EXPECT_LT(std::abs(r5.theta - f.em->theta0()), 4 * r5.se);
  EXPECT_NEAR(r5.ci_high - r5.ci_low, 2 * 1.96 * r5.se, 1e-12);
}

TEST(Dml, EstimatedClassesAndDeterminism) {
  Rng rng({19, 0});
  Fixture f = draw_fixture(rng);
  Dataset d = fixture_sample(f, 3000, 20);
  DmlOptions o;
  auto a = dml_estimate(d, Contrast::difference(0, 1), o, {21, 0});
  auto b = dml_estimate(d, Contrast::difference(0, 1), o, {21, 0});
  EXPECT_EQ(a.theta, b.theta);
  EXPECT_EQ(a.fold_theta, b.fold_theta);
  EXPECT_EQ(a.fold_classes.size(), 5u);
  EXPECT_EQ(to_json(a).dump(), to_json(b).dump());
}

TEST(Dml, ContrastPointMustBeObserved) {
  Rng rng({22, 0});
  Fixture f = draw_fixture(rng);
  Dataset d = fixture_sample(f, 500, 23);
  EXPECT_THROW(dml_estimate(d, Contrast::difference(0, 7), DmlOptions{}, {1, 0}), IdentificationError);
  DmlOptions bad;
  bad.folds = 1;
  EXPECT_THROW(dml_estimate(d, Contrast::difference(0, 1), bad, {1, 0}), PreconditionError);
}
