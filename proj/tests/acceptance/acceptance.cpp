// Acceptance run: one PASS/FAIL line per criterion, exit status 1 if any fails.

#include <chrono>
#include <cstdio>
#include <fstream>
#include <functional>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "brute.hpp"
#include "cli.hpp"
#include "icc/debias.hpp"
#include "icc/discrete.hpp"
#include "icc/errors.hpp"
#include "icc/estimators.hpp"
#include "icc/hypothesis.hpp"
#include "icc/linear_dgp.hpp"
#include "icc/monotone.hpp"
#include "stats.hpp"

using namespace icc;
using namespace icc::discrete;
namespace t = icc::testing;

namespace {

struct Outcome {
  bool pass = false;
  std::string detail;
};

std::string fmt(const char* f, double a, double b = 0, double c = 0, double d = 0) {
  char buf[256];
  std::snprintf(buf, sizeof buf, f, a, b, c, d);
  return buf;
}

VectorXd diff_pi() { return (VectorXd(2) << -1, 1).finished(); }

GeneratorConfig general_config() {
  GeneratorConfig c;
  c.n_u1 = 2;
  c.n_groups = 2;
  c.n_within = 3;
  c.n_w = 3;
  c.n_a = 2;
  return c;
}

GeneratorConfig fixture_config() {
  GeneratorConfig c = general_config();
  c.n_eta = 2;
  c.n_w = 4;
  c.y_depends_on_w = false;
  c.treatment_independent_of_control = true;
  return c;
}

// ---------------------------------------------------------------------------

Outcome population_exactness() {
  Rng rng({101, 0});
  double worst = 0;
  for (int rep = 0; rep < 50; ++rep) {
    const int d_u = 1 + rep % 3, d_a = 1 + (rep / 3) % 2;
    auto s = random_identified_spec(rng, d_u, d_u + d_a + rep % 2, d_u + (rep / 2) % 2, d_a, rep % 4 == 0);
    PopulationMoments m(s);
    worst = std::max(worst, (population_icc_beta(m, factor_zw(m, d_u)) - s.beta).cwiseAbs().maxCoeff());
  }
  return {worst < 1e-8, fmt("50 random specs, max |beta - beta0| = %.2e (limit 1e-8)", worst)};
}

Outcome finite_sample_consistency() {
  const auto s = spec_s1();
  std::vector<double> icc, iv;
  for (int rep = 0; rep < 200; ++rep) {
    Dataset d = sample_linear(s, 20000, SeedSpec{202, 0}.child(rep));
    icc.push_back(estimate_icc(d, 1).beta(0));
    iv.push_back(estimate_iv(d).beta(0));
  }
  const double zi = (t::mean(icc) - 2) / t::mcse(icc), zv = (t::mean(iv) - 2) / t::mcse(iv);
  return {std::abs(zi) < 3 && std::abs(zv) > 5,
          fmt("S1 n=20000, 200 reps: ICC mean %.4f (%.2f MCSE), IV mean %.4f (%.1f MCSE)", t::mean(icc), zi,
              t::mean(iv), zv)};
}

Outcome rank_sweep() {
  auto res = bias_variance_sweep(spec_sweep(), 2000, 200, 3, {303, 0}, 1);
  const auto& r = res.rows;
  const bool bias_ok = std::abs(r[1].bias) < 3 * r[1].mcse;
  const bool sd_ok = r[0].sd <= r[1].sd && r[1].sd <= r[2].sd;
  const bool fail_ok = r[3].failures == res.reps;
  return {bias_ok && sd_ok && fail_ok,
          fmt("bias(r=1) = %.4f (%.2f MCSE); sd(r=0,1,2) = %.4f, %.4f", r[1].bias, r[1].bias / r[1].mcse, r[0].sd,
              r[1].sd) +
              fmt(", %.4f; relevance failures at r=3: %.0f/200", r[2].sd, r[3].failures)};
}

Outcome rank_calibration() {
  int size_rej = 0, power_rej = 0;
  for (int rep = 0; rep < 200; ++rep) {
    const SeedSpec base = SeedSpec{404, 0}.child(rep);
    Dataset d = sample_linear(spec_s1(), 4000, base.child(0xda7a));
    size_rej += rank_test(d, 1, 500, base.child(1)).p_value < 0.05;
    power_rej += rank_test(d, 0, 500, base.child(2)).p_value < 0.05;
  }
  const double size = size_rej / 200.0, power = power_rej / 200.0;
  return {size >= 0.02 && size <= 0.10 && power > 0.8,
          fmt("B=500, n=4000, 200 seeds: size %.3f (target [0.02, 0.10]), power at r=0 %.3f (> 0.8)", size, power)};
}

Outcome relevance_calibration() {
  auto h0 = spec_s1();
  h0.zeta = (MatrixXd(3, 1) << 1, 1, 0).finished();
  int size_rej = 0, power_rej = 0;
  const int reps = 200;
  for (int rep = 0; rep < reps; ++rep) {
    const SeedSpec base = SeedSpec{505, 0}.child(rep);
    Dataset d0 = sample_linear(h0, 4000, base.child(0xda7a));
    Dataset d1 = sample_linear(spec_s1(), 4000, base.child(0xda7b));
    size_rej += relevance_test(d0, 1, 200, base.child(1)).p_value < 0.05;
    power_rej += relevance_test(d1, 1, 200, base.child(2)).p_value < 0.05;
  }
  const double size = static_cast<double>(size_rej) / reps, power = static_cast<double>(power_rej) / reps;
  return {size >= 0.02 && size <= 0.10 && power > 0.9,
          fmt("n=4000, B=200, 200 seeds: size %.3f (target [0.02, 0.10]), power on S1 %.3f (> 0.9)", size, power)};
}

Outcome sufficiency_suite() {
  Rng rng({606, 0});
  const auto groups = generator_groups(general_config());
  double l2 = 0, l1 = 0;
  int models = 0, skipped = 0;
  while (models < 100) {
    auto m = random_model(rng, general_config());
    JointTable j(m);
    if (!check_completeness(j, DVar::U, DVar::W).complete) {
      ++skipped;
      continue;
    }
    ++models;
    const auto tc = minimal_discrete_control(j);
    t::Brute b(m);
    l2 = std::max({l2, conditional_independence_tv(j, DVar::U, tc), b.ci_tv(false, tc.label)});
    l1 = std::max({l1, conditional_independence_tv(j, DVar::W, groups), b.ci_tv(true, groups.label)});
  }
  return {l2 < 1e-10 && l1 < 1e-10,
          fmt("100 complete models (%.0f rejected by the gate): max TV U|Z vs U|T %.2e, W|Z vs W|T %.2e", skipped, l2,
              l1)};
}

Outcome bridge_suite() {
  Rng rng({707, 0});
  double worst = 0;
  int models = 0;
  while (models < 50) {
    auto m = random_model(rng, general_config());
    JointTable j(m);
    if (!check_completeness(j, DVar::U, DVar::W).complete) continue;
    ++models;
    t::Brute b(m);
    const double po = b.potential_mean(1) - b.potential_mean(0);
    worst = std::max(worst, std::abs(solve_ls_bridge(j, minimal_discrete_control(j), diff_pi()).theta - po));
  }
  return {worst < 1e-8, fmt("50 separable models: max |theta_bridge - theta_po| = %.2e (limit 1e-8)", worst)};
}

Outcome identity_suite() {
  Rng rng({808, 0});
  double gap = 0, dr = 0, orth = 0, neg_min = 1e300;
  int violations = 0, models = 0, skipped = 0;
  ExactMomentModel::Tracking all;
  all.tau = all.k = all.q_tau = all.alpha = true;
  ExactMomentModel::Tracking k_only;
  k_only.k = true;
  while (models < 50) {
    auto m = random_model(rng, fixture_config());
    JointTable j(m);
    std::optional<ExactMomentModel> em;
    try {
      em.emplace(j, diff_pi());
    } catch (const IdentificationError&) {
      ++skipped;
      continue;
    }
    ++models;
    const auto& tr = em->truth();
    auto dir = [&](Nuisance w, double s) { return VectorXd(s * em->random_direction(w, rng)); };
    NuisanceTables p;
    p.g = tr.g + dir(Nuisance::G, 0.1);
    p.tau = em->tau_of(p.g) + dir(Nuisance::Tau, 0.1);
    p.k = em->k_of(p.tau, p.g);
    p.q_k = tr.q_k + dir(Nuisance::QK, 0.1);
    p.q_tau = em->qtau_of(p.q_k) + dir(Nuisance::QTau, 0.1);
    p.alpha_g = em->alpha_of(p.q_k, p.q_tau) + dir(Nuisance::AlphaG, 0.1);
    const auto dec = em->decompose(p);
    gap = std::max(gap, std::abs(dec.gap()));
    violations += std::abs(dec.lhs) > dec.bound() + 1e-12;
    for (int mask = 0; mask < 8; ++mask) {
      NuisanceTables x;
      const bool kq = mask & 1, tq = mask & 2, gq = mask & 4;
      x.k = kq ? p.k : tr.k;
      x.q_k = kq ? tr.q_k : p.q_k;
      x.tau = tq ? p.tau : tr.tau;
      x.q_tau = tq ? em->qtau_of(x.q_k) : p.q_tau;
      x.g = gq ? p.g : tr.g;
      x.alpha_g = gq ? em->alpha_of(x.q_k, x.q_tau) : p.alpha_g;
      dr = std::max(dr, std::abs(em->expected_m3(x) - em->theta0()));
    }
    for (int w = 0; w < 6; ++w) {
      const auto nu = static_cast<Nuisance>(w);
      orth = std::max(orth, std::abs(em->directional_derivative(tr, nu, dir(nu, 1.0), all)));
    }
    double neg = 0;
    for (int rep = 0; rep < 3; ++rep) {
      NuisanceTables b = tr;
      b.q_k += dir(Nuisance::QK, 1.0);
      neg = std::max(neg, std::abs(em->directional_derivative(b, Nuisance::Tau, dir(Nuisance::Tau, 1.0), k_only)));
    }
    neg_min = std::min(neg_min, neg);
  }
  const bool ok = gap < 1e-10 && dr < 1e-10 && orth < 1e-6 && neg_min > 1e-3 && violations == 0;
  return {ok, fmt("50 models: gap %.2e, DR %.2e, orthogonal derivative %.2e, negative control min %.2e", gap, dr,
                  orth, neg_min) +
                  fmt(", bound violations %.0f", violations)};
}

// Fixture with clearly separated proxy distributions across control groups.
struct DmlFixture {
  DiscreteModel model;
  double theta0 = 0;
};

// Raising each row of a pmf table to a power and renormalising keeps which
// rows coincide, so the treatment stays independent of the control.
void sharpen(MatrixXd& rows, double power) {
  for (Eigen::Index r = 0; r < rows.rows(); ++r) {
    const Eigen::RowVectorXd p = rows.row(r).array().pow(power);
    rows.row(r) = p / p.sum();
  }
}

// Random treatment-independent model with a strong first stage (Riesz
// representer norm at most 3) and separated proxy distributions (TV >= 0.3).
DmlFixture dml_fixture() {
  Rng rng({909, 0});
  const auto groups = generator_groups(fixture_config());
  for (int attempt = 0;; ++attempt) {
    auto m = random_model(rng, fixture_config());
    sharpen(m.p_a_given_zuw, 4.0);
    sharpen(m.p_w_given_u, 3.0);
    JointTable j(m);
    const MatrixXd pw = j.conditional(DVar::W, DVar::Z);
    VectorXd g0 = VectorXd::Zero(m.n_w()), g1 = VectorXd::Zero(m.n_w());
    for (int z = 0; z < m.n_z(); ++z) (groups.label[z] ? g1 : g0) = pw.row(z).transpose();
    if (0.5 * (g0 - g1).cwiseAbs().sum() < 0.3) continue;
    try {
      ExactMomentModel em(j, diff_pi());
      if (em.norm_w(em.truth().q_k) > 3.0) continue;
      t::Brute b(m);
      const double po = b.potential_mean(1) - b.potential_mean(0);
      if (std::abs(po - em.theta0()) > 1e-8) throw NumericalError("enumerated theta routes disagree");
      return {m, em.theta0()};
    } catch (const IdentificationError&) {
    }
  }
}

Outcome dml_coverage() {
  const DmlFixture f = dml_fixture();
  std::vector<double> z;
  int covered = 0;
  const int reps = 500;
  for (int rep = 0; rep < reps; ++rep) {
    const SeedSpec base = SeedSpec{910, 0}.child(rep);
    Dataset d = to_dataset(f.model, sample_discrete(f.model, 2000, base.child(0xda7a)));
    DmlOptions o;
    o.folds = 5;
    auto r = dml_estimate(d, Contrast::difference(0, 1), o, base.child(1));
    covered += r.ci_low <= f.theta0 && f.theta0 <= r.ci_high;
    z.push_back(std::sqrt(static_cast<double>(r.n)) * (r.theta - f.theta0) / r.sigma);
  }
  const double cov = static_cast<double>(covered) / reps, ks = t::ks_normal(z);
  return {cov >= 0.90 && cov <= 0.98 && ks < 0.08,
          fmt("n=2000, K=5, 500 reps, theta0 = %.4f: coverage %.3f (target [0.90, 0.98]), KS %.4f (< 0.08)", f.theta0,
              cov, ks)};
}

Outcome monotone_recovery() {
  MonotoneDGP g;
  AverageCausalConfig cfg;
  cfg.bootstrap = 0;
  cfg.workers = 1;
  std::vector<double> theta;
  double ks_worst = 0;
  for (int rep = 0; rep < 200; ++rep) {
    const SeedSpec base = SeedSpec{1010, 0}.child(rep);
    Dataset d = sample_monotone(g, 10000, base.child(0xda7a));
    const ControlFunction cf = estimate_control(d, cfg.rank);
    const MonotoneControl mc = estimate_vt(d, cf, cfg.vt);
    ks_worst = std::max(ks_worst, t::ks_uniform({mc.v.data(), mc.v.data() + mc.v.size()}));
    theta.push_back(average_causal(d, mc, Contrast::difference(0, 1), cfg, base.child(1)).theta);
  }
  const double truth = g.true_effect(0, 1), zt = (t::mean(theta) - truth) / t::mcse(theta);
  return {std::abs(zt) < 3 && ks_worst < 0.05,
          fmt("n=10000, 200 reps: mean %.4f vs %.1f (%.2f MCSE); worst V KS %.4f (< 0.05)", t::mean(theta), truth, zt,
              ks_worst)};
}

Outcome determinism() {
  const auto dir = t::scratch_dir("acceptance");
  const std::string csv = (dir / "s1.csv").string(), schema = (dir / "s1.schema.json").string();
  std::ostringstream sink;
  if (cli::run({"simulate", "--spec", "s1", "--n", "2000", "--seed", "7", "--out", csv}, sink, sink) != 0)
    return {false, "simulate failed: " + sink.str()};
  const std::vector<std::string> data = {"--data", csv, "--schema", schema};
  std::vector<std::vector<std::string>> cmds = {
      {"simulate", "--spec", "sweep", "--n", "500"},
      {"workflow", "--boot", "100", "--boot-relevance", "50"},
      {"rank-test", "--rank", "1", "--boot", "100"},
      {"relevance-test", "--rank", "1", "--boot", "50"},
      {"spec-test", "--rank", "1", "--rank2", "2", "--boot", "50"},
      {"estimate", "--rank", "1", "--boot", "50"},
      {"sweep", "--spec", "sweep", "--n", "500", "--reps", "10", "--rmax", "3"},
      {"dml", "--spec", "monotone", "--n", "2000", "--sieve", "polynomial"},
      {"monotone", "--spec", "monotone", "--n", "3000", "--boot", "20"},
      {"oracle-verify", "--models", "10"},
  };
  for (auto& c : cmds)
    if (c[0] == "workflow" || c[0] == "rank-test" || c[0] == "relevance-test" || c[0] == "spec-test" ||
        c[0] == "estimate")
      c.insert(c.end(), data.begin(), data.end());
  int identical = 0;
  std::string bad;
  for (const auto& c : cmds) {
    std::string first;
    bool same = true;
    for (int rep = 0; rep < 2; ++rep) {
      const std::string out = (dir / (c[0] + (c[0] == "simulate" ? ".csv" : ".json"))).string();
      auto args = c;
      for (std::string a : {"--seed", "11", "--out", out.c_str()}) args.push_back(a);
      std::ostringstream o, e;
      const int code = cli::run(args, o, e);
      std::ifstream in(out, std::ios::binary);
      std::string bytes{std::istreambuf_iterator<char>(in), {}};
      if (c[0] == "simulate") {
        std::ifstream s((dir / (c[0] + ".schema.json")).string());
        bytes += std::string{std::istreambuf_iterator<char>(s), {}} + o.str();
      }
      if (code != 0 || bytes.empty()) {
        same = false;
        bad += " " + c[0] + "(exit " + std::to_string(code) + ": " + e.str() + ")";
        break;
      }
      if (rep == 0) first = bytes;
      else same = bytes == first;
    }
    if (same) ++identical;
    else if (bad.find(c[0]) == std::string::npos) bad += " " + c[0];
  }
  return {identical == static_cast<int>(cmds.size()),
          fmt("%.0f/%.0f commands byte-identical across two runs", identical, cmds.size()) + bad};
}

}  // namespace

int main() {
  struct Criterion {
    const char* name;
    std::function<Outcome()> run;
  };
  const std::vector<Criterion> criteria = {
      {"C1 population exactness", population_exactness},
      {"C2 finite-sample ICC consistency", finite_sample_consistency},
      {"C3 control-rank sweep", rank_sweep},
      {"C4 rank-test calibration", rank_calibration},
      {"C5 relevance-test calibration", relevance_calibration},
      {"C6 discrete control sufficiency", sufficiency_suite},
      {"C7 bridge vs potential outcomes", bridge_suite},
      {"C8 debiased-moment identities", identity_suite},
      {"C9 DML coverage", dml_coverage},
      {"C10 monotone control recovery", monotone_recovery},
      {"C11 determinism", determinism},
  };
  int failed = 0;
  for (const auto& c : criteria) {
    const auto t0 = std::chrono::steady_clock::now();
    Outcome o;
    try {
      o = c.run();
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    std::printf("%s  %-34s %s [%.1fs]\n", o.pass ? "PASS" : "FAIL", c.name, o.detail.c_str(), secs);
    std::fflush(stdout);
    failed += !o.pass;
  }
  std::printf("%d/%zu criteria passed\n", static_cast<int>(criteria.size()) - failed, criteria.size());
  return failed ? 1 : 0;
}
