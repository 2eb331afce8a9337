#include "cli.hpp"

#include <CLI11.hpp>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <limits>
#include <optional>
#include <ostream>
#include <sstream>

#include "icc/control.hpp"
#include "icc/debias.hpp"
#include "icc/discrete.hpp"
#include "icc/errors.hpp"
#include "icc/estimators.hpp"
#include "icc/hypothesis.hpp"
#include "icc/linalg.hpp"
#include "icc/linear_dgp.hpp"
#include "icc/monotone.hpp"

namespace icc::cli {

using icc::to_json;

namespace {

namespace fs = std::filesystem;
using discrete::DVar;

constexpr std::uint64_t kDataTag = 0xda7a;

struct Common {
  std::string data, schema, spec, out;
  std::uint64_t seed = 0;
  int workers = 0;
  long n = 0;
  double alpha = 0.05;

  int worker_count() const { return workers > 0 ? workers : default_workers(); }
  SeedSpec base() const { return {seed, 0}; }
  json echo(const std::string& command) const {
    json j = {{"command", command}, {"seed", seed}, {"alpha", alpha}};
    if (!data.empty()) j["data"] = data;
    if (!schema.empty()) j["schema"] = schema;
    if (!spec.empty()) j["spec"] = spec;
    if (n > 0) j["n"] = n;
    return j;
  }
};

// A dataset from --data/--schema, or simulated from --spec.
struct Source {
  std::optional<Dataset> data;
  std::optional<LinearDGPSpec> linear;
  std::optional<discrete::DiscreteModel> model;
  std::optional<MonotoneDGP> monotone;
  std::size_t dropped = 0;
  long n = 0;
};

Source parse_spec(const std::string& spec) {
  Source s;
  if (spec == "s1") {
    s.linear = spec_s1();
  } else if (spec == "sweep") {
    s.linear = spec_sweep();
  } else if (spec == "monotone") {
    s.monotone = MonotoneDGP{};
  } else {
    if (!fs::exists(spec)) throw PreconditionError("spec file not found: " + spec);
    const json j = read_json_file(spec);
    const std::string kind = j.value("kind", "linear_dgp_spec");
    if (kind == "monotone_dgp") s.monotone = monotone_dgp_from_json(j);
    else if (kind == "discrete_model") s.model = discrete::model_from_json(j);
    else if (kind == "linear_dgp_spec") s.linear = spec_from_json(j);
    else throw PreconditionError("unknown spec kind: " + kind);
  }
  return s;
}

Source load_source(const Common& c, long default_n) {
  if (c.data.empty() == c.spec.empty()) throw PreconditionError("give exactly one of --data or --spec");
  if (!c.data.empty()) {
    if (c.schema.empty()) throw PreconditionError("--data needs --schema");
    LoadResult r = load_csv(c.data, c.schema);
    Source s;
    s.dropped = r.dropped_rows;
    s.n = static_cast<long>(r.data.n());
    s.data.emplace(std::move(r.data));
    return s;
  }
  Source s = parse_spec(c.spec);
  s.n = c.n > 0 ? c.n : default_n;
  const SeedSpec seed = c.base().child(kDataTag);
  if (s.linear) {
    s.data.emplace(sample_linear(*s.linear, s.n, seed));
  } else if (s.model) {
    s.data.emplace(discrete::to_dataset(*s.model, discrete::sample_discrete(*s.model, s.n, seed)));
  } else {
    s.data.emplace(sample_monotone(*s.monotone, s.n, seed));
  }
  return s;
}

void emit(const json& report, const Common& c, std::ostream& out) {
  if (c.out.empty()) out << dump_report(report);
  else write_report(report, c.out);
}

std::pair<double, double> parse_contrast(const std::string& s) {
  const auto comma = s.find(',');
  if (comma == std::string::npos) throw PreconditionError("--contrast expects a0,a1");
  try {
    std::size_t p0 = 0, p1 = 0;
    const std::string l = s.substr(0, comma), r = s.substr(comma + 1);
    const double a0 = std::stod(l, &p0), a1 = std::stod(r, &p1);
    if (p0 != l.size() || p1 != r.size()) throw std::invalid_argument("trailing");
    return {a0, a1};
  } catch (const std::logic_error&) {
    throw PreconditionError("--contrast expects two numbers a0,a1, got: " + s);
  }
}

std::vector<std::string> default_names(const std::vector<std::string>& names, Eigen::Index k,
                                       const std::string& prefix) {
  if (static_cast<Eigen::Index>(names.size()) == k) return names;
  std::vector<std::string> out;
  for (Eigen::Index i = 0; i < k; ++i) out.push_back(prefix + std::to_string(i + 1));
  return out;
}

// ---------------------------------------------------------------- workflow

const char* kAdviceFullZ =
    "The rank test does not reject d_T = d_Z: the control spans all instrument variation, so "
    "Z has no variation left to move the treatment once T is held fixed. Stop here and look "
    "for instruments that carry variation beyond the common confounder.";
const char* kAdviceFullW =
    "The rank test does not reject d_T = d_W: the proxies may be exactly relevant for U "
    "(d_W = d_U) or too few (d_W < d_U), and no test can tell these apart. In the second case "
    "T does not hold fixed the confounding that travels with Z. Collect more proxies; rerun "
    "with --assume-proxy-complete only if d_W = d_U is defensible on subject-matter grounds.";
const char* kAdviceRelevance =
    "Z does not predict the treatment beyond the control T at the chosen level. The ICC "
    "estimator would be weakly identified; stop and reconsider the instruments.";

int cmd_workflow(const Common& c, int boot, int boot_rel, bool assume_w, std::ostream& out, std::ostream& err) {
  const Source src = load_source(c, 4000);
  const Dataset& d = *src.data;
  json report = {{"kind", "workflow"}, {"config", c.echo("workflow")}, {"n", d.n()}, {"dropped_rows", src.dropped}};
  report["config"]["boot"] = boot;
  report["config"]["boot_relevance"] = boot_rel;
  report["config"]["assume_proxy_complete"] = assume_w;
  const int rmax = static_cast<int>(std::min(d.d_z(), d.d_w()));

  auto halt = [&](int step, const std::string& reason, const char* advice) {
    report["halted"] = {{"step", step}, {"reason", reason}, {"advice", advice}};
    emit(report, c, out);
    err << "workflow halted at step " << step << ": " << reason << "\n" << advice << "\n";
    return 2;
  };

  // Step 1: rank ladder.
  json ladder = json::array();
  int selected = rmax;
  for (int r = 0; r < rmax; ++r) {
    const RankTestResult t = rank_test(d, r, boot, c.base().child(100 + r), RankNullModel::Auto, c.worker_count());
    ladder.push_back(to_json(t));
    if (t.p_value >= c.alpha) {
      selected = r;
      break;
    }
  }
  json step1 = {{"ladder", ladder}, {"selected_rank", selected}, {"d_z", d.d_z()}, {"d_w", d.d_w()}};
  if (selected == 0) step1["note"] = "no confounding detected: T is empty and ICC reduces to IV with Z as instruments";
  report["step1_rank"] = step1;
  if (selected == d.d_z()) return halt(1, "d_T = d_Z", kAdviceFullZ);
  if (selected == d.d_w()) {
    report["step1_rank"]["caveat"] = kAdviceFullW;
    if (!assume_w) return halt(1, "d_T = d_W", kAdviceFullW);
  }

  // Step 2: relevance of Z given T.
  const RelevanceTestResult rel =
      relevance_test(d, selected, boot_rel, c.base().child(200), RelevanceMethod::NullImposed, c.worker_count());
  report["step2_relevance"] = to_json(rel);
  if (rel.p_value >= c.alpha) return halt(2, "relevance not established", kAdviceRelevance);

  // Step 3: interpretation of T.
  const ControlFunction cf = estimate_control(d, selected);
  const auto z_names = default_names(d.z_names(), d.d_z(), "z");
  const auto w_names = default_names(d.w_names(), d.d_w(), "w");
  json loadings = json::object();
  for (Eigen::Index k = 0; k < d.d_z(); ++k) loadings[z_names[k]] = to_json(VectorXd(cf.z_loadings.row(k).transpose()));
  json w_on_t = json::object();
  const MatrixXd one = linalg::ones(d.n());
  const MatrixXd tx = linalg::hstack({&one, &cf.values});
  const VectorXd t_sd = linalg::column_sd(cf.values);
  for (Eigen::Index k = 0; k < d.d_w(); ++k) {
    const VectorXd wk = d.w().col(k);
    const VectorXd b = linalg::ols(tx, wk).col(0);
    VectorXd per_sd = b.tail(selected);
    for (int q = 0; q < selected; ++q) per_sd(q) *= t_sd(q);
    w_on_t[w_names[k]] = {{"intercept", b(0)}, {"coef", to_json(VectorXd(b.tail(selected)))},
                          {"coef_per_sd_t", to_json(per_sd)}, {"r2", linalg::r_squared(tx, wk)}};
  }
  report["step3_interpretation"] = {{"t_on_z_loadings", loadings}, {"w_on_t", w_on_t},
                                    {"singular_values", to_json(cf.singular_values)}};

  // Step 4: all estimators side by side.
  json est = json::object();
  for (Method m : {Method::OLS, Method::IV, Method::PL, Method::ICC})
    est[method_name(m)] = to_json(estimate(m, d, selected));
  report["step4_estimates"] = est;
  emit(report, c, out);
  return 0;
}

// ---------------------------------------------------------------- tests and estimates

RankNullModel parse_null(const std::string& s) {
  if (s == "auto") return RankNullModel::Auto;
  if (s == "logit") return RankNullModel::Logit;
  if (s == "gaussian") return RankNullModel::Gaussian;
  throw PreconditionError("unknown null model: " + s);
}

int cmd_rank(const Common& c, int r, int boot, const std::string& null, std::ostream& out) {
  const Source src = load_source(c, 4000);
  json report = to_json(rank_test(*src.data, r, boot, c.base(), parse_null(null), c.worker_count()));
  report["config"] = c.echo("rank-test");
  report["config"]["rank"] = r;
  report["config"]["boot"] = boot;
  report["config"]["null"] = null;
  report["reject"] = report["p_value"].get<double>() < c.alpha;
  emit(report, c, out);
  return 0;
}

int cmd_relevance(const Common& c, int r, int boot, const std::string& method, bool draws, std::ostream& out) {
  RelevanceMethod m;
  if (method == "null-imposed") m = RelevanceMethod::NullImposed;
  else if (method == "restricted") m = RelevanceMethod::RestrictedDistribution;
  else throw PreconditionError("unknown relevance method: " + method);
  const Source src = load_source(c, 4000);
  json report = to_json(relevance_test(*src.data, r, boot, c.base(), m, c.worker_count()), draws);
  report["config"] = c.echo("relevance-test");
  report["config"]["rank"] = r;
  report["config"]["boot"] = boot;
  report["config"]["method"] = method;
  report["reject"] = report["p_value"].get<double>() < c.alpha;
  emit(report, c, out);
  return 0;
}

int cmd_spec_test(const Common& c, int r1, int r2, int boot, std::ostream& out) {
  const Source src = load_source(c, 4000);
  json report = to_json(specification_test(*src.data, r1, r2, boot, c.base(), c.worker_count()));
  report["config"] = c.echo("spec-test");
  report["config"]["rank"] = r1;
  report["config"]["rank2"] = r2;
  report["config"]["boot"] = boot;
  report["reject"] = report["p_value"].get<double>() < c.alpha;
  emit(report, c, out);
  return 0;
}

int cmd_estimate(const Common& c, const std::string& method, int r, int boot, std::ostream& out) {
  const Source src = load_source(c, 4000);
  const Dataset& d = *src.data;
  std::vector<Method> methods;
  if (method == "all") methods = {Method::OLS, Method::IV, Method::PL, Method::ICC};
  else methods = {method_from_name(method)};
  json list = json::array();
  for (Method m : methods) {
    json e = to_json(estimate(m, d, r));
    if (m == Method::ICC && boot > 0)
      e["beta_se_bootstrap"] = to_json(icc_bootstrap_se(d, r, boot, c.base(), c.worker_count()));
    list.push_back(e);
  }
  json report = {{"kind", "estimates"}, {"estimates", list}, {"n", d.n()}, {"dropped_rows", src.dropped},
                 {"config", c.echo("estimate")}};
  report["config"]["method"] = method;
  report["config"]["rank"] = r;
  report["config"]["boot"] = boot;
  if (src.linear) report["beta_true"] = to_json(src.linear->beta);
  emit(report, c, out);
  return 0;
}

int cmd_sweep(Common c, int reps, int rmax, const std::string& csv, std::ostream& out) {
  if (!c.data.empty()) throw PreconditionError("sweep simulates from --spec; --data is not accepted");
  if (c.spec.empty()) c.spec = "sweep";
  const Source src = parse_spec(c.spec);
  if (!src.linear) throw PreconditionError("sweep needs a linear DGP spec");
  const long n = c.n > 0 ? c.n : 1000;
  const int r_max = rmax >= 0 ? rmax : src.linear->d_z;
  const SweepResult s = bias_variance_sweep(*src.linear, n, reps, r_max, c.base(), c.worker_count());
  json report = to_json(s);
  report["config"] = c.echo("sweep");
  report["config"]["reps"] = reps;
  report["config"]["rmax"] = r_max;
  std::string path = csv;
  if (path.empty()) path = c.out.empty() ? "sweep.csv" : (fs::path(c.out).parent_path() / "sweep.csv").string();
  std::ofstream f(path, std::ios::binary);
  if (!f) throw PreconditionError("cannot write " + path);
  f << sweep_csv(s);
  report["csv"] = path;
  emit(report, c, out);
  return 0;
}

// ---------------------------------------------------------------- dml and monotone

int cmd_dml(const Common& c, int folds, const std::string& contrast, const std::string& sieve, int degree, int r,
            std::ostream& out) {
  const Source src = load_source(c, 2000);
  const auto [a0, a1] = parse_contrast(contrast);
  DmlOptions o;
  o.folds = folds;
  if (sieve == "indicator") o.sieve.kind = SieveKind::Indicator;
  else if (sieve == "polynomial") o.sieve.kind = SieveKind::Polynomial;
  else throw PreconditionError("unknown sieve: " + sieve);
  o.sieve.degree = degree;
  o.sieve.control_rank = r;
  json report = to_json(dml_estimate(*src.data, Contrast::difference(a0, a1), o, c.base()));
  report["config"] = c.echo("dml");
  report["config"]["folds"] = folds;
  report["config"]["contrast"] = contrast;
  report["config"]["sieve"] = sieve;
  report["config"]["degree"] = degree;
  report["config"]["rank"] = r;
  report["dropped_rows"] = src.dropped;
  if (src.model) {
    const discrete::JointTable j(*src.model);
    VectorXd pi = VectorXd::Zero(j.dim(DVar::A));
    for (int k = 0; k < j.dim(DVar::A); ++k) {
      if (j.value(DVar::A, k) == a0) pi(k) -= 1;
      if (j.value(DVar::A, k) == a1) pi(k) += 1;
    }
    report["theta_true"] = discrete::structural_contrast(*src.model, pi);
  }
  emit(report, c, out);
  return 0;
}

int cmd_monotone(const Common& c, const std::string& contrast, const std::string& cells, int boot, int r,
                 const std::string& vt, int cell_size, std::ostream& out) {
  const Source src = load_source(c, 10000);
  const auto [a0, a1] = parse_contrast(contrast);
  AverageCausalConfig cfg;
  cfg.rank = r;
  cfg.bootstrap = boot;
  cfg.workers = c.worker_count();
  cfg.vt.cell_size = cell_size;
  if (vt == "local-linear") cfg.vt.method = VtMethod::LocalLinear;
  else if (vt == "rank") cfg.vt.method = VtMethod::Rank;
  else throw PreconditionError("unknown --vt method: " + vt);
  if (cells != "auto") {
    try {
      cfg.cells_per_dim = std::stoi(cells);
    } catch (const std::logic_error&) {
      throw PreconditionError("--cells expects auto or a positive integer");
    }
    if (cfg.cells_per_dim < 1) throw PreconditionError("--cells expects auto or a positive integer");
  }
  const Dataset& d = *src.data;
  const ControlFunction cf = estimate_control(d, r);
  const MonotoneControl mc = estimate_vt(d, cf, cfg.vt);
  json report = to_json(average_causal(d, mc, Contrast::difference(a0, a1), cfg, c.base()));
  json control = to_json(mc);
  control.erase("v");
  report["control"] = control;
  report["config"] = c.echo("monotone");
  report["config"]["contrast"] = contrast;
  report["config"]["cells"] = cells;
  report["config"]["boot"] = boot;
  report["config"]["rank"] = r;
  report["config"]["vt"] = vt;
  report["config"]["cell_size"] = cell_size;
  report["dropped_rows"] = src.dropped;
  if (src.monotone) report["theta_true"] = src.monotone->true_effect(a0, a1);
  emit(report, c, out);
  return 0;
}

// ---------------------------------------------------------------- simulate and oracle

int cmd_simulate(const Common& c, std::ostream& out) {
  if (c.spec.empty()) throw PreconditionError("simulate needs --spec");
  if (!c.data.empty()) throw PreconditionError("simulate does not read --data");
  if (c.out.empty()) throw PreconditionError("simulate needs --out for the CSV");
  Common sc = c;
  const Source src = load_source(sc, 1000);
  const Dataset& d = *src.data;
  write_csv(d, c.out);
  fs::path schema = fs::path(c.out);
  schema.replace_extension(".schema.json");
  {
    std::ofstream f(schema, std::ios::binary);
    if (!f) throw PreconditionError("cannot write " + schema.string());
    f << schema_json(d);
  }
  json report = {{"kind", "simulate"}, {"rows", d.n()}, {"csv", c.out}, {"schema", schema.string()},
                 {"columns", 1 + d.d_a() + d.d_z() + d.d_w() + d.d_x()}, {"config", c.echo("simulate")}};
  out << dump_report(report);
  return 0;
}

int cmd_oracle(const Common& c, int models, std::ostream& out, std::ostream& err) {
  const OracleSuiteResult r = oracle_suite(models, c.seed);
  json report = to_json(r);
  report["config"] = c.echo("oracle-verify");
  report["config"]["models"] = models;
  emit(report, c, out);
  if (!r.passed()) {
    err << "oracle-verify: at least one identity or control check failed\n";
    return 3;
  }
  return 0;
}

}  // namespace

// ---------------------------------------------------------------- oracle suite

bool OracleSuiteResult::passed() const {
  return models > 0 && sufficiency_tv < 1e-10 && proxy_transfer_tv < 1e-12 && bridge_error < 1e-8 &&
         deviation_residual < 1e-10 && theta_error < 1e-8 && decomposition_gap < 1e-10 &&
         double_robust_error < 1e-10 && orthogonal_derivative < 1e-6 && negative_control_min > 1e-3 &&
         bound_violations == 0;
}

OracleSuiteResult oracle_suite(int models, std::uint64_t seed) {
  using namespace discrete;
  if (models < 1) throw PreconditionError("--models must be positive");
  Rng rng(SeedSpec{seed, 0});
  OracleSuiteResult res;
  res.negative_control_min = std::numeric_limits<double>::infinity();
  VectorXd pi(2);
  pi << -1, 1;
  GeneratorConfig general;
  general.n_u1 = 2;
  general.n_groups = 2;
  general.n_within = 3;
  general.n_w = 3;
  general.n_a = 2;
  GeneratorConfig indep;
  indep.n_u1 = 2;
  indep.n_eta = 2;
  indep.n_groups = 2;
  indep.n_within = 3;
  indep.n_w = 4;
  indep.n_a = 2;
  indep.y_depends_on_w = false;
  indep.treatment_independent_of_control = true;
  const Labeling groups = generator_groups(general);

  int attempts = 0;
  while (res.models < models) {
    if (++attempts > 20 * models) throw NumericalError("oracle-verify: too many draws rejected by the gates");
    const DiscreteModel m = random_model(rng, general);
    const JointTable j(m);
    if (!check_completeness(j, DVar::U, DVar::W).complete) {
      ++res.skipped;
      continue;
    }
    const Labeling t = minimal_discrete_control(j);
    const double sufficiency = conditional_independence_tv(j, DVar::U, t);
    const double transfer = conditional_independence_tv(j, DVar::W, groups);
    const double bridge = std::abs(solve_ls_bridge(j, t, pi).theta - structural_contrast(m, pi));

    const DiscreteModel mf = random_model(rng, indep);
    const JointTable jf(mf);
    std::optional<ExactMomentModel> em;
    try {
      em.emplace(jf, pi);
    } catch (const IdentificationError&) {
      ++res.skipped;
      continue;
    }
    res.sufficiency_tv = std::max(res.sufficiency_tv, sufficiency);
    res.proxy_transfer_tv = std::max(res.proxy_transfer_tv, transfer);
    res.bridge_error = std::max(res.bridge_error, bridge);
    res.deviation_residual =
        std::max(res.deviation_residual, counterfactual_mean_deviation(jf, em->control()).max_residual);
    res.theta_error = std::max(res.theta_error, std::abs(em->theta0() - structural_contrast(mf, pi)));

    const NuisanceTables& truth = em->truth();
    auto dir = [&](Nuisance w, double scale) { return VectorXd(scale * em->random_direction(w, rng)); };
    NuisanceTables p;
    p.g = truth.g + dir(Nuisance::G, 0.1);
    p.tau = em->tau_of(p.g) + dir(Nuisance::Tau, 0.1);
    p.k = em->k_of(p.tau, p.g);
    p.q_k = truth.q_k + dir(Nuisance::QK, 0.1);
    p.q_tau = em->qtau_of(p.q_k) + dir(Nuisance::QTau, 0.1);
    p.alpha_g = em->alpha_of(p.q_k, p.q_tau) + dir(Nuisance::AlphaG, 0.1);
    const auto dec = em->decompose(p);
    res.decomposition_gap = std::max(res.decomposition_gap, std::abs(dec.gap()));
    if (std::abs(dec.lhs) > dec.bound() + 1e-12) ++res.bound_violations;

    // One member of each pair exact, the other perturbed.
    for (int mask = 0; mask < 8; ++mask) {
      NuisanceTables x;
      const bool kq = mask & 1, tq = mask & 2, gq = mask & 4;
      x.k = kq ? p.k : truth.k;
      x.q_k = kq ? truth.q_k : p.q_k;
      x.tau = tq ? p.tau : truth.tau;
      x.q_tau = tq ? em->qtau_of(x.q_k) : p.q_tau;
      x.g = gq ? p.g : truth.g;
      x.alpha_g = gq ? em->alpha_of(x.q_k, x.q_tau) : p.alpha_g;
      res.double_robust_error = std::max(res.double_robust_error, std::abs(em->expected_m3(x) - em->theta0()));
    }

    ExactMomentModel::Tracking all;
    all.tau = all.k = all.q_tau = all.alpha = true;
    for (int w = 0; w < 6; ++w) {
      const auto nu = static_cast<Nuisance>(w);
      res.orthogonal_derivative =
          std::max(res.orthogonal_derivative, std::abs(em->directional_derivative(truth, nu, dir(nu, 1.0), all)));
    }
    // Side condition broken: q_k off its true value while k follows tau.
    ExactMomentModel::Tracking k_only;
    k_only.k = true;
    double neg = 0;
    for (int rep = 0; rep < 3; ++rep) {
      NuisanceTables b = truth;
      b.q_k += dir(Nuisance::QK, 1.0);
      neg = std::max(neg, std::abs(em->directional_derivative(b, Nuisance::Tau, dir(Nuisance::Tau, 1.0), k_only)));
    }
    res.negative_control_min = std::min(res.negative_control_min, neg);
    ++res.models;
  }
  return res;
}

json to_json(const OracleSuiteResult& r) {
  return {{"kind", "oracle_verify"},
          {"models", r.models},
          {"skipped", r.skipped},
          {"passed", r.passed()},
          {"max_sufficiency_tv", r.sufficiency_tv},
          {"max_proxy_transfer_tv", r.proxy_transfer_tv},
          {"max_bridge_error", r.bridge_error},
          {"max_deviation_residual", r.deviation_residual},
          {"max_theta_error", r.theta_error},
          {"max_decomposition_gap", r.decomposition_gap},
          {"max_double_robust_error", r.double_robust_error},
          {"max_orthogonal_derivative", r.orthogonal_derivative},
          {"min_negative_control_derivative", r.negative_control_min},
          {"bound_violations", r.bound_violations}};
}

// ---------------------------------------------------------------- entry point

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Instrumented common confounding: estimation, tests and oracles"};
  app.require_subcommand(1);
  Common c;
  auto common = [&](CLI::App* s, bool data_opts) {
    if (data_opts) {
      s->add_option("--data", c.data, "CSV file");
      s->add_option("--schema", c.schema, "JSON schema mapping columns to roles");
      s->add_option("--n", c.n, "sample size when simulating from --spec");
    }
    s->add_option("--spec", c.spec, "DGP spec file, or s1 / sweep / monotone");
    s->add_option("--seed", c.seed, "master seed");
    s->add_option("--out", c.out, "output path");
    s->add_option("--workers", c.workers, "worker threads (default ICC_WORKERS or 1)");
    s->add_option("--alpha", c.alpha, "test level")->check(CLI::Range(0.0, 1.0));
  };

  int boot = -1, boot_rel = 200, rank = 1, rank2 = 0, folds = 5, reps = 200, rmax = -1, models = 50, degree = 2;
  int cell_size = 0;
  bool draws = false, assume_w = false;
  std::string null_model = "auto", rel_method = "null-imposed", method = "all", contrast = "0,1";
  std::string sieve = "indicator", cells = "auto", vt = "local-linear", csv;

  auto* wf = app.add_subcommand("workflow", "four-step guide: rank ladder, relevance, interpretation, estimates");
  common(wf, true);
  wf->add_option("--boot", boot, "rank-test bootstrap draws (default 1000)");
  wf->add_option("--boot-relevance", boot_rel, "relevance-test bootstrap draws");
  wf->add_flag("--assume-proxy-complete", assume_w, "proceed when d_T = d_W");

  auto* rt = app.add_subcommand("rank-test", "bootstrap test of H0: rank of Cov(Z, W) <= r");
  common(rt, true);
  rt->add_option("--rank", rank, "null rank")->required();
  rt->add_option("--boot", boot, "bootstrap draws (default 1000)");
  rt->add_option("--null", null_model, "auto, logit or gaussian");

  auto* rl = app.add_subcommand("relevance-test", "bootstrap test of Z relevance given the control");
  common(rl, true);
  rl->add_option("--rank", rank, "control rank");
  rl->add_option("--boot", boot, "bootstrap draws (default 200)");
  rl->add_option("--method", rel_method, "null-imposed or restricted");
  rl->add_flag("--draws", draws, "include bootstrap draws in the report");

  auto* st = app.add_subcommand("spec-test", "bootstrap comparison of ICC under two control ranks");
  common(st, true);
  st->add_option("--rank", rank, "first rank");
  st->add_option("--rank2", rank2, "second rank")->required();
  st->add_option("--boot", boot, "bootstrap draws (default 200)");

  auto* es = app.add_subcommand("estimate", "OLS, IV, PL and ICC estimates");
  common(es, true);
  es->add_option("--method", method, "all, ols, iv, pl or icc");
  es->add_option("--rank", rank, "control rank for pl and icc");
  es->add_option("--boot", boot, "pairs-bootstrap draws for the ICC standard error (default 0)");

  auto* sw = app.add_subcommand("sweep", "Monte Carlo bias and sd of ICC across control ranks");
  common(sw, true);
  sw->add_option("--reps", reps, "replicates");
  sw->add_option("--rmax", rmax, "largest rank (default d_Z)");
  sw->add_option("--csv", csv, "CSV path (default sweep.csv next to --out)");

  auto* dm = app.add_subcommand("dml", "cross-fitted debiased estimate of k(a1) - k(a0)");
  common(dm, true);
  dm->add_option("--folds", folds, "folds");
  dm->add_option("--contrast", contrast, "a0,a1");
  dm->add_option("--sieve", sieve, "indicator or polynomial");
  dm->add_option("--degree", degree, "polynomial degree");
  dm->add_option("--rank", rank, "control rank for polynomial sieves");

  auto* mo = app.add_subcommand("monotone", "average effect with the conditional-CDF control");
  common(mo, true);
  mo->add_option("--contrast", contrast, "a0,a1");
  mo->add_option("--cells", cells, "(V, T) cells per dimension or auto");
  mo->add_option("--boot", boot, "bootstrap draws (default 200)");
  mo->add_option("--rank", rank, "control rank");
  mo->add_option("--vt", vt, "local-linear or rank");
  mo->add_option("--cell-size", cell_size, "points per instrument cell (default max(30, sqrt n))");

  auto* ov = app.add_subcommand("oracle-verify", "exact discrete property suite");
  common(ov, false);
  ov->add_option("--models", models, "number of random models");

  auto* sm = app.add_subcommand("simulate", "draw a dataset from a spec and write CSV plus schema");
  common(sm, true);

  std::vector<const char*> argv{"icc"};
  for (const auto& a : args) argv.push_back(a.c_str());
  try {
    app.parse(static_cast<int>(argv.size()), argv.data());
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? 0 : 2;
  }

  try {
    if (wf->parsed()) return cmd_workflow(c, boot < 0 ? 1000 : boot, boot_rel, assume_w, out, err);
    if (rt->parsed()) return cmd_rank(c, rank, boot < 0 ? 1000 : boot, null_model, out);
    if (rl->parsed()) return cmd_relevance(c, rank, boot < 0 ? 200 : boot, rel_method, draws, out);
    if (st->parsed()) return cmd_spec_test(c, rank, rank2, boot < 0 ? 200 : boot, out);
    if (es->parsed()) return cmd_estimate(c, method, rank, boot < 0 ? 0 : boot, out);
    if (sw->parsed()) return cmd_sweep(c, reps, rmax, csv, out);
    if (dm->parsed()) return cmd_dml(c, folds, contrast, sieve, degree, rank, out);
    if (mo->parsed()) return cmd_monotone(c, contrast, cells, boot < 0 ? 200 : boot, rank, vt, cell_size, out);
    if (ov->parsed()) return cmd_oracle(c, models, out, err);
    if (sm->parsed()) return cmd_simulate(c, out);
  } catch (const PreconditionError& e) {
    err << "error: " << e.what() << "\n";
    return 2;
  } catch (const IdentificationError& e) {
    err << "identification failure: " << e.what() << "\n";
    return 2;
  } catch (const NumericalError& e) {
    err << "numerical failure: " << e.what() << "\n";
    return 3;
  } catch (const nlohmann::json::exception& e) {
    err << "error: malformed JSON input: " << e.what() << "\n";
    return 2;
  }
  return 2;
}

}  // namespace icc::cli
