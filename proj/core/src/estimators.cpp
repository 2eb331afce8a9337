#include "icc/estimators.hpp"

#include <cmath>
#include <limits>

#include "icc/errors.hpp"
#include "icc/linalg.hpp"

namespace icc {
namespace {

using linalg::hstack;

std::vector<std::string> concat(std::initializer_list<std::vector<std::string>> parts) {
  std::vector<std::string> out;
  for (const auto& p : parts) out.insert(out.end(), p.begin(), p.end());
  return out;
}

std::vector<std::string> t_names(int r, const std::string& prefix = "T") {
  std::vector<std::string> out;
  for (int k = 0; k < r; ++k) out.push_back(prefix + std::to_string(k + 1));
  return out;
}

EstimateResult package(Method m, const Dataset& d, const TslsFit& fit, std::vector<std::string> names,
                       int r, const MatrixXd& t_values) {
  EstimateResult e;
  e.method = m;
  e.r = r;
  e.n = d.n();
  e.names = std::move(names);
  e.coef = fit.coef;
  e.vcov = fit.vcov;
  const VectorXd se = fit.vcov.diagonal().cwiseSqrt();
  e.beta = fit.coef.segment(1, d.d_a());
  e.beta_se = se.segment(1, d.d_a());
  if (r > 0) {
    e.t_coef = fit.coef.segment(1 + d.d_a(), r);
    e.t_se = se.segment(1 + d.d_a(), r);
    e.t_coef_per_sd = e.t_coef.cwiseProduct(linalg::column_sd(t_values));
  } else {
    e.t_coef = e.t_se = e.t_coef_per_sd = VectorXd(0);
  }
  return e;
}

}  // namespace

const char* method_name(Method m) {
  switch (m) {
    case Method::OLS: return "ols";
    case Method::IV: return "iv";
    case Method::PL: return "pl";
    case Method::ICC: return "icc";
  }
  return "?";
}

Method method_from_name(const std::string& s) {
  if (s == "ols" || s == "OLS") return Method::OLS;
  if (s == "iv" || s == "IV") return Method::IV;
  if (s == "pl" || s == "PL") return Method::PL;
  if (s == "icc" || s == "ICC") return Method::ICC;
  throw PreconditionError("unknown method '" + s + "'");
}

TslsFit tsls(const VectorXd& y, const MatrixXd& x, const MatrixXd& z,
             const std::vector<std::string>& names) {
  const double n = static_cast<double>(y.size());
  const double k = static_cast<double>(x.cols());
  if (n <= k) throw PreconditionError("tsls: more coefficients than observations");
  const MatrixXd xhat = z.cols() == x.cols() && z.isApprox(x) ? x : MatrixXd(z * linalg::ols(z, x));
  const MatrixXd xtx = xhat.transpose() * x;
  Eigen::ColPivHouseholderQR<MatrixXd> qr(xtx);
  qr.setThreshold(1e-12);
  if (qr.rank() < xtx.cols()) {
    std::string msg = "singular second stage; collinear columns:";
    for (Eigen::Index j = qr.rank(); j < xtx.cols(); ++j) {
      const int c = qr.colsPermutation().indices()(j);
      msg += " " + (c < static_cast<int>(names.size()) ? names[c] : "col" + std::to_string(c));
    }
    throw IdentificationError(msg);
  }
  TslsFit f;
  f.coef = qr.solve(xhat.transpose() * y);
  f.residuals = y - x * f.coef;
  const MatrixXd bread = qr.inverse();
  const MatrixXd sx = xhat.array().colwise() * f.residuals.array();
  f.vcov = (n / (n - k)) * bread * (sx.transpose() * sx) * bread.transpose();
  return f;
}

EstimateResult estimate_ols(const Dataset& d) {
  const MatrixXd one = linalg::ones(d.n());
  const MatrixXd reg = hstack({&one, &d.a(), &d.w(), &d.x()});
  auto names = concat({{"(intercept)"}, d.a_names(), d.w_names(), d.x_names()});
  return package(Method::OLS, d, tsls(d.y(), reg, reg, names), names, 0, {});
}

EstimateResult estimate_iv(const Dataset& d) {
  const MatrixXd one = linalg::ones(d.n());
  const MatrixXd reg = hstack({&one, &d.a(), &d.w(), &d.x()});
  const MatrixXd ins = hstack({&one, &d.z(), &d.w(), &d.x()});
  auto names = concat({{"(intercept)"}, d.a_names(), d.w_names(), d.x_names()});
  return package(Method::IV, d, tsls(d.y(), reg, ins, names), names, 0, {});
}

EstimateResult estimate_pl(const Dataset& d, int r) {
  // Proxy control: W projected on (Z, A) jointly, reduced to rank r.
  const MatrixXd za = hstack({&d.z(), &d.a()});
  const GammaTilde g = fit_gamma_tilde(za, d.w(), d.x());
  const ControlFunction cf = control_from_gamma(g, za, d.x(), r);
  const MatrixXd one = linalg::ones(d.n());
  const MatrixXd reg = hstack({&one, &d.a(), &cf.values, &d.x()});
  auto names = concat({{"(intercept)"}, d.a_names(), t_names(r, "T_pl"), d.x_names()});
  return package(Method::PL, d, tsls(d.y(), reg, reg, names), names, r, cf.values);
}

VectorXd icc_direct_formula(const Dataset& d, const ControlFunction& cf) {
  const MatrixXd one = linalg::ones(d.n());
  const MatrixXd ctrl = hstack({&one, &cf.values, &d.x()});
  const MatrixXd inst = hstack({&one, &d.z(), &d.x()});
  const MatrixXd ma = linalg::residualize(ctrl, d.a());
  const MatrixXd my = linalg::residualize(ctrl, d.y());
  const MatrixXd pz_ma = inst * linalg::ols(inst, ma);
  const MatrixXd pz_my = inst * linalg::ols(inst, my);
  const MatrixXd lhs = d.a().transpose() * pz_ma;
  const MatrixXd rhs = d.a().transpose() * pz_my;
  return lhs.fullPivLu().solve(rhs).col(0);
}

EstimateResult estimate_icc(const Dataset& d, const ControlFunction& cf) {
  const MatrixXd one = linalg::ones(d.n());
  const MatrixXd ctrl = hstack({&one, &cf.values, &d.x()});

  // Relevance conditional on the control, measured on residualised data.
  const MatrixXd za = linalg::residualize(ctrl, d.a());
  const MatrixXd zz = linalg::residualize(ctrl, d.z());
  const MatrixXd zc = d.z().rowwise() - d.z().colwise().mean();
  Eigen::JacobiSVD<MatrixXd> zsvd(zc);
  const double zscale = zsvd.singularValues()(0);
  Eigen::JacobiSVD<MatrixXd> svd(zz, Eigen::ComputeThinU);
  const VectorXd& s = svd.singularValues();
  int keep = 0;
  for (Eigen::Index i = 0; i < s.size(); ++i)
    if (s(i) > 1e-7 * zscale) ++keep;
  double cond = std::numeric_limits<double>::infinity();
  if (keep > 0) {
    const MatrixXd u = svd.matrixU().leftCols(keep);
    const MatrixXd proj = u.transpose() * za;
    const MatrixXd g = proj.transpose() * proj;
    const double lmax = Eigen::SelfAdjointEigenSolver<MatrixXd>(za.transpose() * za).eigenvalues().maxCoeff();
    const double lmin = Eigen::SelfAdjointEigenSolver<MatrixXd>(g).eigenvalues().minCoeff();
    cond = lmin > 0 ? lmax / lmin : std::numeric_limits<double>::infinity();
  }
  if (!(cond <= 1e10))
    throw IdentificationError("conditional relevance failure: instruments carry no variation in A "
                              "beyond the control (r=" + std::to_string(cf.r) + ")");

  const MatrixXd reg = hstack({&one, &d.a(), &cf.values, &d.x()});
  const MatrixXd ins = hstack({&one, &d.z(), &d.x()});
  auto names = concat({{"(intercept)"}, d.a_names(), t_names(cf.r), d.x_names()});
  EstimateResult e = package(Method::ICC, d, tsls(d.y(), reg, ins, names), names, cf.r, cf.values);
  e.relevance_condition = cond;

  const VectorXd direct = icc_direct_formula(d, cf);
  const double tol = 1e-6 * (1.0 + e.beta.cwiseAbs().maxCoeff());
  if ((direct - e.beta).cwiseAbs().maxCoeff() > tol)
    throw NumericalError("ICC: residualised 2SLS and direct formula disagree");
  return e;
}

EstimateResult estimate_icc(const Dataset& d, int r) { return estimate_icc(d, estimate_control(d, r)); }

EstimateResult estimate(Method m, const Dataset& d, int r) {
  switch (m) {
    case Method::OLS: return estimate_ols(d);
    case Method::IV: return estimate_iv(d);
    case Method::PL: return estimate_pl(d, r);
    case Method::ICC: return estimate_icc(d, r);
  }
  throw PreconditionError("unknown method");
}

json to_json(const EstimateResult& e) {
  json j = {{"kind", "estimate"},
            {"method", method_name(e.method)},
            {"r", e.r},
            {"n", e.n},
            {"beta", to_json(e.beta)},
            {"se", to_json(e.beta_se)},
            {"t_coef", to_json(e.t_coef)},
            {"t_se", to_json(e.t_se)},
            {"t_coef_per_sd", to_json(e.t_coef_per_sd)},
            {"names", e.names},
            {"coef", to_json(e.coef)},
            {"vcov", to_json(e.vcov)}};
  if (e.method == Method::ICC) j["relevance_condition"] = e.relevance_condition;
  return j;
}

VectorXd icc_bootstrap_se(const Dataset& d, int r, int boot, const SeedSpec& seed, int workers) {
  if (boot < 2) throw PreconditionError("bootstrap needs at least 2 replicates");
  std::vector<VectorXd> draws(boot);
  std::vector<char> ok(boot, 0);
  parallel_for(boot, workers, [&](std::size_t b) {
    Rng rng(seed.stream(b));
    try {
      draws[b] = estimate_icc(d.rows(bootstrap_indices(d.n(), rng)), r).beta;
      ok[b] = 1;
    } catch (const IdentificationError&) {
    }
  });
  std::vector<VectorXd> good;
  for (int b = 0; b < boot; ++b)
    if (ok[b]) good.push_back(draws[b]);
  if (good.size() < 2) throw NumericalError("bootstrap: too few successful replicates");
  VectorXd mean = VectorXd::Zero(d.d_a());
  for (const auto& v : good) mean += v;
  mean /= static_cast<double>(good.size());
  VectorXd var = VectorXd::Zero(d.d_a());
  for (const auto& v : good) var += (v - mean).cwiseAbs2();
  return (var / static_cast<double>(good.size() - 1)).cwiseSqrt();
}

SweepResult bias_variance_sweep(const LinearDGPSpec& spec, Eigen::Index n, int reps, int r_max,
                                const SeedSpec& seed, int workers) {
  if (reps < 2) throw PreconditionError("sweep needs at least 2 replicates");
  const int lim = std::min(spec.d_z, spec.d_w);
  if (r_max < 0 || r_max > lim) throw PreconditionError("r_max outside [0, min(d_z, d_w)]");
  const double beta = spec.beta(0);
  const int nr = r_max + 1;
  MatrixXd est = MatrixXd::Constant(reps, nr, std::numeric_limits<double>::quiet_NaN());
  parallel_for(reps, workers, [&](std::size_t b) {
    const Dataset d = sample_linear(spec, n, seed.stream(b));
    const GammaTilde g = fit_gamma_tilde(d);
    for (int r = 0; r < nr; ++r) {
      try {
        est(b, r) = estimate_icc(d, control_from_gamma(g, d.z(), d.x(), r)).beta(0);
      } catch (const IdentificationError&) {
      }
    }
  });
  SweepResult out;
  out.n = n;
  out.reps = reps;
  out.beta = beta;
  out.seed = seed;
  for (int r = 0; r < nr; ++r) {
    SweepRow row;
    row.r = r;
    std::vector<double> v;
    for (int b = 0; b < reps; ++b)
      if (std::isfinite(est(b, r))) v.push_back(est(b, r));
    row.converged = static_cast<int>(v.size());
    row.failures = reps - row.converged;
    if (v.size() >= 2) {
      double m = 0, ss = 0, se = 0;
      for (double x : v) m += x;
      m /= v.size();
      for (double x : v) {
        ss += (x - m) * (x - m);
        se += (x - beta) * (x - beta);
      }
      row.bias = m - beta;
      row.sd = std::sqrt(ss / (v.size() - 1));
      row.rmse = std::sqrt(se / v.size());
      row.mcse = row.sd / std::sqrt(static_cast<double>(v.size()));
    } else {
      row.bias = row.sd = row.rmse = row.mcse = std::numeric_limits<double>::quiet_NaN();
    }
    out.rows.push_back(row);
  }
  return out;
}

namespace {
json num_or_null(double v) { return std::isfinite(v) ? json(v) : json(nullptr); }
std::string csv_num(double v) {
  if (!std::isfinite(v)) return "NA";
  return json(v).dump();
}
}  // namespace

json to_json(const SweepResult& s) {
  json rows = json::array();
  for (const auto& r : s.rows)
    rows.push_back({{"r", r.r}, {"bias", num_or_null(r.bias)}, {"sd", num_or_null(r.sd)},
                    {"rmse", num_or_null(r.rmse)}, {"mcse", num_or_null(r.mcse)},
                    {"failures", r.failures}, {"converged", r.converged}});
  return {{"kind", "sweep"}, {"n", s.n}, {"reps", s.reps}, {"beta", s.beta},
          {"rows", rows}, {"seed", to_json(s.seed)}};
}

std::string sweep_csv(const SweepResult& s) {
  std::string out = "r,bias,sd,rmse,failures\n";
  for (const auto& r : s.rows)
    out += std::to_string(r.r) + "," + csv_num(r.bias) + "," + csv_num(r.sd) + "," +
           csv_num(r.rmse) + "," + std::to_string(r.failures) + "\n";
  return out;
}

}  // namespace icc
