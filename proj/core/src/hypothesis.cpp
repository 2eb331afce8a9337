#include "icc/hypothesis.hpp"

#include <cmath>

#include "icc/errors.hpp"
#include "icc/estimators.hpp"
#include "icc/linalg.hpp"

namespace icc {

double tail_sum_squares(const VectorXd& s, int r) {
  double acc = 0;
  for (Eigen::Index j = r; j < s.size(); ++j) acc += s(j) * s(j);
  return acc;
}

LogitFit fit_logit(const MatrixXd& x, const VectorXd& y, int max_iter) {
  const Eigen::Index n = y.size();
  const MatrixXd one = linalg::ones(n);
  const MatrixXd design = linalg::hstack({&one, &x});
  const Eigen::Index k = design.cols();
  auto loglik = [&](const VectorXd& b) {
    const VectorXd eta = design * b;
    double ll = 0;
    for (Eigen::Index i = 0; i < n; ++i) {
      // log(1 + exp(eta)) computed stably
      const double e = eta(i);
      const double sp = e > 0 ? e + std::log1p(std::exp(-e)) : std::log1p(std::exp(e));
      ll += y(i) * e - sp;
    }
    return ll;
  };
  LogitFit fit;
  const double ybar = y.mean();
  fit.coef = VectorXd::Zero(k);
  if (ybar <= 0 || ybar >= 1) return fit;  // no variation: MLE does not exist
  fit.coef(0) = std::log(ybar / (1 - ybar));
  double ll = loglik(fit.coef);
  for (int it = 0; it < max_iter; ++it) {
    const VectorXd eta = design * fit.coef;
    VectorXd p(n), wts(n);
    for (Eigen::Index i = 0; i < n; ++i) {
      p(i) = 1.0 / (1.0 + std::exp(-eta(i)));
      wts(i) = p(i) * (1 - p(i));
    }
    const VectorXd grad = design.transpose() * (y - p);
    const MatrixXd info = design.transpose() * wts.asDiagonal() * design;
    Eigen::LDLT<MatrixXd> ldlt(info);
    if (ldlt.info() != Eigen::Success) return fit;
    const VectorXd step = ldlt.solve(grad);
    double t = 1.0;
    VectorXd next;
    double ll_next = -std::numeric_limits<double>::infinity();
    for (int h = 0; h < 30; ++h, t *= 0.5) {
      next = fit.coef + t * step;
      ll_next = loglik(next);
      if (ll_next >= ll - 1e-12) break;
    }
    const double change = std::abs(ll_next - ll);
    fit.coef = next;
    ll = ll_next;
    if (!fit.coef.allFinite() || fit.coef.cwiseAbs().maxCoeff() > 50) return fit;
    if (change < 1e-10 * (1 + std::abs(ll)) && step.cwiseAbs().maxCoeff() < 1e-6) {
      fit.converged = true;
      return fit;
    }
  }
  return fit;
}

RankTestResult rank_test(const Dataset& d, int r, int boot, const SeedSpec& seed,
                         RankNullModel model, int workers) {
  const int lim = static_cast<int>(std::min(d.d_z(), d.d_w()));
  if (r < 0 || r >= lim)
    throw PreconditionError("rank test needs 0 <= r < min(d_z, d_w) = " + std::to_string(lim));
  if (boot < 1) throw PreconditionError("rank test needs at least one bootstrap replicate");

  const Eigen::Index n = d.n();
  const GammaTilde g = fit_gamma_tilde(d);
  RankTestResult out;
  out.r = r;
  out.seed = seed;
  out.statistic = static_cast<double>(n) * tail_sum_squares(g.singular_values, r);

  const MatrixXd one = linalg::ones(n);
  const MatrixXd design = linalg::hstack({&one, &d.z(), &d.x()});
  // Solving operator reused by every replicate: coef = H * W.
  const MatrixXd h = (design.transpose() * design).ldlt().solve(design.transpose());
  const MatrixXd h_z = g.z_root * h.middleRows(1, d.d_z());

  const MatrixXd coef_std_r = g.p0.leftCols(r) * g.singular_values.head(r).asDiagonal() *
                              g.q0.leftCols(r).transpose();
  const MatrixXd index = d.z() * g.to_original(coef_std_r) +
                         d.x() * g.x_coef;

  if (model == RankNullModel::Auto) {
    const bool binary = (d.w().array() == 0 || d.w().array() == 1).all();
    model = binary ? RankNullModel::Logit : RankNullModel::Gaussian;
  }

  const Eigen::Index dw = d.d_w();
  MatrixXd mean(n, dw);
  MatrixXd chol;
  if (model == RankNullModel::Gaussian) {
    out.null_model = "gaussian";
    for (Eigen::Index j = 0; j < dw; ++j)
      mean.col(j) = index.col(j).array() + (d.w().col(j).mean() - index.col(j).mean());
    const MatrixXd resid = d.w() - design * (h * d.w());
    const MatrixXd sig = resid.transpose() * resid / static_cast<double>(n - design.cols());
    Eigen::LLT<MatrixXd> llt(sig);
    if (llt.info() != Eigen::Success) throw NumericalError("proxy residual covariance not positive definite");
    chol = MatrixXd(llt.matrixL()).transpose();
  } else {
    out.null_model = "logit";
    out.logit_fallback.assign(dw, false);
    for (Eigen::Index j = 0; j < dw; ++j) {
      const VectorXd idx = index.col(j);
      const double spread = idx.maxCoeff() - idx.minCoeff();
      const double ybar = d.w().col(j).mean();
      if (ybar <= 0 || ybar >= 1) throw PreconditionError("binary proxy " + d.w_names()[j] + " is constant");
      const double intercept_only = std::log(ybar / (1 - ybar));
      double alpha = intercept_only, slope = 0;
      if (spread > 1e-12) {
        const LogitFit fit = fit_logit(idx, d.w().col(j));
        if (fit.converged) {
          alpha = fit.coef(0);
          slope = fit.coef(1);
        } else {
          out.logit_fallback[j] = true;
        }
      }
      mean.col(j) = (1.0 / (1.0 + (-(alpha + slope * idx.array())).exp())).matrix();
    }
  }

  out.null_draws.assign(boot, 0.0);
  parallel_for(boot, workers, [&](std::size_t b) {
    Rng rng(seed.stream(b));
    MatrixXd wb(n, dw);
    if (model == RankNullModel::Gaussian) {
      wb = mean + rng.normal_matrix(n, dw) * chol;
    } else {
      for (Eigen::Index j = 0; j < dw; ++j)
        for (Eigen::Index i = 0; i < n; ++i) wb(i, j) = rng.uniform() < mean(i, j) ? 1.0 : 0.0;
    }
    const MatrixXd cb = h_z * wb;
    Eigen::JacobiSVD<MatrixXd> svd(cb);
    out.null_draws[b] = static_cast<double>(n) * tail_sum_squares(svd.singularValues(), r);
  });
  int below = 0;
  for (double v : out.null_draws)
    if (v < out.statistic) ++below;
  out.p_value = 1.0 - static_cast<double>(below) / boot;
  return out;
}

json to_json(const RankTestResult& t) {
  json j = {{"kind", "rank_test"}, {"r", t.r}, {"statistic", t.statistic},
            {"p_value", t.p_value}, {"null_model", t.null_model},
            {"boot", t.null_draws.size()}, {"seed", to_json(t.seed)}};
  json fb = json::array();
  for (bool f : t.logit_fallback) fb.push_back(f);
  j["logit_fallback"] = fb;
  j["bootstrap_draws"] = t.null_draws;
  return j;
}

namespace {

double r2(const MatrixXd& design, const VectorXd& y) { return linalg::r_squared(design, y); }

MatrixXd with_one(const MatrixXd& a, const MatrixXd& b) {
  const MatrixXd one = linalg::ones(a.rows());
  return linalg::hstack({&one, &a, &b});
}

}  // namespace

RelevanceTestResult relevance_test(const Dataset& d, int r, int boot, const SeedSpec& seed,
                                   RelevanceMethod method, int workers) {
  if (boot < 1) throw PreconditionError("relevance test needs at least one bootstrap replicate");
  RelevanceTestResult out;
  out.r = r;
  out.seed = seed;
  const ControlFunction cf = estimate_control(d, r);
  const VectorXd a = d.a().col(0);
  const MatrixXd ur = with_one(d.z(), d.x());
  const MatrixXd re = with_one(cf.values, d.x());
  out.r2_unrestricted = r2(ur, a);
  out.r2_restricted = r2(re, a);
  out.statistic = out.r2_unrestricted - out.r2_restricted;
  out.r2_restricted_draws.assign(boot, 0.0);

  if (method == RelevanceMethod::RestrictedDistribution) {
    out.method = "restricted_distribution";
    parallel_for(boot, workers, [&](std::size_t b) {
      Rng rng(seed.stream(b));
      const Dataset db = d.rows(bootstrap_indices(d.n(), rng));
      const ControlFunction cb = estimate_control(db, r);
      out.r2_restricted_draws[b] = r2(with_one(cb.values, db.x()), db.a().col(0));
    });
    int ge = 0;
    for (double v : out.r2_restricted_draws)
      if (v >= out.r2_unrestricted) ++ge;
    out.p_value = static_cast<double>(ge) / boot;
    return out;
  }

  out.method = "null_imposed";
  const VectorXd fitted = re * linalg::ols(re, a);
  const VectorXd resid = a - fitted;
  out.statistic_draws.assign(boot, 0.0);
  parallel_for(boot, workers, [&](std::size_t b) {
    Rng rng(seed.stream(b));
    const auto idx = bootstrap_indices(d.n(), rng);
    MatrixXd ab(d.n(), 1);
    for (Eigen::Index i = 0; i < d.n(); ++i)
      ab(i, 0) = fitted(idx[i]) + (rng.uniform() < 0.5 ? -1.0 : 1.0) * resid(idx[i]);
    const Dataset db = d.rows(idx);
    const ControlFunction cb = estimate_control(db, r);
    const double ru = r2(with_one(db.z(), db.x()), ab.col(0));
    const double rr = r2(with_one(cb.values, db.x()), ab.col(0));
    out.r2_restricted_draws[b] = rr;
    out.statistic_draws[b] = ru - rr;
  });
  int ge = 0;
  for (double v : out.statistic_draws)
    if (v >= out.statistic) ++ge;
  out.p_value = static_cast<double>(ge) / boot;
  return out;
}

json to_json(const RelevanceTestResult& t, bool include_draws) {
  json j = {{"kind", "relevance_test"}, {"r", t.r}, {"r2_unrestricted", t.r2_unrestricted},
            {"r2_restricted", t.r2_restricted}, {"statistic", t.statistic},
            {"p_value", t.p_value}, {"method", t.method},
            {"boot", t.r2_restricted_draws.size()}, {"seed", to_json(t.seed)}};
  if (include_draws) {
    j["r2_restricted_draws"] = t.r2_restricted_draws;
    j["statistic_draws"] = t.statistic_draws;
  }
  return j;
}

SpecificationTestResult specification_test(const Dataset& d, int r1, int r2, int boot,
                                           const SeedSpec& seed, int workers) {
  SpecificationTestResult out;
  out.r1 = r1;
  out.r2 = r2;
  out.seed = seed;
  const GammaTilde g = fit_gamma_tilde(d);
  out.theta1 = estimate_icc(d, control_from_gamma(g, d.z(), d.x(), r1)).beta;
  out.theta2 = estimate_icc(d, control_from_gamma(g, d.z(), d.x(), r2)).beta;
  out.diff = out.theta1 - out.theta2;
  if (r1 == r2) {
    out.p_value = 1.0;
    return out;
  }
  if (boot < 2) throw PreconditionError("specification test needs at least 2 bootstrap replicates");
  std::vector<VectorXd> draws(boot);
  std::vector<char> ok(boot, 0);
  parallel_for(boot, workers, [&](std::size_t b) {
    Rng rng(seed.stream(b));
    const Dataset db = d.rows(bootstrap_indices(d.n(), rng));
    try {
      const GammaTilde gb = fit_gamma_tilde(db);
      const VectorXd t1 = estimate_icc(db, control_from_gamma(gb, db.z(), db.x(), r1)).beta;
      const VectorXd t2 = estimate_icc(db, control_from_gamma(gb, db.z(), db.x(), r2)).beta;
      draws[b] = t1 - t2;
      ok[b] = 1;
    } catch (const IdentificationError&) {
    }
  });
  std::vector<VectorXd> good;
  for (int b = 0; b < boot; ++b)
    if (ok[b]) good.push_back(draws[b] - out.diff);
  out.failed_draws = boot - static_cast<int>(good.size());
  if (good.size() < 2) throw NumericalError("specification test: too few successful replicates");
  const Eigen::Index k = out.diff.size();
  MatrixXd cov = MatrixXd::Zero(k, k);
  for (const auto& v : good) cov += v * v.transpose();
  cov /= static_cast<double>(good.size());
  const MatrixXd prec = linalg::pinv(cov, 1e-12);
  out.statistic = out.diff.dot(prec * out.diff);
  int ge = 0;
  for (const auto& v : good)
    if (v.dot(prec * v) >= out.statistic) ++ge;
  out.p_value = static_cast<double>(ge) / good.size();
  return out;
}

json to_json(const SpecificationTestResult& t) {
  return {{"kind", "specification_test"}, {"r1", t.r1}, {"r2", t.r2},
          {"theta1", to_json(t.theta1)}, {"theta2", to_json(t.theta2)},
          {"diff", to_json(t.diff)}, {"statistic", t.statistic}, {"p_value", t.p_value},
          {"failed_draws", t.failed_draws}, {"seed", to_json(t.seed)}};
}

}  // namespace icc
