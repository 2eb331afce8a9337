#pragma once

#include <string>
#include <vector>

#include "icc/control.hpp"
#include "icc/data.hpp"
#include "icc/linear_dgp.hpp"
#include "icc/report.hpp"

namespace icc {

enum class Method { OLS, IV, PL, ICC };
const char* method_name(Method m);
Method method_from_name(const std::string& s);

struct EstimateResult {
  Method method = Method::ICC;
  int r = 0;
  Eigen::Index n = 0;
  VectorXd beta, beta_se;           // treatment effects, HC1 standard errors
  VectorXd t_coef, t_se;            // coefficients on the control (ICC, PL)
  VectorXd t_coef_per_sd;           // same, per standard deviation of each T column
  std::vector<std::string> names;   // names of all coefficients
  VectorXd coef;                    // all coefficients, in `names` order
  MatrixXd vcov;                    // HC1
  double relevance_condition = 0;   // ICC only; >1e10 is a relevance failure
};

json to_json(const EstimateResult& e);

// Two-stage least squares with HC1 sandwich; OLS when instruments == regressors.
struct TslsFit {
  VectorXd coef;
  MatrixXd vcov;
  VectorXd residuals;
};
TslsFit tsls(const VectorXd& y, const MatrixXd& regressors, const MatrixXd& instruments,
             const std::vector<std::string>& names = {});

EstimateResult estimate_ols(const Dataset& d);
EstimateResult estimate_iv(const Dataset& d);
EstimateResult estimate_pl(const Dataset& d, int r);
EstimateResult estimate_icc(const Dataset& d, const ControlFunction& cf);
EstimateResult estimate_icc(const Dataset& d, int r);
EstimateResult estimate(Method m, const Dataset& d, int r);

// (A' P_Z M_{T,X} A)^{-1} A' P_Z M_{T,X} Y with P_Z the projection on (1, Z, X),
// computed literally from n x n-free products.  Used to cross-check ICC.
VectorXd icc_direct_formula(const Dataset& d, const ControlFunction& cf);

// Pairs bootstrap of the ICC effect, re-estimating T on every resample.
VectorXd icc_bootstrap_se(const Dataset& d, int r, int boot, const SeedSpec& seed, int workers = 1);

struct SweepRow {
  int r = 0;
  double bias = 0, sd = 0, rmse = 0, mcse = 0;
  int failures = 0, converged = 0;
};

struct SweepResult {
  std::vector<SweepRow> rows;
  Eigen::Index n = 0;
  int reps = 0;
  double beta = 0;
  SeedSpec seed;
};

// Monte Carlo of ICC across control ranks 0..r_max on common samples.  The
// first treatment is summarised.
SweepResult bias_variance_sweep(const LinearDGPSpec& spec, Eigen::Index n, int reps, int r_max,
                                const SeedSpec& seed, int workers = 1);
json to_json(const SweepResult& s);
std::string sweep_csv(const SweepResult& s);

}  // namespace icc
