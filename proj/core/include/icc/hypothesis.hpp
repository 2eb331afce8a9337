#pragma once

#include <string>
#include <vector>

#include "icc/control.hpp"
#include "icc/data.hpp"
#include "icc/report.hpp"

namespace icc {

// Resampling model for the proxies under the rank-r null.
enum class RankNullModel {
  Auto,      // logit when every proxy is 0/1, Gaussian otherwise
  Logit,     // per-proxy logistic link on the rank-r index
  Gaussian,  // rank-r fitted mean plus multivariate normal residuals
};

struct RankTestResult {
  int r = 0;
  double statistic = 0;           // n * sum of squared singular values beyond r
  std::vector<double> null_draws; // same statistic on each null replicate
  double p_value = 0;
  std::string null_model;
  std::vector<bool> logit_fallback;  // per proxy: intercept-only fit was used
  SeedSpec seed;
};

double tail_sum_squares(const VectorXd& singular_values, int r);

RankTestResult rank_test(const Dataset& d, int r, int boot, const SeedSpec& seed,
                         RankNullModel model = RankNullModel::Auto, int workers = 1);
json to_json(const RankTestResult& t);

// Logistic regression of a 0/1 vector on an intercept and the columns of x.
struct LogitFit {
  VectorXd coef;  // intercept first
  bool converged = false;
};
LogitFit fit_logit(const MatrixXd& x, const VectorXd& y, int max_iter = 100);

enum class RelevanceMethod {
  // Null-imposed bootstrap of the R^2 gain of Z over T (default).
  NullImposed,
  // Compare unrestricted R^2 with the bootstrap distribution of the restricted
  // R^2 from resampled data.
  RestrictedDistribution,
};

struct RelevanceTestResult {
  int r = 0;
  double r2_unrestricted = 0;
  double r2_restricted = 0;
  double statistic = 0;                    // r2_unrestricted - r2_restricted
  std::vector<double> r2_restricted_draws;
  std::vector<double> statistic_draws;     // NullImposed only
  double p_value = 0;
  std::string method;
  SeedSpec seed;
};

// Tests whether Z predicts the (first) treatment beyond the control.
RelevanceTestResult relevance_test(const Dataset& d, int r, int boot, const SeedSpec& seed,
                                   RelevanceMethod method = RelevanceMethod::NullImposed,
                                   int workers = 1);
json to_json(const RelevanceTestResult& t, bool include_draws = false);

struct SpecificationTestResult {
  int r1 = 0, r2 = 0;
  VectorXd theta1, theta2, diff;
  double statistic = 0;
  double p_value = 1;
  int failed_draws = 0;
  SeedSpec seed;
};

// Pairs bootstrap of the difference between ICC estimates under two control
// ranks.  Equal ranks give p = 1.
SpecificationTestResult specification_test(const Dataset& d, int r1, int r2, int boot,
                                           const SeedSpec& seed, int workers = 1);
json to_json(const SpecificationTestResult& t);

}  // namespace icc
