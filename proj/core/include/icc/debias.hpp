#pragma once

#include <array>
#include <functional>
#include <optional>
#include <string>

#include "icc/discrete.hpp"
#include "icc/report.hpp"
#include "icc/sieve.hpp"

namespace icc {

// Nuisance functions tabulated on the discrete supports.
struct NuisanceTables {
  VectorXd g;        // |Z|  E[g_Y(Y) | Z]
  VectorXd tau;      // |Z|  confounding-driven part of g (a function of T)
  VectorXd k;        // |A|  structural function
  VectorXd q_k;      // |Z|  debiasing for k
  VectorXd q_tau;    // |W|  debiasing for tau
  VectorXd alpha_g;  // |Z|  debiasing for g
};

enum class Nuisance { K = 0, Tau, G, QK, QTau, AlphaG };
const char* nuisance_name(Nuisance n);

struct ExactOptions {
  std::optional<discrete::Labeling> control;  // defaults to the minimal control
  bool trivial_tau = false;                    // take tau = g (tau space = all of L2(Z))
  std::function<double(double)> g_y;           // outcome transform, identity if empty
  double range_tol = 1e-8;                     // relative residual for exact solvability
};

struct ExactDiagnostics {
  double tau_residual = 0;    // |E[tau - g | W]|_inf
  double k_residual = 0;      // |E[k(A)|Z] - (g - tau)|_inf
  double riesz_residual = 0;  // |E[q_k | A] - alpha_k|_inf
  double qtau_residual = 0;   // |Pi_T(E[q_tau | Z] - q_k)|_inf
  bool tau_trivial = false;   // the only solution is tau = g
};

// Exact population moment model on a discrete joint for the linear functional
// m0(k) = sum_a pi(a) k(a).  All conditional expectations are exact tables.
class ExactMomentModel {
 public:
  ExactMomentModel(const discrete::JointTable& joint, const VectorXd& pi, ExactOptions opts = {});

  const NuisanceTables& truth() const { return truth_; }
  const ExactDiagnostics& diagnostics() const { return diag_; }
  double theta0() const { return m0(truth_.k); }
  const discrete::Labeling& control() const { return control_; }

  double m0(const VectorXd& k) const { return pi_.dot(k); }
  VectorXd alpha_k() const;

  // Nuisance maps (sequential dependence).
  VectorXd g_true() const { return truth_.g; }
  VectorXd tau_of(const VectorXd& g) const;
  VectorXd k_of(const VectorXd& tau, const VectorXd& g) const;
  VectorXd qk_true() const { return truth_.q_k; }
  VectorXd qtau_of(const VectorXd& q_k) const;
  VectorXd alpha_of(const VectorXd& q_k, const VectorXd& q_tau) const;

  // E[m3] by enumeration over the joint.
  double expected_m3(const NuisanceTables& n) const;

  struct Decomposition {
    double lhs = 0;             // E[m3] - theta0
    std::array<double, 3> terms{};  // product-error terms for (k,q_k), (tau,q_tau), (g,alpha_g)
    std::array<double, 3> bounds{}; // Cauchy-Schwarz bounds for each term
    double gap() const { return lhs - terms[0] - terms[1] - terms[2]; }
    double bound() const { return bounds[0] + bounds[1] + bounds[2]; }
  };
  Decomposition decompose(const NuisanceTables& n) const;

  // Which downstream nuisances follow their map when an upstream one moves.
  struct Tracking {
    bool tau = false;    // tau = tau_of(g)
    bool k = false;      // k = k_of(tau, g)
    bool q_tau = false;  // q_tau = qtau_of(q_k)
    bool alpha = false;  // alpha_g = alpha_of(q_k, q_tau)
  };
  // Central finite difference of t -> E[m3] along `dir` for nuisance `which`.
  double directional_derivative(const NuisanceTables& base, Nuisance which, const VectorXd& dir,
                                const Tracking& tracking, double h = 1e-4) const;

  // Random perturbation direction of the right length; tau directions are
  // functions of the control so they stay in the tau space.
  VectorXd random_direction(Nuisance which, Rng& rng) const;

  // L2 norms under the joint.
  double norm_z(const VectorXd& f) const;
  double norm_w(const VectorXd& f) const;
  double norm_a(const VectorXd& f) const;

  const VectorXd& p_z() const { return pz_; }
  const VectorXd& p_w() const { return pw_; }
  const VectorXd& p_a() const { return pa_; }

 private:
  VectorXd cond_z_of_a(const VectorXd& k) const { return ea_z_ * k; }     // E[k(A)|Z]
  VectorXd cond_a_of_z(const VectorXd& f) const { return ez_a_ * f; }     // E[f(Z)|A]
  VectorXd cond_w_of_z(const VectorXd& f) const { return ez_w_ * f; }     // E[f(Z)|W]
  VectorXd cond_z_of_w(const VectorXd& q) const { return ew_z_ * q; }     // E[q(W)|Z]
  VectorXd project_t(const VectorXd& f) const;                            // E[f(Z)|T] on Z
  VectorXd class_means(const VectorXd& f) const;                          // per class

  discrete::JointTable joint_;
  VectorXd pi_;
  ExactOptions opts_;
  discrete::Labeling control_;
  VectorXd pz_, pw_, pa_, pt_;
  MatrixXd ea_z_, ez_a_, ez_w_, ew_z_, bt_;
  MatrixXd pzw_, pza_;  // joint pmfs
  NuisanceTables truth_;
  ExactDiagnostics diag_;
};

// Convenience wrapper returning the true nuisances and diagnostics.
struct ExactNuisances {
  NuisanceTables tables;
  ExactDiagnostics diagnostics;
  double theta0 = 0;
};
ExactNuisances compute_nuisances_exact(const discrete::JointTable& joint, const VectorXd& pi,
                                       ExactOptions opts = {});

// Cross-fitted estimate of theta0 = m0(k0) with the debiased moment.
struct DmlOptions {
  int folds = 5;
  SieveSpec sieve;
  std::function<double(double)> g_y;
};

struct DmlResult {
  double theta = 0;
  double sigma = 0;  // sd of the moment
  double se = 0;     // sigma / sqrt(n)
  double ci_low = 0, ci_high = 0;
  Eigen::Index n = 0;
  int folds = 0;
  std::vector<double> fold_theta;
  std::vector<int> fold_classes;  // control classes chosen on each training split
  SeedSpec seed;
};

DmlResult dml_estimate(const Dataset& data, const Contrast& m0, const DmlOptions& opts,
                       const SeedSpec& seed);
json to_json(const DmlResult& r);

}  // namespace icc
