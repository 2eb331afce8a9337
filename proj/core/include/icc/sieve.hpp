#pragma once

#include <functional>
#include <map>
#include <vector>

#include "icc/data.hpp"

namespace icc {

// Linear functional m0(k) = sum_j weights(j) k(points.row(j)) on treatments.
struct Contrast {
  MatrixXd points;  // rows are treatment values
  VectorXd weights;
  static Contrast difference(double a0, double a1);  // k(a1) - k(a0)
};

struct Basis {
  int dim = 0;
  std::function<MatrixXd(const MatrixXd&)> eval;
};

// Distinct rows of x in lexicographic order.
MatrixXd distinct_rows(const MatrixXd& x);
// Position of each row of x among `levels` (sorted, as from distinct_rows); -1 if absent.
std::vector<int> level_index(const MatrixXd& levels, const MatrixXd& x);
// One indicator per level; rows of x not matching any level evaluate to zero.
Basis indicator_basis(const MatrixXd& levels);
// Indicator of the class of each level.
Basis class_basis(const MatrixXd& levels, const std::vector<int>& label, int classes);
// Total-degree monomials (constant included) of the columns standardised on `train`.
Basis polynomial_basis(const MatrixXd& train, int degree);
// Polynomial in the linear index x * loadings.
Basis index_polynomial_basis(const MatrixXd& loadings, const MatrixXd& train, int degree);

struct SieveFunction {
  Basis basis;
  VectorXd coef;
  VectorXd operator()(const MatrixXd& x) const { return basis.eval(x) * coef; }
};

enum class SieveKind { Indicator, Polynomial };

struct SieveSpec {
  SieveKind kind = SieveKind::Indicator;
  int degree = 2;               // polynomial sieves
  int control_rank = 1;         // polynomial sieves: rank of the linear control
  // Indicator sieves: control class per scalar Z value.  Empty means the
  // classes are estimated on each training split by merging Z levels whose
  // proxy distributions are not significantly different.
  std::map<double, int> control_classes;
  double merge_alpha = 0.01;
  double ridge = 1e-6;          // relative ridge: lambda = ridge * tr(H) / dim
};

// Weighted sample (weights sum to one); y already transformed by g_Y.
struct WeightedObs {
  MatrixXd z, w, a;
  VectorXd y, weight;
};

struct SieveNuisances {
  SieveFunction g, tau, k, q_k, q_tau, alpha_g;
  double m0_k = 0;
  // Relative residuals of the defining equations (zero when exactly solvable).
  double tau_residual = 0, k_residual = 0, riesz_residual = 0, qtau_residual = 0;
};

struct SieveBases {
  Basis z, t, w, a;
};

// Fits every nuisance on a weighted sample.  With exact = true the solves are
// minimum-norm (no ridge), as appropriate for population tables.
SieveNuisances fit_sieve_nuisances(const WeightedObs& obs, const SieveBases& bases,
                                   const Contrast& m0, double ridge, bool exact);

// The debiased moment m3 evaluated on each row.
VectorXd debiased_moment(const SieveNuisances& n, const MatrixXd& z, const MatrixXd& w,
                         const MatrixXd& a, const VectorXd& y);

// Greedy merging of Z levels by a chi-square homogeneity test on the proxy
// counts; returns a class per Z level.
std::vector<int> estimate_control_classes(const std::vector<int>& z_level, int n_z,
                                          const std::vector<int>& w_level, int n_w,
                                          double alpha, int* classes_out = nullptr);

}  // namespace icc
