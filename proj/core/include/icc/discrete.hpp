#pragma once

#include <functional>
#include <string>
#include <vector>

#include "icc/data.hpp"
#include "icc/report.hpp"

namespace icc::discrete {

enum class DVar { U = 0, Z = 1, W = 2, A = 3, Y = 4 };
using VarSet = unsigned;
constexpr VarSet bit(DVar v) { return 1u << static_cast<unsigned>(v); }

// Finite-support structural model.  Every variable is scalar-valued with the
// given support; tables are conditional pmfs with rows summing to one.
//   U ~ p_u,  Z | U ~ p_z_given_u,  W | U ~ p_w_given_u,
//   A | (Z, U, W) ~ p_a_given_zuw,  Y | (A, U, W) ~ p_y_given_auw.
struct DiscreteModel {
  VectorXd u_support, z_support, w_support, a_support, y_support;
  VectorXd p_u;
  MatrixXd p_z_given_u;    // |U| x |Z|
  MatrixXd p_w_given_u;    // |U| x |W|
  MatrixXd p_a_given_zuw;  // row (z*|U| + u)*|W| + w, |A| columns
  MatrixXd p_y_given_auw;  // row (a*|U| + u)*|W| + w, |Y| columns

  int n_u() const { return static_cast<int>(p_u.size()); }
  int n_z() const { return static_cast<int>(p_z_given_u.cols()); }
  int n_w() const { return static_cast<int>(p_w_given_u.cols()); }
  int n_a() const { return static_cast<int>(p_a_given_zuw.cols()); }
  int n_y() const { return static_cast<int>(p_y_given_auw.cols()); }
  int a_row(int z, int u, int w) const { return (z * n_u() + u) * n_w() + w; }
  int y_row(int a, int u, int w) const { return (a * n_u() + u) * n_w() + w; }

  void validate() const;
};

json to_json(const DiscreteModel& m);
DiscreteModel model_from_json(const json& j);

struct Cell {
  int u, z, w, a, y;
  int operator[](DVar v) const {
    switch (v) {
      case DVar::U: return u;
      case DVar::Z: return z;
      case DVar::W: return w;
      case DVar::A: return a;
      case DVar::Y: return y;
    }
    return -1;
  }
};

class JointTable {
 public:
  explicit JointTable(const DiscreteModel& m);
  const DiscreteModel& model() const { return model_; }
  int dim(DVar v) const { return dims_[static_cast<int>(v)]; }
  std::size_t size() const { return p_.size(); }
  double p(std::size_t idx) const { return p_[idx]; }
  Cell cell(std::size_t idx) const;
  double value(DVar v, int level) const;  // support value
  // Marginal pmf of one variable.
  VectorXd marginal(DVar v) const;
  // Rows: levels of `given`; columns: levels of `of`; entries P(of | given).
  // Rows with zero mass are left at zero.
  MatrixXd conditional(DVar of, DVar given) const;

  template <class F>
  void for_each(F&& f) const {
    for (std::size_t i = 0; i < p_.size(); ++i)
      if (p_[i] > 0) f(cell(i), p_[i]);
  }

 private:
  DiscreteModel model_;
  int dims_[5];
  std::vector<double> p_;
};

JointTable enumerate_joint(const DiscreteModel& m);

// Conditional expectation table of f given the variables in `given`, indexed
// by the given variables' levels in U, Z, W, A, Y order.
class CondTable {
 public:
  VarSet given = 0;
  std::vector<int> vars;    // given variables in canonical order
  std::vector<int> dims;
  std::vector<double> value, mass;
  std::size_t index(const Cell& c) const;
  bool defined(const Cell& c) const { return mass[index(c)] > 0; }
  double at(const Cell& c) const { return value[index(c)]; }
};

CondTable cond_expect(const JointTable& j, const std::function<double(const Cell&)>& f, VarSet given);

// Labels over the Z support; z and z' share a label iff P(W | Z=z) and
// P(W | Z=z') agree entrywise within tol.  Zero-probability z get label 0.
struct Labeling {
  std::vector<int> label;  // size |Z|
  int classes = 0;
};
Labeling minimal_discrete_control(const JointTable& j, double tol = 1e-10);

struct CompletenessResult {
  bool complete = false;
  int rank = 0;
  int required = 0;  // number of positive-probability levels of `of`
};
// Completeness of `given` for `of`: E[g(of) | given] = 0 forces g = 0, i.e.
// the P(of | given) matrix has full column rank on populated levels.
CompletenessResult check_completeness(const JointTable& j, DVar of, DVar given, double tol = 1e-10);

// max_z TV( P(target | Z=z), P(target | T=label(z)) ).  Zero exactly when
// target is independent of Z given T.
double conditional_independence_tv(const JointTable& j, DVar target, const Labeling& t);

struct BridgeResult {
  MatrixXd h;          // |A| x classes; NaN where P(A=a, T=t) = 0
  double theta = 0;
  double residual = 0; // max_z |E[h(A,T)|Z=z] - E[Y|Z=z]|
  int rank = 0;
};
// Least-squares/min-norm solution of E[h(A,T) | Z] = E[Y | Z] and the implied
// sum_t sum_a h(a,t) pi(a) P(T=t).
BridgeResult solve_ls_bridge(const JointTable& j, const Labeling& t, const VectorXd& pi);

// Structural route: sum_a pi(a) E[Y(a)] from the model tables.
double structural_contrast(const DiscreteModel& m, const VectorXd& pi);
double potential_outcome_mean(const DiscreteModel& m, int a);

struct DeviationResult {
  VectorXd k;                // |A|
  VectorXd fredholm_residual;// over Z: E[k(A)|z] - E[k(A)] - (E[Y|z] - E[Y|T(z)])
  double max_residual = 0;
};
// k(a) = sum_{t,u} (E[Y|A=a,T=t,U=u] - E[Y|T=t,U=u]) P(T=t, U=u).
DeviationResult counterfactual_mean_deviation(const JointTable& j, const Labeling& t);

// Observed draws (level indices) from a model.
struct DiscreteSample {
  std::vector<int> u, z, w, a, y;
  std::size_t size() const { return z.size(); }
};
DiscreteSample sample_discrete(const DiscreteModel& m, std::size_t n, const SeedSpec& seed);
Dataset to_dataset(const DiscreteModel& m, const DiscreteSample& s);

// Generators for test fixtures.  Z = (group g, within-group s) with
// P(Z | U) = P(g | U1) P(s) and U = (U1, eta), so the control is the group.
struct GeneratorConfig {
  int n_u1 = 2;
  int n_eta = 1;        // auxiliary confounder levels, independent of Z
  int n_groups = 2;
  int n_within = 2;
  int n_w = 2;
  int n_a = 2;
  bool separable = true;           // Y = k0(A) + e(U, W) +/- noise
  bool y_depends_on_w = true;
  // Treatment driven by (s, eta) only, so A is independent of the control.
  bool treatment_independent_of_control = false;
  double noise = 0.5;
};
DiscreteModel random_model(Rng& rng, const GeneratorConfig& cfg);
// Group label of each Z level for models from random_model.
Labeling generator_groups(const GeneratorConfig& cfg);

}  // namespace icc::discrete
