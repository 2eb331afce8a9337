#pragma once

#include <vector>

#include "icc/control.hpp"
#include "icc/data.hpp"
#include "icc/report.hpp"
#include "icc/sieve.hpp"

namespace icc {

// Rank: midranks of A within Z cells (invariant to increasing transforms of A).
// LocalLinear: midranks of the residual of A on (1, Z) within Z cells, which
// removes the within-cell drift of A with Z.
enum class VtMethod { Rank, LocalLinear };

struct VtConfig {
  VtMethod method = VtMethod::LocalLinear;
  int cell_size = 0;        // target points per Z cell; 0 means max(floor, ceil(sqrt(n)))
  int floor = 30;
  double degenerate_ratio = 1e-6;  // within-cell residual/total variance of A below this flags degeneracy
};

struct MonotoneControl {
  VectorXd v;               // in (0, 1)
  MatrixXd t;               // n x r
  std::vector<int> z_cell;  // Z cell of each row
  int cells = 0;
  int cell_size = 0;
  bool merged = false;      // fewer points than the floor: one cell only
  bool degenerate = false;  // A explained by Z within cells
  double residual_ratio = 0;
  VtMethod method = VtMethod::Rank;
};

// Conditional CDF of the scalar treatment given Z, evaluated at the sample.
MonotoneControl estimate_vt(const Dataset& data, const ControlFunction& cf, const VtConfig& cfg = {});

struct SupportConfig {
  double bandwidth = 0;     // window around a; 0 means 1.06 sd(A) n^(-1/5)
  double threshold = 0.05;
};

struct SupportEntry {
  double a = 0;
  int near = 0;             // observations within the window
  int grid = 0;             // cells per dimension used for the occupancy check
  double uncovered = 0;     // (V, T) mass in cells without any nearby observation
};

struct SupportReport {
  std::vector<SupportEntry> entries;
  double worst = 0;
  double threshold = 0.05;
  bool ok() const { return worst <= threshold; }
};

SupportReport check_common_support(const MonotoneControl& mc, const VectorXd& a, const VectorXd& a_grid,
                                   const SupportConfig& cfg = {});

struct AverageCausalConfig {
  int rank = 1;               // control rank used when re-estimating in the bootstrap
  VtConfig vt;
  SupportConfig support;
  int cells_per_dim = 0;      // (V, T) grid; 0 means ceil(n^(1/3))
  int min_cell = 3;
  bool interacted = true;     // within-cell model adds (V, T) and A x (V, T) terms
  int bootstrap = 200;        // 0 skips the standard error
  int workers = 0;            // 0 means default_workers()
};

struct AverageCausalResult {
  double theta = 0;
  double se = 0;              // NaN-free: 0 when bootstrap is skipped
  int bootstrap = 0;
  double naive = 0;           // contrast from OLS of Y on (1, A)
  int cells = 0;
  double dropped_mass = 0;    // mass of cells too small to fit
  SupportReport support;
  bool degenerate = false;
  SeedSpec seed;
};

// Integrates E[Y | A = a, V, T] over the empirical (V, T) distribution with
// the contrast weights.
AverageCausalResult average_causal(const Dataset& data, const MonotoneControl& mc, const Contrast& pi,
                                   const AverageCausalConfig& cfg, const SeedSpec& seed);
// Full pipeline: control, V, estimate.
AverageCausalResult average_causal(const Dataset& data, const Contrast& pi, const AverageCausalConfig& cfg,
                                   const SeedSpec& seed);

// Nonseparable design: U ~ N(mu, 1), Z1 = U + e, Z2 ~ N(0, 1) independent,
// A = Z1 + sd_z2 Z2 + eta with corr(eta, U) = rho, W = U + noise (two proxies),
// Y = A U + eps.  The effect of moving A from a0 to a1 is (a1 - a0) mu.
struct MonotoneDGP {
  double mu = 1.0;
  double sd_e = 1.0;
  double sd_z2 = 2.0;
  double rho = 0.5;
  double sd_eta = 1.0;
  double sd_w = 0.5;
  double sd_y = 0.5;
  double true_effect(double a0, double a1) const { return (a1 - a0) * mu; }
};
Dataset sample_monotone(const MonotoneDGP& g, Eigen::Index n, const SeedSpec& seed, VectorXd* eta = nullptr);

json to_json(const MonotoneDGP& g);
MonotoneDGP monotone_dgp_from_json(const json& j);
json to_json(const MonotoneControl& mc);
json to_json(const SupportReport& s);
json to_json(const AverageCausalResult& r);

}  // namespace icc
