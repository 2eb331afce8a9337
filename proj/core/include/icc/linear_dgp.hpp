#pragma once

#include <Eigen/Dense>

#include "icc/data.hpp"
#include "icc/report.hpp"

namespace icc {

// Linear confounded system (row-vector convention):
//   U ~ N(0, sigma_u)
//   Z = U g_z + e_z
//   X = U g_x + e_x
//   W = U g_w + X eta_w + e_w
//   A = Z zeta + U g_a + W ups_a + X eta_a + e_a
//   Y = A beta + U g_y + W ups_y + X eta_y + e_y
// with independent Gaussian noises of the given standard deviations.
struct LinearDGPSpec {
  int d_u = 1, d_z = 1, d_w = 1, d_a = 1, d_x = 0;
  MatrixXd sigma_u;                 // d_u x d_u
  MatrixXd gamma_z, gamma_w;        // d_u x d_z, d_u x d_w
  MatrixXd gamma_a, gamma_y;        // d_u x d_a, d_u x 1
  MatrixXd gamma_x;                 // d_u x d_x
  MatrixXd zeta;                    // d_z x d_a
  MatrixXd upsilon_a, upsilon_y;    // d_w x d_a, d_w x 1
  MatrixXd eta_w, eta_a, eta_y;     // d_x x d_w, d_x x d_a, d_x x 1
  VectorXd beta;                    // d_a
  double sd_z = 1, sd_w = 1, sd_a = 1, sd_y = 1, sd_x = 1;

  // Fills unset blocks with zeros of the right shape and checks dimensions.
  void validate();
};

LinearDGPSpec spec_from_json(const json& j);
json to_json(const LinearDGPSpec& s);

// Default simulation design: one confounder, three instruments, two proxies,
// true effect 2.
LinearDGPSpec spec_s1();
// Same confounding with three proxies so that every rank 0..d_z is admissible.
LinearDGPSpec spec_sweep();

Dataset sample_linear(const LinearDGPSpec& spec, Eigen::Index n, const SeedSpec& seed);

enum class Var { U = 0, Z, X, W, A, Y };

// Exact joint covariance of (U, Z, X, W, A, Y) implied by a spec.
class PopulationMoments {
 public:
  explicit PopulationMoments(const LinearDGPSpec& spec);
  MatrixXd block(Var a, Var b) const;
  const MatrixXd& full() const { return cov_; }
  // Covariance of a and b after partialling out X.
  MatrixXd block_given_x(Var a, Var b) const;
  int dim(Var v) const { return dims_[static_cast<int>(v)]; }

 private:
  MatrixXd cov_;
  int dims_[6];
  int offset_[6];
};

PopulationMoments implied_covariances(const LinearDGPSpec& spec);

// Rank-r factor C_Z with C_Z C_W' = best rank-r approximation of Sigma_ZW
// (X partialled out).
MatrixXd factor_zw(const PopulationMoments& m, int r);

// d_z x (d_z - rank(C_Z)) transform M D: multiplying Z by it removes the part
// of Z that covaries with the control.  D defaults to a basis of the
// orthogonal complement of span(Sigma_Z^{-1} C_Z).
MatrixXd population_orthogonal_transform(const MatrixXd& sigma_z, const MatrixXd& c_z,
                                         const MatrixXd& d_z_dirs = {});

// Population ICC coefficient for a candidate control factor C_Z.
VectorXd population_icc_beta(const PopulationMoments& m, const MatrixXd& c_z,
                             const MatrixXd& d_z_dirs = {});

// Random spec satisfying the identification conditions (d_w >= d_u,
// d_z >= d_u + d_a, full-rank loadings).  Used for property tests.
LinearDGPSpec random_identified_spec(Rng& rng, int d_u, int d_z, int d_w, int d_a, int d_x = 0);

}  // namespace icc
