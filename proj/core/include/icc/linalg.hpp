#pragma once

#include <Eigen/Dense>
#include <string>
#include <vector>

namespace icc::linalg {

using Eigen::MatrixXd;
using Eigen::VectorXd;

MatrixXd hstack(const std::vector<const MatrixXd*>& blocks);
MatrixXd ones(Eigen::Index n);

// OLS coefficients of every column of Y on X. Throws PreconditionError naming
// the offending columns if X is rank deficient.
MatrixXd ols(const MatrixXd& X, const MatrixXd& Y,
             const std::vector<std::string>& names = {});
MatrixXd residualize(const MatrixXd& X, const MatrixXd& Y);

// Moore-Penrose pseudo-inverse; singular values below rel_cutoff * s_max are
// treated as zero.
MatrixXd pinv(const MatrixXd& M, double rel_cutoff = 1e-10);
int numerical_rank(const MatrixXd& M, double rel_cutoff = 1e-10);

// Orthonormal basis of the orthogonal complement of span(M) in R^rows.
MatrixXd complement_basis(const MatrixXd& M, double rel_cutoff = 1e-10);

MatrixXd covariance(const MatrixXd& A, const MatrixXd& B);  // centred, 1/n
VectorXd column_sd(const MatrixXd& M);                       // centred, 1/n
double r_squared(const MatrixXd& X, const VectorXd& y);

// Largest principal angle (radians) between two column spans.
double max_principal_angle(const MatrixXd& A, const MatrixXd& B);

}  // namespace icc::linalg
