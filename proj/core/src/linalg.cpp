#include "icc/linalg.hpp"

#include <algorithm>
#include <cmath>

#include "icc/errors.hpp"

namespace icc::linalg {

MatrixXd hstack(const std::vector<const MatrixXd*>& blocks) {
  Eigen::Index rows = -1, cols = 0;
  for (const auto* b : blocks) {
    if (b->cols() == 0) continue;
    if (rows >= 0 && b->rows() != rows) throw PreconditionError("hstack: row mismatch");
    rows = b->rows();
    cols += b->cols();
  }
  if (rows < 0) rows = blocks.empty() ? 0 : blocks.front()->rows();
  MatrixXd out(rows, cols);
  Eigen::Index c = 0;
  for (const auto* b : blocks) {
    if (b->cols() == 0) continue;
    out.middleCols(c, b->cols()) = *b;
    c += b->cols();
  }
  return out;
}

MatrixXd ones(Eigen::Index n) { return MatrixXd::Ones(n, 1); }

MatrixXd ols(const MatrixXd& X, const MatrixXd& Y, const std::vector<std::string>& names) {
  if (X.rows() != Y.rows()) throw PreconditionError("ols: row mismatch");
  Eigen::ColPivHouseholderQR<MatrixXd> qr(X);
  qr.setThreshold(1e-10);
  if (qr.rank() < X.cols()) {
    std::string msg = "rank-deficient design; collinear columns:";
    const auto& perm = qr.colsPermutation().indices();
    for (Eigen::Index k = qr.rank(); k < X.cols(); ++k) {
      const int j = perm(k);
      msg += " " + (j < static_cast<int>(names.size()) ? names[j] : "col" + std::to_string(j));
    }
    throw PreconditionError(msg);
  }
  return qr.solve(Y);
}

MatrixXd residualize(const MatrixXd& X, const MatrixXd& Y) {
  if (X.cols() == 0) return Y;
  return Y - X * ols(X, Y);
}

MatrixXd pinv(const MatrixXd& M, double rel_cutoff) {
  if (M.size() == 0) return MatrixXd::Zero(M.cols(), M.rows());
  Eigen::JacobiSVD<MatrixXd> svd(M, Eigen::ComputeThinU | Eigen::ComputeThinV);
  const VectorXd& s = svd.singularValues();
  const double cut = rel_cutoff * (s.size() ? s(0) : 0.0);
  VectorXd inv = VectorXd::Zero(s.size());
  for (Eigen::Index i = 0; i < s.size(); ++i)
    if (s(i) > cut && s(i) > 0) inv(i) = 1.0 / s(i);
  return svd.matrixV() * inv.asDiagonal() * svd.matrixU().transpose();
}

int numerical_rank(const MatrixXd& M, double rel_cutoff) {
  if (M.size() == 0) return 0;
  Eigen::JacobiSVD<MatrixXd> svd(M);
  const VectorXd& s = svd.singularValues();
  if (s(0) <= 0) return 0;
  int r = 0;
  for (Eigen::Index i = 0; i < s.size(); ++i)
    if (s(i) > rel_cutoff * s(0)) ++r;
  return r;
}

MatrixXd complement_basis(const MatrixXd& M, double rel_cutoff) {
  const Eigen::Index d = M.rows();
  if (M.cols() == 0) return MatrixXd::Identity(d, d);
  Eigen::JacobiSVD<MatrixXd> svd(M, Eigen::ComputeFullU);
  const int r = numerical_rank(M, rel_cutoff);
  return svd.matrixU().rightCols(d - r);
}

MatrixXd covariance(const MatrixXd& A, const MatrixXd& B) {
  const double n = static_cast<double>(A.rows());
  MatrixXd a = A.rowwise() - A.colwise().mean();
  MatrixXd b = B.rowwise() - B.colwise().mean();
  return a.transpose() * b / n;
}

VectorXd column_sd(const MatrixXd& M) {
  return covariance(M, M).diagonal().cwiseSqrt();
}

double r_squared(const MatrixXd& X, const VectorXd& y) {
  const VectorXd e = residualize(X, y);
  const double tss = (y.array() - y.mean()).square().sum();
  return 1.0 - e.squaredNorm() / tss;
}

double max_principal_angle(const MatrixXd& A, const MatrixXd& B) {
  Eigen::HouseholderQR<MatrixXd> qa(A), qb(B);
  MatrixXd Qa = qa.householderQ() * MatrixXd::Identity(A.rows(), A.cols());
  MatrixXd Qb = qb.householderQ() * MatrixXd::Identity(B.rows(), B.cols());
  Eigen::JacobiSVD<MatrixXd> svd(Qa.transpose() * Qb);
  const double smin = svd.singularValues().minCoeff();
  return std::acos(std::clamp(smin, -1.0, 1.0));
}

}  // namespace icc::linalg
