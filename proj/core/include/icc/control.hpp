#pragma once

#include <Eigen/Dense>

#include "icc/data.hpp"
#include "icc/report.hpp"

namespace icc {

// Z-block of the regression of W on (1, Z, X).  The decomposition is taken on
// the coefficient expressed in whitened instruments (Z R^-1 has identity
// covariance after partialling out (1, X)), so the estimated control does not
// change when Z is rescaled or rotated.
struct GammaTilde {
  MatrixXd coef;            // d_z x d_w, original Z units
  MatrixXd x_coef;          // d_x x d_w
  VectorXd intercept;       // d_w
  MatrixXd z_root;          // upper Cholesky factor R of the partialled Z covariance
  MatrixXd p0;              // left singular vectors (whitened metric)
  VectorXd singular_values; // descending
  MatrixXd q0;              // right singular vectors
  MatrixXd standardized() const { return z_root * coef; }
  // Maps a whitened-metric coefficient back to original Z units.
  MatrixXd to_original(const MatrixXd& c) const;
};

GammaTilde fit_gamma_tilde(const Dataset& data);
GammaTilde fit_gamma_tilde(const MatrixXd& z, const MatrixXd& w, const MatrixXd& x);

// T = Z z_loadings + X x_loadings.
struct ControlFunction {
  int r = 0;
  MatrixXd z_loadings;      // d_z x r
  MatrixXd x_loadings;      // d_x x r
  MatrixXd values;          // n x r
  VectorXd singular_values; // all singular values of the standardised coefficient
  MatrixXd compute(const MatrixXd& z, const MatrixXd& x) const;
};

ControlFunction estimate_control(const Dataset& data, int r, bool include_x = false);
ControlFunction control_from_gamma(const GammaTilde& g, const MatrixXd& z, const MatrixXd& x,
                                   int r, bool include_x = false);
json to_json(const ControlFunction& cf);

// Instruments with the control-correlated part removed: values = Z M D has
// zero sample covariance with every column of T.
struct OrthogonalizedInstruments {
  MatrixXd values;     // n x (d_z - r)
  MatrixXd transform;  // d_z x (d_z - r), equals M D
};

OrthogonalizedInstruments orthogonalize_instruments(const Dataset& data, const ControlFunction& cf,
                                                    const MatrixXd& d_z_dirs = {});

}  // namespace icc
