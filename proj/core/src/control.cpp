#include "icc/control.hpp"

#include "icc/errors.hpp"
#include "icc/linalg.hpp"
#include "icc/linear_dgp.hpp"

namespace icc {

GammaTilde fit_gamma_tilde(const MatrixXd& z, const MatrixXd& w, const MatrixXd& x) {
  if (w.cols() == 0) throw PreconditionError("no proxies: the control needs at least one W column");
  const Eigen::Index n = z.rows();
  const MatrixXd one = linalg::ones(n);
  const MatrixXd design = linalg::hstack({&one, &z, &x});
  const MatrixXd b = linalg::ols(design, w);
  GammaTilde g;
  g.intercept = b.row(0).transpose();
  g.coef = b.middleRows(1, z.cols());
  g.x_coef = b.bottomRows(x.cols());
  const MatrixXd ox = linalg::hstack({&one, &x});
  const MatrixXd zr = linalg::residualize(ox, z);
  Eigen::LLT<MatrixXd> llt(zr.transpose() * zr / static_cast<double>(n));
  if (llt.info() != Eigen::Success) throw PreconditionError("instrument covariance is singular");
  g.z_root = llt.matrixU();
  Eigen::JacobiSVD<MatrixXd> svd(g.standardized(), Eigen::ComputeFullU | Eigen::ComputeFullV);
  g.p0 = svd.matrixU();
  g.singular_values = svd.singularValues();
  g.q0 = svd.matrixV();
  return g;
}

MatrixXd GammaTilde::to_original(const MatrixXd& c) const {
  return z_root.triangularView<Eigen::Upper>().solve(c);
}

GammaTilde fit_gamma_tilde(const Dataset& d) { return fit_gamma_tilde(d.z(), d.w(), d.x()); }

MatrixXd ControlFunction::compute(const MatrixXd& z, const MatrixXd& x) const {
  MatrixXd t = z * z_loadings;
  if (x_loadings.size() && x.cols() == x_loadings.rows()) t += x * x_loadings;
  return t;
}

ControlFunction control_from_gamma(const GammaTilde& g, const MatrixXd& z, const MatrixXd& x, int r,
                                   bool include_x) {
  const int rmax = static_cast<int>(std::min(g.coef.rows(), g.coef.cols()));
  if (r < 0 || r > rmax)
    throw PreconditionError("control rank r=" + std::to_string(r) + " outside [0, min(d_z, d_w)=" +
                            std::to_string(rmax) + "]");
  ControlFunction cf;
  cf.r = r;
  cf.singular_values = g.singular_values;
  cf.z_loadings = g.to_original(g.p0.leftCols(r) * g.singular_values.head(r).asDiagonal());
  if (include_x && g.x_coef.rows() > 0) {
    // Project X's proxy loadings on the same right singular directions.
    cf.x_loadings = g.x_coef * g.q0.leftCols(r);
  } else {
    cf.x_loadings = MatrixXd::Zero(x.cols(), r);
  }
  cf.values = cf.compute(z, x);
  return cf;
}

ControlFunction estimate_control(const Dataset& d, int r, bool include_x) {
  return control_from_gamma(fit_gamma_tilde(d), d.z(), d.x(), r, include_x);
}

json to_json(const ControlFunction& cf) {
  return {{"kind", "control_function"},
          {"r", cf.r},
          {"z_loadings", to_json(cf.z_loadings)},
          {"x_loadings", to_json(cf.x_loadings)},
          {"singular_values", to_json(cf.singular_values)}};
}

OrthogonalizedInstruments orthogonalize_instruments(const Dataset& d, const ControlFunction& cf,
                                                    const MatrixXd& d_z_dirs) {
  const MatrixXd sz = linalg::covariance(d.z(), d.z());
  const MatrixXd c = linalg::covariance(d.z(), cf.values);
  OrthogonalizedInstruments out;
  out.transform = population_orthogonal_transform(sz, c, d_z_dirs);
  out.values = d.z() * out.transform;
  return out;
}

}  // namespace icc
