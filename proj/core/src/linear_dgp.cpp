#include "icc/linear_dgp.hpp"

#include "icc/errors.hpp"
#include "icc/linalg.hpp"

namespace icc {
namespace {

void shape(MatrixXd& m, int rows, int cols, const char* name) {
  if (m.size() == 0 && (rows == 0 || cols == 0)) {
    m = MatrixXd::Zero(rows, cols);
    return;
  }
  if (m.size() == 0) {
    m = MatrixXd::Zero(rows, cols);
    return;
  }
  if (m.rows() != rows || m.cols() != cols)
    throw PreconditionError(std::string("spec: ") + name + " should be " + std::to_string(rows) +
                            "x" + std::to_string(cols));
}

MatrixXd read_block(const json& j, const char* key, int rows) {
  if (!j.contains(key)) return {};
  return matrix_from_json(j.at(key), rows);
}

}  // namespace

void LinearDGPSpec::validate() {
  if (d_u < 0 || d_z < 1 || d_w < 0 || d_a < 1 || d_x < 0)
    throw PreconditionError("spec: invalid dimensions");
  if (sigma_u.size() == 0) sigma_u = MatrixXd::Identity(d_u, d_u);
  shape(sigma_u, d_u, d_u, "sigma_u");
  shape(gamma_z, d_u, d_z, "gamma_z");
  shape(gamma_w, d_u, d_w, "gamma_w");
  shape(gamma_a, d_u, d_a, "gamma_a");
  shape(gamma_y, d_u, 1, "gamma_y");
  shape(gamma_x, d_u, d_x, "gamma_x");
  shape(zeta, d_z, d_a, "zeta");
  shape(upsilon_a, d_w, d_a, "upsilon_a");
  shape(upsilon_y, d_w, 1, "upsilon_y");
  shape(eta_w, d_x, d_w, "eta_w");
  shape(eta_a, d_x, d_a, "eta_a");
  shape(eta_y, d_x, 1, "eta_y");
  if (beta.size() == 0) beta = VectorXd::Zero(d_a);
  if (beta.size() != d_a) throw PreconditionError("spec: beta should have d_a entries");
  for (double s : {sd_z, sd_w, sd_a, sd_y, sd_x})
    if (!(s >= 0)) throw PreconditionError("spec: noise standard deviations must be >= 0");
}

LinearDGPSpec spec_from_json(const json& j) {
  LinearDGPSpec s;
  try {
    s.d_u = j.at("d_u").get<int>();
    s.d_z = j.at("d_z").get<int>();
    s.d_w = j.at("d_w").get<int>();
    s.d_a = j.value("d_a", 1);
    s.d_x = j.value("d_x", 0);
    s.sigma_u = read_block(j, "sigma_u", s.d_u);
    s.gamma_z = read_block(j, "gamma_z", s.d_u);
    s.gamma_w = read_block(j, "gamma_w", s.d_u);
    s.gamma_a = read_block(j, "gamma_a", s.d_u);
    s.gamma_y = read_block(j, "gamma_y", s.d_u);
    s.gamma_x = read_block(j, "gamma_x", s.d_u);
    s.zeta = read_block(j, "zeta", s.d_z);
    s.upsilon_a = read_block(j, "upsilon_a", s.d_w);
    s.upsilon_y = read_block(j, "upsilon_y", s.d_w);
    s.eta_w = read_block(j, "eta_w", s.d_x);
    s.eta_a = read_block(j, "eta_a", s.d_x);
    s.eta_y = read_block(j, "eta_y", s.d_x);
    if (j.contains("beta")) s.beta = vector_from_json(j.at("beta"));
    s.sd_z = j.value("sd_z", 1.0);
    s.sd_w = j.value("sd_w", 1.0);
    s.sd_a = j.value("sd_a", 1.0);
    s.sd_y = j.value("sd_y", 1.0);
    s.sd_x = j.value("sd_x", 1.0);
  } catch (const nlohmann::json::exception& e) {
    throw PreconditionError(std::string("spec: ") + e.what());
  }
  s.validate();
  return s;
}

json to_json(const LinearDGPSpec& s) {
  return {{"kind", "linear_dgp_spec"},
          {"d_u", s.d_u}, {"d_z", s.d_z}, {"d_w", s.d_w}, {"d_a", s.d_a}, {"d_x", s.d_x},
          {"sigma_u", to_json(s.sigma_u)},
          {"gamma_z", to_json(s.gamma_z)}, {"gamma_w", to_json(s.gamma_w)},
          {"gamma_a", to_json(s.gamma_a)}, {"gamma_y", to_json(s.gamma_y)},
          {"gamma_x", to_json(s.gamma_x)}, {"zeta", to_json(s.zeta)},
          {"upsilon_a", to_json(s.upsilon_a)}, {"upsilon_y", to_json(s.upsilon_y)},
          {"eta_w", to_json(s.eta_w)}, {"eta_a", to_json(s.eta_a)}, {"eta_y", to_json(s.eta_y)},
          {"beta", to_json(s.beta)},
          {"sd_z", s.sd_z}, {"sd_w", s.sd_w}, {"sd_a", s.sd_a}, {"sd_y", s.sd_y}, {"sd_x", s.sd_x}};
}

LinearDGPSpec spec_s1() {
  LinearDGPSpec s;
  s.d_u = 1;
  s.d_z = 3;
  s.d_w = 2;
  s.d_a = 1;
  s.gamma_z = (MatrixXd(1, 3) << 1, 1, 0).finished();
  s.gamma_w = (MatrixXd(1, 2) << 1, 1).finished();
  s.gamma_a = MatrixXd::Constant(1, 1, 1.0);
  s.gamma_y = MatrixXd::Constant(1, 1, 1.0);
  s.zeta = (MatrixXd(3, 1) << 1, 0, 0).finished();
  s.beta = VectorXd::Constant(1, 2.0);
  s.validate();
  return s;
}

LinearDGPSpec spec_sweep() {
  LinearDGPSpec s = spec_s1();
  s.d_w = 3;
  s.gamma_w = (MatrixXd(1, 3) << 1, 1, 1).finished();
  s.upsilon_a = MatrixXd();
  s.upsilon_y = MatrixXd();
  s.validate();
  return s;
}

Dataset sample_linear(const LinearDGPSpec& spec_in, Eigen::Index n, const SeedSpec& seed) {
  LinearDGPSpec spec = spec_in;
  spec.validate();
  Rng rng(seed);
  MatrixXd u(n, spec.d_u);
  if (spec.d_u > 0) {
    Eigen::LLT<MatrixXd> llt(spec.sigma_u);
    if (llt.info() != Eigen::Success) throw NumericalError("sigma_u is not positive definite");
    u = rng.normal_matrix(n, spec.d_u) * MatrixXd(llt.matrixL()).transpose();
  }
  const MatrixXd z = u * spec.gamma_z + spec.sd_z * rng.normal_matrix(n, spec.d_z);
  const MatrixXd x = u * spec.gamma_x + spec.sd_x * rng.normal_matrix(n, spec.d_x);
  const MatrixXd w = u * spec.gamma_w + x * spec.eta_w + spec.sd_w * rng.normal_matrix(n, spec.d_w);
  const MatrixXd a = z * spec.zeta + u * spec.gamma_a + w * spec.upsilon_a + x * spec.eta_a +
                     spec.sd_a * rng.normal_matrix(n, spec.d_a);
  const MatrixXd y = a * spec.beta + u * spec.gamma_y + w * spec.upsilon_y + x * spec.eta_y +
                     spec.sd_y * rng.normal_matrix(n, 1);
  return Dataset(y.col(0), a, z, w, x);
}

PopulationMoments::PopulationMoments(const LinearDGPSpec& spec_in) {
  LinearDGPSpec s = spec_in;
  s.validate();
  // Loadings of each block on the independent primitives (U, e_z, e_x, e_w, e_a, e_y).
  const int p = s.d_u + s.d_z + s.d_x + s.d_w + s.d_a + 1;
  auto prim = [&](int off, int d, double sd) {
    MatrixXd m = MatrixXd::Zero(p, d);
    m.middleRows(off, d) = sd * MatrixXd::Identity(d, d);
    return m;
  };
  int off = 0;
  const MatrixXd lu = prim(off, s.d_u, 1.0);
  off += s.d_u;
  const MatrixXd lz = lu * s.gamma_z + prim(off, s.d_z, s.sd_z);
  off += s.d_z;
  const MatrixXd lx = lu * s.gamma_x + prim(off, s.d_x, s.sd_x);
  off += s.d_x;
  const MatrixXd lw = lu * s.gamma_w + lx * s.eta_w + prim(off, s.d_w, s.sd_w);
  off += s.d_w;
  const MatrixXd la = lz * s.zeta + lu * s.gamma_a + lw * s.upsilon_a + lx * s.eta_a +
                      prim(off, s.d_a, s.sd_a);
  off += s.d_a;
  const MatrixXd ly = la * s.beta + lu * s.gamma_y + lw * s.upsilon_y + lx * s.eta_y +
                      prim(off, 1, s.sd_y);

  MatrixXd sig_e = MatrixXd::Identity(p, p);
  if (s.d_u > 0) sig_e.topLeftCorner(s.d_u, s.d_u) = s.sigma_u;
  const MatrixXd L = linalg::hstack({&lu, &lz, &lx, &lw, &la, &ly});
  cov_ = L.transpose() * sig_e * L;
  const int d[6] = {s.d_u, s.d_z, s.d_x, s.d_w, s.d_a, 1};
  int o = 0;
  for (int k = 0; k < 6; ++k) {
    dims_[k] = d[k];
    offset_[k] = o;
    o += d[k];
  }
}

MatrixXd PopulationMoments::block(Var a, Var b) const {
  const int i = static_cast<int>(a), j = static_cast<int>(b);
  return cov_.block(offset_[i], offset_[j], dims_[i], dims_[j]);
}

MatrixXd PopulationMoments::block_given_x(Var a, Var b) const {
  if (dim(Var::X) == 0) return block(a, b);
  return block(a, b) -
         block(a, Var::X) * block(Var::X, Var::X).ldlt().solve(block(Var::X, b));
}

PopulationMoments implied_covariances(const LinearDGPSpec& spec) { return PopulationMoments(spec); }

MatrixXd factor_zw(const PopulationMoments& m, int r) {
  const MatrixXd szw = m.block_given_x(Var::Z, Var::W);
  if (r < 0 || r > std::min(szw.rows(), szw.cols()))
    throw PreconditionError("factor_zw: rank out of range");
  if (r == 0) return MatrixXd(szw.rows(), 0);
  Eigen::JacobiSVD<MatrixXd> svd(szw, Eigen::ComputeThinU);
  return svd.matrixU().leftCols(r) * svd.singularValues().head(r).asDiagonal();
}

MatrixXd population_orthogonal_transform(const MatrixXd& sigma_z, const MatrixXd& c_z,
                                         const MatrixXd& d_z_dirs) {
  const Eigen::Index dz = sigma_z.rows();
  MatrixXd m = MatrixXd::Identity(dz, dz);
  MatrixXd l(dz, 0);
  if (c_z.cols() > 0) {
    l = sigma_z.ldlt().solve(c_z);
    const MatrixXd g = c_z.transpose() * l;
    if (linalg::numerical_rank(g, 1e-12) < g.rows())
      throw IdentificationError("degenerate control: C_Z' Sigma_Z^-1 C_Z is singular");
    m -= l * g.ldlt().solve(c_z.transpose());
  }
  const MatrixXd d = d_z_dirs.size() ? d_z_dirs : linalg::complement_basis(l);
  if (d.rows() != dz) throw PreconditionError("d_z_dirs must have d_z rows");
  return m * d;
}

VectorXd population_icc_beta(const PopulationMoments& mom, const MatrixXd& c_z,
                             const MatrixXd& d_z_dirs) {
  const MatrixXd sz = mom.block_given_x(Var::Z, Var::Z);
  const MatrixXd md = population_orthogonal_transform(sz, c_z, d_z_dirs);
  const MatrixXd s_az = mom.block_given_x(Var::A, Var::Z) * md;
  const MatrixXd s_zy = md.transpose() * mom.block_given_x(Var::Z, Var::Y);
  const MatrixXd s_zz = md.transpose() * sz * md;
  if (md.cols() == 0) throw IdentificationError("conditional relevance failure: no instrument variation left");
  const MatrixXd w = linalg::pinv(s_zz, 1e-12);
  const MatrixXd g = s_az * w * s_az.transpose();
  const double scale = mom.block_given_x(Var::A, Var::A).trace() / mom.dim(Var::A);
  Eigen::SelfAdjointEigenSolver<MatrixXd> es(g);
  if (es.eigenvalues().minCoeff() < 1e-10 * scale)
    throw IdentificationError("conditional relevance failure: E[A' P A] is singular");
  return g.ldlt().solve(s_az * w * s_zy);
}

LinearDGPSpec random_identified_spec(Rng& rng, int d_u, int d_z, int d_w, int d_a, int d_x) {
  LinearDGPSpec s;
  s.d_u = d_u;
  s.d_z = d_z;
  s.d_w = d_w;
  s.d_a = d_a;
  s.d_x = d_x;
  const MatrixXd b = rng.normal_matrix(d_u, d_u);
  s.sigma_u = b * b.transpose() / std::max(d_u, 1) + MatrixXd::Identity(d_u, d_u);
  s.gamma_z = rng.normal_matrix(d_u, d_z);
  s.gamma_w = rng.normal_matrix(d_u, d_w);
  s.gamma_a = rng.normal_matrix(d_u, d_a);
  s.gamma_y = rng.normal_matrix(d_u, 1);
  s.gamma_x = 0.5 * rng.normal_matrix(d_u, d_x);
  s.zeta = rng.normal_matrix(d_z, d_a);
  s.upsilon_a = 0.5 * rng.normal_matrix(d_w, d_a);
  s.upsilon_y = 0.5 * rng.normal_matrix(d_w, 1);
  s.eta_w = 0.5 * rng.normal_matrix(d_x, d_w);
  s.eta_a = 0.5 * rng.normal_matrix(d_x, d_a);
  s.eta_y = 0.5 * rng.normal_matrix(d_x, 1);
  s.beta = rng.normal_matrix(d_a, 1).col(0);
  auto sd = [&] { return 0.5 + rng.uniform(); };
  s.sd_z = sd();
  s.sd_w = sd();
  s.sd_a = sd();
  s.sd_y = sd();
  s.sd_x = sd();
  s.validate();
  return s;
}

}  // namespace icc
