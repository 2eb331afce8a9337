#include "icc/sieve.hpp"

#include <algorithm>
#include <cmath>

#include <boost/math/distributions/chi_squared.hpp>

#include "icc/errors.hpp"
#include "icc/linalg.hpp"

namespace icc {
namespace {

bool row_less(const MatrixXd& x, Eigen::Index i, Eigen::Index j) {
  for (Eigen::Index c = 0; c < x.cols(); ++c) {
    if (x(i, c) < x(j, c)) return true;
    if (x(i, c) > x(j, c)) return false;
  }
  return false;
}

// Position of each row of x among `levels` (exact match), -1 if absent.
std::vector<int> match_levels(const MatrixXd& levels, const MatrixXd& x) {
  std::vector<int> out(x.rows(), -1);
  for (Eigen::Index i = 0; i < x.rows(); ++i) {
    Eigen::Index lo = 0, hi = levels.rows();
    while (lo < hi) {
      const Eigen::Index mid = (lo + hi) / 2;
      bool less = false, greater = false;
      for (Eigen::Index c = 0; c < x.cols(); ++c) {
        if (levels(mid, c) < x(i, c)) { less = true; break; }
        if (levels(mid, c) > x(i, c)) { greater = true; break; }
      }
      if (less) lo = mid + 1;
      else if (greater) hi = mid;
      else { out[i] = static_cast<int>(mid); break; }
    }
  }
  return out;
}

std::vector<std::vector<int>> monomials(int vars, int degree) {
  std::vector<std::vector<int>> out{std::vector<int>(vars, 0)};
  for (int d = 1; d <= degree; ++d) {
    std::vector<int> e(vars, 0);
    std::function<void(int, int)> rec = [&](int pos, int left) {
      if (pos == vars - 1) {
        e[pos] = left;
        out.push_back(e);
        return;
      }
      for (int k = left; k >= 0; --k) {
        e[pos] = k;
        rec(pos + 1, left - k);
      }
    };
    if (vars > 0) rec(0, d);
  }
  return out;
}

// Whitening for the metric G = Phi' D Phi, dropping null directions.
MatrixXd whitener(const MatrixXd& g) {
  Eigen::SelfAdjointEigenSolver<MatrixXd> es(g);
  const VectorXd& s = es.eigenvalues();
  const double smax = s.size() ? s.maxCoeff() : 0.0;
  std::vector<Eigen::Index> keep;
  for (Eigen::Index i = 0; i < s.size(); ++i)
    if (s(i) > 1e-12 * smax && s(i) > 0) keep.push_back(i);
  MatrixXd w(g.rows(), keep.size());
  for (std::size_t k = 0; k < keep.size(); ++k)
    w.col(k) = es.eigenvectors().col(keep[k]) / std::sqrt(s(keep[k]));
  return w;
}

struct Weighted {
  const VectorXd& d;
  double dot(const VectorXd& a, const VectorXd& b) const { return (a.array() * b.array() * d.array()).sum(); }
  double norm(const VectorXd& a) const { return std::sqrt(dot(a, a)); }
  MatrixXd gram(const MatrixXd& a, const MatrixXd& b) const { return a.transpose() * d.asDiagonal() * b; }
};

// Projection coefficients of the columns of M on span(phi).
MatrixXd project_coef(const Weighted& wt, const MatrixXd& phi, const MatrixXd& m) {
  return linalg::pinv(wt.gram(phi, phi), 1e-12) * wt.gram(phi, m);
}

// Solves H c = r in the whitened metric: minimum-norm (exact) or ridge.
VectorXd metric_solve(const MatrixXd& h, const VectorXd& r, const MatrixXd& wh, double ridge,
                      bool exact, double* rel_resid) {
  const MatrixXd ht = wh.transpose() * h * wh;
  const VectorXd rt = wh.transpose() * r;
  VectorXd ct;
  if (ht.size() == 0) {
    ct = VectorXd::Zero(0);
  } else if (exact) {
    ct = linalg::pinv(ht, 1e-10) * rt;
  } else {
    const double lam = ridge * std::max(ht.trace(), 1e-300) / static_cast<double>(ht.rows());
    ct = (ht + lam * MatrixXd::Identity(ht.rows(), ht.cols())).ldlt().solve(rt);
  }
  if (rel_resid) {
    const double denom = std::max(rt.norm(), 1e-300);
    *rel_resid = rt.size() ? (ht * ct - rt).norm() / denom : 0.0;
  }
  return wh * ct;
}

}  // namespace

std::vector<int> level_index(const MatrixXd& levels, const MatrixXd& x) { return match_levels(levels, x); }

Contrast Contrast::difference(double a0, double a1) {
  Contrast c;
  c.points = (MatrixXd(2, 1) << a0, a1).finished();
  c.weights = (VectorXd(2) << -1.0, 1.0).finished();
  return c;
}

MatrixXd distinct_rows(const MatrixXd& x) {
  std::vector<Eigen::Index> idx(x.rows());
  for (Eigen::Index i = 0; i < x.rows(); ++i) idx[i] = i;
  std::sort(idx.begin(), idx.end(), [&](Eigen::Index a, Eigen::Index b) { return row_less(x, a, b); });
  std::vector<Eigen::Index> keep;
  for (std::size_t k = 0; k < idx.size(); ++k)
    if (k == 0 || row_less(x, idx[k - 1], idx[k])) keep.push_back(idx[k]);
  MatrixXd out(keep.size(), x.cols());
  for (std::size_t k = 0; k < keep.size(); ++k) out.row(k) = x.row(keep[k]);
  return out;
}

Basis indicator_basis(const MatrixXd& levels) {
  Basis b;
  b.dim = static_cast<int>(levels.rows());
  b.eval = [levels](const MatrixXd& x) {
    const auto pos = match_levels(levels, x);
    MatrixXd out = MatrixXd::Zero(x.rows(), levels.rows());
    for (Eigen::Index i = 0; i < x.rows(); ++i)
      if (pos[i] >= 0) out(i, pos[i]) = 1.0;
    return out;
  };
  return b;
}

Basis class_basis(const MatrixXd& levels, const std::vector<int>& label, int classes) {
  if (static_cast<Eigen::Index>(label.size()) != levels.rows())
    throw PreconditionError("class_basis: one label per level required");
  Basis b;
  b.dim = classes;
  b.eval = [levels, label, classes](const MatrixXd& x) {
    const auto pos = match_levels(levels, x);
    MatrixXd out = MatrixXd::Zero(x.rows(), classes);
    for (Eigen::Index i = 0; i < x.rows(); ++i)
      if (pos[i] >= 0) out(i, label[pos[i]]) = 1.0;
    return out;
  };
  return b;
}

Basis polynomial_basis(const MatrixXd& train, int degree) {
  const VectorXd mean = train.colwise().mean().transpose();
  VectorXd sd = linalg::column_sd(train);
  for (Eigen::Index j = 0; j < sd.size(); ++j)
    if (sd(j) <= 0) sd(j) = 1.0;
  const auto mono = monomials(static_cast<int>(train.cols()), degree);
  Basis b;
  b.dim = static_cast<int>(mono.size());
  b.eval = [mean, sd, mono](const MatrixXd& x) {
    const MatrixXd s = (x.rowwise() - mean.transpose()).array().rowwise() / sd.transpose().array();
    MatrixXd out = MatrixXd::Ones(x.rows(), mono.size());
    for (std::size_t k = 0; k < mono.size(); ++k)
      for (std::size_t v = 0; v < mono[k].size(); ++v)
        for (int p = 0; p < mono[k][v]; ++p) out.col(k).array() *= s.col(v).array();
    return out;
  };
  return b;
}

Basis index_polynomial_basis(const MatrixXd& loadings, const MatrixXd& train, int degree) {
  if (loadings.cols() == 0) {
    Basis b;
    b.dim = 1;
    b.eval = [](const MatrixXd& x) { return MatrixXd::Ones(x.rows(), 1); };
    return b;
  }
  const Basis inner = polynomial_basis(train * loadings, degree);
  Basis b;
  b.dim = inner.dim;
  b.eval = [inner, loadings](const MatrixXd& x) { return inner.eval(x * loadings); };
  return b;
}

SieveNuisances fit_sieve_nuisances(const WeightedObs& obs, const SieveBases& bases, const Contrast& m0,
                                   double ridge, bool exact) {
  const Weighted wt{obs.weight};
  const MatrixXd pz = bases.z.eval(obs.z), pt = bases.t.eval(obs.z);
  const MatrixXd pw = bases.w.eval(obs.w), pa = bases.a.eval(obs.a);
  const MatrixXd wh_t = whitener(wt.gram(pt, pt));
  const MatrixXd wh_a = whitener(wt.gram(pa, pa));

  auto proj_z = [&](const MatrixXd& m) { return MatrixXd(pz * project_coef(wt, pz, m)); };
  auto proj_w = [&](const MatrixXd& m) { return MatrixXd(pw * project_coef(wt, pw, m)); };

  SieveNuisances out;
  out.g = {bases.z, project_coef(wt, pz, obs.y).col(0)};
  const VectorXd g = pz * out.g.coef;

  // tau: E[tau | W] = E[g | W] with tau in the control space.
  const MatrixXd wpt = proj_w(pt);
  const VectorXd wg = proj_w(g);
  VectorXd c_tau = metric_solve(wt.gram(wpt, wpt), wt.gram(wpt, wg), wh_t, ridge, exact, nullptr);
  out.tau = {bases.t, c_tau};
  const VectorXd tau = pt * c_tau;
  out.tau_residual = wt.norm(wpt * c_tau - wg) / std::max(wt.norm(wg), 1e-300);

  // k: E[k(A) | Z] = g - tau.
  const MatrixXd zpa = proj_z(pa);
  const VectorXd target = g - tau;
  const VectorXd c_k = metric_solve(wt.gram(zpa, zpa), wt.gram(zpa, target), wh_a, ridge, exact, nullptr);
  out.k = {bases.a, c_k};
  out.k_residual = wt.norm(zpa * c_k - target) / std::max(wt.norm(g), 1e-300);

  const VectorXd m0_phi = bases.a.eval(m0.points).transpose() * m0.weights;
  out.m0_k = m0_phi.dot(c_k);

  // xi_k: Riesz representer of m0 under E[. | Z]; q_k = E[xi_k | Z].
  const VectorXd c_xi = metric_solve(wt.gram(zpa, zpa), m0_phi, wh_a, ridge, exact, &out.riesz_residual);
  const VectorXd qk = zpa * c_xi;
  out.q_k = {bases.z, project_coef(wt, pz, qk).col(0)};

  // xi_tau in the control space; q_tau = E[xi_tau | W].
  const VectorXd c_xt = metric_solve(wt.gram(wpt, wpt), wt.gram(pt, qk), wh_t, ridge, exact, &out.qtau_residual);
  const VectorXd qt = wpt * c_xt;
  out.q_tau = {bases.w, project_coef(wt, pw, qt).col(0)};

  out.alpha_g = {bases.z, project_coef(wt, pz, qk - qt).col(0)};
  return out;
}

VectorXd debiased_moment(const SieveNuisances& n, const MatrixXd& z, const MatrixXd& w, const MatrixXd& a,
                         const VectorXd& y) {
  const VectorXd g = n.g(z), tau = n.tau(z), k = n.k(a);
  const VectorXd qk = n.q_k(z), qt = n.q_tau(w), al = n.alpha_g(z);
  return (n.m0_k + qk.array() * (g - tau - k).array() + qt.array() * (tau - g).array() +
          al.array() * (y - g).array()).matrix();
}

std::vector<int> estimate_control_classes(const std::vector<int>& z_level, int n_z,
                                          const std::vector<int>& w_level, int n_w, double alpha,
                                          int* classes_out) {
  // counts[c][w] for current clusters
  std::vector<std::vector<double>> counts(n_z, std::vector<double>(n_w, 0.0));
  for (std::size_t i = 0; i < z_level.size(); ++i) counts[z_level[i]][w_level[i]] += 1.0;
  std::vector<int> owner(n_z);
  std::vector<bool> alive(n_z, true);
  for (int z = 0; z < n_z; ++z) {
    owner[z] = z;
    double tot = 0;
    for (double c : counts[z]) tot += c;
    if (tot == 0) alive[z] = false;
  }
  auto homogeneity_p = [&](int a, int b) {
    double ta = 0, tb = 0;
    for (int w = 0; w < n_w; ++w) {
      ta += counts[a][w];
      tb += counts[b][w];
    }
    double stat = 0;
    int df = -1;
    for (int w = 0; w < n_w; ++w) {
      const double col = counts[a][w] + counts[b][w];
      if (col == 0) continue;
      ++df;
      const double ea = ta * col / (ta + tb), eb = tb * col / (ta + tb);
      stat += (counts[a][w] - ea) * (counts[a][w] - ea) / ea + (counts[b][w] - eb) * (counts[b][w] - eb) / eb;
    }
    if (df <= 0) return 1.0;
    return boost::math::cdf(boost::math::complement(boost::math::chi_squared(df), stat));
  };
  while (true) {
    double best = -1;
    int ba = -1, bb = -1;
    for (int a = 0; a < n_z; ++a) {
      if (!alive[a]) continue;
      for (int b = a + 1; b < n_z; ++b) {
        if (!alive[b]) continue;
        const double p = homogeneity_p(a, b);
        if (p > best) {
          best = p;
          ba = a;
          bb = b;
        }
      }
    }
    if (ba < 0 || best <= alpha) break;
    for (int w = 0; w < n_w; ++w) counts[ba][w] += counts[bb][w];
    alive[bb] = false;
    for (int z = 0; z < n_z; ++z)
      if (owner[z] == bb) owner[z] = ba;
  }
  std::vector<int> relabel(n_z, -1), out(n_z, 0);
  int next = 0;
  for (int z = 0; z < n_z; ++z) {
    const int o = owner[z];
    if (!alive[o]) continue;
    if (relabel[o] < 0) relabel[o] = next++;
    out[z] = relabel[o];
  }
  if (next == 0) next = 1;
  if (classes_out) *classes_out = next;
  return out;
}

}  // namespace icc
