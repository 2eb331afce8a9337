#include "icc/debias.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "icc/control.hpp"
#include "icc/errors.hpp"
#include "icc/linalg.hpp"

namespace icc {

using discrete::DVar;
using discrete::JointTable;
using discrete::Labeling;

namespace {

VectorXd safe_sqrt(const VectorXd& p) { return p.cwiseMax(0.0).cwiseSqrt(); }
VectorXd safe_inv_sqrt(const VectorXd& p) {
  VectorXd out(p.size());
  for (Eigen::Index i = 0; i < p.size(); ++i) out(i) = p(i) > 0 ? 1.0 / std::sqrt(p(i)) : 0.0;
  return out;
}

// Least squares in L2(row_p), minimum norm in L2(col_p): min |M x - b| then |x|.
VectorXd weighted_min_norm(const MatrixXd& m, const VectorXd& b, const VectorXd& row_p, const VectorXd& col_p) {
  const VectorXd rs = safe_sqrt(row_p), ci = safe_inv_sqrt(col_p);
  const MatrixXd mt = rs.asDiagonal() * m * ci.asDiagonal();
  const VectorXd xt = linalg::pinv(mt, 1e-10) * (rs.asDiagonal() * b);
  return ci.asDiagonal() * xt;
}

double weighted_norm(const VectorXd& f, const VectorXd& p) {
  return std::sqrt((f.array().square() * p.array()).sum());
}

}  // namespace

const char* nuisance_name(Nuisance n) {
  switch (n) {
    case Nuisance::K: return "k";
    case Nuisance::Tau: return "tau";
    case Nuisance::G: return "g";
    case Nuisance::QK: return "q_k";
    case Nuisance::QTau: return "q_tau";
    case Nuisance::AlphaG: return "alpha_g";
  }
  return "?";
}

ExactMomentModel::ExactMomentModel(const JointTable& joint, const VectorXd& pi, ExactOptions opts)
    : joint_(joint), pi_(pi), opts_(std::move(opts)) {
  const int nz = joint_.dim(DVar::Z), nw = joint_.dim(DVar::W), na = joint_.dim(DVar::A);
  if (pi_.size() != na) throw PreconditionError("contrast must have one weight per treatment level");
  if (!opts_.g_y) opts_.g_y = [](double y) { return y; };

  if (opts_.trivial_tau) {
    control_.classes = nz;
    control_.label.resize(nz);
    std::iota(control_.label.begin(), control_.label.end(), 0);
  } else {
    control_ = opts_.control ? *opts_.control : discrete::minimal_discrete_control(joint_);
  }
  if (static_cast<int>(control_.label.size()) != nz) throw PreconditionError("control labeling has wrong length");

  pz_ = joint_.marginal(DVar::Z);
  pw_ = joint_.marginal(DVar::W);
  pa_ = joint_.marginal(DVar::A);
  pzw_ = MatrixXd::Zero(nz, nw);
  pza_ = MatrixXd::Zero(nz, na);
  VectorXd gy = VectorXd::Zero(nz);
  joint_.for_each([&](const discrete::Cell& c, double p) {
    pzw_(c.z, c.w) += p;
    pza_(c.z, c.a) += p;
    gy(c.z) += p * opts_.g_y(joint_.value(DVar::Y, c.y));
  });
  auto row_normalise = [](MatrixXd m) {
    for (Eigen::Index i = 0; i < m.rows(); ++i) {
      const double s = m.row(i).sum();
      if (s > 0) m.row(i) /= s;
    }
    return m;
  };
  ea_z_ = row_normalise(pza_);
  ez_a_ = row_normalise(pza_.transpose());
  ew_z_ = row_normalise(pzw_);
  ez_w_ = row_normalise(pzw_.transpose());
  bt_ = MatrixXd::Zero(nz, control_.classes);
  for (int z = 0; z < nz; ++z) bt_(z, control_.label[z]) = 1.0;
  pt_ = bt_.transpose() * pz_;

  truth_.g = VectorXd::Zero(nz);
  for (int z = 0; z < nz; ++z)
    if (pz_(z) > 0) truth_.g(z) = gy(z) / pz_(z);

  truth_.tau = tau_of(truth_.g);
  diag_.tau_residual = (cond_w_of_z(truth_.tau - truth_.g)).cwiseAbs().maxCoeff();
  diag_.tau_trivial = weighted_norm(truth_.tau - truth_.g, pz_) <= 1e-10 * (1 + weighted_norm(truth_.g, pz_));

  truth_.k = k_of(truth_.tau, truth_.g);
  diag_.k_residual = (cond_z_of_a(truth_.k) - (truth_.g - truth_.tau)).cwiseAbs().maxCoeff();

  // Riesz representer of m0 for E[. | Z] restricted to functions of A.
  const VectorXd alpha = alpha_k();
  const MatrixXd op = ez_a_ * ea_z_;
  const VectorXd xi = weighted_min_norm(op, alpha, pa_, pa_);
  diag_.riesz_residual = (op * xi - alpha).cwiseAbs().maxCoeff();
  if (weighted_norm(op * xi - alpha, pa_) > opts_.range_tol * std::max(weighted_norm(alpha, pa_), 1e-300))
    throw IdentificationError("alpha not in range: strong instrument relevance fails "
                              "(m0 has no representer through E[. | Z])");
  truth_.q_k = cond_z_of_a(xi);

  truth_.q_tau = qtau_of(truth_.q_k);
  diag_.qtau_residual = project_t(cond_z_of_w(truth_.q_tau) - truth_.q_k).cwiseAbs().maxCoeff();
  truth_.alpha_g = alpha_of(truth_.q_k, truth_.q_tau);
}

VectorXd ExactMomentModel::alpha_k() const {
  VectorXd a = VectorXd::Zero(pi_.size());
  for (Eigen::Index i = 0; i < pi_.size(); ++i) {
    if (pi_(i) == 0) continue;
    if (pa_(i) <= 0) throw IdentificationError("positivity failure: contrast weights a level with P(A=a)=0");
    a(i) = pi_(i) / pa_(i);
  }
  return a;
}

VectorXd ExactMomentModel::class_means(const VectorXd& f) const {
  VectorXd s = bt_.transpose() * (pz_.array() * f.array()).matrix();
  for (Eigen::Index t = 0; t < s.size(); ++t) s(t) = pt_(t) > 0 ? s(t) / pt_(t) : 0.0;
  return s;
}

VectorXd ExactMomentModel::project_t(const VectorXd& f) const { return bt_ * class_means(f); }

VectorXd ExactMomentModel::tau_of(const VectorXd& g) const {
  if (opts_.trivial_tau) return g;
  const VectorXd c = weighted_min_norm(ez_w_ * bt_, cond_w_of_z(g), pw_, pt_);
  return bt_ * c;
}

VectorXd ExactMomentModel::k_of(const VectorXd& tau, const VectorXd& g) const {
  return weighted_min_norm(ea_z_, g - tau, pz_, pa_);
}

VectorXd ExactMomentModel::qtau_of(const VectorXd& q_k) const {
  // Pi_T E[E[xi(T) | W] | Z] = Pi_T q_k, solved in class coordinates.
  MatrixXd cm(control_.classes, pz_.size());
  for (Eigen::Index z = 0; z < pz_.size(); ++z) {
    VectorXd e = VectorXd::Zero(pz_.size());
    e(z) = 1.0;
    cm.col(z) = class_means(e);
  }
  const MatrixXd op = cm * ew_z_ * ez_w_ * bt_;
  const VectorXd rhs = class_means(q_k);
  const VectorXd c = weighted_min_norm(op, rhs, pt_, pt_);
  if (weighted_norm(op * c - rhs, pt_) > opts_.range_tol * std::max(weighted_norm(rhs, pt_), 1e-300))
    throw IdentificationError("alpha not in range: strong identification of tau fails "
                              "(q_k has no representer through E[. | W] on the control space)");
  return ez_w_ * bt_ * c;
}

VectorXd ExactMomentModel::alpha_of(const VectorXd& q_k, const VectorXd& q_tau) const {
  return q_k - cond_z_of_w(q_tau);
}

double ExactMomentModel::expected_m3(const NuisanceTables& n) const {
  double acc = m0(n.k);
  joint_.for_each([&](const discrete::Cell& c, double p) {
    const double y = opts_.g_y(joint_.value(DVar::Y, c.y));
    acc += p * (n.q_k(c.z) * (n.g(c.z) - n.tau(c.z) - n.k(c.a)) + n.q_tau(c.w) * (n.tau(c.z) - n.g(c.z)) +
                n.alpha_g(c.z) * (y - n.g(c.z)));
  });
  return acc;
}

double ExactMomentModel::norm_z(const VectorXd& f) const { return weighted_norm(f, pz_); }
double ExactMomentModel::norm_w(const VectorXd& f) const { return weighted_norm(f, pw_); }
double ExactMomentModel::norm_a(const VectorXd& f) const { return weighted_norm(f, pa_); }

ExactMomentModel::Decomposition ExactMomentModel::decompose(const NuisanceTables& n) const {
  const NuisanceTables& t = truth_;
  const VectorXd qtau0 = qtau_of(n.q_k);
  const VectorXd alpha0 = alpha_of(n.q_k, n.q_tau);
  Decomposition d;
  d.lhs = expected_m3(n) - theta0();
  const VectorXd dqk = t.q_k - n.q_k, dk = n.k - t.k;
  const VectorXd dqt = qtau0 - n.q_tau, dtau = t.tau - n.tau;
  const VectorXd dal = alpha0 - n.alpha_g, dg = n.g - t.g;
  d.terms[0] = dqk.dot(pza_ * dk);
  d.terms[1] = dtau.dot(pzw_ * dqt);
  d.terms[2] = (pz_.array() * dal.array() * dg.array()).sum();
  d.bounds[0] = std::min(norm_z(cond_z_of_a(dk)) * norm_z(dqk), norm_a(dk) * norm_a(cond_a_of_z(dqk)));
  d.bounds[1] = std::min(norm_w(cond_w_of_z(dtau)) * norm_w(dqt),
                         norm_z(dtau) * norm_z(project_t(cond_z_of_w(dqt))));
  d.bounds[2] = norm_z(dg) * norm_z(dal);
  return d;
}

double ExactMomentModel::directional_derivative(const NuisanceTables& base, Nuisance which, const VectorXd& dir,
                                                const Tracking& tr, double h) const {
  auto at = [&](double s) {
    NuisanceTables n = base;
    if (which == Nuisance::G) n.g = base.g + s * dir;
    if (which == Nuisance::Tau) n.tau = base.tau + s * dir;
    else if (tr.tau) n.tau = tau_of(n.g);
    if (which == Nuisance::K) n.k = base.k + s * dir;
    else if (tr.k) n.k = k_of(n.tau, n.g);
    if (which == Nuisance::QK) n.q_k = base.q_k + s * dir;
    if (which == Nuisance::QTau) n.q_tau = base.q_tau + s * dir;
    else if (tr.q_tau) n.q_tau = qtau_of(n.q_k);
    if (which == Nuisance::AlphaG) n.alpha_g = base.alpha_g + s * dir;
    else if (tr.alpha) n.alpha_g = alpha_of(n.q_k, n.q_tau);
    return expected_m3(n);
  };
  return (at(h) - at(-h)) / (2 * h);
}

VectorXd ExactMomentModel::random_direction(Nuisance which, Rng& rng) const {
  auto draw = [&](Eigen::Index k) { return rng.normal_matrix(k, 1).col(0).eval(); };
  switch (which) {
    case Nuisance::K: return draw(pa_.size());
    case Nuisance::Tau: return bt_ * draw(control_.classes);
    case Nuisance::QTau: return draw(pw_.size());
    default: return draw(pz_.size());
  }
}

ExactNuisances compute_nuisances_exact(const JointTable& joint, const VectorXd& pi, ExactOptions opts) {
  ExactMomentModel m(joint, pi, std::move(opts));
  return {m.truth(), m.diagnostics(), m.theta0()};
}

DmlResult dml_estimate(const Dataset& data, const Contrast& m0, const DmlOptions& opts, const SeedSpec& seed) {
  const Eigen::Index n = data.n();
  if (opts.folds < 2 || opts.folds > n / 2) throw PreconditionError("dml: folds must be in [2, n/2]");
  if (m0.points.cols() != data.d_a() || m0.points.rows() != m0.weights.size())
    throw PreconditionError("dml: contrast does not match the treatment dimension");
  const auto gy = opts.g_y ? opts.g_y : [](double v) { return v; };
  VectorXd y(n);
  for (Eigen::Index i = 0; i < n; ++i) y(i) = gy(data.y()(i));

  std::vector<Eigen::Index> perm(n);
  std::iota(perm.begin(), perm.end(), 0);
  Rng rng(seed);
  std::shuffle(perm.begin(), perm.end(), rng.engine());
  std::vector<int> fold(n);
  for (Eigen::Index i = 0; i < n; ++i) fold[perm[i]] = static_cast<int>(i % opts.folds);

  const SieveSpec& spec = opts.sieve;
  MatrixXd z_levels, w_levels, a_levels;
  std::vector<int> z_idx, w_idx;
  if (spec.kind == SieveKind::Indicator) {
    z_levels = distinct_rows(data.z());
    w_levels = distinct_rows(data.w());
    a_levels = distinct_rows(data.a());
    z_idx = level_index(z_levels, data.z());
    w_idx = level_index(w_levels, data.w());
    const auto pts = level_index(a_levels, m0.points);
    if (std::any_of(pts.begin(), pts.end(), [](int p) { return p < 0; }))
      throw IdentificationError("positivity failure: a contrast point is not an observed treatment level");
  }

  DmlResult out;
  out.n = n;
  out.folds = opts.folds;
  out.seed = seed;
  VectorXd m3(n);
  for (int k = 0; k < opts.folds; ++k) {
    std::vector<Eigen::Index> train, test;
    for (Eigen::Index i = 0; i < n; ++i) (fold[i] == k ? test : train).push_back(i);
    const Dataset tr = data.rows(train);
    WeightedObs obs{tr.z(), tr.w(), tr.a(), VectorXd(train.size()),
                    VectorXd::Constant(train.size(), 1.0 / train.size())};
    for (std::size_t i = 0; i < train.size(); ++i) obs.y(i) = y(train[i]);

    SieveBases bases;
    int classes = 0;
    if (spec.kind == SieveKind::Indicator) {
      bases.z = indicator_basis(z_levels);
      bases.w = indicator_basis(w_levels);
      bases.a = indicator_basis(a_levels);
      std::vector<int> label(z_levels.rows());
      if (!spec.control_classes.empty()) {
        if (z_levels.cols() != 1) throw PreconditionError("given control classes need a scalar instrument");
        for (Eigen::Index l = 0; l < z_levels.rows(); ++l) {
          auto it = spec.control_classes.find(z_levels(l, 0));
          if (it == spec.control_classes.end()) throw PreconditionError("instrument level without control class");
          label[l] = it->second;
          classes = std::max(classes, it->second + 1);
        }
      } else {
        std::vector<int> zt, wt;
        for (auto i : train) {
          zt.push_back(z_idx[i]);
          wt.push_back(w_idx[i]);
        }
        label = estimate_control_classes(zt, static_cast<int>(z_levels.rows()), wt,
                                         static_cast<int>(w_levels.rows()), spec.merge_alpha, &classes);
      }
      bases.t = class_basis(z_levels, label, classes);
    } else {
      bases.z = polynomial_basis(tr.z(), spec.degree);
      bases.w = polynomial_basis(tr.w(), spec.degree);
      bases.a = polynomial_basis(tr.a(), spec.degree);
      const ControlFunction cf = estimate_control(tr, spec.control_rank);
      bases.t = index_polynomial_basis(cf.z_loadings, tr.z(), spec.degree);
      classes = cf.r;
    }
    out.fold_classes.push_back(classes);
    const SieveNuisances nu = fit_sieve_nuisances(obs, bases, m0, spec.ridge, false);
    const Dataset te = data.rows(test);
    VectorXd yt(test.size());
    for (std::size_t i = 0; i < test.size(); ++i) yt(i) = y(test[i]);
    const VectorXd mk = debiased_moment(nu, te.z(), te.w(), te.a(), yt);
    for (std::size_t i = 0; i < test.size(); ++i) m3(test[i]) = mk(i);
    out.fold_theta.push_back(mk.mean());
  }
  out.theta = std::accumulate(out.fold_theta.begin(), out.fold_theta.end(), 0.0) / opts.folds;
  out.sigma = std::sqrt((m3.array() - out.theta).square().mean());
  out.se = out.sigma / std::sqrt(static_cast<double>(n));
  out.ci_low = out.theta - 1.96 * out.se;
  out.ci_high = out.theta + 1.96 * out.se;
  return out;
}

json to_json(const DmlResult& r) {
  return {{"kind", "dml"}, {"theta", r.theta}, {"sigma", r.sigma}, {"se", r.se},
          {"ci_low", r.ci_low}, {"ci_high", r.ci_high}, {"n", r.n}, {"folds", r.folds},
          {"fold_theta", r.fold_theta}, {"fold_classes", r.fold_classes}, {"seed", to_json(r.seed)}};
}

}  // namespace icc
