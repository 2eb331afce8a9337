#include "icc/discrete.hpp"

#include <cmath>
#include <map>

#include "icc/errors.hpp"
#include "icc/linalg.hpp"

namespace icc::discrete {

using icc::to_json;

namespace {

void check_rows(const MatrixXd& m, const char* name) {
  for (Eigen::Index i = 0; i < m.rows(); ++i) {
    if ((m.row(i).array() < 0).any()) throw PreconditionError(std::string(name) + ": negative probability");
    if (std::abs(m.row(i).sum() - 1.0) > 1e-9)
      throw PreconditionError(std::string(name) + ": row " + std::to_string(i) + " does not sum to one");
  }
}

VectorXd random_pmf(Rng& rng, int k) {
  VectorXd v(k);
  for (int i = 0; i < k; ++i) v(i) = 0.2 + rng.uniform();
  return v / v.sum();
}

}  // namespace

void DiscreteModel::validate() const {
  if (p_u.size() == 0 || p_z_given_u.cols() == 0 || p_w_given_u.cols() == 0 ||
      p_a_given_zuw.cols() == 0 || p_y_given_auw.cols() == 0)
    throw PreconditionError("discrete model: empty support");
  if (p_z_given_u.rows() != n_u() || p_w_given_u.rows() != n_u())
    throw PreconditionError("discrete model: U tables have wrong row count");
  if (p_a_given_zuw.rows() != n_z() * n_u() * n_w() || p_y_given_auw.rows() != n_a() * n_u() * n_w())
    throw PreconditionError("discrete model: A/Y tables have wrong row count");
  if (u_support.size() != n_u() || z_support.size() != n_z() || w_support.size() != n_w() ||
      a_support.size() != n_a() || y_support.size() != n_y())
    throw PreconditionError("discrete model: support sizes do not match tables");
  check_rows(p_u.transpose(), "p_u");
  check_rows(p_z_given_u, "p_z_given_u");
  check_rows(p_w_given_u, "p_w_given_u");
  check_rows(p_a_given_zuw, "p_a_given_zuw");
  check_rows(p_y_given_auw, "p_y_given_auw");
}

json to_json(const DiscreteModel& m) {
  return {{"kind", "discrete_model"},
          {"u_support", to_json(m.u_support)}, {"z_support", to_json(m.z_support)},
          {"w_support", to_json(m.w_support)}, {"a_support", to_json(m.a_support)},
          {"y_support", to_json(m.y_support)}, {"p_u", to_json(m.p_u)},
          {"p_z_given_u", to_json(m.p_z_given_u)}, {"p_w_given_u", to_json(m.p_w_given_u)},
          {"p_a_given_zuw", to_json(m.p_a_given_zuw)}, {"p_y_given_auw", to_json(m.p_y_given_auw)}};
}

DiscreteModel model_from_json(const json& j) {
  DiscreteModel m;
  try {
    m.u_support = vector_from_json(j.at("u_support"));
    m.z_support = vector_from_json(j.at("z_support"));
    m.w_support = vector_from_json(j.at("w_support"));
    m.a_support = vector_from_json(j.at("a_support"));
    m.y_support = vector_from_json(j.at("y_support"));
    m.p_u = vector_from_json(j.at("p_u"));
    m.p_z_given_u = matrix_from_json(j.at("p_z_given_u"));
    m.p_w_given_u = matrix_from_json(j.at("p_w_given_u"));
    m.p_a_given_zuw = matrix_from_json(j.at("p_a_given_zuw"));
    m.p_y_given_auw = matrix_from_json(j.at("p_y_given_auw"));
  } catch (const nlohmann::json::exception& e) {
    throw PreconditionError(std::string("discrete model: ") + e.what());
  }
  m.validate();
  return m;
}

JointTable::JointTable(const DiscreteModel& m) : model_(m) {
  m.validate();
  dims_[0] = m.n_u();
  dims_[1] = m.n_z();
  dims_[2] = m.n_w();
  dims_[3] = m.n_a();
  dims_[4] = m.n_y();
  p_.assign(static_cast<std::size_t>(dims_[0]) * dims_[1] * dims_[2] * dims_[3] * dims_[4], 0.0);
  std::size_t i = 0;
  for (int u = 0; u < dims_[0]; ++u)
    for (int z = 0; z < dims_[1]; ++z)
      for (int w = 0; w < dims_[2]; ++w) {
        const double puzw = m.p_u(u) * m.p_z_given_u(u, z) * m.p_w_given_u(u, w);
        for (int a = 0; a < dims_[3]; ++a) {
          const double pa = puzw * m.p_a_given_zuw(m.a_row(z, u, w), a);
          for (int y = 0; y < dims_[4]; ++y) p_[i++] = pa * m.p_y_given_auw(m.y_row(a, u, w), y);
        }
      }
}

Cell JointTable::cell(std::size_t idx) const {
  Cell c;
  c.y = static_cast<int>(idx % dims_[4]);
  idx /= dims_[4];
  c.a = static_cast<int>(idx % dims_[3]);
  idx /= dims_[3];
  c.w = static_cast<int>(idx % dims_[2]);
  idx /= dims_[2];
  c.z = static_cast<int>(idx % dims_[1]);
  c.u = static_cast<int>(idx / dims_[1]);
  return c;
}

double JointTable::value(DVar v, int level) const {
  switch (v) {
    case DVar::U: return model_.u_support(level);
    case DVar::Z: return model_.z_support(level);
    case DVar::W: return model_.w_support(level);
    case DVar::A: return model_.a_support(level);
    case DVar::Y: return model_.y_support(level);
  }
  return 0;
}

VectorXd JointTable::marginal(DVar v) const {
  VectorXd out = VectorXd::Zero(dim(v));
  for_each([&](const Cell& c, double p) { out(c[v]) += p; });
  return out;
}

MatrixXd JointTable::conditional(DVar of, DVar given) const {
  MatrixXd out = MatrixXd::Zero(dim(given), dim(of));
  for_each([&](const Cell& c, double p) { out(c[given], c[of]) += p; });
  for (Eigen::Index i = 0; i < out.rows(); ++i) {
    const double s = out.row(i).sum();
    if (s > 0) out.row(i) /= s;
  }
  return out;
}

JointTable enumerate_joint(const DiscreteModel& m) { return JointTable(m); }

std::size_t CondTable::index(const Cell& c) const {
  std::size_t idx = 0;
  for (std::size_t k = 0; k < vars.size(); ++k) idx = idx * dims[k] + c[static_cast<DVar>(vars[k])];
  return idx;
}

CondTable cond_expect(const JointTable& j, const std::function<double(const Cell&)>& f, VarSet given) {
  CondTable t;
  t.given = given;
  std::size_t total = 1;
  for (int v = 0; v < 5; ++v)
    if (given & (1u << v)) {
      t.vars.push_back(v);
      t.dims.push_back(j.dim(static_cast<DVar>(v)));
      total *= t.dims.back();
    }
  t.value.assign(total, 0.0);
  t.mass.assign(total, 0.0);
  j.for_each([&](const Cell& c, double p) {
    const std::size_t i = t.index(c);
    t.value[i] += p * f(c);
    t.mass[i] += p;
  });
  for (std::size_t i = 0; i < total; ++i)
    if (t.mass[i] > 0) t.value[i] /= t.mass[i];
  return t;
}

Labeling minimal_discrete_control(const JointTable& j, double tol) {
  const MatrixXd pw = j.conditional(DVar::W, DVar::Z);
  const VectorXd pz = j.marginal(DVar::Z);
  Labeling out;
  out.label.assign(j.dim(DVar::Z), 0);
  std::vector<int> reps;
  for (int z = 0; z < j.dim(DVar::Z); ++z) {
    if (pz(z) <= 0) continue;
    int found = -1;
    for (std::size_t c = 0; c < reps.size(); ++c)
      if ((pw.row(z) - pw.row(reps[c])).cwiseAbs().maxCoeff() <= tol) {
        found = static_cast<int>(c);
        break;
      }
    if (found < 0) {
      found = static_cast<int>(reps.size());
      reps.push_back(z);
    }
    out.label[z] = found;
  }
  out.classes = std::max<int>(1, static_cast<int>(reps.size()));
  return out;
}

CompletenessResult check_completeness(const JointTable& j, DVar of, DVar given, double tol) {
  const MatrixXd cond = j.conditional(of, given);
  const VectorXd p_of = j.marginal(of), p_given = j.marginal(given);
  std::vector<int> rows, cols;
  for (int i = 0; i < p_given.size(); ++i)
    if (p_given(i) > 0) rows.push_back(i);
  for (int k = 0; k < p_of.size(); ++k)
    if (p_of(k) > 0) cols.push_back(k);
  MatrixXd m(rows.size(), cols.size());
  for (std::size_t r = 0; r < rows.size(); ++r)
    for (std::size_t c = 0; c < cols.size(); ++c) m(r, c) = cond(rows[r], cols[c]);
  CompletenessResult out;
  out.required = static_cast<int>(cols.size());
  out.rank = linalg::numerical_rank(m, tol);
  out.complete = out.rank == out.required;
  return out;
}

double conditional_independence_tv(const JointTable& j, DVar target, const Labeling& t) {
  const int nz = j.dim(DVar::Z), nt = t.classes, k = j.dim(target);
  MatrixXd by_z = MatrixXd::Zero(nz, k), by_t = MatrixXd::Zero(nt, k);
  j.for_each([&](const Cell& c, double p) {
    by_z(c.z, c[target]) += p;
    by_t(t.label[c.z], c[target]) += p;
  });
  double worst = 0;
  for (int z = 0; z < nz; ++z) {
    const double mz = by_z.row(z).sum();
    if (mz <= 0) continue;
    const int lt = t.label[z];
    const double mt = by_t.row(lt).sum();
    const double tv = 0.5 * (by_z.row(z) / mz - by_t.row(lt) / mt).cwiseAbs().sum();
    worst = std::max(worst, tv);
  }
  return worst;
}

BridgeResult solve_ls_bridge(const JointTable& j, const Labeling& t, const VectorXd& pi) {
  const int na = j.dim(DVar::A), nz = j.dim(DVar::Z), nt = t.classes;
  if (pi.size() != na) throw PreconditionError("bridge: pi must have one weight per treatment level");
  const MatrixXd pa_z = j.conditional(DVar::A, DVar::Z);
  const VectorXd pz = j.marginal(DVar::Z);
  VectorXd ey = VectorXd::Zero(nz);
  j.for_each([&](const Cell& c, double p) { ey(c.z) += p * j.value(DVar::Y, c.y); });

  MatrixXd pat = MatrixXd::Zero(na, nt);
  j.for_each([&](const Cell& c, double p) { pat(c.a, t.label[c.z]) += p; });
  std::vector<int> col_of(na * nt, -1);
  int unknowns = 0;
  for (int tt = 0; tt < nt; ++tt)
    for (int a = 0; a < na; ++a)
      if (pat(a, tt) > 0) col_of[tt * na + a] = unknowns++;

  std::vector<int> rows;
  for (int z = 0; z < nz; ++z)
    if (pz(z) > 0) rows.push_back(z);
  MatrixXd k = MatrixXd::Zero(rows.size(), unknowns);
  VectorXd rhs(rows.size());
  for (std::size_t r = 0; r < rows.size(); ++r) {
    const int z = rows[r];
    rhs(r) = ey(z) / pz(z);
    for (int a = 0; a < na; ++a) {
      const int col = col_of[t.label[z] * na + a];
      if (col >= 0) k(r, col) = pa_z(z, a);
    }
  }
  BridgeResult out;
  out.rank = linalg::numerical_rank(k, 1e-10);
  if (out.rank < unknowns)
    throw IdentificationError("completeness failure: Z is not complete for (A, T) (rank " +
                              std::to_string(out.rank) + " < " + std::to_string(unknowns) + ")");
  const VectorXd sol = linalg::pinv(k, 1e-10) * rhs;
  out.residual = (k * sol - rhs).cwiseAbs().maxCoeff();
  out.h = MatrixXd::Constant(na, nt, std::numeric_limits<double>::quiet_NaN());
  VectorXd pt = VectorXd::Zero(nt);
  for (int z = 0; z < nz; ++z) pt(t.label[z]) += pz(z);
  for (int tt = 0; tt < nt; ++tt)
    for (int a = 0; a < na; ++a)
      if (col_of[tt * na + a] >= 0) out.h(a, tt) = sol(col_of[tt * na + a]);
  double theta = 0;
  for (int tt = 0; tt < nt; ++tt) {
    if (pt(tt) <= 0) continue;
    for (int a = 0; a < na; ++a) {
      if (pi(a) == 0) continue;
      if (col_of[tt * na + a] < 0)
        throw IdentificationError("positivity failure: P(A=a, T=t) = 0 for a weighted treatment level");
      theta += out.h(a, tt) * pi(a) * pt(tt);
    }
  }
  out.theta = theta;
  return out;
}

double potential_outcome_mean(const DiscreteModel& m, int a) {
  double acc = 0;
  for (int u = 0; u < m.n_u(); ++u)
    for (int w = 0; w < m.n_w(); ++w) {
      const double puw = m.p_u(u) * m.p_w_given_u(u, w);
      acc += puw * m.p_y_given_auw.row(m.y_row(a, u, w)).dot(m.y_support.transpose());
    }
  return acc;
}

double structural_contrast(const DiscreteModel& m, const VectorXd& pi) {
  double acc = 0;
  for (int a = 0; a < m.n_a(); ++a)
    if (pi(a) != 0) acc += pi(a) * potential_outcome_mean(m, a);
  return acc;
}

DeviationResult counterfactual_mean_deviation(const JointTable& j, const Labeling& t) {
  const int na = j.dim(DVar::A), nu = j.dim(DVar::U), nt = t.classes, nz = j.dim(DVar::Z);
  MatrixXd mass_atu = MatrixXd::Zero(na, nt * nu), sum_atu = MatrixXd::Zero(na, nt * nu);
  VectorXd mass_z = VectorXd::Zero(nz), sum_z = VectorXd::Zero(nz);
  VectorXd mass_t = VectorXd::Zero(nt), sum_t = VectorXd::Zero(nt);
  j.for_each([&](const Cell& c, double p) {
    const double y = j.value(DVar::Y, c.y);
    const int tt = t.label[c.z];
    mass_atu(c.a, tt * nu + c.u) += p;
    sum_atu(c.a, tt * nu + c.u) += p * y;
    mass_z(c.z) += p;
    sum_z(c.z) += p * y;
    mass_t(tt) += p;
    sum_t(tt) += p * y;
  });
  const VectorXd mass_tu = mass_atu.colwise().sum().transpose();
  const VectorXd m_tu = (sum_atu.colwise().sum().transpose().array() /
                         mass_tu.array().max(1e-300)).matrix();
  DeviationResult out;
  out.k = VectorXd::Zero(na);
  for (int a = 0; a < na; ++a)
    for (int c = 0; c < nt * nu; ++c) {
      if (mass_tu(c) <= 0) continue;
      if (mass_atu(a, c) <= 0)
        throw IdentificationError("positivity failure: P(A=a, T=t, U=u) = 0");
      out.k(a) += (sum_atu(a, c) / mass_atu(a, c) - m_tu(c)) * mass_tu(c);
    }
  const MatrixXd pa_z = j.conditional(DVar::A, DVar::Z);
  const double ek = j.marginal(DVar::A).dot(out.k);
  out.fredholm_residual = VectorXd::Zero(nz);
  for (int z = 0; z < nz; ++z) {
    if (mass_z(z) <= 0) continue;
    const double target = sum_z(z) / mass_z(z) - sum_t(t.label[z]) / mass_t(t.label[z]);
    out.fredholm_residual(z) = pa_z.row(z).dot(out.k) - ek - target;
  }
  out.max_residual = out.fredholm_residual.cwiseAbs().maxCoeff();
  return out;
}

DiscreteSample sample_discrete(const DiscreteModel& m, std::size_t n, const SeedSpec& seed) {
  m.validate();
  Rng rng(seed);
  auto draw = [&](const auto& row) {
    const double u = rng.uniform();
    double acc = 0;
    const int k = static_cast<int>(row.size());
    for (int i = 0; i < k; ++i) {
      acc += row(i);
      if (u < acc) return i;
    }
    return k - 1;
  };
  DiscreteSample s;
  for (auto* v : {&s.u, &s.z, &s.w, &s.a, &s.y}) v->resize(n);
  for (std::size_t i = 0; i < n; ++i) {
    const int u = draw(m.p_u);
    const int z = draw(m.p_z_given_u.row(u));
    const int w = draw(m.p_w_given_u.row(u));
    const int a = draw(m.p_a_given_zuw.row(m.a_row(z, u, w)));
    const int y = draw(m.p_y_given_auw.row(m.y_row(a, u, w)));
    s.u[i] = u;
    s.z[i] = z;
    s.w[i] = w;
    s.a[i] = a;
    s.y[i] = y;
  }
  return s;
}

Dataset to_dataset(const DiscreteModel& m, const DiscreteSample& s) {
  const auto n = static_cast<Eigen::Index>(s.size());
  VectorXd y(n);
  MatrixXd a(n, 1), z(n, 1), w(n, 1);
  for (Eigen::Index i = 0; i < n; ++i) {
    y(i) = m.y_support(s.y[i]);
    a(i, 0) = m.a_support(s.a[i]);
    z(i, 0) = m.z_support(s.z[i]);
    w(i, 0) = m.w_support(s.w[i]);
  }
  return Dataset(y, a, z, w);
}

Labeling generator_groups(const GeneratorConfig& cfg) {
  Labeling l;
  l.classes = cfg.n_groups;
  for (int g = 0; g < cfg.n_groups; ++g)
    for (int s = 0; s < cfg.n_within; ++s) l.label.push_back(g);
  return l;
}

DiscreteModel random_model(Rng& rng, const GeneratorConfig& cfg) {
  const int nu = cfg.n_u1 * cfg.n_eta, nz = cfg.n_groups * cfg.n_within;
  const int nw = cfg.n_w, na = cfg.n_a;
  DiscreteModel m;
  m.u_support = VectorXd::LinSpaced(nu, 0, nu - 1);
  m.z_support = VectorXd::LinSpaced(nz, 0, nz - 1);
  m.w_support = VectorXd::LinSpaced(nw, 0, nw - 1);
  m.a_support = VectorXd::LinSpaced(na, 0, na - 1);

  const VectorXd p_u1 = random_pmf(rng, cfg.n_u1), p_eta = random_pmf(rng, cfg.n_eta);
  m.p_u.resize(nu);
  for (int u1 = 0; u1 < cfg.n_u1; ++u1)
    for (int e = 0; e < cfg.n_eta; ++e) m.p_u(u1 * cfg.n_eta + e) = p_u1(u1) * p_eta(e);

  MatrixXd p_g(cfg.n_u1, cfg.n_groups);
  for (int u1 = 0; u1 < cfg.n_u1; ++u1) p_g.row(u1) = random_pmf(rng, cfg.n_groups).transpose();
  const VectorXd p_s = random_pmf(rng, cfg.n_within);
  m.p_z_given_u.resize(nu, nz);
  for (int u = 0; u < nu; ++u)
    for (int g = 0; g < cfg.n_groups; ++g)
      for (int s = 0; s < cfg.n_within; ++s)
        m.p_z_given_u(u, g * cfg.n_within + s) = p_g(u / cfg.n_eta, g) * p_s(s);

  m.p_w_given_u.resize(nu, nw);
  for (int u = 0; u < nu; ++u) m.p_w_given_u.row(u) = random_pmf(rng, nw).transpose();

  m.p_a_given_zuw.resize(nz * nu * nw, na);
  if (cfg.treatment_independent_of_control) {
    MatrixXd tab(cfg.n_within * cfg.n_eta, na);
    for (Eigen::Index r = 0; r < tab.rows(); ++r) tab.row(r) = random_pmf(rng, na).transpose();
    for (int z = 0; z < nz; ++z)
      for (int u = 0; u < nu; ++u)
        for (int w = 0; w < nw; ++w)
          m.p_a_given_zuw.row(m.a_row(z, u, w)) = tab.row((z % cfg.n_within) * cfg.n_eta + u % cfg.n_eta);
  } else {
    for (Eigen::Index r = 0; r < m.p_a_given_zuw.rows(); ++r)
      m.p_a_given_zuw.row(r) = random_pmf(rng, na).transpose();
  }

  const int nyrow = na * nu * nw;
  if (cfg.separable) {
    VectorXd k0(na), e(nu * nw);
    for (int a = 0; a < na; ++a) k0(a) = 2.0 * rng.normal();
    for (int u = 0; u < nu; ++u) {
      const double eu = rng.normal();
      for (int w = 0; w < nw; ++w) e(u * nw + w) = eu + (cfg.y_depends_on_w ? rng.normal() : 0.0);
    }
    m.y_support.resize(nyrow * 2);
    m.p_y_given_auw = MatrixXd::Zero(nyrow, nyrow * 2);
    for (int a = 0; a < na; ++a)
      for (int u = 0; u < nu; ++u)
        for (int w = 0; w < nw; ++w) {
          const int row = m.y_row(a, u, w);
          const double mu = k0(a) + e(u * nw + w);
          m.y_support(2 * row) = mu - cfg.noise;
          m.y_support(2 * row + 1) = mu + cfg.noise;
          m.p_y_given_auw(row, 2 * row) = 0.5;
          m.p_y_given_auw(row, 2 * row + 1) = 0.5;
        }
  } else {
    const int ny = 4;
    m.y_support = VectorXd::LinSpaced(ny, -1.5, 1.5);
    m.p_y_given_auw.resize(nyrow, ny);
    for (int r = 0; r < nyrow; ++r) m.p_y_given_auw.row(r) = random_pmf(rng, ny).transpose();
  }
  m.validate();
  return m;
}

}  // namespace icc::discrete
