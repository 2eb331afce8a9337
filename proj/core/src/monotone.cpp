#include "icc/monotone.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "icc/errors.hpp"
#include "icc/linalg.hpp"

namespace icc {

namespace {

using Index = Eigen::Index;

void kd_split(const MatrixXd& zs, std::vector<Index>& idx, std::size_t lo, std::size_t hi, std::size_t target,
              std::vector<int>& cell, int& next) {
  const std::size_t size = hi - lo;
  if (size < 2 * target || zs.cols() == 0) {
    for (std::size_t i = lo; i < hi; ++i) cell[idx[i]] = next;
    ++next;
    return;
  }
  Index best = 0;
  double best_range = -1;
  for (Index c = 0; c < zs.cols(); ++c) {
    double mn = zs(idx[lo], c), mx = mn;
    for (std::size_t i = lo; i < hi; ++i) {
      mn = std::min(mn, zs(idx[i], c));
      mx = std::max(mx, zs(idx[i], c));
    }
    if (mx - mn > best_range) {
      best_range = mx - mn;
      best = c;
    }
  }
  std::sort(idx.begin() + lo, idx.begin() + hi, [&](Index a, Index b) {
    return zs(a, best) < zs(b, best) || (zs(a, best) == zs(b, best) && a < b);
  });
  const std::size_t mid = lo + size / 2;
  kd_split(zs, idx, lo, mid, target, cell, next);
  kd_split(zs, idx, mid, hi, target, cell, next);
}

// Midranks of key over the members, scaled to (0, 1).
void midrank(const std::vector<Index>& members, const VectorXd& key, VectorXd& v) {
  std::vector<Index> order = members;
  std::sort(order.begin(), order.end(),
            [&](Index a, Index b) { return key(a) < key(b) || (key(a) == key(b) && a < b); });
  const double m = static_cast<double>(order.size());
  std::size_t i = 0;
  while (i < order.size()) {
    std::size_t j = i;
    while (j + 1 < order.size() && key(order[j + 1]) == key(order[i])) ++j;
    const double rank = 0.5 * static_cast<double>(i + j) + 1.0;
    for (std::size_t k = i; k <= j; ++k) v(order[k]) = (rank - 0.5) / m;
    i = j + 1;
  }
}

// Residuals of y on (1, x) over the members; returns the residual sum of squares.
double local_residuals(const std::vector<Index>& members, const MatrixXd& x, const VectorXd& y, VectorXd& out) {
  const Index m = static_cast<Index>(members.size());
  MatrixXd d(m, x.cols() + 1);
  VectorXd t(m);
  for (Index i = 0; i < m; ++i) {
    d(i, 0) = 1.0;
    d.row(i).tail(x.cols()) = x.row(members[i]);
    t(i) = y(members[i]);
  }
  const VectorXd r = t - d * d.completeOrthogonalDecomposition().solve(t);
  for (Index i = 0; i < m; ++i) out(members[i]) = r(i);
  return r.squaredNorm();
}

std::vector<double> quantile_cuts(const VectorXd& x, int g) {
  std::vector<double> s(x.data(), x.data() + x.size());
  std::sort(s.begin(), s.end());
  std::vector<double> cuts;
  for (int k = 1; k < g; ++k) cuts.push_back(s[static_cast<std::size_t>(k) * s.size() / g]);
  return cuts;
}

// Cell id on a g^D quantile grid over the columns of m.
std::vector<int> grid_cells(const MatrixXd& m, int g) {
  std::vector<int> cell(m.rows(), 0);
  for (Index c = 0; c < m.cols(); ++c) {
    const auto cuts = quantile_cuts(m.col(c), g);
    for (Index i = 0; i < m.rows(); ++i) {
      const int k = static_cast<int>(std::upper_bound(cuts.begin(), cuts.end(), m(i, c)) - cuts.begin());
      cell[i] = cell[i] * g + k;
    }
  }
  return cell;
}

MatrixXd vt_matrix(const MonotoneControl& mc) {
  MatrixXd m(mc.v.size(), 1 + mc.t.cols());
  m.col(0) = mc.v;
  m.rightCols(mc.t.cols()) = mc.t;
  return m;
}

int ipow(int b, Index e) {
  int r = 1;
  for (Index i = 0; i < e; ++i) r *= b;
  return r;
}

void require_scalar(const Dataset& data) {
  if (data.d_a() != 1) throw PreconditionError("monotone path needs a scalar treatment");
}

struct CellFit {
  double theta = 0;
  double dropped = 0;
  int cells = 0;
};

// Row of the within-cell design: [1, a, s, a*s] with s = (v, t).
void design_row(double a, const MatrixXd& vt, Index i, bool interacted, Eigen::Ref<Eigen::RowVectorXd, 0, Eigen::InnerStride<>> row) {
  row(0) = 1.0;
  row(1) = a;
  if (!interacted) return;
  const Index d = vt.cols();
  for (Index k = 0; k < d; ++k) {
    row(2 + k) = vt(i, k);
    row(2 + d + k) = a * vt(i, k);
  }
}

CellFit fit_cells(const VectorXd& y, const VectorXd& a, const MonotoneControl& mc, const Contrast& pi,
                  int cells_per_dim, int min_cell, bool interacted) {
  const Index n = y.size();
  const MatrixXd vt = vt_matrix(mc);
  const int g = cells_per_dim > 0 ? cells_per_dim : static_cast<int>(std::ceil(std::cbrt(static_cast<double>(n))));
  const auto cell = grid_cells(vt, g);
  std::vector<std::vector<Index>> members(ipow(g, vt.cols()));
  for (Index i = 0; i < n; ++i) members[cell[i]].push_back(i);
  const double var_a = (a.array() - a.mean()).square().mean();
  const Index full = 2 + 2 * vt.cols();
  CellFit out;
  double kept = 0, acc = 0;
  for (const auto& m : members) {
    if (m.empty()) continue;
    const Index size = static_cast<Index>(m.size());
    const double w = static_cast<double>(size) / static_cast<double>(n);
    double abar = 0;
    for (Index i : m) abar += a(i);
    abar /= static_cast<double>(size);
    double saa = 0;
    for (Index i : m) saa += (a(i) - abar) * (a(i) - abar);
    if (size < min_cell || saa <= 1e-12 * static_cast<double>(size) * var_a) {
      out.dropped += w;
      continue;
    }
    // Interactions need enough points; small cells fall back to a line in A.
    const bool inter = interacted && size >= 2 * full;
    const Index p = inter ? full : 2;
    MatrixXd x(size, p);
    VectorXd t(size);
    for (Index r = 0; r < size; ++r) {
      design_row(a(m[r]), vt, m[r], inter, x.row(r));
      t(r) = y(m[r]);
    }
    const VectorXd coef = x.completeOrthogonalDecomposition().solve(t);
    Eigen::RowVectorXd row(p);
    double cell_sum = 0;
    for (Index i : m)
      for (Index j = 0; j < pi.weights.size(); ++j) {
        design_row(pi.points(j, 0), vt, i, inter, row);
        cell_sum += pi.weights(j) * row.dot(coef);
      }
    ++out.cells;
    acc += cell_sum / static_cast<double>(n);
    kept += w;
  }
  if (kept <= 0) throw IdentificationError("common support fails: no (V, T) cell supports a regression on A");
  out.theta = acc / kept;
  return out;
}

}  // namespace

MonotoneControl estimate_vt(const Dataset& data, const ControlFunction& cf, const VtConfig& cfg) {
  require_scalar(data);
  const Index n = data.n();
  if (cf.values.rows() != n) throw PreconditionError("control values do not match the sample");
  if (cfg.floor < 2) throw PreconditionError("cell floor must be at least 2");
  MonotoneControl mc;
  mc.method = cfg.method;
  mc.t = cf.values;
  mc.cell_size = cfg.cell_size > 0 ? std::max(cfg.cell_size, cfg.floor)
                                   : std::max(cfg.floor, static_cast<int>(std::ceil(std::sqrt(double(n)))));
  const VectorXd sd = linalg::column_sd(data.z());
  MatrixXd zs = data.z().rowwise() - data.z().colwise().mean();
  for (Index c = 0; c < zs.cols(); ++c) zs.col(c) /= sd(c) > 0 ? sd(c) : 1.0;

  std::vector<Index> idx(n);
  std::iota(idx.begin(), idx.end(), 0);
  mc.z_cell.assign(n, 0);
  mc.merged = n < mc.cell_size;
  kd_split(zs, idx, 0, n, static_cast<std::size_t>(mc.cell_size), mc.z_cell, mc.cells);

  std::vector<std::vector<Index>> members(mc.cells);
  for (Index i = 0; i < n; ++i) members[mc.z_cell[i]].push_back(i);

  const VectorXd a = data.a().col(0);
  VectorXd resid = a;
  double rss = 0, tss = 0;
  for (const auto& m : members) {
    if (static_cast<Index>(m.size()) <= zs.cols() + 1) continue;
    rss += local_residuals(m, zs, a, resid);
    double mean = 0;
    for (Index i : m) mean += a(i);
    mean /= static_cast<double>(m.size());
    for (Index i : m) tss += (a(i) - mean) * (a(i) - mean);
  }
  const double total = (a.array() - a.mean()).square().sum();
  mc.residual_ratio = total > 0 ? rss / total : 0.0;
  mc.degenerate = total <= 0 || mc.residual_ratio < cfg.degenerate_ratio;

  const VectorXd& key = cfg.method == VtMethod::Rank ? a : resid;
  mc.v.resize(n);
  for (const auto& m : members) midrank(m, key, mc.v);
  return mc;
}

SupportReport check_common_support(const MonotoneControl& mc, const VectorXd& a, const VectorXd& a_grid,
                                   const SupportConfig& cfg) {
  const Index n = a.size();
  if (mc.v.size() != n) throw PreconditionError("treatment does not match the fitted control");
  SupportReport rep;
  rep.threshold = cfg.threshold;
  const double sd = std::sqrt((a.array() - a.mean()).square().mean());
  const double h = cfg.bandwidth > 0 ? cfg.bandwidth : 1.06 * sd * std::pow(static_cast<double>(n), -0.2);
  const MatrixXd vt = vt_matrix(mc);
  const Index dims = vt.cols();
  const int gmax = static_cast<int>(std::ceil(std::cbrt(static_cast<double>(n))));
  for (Index j = 0; j < a_grid.size(); ++j) {
    SupportEntry e;
    e.a = a_grid(j);
    std::vector<Index> near;
    for (Index i = 0; i < n; ++i)
      if (std::abs(a(i) - e.a) <= h) near.push_back(i);
    e.near = static_cast<int>(near.size());
    e.grid = std::clamp(static_cast<int>(std::floor(std::pow(e.near / 50.0, 1.0 / dims))), 1, gmax);
    const auto cell = grid_cells(vt, e.grid);
    std::vector<char> hit(ipow(e.grid, dims), 0);
    for (Index i : near) hit[cell[i]] = 1;
    Index miss = 0;
    for (Index i = 0; i < n; ++i) miss += hit[cell[i]] ? 0 : 1;
    e.uncovered = static_cast<double>(miss) / static_cast<double>(n);
    rep.worst = std::max(rep.worst, e.uncovered);
    rep.entries.push_back(e);
  }
  return rep;
}

AverageCausalResult average_causal(const Dataset& data, const MonotoneControl& mc, const Contrast& pi,
                                   const AverageCausalConfig& cfg, const SeedSpec& seed) {
  require_scalar(data);
  if (pi.points.cols() != 1 || pi.points.rows() != pi.weights.size())
    throw PreconditionError("contrast must list scalar treatment values with one weight each");
  if (mc.degenerate)
    throw PreconditionError("treatment is deterministic in the instruments within cells: "
                            "no continuously distributed first-stage disturbance");
  const VectorXd a = data.a().col(0);
  AverageCausalResult out;
  out.seed = seed;
  out.degenerate = mc.degenerate;

  VectorXd weighted_points(0);
  std::vector<double> grid;
  for (Index j = 0; j < pi.weights.size(); ++j)
    if (pi.weights(j) != 0) grid.push_back(pi.points(j, 0));
  out.support = check_common_support(mc, a, Eigen::Map<VectorXd>(grid.data(), grid.size()), cfg.support);
  if (!out.support.ok())
    throw IdentificationError("common support fails: (V, T) near the contrast treatment values leaves " +
                              std::to_string(out.support.worst) + " of the mass uncovered");

  const CellFit fit = fit_cells(data.y(), a, mc, pi, cfg.cells_per_dim, cfg.min_cell, cfg.interacted);
  if (fit.dropped > cfg.support.threshold)
    throw IdentificationError("common support fails: cells without treatment variation hold " +
                              std::to_string(fit.dropped) + " of the mass");
  out.theta = fit.theta;
  out.cells = fit.cells;
  out.dropped_mass = fit.dropped;

  MatrixXd x(a.size(), 2);
  x.col(0).setOnes();
  x.col(1) = a;
  const VectorXd b = linalg::ols(x, data.y()).col(0);
  for (Index j = 0; j < pi.weights.size(); ++j) out.naive += pi.weights(j) * (b(0) + b(1) * pi.points(j, 0));

  if (cfg.bootstrap > 0) {
    const int rank = static_cast<int>(mc.t.cols());
    std::vector<double> draws(cfg.bootstrap, std::numeric_limits<double>::quiet_NaN());
    parallel_for(cfg.bootstrap, cfg.workers > 0 ? cfg.workers : default_workers(), [&](std::size_t r) {
      Rng rng(seed.stream(r));
      const Dataset db = data.rows(bootstrap_indices(data.n(), rng));
      try {
        const ControlFunction cf = estimate_control(db, rank);
        const MonotoneControl mb = estimate_vt(db, cf, cfg.vt);
        draws[r] = fit_cells(db.y(), db.a().col(0), mb, pi, cfg.cells_per_dim, cfg.min_cell, cfg.interacted).theta;
      } catch (const std::exception&) {
      }
    });
    double s = 0, ss = 0;
    int ok = 0;
    for (double d : draws)
      if (std::isfinite(d)) {
        s += d;
        ss += d * d;
        ++ok;
      }
    if (ok < 2) throw NumericalError("bootstrap failed on nearly every resample");
    out.bootstrap = ok;
    const double m = s / ok;
    out.se = std::sqrt(std::max(0.0, (ss - ok * m * m) / (ok - 1)));
  }
  return out;
}

AverageCausalResult average_causal(const Dataset& data, const Contrast& pi, const AverageCausalConfig& cfg,
                                   const SeedSpec& seed) {
  const ControlFunction cf = estimate_control(data, cfg.rank);
  const MonotoneControl mc = estimate_vt(data, cf, cfg.vt);
  return average_causal(data, mc, pi, cfg, seed);
}

Dataset sample_monotone(const MonotoneDGP& g, Index n, const SeedSpec& seed, VectorXd* eta_out) {
  if (n < 2) throw PreconditionError("sample size must be at least 2");
  if (std::abs(g.rho) >= 1) throw PreconditionError("rho must lie in (-1, 1)");
  Rng rng(seed);
  VectorXd y(n), eta(n);
  MatrixXd a(n, 1), z(n, 2), w(n, 2);
  const double s = std::sqrt(1 - g.rho * g.rho);
  for (Index i = 0; i < n; ++i) {
    const double u0 = rng.normal();
    const double u = g.mu + u0;
    z(i, 0) = u + g.sd_e * rng.normal();
    z(i, 1) = rng.normal();
    eta(i) = g.sd_eta * (g.rho * u0 + s * rng.normal());
    a(i, 0) = z(i, 0) + g.sd_z2 * z(i, 1) + eta(i);
    w(i, 0) = u + g.sd_w * rng.normal();
    w(i, 1) = u + g.sd_w * rng.normal();
    y(i) = a(i, 0) * u + g.sd_y * rng.normal();
  }
  if (eta_out) *eta_out = eta;
  return Dataset(y, a, z, w, {}, {"a"}, {"z1", "z2"}, {"w1", "w2"}, {}, "y");
}

json to_json(const MonotoneDGP& g) {
  return {{"kind", "monotone_dgp"}, {"mu", g.mu},         {"sd_e", g.sd_e}, {"sd_z2", g.sd_z2},
          {"rho", g.rho},           {"sd_eta", g.sd_eta}, {"sd_w", g.sd_w}, {"sd_y", g.sd_y}};
}

MonotoneDGP monotone_dgp_from_json(const json& j) {
  MonotoneDGP g;
  for (const auto& [key, value] : j.items()) {
    if (key == "kind") continue;
    double* slot = key == "mu" ? &g.mu : key == "sd_e" ? &g.sd_e : key == "sd_z2" ? &g.sd_z2
                 : key == "rho" ? &g.rho : key == "sd_eta" ? &g.sd_eta : key == "sd_w" ? &g.sd_w
                 : key == "sd_y" ? &g.sd_y : nullptr;
    if (!slot) throw PreconditionError("unknown monotone_dgp field: " + key);
    if (!value.is_number()) throw PreconditionError("monotone_dgp field " + key + " must be a number");
    *slot = value.get<double>();
  }
  return g;
}

json to_json(const MonotoneControl& mc) {
  return {{"kind", "monotone_control"},
          {"method", mc.method == VtMethod::Rank ? "rank" : "local_linear"},
          {"cells", mc.cells},
          {"cell_size", mc.cell_size},
          {"merged", mc.merged},
          {"degenerate", mc.degenerate},
          {"residual_ratio", mc.residual_ratio},
          {"v", to_json(mc.v)}};
}

json to_json(const SupportReport& s) {
  json entries = json::array();
  for (const auto& e : s.entries)
    entries.push_back({{"a", e.a}, {"near", e.near}, {"grid", e.grid}, {"uncovered", e.uncovered}});
  return {{"entries", entries}, {"worst", s.worst}, {"threshold", s.threshold}, {"ok", s.ok()}};
}

json to_json(const AverageCausalResult& r) {
  return {{"kind", "monotone"},     {"theta", r.theta},       {"se", r.se},
          {"bootstrap", r.bootstrap}, {"naive", r.naive},    {"cells", r.cells},
          {"dropped_mass", r.dropped_mass}, {"support", to_json(r.support)},
          {"seed", to_json(r.seed)}};
}

}  // namespace icc
