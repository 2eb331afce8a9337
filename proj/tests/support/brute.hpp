#pragma once

// Brute-force sums over the structural tables of a DiscreteModel, written
// independently of JointTable/cond_expect so tests compare two routes.

#include <algorithm>
#include <cmath>
#include <vector>

#include "icc/discrete.hpp"

namespace icc::testing {

using discrete::DiscreteModel;

// P(u, z, w, a, y) by nested loops, indexed [u][z][w][a][y] flattened.
struct Brute {
  const DiscreteModel& m;
  int nu, nz, nw, na, ny;
  std::vector<double> p;

  explicit Brute(const DiscreteModel& model)
      : m(model), nu(model.n_u()), nz(model.n_z()), nw(model.n_w()), na(model.n_a()), ny(model.n_y()) {
    p.assign(static_cast<std::size_t>(nu) * nz * nw * na * ny, 0.0);
    for (int u = 0; u < nu; ++u)
      for (int z = 0; z < nz; ++z)
        for (int w = 0; w < nw; ++w)
          for (int a = 0; a < na; ++a)
            for (int y = 0; y < ny; ++y)
              p[idx(u, z, w, a, y)] = m.p_u(u) * m.p_z_given_u(u, z) * m.p_w_given_u(u, w) *
                                      m.p_a_given_zuw(m.a_row(z, u, w), a) *
                                      m.p_y_given_auw(m.y_row(a, u, w), y);
  }
  std::size_t idx(int u, int z, int w, int a, int y) const {
    return (((static_cast<std::size_t>(u) * nz + z) * nw + w) * na + a) * ny + y;
  }

  template <class F>
  double sum(F&& f) const {
    double s = 0;
    for (int u = 0; u < nu; ++u)
      for (int z = 0; z < nz; ++z)
        for (int w = 0; w < nw; ++w)
          for (int a = 0; a < na; ++a)
            for (int y = 0; y < ny; ++y) s += p[idx(u, z, w, a, y)] * f(u, z, w, a, y);
    return s;
  }

  // E[Y(a)] = sum_{u,w} P(u) P(w|u) E[Y | a, u, w]
  double potential_mean(int a) const {
    double s = 0;
    for (int u = 0; u < nu; ++u)
      for (int w = 0; w < nw; ++w) {
        double ey = 0;
        for (int y = 0; y < ny; ++y) ey += m.y_support(y) * m.p_y_given_auw(m.y_row(a, u, w), y);
        s += m.p_u(u) * m.p_w_given_u(u, w) * ey;
      }
    return s;
  }

  // max over z with P(z) > 0 of TV(P(U|z), P(U|t(z))), or the same for W.
  double ci_tv(bool of_w, const std::vector<int>& label) const {
    const int nt = *std::max_element(label.begin(), label.end()) + 1;
    const int nv = of_w ? nw : nu;
    std::vector<double> pz(nz, 0), pt(nt, 0), pvz(nz * nv, 0), pvt(nt * nv, 0);
    for (int u = 0; u < nu; ++u)
      for (int z = 0; z < nz; ++z)
        for (int w = 0; w < nw; ++w)
          for (int a = 0; a < na; ++a)
            for (int y = 0; y < ny; ++y) {
              const double q = p[idx(u, z, w, a, y)];
              const int v = of_w ? w : u;
              pz[z] += q;
              pt[label[z]] += q;
              pvz[z * nv + v] += q;
              pvt[label[z] * nv + v] += q;
            }
    double worst = 0;
    for (int z = 0; z < nz; ++z) {
      if (pz[z] <= 0) continue;
      double tv = 0;
      for (int v = 0; v < nv; ++v) tv += std::abs(pvz[z * nv + v] / pz[z] - pvt[label[z] * nv + v] / pt[label[z]]);
      worst = std::max(worst, 0.5 * tv);
    }
    return worst;
  }
};

}  // namespace icc::testing
