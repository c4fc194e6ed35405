#pragma once

#include <Eigen/Dense>

#include <cmath>
#include <numbers>
#include <vector>

#include "assembly.hpp"
#include "levelset.hpp"
#include "model.hpp"
#include "objectives.hpp"
#include "oracle.hpp"

namespace isotopo {

// Annulus sweeps against the closed-form solution. The design field is the
// projection of r - R_L, so the sensitivity to R_L is -sum_i dJ/dPhi_i.

struct RadiusSample {
  double RL = 0;
  double J = 0, J_exact = 0;
  double dJ = 0, dJ_exact = 0;
  double per = 0, per_exact = 0;
  double err_T = 0, err_P = 0;  // relative L2
};

inline oracle::AnnulusParams annulus_params(const AnnulusSetup& s, double RL) {
  oracle::AnnulusParams p;
  p.Ra = s.Ra;
  p.Rb = s.Rb;
  p.RL = RL;
  p.Ta = s.Ta;
  p.Tb = s.Tb;
  p.ka = s.kappa_a;
  p.kb = s.kappa_b;
  return p;
}

inline RadiusSample annulus_sample(const Discretization& D, const ObjectiveSpec& spec, const AnnulusSetup& s,
                                   double RL, SystemSolver* ws = nullptr) {
  const oracle::AnnulusParams p = annulus_params(s, RL);
  const DesignField f = make_field(D.design_ptr(), [&](const Vec2& x) { return x.norm() - RL; });
  const ObjectiveValue v = eval_total(spec, D, f, ws);
  RadiusSample r;
  r.RL = RL;
  r.J = v.J_main;
  r.J_exact = oracle::annulus_objective(p);
  r.dJ = -v.g_main.sum();
  r.dJ_exact = oracle::annulus_objective_dRL(p);
  r.per = perimeter(f, D.smoothing());
  r.per_exact = 2 * std::numbers::pi * RL;
  const oracle::AnnulusAdjoint adj = oracle::annulus_adjoint_coefficients(p);
  const oracle::AnnulusState st = oracle::annulus_coefficients(p);
  double eT = 0, nT = 0, eP = 0, nP = 0;
  for (const auto& q : D.elems()) {
    const double rr = std::clamp(q.x.norm(), s.Ra, s.Rb);
    const auto& piece = rr < RL ? st.a : st.b;
    const double Te = piece.c + piece.d * std::log(rr);
    // The discrete adjoint carries the opposite sign of the closed-form one.
    const double Pe = -(rr < RL ? adj.a.value(rr) : adj.b.value(rr));
    const double dT = D.value(q.sol, v.T) - Te, dP = D.value(q.sol, v.P) - Pe;
    eT += dT * dT * q.wdet;
    nT += Te * Te * q.wdet;
    eP += dP * dP * q.wdet;
    nP += Pe * Pe * q.wdet;
  }
  r.err_T = std::sqrt(eT / nT);
  r.err_P = std::sqrt(eP / nP);
  return r;
}

inline std::vector<double> linspace(double a, double b, int n) {
  if (n < 1) throw ConfigError("grid needs at least one point");
  std::vector<double> v;
  for (int i = 0; i < n; ++i) v.push_back(n == 1 ? a : a + (b - a) * i / (n - 1));
  return v;
}

inline std::vector<RadiusSample> radius_sweep(const AnnulusSetup& s, const RefineSpec& design,
                                              const RefineSpec& solution, const SmoothingParams& sp,
                                              const std::vector<double>& radii, int quad_extra = 0) {
  MultiPatchModel base = build_annulus(s);
  base.symmetric = false;
  const auto D = make_discretization(base, design, solution, sp, quad_extra);
  const ObjectiveSpec spec = make_objective(*D, ObjectiveKind::annular);
  SystemSolver ws;
  std::vector<RadiusSample> out;
  for (double RL : radii) out.push_back(annulus_sample(*D, spec, s, RL, &ws));
  return out;
}

inline double max_relative_J_deviation(const std::vector<RadiusSample>& v) {
  double m = 0;
  for (const auto& r : v) m = std::max(m, std::abs(r.J - r.J_exact) / std::abs(r.J_exact));
  return m;
}

struct RefinementPoint {
  double delta = 0;
  int spans = 0, dof = 0;
  double h_avg = 0;
  double err_J = 0, err_T = 0, err_P = 0;
};

// One mesh level with spans x spans per base span; design basis equals the
// solution basis.
inline RefinementPoint refinement_point(const AnnulusSetup& s, int spans, double delta,
                                        const std::vector<double>& radii, int quad_extra = 0) {
  RefineSpec spec{2, 1, spans, spans, 0};
  SmoothingParams sp;
  sp.delta = delta;
  MultiPatchModel base = build_annulus(s);
  base.symmetric = false;
  const auto D = make_discretization(base, spec, spec, sp, quad_extra);
  const ObjectiveSpec obj = make_objective(*D, ObjectiveKind::annular);
  SystemSolver ws;
  double num = 0, den = 0, eT = 0, eP = 0;
  for (double RL : radii) {
    const RadiusSample r = annulus_sample(*D, obj, s, RL, &ws);
    num += (r.J - r.J_exact) * (r.J - r.J_exact);
    den += r.J_exact * r.J_exact;
    eT += r.err_T;
    eP += r.err_P;
  }
  int elements = 0;
  for (const auto& P : D->model().patches)
    elements += static_cast<int>(P.knots_u().nonempty_spans().size() * P.knots_v().nonempty_spans().size());
  const double area = std::numbers::pi * (s.Rb * s.Rb - s.Ra * s.Ra);
  RefinementPoint p;
  p.delta = delta;
  p.spans = spans;
  p.dof = D->ndof();
  p.h_avg = std::sqrt(area / elements);
  p.err_J = std::sqrt(num / den);
  p.err_T = eT / radii.size();
  p.err_P = eP / radii.size();
  return p;
}

struct LineFit {
  double slope = 0, intercept = 0;
};

// Least squares log10(err_J) = slope * log10(delta / h_avg) + intercept.
inline LineFit fit_bandwidth_law(const std::vector<RefinementPoint>& pts) {
  Eigen::MatrixXd A(static_cast<Eigen::Index>(pts.size()), 2);
  Eigen::VectorXd b(static_cast<Eigen::Index>(pts.size()));
  for (size_t i = 0; i < pts.size(); ++i) {
    A(static_cast<Eigen::Index>(i), 0) = std::log10(pts[i].delta / pts[i].h_avg);
    A(static_cast<Eigen::Index>(i), 1) = 1.0;
    b[static_cast<Eigen::Index>(i)] = std::log10(pts[i].err_J);
  }
  const Eigen::Vector2d x = A.colPivHouseholderQr().solve(b);
  return {x[0], x[1]};
}

}  // namespace isotopo
