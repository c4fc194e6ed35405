#pragma once

#include <Eigen/Dense>

#include <array>
#include <memory>
#include <string>

#include "assembly.hpp"
#include "errors.hpp"
#include "levelset.hpp"

namespace isotopo {

enum class ObjectiveKind { annular, cloak, camouflage };

inline ObjectiveKind parse_objective_kind(const std::string& s) {
  if (s == "annular" || s == "annulus") return ObjectiveKind::annular;
  if (s == "cloak") return ObjectiveKind::cloak;
  if (s == "camouflage") return ObjectiveKind::camouflage;
  throw ConfigError("unknown objective kind '" + s + "'");
}

struct ReferenceFields {
  Eigen::VectorXd T_ref;  // reference (undisturbed) field
  Eigen::VectorXd T_ins;  // design region filled with insulator
  double J_norm = 1.0;
};

struct ObjectiveSpec {
  ObjectiveKind kind = ObjectiveKind::annular;
  std::array<bool, 4> region{true, true, true, true};  // indexed by Region
  double chi = 0.0;  // Tikhonov weight
  double rho = 0.0;  // volume weight
  // Regularizers are areas; weighting them in m^2 keeps chi and rho independent
  // of the model's length unit.
  double area_unit = 1.0;
  ReferenceFields ref;

  bool in_region(Region r) const { return region[static_cast<int>(r)]; }
};

inline std::array<bool, 4> evaluation_region(ObjectiveKind k) {
  switch (k) {
    case ObjectiveKind::annular: return {true, true, true, true};
    case ObjectiveKind::cloak: return {false, false, true, false};
    case ObjectiveKind::camouflage: return {true, true, true, false};
  }
  return {};
}

inline double region_l2_sq(const Discretization& D, const std::array<bool, 4>& mask, const Eigen::VectorXd& a,
                           const Eigen::VectorXd& b) {
  double s = 0;
  for (const auto& q : D.elems()) {
    if (!mask[static_cast<int>(q.region)]) continue;
    const double d = D.value(q.sol, a) - D.value(q.sol, b);
    s += d * d * q.wdet;
  }
  return s;
}

// Reference field: obstacle/object and design region filled with the base
// material. Normalization field: design region filled with the insulator.
inline ReferenceFields compute_reference_fields(const Discretization& D, ObjectiveKind kind) {
  ReferenceFields r;
  if (kind == ObjectiveKind::annular) return r;
  const MultiPatchModel& m = D.model();
  const Eigen::VectorXd phi = Eigen::VectorXd::Zero(D.design().num_coeffs());
  SolveOptions ref;
  ref.kappa.inside = m.kappa_base;
  ref.kappa.design = m.kappa_base;
  SolveOptions ins;
  ins.kappa.design = m.kappa_insulator;
  r.T_ref = solve_state(D, phi, ref);
  r.T_ins = solve_state(D, phi, ins);
  const auto mask = evaluation_region(kind);
  r.J_norm = region_l2_sq(D, mask, r.T_ins, r.T_ref);
  const double scale = region_l2_sq(D, mask, r.T_ref, Eigen::VectorXd::Zero(D.ndof()));
  if (!(r.J_norm > 1e-14 * std::max(scale, 1e-300)))
    throw ConfigError("degenerate normalization: the insulator filling does not disturb the reference field");
  return r;
}

inline ObjectiveSpec make_objective(const Discretization& D, ObjectiveKind kind, double chi = 0, double rho = 0) {
  if (chi < 0 || rho < 0) throw ConfigError("regularization weights must be non-negative");
  ObjectiveSpec s;
  s.kind = kind;
  s.region = evaluation_region(kind);
  s.chi = chi;
  s.rho = rho;
  s.area_unit = D.model().length_unit * D.model().length_unit;
  s.ref = compute_reference_fields(D, kind);
  return s;
}

struct MainTerm {
  double J = 0;
  Eigen::VectorXd dJdT;  // consistent partial over solution DOFs
};

inline MainTerm eval_main(const ObjectiveSpec& s, const Discretization& D, const Eigen::VectorXd& T) {
  MainTerm out;
  out.dJdT = Eigen::VectorXd::Zero(D.ndof());
  const bool annular = s.kind == ObjectiveKind::annular;
  const double scale = annular ? 1.0 : 1.0 / s.ref.J_norm;
  for (const auto& q : D.elems()) {
    if (!s.in_region(q.region)) continue;
    const double e = D.value(q.sol, T) - (annular ? 0.0 : D.value(q.sol, s.ref.T_ref));
    out.J += scale * e * e * q.wdet;
    const double c = 2.0 * scale * e * q.wdet;
    for (int a = 0; a < q.sol.cnt; ++a) out.dJdT[D.idx(q.sol, a)] += c * D.N(q.sol, a);
  }
  return out;
}

struct RegTerm {
  double J = 0;
  Eigen::VectorXd grad;  // per design coefficient
};

// J = int |grad Phi|^2 over the design region.
inline RegTerm tikhonov(const DesignField& f) {
  const DesignSpace& S = *f.space;
  RegTerm r;
  r.grad = Eigen::VectorXd::Zero(S.num_coeffs());
  for (const auto& q : S.qps()) {
    const Vec2 g = S.grad_at(q, f.coeffs);
    r.J += g.squaredNorm() * q.wdet;
    for (int k = 0; k < q.cnt; ++k)
      r.grad[S.qp_index(q, k)] += 2.0 * q.wdet * (g.x() * S.qp_Rx(q, k) + g.y() * S.qp_Ry(q, k));
  }
  return r;
}

struct ObjectiveValue {
  double J_main = 0, J_tknv = 0, J_vol = 0, J_total = 0;
  Eigen::VectorXd g_main, g_tknv, g_vol, g_total;  // per design coefficient
  Eigen::VectorXd g_vars;                          // reduced through the variable map
  Eigen::VectorXd T, P;
};

// One function evaluation: state solve, adjoint solve, sensitivity assembly,
// regularizers.
inline ObjectiveValue eval_total(const ObjectiveSpec& s, const Discretization& D, const DesignField& f,
                                 SystemSolver* workspace = nullptr) {
  SystemSolver local;
  SystemSolver& solver = workspace ? *workspace : local;
  ObjectiveValue v;
  solver.factorize(D, f.coeffs);
  v.T = solver.solve(assemble_flux(D));
  const MainTerm m = eval_main(s, D, v.T);
  v.P = solver.solve_adjoint(-m.dJdT);
  v.J_main = m.J;
  v.g_main = sensitivity_contraction(D, f.coeffs, v.T, v.P);
  const RegTerm t = tikhonov(f);
  const VolumeMeasure vol = volume_measure(f, D.smoothing());
  v.J_tknv = s.area_unit * t.J;
  v.g_tknv = s.area_unit * t.grad;
  v.J_vol = s.area_unit * vol.value;
  v.g_vol = s.area_unit * vol.grad;
  v.J_total = v.J_main + s.chi * v.J_tknv + s.rho * v.J_vol;
  v.g_total = v.g_main + s.chi * v.g_tknv + s.rho * v.g_vol;
  v.g_vars = f.space->vars().reduce(v.g_total);
  return v;
}

}  // namespace isotopo
