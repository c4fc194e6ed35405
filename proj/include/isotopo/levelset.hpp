#pragma once

#include <Eigen/Sparse>
#include <Eigen/SparseCholesky>

#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>
#include <memory>
#include <string>
#include <vector>

#include "errors.hpp"
#include "model.hpp"
#include "splines.hpp"

namespace isotopo {

using SpMat = Eigen::SparseMatrix<double>;
using Triplets = std::vector<Eigen::Triplet<double>>;

struct SmoothingParams {
  double delta = 0.05;
  double alpha = 0.0;

  void validate() const {
    if (!(delta > 0)) throw ConfigError("smoothing bandwidth must be positive");
    if (!(alpha >= 0 && alpha < 1)) throw ConfigError("smoothing floor must lie in [0, 1)");
  }
};

inline double heaviside(double phi, const SmoothingParams& sp) {
  const double D = sp.delta, a = sp.alpha;
  if (phi < -D) return a;
  if (phi >= D) return 1.0;
  const double u = phi / D;
  return 0.75 * (1.0 - a) * (u - u * u * u / 3.0) + 0.5 * (1.0 + a);
}

inline double dirac(double phi, const SmoothingParams& sp) {
  const double D = sp.delta;
  if (std::abs(phi) > D) return 0.0;
  const double u = phi / D;
  return 0.75 * (1.0 - sp.alpha) / D * (1.0 - u * u);
}

// Surjection from design coefficients to optimization variables (sign +1).
class VariableMap {
 public:
  VariableMap() = default;
  VariableMap(std::vector<int> to_var, int n_vars) : to_var_(std::move(to_var)), n_vars_(n_vars) {
    std::vector<bool> hit(static_cast<size_t>(n_vars_), false);
    for (int k : to_var_) {
      if (k < 0 || k >= n_vars_) throw ConfigError("variable map index out of range");
      hit[k] = true;
    }
    for (bool h : hit)
      if (!h) throw ConfigError("variable map is not surjective");
  }
  static VariableMap identity(int m) {
    std::vector<int> v(static_cast<size_t>(m));
    for (int i = 0; i < m; ++i) v[i] = i;
    return {v, m};
  }

  int num_coeffs() const { return static_cast<int>(to_var_.size()); }
  int num_vars() const { return n_vars_; }
  int var_of(int i) const { return to_var_[i]; }

  Eigen::VectorXd expand(const Eigen::VectorXd& x) const {
    if (x.size() != n_vars_) throw ConfigError("variable vector has wrong length");
    Eigen::VectorXd phi(num_coeffs());
    for (int i = 0; i < num_coeffs(); ++i) phi[i] = x[to_var_[i]];
    return phi;
  }
  Eigen::VectorXd reduce(const Eigen::VectorXd& g) const {
    if (g.size() != num_coeffs()) throw ConfigError("coefficient gradient has wrong length");
    Eigen::VectorXd r = Eigen::VectorXd::Zero(n_vars_);
    for (int i = 0; i < num_coeffs(); ++i) r[to_var_[i]] += g[i];
    return r;
  }
  // Mean over each variable's coefficients; inverse of expand on its range.
  Eigen::VectorXd restrict_mean(const Eigen::VectorXd& phi) const {
    Eigen::VectorXd r = reduce(phi);
    Eigen::VectorXd c = reduce(Eigen::VectorXd::Ones(num_coeffs()));
    return r.cwiseQuotient(c);
  }
  SpMat matrix() const {
    Triplets t;
    for (int i = 0; i < num_coeffs(); ++i) t.emplace_back(i, to_var_[i], 1.0);
    SpMat E(num_coeffs(), n_vars_);
    E.setFromTriplets(t.begin(), t.end());
    return E;
  }

 private:
  std::vector<int> to_var_;
  int n_vars_ = 0;
};

inline Eigen::VectorXd symmetry_reduce(const Eigen::VectorXd& g, const VariableMap& m) { return m.reduce(g); }
inline Eigen::VectorXd symmetry_expand(const Eigen::VectorXd& x, const VariableMap& m) { return m.expand(x); }

// Groups control points that coincide after folding by the x/y reflections
// (or without folding). Coincident copies on shared edges always merge, so the
// level set stays continuous across design patches.
inline VariableMap cluster_variables(const std::vector<Vec2>& points, bool fold, double tol) {
  const int m = static_cast<int>(points.size());
  std::vector<Vec2> c(points);
  if (fold)
    for (auto& p : c) p = p.cwiseAbs();
  std::vector<int> order(static_cast<size_t>(m));
  for (int i = 0; i < m; ++i) order[i] = i;
  std::sort(order.begin(), order.end(), [&](int a, int b) {
    if (c[a].x() != c[b].x()) return c[a].x() < c[b].x();
    return c[a].y() < c[b].y();
  });
  std::vector<int> rep(static_cast<size_t>(m), -1);
  for (int a = 0; a < m; ++a) {
    const int i = order[a];
    if (rep[i] >= 0) continue;
    rep[i] = i;
    for (int b = a + 1; b < m && c[order[b]].x() - c[i].x() <= tol; ++b)
      if (rep[order[b]] < 0 && (c[order[b]] - c[i]).norm() <= tol) rep[order[b]] = i;
  }
  // Number variables by first appearance in coefficient order.
  std::vector<int> id(static_cast<size_t>(m), -1), to_var(static_cast<size_t>(m));
  int n = 0;
  for (int i = 0; i < m; ++i) {
    if (id[rep[i]] < 0) id[rep[i]] = n++;
    to_var[i] = id[rep[i]];
  }
  return {to_var, n};
}

// Design basis on the design patches plus a cached quadrature taken from the
// finer integration (solution) patches, which share the parameterization.
class DesignSpace {
 public:
  struct Qp {
    int dpatch;
    double xi, eta;
    Vec2 x;
    double wdet;
    int off, cnt;  // range into idx/R/Rx/Ry
  };

  DesignSpace(std::vector<NurbsPatch> design, const std::vector<NurbsPatch>& integration, std::vector<int> model_ids,
              bool symmetric, int quad_extra = 0)
      : patches_(std::move(design)), model_ids_(std::move(model_ids)) {
    if (patches_.size() != integration.size() || patches_.size() != model_ids_.size())
      throw ConfigError("design and integration patch lists differ in length");
    int off = 0;
    std::vector<Vec2> pts;
    for (const auto& P : patches_) {
      offsets_.push_back(off);
      off += P.size();
      pts.insert(pts.end(), P.points().begin(), P.points().end());
    }
    m_ = off;
    for (size_t d = 0; d < patches_.size(); ++d) {
      for (const auto& q : patch_quadrature(integration[d], quad_extra)) {
        const BasisEval ge = eval_basis(integration[d], q.xi, q.eta);
        const BasisEval de = eval_basis(patches_[d], q.xi, q.eta);
        Qp qp{static_cast<int>(d), q.xi, q.eta, ge.point, q.w * ge.det, static_cast<int>(idx_.size()),
              static_cast<int>(de.R.size())};
        for (size_t k = 0; k < de.R.size(); ++k) {
          idx_.push_back(offsets_[d] + de.index[k]);
          R_.push_back(de.R[k]);
          Rx_.push_back(de.dR_dx[k]);
          Ry_.push_back(de.dR_dy[k]);
        }
        qps_.push_back(qp);
      }
    }
    // Diameter from points sampled on the design patch boundaries.
    std::vector<Vec2> samples;
    for (const auto& P : patches_)
      for (Edge e : kEdges) {
        const auto& k = P.knots(edge_dir(e));
        for (int s = 0; s <= 32; ++s) {
          const auto [a, b] = edge_param(P, e, k.front() + (k.back() - k.front()) * s / 32.0);
          samples.push_back(eval_point(P, a, b));
        }
      }
    for (size_t i = 0; i < samples.size(); ++i)
      for (size_t j = i + 1; j < samples.size(); ++j) diameter_ = std::max(diameter_, (samples[i] - samples[j]).norm());
    vars_ = cluster_variables(pts, symmetric, 1e-9 * diameter_);
    symmetric_ = symmetric;
  }

  int num_coeffs() const { return m_; }
  int num_patches() const { return static_cast<int>(patches_.size()); }
  const NurbsPatch& patch(int d) const { return patches_[d]; }
  int offset(int d) const { return offsets_[d]; }
  int model_id(int d) const { return model_ids_[d]; }
  int design_index(int model_patch) const {
    for (int d = 0; d < num_patches(); ++d)
      if (model_ids_[d] == model_patch) return d;
    return -1;
  }
  const VariableMap& vars() const { return vars_; }
  void set_vars(VariableMap v) {
    if (v.num_coeffs() != m_) throw ConfigError("variable map does not match design basis");
    vars_ = std::move(v);
  }
  bool symmetric() const { return symmetric_; }
  double diameter() const { return diameter_; }
  const std::vector<Qp>& qps() const { return qps_; }
  int qp_index(const Qp& q, int k) const { return idx_[q.off + k]; }
  double qp_R(const Qp& q, int k) const { return R_[q.off + k]; }
  double qp_Rx(const Qp& q, int k) const { return Rx_[q.off + k]; }
  double qp_Ry(const Qp& q, int k) const { return Ry_[q.off + k]; }

  double value_at(const Qp& q, const Eigen::VectorXd& c) const {
    double v = 0;
    for (int k = 0; k < q.cnt; ++k) v += R_[q.off + k] * c[idx_[q.off + k]];
    return v;
  }
  Vec2 grad_at(const Qp& q, const Eigen::VectorXd& c) const {
    Vec2 g = Vec2::Zero();
    for (int k = 0; k < q.cnt; ++k) g += c[idx_[q.off + k]] * Vec2(Rx_[q.off + k], Ry_[q.off + k]);
    return g;
  }

  double area() const {
    double a = 0;
    for (const auto& q : qps_) a += q.wdet;
    return a;
  }

  SpMat mass() const {
    Triplets t;
    for (const auto& q : qps_)
      for (int a = 0; a < q.cnt; ++a)
        for (int b = 0; b < q.cnt; ++b)
          t.emplace_back(idx_[q.off + a], idx_[q.off + b], q.wdet * R_[q.off + a] * R_[q.off + b]);
    SpMat M(m_, m_);
    M.setFromTriplets(t.begin(), t.end());
    return M;
  }

  // Coefficient-space value and physical gradient at a design-patch parameter.
  std::pair<double, Vec2> eval(int d, double xi, double eta, const Eigen::VectorXd& c) const {
    const BasisEval e = eval_basis(patches_[d], xi, eta);
    double v = 0;
    Vec2 g = Vec2::Zero();
    for (size_t k = 0; k < e.R.size(); ++k) {
      const double ck = c[offsets_[d] + e.index[k]];
      v += e.R[k] * ck;
      g += ck * Vec2(e.dR_dx[k], e.dR_dy[k]);
    }
    return {v, g};
  }
  double value(int d, double xi, double eta, const Eigen::VectorXd& c) const {
    const BasisEval e = eval_basis(patches_[d], xi, eta, false);
    double v = 0;
    for (size_t k = 0; k < e.R.size(); ++k) v += e.R[k] * c[offsets_[d] + e.index[k]];
    return v;
  }

 private:
  std::vector<NurbsPatch> patches_;
  std::vector<int> model_ids_, offsets_;
  int m_ = 0;
  std::vector<Qp> qps_;
  std::vector<int> idx_;
  std::vector<double> R_, Rx_, Ry_;
  VariableMap vars_;
  double diameter_ = 0;
  bool symmetric_ = false;
};

struct DesignField {
  std::shared_ptr<const DesignSpace> space;
  Eigen::VectorXd coeffs;

  Eigen::VectorXd vars() const { return space->vars().restrict_mean(coeffs); }
  static DesignField from_vars(std::shared_ptr<const DesignSpace> s, const Eigen::VectorXd& x) {
    Eigen::VectorXd c = s->vars().expand(x);
    return {std::move(s), std::move(c)};
  }
};

struct LsfValue {
  double phi;
  Vec2 grad;
};

inline LsfValue eval_lsf(const DesignField& f, int model_patch, double xi, double eta) {
  const int d = f.space->design_index(model_patch);
  if (d < 0) throw DomainError("patch " + std::to_string(model_patch) + " is not a design patch");
  const auto [v, g] = f.space->eval(d, xi, eta, f.coeffs);
  return {v, g};
}

// Solves E^T M E x = E^T Psi (+ optional point penalties) and returns E x, so the
// projection lives in the span of the variable map.
inline Eigen::VectorXd solve_projection(const DesignSpace& S, const Eigen::VectorXd& psi, const SpMat& extra = SpMat()) {
  const SpMat E = S.vars().matrix();
  SpMat M = S.mass();
  if (extra.rows() == M.rows()) M += extra;
  const SpMat Mr = SpMat(E.transpose() * M * E);
  Eigen::SimplicialLDLT<SpMat> llt(Mr);
  if (llt.info() != Eigen::Success) throw AssemblyError("design mass matrix is singular (broken design basis)");
  const Eigen::VectorXd d = llt.vectorD();
  if (d.minCoeff() <= 1e-14 * d.maxCoeff()) throw AssemblyError("design mass matrix is singular (broken design basis)");
  const Eigen::VectorXd x = llt.solve(E.transpose() * psi);
  return E * x;
}

inline Eigen::VectorXd project_lsf(const DesignSpace& S, const std::function<double(const Vec2&)>& target) {
  Eigen::VectorXd psi = Eigen::VectorXd::Zero(S.num_coeffs());
  for (const auto& q : S.qps()) {
    const double t = target(q.x) * q.wdet;
    for (int k = 0; k < q.cnt; ++k) psi[S.qp_index(q, k)] += t * S.qp_R(q, k);
  }
  return solve_projection(S, psi);
}

inline DesignField make_field(std::shared_ptr<const DesignSpace> S, const std::function<double(const Vec2&)>& target) {
  Eigen::VectorXd c = project_lsf(*S, target);
  return {std::move(S), std::move(c)};
}

struct InterfacePoint {
  Vec2 x;
  int dpatch;
  double xi, eta;
};

namespace detail {

inline std::vector<double> line_positions(const KnotVector& k, int per_span) {
  std::vector<double> out;
  for (int s : k.nonempty_spans())
    for (int l = 0; l < per_span; ++l) out.push_back(k[s] + (k[s + 1] - k[s]) * (l + 0.5) / per_span);
  return out;
}

inline std::vector<double> sample_positions(const KnotVector& k, int per_span) {
  std::vector<double> out;
  for (int s : k.nonempty_spans())
    for (int l = 0; l < per_span; ++l) out.push_back(k[s] + (k[s + 1] - k[s]) * l / per_span);
  out.push_back(k.back());
  return out;
}

}  // namespace detail

// Zero crossings of Phi along isoparameter lines (lines_per_span per knot span and
// direction), located by bisection to |Phi| <= 1e-10 and deduplicated.
inline std::vector<InterfacePoint> interface_points_detailed(const DesignField& f, int lines_per_span = 20) {
  if (lines_per_span < 1) throw ConfigError("lines_per_span must be >= 1");
  const DesignSpace& S = *f.space;
  std::vector<InterfacePoint> pts;
  for (int d = 0; d < S.num_patches(); ++d) {
    const NurbsPatch& P = S.patch(d);
    for (int dir = 0; dir < 2; ++dir) {
      const KnotVector& across = dir == 0 ? P.knots_u() : P.knots_v();
      const KnotVector& along = dir == 0 ? P.knots_v() : P.knots_u();
      const auto lines = detail::line_positions(across, lines_per_span);
      const auto samples = detail::sample_positions(along, lines_per_span);
      for (double c : lines) {
        auto at = [&](double t) {
          const double xi = dir == 0 ? c : t, eta = dir == 0 ? t : c;
          return S.value(d, xi, eta, f.coeffs);
        };
        auto record = [&](double t) {
          const double xi = dir == 0 ? c : t, eta = dir == 0 ? t : c;
          pts.push_back({eval_point(P, xi, eta), d, xi, eta});
        };
        double t0 = samples[0], f0 = at(t0);
        if (f0 == 0.0) record(t0);
        for (size_t s = 1; s < samples.size(); ++s) {
          const double t1 = samples[s], f1 = at(t1);
          if (f1 == 0.0) {
            record(t1);
          } else if (f0 != 0.0 && (f0 < 0) != (f1 < 0)) {
            double a = t0, b = t1, fa = f0;
            double m = 0.5 * (a + b);
            for (int it = 0; it < 200; ++it) {
              m = 0.5 * (a + b);
              const double fm = at(m);
              if (std::abs(fm) <= 1e-10 || b - a <= 1e-15) break;
              if ((fm < 0) == (fa < 0)) {
                a = m;
                fa = fm;
              } else {
                b = m;
              }
            }
            record(m);
          }
          t0 = t1;
          f0 = f1;
        }
      }
    }
  }
  // Deduplicate (crossings on shared lines or patch edges).
  const double tol = 1e-9 * std::max(S.diameter(), 1e-300);
  std::vector<size_t> order(pts.size());
  for (size_t i = 0; i < pts.size(); ++i) order[i] = i;
  std::sort(order.begin(), order.end(), [&](size_t a, size_t b) { return pts[a].x.x() < pts[b].x.x(); });
  std::vector<bool> drop(pts.size(), false);
  for (size_t a = 0; a < order.size(); ++a) {
    if (drop[order[a]]) continue;
    for (size_t b = a + 1; b < order.size() && pts[order[b]].x.x() - pts[order[a]].x.x() <= tol; ++b)
      if ((pts[order[b]].x - pts[order[a]].x).norm() <= tol) drop[order[b]] = true;
  }
  std::vector<InterfacePoint> out;
  for (size_t i = 0; i < pts.size(); ++i)
    if (!drop[i]) out.push_back(pts[i]);
  return out;
}

inline std::vector<Vec2> interface_points(const DesignField& f, int lines_per_span = 20) {
  std::vector<Vec2> out;
  for (const auto& p : interface_points_detailed(f, lines_per_span)) out.push_back(p.x);
  return out;
}

struct ReinitReport {
  bool performed = false;
  size_t n_points = 0;
  double max_contour_shift = 0;  // max |Phi_new| over the old interface points
  std::string warning;
};

// Geometry-based reinitialization: signed distance to the current interface
// points, projected through the mass system with penalized zero values at the
// interface points. penalty_weight <= 0 selects 1e6 x mean(diag M).
inline DesignField reinitialize(const DesignField& f, int lines_per_span = 20, double penalty_weight = 0.0,
                                ReinitReport* report = nullptr) {
  const DesignSpace& S = *f.space;
  const auto pts = interface_points_detailed(f, lines_per_span);
  ReinitReport rep;
  rep.n_points = pts.size();
  if (pts.empty()) {
    rep.warning = "reinitialization skipped: no interface in the design region";
    if (report) *report = rep;
    return f;
  }
  Eigen::VectorXd psi = Eigen::VectorXd::Zero(S.num_coeffs());
  for (const auto& q : S.qps()) {
    const double old = S.value_at(q, f.coeffs);
    double dmin = std::numeric_limits<double>::infinity();
    for (const auto& p : pts) dmin = std::min(dmin, (p.x - q.x).squaredNorm());
    dmin = std::sqrt(dmin);
    const double sd = old > 0 ? dmin : (old < 0 ? -dmin : 0.0);
    for (int k = 0; k < q.cnt; ++k) psi[S.qp_index(q, k)] += sd * q.wdet * S.qp_R(q, k);
  }
  double w = penalty_weight;
  if (!(w > 0)) {
    const SpMat M = S.mass();
    w = 1e6 * M.diagonal().mean();
  }
  Triplets t;
  for (const auto& p : pts) {
    const BasisEval e = eval_basis(S.patch(p.dpatch), p.xi, p.eta, false);
    const int off = S.offset(p.dpatch);
    for (size_t a = 0; a < e.R.size(); ++a)
      for (size_t b = 0; b < e.R.size(); ++b) t.emplace_back(off + e.index[a], off + e.index[b], w * e.R[a] * e.R[b]);
  }
  SpMat Pen(S.num_coeffs(), S.num_coeffs());
  Pen.setFromTriplets(t.begin(), t.end());
  DesignField out{f.space, solve_projection(S, psi, Pen)};
  rep.performed = true;
  for (const auto& p : pts)
    rep.max_contour_shift = std::max(rep.max_contour_shift, std::abs(S.value(p.dpatch, p.xi, p.eta, out.coeffs)));
  if (report) *report = rep;
  return out;
}

inline double perimeter(const DesignField& f, const SmoothingParams& sp) {
  double per = 0;
  for (const auto& q : f.space->qps()) per += dirac(f.space->value_at(q, f.coeffs), sp) * q.wdet;
  return per;
}

struct VolumeMeasure {
  double value = 0;
  Eigen::VectorXd grad;  // per design coefficient
};

inline VolumeMeasure volume_measure(const DesignField& f, const SmoothingParams& sp) {
  const DesignSpace& S = *f.space;
  VolumeMeasure v;
  v.grad = Eigen::VectorXd::Zero(S.num_coeffs());
  for (const auto& q : S.qps()) {
    const double phi = S.value_at(q, f.coeffs);
    v.value += heaviside(phi, sp) * q.wdet;
    const double d = dirac(phi, sp) * q.wdet;
    if (d != 0.0)
      for (int k = 0; k < q.cnt; ++k) v.grad[S.qp_index(q, k)] += d * S.qp_R(q, k);
  }
  return v;
}

}  // namespace isotopo
