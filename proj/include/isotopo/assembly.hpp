#pragma once

#include <Eigen/Sparse>
#include <Eigen/SparseCholesky>

#include <cmath>
#include <functional>
#include <memory>
#include <optional>
#include <string>
#include <unordered_map>
#include <vector>

#include "errors.hpp"
#include "levelset.hpp"
#include "model.hpp"
#include "splines.hpp"

namespace isotopo {

inline double kappa_at(double phi, const MaterialPair& m, const SmoothingParams& sp) {
  const double H = heaviside(phi, sp);
  return m.k1 * H + m.k2 * (1.0 - H);
}

inline double dkappa_dphi(double phi, const MaterialPair& m, const SmoothingParams& sp) {
  return (m.k1 - m.k2) * dirac(phi, sp);
}

// Replaces region conductivities, e.g. to build reference fields.
struct KappaOverride {
  std::optional<double> inside, design, outside, sector;
};

// Cached quadrature of a refined model: solution basis at every element,
// interface and Neumann point, design basis where a design patch is involved.
class Discretization {
 public:
  struct Ref {
    int off = 0, cnt = 0;
  };
  struct ElemQp {
    int patch;
    Region region;
    Vec2 x;
    double wdet;
    Ref sol;
    int design_qp;  // index into DesignSpace::qps() or -1
  };
  struct IfaceQp {
    int iface;
    Ref s[2];
    Ref d[2];        // design basis values (cnt 0 when not a design side)
    Region region[2];
    Vec2 x, n;       // n: outward from side 1
    double wds;
  };
  struct BndQp {
    Ref sol;
    double wds, q;
  };

  Discretization(MultiPatchModel model, std::shared_ptr<const DesignSpace> design, SmoothingParams sp = {},
                 int quad_extra = 0)
      : model_(std::move(model)), design_(std::move(design)), sp_(sp) {
    sp_.validate();
    int off = 0;
    for (const auto& P : model_.patches) {
      offsets_.push_back(off);
      off += P.size();
    }
    ndof_ = off;
    build_elements(quad_extra);
    build_interfaces();
    build_boundary();
    build_coupling();
  }

  const MultiPatchModel& model() const { return model_; }
  const std::shared_ptr<const DesignSpace>& design_ptr() const { return design_; }
  const DesignSpace& design() const { return *design_; }
  const SmoothingParams& smoothing() const { return sp_; }
  int ndof() const { return ndof_; }
  int offset(int patch) const { return offsets_[patch]; }
  const std::vector<ElemQp>& elems() const { return elems_; }
  const std::vector<IfaceQp>& ifaces() const { return ifaces_; }
  const std::vector<BndQp>& neumann() const { return bnd_; }

  // Coincident control points of matched interface nets form clusters. Each
  // cluster has one master (a Dirichlet point when there is one); the others are
  // carried as differences to it: c_g = z_g + z_master(g). master(g) < 0 for masters.
  int master(int g) const { return master_[g]; }
  // Partner of a side-1 control point on interface i, or -1.
  int partner(int iface, int g) const {
    const auto& m = partner_[iface];
    const auto it = m.find(g);
    return it == m.end() ? -1 : it->second;
  }

  int idx(const Ref& r, int k) const { return idx_[r.off + k]; }
  double N(const Ref& r, int k) const { return N_[r.off + k]; }
  double Nx(const Ref& r, int k) const { return Nx_[r.off + k]; }
  double Ny(const Ref& r, int k) const { return Ny_[r.off + k]; }
  int didx(const Ref& r, int k) const { return didx_[r.off + k]; }
  double dR(const Ref& r, int k) const { return dR_[r.off + k]; }

  double value(const Ref& r, const Eigen::VectorXd& u) const {
    double v = 0;
    for (int k = 0; k < r.cnt; ++k) v += N_[r.off + k] * u[idx_[r.off + k]];
    return v;
  }
  Vec2 grad(const Ref& r, const Eigen::VectorXd& u) const {
    Vec2 g = Vec2::Zero();
    for (int k = 0; k < r.cnt; ++k) g += u[idx_[r.off + k]] * Vec2(Nx_[r.off + k], Ny_[r.off + k]);
    return g;
  }
  double design_value(const Ref& r, const Eigen::VectorXd& c) const {
    double v = 0;
    for (int k = 0; k < r.cnt; ++k) v += dR_[r.off + k] * c[didx_[r.off + k]];
    return v;
  }

  // Dirichlet DOFs with their values; `profile` replaces tag values by a function
  // of the control point position.
  std::vector<std::pair<int, double>> dirichlet(const std::function<double(const Vec2&)>& profile = nullptr) const {
    std::vector<double> val(static_cast<size_t>(ndof_), 0.0);
    std::vector<bool> set(static_cast<size_t>(ndof_), false);
    for (const auto& t : model_.boundary) {
      if (t.kind != BcKind::dirichlet) continue;
      const NurbsPatch& P = model_.patches[t.patch];
      for (int k : edge_indices(P, t.edge)) {
        const int g = offsets_[t.patch] + k;
        const double v = profile ? profile(P.points()[k]) : t.value;
        if (set[g] && std::abs(val[g] - v) > 1e-12 * std::max(1.0, std::abs(v)))
          throw ConfigError("conflicting Dirichlet values at a shared control point");
        val[g] = v;
        set[g] = true;
      }
    }
    std::vector<std::pair<int, double>> out;
    for (int g = 0; g < ndof_; ++g)
      if (set[g]) out.emplace_back(g, val[g]);
    return out;
  }

  // Point evaluation of a solution field.
  double eval(const Eigen::VectorXd& u, int patch, double xi, double eta) const {
    const BasisEval e = eval_basis(model_.patches[patch], xi, eta, false);
    double v = 0;
    for (size_t k = 0; k < e.R.size(); ++k) v += e.R[k] * u[offsets_[patch] + e.index[k]];
    return v;
  }

 private:
  Ref push_solution(int patch, const BasisEval& e) {
    Ref r{static_cast<int>(idx_.size()), static_cast<int>(e.R.size())};
    for (size_t k = 0; k < e.R.size(); ++k) {
      idx_.push_back(offsets_[patch] + e.index[k]);
      N_.push_back(e.R[k]);
      Nx_.push_back(e.dR_dx[k]);
      Ny_.push_back(e.dR_dy[k]);
    }
    return r;
  }

  Ref push_design(int dpatch, double xi, double eta) {
    const BasisEval e = eval_basis(design_->patch(dpatch), xi, eta, false);
    Ref r{static_cast<int>(didx_.size()), static_cast<int>(e.R.size())};
    for (size_t k = 0; k < e.R.size(); ++k) {
      didx_.push_back(design_->offset(dpatch) + e.index[k]);
      dR_.push_back(e.R[k]);
    }
    return r;
  }

  void build_elements(int quad_extra) {
    int dq = 0;
    for (int p = 0; p < model_.num_patches(); ++p) {
      const NurbsPatch& P = model_.patches[p];
      const int d = design_ ? design_->design_index(p) : -1;
      if (model_.regions[p] == Region::design && d < 0) throw ConfigError("design patch without design basis");
      for (const auto& q : patch_quadrature(P, quad_extra)) {
        const BasisEval e = eval_basis(P, q.xi, q.eta);
        int design_qp = -1;
        if (d >= 0) {
          design_qp = dq++;
          const auto& dqp = design_->qps().at(static_cast<size_t>(design_qp));
          if (dqp.dpatch != d || std::abs(dqp.xi - q.xi) > 1e-14 || std::abs(dqp.eta - q.eta) > 1e-14)
            throw ConfigError("design quadrature does not follow the solution quadrature");
        }
        elems_.push_back({p, model_.regions[p], e.point, q.w * e.det, push_solution(p, e), design_qp});
      }
    }
  }

  void build_interfaces() {
    const double scale = model_scale(model_);
    for (size_t i = 0; i < model_.interfaces.size(); ++i) {
      const InterfacePair& ip = model_.interfaces[i];
      const NurbsPatch& A = model_.patches[ip.patch1];
      const NurbsPatch& B = model_.patches[ip.patch2];
      const KnotVector& ka = A.knots(edge_dir(ip.edge1));
      const KnotVector& kb = B.knots(edge_dir(ip.edge2));
      const int n = std::max({A.degree_u(), A.degree_v(), B.degree_u(), B.degree_v()}) + 1;
      const QuadratureRule g = gauss_legendre(n);
      const int da = design_ ? design_->design_index(ip.patch1) : -1;
      const int db = design_ ? design_->design_index(ip.patch2) : -1;
      for (int s : ka.nonempty_spans()) {
        for (size_t a = 0; a < g.x.size(); ++a) {
          const double t1 = 0.5 * (ka[s] + ka[s + 1]) + 0.5 * (ka[s + 1] - ka[s]) * g.x[a];
          const double frac = (t1 - ka.front()) / (ka.back() - ka.front());
          const double t2 = ip.reversed ? kb.back() - frac * (kb.back() - kb.front())
                                        : kb.front() + frac * (kb.back() - kb.front());
          const auto [x1, y1] = edge_param(A, ip.edge1, t1);
          const auto [x2, y2] = edge_param(B, ip.edge2, t2);
          const BasisEval e1 = eval_basis(A, x1, y1);
          const BasisEval e2 = eval_basis(B, x2, y2);
          if ((e1.point - e2.point).norm() > 1e-9 * scale)
            throw ModelError("interface traces do not coincide; nets are not matched");
          const auto [nrm, ds] = edge_normal(e1, ip.edge1);
          IfaceQp q;
          q.iface = static_cast<int>(i);
          q.s[0] = push_solution(ip.patch1, e1);
          q.s[1] = push_solution(ip.patch2, e2);
          q.d[0] = da >= 0 ? push_design(da, x1, y1) : Ref{};
          q.d[1] = db >= 0 ? push_design(db, x2, y2) : Ref{};
          q.region[0] = model_.regions[ip.patch1];
          q.region[1] = model_.regions[ip.patch2];
          q.x = e1.point;
          q.n = nrm;
          q.wds = 0.5 * (ka[s + 1] - ka[s]) * g.w[a] * ds;
          ifaces_.push_back(q);
        }
      }
    }
  }

  void build_boundary() {
    for (const auto& t : model_.boundary) {
      if (t.kind != BcKind::neumann) continue;
      const NurbsPatch& P = model_.patches[t.patch];
      const KnotVector& k = P.knots(edge_dir(t.edge));
      const QuadratureRule g = gauss_legendre(std::max(P.degree_u(), P.degree_v()) + 1);
      for (int s : k.nonempty_spans())
        for (size_t a = 0; a < g.x.size(); ++a) {
          const double t1 = 0.5 * (k[s] + k[s + 1]) + 0.5 * (k[s + 1] - k[s]) * g.x[a];
          const auto [x, y] = edge_param(P, t.edge, t1);
          const BasisEval e = eval_basis(P, x, y);
          const auto [nrm, ds] = edge_normal(e, t.edge);
          bnd_.push_back({push_solution(t.patch, e), 0.5 * (k[s + 1] - k[s]) * g.w[a] * ds, t.value});
        }
    }
  }

  void build_coupling() {
    std::vector<int> parent(static_cast<size_t>(ndof_));
    for (int g = 0; g < ndof_; ++g) parent[g] = g;
    auto find = [&](int g) {
      while (parent[g] != g) g = parent[g] = parent[parent[g]];
      return g;
    };
    partner_.resize(model_.interfaces.size());
    for (size_t i = 0; i < model_.interfaces.size(); ++i) {
      const InterfacePair& ip = model_.interfaces[i];
      for (const auto& [a, b] : ip.matched) {
        const int ga = offsets_[ip.patch1] + a, gb = offsets_[ip.patch2] + b;
        partner_[i][ga] = gb;
        parent[find(ga)] = find(gb);
      }
    }
    std::vector<bool> fixed(static_cast<size_t>(ndof_), false);
    for (const auto& t : model_.boundary)
      if (t.kind == BcKind::dirichlet)
        for (int k : edge_indices(model_.patches[t.patch], t.edge)) fixed[offsets_[t.patch] + k] = true;
    // Lowest Dirichlet index per cluster, else lowest index.
    std::vector<int> best(static_cast<size_t>(ndof_), -1);
    for (int g = 0; g < ndof_; ++g) {
      int& b = best[find(g)];
      if (b < 0 || (fixed[g] && !fixed[b])) b = g;
    }
    master_.assign(static_cast<size_t>(ndof_), -1);
    for (int g = 0; g < ndof_; ++g) {
      const int m = best[find(g)];
      if (m != g) master_[g] = m;
    }
  }

  MultiPatchModel model_;
  std::shared_ptr<const DesignSpace> design_;
  SmoothingParams sp_;
  std::vector<int> offsets_;
  int ndof_ = 0;
  std::vector<ElemQp> elems_;
  std::vector<IfaceQp> ifaces_;
  std::vector<BndQp> bnd_;
  std::vector<int> idx_, didx_;
  std::vector<double> N_, Nx_, Ny_, dR_;
  std::vector<int> master_;
  std::vector<std::unordered_map<int, int>> partner_;
};

// Conductivity at an element point.
inline double elem_kappa(const Discretization& D, const Discretization::ElemQp& q, const Eigen::VectorXd& phi,
                         const KappaOverride& ov = {}) {
  const MultiPatchModel& m = D.model();
  switch (q.region) {
    case Region::inside: return ov.inside.value_or(m.kappa_inside);
    case Region::outside: return ov.outside.value_or(m.kappa_outside);
    case Region::sector: return ov.sector.value_or(m.kappa_sector);
    case Region::design:
      if (ov.design) return *ov.design;
      return kappa_at(D.design().value_at(D.design().qps()[q.design_qp], phi), m.design, D.smoothing());
  }
  return 0;
}

inline double iface_kappa(const Discretization& D, const Discretization::IfaceQp& q, int side,
                          const Eigen::VectorXd& phi, const KappaOverride& ov = {}) {
  const MultiPatchModel& m = D.model();
  switch (q.region[side]) {
    case Region::inside: return ov.inside.value_or(m.kappa_inside);
    case Region::outside: return ov.outside.value_or(m.kappa_outside);
    case Region::sector: return ov.sector.value_or(m.kappa_sector);
    case Region::design:
      if (ov.design) return *ov.design;
      return kappa_at(D.design_value(q.d[side], phi), m.design, D.smoothing());
  }
  return 0;
}

inline void bulk_triplets(const Discretization& D, const Eigen::VectorXd& phi, const KappaOverride& ov, Triplets& t) {
  for (const auto& q : D.elems()) {
    const double c = elem_kappa(D, q, phi, ov) * q.wdet;
    const auto& r = q.sol;
    for (int a = 0; a < r.cnt; ++a)
      for (int b = 0; b < r.cnt; ++b)
        t.emplace_back(D.idx(r, a), D.idx(r, b), c * (D.Nx(r, a) * D.Nx(r, b) + D.Ny(r, a) * D.Ny(r, b)));
  }
}

// Consistency (K^n) and stabilization (K^s) triplets. transpose_too adds (K^n)^T.
inline void nitsche_triplets(const Discretization& D, const Eigen::VectorXd& phi, const KappaOverride& ov, Triplets* kn,
                             Triplets* ks, bool transpose_too = false) {
  const double beta = D.model().nitsche.beta, gamma = D.model().nitsche.gamma;
  const double sigma[2] = {1.0, -1.0};
  const double cw[2] = {gamma, 1.0 - gamma};
  for (const auto& q : D.ifaces()) {
    const double kap[2] = {iface_kappa(D, q, 0, phi, ov), iface_kappa(D, q, 1, phi, ov)};
    for (int rs = 0; rs < 2; ++rs)
      for (int cs = 0; cs < 2; ++cs) {
        const auto& R = q.s[rs];
        const auto& C = q.s[cs];
        for (int a = 0; a < R.cnt; ++a)
          for (int b = 0; b < C.cnt; ++b) {
            if (kn) {
              const double dn = q.n.x() * D.Nx(C, b) + q.n.y() * D.Ny(C, b);
              const double v = -sigma[rs] * D.N(R, a) * cw[cs] * kap[cs] * dn * q.wds;
              kn->emplace_back(D.idx(R, a), D.idx(C, b), v);
              if (transpose_too) kn->emplace_back(D.idx(C, b), D.idx(R, a), v);
            }
            if (ks) ks->emplace_back(D.idx(R, a), D.idx(C, b), beta * sigma[rs] * sigma[cs] * D.N(R, a) * D.N(C, b) * q.wds);
          }
      }
  }
}

inline SpMat from_triplets(int n, const Triplets& t) {
  SpMat K(n, n);
  K.setFromTriplets(t.begin(), t.end());
  return K;
}

inline SpMat assemble_bulk(const Discretization& D, const Eigen::VectorXd& phi, const KappaOverride& ov = {}) {
  Triplets t;
  bulk_triplets(D, phi, ov, t);
  return from_triplets(D.ndof(), t);
}

inline std::pair<SpMat, SpMat> assemble_nitsche(const Discretization& D, const Eigen::VectorXd& phi,
                                                const KappaOverride& ov = {}) {
  Triplets kn, ks;
  nitsche_triplets(D, phi, ov, &kn, &ks);
  return {from_triplets(D.ndof(), kn), from_triplets(D.ndof(), ks)};
}

// K = K^b + K^n + (K^n)^T + K^s
inline SpMat assemble_stiffness(const Discretization& D, const Eigen::VectorXd& phi, const KappaOverride& ov = {}) {
  Triplets t;
  bulk_triplets(D, phi, ov, t);
  nitsche_triplets(D, phi, ov, &t, &t, true);
  return from_triplets(D.ndof(), t);
}

inline Eigen::VectorXd assemble_flux(const Discretization& D) {
  Eigen::VectorXd F = Eigen::VectorXd::Zero(D.ndof());
  for (const auto& q : D.neumann())
    for (int a = 0; a < q.sol.cnt; ++a) F[D.idx(q.sol, a)] += D.N(q.sol, a) * q.q * q.wds;
  return F;
}

// beta * jump^2 on interface points, written on cluster variables: the jump of a
// matched pair is c_a - c_b and their common master cancels exactly, so the
// penalty never touches the absolute temperature level. Equivalent to K^s for
// matched nets, where both traces use the same edge basis.
inline void penalty_triplets_reduced(const Discretization& D, Triplets& t) {
  const double beta = D.model().nitsche.beta;
  std::vector<std::pair<int, double>> j;
  for (const auto& q : D.ifaces()) {
    j.clear();
    const auto& R = q.s[0];
    for (int k = 0; k < R.cnt; ++k) {
      const double N = D.N(R, k);
      const int a = D.idx(R, k), b = D.partner(q.iface, a);
      if (b < 0) {
        if (std::abs(N) > 1e-12) throw ModelError("interface trace uses an unmatched control point");
        continue;
      }
      if (D.master(a) >= 0) j.emplace_back(a, N);
      if (D.master(b) >= 0) j.emplace_back(b, -N);
    }
    for (const auto& [r, x] : j)
      for (const auto& [c, y] : j) t.emplace_back(r, c, beta * q.wds * x * y);
  }
}

// Q^T K Q with c = Q z (see Discretization::master), penalty added directly in z.
inline SpMat assemble_reduced(const Discretization& D, const Eigen::VectorXd& phi, const KappaOverride& ov = {}) {
  Triplets t, z;
  bulk_triplets(D, phi, ov, t);
  nitsche_triplets(D, phi, ov, &t, nullptr, true);
  z.reserve(2 * t.size());
  for (const auto& e : t) {
    const int r[2] = {e.row(), D.master(e.row())}, c[2] = {e.col(), D.master(e.col())};
    for (int a : r)
      if (a >= 0)
        for (int b : c)
          if (b >= 0) z.emplace_back(a, b, e.value());
  }
  penalty_triplets_reduced(D, z);
  return from_triplets(D.ndof(), z);
}

// Factorization of the Dirichlet-reduced system, reused by state and adjoint.
class SystemSolver {
 public:
  // Generic path: K and Dirichlet data in the same variables as the solution.
  void factorize(const SpMat& K, const std::vector<std::pair<int, double>>& dirichlet) {
    master_.clear();
    factorize_impl(K, dirichlet);
  }

  // Coupled model: assembles and factorizes in cluster variables.
  void factorize(const Discretization& D, const Eigen::VectorXd& phi, const KappaOverride& ov = {},
                 const std::function<double(const Vec2&)>& profile = nullptr) {
    const auto dir = D.dirichlet(profile);
    std::vector<double> cval(static_cast<size_t>(D.ndof()), 0.0);
    for (const auto& [g, v] : dir) cval[g] = v;
    std::vector<std::pair<int, double>> zdir;
    for (const auto& [g, v] : dir) zdir.emplace_back(g, D.master(g) < 0 ? v : v - cval[D.master(g)]);
    factorize_impl(assemble_reduced(D, phi, ov), zdir);
    master_.resize(static_cast<size_t>(D.ndof()));
    for (int g = 0; g < D.ndof(); ++g) master_[g] = D.master(g);
  }

  // Full-length state with Dirichlet values imposed.
  Eigen::VectorXd solve(const Eigen::VectorXd& F) const { return from_z(solve_z(to_z(F), true)); }

  // Homogeneous Dirichlet data; K is symmetric so the same factor serves K^T.
  Eigen::VectorXd solve_adjoint(const Eigen::VectorXd& Fadj) const { return from_z(solve_z(to_z(Fadj), false)); }

  const SpMat& Kff() const { return Kff_; }
  int free_index(int g) const { return free_[g]; }

 private:
  Eigen::VectorXd to_z(const Eigen::VectorXd& F) const {
    Eigen::VectorXd z = F;
    for (size_t g = 0; g < master_.size(); ++g)
      if (master_[g] >= 0) z[master_[g]] += F[g];
    return z;
  }
  Eigen::VectorXd from_z(const Eigen::VectorXd& z) const {
    Eigen::VectorXd c = z;
    for (size_t g = 0; g < master_.size(); ++g)
      if (master_[g] >= 0) c[g] += z[master_[g]];
    return c;
  }

  Eigen::VectorXd solve_z(const Eigen::VectorXd& F, bool with_dirichlet) const {
    Eigen::VectorXd rhs(nf_);
    for (int i = 0; i < n_; ++i)
      if (free_[i] >= 0) rhs[free_[i]] = F[i];
    if (with_dirichlet) rhs -= Kfd_ * dval_;
    const Eigen::VectorXd xf = ldlt_.solve(rhs);
    Eigen::VectorXd x = with_dirichlet ? dval_ : Eigen::VectorXd::Zero(n_);
    for (int i = 0; i < n_; ++i)
      if (free_[i] >= 0) x[i] = xf[free_[i]];
    return x;
  }

  void factorize_impl(const SpMat& K, const std::vector<std::pair<int, double>>& dirichlet) {
    n_ = static_cast<int>(K.rows());
    free_.assign(static_cast<size_t>(n_), 0);
    dval_ = Eigen::VectorXd::Zero(n_);
    std::vector<bool> fixed(static_cast<size_t>(n_), false);
    for (const auto& [g, v] : dirichlet) {
      fixed[g] = true;
      dval_[g] = v;
    }
    nf_ = 0;
    for (int i = 0; i < n_; ++i) free_[i] = fixed[i] ? -1 : nf_++;
    Triplets tff, tfd;
    for (int c = 0; c < K.outerSize(); ++c)
      for (SpMat::InnerIterator it(K, c); it; ++it) {
        const int r = static_cast<int>(it.row());
        if (free_[r] < 0) continue;
        if (free_[c] >= 0)
          tff.emplace_back(free_[r], free_[c], it.value());
        else
          tfd.emplace_back(free_[r], c, it.value());
      }
    Kff_.resize(nf_, nf_);
    Kff_.setFromTriplets(tff.begin(), tff.end());
    Kfd_.resize(nf_, n_);
    Kfd_.setFromTriplets(tfd.begin(), tfd.end());
    if (!analyzed_ || nnz_ != Kff_.nonZeros()) {
      ldlt_.analyzePattern(Kff_);
      analyzed_ = true;
      nnz_ = Kff_.nonZeros();
    }
    ldlt_.factorize(Kff_);
    bool bad = ldlt_.info() != Eigen::Success;
    if (!bad && nf_ > 0) {
      // Pivots against their own (permuted) diagonal entry: the system mixes
      // conductivity-scale and penalty-scale rows.
      const Eigen::VectorXd d = ldlt_.vectorD();
      const Eigen::VectorXd diag = ldlt_.permutationP() * Eigen::VectorXd(Kff_.diagonal());
      for (int i = 0; i < nf_ && !bad; ++i) bad = !(d[i] > 1e-10 * std::abs(diag[i]));
    }
    if (bad)
      throw SolverError(
          "singular or indefinite system after Dirichlet imposition (suspected cause: untagged boundary or a floating "
          "patch without Dirichlet data)");
  }

  int n_ = 0, nf_ = 0;
  std::vector<int> free_, master_;
  Eigen::VectorXd dval_;
  SpMat Kff_, Kfd_;
  Eigen::SimplicialLDLT<SpMat> ldlt_;
  bool analyzed_ = false;
  Eigen::Index nnz_ = -1;
};

struct SolveOptions {
  KappaOverride kappa;
  std::function<double(const Vec2&)> dirichlet_profile;
};

inline Eigen::VectorXd solve_state(const Discretization& D, const Eigen::VectorXd& phi, const SolveOptions& opt = {}) {
  SystemSolver s;
  s.factorize(D, phi, opt.kappa, opt.dirichlet_profile);
  return s.solve(assemble_flux(D));
}

inline Eigen::VectorXd solve_adjoint(const Discretization& D, const Eigen::VectorXd& phi, const Eigen::VectorXd& Fadj,
                                     const SolveOptions& opt = {}) {
  SystemSolver s;
  s.factorize(D, phi, opt.kappa, opt.dirichlet_profile);
  return s.solve_adjoint(Fadj);
}

// P^T (dK/dPhi_i) T for every design coefficient i, accumulated point-wise.
inline Eigen::VectorXd sensitivity_contraction(const Discretization& D, const Eigen::VectorXd& phi,
                                               const Eigen::VectorXd& T, const Eigen::VectorXd& P) {
  const DesignSpace& S = D.design();
  const MaterialPair& mat = D.model().design;
  const SmoothingParams& sp = D.smoothing();
  Eigen::VectorXd g = Eigen::VectorXd::Zero(S.num_coeffs());
  for (const auto& q : D.elems()) {
    if (q.design_qp < 0) continue;
    const auto& dq = S.qps()[q.design_qp];
    const double dk = dkappa_dphi(S.value_at(dq, phi), mat, sp);
    if (dk == 0.0) continue;
    const double s = dk * q.wdet * D.grad(q.sol, P).dot(D.grad(q.sol, T));
    for (int k = 0; k < dq.cnt; ++k) g[S.qp_index(dq, k)] += s * S.qp_R(dq, k);
  }
  const double gamma = D.model().nitsche.gamma;
  const double cw[2] = {gamma, 1.0 - gamma};
  for (const auto& q : D.ifaces()) {
    const double jP = D.value(q.s[0], P) - D.value(q.s[1], P);
    const double jT = D.value(q.s[0], T) - D.value(q.s[1], T);
    for (int side = 0; side < 2; ++side) {
      if (q.d[side].cnt == 0) continue;
      const double dk = dkappa_dphi(D.design_value(q.d[side], phi), mat, sp);
      if (dk == 0.0) continue;
      const double s =
          -q.wds * cw[side] * dk * (jP * q.n.dot(D.grad(q.s[side], T)) + jT * q.n.dot(D.grad(q.s[side], P)));
      for (int k = 0; k < q.d[side].cnt; ++k) g[D.didx(q.d[side], k)] += s * D.dR(q.d[side], k);
    }
  }
  return g;
}

// Two-stage refinement plus the matching design space and quadrature caches.
inline std::shared_ptr<const Discretization> make_discretization(const MultiPatchModel& base, const RefineSpec& design,
                                                                 const RefineSpec& solution, const SmoothingParams& sp,
                                                                 int quad_extra = 0) {
  TwoStage ts = two_stage_refine(base, design, solution);
  std::vector<NurbsPatch> integration;
  for (int id : ts.design_patch_ids) integration.push_back(ts.solution.patches[id]);
  auto space = std::make_shared<const DesignSpace>(std::move(ts.design), integration, ts.design_patch_ids,
                                                   base.symmetric, quad_extra);
  return std::make_shared<const Discretization>(std::move(ts.solution), std::move(space), sp, quad_extra);
}

}  // namespace isotopo
