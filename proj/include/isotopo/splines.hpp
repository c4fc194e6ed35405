#pragma once

#include <Eigen/Dense>

#include <algorithm>
#include <array>
#include <cmath>
#include <numbers>
#include <string>
#include <vector>

#include "errors.hpp"

namespace isotopo {

using Vec2 = Eigen::Vector2d;

class KnotVector {
 public:
  KnotVector() = default;
  KnotVector(std::vector<double> values, int degree) : values_(std::move(values)), degree_(degree) { validate(); }

  int degree() const { return degree_; }
  const std::vector<double>& values() const { return values_; }
  int size() const { return static_cast<int>(values_.size()); }
  int num_basis() const { return size() - degree_ - 1; }
  double front() const { return values_.front(); }
  double back() const { return values_.back(); }
  double operator[](int i) const { return values_[static_cast<size_t>(i)]; }

  // Index s with knots[s] <= u < knots[s+1]; u == back() maps to the last nonempty span.
  int find_span(double u) const {
    const double tol = 1e-12 * std::max(1.0, back() - front());
    if (u < front() - tol || u > back() + tol)
      throw DomainError("parameter " + std::to_string(u) + " outside knot range [" + std::to_string(front()) + ", " +
                        std::to_string(back()) + "]");
    const int n = num_basis() - 1;
    if (u >= values_[n + 1]) return n;
    if (u <= values_[degree_]) return degree_;
    int low = degree_, high = n + 1;
    int mid = (low + high) / 2;
    while (u < values_[mid] || u >= values_[mid + 1]) {
      if (u < values_[mid])
        high = mid;
      else
        low = mid;
      mid = (low + high) / 2;
    }
    return mid;
  }

  std::vector<double> unique() const {
    std::vector<double> out;
    for (double k : values_)
      if (out.empty() || k > out.back()) out.push_back(k);
    return out;
  }

  int multiplicity(double u) const {
    return static_cast<int>(std::count_if(values_.begin(), values_.end(), [u](double k) { return k == u; }));
  }

  // Nonzero-length spans [values[s], values[s+1]) given by their span index s.
  std::vector<int> nonempty_spans() const {
    std::vector<int> out;
    for (int s = degree_; s < num_basis(); ++s)
      if (values_[s + 1] > values_[s]) out.push_back(s);
    return out;
  }

  // Greville abscissae.
  std::vector<double> greville() const {
    std::vector<double> g(static_cast<size_t>(num_basis()));
    for (int i = 0; i < num_basis(); ++i) {
      if (degree_ == 0) {
        g[i] = 0.5 * (values_[i] + values_[i + 1]);
        continue;
      }
      double s = 0.0;
      for (int k = 1; k <= degree_; ++k) s += values_[i + k];
      g[i] = s / degree_;
    }
    return g;
  }

 private:
  void validate() const {
    if (degree_ < 0) throw GeometryError("negative degree");
    if (size() < 2 * (degree_ + 1)) throw GeometryError("knot vector too short for its degree");
    for (int i = 1; i < size(); ++i)
      if (values_[i] < values_[i - 1]) throw GeometryError("knot vector is decreasing");
    for (int i = 1; i <= degree_; ++i)
      if (values_[i] != values_[0] || values_[size() - 1 - i] != values_[size() - 1])
        throw GeometryError("knot vector is not clamped");
    if (!(back() > front())) throw GeometryError("knot vector has zero length");
    for (double k : unique())
      if (k > front() && k < back() && multiplicity(k) > degree_)
        throw GeometryError("interior knot multiplicity exceeds degree");
  }

  std::vector<double> values_;
  int degree_ = 0;
};

inline KnotVector open_uniform(int degree, int spans, double a = 0.0, double b = 1.0) {
  std::vector<double> k(static_cast<size_t>(degree), a);
  for (int i = 0; i <= spans; ++i) k.push_back(a + (b - a) * i / spans);
  k.insert(k.end(), static_cast<size_t>(degree), b);
  return {k, degree};
}

// Nonzero B-spline values N_{span-p..span} of degree p (Piegl-Tiller A2.2).
inline void bspline_values(const KnotVector& kv, int p, int span, double u, double* N) {
  std::array<double, 32> left{}, right{};
  N[0] = 1.0;
  for (int j = 1; j <= p; ++j) {
    left[j] = u - kv[span + 1 - j];
    right[j] = kv[span + j] - u;
    double saved = 0.0;
    for (int r = 0; r < j; ++r) {
      const double temp = N[r] / (right[r + 1] + left[j - r]);
      N[r] = saved + right[r + 1] * temp;
      saved = left[j - r] * temp;
    }
    N[j] = saved;
  }
}

// Nonzero values and first derivatives of the degree-p functions on `span`.
inline void bspline_ders(const KnotVector& kv, int span, double u, double* N, double* dN) {
  const int p = kv.degree();
  if (p > 30) throw GeometryError("degree too high");
  bspline_values(kv, p, span, u, N);
  if (p == 0) {
    dN[0] = 0.0;
    return;
  }
  std::array<double, 32> lower{};
  bspline_values(kv, p - 1, span, u, lower.data());
  for (int a = 0; a <= p; ++a) {
    const int k = span - p + a;
    double d = 0.0;
    if (a >= 1) {
      const double den = kv[k + p] - kv[k];
      if (den > 0) d += lower[a - 1] / den;
    }
    if (a <= p - 1) {
      const double den = kv[k + p + 1] - kv[k + 1];
      if (den > 0) d -= lower[a] / den;
    }
    dN[a] = p * d;
  }
}

struct BasisEval {
  int span_u = 0, span_v = 0;
  std::vector<int> index;  // local patch indices i + nu*j
  std::vector<double> R, dR_dxi, dR_deta, dR_dx, dR_dy;
  Vec2 point = Vec2::Zero();
  Eigen::Matrix2d jacobian = Eigen::Matrix2d::Zero();  // columns: d x / d xi, d x / d eta
  double det = 0.0;
};

enum class Dir { u = 0, v = 1 };

class NurbsPatch {
 public:
  NurbsPatch() = default;
  NurbsPatch(KnotVector ku, KnotVector kv, std::vector<Vec2> points, std::vector<double> weights)
      : ku_(std::move(ku)), kv_(std::move(kv)), points_(std::move(points)), weights_(std::move(weights)) {
    if (static_cast<int>(points_.size()) != nu() * nv() || points_.size() != weights_.size())
      throw GeometryError("control grid does not match knot vectors");
    for (double w : weights_)
      if (!(w > 0)) throw GeometryError("non-positive NURBS weight");
  }

  const KnotVector& knots(Dir d) const { return d == Dir::u ? ku_ : kv_; }
  const KnotVector& knots_u() const { return ku_; }
  const KnotVector& knots_v() const { return kv_; }
  int degree_u() const { return ku_.degree(); }
  int degree_v() const { return kv_.degree(); }
  int nu() const { return ku_.num_basis(); }
  int nv() const { return kv_.num_basis(); }
  int size() const { return nu() * nv(); }
  int index(int i, int j) const { return i + nu() * j; }
  const std::vector<Vec2>& points() const { return points_; }
  const std::vector<double>& weights() const { return weights_; }
  const Vec2& point(int i, int j) const { return points_[index(i, j)]; }
  double weight(int i, int j) const { return weights_[index(i, j)]; }
  void transform(const Eigen::Matrix2d& A, const Vec2& b) {
    for (auto& P : points_) P = A * P + b;
  }

 private:
  KnotVector ku_, kv_;
  std::vector<Vec2> points_;
  std::vector<double> weights_;
};

// Rational basis, parametric and (optionally) physical first derivatives.
inline BasisEval eval_basis(const NurbsPatch& patch, double xi, double eta, bool physical = true) {
  const KnotVector& ku = patch.knots_u();
  const KnotVector& kv = patch.knots_v();
  const int p = ku.degree(), q = kv.degree();
  BasisEval e;
  e.span_u = ku.find_span(xi);
  e.span_v = kv.find_span(eta);
  xi = std::clamp(xi, ku.front(), ku.back());
  eta = std::clamp(eta, kv.front(), kv.back());
  std::array<double, 32> Nu{}, dNu{}, Nv{}, dNv{};
  bspline_ders(ku, e.span_u, xi, Nu.data(), dNu.data());
  bspline_ders(kv, e.span_v, eta, Nv.data(), dNv.data());

  const int n = (p + 1) * (q + 1);
  e.index.resize(n);
  e.R.resize(n);
  e.dR_dxi.resize(n);
  e.dR_deta.resize(n);
  double W = 0, Wxi = 0, Weta = 0;
  int k = 0;
  for (int b = 0; b <= q; ++b) {
    for (int a = 0; a <= p; ++a, ++k) {
      const int i = e.span_u - p + a, j = e.span_v - q + b;
      const double w = patch.weight(i, j);
      e.index[k] = patch.index(i, j);
      e.R[k] = Nu[a] * Nv[b] * w;
      e.dR_dxi[k] = dNu[a] * Nv[b] * w;
      e.dR_deta[k] = Nu[a] * dNv[b] * w;
      W += e.R[k];
      Wxi += e.dR_dxi[k];
      Weta += e.dR_deta[k];
    }
  }
  for (k = 0; k < n; ++k) {
    const double r = e.R[k] / W;
    e.dR_dxi[k] = (e.dR_dxi[k] - r * Wxi) / W;
    e.dR_deta[k] = (e.dR_deta[k] - r * Weta) / W;
    e.R[k] = r;
    const Vec2& P = patch.points()[e.index[k]];
    e.point += r * P;
    e.jacobian.col(0) += e.dR_dxi[k] * P;
    e.jacobian.col(1) += e.dR_deta[k] * P;
  }
  e.det = e.jacobian.determinant();
  if (physical) {
    if (!(e.det > 0))
      throw GeometryError("degenerate or inverted Jacobian (det=" + std::to_string(e.det) + ") at (" +
                          std::to_string(xi) + ", " + std::to_string(eta) + ")");
    const Eigen::Matrix2d invT = e.jacobian.inverse().transpose();
    e.dR_dx.resize(n);
    e.dR_dy.resize(n);
    for (k = 0; k < n; ++k) {
      const Vec2 g = invT * Vec2(e.dR_dxi[k], e.dR_deta[k]);
      e.dR_dx[k] = g.x();
      e.dR_dy[k] = g.y();
    }
  }
  return e;
}

inline Vec2 eval_point(const NurbsPatch& patch, double xi, double eta) {
  return eval_basis(patch, xi, eta, false).point;
}

namespace detail {

using Hom = Eigen::Vector3d;  // (w x, w y, w)

inline std::vector<Hom> line_of(const NurbsPatch& P, Dir d, int fixed) {
  const int n = d == Dir::u ? P.nu() : P.nv();
  std::vector<Hom> c(static_cast<size_t>(n));
  for (int k = 0; k < n; ++k) {
    const int i = d == Dir::u ? k : fixed, j = d == Dir::u ? fixed : k;
    const double w = P.weight(i, j);
    c[k] = Hom(w * P.point(i, j).x(), w * P.point(i, j).y(), w);
  }
  return c;
}

// Rebuilds a patch from homogeneous lines running along direction d.
inline NurbsPatch assemble(const NurbsPatch& old, Dir d, const KnotVector& kd, const std::vector<std::vector<Hom>>& lines) {
  const KnotVector ku = d == Dir::u ? kd : old.knots_u();
  const KnotVector kv = d == Dir::u ? old.knots_v() : kd;
  const int nu = ku.num_basis(), nv = kv.num_basis();
  std::vector<Vec2> pts(static_cast<size_t>(nu * nv));
  std::vector<double> w(static_cast<size_t>(nu * nv));
  for (int j = 0; j < nv; ++j)
    for (int i = 0; i < nu; ++i) {
      const Hom& h = d == Dir::u ? lines[j][i] : lines[i][j];
      pts[i + nu * j] = Vec2(h.x() / h.z(), h.y() / h.z());
      w[i + nu * j] = h.z();
    }
  return {ku, kv, std::move(pts), std::move(w)};
}

}  // namespace detail

// Boehm insertion of each knot in `new_knots` along direction d.
inline NurbsPatch knot_insert(const NurbsPatch& patch, const std::vector<double>& new_knots, Dir d) {
  if (new_knots.empty()) return patch;
  const KnotVector& k0 = patch.knots(d);
  const int p = k0.degree();
  const int nlines = d == Dir::u ? patch.nv() : patch.nu();
  std::vector<std::vector<detail::Hom>> lines(static_cast<size_t>(nlines));
  for (int l = 0; l < nlines; ++l) lines[l] = detail::line_of(patch, d, l);
  std::vector<double> U = k0.values();
  for (double u : new_knots) {
    if (!(u > U.front() && u < U.back()))
      throw RefinementError("inserted knot " + std::to_string(u) + " not inside the parametric range");
    const KnotVector cur(U, p);
    const int s = cur.multiplicity(u);
    if (s + 1 > p) throw RefinementError("knot insertion exceeds multiplicity limit at " + std::to_string(u));
    const int k = cur.find_span(u);
    for (auto& c : lines) {
      std::vector<detail::Hom> q(c.size() + 1);
      for (int i = 0; i <= k - p; ++i) q[i] = c[i];
      for (int i = k - s + 1; i <= static_cast<int>(c.size()); ++i) q[i] = c[i - 1];
      for (int i = k - p + 1; i <= k - s; ++i) {
        const double a = (u - U[i]) / (U[i + p] - U[i]);
        q[i] = a * c[i] + (1.0 - a) * c[i - 1];
      }
      c = std::move(q);
    }
    U.insert(std::upper_bound(U.begin(), U.end(), u), u);
  }
  return detail::assemble(patch, d, KnotVector(U, p), lines);
}

// Degree elevation by t: every distinct knot gains multiplicity t. New homogeneous
// control points are recovered by collocation at the Greville points of the new
// basis, which is exact because the old spline space is a subspace of the new one.
inline NurbsPatch degree_elevate(const NurbsPatch& patch, int t, Dir d) {
  if (t < 0) throw RefinementError("negative degree increment");
  if (t == 0) return patch;
  const KnotVector& k0 = patch.knots(d);
  const int p = k0.degree(), pn = p + t;
  std::vector<double> U;
  for (double k : k0.unique()) U.insert(U.end(), static_cast<size_t>(k0.multiplicity(k) + t), k);
  const KnotVector k1(U, pn);
  const int n0 = k0.num_basis(), n1 = k1.num_basis();
  const std::vector<double> g = k1.greville();

  Eigen::MatrixXd A = Eigen::MatrixXd::Zero(n1, n1), B = Eigen::MatrixXd::Zero(n1, n0);
  std::array<double, 32> N{};
  for (int r = 0; r < n1; ++r) {
    const int s1 = k1.find_span(g[r]);
    bspline_values(k1, pn, s1, g[r], N.data());
    for (int a = 0; a <= pn; ++a) A(r, s1 - pn + a) = N[a];
    const int s0 = k0.find_span(g[r]);
    bspline_values(k0, p, s0, g[r], N.data());
    for (int a = 0; a <= p; ++a) B(r, s0 - p + a) = N[a];
  }
  const Eigen::MatrixXd C = A.partialPivLu().solve(B);  // new = C * old

  const int nlines = d == Dir::u ? patch.nv() : patch.nu();
  std::vector<std::vector<detail::Hom>> lines(static_cast<size_t>(nlines));
  for (int l = 0; l < nlines; ++l) {
    const auto c = detail::line_of(patch, d, l);
    lines[l].assign(static_cast<size_t>(n1), detail::Hom::Zero());
    for (int r = 0; r < n1; ++r)
      for (int i = 0; i < n0; ++i)
        if (C(r, i) != 0.0) lines[l][r] += C(r, i) * c[i];
  }
  return detail::assemble(patch, d, k1, lines);
}

// Splits every nonempty span of direction d into `parts` equal pieces.
inline NurbsPatch subdivide(const NurbsPatch& patch, int parts, Dir d) {
  if (parts < 1) throw RefinementError("span subdivision count must be >= 1");
  const KnotVector& k = patch.knots(d);
  std::vector<double> ins;
  for (int s : k.nonempty_spans())
    for (int m = 1; m < parts; ++m) ins.push_back(k[s] + (k[s + 1] - k[s]) * m / parts);
  return knot_insert(patch, ins, d);
}

struct QuadratureRule {
  std::vector<double> x, w;  // on [-1, 1]
};

inline QuadratureRule gauss_legendre(int n) {
  if (n < 1) throw ConfigError("quadrature order must be >= 1");
  QuadratureRule q;
  q.x.resize(n);
  q.w.resize(n);
  for (int i = 0; i < n; ++i) {
    double z = std::cos(std::numbers::pi * (i + 0.75) / (n + 0.5));
    double dp = 0;
    for (int it = 0; it < 100; ++it) {
      double p0 = 1.0, p1 = 0.0;
      for (int k = 1; k <= n; ++k) {
        const double p2 = p1;
        p1 = p0;
        p0 = ((2.0 * k - 1.0) * z * p1 - (k - 1.0) * p2) / k;
      }
      dp = n * (z * p0 - p1) / (z * z - 1.0);
      const double dz = p0 / dp;
      z -= dz;
      if (std::abs(dz) < 1e-16) break;
    }
    q.x[i] = -z;
    q.w[i] = 2.0 / ((1.0 - z * z) * dp * dp);
  }
  return q;
}

struct ParamQp {
  double xi, eta, w;  // w: parametric weight (span Jacobian included)
};

// Tensor Gauss rule with (p+1+extra) x (q+1+extra) points on every nonempty span,
// spans visited u-fastest.
inline std::vector<ParamQp> patch_quadrature(const NurbsPatch& P, int extra = 0) {
  const QuadratureRule gu = gauss_legendre(P.degree_u() + 1 + extra);
  const QuadratureRule gv = gauss_legendre(P.degree_v() + 1 + extra);
  std::vector<ParamQp> out;
  const auto& ku = P.knots_u();
  const auto& kv = P.knots_v();
  for (int sv : kv.nonempty_spans())
    for (int su : ku.nonempty_spans()) {
      const double au = ku[su], bu = ku[su + 1], av = kv[sv], bv = kv[sv + 1];
      for (size_t b = 0; b < gv.x.size(); ++b)
        for (size_t a = 0; a < gu.x.size(); ++a)
          out.push_back({0.5 * (au + bu) + 0.5 * (bu - au) * gu.x[a], 0.5 * (av + bv) + 0.5 * (bv - av) * gv.x[b],
                         0.25 * (bu - au) * (bv - av) * gu.w[a] * gv.w[b]});
    }
  return out;
}

}  // namespace isotopo
