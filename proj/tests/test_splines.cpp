#include <catch_amalgamated.hpp>

#include <cmath>
#include <functional>
#include <numbers>
#include <random>

#include "isotopo/model.hpp"
#include "isotopo/splines.hpp"

using namespace isotopo;
using Catch::Approx;

namespace {

// Independent oracle: textbook recursive definition with 0/0 := 0.
double cox_de_boor(const std::vector<double>& U, int i, int p, double u) {
  if (p == 0) {
    // Right end belongs to the last nonempty span.
    const bool last = u == U.back() && U[i] < U[i + 1] && U[i + 1] == U.back();
    return (U[i] <= u && u < U[i + 1]) || last ? 1.0 : 0.0;
  }
  double a = 0, b = 0;
  if (U[i + p] > U[i]) a = (u - U[i]) / (U[i + p] - U[i]) * cox_de_boor(U, i, p - 1, u);
  if (U[i + p + 1] > U[i + 1]) b = (U[i + p + 1] - u) / (U[i + p + 1] - U[i + 1]) * cox_de_boor(U, i + 1, p - 1, u);
  return a + b;
}

KnotVector random_knots(std::mt19937& rng, int p) {
  std::uniform_int_distribution<int> nk(1, 5), mult(1, p);
  std::uniform_real_distribution<double> pos(0.05, 0.95);
  std::vector<double> interior;
  const int m = nk(rng);
  for (int i = 0; i < m; ++i) {
    const double k = pos(rng);
    for (int r = 0, mm = mult(rng); r < mm; ++r) interior.push_back(k);
  }
  std::sort(interior.begin(), interior.end());
  std::vector<double> U(static_cast<size_t>(p + 1), 0.0);
  U.insert(U.end(), interior.begin(), interior.end());
  U.insert(U.end(), static_cast<size_t>(p + 1), 1.0);
  return {U, p};
}

NurbsPatch quarter_ring(double r0 = 1.0, double r1 = 2.0) {
  const double h = std::numbers::sqrt2 / 2.0;
  std::vector<Vec2> pts;
  std::vector<double> w;
  for (double R : {r1, r0}) {
    pts.emplace_back(R, 0);
    pts.emplace_back(R, R);
    pts.emplace_back(0, R);
    w.insert(w.end(), {1.0, h, 1.0});
  }
  return {open_uniform(2, 1), open_uniform(1, 1), pts, w};
}

}  // namespace

TEST_CASE("B-spline values agree with the recursive definition", "[splines]") {
  std::mt19937 rng(7);
  for (int trial = 0; trial < 40; ++trial) {
    const int p = 1 + trial % 4;
    const KnotVector kv = random_knots(rng, p);
    for (int s = 0; s <= 50; ++s) {
      const double u = s / 50.0;
      const int span = kv.find_span(u);
      std::array<double, 32> N{};
      bspline_values(kv, p, span, u, N.data());
      for (int i = 0; i < kv.num_basis(); ++i) {
        const double expected = cox_de_boor(kv.values(), i, p, u);
        const double got = (i >= span - p && i <= span) ? N[i - span + p] : 0.0;
        REQUIRE(got == Approx(expected).margin(1e-13));
      }
    }
  }
}

TEST_CASE("B-spline derivatives match central differences", "[splines]") {
  std::mt19937 rng(11);
  for (int trial = 0; trial < 20; ++trial) {
    const int p = 1 + trial % 4;
    const KnotVector kv = random_knots(rng, p);
    for (double u : {0.013, 0.31, 0.5013, 0.77, 0.991}) {
      const int span = kv.find_span(u);
      // Stay inside one span so the difference quotient sees a polynomial.
      const double h = 1e-6 * (kv[span + 1] - kv[span]);
      if (u - h < kv[span] || u + h >= kv[span + 1]) continue;
      std::array<double, 32> N{}, dN{};
      bspline_ders(kv, span, u, N.data(), dN.data());
      for (int a = 0; a <= p; ++a) {
        const int i = span - p + a;
        const double fd = (cox_de_boor(kv.values(), i, p, u + h) - cox_de_boor(kv.values(), i, p, u - h)) / (2 * h);
        REQUIRE(dN[a] == Approx(fd).epsilon(1e-6).margin(1e-5));
      }
    }
  }
}

TEST_CASE("knot vector validation and span lookup", "[splines]") {
  REQUIRE_THROWS_AS(KnotVector({0, 0, 1, 0.5, 1, 1}, 1), GeometryError);
  REQUIRE_THROWS_AS(KnotVector({0, 0.1, 0.5, 1, 1}, 1), GeometryError);
  REQUIRE_THROWS_AS(KnotVector({0, 0, 0.5, 0.5, 0.5, 1, 1}, 2), GeometryError);
  const KnotVector kv({0, 0, 0, 0.5, 1, 1, 1}, 2);
  REQUIRE(kv.num_basis() == 4);
  REQUIRE(kv.find_span(0.0) == 2);
  REQUIRE(kv.find_span(0.5) == 3);
  REQUIRE(kv.find_span(1.0) == 3);
  REQUIRE_THROWS_AS(kv.find_span(1.01), DomainError);
  REQUIRE_THROWS_AS(kv.find_span(-0.01), DomainError);
  const auto g = kv.greville();
  REQUIRE(g[0] == 0.0);
  REQUIRE(g[1] == Approx(0.25));
  REQUIRE(g[3] == 1.0);
}

TEST_CASE("rational basis: partition of unity and geometry reproduction", "[splines]") {
  const NurbsPatch P = subdivide(degree_elevate(quarter_ring(), 1, Dir::v), 3, Dir::u);
  for (double xi : {0.0, 0.2, 0.5, 0.9, 1.0})
    for (double eta : {0.0, 0.3, 0.77, 1.0}) {
      const BasisEval e = eval_basis(P, xi, eta);
      double s = 0, sx = 0, sy = 0;
      Vec2 x = Vec2::Zero(), gx = Vec2::Zero(), gy = Vec2::Zero();
      for (size_t k = 0; k < e.R.size(); ++k) {
        s += e.R[k];
        sx += e.dR_dx[k];
        sy += e.dR_dy[k];
        const Vec2& c = P.points()[e.index[k]];
        x += e.R[k] * c;
        gx += e.dR_dx[k] * c;
        gy += e.dR_dy[k] * c;
      }
      REQUIRE(s == Approx(1.0).margin(1e-14));
      REQUIRE(std::abs(sx) < 1e-12);
      REQUIRE(std::abs(sy) < 1e-12);
      REQUIRE((x - e.point).norm() < 1e-13);
      // Isoparametric: the physical gradient of x is the identity.
      REQUIRE((gx - Vec2(1, 0)).norm() < 1e-12);
      REQUIRE((gy - Vec2(0, 1)).norm() < 1e-12);
    }
}

TEST_CASE("quarter arcs are exact circles", "[splines]") {
  const NurbsPatch P = quarter_ring(1.0, 2.0);
  for (int s = 0; s <= 100; ++s) {
    const double xi = s / 100.0;
    REQUIRE(eval_point(P, xi, 0.0).norm() == Approx(2.0).epsilon(1e-14));
    REQUIRE(eval_point(P, xi, 1.0).norm() == Approx(1.0).epsilon(1e-14));
  }
}

TEST_CASE("refinement leaves the geometry unchanged", "[splines]") {
  const NurbsPatch P = quarter_ring();
  std::vector<std::function<NurbsPatch(const NurbsPatch&)>> ops = {
      [](const NurbsPatch& q) { return knot_insert(q, {0.3, 0.3, 0.71}, Dir::u); },
      [](const NurbsPatch& q) { return knot_insert(q, {0.25, 0.5}, Dir::v); },
      [](const NurbsPatch& q) { return degree_elevate(q, 2, Dir::u); },
      [](const NurbsPatch& q) { return degree_elevate(q, 1, Dir::v); },
      [](const NurbsPatch& q) { return subdivide(degree_elevate(q, 1, Dir::u), 4, Dir::u); },
  };
  for (const auto& op : ops) {
    const NurbsPatch Q = op(P);
    for (double xi : {0.0, 0.11, 0.3, 0.5, 0.87, 1.0})
      for (double eta : {0.0, 0.4, 1.0}) {
        REQUIRE((eval_point(Q, xi, eta) - eval_point(P, xi, eta)).norm() < 1e-13);
        const BasisEval a = eval_basis(P, xi, eta), b = eval_basis(Q, xi, eta);
        REQUIRE(b.det == Approx(a.det).epsilon(1e-11));
      }
  }
}

TEST_CASE("degree elevation keeps continuity at existing knots", "[splines]") {
  const NurbsPatch P = knot_insert(quarter_ring(), {0.5}, Dir::u);  // C1 at 0.5 for p=2
  const NurbsPatch Q = degree_elevate(P, 1, Dir::u);
  REQUIRE(Q.degree_u() == 3);
  REQUIRE(Q.knots_u().multiplicity(0.5) == 2);  // still C1 for p=3
  REQUIRE(Q.knots_u().multiplicity(0.0) == 4);
}

TEST_CASE("refinement input checks", "[splines]") {
  const NurbsPatch P = quarter_ring();
  REQUIRE_THROWS_AS(knot_insert(P, {1.5}, Dir::u), RefinementError);
  REQUIRE_THROWS_AS(knot_insert(P, {0.5, 0.5, 0.5}, Dir::u), RefinementError);
  REQUIRE_THROWS_AS(knot_insert(P, {0.0}, Dir::u), RefinementError);
  REQUIRE_THROWS_AS(degree_elevate(P, -1, Dir::u), RefinementError);
  REQUIRE_THROWS_AS(subdivide(P, 0, Dir::u), RefinementError);
}

TEST_CASE("Gauss-Legendre integrates polynomials of degree 2n-1 exactly", "[splines]") {
  for (int n = 1; n <= 8; ++n) {
    const QuadratureRule q = gauss_legendre(n);
    for (int d = 0; d <= 2 * n - 1; ++d) {
      double s = 0;
      for (int i = 0; i < n; ++i) s += q.w[i] * std::pow(q.x[i], d);
      const double exact = d % 2 ? 0.0 : 2.0 / (d + 1);
      REQUIRE(s == Approx(exact).margin(1e-14));
    }
  }
  REQUIRE_THROWS_AS(gauss_legendre(0), ConfigError);
}

TEST_CASE("patch quadrature integrates the quarter ring area", "[splines]") {
  const NurbsPatch P = subdivide(quarter_ring(1.0, 2.0), 3, Dir::u);
  double area = 0;
  for (const auto& q : patch_quadrature(P, 2)) area += q.w * eval_basis(P, q.xi, q.eta).det;
  REQUIRE(area == Approx(std::numbers::pi * 3.0 / 4.0).epsilon(1e-6));
}

TEST_CASE("inverted parametrization is rejected", "[splines]") {
  NurbsPatch P = quarter_ring();
  // Swap the rows: inner circle at v = 0 flips the orientation.
  std::vector<Vec2> pts(P.points().begin() + 3, P.points().end());
  pts.insert(pts.end(), P.points().begin(), P.points().begin() + 3);
  const NurbsPatch Q(P.knots_u(), P.knots_v(), pts, P.weights());
  REQUIRE_THROWS_AS(eval_basis(Q, 0.5, 0.5), GeometryError);
}
