#include <catch_amalgamated.hpp>

#include <cmath>
#include <numbers>
#include <random>

#include "isotopo/assembly.hpp"
#include "isotopo/levelset.hpp"
#include "isotopo/objectives.hpp"
#include "isotopo/oracle.hpp"

using namespace isotopo;
using Catch::Approx;

namespace {

std::shared_ptr<const Discretization> cloak_disc(RefineSpec design, RefineSpec solution, double delta = 0.5,
                                                 bool symmetric = true) {
  MultiPatchModel m = build_cloak_model();
  m.symmetric = symmetric;
  SmoothingParams sp;
  sp.delta = delta;
  return make_discretization(m, design, solution, sp);
}

double hausdorff(const std::vector<Vec2>& a, const std::vector<Vec2>& b) {
  double h = 0;
  for (int pass = 0; pass < 2; ++pass) {
    const auto& x = pass ? b : a;
    const auto& y = pass ? a : b;
    for (const auto& p : x) {
      double d = std::numeric_limits<double>::infinity();
      for (const auto& q : y) d = std::min(d, (p - q).norm());
      h = std::max(h, d);
    }
  }
  return h;
}

}  // namespace

TEST_CASE("smoothed Heaviside and Dirac", "[levelset]") {
  for (double alpha : {0.0, 1e-3, 0.2}) {
    for (double delta : {0.005, 0.05, 0.5}) {
      SmoothingParams sp{delta, alpha};
      REQUIRE(heaviside(0.0, sp) == Approx(0.5 * (1 + alpha)).margin(1e-15));
      REQUIRE(heaviside(delta, sp) == Approx(1.0).margin(1e-15));
      REQUIRE(heaviside(-delta, sp) == Approx(alpha).margin(1e-15));
      REQUIRE(heaviside(3 * delta, sp) == 1.0);
      REQUIRE(heaviside(-3 * delta, sp) == alpha);
      REQUIRE(dirac(1.5 * delta, sp) == 0.0);
      // The Dirac is a quadratic on its support, so 5-point Gauss is exact.
      const QuadratureRule g = gauss_legendre(5);
      double integral = 0;
      for (size_t i = 0; i < g.x.size(); ++i) integral += g.w[i] * delta * dirac(g.x[i] * delta, sp);
      REQUIRE(integral == Approx(1.0 - alpha).margin(1e-10));
      // dirac = dH/dphi with O(h^2) central differences.
      for (double t : {-0.9, -0.3, 0.0, 0.41, 0.8}) {
        const double phi = t * delta, e1 = 1e-3 * delta, e2 = 0.5e-3 * delta;
        const double fd1 = (heaviside(phi + e1, sp) - heaviside(phi - e1, sp)) / (2 * e1);
        const double fd2 = (heaviside(phi + e2, sp) - heaviside(phi - e2, sp)) / (2 * e2);
        const double err1 = std::abs(fd1 - dirac(phi, sp)), err2 = std::abs(fd2 - dirac(phi, sp));
        REQUIRE(err1 <= 1e-6 * dirac(0.0, sp));
        if (err1 > 1e-9 * dirac(0.0, sp)) REQUIRE(err2 / err1 == Approx(0.25).margin(0.02));
      }
    }
  }
  SmoothingParams bad{0.0, 0.0};
  REQUIRE_THROWS_AS(bad.validate(), ConfigError);
}

TEST_CASE("variable maps", "[levelset]") {
  const VariableMap id = VariableMap::identity(4);
  const Eigen::VectorXd x = Eigen::Vector4d(1, 2, 3, 4);
  REQUIRE(id.expand(x) == x);
  // Folding (x, y) -> (|x|, |y|) merges the four mirror copies.
  const std::vector<Vec2> pts = {{1, 2}, {-1, 2}, {1, -2}, {-1, -2}, {0, 3}, {0, -3}};
  const VariableMap m = cluster_variables(pts, true, 1e-12);
  REQUIRE(m.num_vars() == 2);
  const Eigen::VectorXd phi = m.expand(Eigen::Vector2d(5, 7));
  REQUIRE(phi == (Eigen::VectorXd(6) << 5, 5, 5, 5, 7, 7).finished());
  // reduce is the transpose of expand.
  Eigen::VectorXd g(6);
  g << 1, 2, 3, 4, 5, 6;
  REQUIRE(m.reduce(g) == Eigen::Vector2d(10, 11));
  REQUIRE(Eigen::VectorXd(m.matrix().transpose() * g) == m.reduce(g));
  REQUIRE(cluster_variables(pts, false, 1e-12).num_vars() == 6);
  REQUIRE_THROWS_AS(VariableMap({0, 3}, 2), ConfigError);
}

TEST_CASE("design field is continuous across patch seams", "[levelset]") {
  auto D = cloak_disc({2, 1, 3, 4, 0}, {2, 1, 6, 8, 0}, 0.5, false);
  const DesignSpace& S = D->design();
  std::mt19937 rng(3);
  std::normal_distribution<double> n;
  Eigen::VectorXd x(S.vars().num_vars());
  for (Eigen::Index i = 0; i < x.size(); ++i) x[i] = n(rng);
  const DesignField f = DesignField::from_vars(D->design_ptr(), x);
  // Right end of patch d meets the left end of patch d+1.
  for (int d = 0; d < 4; ++d)
    for (double eta : {0.0, 0.3, 1.0}) {
      const int e = (d + 1) % 4;
      const Vec2 a = eval_point(S.patch(d), 1.0, eta), b = eval_point(S.patch(e), 0.0, eta);
      REQUIRE((a - b).norm() < 1e-10);
      REQUIRE(S.value(d, 1.0, eta, f.coeffs) == Approx(S.value(e, 0.0, eta, f.coeffs)).margin(1e-12));
    }
}

TEST_CASE("projection reproduces functions in the design space", "[levelset]") {
  auto D = cloak_disc({2, 1, 3, 4, 0}, {2, 1, 6, 8, 0});
  // r - 30 is linear along the radial lines of the ring patches.
  const DesignField f = make_field(D->design_ptr(), [](const Vec2& x) { return x.norm() - 30.0; });
  for (const auto& q : D->design().qps()) REQUIRE(D->design().value_at(q, f.coeffs) == Approx(q.x.norm() - 30).margin(1e-9));
  // Symmetric data stays symmetric: the field's variable vector reproduces it.
  REQUIRE((DesignField::from_vars(D->design_ptr(), f.vars()).coeffs - f.coeffs).norm() < 1e-9);
}

TEST_CASE("interface points and perimeter of a circle", "[levelset]") {
  // The band 2*delta must span several elements for the quadrature to see the Dirac.
  auto D = cloak_disc({2, 1, 3, 4, 0}, {2, 1, 12, 16, 0}, 3.0);
  const DesignField f = make_field(D->design_ptr(), [](const Vec2& x) { return x.norm() - 30.0; });
  const auto pts = interface_points(f);
  REQUIRE(pts.size() > 100);
  for (const auto& p : pts) REQUIRE(p.norm() == Approx(30.0).margin(1e-8));
  REQUIRE(perimeter(f, D->smoothing()) == Approx(2 * std::numbers::pi * 30).epsilon(0.01));
  REQUIRE(interface_points(make_field(D->design_ptr(), [](const Vec2&) { return 1.0; })).empty());
  REQUIRE_THROWS_AS(interface_points(f, 0), ConfigError);
}

TEST_CASE("reinitialization restores a unit gradient and keeps the contour", "[levelset]") {
  const double delta = 0.5;
  auto D = cloak_disc({2, 2, 8, 8, 0}, {2, 2, 8, 8, 0}, delta, false);
  const DesignSpace& S = D->design();
  // Stretched (x3) distance-like field around a wavy contour.
  const DesignField f = make_field(D->design_ptr(), [](const Vec2& x) {
    return 3.0 * (x.norm() - 30.0 - 2.0 * std::cos(4 * std::atan2(x.y(), x.x())));
  });
  ReinitReport rep;
  const DesignField g = reinitialize(f, 20, 0.0, &rep);
  REQUIRE(rep.performed);
  int band = 0;
  for (const auto& q : S.qps()) {
    if (std::abs(S.value_at(q, g.coeffs)) > 2 * delta) continue;
    ++band;
    const double n = S.grad_at(q, g.coeffs).norm();
    REQUIRE(n >= 0.9);
    REQUIRE(n <= 1.1);
  }
  REQUIRE(band > 50);
  REQUIRE(hausdorff(interface_points(f), interface_points(g)) <= 1e-3 * S.diameter());
  // No interface: nothing to do.
  ReinitReport none;
  const DesignField c = make_field(D->design_ptr(), [](const Vec2&) { return 2.0; });
  const DesignField c2 = reinitialize(c, 20, 0.0, &none);
  REQUIRE_FALSE(none.performed);
  REQUIRE(c2.coeffs == c.coeffs);
}

TEST_CASE("volume and Tikhonov gradients match finite differences", "[levelset]") {
  auto D = cloak_disc({2, 1, 3, 4, 0}, {2, 1, 6, 8, 0}, 2.0, false);
  const auto S = D->design_ptr();
  const DesignField f = make_field(S, [](const Vec2& x) { return 0.3 * (x.norm() - 30.0) + 0.1 * x.x(); });
  const VolumeMeasure v = volume_measure(f, D->smoothing());
  auto vol = [&](const Eigen::VectorXd& c) { return volume_measure(DesignField{S, c}, D->smoothing()).value; };
  const Eigen::VectorXd fd = oracle::fd_gradient(vol, f.coeffs, 1e-5);
  REQUIRE((fd - v.grad).cwiseAbs().maxCoeff() <= 1e-5 * std::max(1.0, v.grad.cwiseAbs().maxCoeff()));
  REQUIRE(v.value > 0);
  REQUIRE(v.value < S->area());
  const RegTerm t = tikhonov(f);
  auto tk = [&](const Eigen::VectorXd& c) { return tikhonov(DesignField{S, c}).J; };
  const Eigen::VectorXd ft = oracle::fd_gradient(tk, f.coeffs, 1e-4);
  REQUIRE((ft - t.grad).cwiseAbs().maxCoeff() <= 1e-6 * std::max(1.0, t.grad.cwiseAbs().maxCoeff()));
  // |grad(0.3 r)|^2 = 0.09 away from the x-tilt; a pure distance field gives the area.
  const DesignField r = make_field(S, [](const Vec2& x) { return x.norm(); });
  REQUIRE(tikhonov(r).J == Approx(S->area()).epsilon(1e-6));
}
