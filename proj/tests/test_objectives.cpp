#include <catch_amalgamated.hpp>

#include <cmath>
#include <random>

#include "isotopo/objectives.hpp"
#include "isotopo/oracle.hpp"

using namespace isotopo;
using Catch::Approx;

namespace {

struct Case {
  std::shared_ptr<const Discretization> D;
  ObjectiveKind kind;
  DesignField f;
};

// Wavy interface through the design ring plus a little noise, so that many
// coefficients sit inside the smoothing band.
DesignField wavy(const std::shared_ptr<const Discretization>& D, double r0, double amp, unsigned seed) {
  const DesignField base = make_field(D->design_ptr(), [=](const Vec2& x) {
    const double t = std::atan2(x.y(), x.x());
    return x.norm() - r0 - amp * std::cos(4 * t);
  });
  Eigen::VectorXd v = base.vars();
  std::mt19937 rng(seed);
  std::uniform_real_distribution<double> u(-0.3, 0.3);
  for (Eigen::Index i = 0; i < v.size(); ++i) v[i] += u(rng) * amp;
  return DesignField::from_vars(D->design_ptr(), v);
}

std::vector<Case> small_cases() {
  std::vector<Case> out;
  {
    auto D = make_discretization(build_annulus(), {2, 1, 3, 4, 0}, {2, 1, 8, 8, 0}, SmoothingParams{0.2, 0.0});
    out.push_back({D, ObjectiveKind::annular, wavy(D, 1.6, 0.1, 1)});
  }
  {
    auto D = make_discretization(build_cloak_model(), {2, 1, 3, 4, 0}, {2, 1, 3, 4, 0}, SmoothingParams{3.0, 0.0});
    out.push_back({D, ObjectiveKind::cloak, wavy(D, 30.0, 3.0, 2)});
  }
  {
    auto D = make_discretization(build_camouflage_model(), {2, 1, 3, 4, 0}, {2, 1, 3, 4, 0}, SmoothingParams{3.0, 0.0});
    out.push_back({D, ObjectiveKind::camouflage, wavy(D, 22.5, 3.0, 3)});
  }
  return out;
}

}  // namespace

TEST_CASE("adjoint gradient matches central differences", "[objectives]") {
  for (const auto& c : small_cases()) {
    CAPTURE(static_cast<int>(c.kind));
    REQUIRE(c.D->ndof() <= 500);
    const int n = c.D->design().vars().num_vars();
    REQUIRE(n <= 30);
    for (const auto& [chi, rho] : {std::pair{0.0, 0.0}, std::pair{1e-3, 1e-3}}) {
      const ObjectiveSpec spec = make_objective(*c.D, c.kind, chi, rho);
      const Eigen::VectorXd x = c.f.vars();
      const ObjectiveValue v = eval_total(spec, *c.D, c.f);
      auto J = [&](const Eigen::VectorXd& y) {
        return eval_total(spec, *c.D, DesignField::from_vars(c.D->design_ptr(), y)).J_total;
      };
      // Richardson-extrapolated central differences: the small components sit
      // next to much larger ones, so plain O(h^2) truncation would dominate them.
      // The larger step keeps solver round-off in J (about 1e-14 relative) out
      // of the difference quotient.
      const double h = 1e-3 * x.cwiseAbs().maxCoeff();
      const Eigen::VectorXd fd = (4 * oracle::fd_gradient(J, x, h / 2) - oracle::fd_gradient(J, x, h)) / 3;
      int checked = 0;
      for (int i = 0; i < n; ++i) {
        if (std::abs(v.g_vars[i]) < 1e-12) continue;
        CAPTURE(i, chi, v.g_vars[i], fd[i]);
        REQUIRE(std::abs(v.g_vars[i] - fd[i]) <= 1e-4 * std::abs(fd[i]));
        ++checked;
      }
      REQUIRE(checked >= n / 2);
    }
  }
}

TEST_CASE("objective composition", "[objectives]") {
  const auto cases = small_cases();
  const Case& c = cases[1];
  const ObjectiveSpec plain = make_objective(*c.D, c.kind);
  const ObjectiveValue v0 = eval_total(plain, *c.D, c.f);
  REQUIRE(v0.J_total == v0.J_main);
  const ObjectiveSpec reg = make_objective(*c.D, c.kind, 0.3, 0.7);
  const ObjectiveValue v = eval_total(reg, *c.D, c.f);
  REQUIRE(v.J_total == Approx(v.J_main + 0.3 * v.J_tknv + 0.7 * v.J_vol).epsilon(1e-14));
  REQUIRE((v.g_total - (v.g_main + 0.3 * v.g_tknv + 0.7 * v.g_vol)).cwiseAbs().maxCoeff() <=
          1e-12 * v.g_total.cwiseAbs().maxCoeff());
  REQUIRE((v.g_vars - c.D->design().vars().reduce(v.g_total)).norm() == 0.0);
  REQUIRE_THROWS_AS(make_objective(*c.D, c.kind, -1.0, 0.0), ConfigError);
}

TEST_CASE("a dominant volume term pushes the field down", "[objectives]") {
  const auto cases = small_cases();
  const Case& c = cases[1];
  const double delta = c.D->smoothing().delta;
  const DesignField f = make_field(c.D->design_ptr(), [&](const Vec2&) { return 0.5 * delta; });
  const ObjectiveSpec spec = make_objective(*c.D, c.kind, 0.0, 1e6);
  const ObjectiveValue v = eval_total(spec, *c.D, f);
  REQUIRE(v.g_vars.minCoeff() > 0);
  // Directional check along -1 by differences.
  const Eigen::VectorXd x = f.vars(), d = -Eigen::VectorXd::Ones(x.size());
  const double h = 1e-4 * delta;
  const double jp = eval_total(spec, *c.D, DesignField::from_vars(c.D->design_ptr(), x + h * d)).J_total;
  const double jm = eval_total(spec, *c.D, DesignField::from_vars(c.D->design_ptr(), x - h * d)).J_total;
  REQUIRE(jp < jm);
}

TEST_CASE("cloak normalization and reference fields", "[objectives]") {
  auto D = make_discretization(build_cloak_model(), {2, 1, 3, 4, 0}, {2, 1, 6, 8, 0}, SmoothingParams{0.5, 0.0});
  const ObjectiveSpec spec = make_objective(*D, ObjectiveKind::cloak);
  const MultiPatchModel& m = D->model();
  const Eigen::VectorXd phi = Eigen::VectorXd::Zero(D->design().num_coeffs());
  SolveOptions ins;
  ins.kappa.design = m.kappa_insulator;
  // Insulator filling is the normalization field itself.
  REQUIRE(eval_main(spec, *D, solve_state(*D, phi, ins)).J == Approx(1.0).epsilon(1e-12));
  // Reference filling reproduces the undisturbed field.
  SolveOptions ref;
  ref.kappa.inside = m.kappa_base;
  ref.kappa.design = m.kappa_base;
  REQUIRE(eval_main(spec, *D, solve_state(*D, phi, ref)).J <= 1e-20);
  // The bare obstacle disturbs the field; J is positive.
  SolveOptions bare;
  bare.kappa.design = m.kappa_base;
  const double jb = eval_main(spec, *D, solve_state(*D, phi, bare)).J;
  REQUIRE(jb > 0);
  REQUIRE(jb < 1);
}

TEST_CASE("cloak objective is invariant under a common conductivity scale", "[objectives]") {
  const double c = 7.5;
  MultiPatchModel a = build_cloak_model(), b = a;
  b.design = {c * a.design.k1, c * a.design.k2};
  b.kappa_inside *= c;
  b.kappa_outside *= c;
  b.kappa_sector *= c;
  b.kappa_base *= c;
  b.kappa_insulator *= c;
  const SmoothingParams sp{3.0, 0.0};
  auto Da = make_discretization(a, {2, 1, 3, 4, 0}, {2, 1, 3, 4, 0}, sp);
  auto Db = make_discretization(b, {2, 1, 3, 4, 0}, {2, 1, 3, 4, 0}, sp);
  const DesignField fa = wavy(Da, 30.0, 3.0, 4);
  const DesignField fb{Db->design_ptr(), fa.coeffs};
  const ObjectiveValue va = eval_total(make_objective(*Da, ObjectiveKind::cloak), *Da, fa);
  const ObjectiveValue vb = eval_total(make_objective(*Db, ObjectiveKind::cloak), *Db, fb);
  REQUIRE(vb.J_main == Approx(va.J_main).epsilon(1e-9));
  REQUIRE((vb.T - va.T).cwiseAbs().maxCoeff() <= 1e-9 * va.T.cwiseAbs().maxCoeff());
}

TEST_CASE("camouflage reference is the undisturbed two-sector plate", "[objectives]") {
  auto D = make_discretization(build_camouflage_model(), {2, 1, 3, 4, 0}, {2, 1, 3, 4, 0}, SmoothingParams{3.0, 0.0});
  const ObjectiveSpec spec = make_objective(*D, ObjectiveKind::camouflage);
  REQUIRE(spec.ref.J_norm > 0);
  const auto mask = evaluation_region(ObjectiveKind::camouflage);
  REQUIRE(mask[static_cast<int>(Region::inside)]);
  REQUIRE(mask[static_cast<int>(Region::design)]);
  REQUIRE(mask[static_cast<int>(Region::outside)]);
  REQUIRE_FALSE(mask[static_cast<int>(Region::sector)]);
  const ObjectiveValue v = eval_total(spec, *D, wavy(D, 22.5, 3.0, 5));
  REQUIRE(v.J_main >= 0);
}
