#include <catch_amalgamated.hpp>

#include <filesystem>
#include <fstream>
#include <random>
#include <sstream>

#include "isotopo/config.hpp"
#include "isotopo/io.hpp"

using namespace isotopo;
using Catch::Approx;
namespace fs = std::filesystem;

namespace {

fs::path scratch(const std::string& name) {
  const fs::path p = fs::temp_directory_path() / ("isotopo_test_" + name);
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

std::vector<std::string> lines(const fs::path& p) {
  std::ifstream in(p);
  std::vector<std::string> out;
  for (std::string l; std::getline(in, l);) out.push_back(l);
  return out;
}

}  // namespace

TEST_CASE("defaults parse for every problem", "[config]") {
  for (const char* p : {"annulus", "cloak", "camouflage"}) {
    CAPTURE(p);
    const RunConfig c = parse_config(default_config(p));
    REQUIRE(c.problem == p);
    REQUIRE(c.smoothing.delta > 0);
    REQUIRE(c.nitsche.beta == 1e12);
    REQUIRE(c.nitsche.gamma == 0.5);
    REQUIRE(c.topo.sqp.objective_limit == 1e-9);
    REQUIRE(c.topo.sqp.consecutive_steptol_stop == 4);
  }
  REQUIRE(parse_config(default_config("cloak")).topo.sqp.reinit_every_fevals == 100);
  REQUIRE(parse_config(default_config("camouflage")).topo.sqp.reinit_every_fevals == 300);
  REQUIRE_THROWS_AS(default_config("plate"), ConfigError);
}

TEST_CASE("overrides and file merging", "[config]") {
  json c = json::object();
  apply_override(c, "smoothing.delta=0.01");
  apply_override(c, "problem=cloak");
  apply_override(c, "initial.center=[1, 2]");
  apply_override(c, "design.symmetric=false");
  REQUIRE(c["smoothing"]["delta"] == 0.01);
  REQUIRE(c["problem"] == "cloak");
  REQUIRE(c["initial"]["center"][1] == 2);
  REQUIRE(c["design"]["symmetric"] == false);
  REQUIRE_THROWS_AS(apply_override(c, "no_equals"), ConfigError);
  REQUIRE_THROWS_AS(apply_override(c, "=3"), ConfigError);
  REQUIRE_THROWS_AS(apply_override(c, "a..b=3"), ConfigError);
  REQUIRE_THROWS_AS(apply_override(c, "problem.x=3"), ConfigError);

  const fs::path dir = scratch("merge");
  std::ofstream(dir / "c.json") << R"({"problem": "cloak", "design": {"circ_spans": 5}, "objective": {"chi": 0.01}})";
  const json j = load_config((dir / "c.json").string(), {"design.rad_spans=6", "smoothing.delta=0.25"});
  const RunConfig r = parse_config(j);
  REQUIRE(r.problem == "cloak");
  REQUIRE(r.design.circ_spans == 5);
  REQUIRE(r.design.rad_spans == 6);
  REQUIRE(r.design.p_circ == 2);  // untouched default survives the merge
  REQUIRE(r.smoothing.delta == 0.25);
  REQUIRE(r.chi == 0.01);
  REQUIRE(r.cloak_mat.high == 398.0);
  REQUIRE(r.cloak_mat.low == 0.27);

  std::ofstream(dir / "bad.json") << "[1, 2]";
  REQUIRE_THROWS_AS(load_config((dir / "bad.json").string()), ConfigError);
  REQUIRE_THROWS_AS(load_config((dir / "missing.json").string()), ConfigError);
}

TEST_CASE("invalid configurations are rejected", "[config]") {
  auto with = [](const std::string& kv) {
    json c = default_config("annulus");
    apply_override(c, kv);
    return c;
  };
  REQUIRE_THROWS_AS(parse_config(with("smoothing.delta=0")), ConfigError);
  REQUIRE_THROWS_AS(parse_config(with("smoothing.delta=\"wide\"")), ConfigError);
  REQUIRE_THROWS_AS(parse_config(with("nitsche.gamma=2")), ConfigError);
  REQUIRE_THROWS_AS(parse_config(with("objective.rho=-1")), ConfigError);
  REQUIRE_THROWS_AS(parse_config(with("optimizer.lower=-3")), ConfigError);
  REQUIRE_THROWS_AS(parse_config(with("materials.high=0")), ConfigError);
  REQUIRE_THROWS_AS(parse_config(with("initial.type=\"star\"")), ConfigError);
  REQUIRE_THROWS_AS(parse_config(with("output.grid=1")), ConfigError);
  REQUIRE_THROWS_AS(parse_config(with("quad_extra=-1")), ConfigError);
  json c = default_config("annulus");
  c["annulus"].erase("R_L");
  REQUIRE_THROWS_AS(parse_config(c), ConfigError);
  c = default_config("cloak");
  c["cloak_config"] = "IX";
  REQUIRE_THROWS(build_base_model(parse_config(c)));
}

TEST_CASE("initializers", "[config]") {
  InitialSpec s;
  s.type = "ring";
  s.r_inner = 2;
  s.r_outer = 4;
  auto f = make_initializer(s);
  REQUIRE(f({3, 0}) == Approx(-1.0));
  REQUIRE(f({0, 2}) == Approx(0.0).margin(1e-15));
  REQUIRE(f({5, 0}) == Approx(1.0));
  s.invert = true;
  REQUIRE(make_initializer(s)({3, 0}) == Approx(1.0));

  InitialSpec l;
  l.type = "lattice";
  l.n = 2;
  l.extent = 40;
  l.radius = 8;
  auto g = make_initializer(l);
  // Hole centres at (+-20, +-20).
  REQUIRE(g({20, -20}) == Approx(-8.0));
  REQUIRE(g({0, 0}) == Approx(std::sqrt(800.0) - 8.0));
  REQUIRE(parse_initial(json{{"type", "circles"}, {"circles", {{1, 2, 3}}}}).circles.size() == 1);
  REQUIRE_THROWS_AS(parse_initial(json{{"type", "circles"}, {"circles", {{1, 2}}}}), ConfigError);
}

TEST_CASE("built problems have the configured sizes", "[config]") {
  json c = default_config("cloak");
  apply_override(c, "solution.circ_spans=3");
  apply_override(c, "solution.rad_spans=4");
  const Problem p = build_problem(parse_config(c));
  REQUIRE(p.disc->ndof() == 325);
  REQUIRE(p.disc->design().vars().num_vars() == 25);
  REQUIRE(p.initial.coeffs.size() == p.disc->design().num_coeffs());
  const TopologyOptions t = topology_options(parse_config(c), p.disc->design());
  REQUIRE(t.sqp.lower.size() == 0);
  apply_override(c, "optimizer.lower=-5");
  apply_override(c, "optimizer.upper=5");
  const TopologyOptions u = topology_options(parse_config(c), p.disc->design());
  REQUIRE(u.sqp.lower.size() == 25);
  REQUIRE(u.sqp.upper.maxCoeff() == 5.0);
}

TEST_CASE("point location inverts the geometry map", "[io]") {
  for (const MultiPatchModel& m : {build_annulus(), build_cloak_model(), build_camouflage_model()}) {
    const PointLocator loc(m);
    std::mt19937 rng(3);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    for (int p = 0; p < m.num_patches(); ++p) {
      const NurbsPatch& P = m.patches[p];
      for (int k = 0; k < 10; ++k) {
        const double xi = P.knots_u().front() + u(rng) * (P.knots_u().back() - P.knots_u().front());
        const double eta = P.knots_v().front() + u(rng) * (P.knots_v().back() - P.knots_v().front());
        const Vec2 x = eval_point(P, xi, eta);
        const auto l = loc.locate(x);
        REQUIRE(l);
        // Points on shared edges may resolve to the neighbour; the image must agree.
        REQUIRE((eval_point(m.patches[l->patch], l->xi, l->eta) - x).norm() <= 1e-8 * model_scale(m));
      }
    }
  }
  const MultiPatchModel a = build_annulus();
  const PointLocator loc(a);
  REQUIRE_FALSE(loc.locate({0.0, 0.0}));
  REQUIRE_FALSE(loc.locate({2.5, 0.0}));
  REQUIRE_FALSE(loc.locate({1.9, 1.9}));
  REQUIRE(loc.locate({0.0, 1.5}));
}

TEST_CASE("field sampling and writers", "[io]") {
  auto D = make_discretization(build_camouflage_model(), {2, 1, 2, 2, 0}, {2, 1, 4, 4, 0}, SmoothingParams{1.0, 0.0});
  SolveOptions o;
  o.kappa = {3.0, 3.0, 3.0, 3.0};
  o.dirichlet_profile = [](const Vec2& x) { return 300 - 0.4 * x.x(); };
  const DesignField f = make_field(D->design_ptr(), [](const Vec2& x) { return x.norm() - 22.5; });
  const Eigen::VectorXd T = solve_state(*D, f.coeffs, o);
  const Grid g = bounding_grid(D->model(), 11);
  const auto samples = sample_grid(*D, T, f, g);
  REQUIRE(samples.size() == 121);
  int inside = 0;
  for (const auto& s : samples) {
    if (!s.inside) continue;
    ++inside;
    REQUIRE(s.T == Approx(300 - 0.4 * s.x.x()).margin(1e-6));
  }
  REQUIRE(inside == 121);  // the plate fills its bounding box

  const fs::path dir = scratch("writers");
  write_vtk(dir / "sub" / "f.vtk", g, samples);
  const auto vtk = lines(dir / "sub" / "f.vtk");
  REQUIRE(vtk[0] == "# vtk DataFile Version 3.0");
  REQUIRE(vtk[4] == "DIMENSIONS 11 11 1");
  REQUIRE(vtk[7] == "POINT_DATA 121");
  // Four scalar blocks and one vector block, one line per point each.
  REQUIRE(vtk.size() == 8 + 4 * (2 + 121) + 1 + 121);

  write_field_csv(dir / "f.csv", samples);
  const auto csv = lines(dir / "f.csv");
  REQUIRE(csv.front() == "x,y,T,Phi,kappa,qx,qy");
  REQUIRE(csv.size() == 122);

  Eigen::VectorXd c(4);
  c << 1.5, -2.25e-7, 3.0, 1.0 / 3.0;
  write_coefficients_csv(dir / "c.csv", c);
  const Eigen::VectorXd back = read_coefficients_csv(dir / "c.csv");
  REQUIRE(back.size() == 4);
  REQUIRE((back - c).cwiseAbs().maxCoeff() <= 1e-12);

  std::vector<IterationRecord> h(2);
  h[1].iter = 1;
  h[1].reinit = true;
  write_convergence_csv(dir / "conv.csv", h);
  const auto conv = lines(dir / "conv.csv");
  REQUIRE(conv.size() == 3);
  REQUIRE(conv[0] == "iter,fevals,J_main,J_Tknv,J_vol,J_total,g_inf,step,reinit");
  REQUIRE(conv[2].back() == '1');
  REQUIRE_THROWS_AS(read_coefficients_csv(dir / "none.csv"), ConfigError);
}
