// Batch front-end: solve, optimize, sweep, oracle.

#include <CLI11.hpp>

#include <cstdlib>
#include <filesystem>
#include <iostream>
#include <string>
#include <vector>

#include "isotopo/isotopo.hpp"

namespace fs = std::filesystem;
using namespace isotopo;

namespace {

struct Common {
  std::string config;
  std::vector<std::string> sets;
};

RunConfig load(const Common& c) {
  RunConfig cfg = parse_config(load_config(c.config, c.sets));
  if (const char* env = std::getenv("ISOTOPO_OUTPUT_DIR"); env && *env) cfg.output_dir = env;
  return cfg;
}

void write_state_files(const fs::path& dir, const RunConfig& cfg, const Discretization& D, const DesignField& f,
                       const Eigen::VectorXd& T) {
  write_coefficients_csv(dir / "coefficients.csv", f.coeffs);
  write_points_csv(dir / "interface.csv", interface_points(f, cfg.topo.reinit_lines));
  if (!cfg.vtk) return;
  const Grid g = bounding_grid(D.model(), cfg.grid);
  const auto samples = sample_grid(D, T, f, g);
  write_vtk(dir / "field.vtk", g, samples);
  write_field_csv(dir / "field.csv", samples);
}

double median_radius(const DesignField& f) {
  std::vector<double> r;
  for (const auto& p : interface_points(f)) r.push_back(p.norm());
  if (r.empty()) return std::nan("");
  std::sort(r.begin(), r.end());
  const size_t n = r.size();
  return n % 2 ? r[n / 2] : 0.5 * (r[n / 2 - 1] + r[n / 2]);
}

void print_terms(const ObjectiveValue& v) {
  std::cout << "J_main  " << fmt(v.J_main) << "\nJ_Tknv  " << fmt(v.J_tknv) << "\nJ_vol   " << fmt(v.J_vol)
            << "\nJ_total " << fmt(v.J_total) << "\n";
}

int cmd_solve(const Common& c, const std::string& coeff_file, const std::string& fill) {
  const RunConfig cfg = load(c);
  Problem p = build_problem(cfg);
  const Discretization& D = *p.disc;
  DesignField f = p.initial;
  if (!coeff_file.empty()) {
    f.coeffs = read_coefficients_csv(coeff_file);
    if (f.coeffs.size() != D.design().num_coeffs()) throw ConfigError("coefficient file does not match the design basis");
  }
  const fs::path dir = cfg.output_dir;
  std::cout << "problem " << cfg.problem << "\nndof " << D.ndof() << "\nnvar " << D.design().vars().num_vars() << "\n";
  if (!fill.empty()) {
    SolveOptions o;
    const MultiPatchModel& m = D.model();
    if (fill == "insulator")
      o.kappa.design = m.kappa_insulator;
    else if (fill == "base")
      o.kappa.design = m.kappa_base;
    else
      throw ConfigError("--fill expects 'insulator' or 'base'");
    const Eigen::VectorXd T = solve_state(D, f.coeffs, o);
    const MainTerm mt = eval_main(p.spec, D, T);
    std::cout << "fill " << fill << "\nJ_main  " << fmt(mt.J) << "\n";
    write_state_files(dir, cfg, D, f, T);
    return 0;
  }
  const ObjectiveValue v = eval_total(p.spec, D, f);
  print_terms(v);
  if (cfg.problem == "annulus" && cfg.initial.type == "circle" && cfg.initial.center.norm() == 0.0 &&
      !cfg.initial.invert && coeff_file.empty()) {
    const RadiusSample r = annulus_sample(D, p.spec, cfg.annulus, cfg.initial.radius);
    std::cout << "J_exact " << fmt(r.J_exact) << "\nerr_T_L2 " << fmt(r.err_T) << "\nerr_P_L2 " << fmt(r.err_P) << "\n";
  }
  write_state_files(dir, cfg, D, f, v.T);
  std::cout << "output " << dir.string() << "\n";
  return 0;
}

int cmd_optimize(const Common& c) {
  const RunConfig cfg = load(c);
  Problem p = build_problem(cfg);
  const Discretization& D = *p.disc;
  std::cout << "problem " << cfg.problem << "\nndof " << D.ndof() << "\nnvar " << D.design().vars().num_vars() << "\n";
  const TopologyResult r = optimize_topology(p.spec, D, p.initial, topology_options(cfg, D.design()));
  const fs::path dir = cfg.output_dir;
  write_convergence_csv(dir / "convergence.csv", r.opt.history);
  json s;
  s["stop_reason"] = stop_reason_name(r.opt.reason);
  s["iterations"] = r.opt.iterations;
  s["function_evaluations"] = r.opt.fevals;
  s["reinitializations"] = r.opt.reinits;
  s["ndof"] = D.ndof();
  s["nvar"] = D.design().vars().num_vars();
  if (!r.opt.error.empty()) {
    s["error"] = r.opt.error;
    write_coefficients_csv(dir / "coefficients.csv", r.best.coeffs);
    std::ofstream(dir / "summary.json") << s.dump(2) << "\n";
    std::cerr << "error: objective evaluation failed: " << r.opt.error << "\n";
    return 2;
  }
  s["J_main"] = r.value.J_main;
  s["J_Tknv"] = r.value.J_tknv;
  s["J_vol"] = r.value.J_vol;
  s["J_total"] = r.value.J_total;
  if (cfg.problem == "annulus") s["median_interface_radius"] = median_radius(r.best);
  write_state_files(dir, cfg, D, r.best, r.value.T);
  std::ofstream(dir / "summary.json") << s.dump(2) << "\n";
  std::cout << "stop " << stop_reason_name(r.opt.reason) << "\niterations " << r.opt.iterations << "\nfevals "
            << r.opt.fevals << "\n";
  print_terms(r.value);
  if (s.contains("median_interface_radius"))
    std::cout << "median_interface_radius " << fmt(s["median_interface_radius"].get<double>()) << "\n";
  std::cout << "output " << dir.string() << "\n";
  return 0;
}

int cmd_sweep(const Common& c) {
  const RunConfig cfg = load(c);
  if (cfg.problem != "annulus") throw ConfigError("sweeps are defined for the annulus problem");
  const json& sw = cfg.raw.at("sweep");
  const std::string kind = sw.value("kind", std::string("radius"));
  const json& g = sw.at("R_L");
  const auto radii = linspace(g.at("start").get<double>(), g.at("stop").get<double>(), g.at("count").get<int>());
  const auto deltas = sw.at("deltas").get<std::vector<double>>();
  const fs::path dir = cfg.output_dir;
  if (kind == "radius" || kind == "all") {
    RefineSpec design = cfg.design;
    design.circ_spans = sw.at("design").at("circ_spans").get<int>();
    design.rad_spans = sw.at("design").at("rad_spans").get<int>();
    std::vector<std::vector<double>> rows;
    for (double d : deltas) {
      SmoothingParams sp = cfg.smoothing;
      sp.delta = d;
      const auto res = radius_sweep(cfg.annulus, design, cfg.solution, sp, radii, cfg.quad_extra);
      for (const auto& r : res)
        rows.push_back({d, r.RL, r.J, r.J_exact, r.dJ, r.dJ_exact, r.per, r.per_exact, r.err_T, r.err_P});
      std::cout << "delta " << fmt(d) << " max_rel_J_dev " << fmt(max_relative_J_deviation(res)) << "\n";
    }
    write_table_csv(dir / "sweep_radius.csv",
                    {"delta", "R_L", "J", "J_exact", "dJdR", "dJdR_exact", "Per", "Per_exact", "err_T", "err_P"},
                    rows);
  }
  if (kind == "refinement" || kind == "all") {
    std::vector<RefinementPoint> pts;
    std::vector<std::vector<double>> rows;
    for (double d : deltas)
      for (int s : sw.at("spans").get<std::vector<int>>()) {
        const RefinementPoint p = refinement_point(cfg.annulus, s, d, radii, cfg.quad_extra);
        pts.push_back(p);
        rows.push_back({p.delta, double(p.spans), double(p.dof), p.h_avg, p.delta / p.h_avg, p.err_J, p.err_T, p.err_P});
      }
    write_table_csv(dir / "sweep_refinement.csv",
                    {"delta", "spans", "dof", "h_avg", "delta_over_h", "err_J", "err_T", "err_P"}, rows);
    const LineFit fit = fit_bandwidth_law(pts);
    std::cout << "fit_slope " << fmt(fit.slope) << "\nfit_intercept " << fmt(fit.intercept) << "\n";
    json j{{"slope", fit.slope}, {"intercept", fit.intercept}};
    std::ofstream(dir / "sweep_fit.json") << j.dump(2) << "\n";
  }
  if (kind != "radius" && kind != "refinement" && kind != "all")
    throw ConfigError("sweep.kind must be radius, refinement or all");
  std::cout << "output " << dir.string() << "\n";
  return 0;
}

int cmd_oracle(const Common& c) {
  const RunConfig cfg = load(c);
  const json& g = cfg.raw.at("sweep").at("R_L");
  const auto radii = linspace(g.at("start").get<double>(), g.at("stop").get<double>(), g.at("count").get<int>());
  std::vector<std::vector<double>> rows;
  for (double RL : radii) {
    const auto p = annulus_params(cfg.annulus, RL);
    rows.push_back({RL, oracle::annulus_objective(p), oracle::annulus_objective_dRL(p)});
  }
  const fs::path dir = cfg.output_dir;
  write_table_csv(dir / "oracle_curve.csv", {"R_L", "J", "dJdR"}, rows);
  const auto p = annulus_params(cfg.annulus, cfg.annulus_RL);
  std::vector<std::vector<double>> prof;
  for (double r : linspace(p.Ra, p.Rb, 201))
    prof.push_back({r, oracle::annulus_state(r, p), oracle::annulus_adjoint(r, p)});
  write_table_csv(dir / "oracle_profile.csv", {"r", "T", "P"}, prof);
  const double arg = oracle::annulus_argmin(p);
  auto q = p;
  q.RL = arg;
  std::cout << "argmin_R_L " << fmt(arg) << "\nJ_min " << fmt(oracle::annulus_objective(q)) << "\noutput "
            << dir.string() << "\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Isogeometric level-set topology optimization for heat conduction"};
  app.require_subcommand(1);
  Common common;
  std::string coeff_file, fill;
  auto add_common = [&](CLI::App* sub) {
    sub->add_option("--config,-c", common.config, "JSON run configuration");
    sub->add_option("--set,-s", common.sets, "override key=value (dotted path)")->take_all();
  };
  auto* solve = app.add_subcommand("solve", "state and adjoint solve for the initial (or given) field");
  add_common(solve);
  solve->add_option("--coefficients", coeff_file, "coefficient CSV replacing the initial field");
  solve->add_option("--fill", fill, "fill the design region with 'insulator' or 'base' material");
  auto* optimize = app.add_subcommand("optimize", "run the topology optimization");
  add_common(optimize);
  auto* sweep = app.add_subcommand("sweep", "annulus parameter sweeps against the closed form");
  add_common(sweep);
  auto* orc = app.add_subcommand("oracle", "closed-form annulus curves");
  add_common(orc);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : 1;
  }
  try {
    if (solve->parsed()) return cmd_solve(common, coeff_file, fill);
    if (optimize->parsed()) return cmd_optimize(common);
    if (sweep->parsed()) return cmd_sweep(common);
    if (orc->parsed()) return cmd_oracle(common);
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return 1;
  } catch (const json::exception& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return 1;
  } catch (const Error& e) {
    std::cerr << "numerical error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }
  return 1;
}
