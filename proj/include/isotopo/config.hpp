#pragma once

#include <json.hpp>

#include <cmath>
#include <fstream>
#include <functional>
#include <limits>
#include <memory>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "assembly.hpp"
#include "errors.hpp"
#include "model.hpp"
#include "objectives.hpp"
#include "topology.hpp"

namespace isotopo {

using json = nlohmann::json;

// ---------------------------------------------------------------------------
// Defaults. Every key the parser reads appears here, so this doubles as the
// schema.

inline json default_config(const std::string& problem) {
  json c;
  c["problem"] = problem;
  c["cloak_config"] = "circular";
  c["design"] = {{"p", 2}, {"q", 1}, {"circ_spans", 3}, {"rad_spans", 4}, {"symmetric", nullptr}};
  c["solution"] = {{"p", 2}, {"q", 1}, {"circ_spans", 32}, {"rad_spans", 32}, {"design_rad_spans", 0}};
  c["smoothing"] = {{"delta", 0.05}, {"alpha", 0.0}};
  c["nitsche"] = {{"beta", 1e12}, {"gamma", 0.5}};
  c["quad_extra"] = 0;
  c["boundary"] = {{"t_left", 300.0}, {"t_right", 200.0}};
  c["annulus"] = {{"Ra", 1.0}, {"Rb", 2.0}, {"Ta", 0.0}, {"Tb", 100.0}, {"kappa_a", 100.0}, {"kappa_b", 10.0},
                  {"R_L", 1.5}};
  c["materials"] = json::object();
  c["objective"] = {{"chi", 0.0}, {"rho", 0.0}};
  c["optimizer"] = {{"objective_limit", 1e-9},
                    {"step_tolerance", 1e-8},
                    {"optimality_tolerance", 1e-6},
                    {"max_iterations", 1000},
                    {"max_function_evaluations", 5000},
                    {"lower", nullptr},
                    {"upper", nullptr},
                    {"reinit", false},
                    {"reinit_every_iters", 10},
                    {"reinit_every_fevals", 100},
                    {"consecutive_steptol_stop", 4},
                    {"reinit_lines", 20}};
  c["initial"] = {{"type", "circle"}, {"center", {0.0, 0.0}}, {"radius", 1.5}, {"invert", false}};
  c["output"] = {{"dir", "out"}, {"grid", 201}, {"vtk", true}};
  c["sweep"] = {{"kind", "radius"},
                {"R_L", {{"start", 1.05}, {"stop", 1.95}, {"count", 19}}},
                {"deltas", {0.5, 0.05, 0.005}},
                {"spans", {4, 8, 16, 32}},
                {"design", {{"circ_spans", 7}, {"rad_spans", 32}}}};
  if (problem == "cloak") {
    c["design"]["rad_spans"] = 4;
    c["solution"]["circ_spans"] = 16;
    c["solution"]["rad_spans"] = 16;
    c["smoothing"]["delta"] = 0.5;  // mm
    c["optimizer"]["reinit"] = true;
    c["initial"] = {{"type", "lattice"}, {"n", 2}, {"extent", 40.0}, {"radius", 8.0}, {"invert", false}};
    c["materials"] = {{"base", 200.0}, {"obstacle", 1e-4}, {"insulator", 1e-4}, {"high", 398.0}, {"low", 0.27}};
  } else if (problem == "camouflage") {
    c["solution"]["circ_spans"] = 12;
    c["solution"]["rad_spans"] = 12;
    c["smoothing"]["delta"] = 1.0;  // mm
    c["optimizer"]["reinit"] = true;
    c["optimizer"]["reinit_every_fevals"] = 300;
    c["initial"] = {{"type", "ring"}, {"center", {0.0, 0.0}}, {"r_inner", 19.0}, {"r_outer", 26.0}, {"invert", false}};
    c["materials"] = {{"base", 177.0}, {"sector", 1e-4}, {"object", 72.7}, {"insulator", 1e-4}, {"high", 398.0},
                      {"low", 0.27}};
  } else if (problem != "annulus") {
    throw ConfigError("unknown problem '" + problem + "' (annulus, cloak, camouflage)");
  }
  return c;
}

// Recursive merge; objects merge, everything else replaces.
inline void merge_into(json& dst, const json& src) {
  for (auto it = src.begin(); it != src.end(); ++it) {
    if (it->is_object() && dst.contains(it.key()) && dst[it.key()].is_object())
      merge_into(dst[it.key()], *it);
    else
      dst[it.key()] = *it;
  }
}

// "a.b.c=value"; the value is parsed as JSON when possible, else kept as a string.
inline void apply_override(json& cfg, const std::string& kv) {
  const auto eq = kv.find('=');
  if (eq == std::string::npos || eq == 0) throw ConfigError("override '" + kv + "' is not key=value");
  const std::string key = kv.substr(0, eq), text = kv.substr(eq + 1);
  json value = json::parse(text, nullptr, false);
  if (value.is_discarded()) value = text;
  json* node = &cfg;
  std::stringstream ss(key);
  std::string part;
  std::vector<std::string> parts;
  while (std::getline(ss, part, '.')) parts.push_back(part);
  for (size_t i = 0; i < parts.size(); ++i) {
    if (parts[i].empty()) throw ConfigError("override key '" + key + "' has an empty component");
    if (node->is_null()) *node = json::object();
    if (!node->is_object()) throw ConfigError("override key '" + key + "' descends into a non-object");
    if (i + 1 == parts.size())
      (*node)[parts[i]] = value;
    else
      node = &(*node)[parts[i]];
  }
}

inline json load_config(const std::string& path, const std::vector<std::string>& overrides = {}) {
  json user = json::object();
  if (!path.empty()) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open config file '" + path + "'");
    user = json::parse(in, nullptr, false);
    if (user.is_discarded() || !user.is_object()) throw ConfigError("config file '" + path + "' is not a JSON object");
  }
  for (const auto& o : overrides) apply_override(user, o);
  const std::string problem = user.value("problem", std::string("annulus"));
  json cfg = default_config(problem);
  merge_into(cfg, user);
  return cfg;
}

// ---------------------------------------------------------------------------
// Typed view

struct InitialSpec {
  std::string type = "circle";
  Vec2 center = Vec2::Zero();
  double radius = 1.5, r_inner = 1.2, r_outer = 1.6, extent = 1.0, value = 1.0;
  int n = 2;
  std::vector<Eigen::Vector3d> circles;  // (x, y, r)
  bool invert = false;
};

struct RunConfig {
  std::string problem = "annulus";
  std::string cloak_config = "circular";
  RefineSpec design, solution;
  std::optional<bool> symmetric;
  SmoothingParams smoothing;
  NitscheParams nitsche;
  int quad_extra = 0;
  double t_left = 300.0, t_right = 200.0;
  AnnulusSetup annulus;
  double annulus_RL = 1.5;
  CloakMaterials cloak_mat;
  CamouflageMaterials camo_mat;
  double chi = 0.0, rho = 0.0;
  TopologyOptions topo;
  bool lower_set = false, upper_set = false;
  double lower = 0, upper = 0;
  InitialSpec initial;
  std::string output_dir = "out";
  int grid = 201;
  bool vtk = true;
  json raw;
};

namespace detail {

template <class T>
T get(const json& j, const char* key, const std::string& where) {
  if (!j.contains(key)) throw ConfigError("missing key '" + where + "." + key + "'");
  try {
    return j.at(key).get<T>();
  } catch (const json::exception&) {
    throw ConfigError("key '" + where + "." + key + "' has the wrong type");
  }
}

inline Vec2 get_vec2(const json& j, const char* key, const std::string& where) {
  const auto v = get<std::vector<double>>(j, key, where);
  if (v.size() != 2) throw ConfigError("key '" + where + "." + key + "' must have two entries");
  return {v[0], v[1]};
}

inline RefineSpec get_refine(const json& j, const std::string& where) {
  RefineSpec s;
  s.p_circ = get<int>(j, "p", where);
  s.p_rad = get<int>(j, "q", where);
  s.circ_spans = get<int>(j, "circ_spans", where);
  s.rad_spans = get<int>(j, "rad_spans", where);
  if (j.contains("design_rad_spans")) s.design_rad_spans = get<int>(j, "design_rad_spans", where);
  return s;
}

}  // namespace detail

inline InitialSpec parse_initial(const json& j) {
  using detail::get;
  InitialSpec s;
  s.type = get<std::string>(j, "type", "initial");
  s.invert = j.value("invert", false);
  if (s.type == "circle") {
    s.center = j.contains("center") ? detail::get_vec2(j, "center", "initial") : Vec2::Zero();
    s.radius = get<double>(j, "radius", "initial");
  } else if (s.type == "ring") {
    s.center = j.contains("center") ? detail::get_vec2(j, "center", "initial") : Vec2::Zero();
    s.r_inner = get<double>(j, "r_inner", "initial");
    s.r_outer = get<double>(j, "r_outer", "initial");
    if (!(s.r_outer > s.r_inner)) throw ConfigError("initial ring needs r_outer > r_inner");
  } else if (s.type == "circles") {
    for (const auto& c : get<std::vector<std::vector<double>>>(j, "circles", "initial")) {
      if (c.size() != 3) throw ConfigError("initial.circles entries are [x, y, r]");
      s.circles.emplace_back(c[0], c[1], c[2]);
    }
    if (s.circles.empty()) throw ConfigError("initial.circles is empty");
  } else if (s.type == "lattice") {
    s.n = get<int>(j, "n", "initial");
    s.extent = get<double>(j, "extent", "initial");
    s.radius = get<double>(j, "radius", "initial");
    if (s.n < 1) throw ConfigError("initial.n must be >= 1");
  } else if (s.type == "constant") {
    s.value = get<double>(j, "value", "initial");
  } else {
    throw ConfigError("unknown initial field type '" + s.type + "'");
  }
  return s;
}

// Level-set initializers: negative inside the holes, positive elsewhere.
inline std::function<double(const Vec2&)> make_initializer(const InitialSpec& s) {
  std::function<double(const Vec2&)> f;
  if (s.type == "circle") {
    f = [=](const Vec2& x) { return (x - s.center).norm() - s.radius; };
  } else if (s.type == "ring") {
    const double mid = 0.5 * (s.r_inner + s.r_outer), half = 0.5 * (s.r_outer - s.r_inner);
    f = [=](const Vec2& x) { return std::abs((x - s.center).norm() - mid) - half; };
  } else if (s.type == "circles" || s.type == "lattice") {
    std::vector<Eigen::Vector3d> cs = s.circles;
    if (s.type == "lattice")
      for (int i = 0; i < s.n; ++i)
        for (int j = 0; j < s.n; ++j)
          cs.emplace_back(-s.extent + (2 * i + 1) * s.extent / s.n, -s.extent + (2 * j + 1) * s.extent / s.n,
                          s.radius);
    f = [cs](const Vec2& x) {
      double d = std::numeric_limits<double>::infinity();
      for (const auto& c : cs) d = std::min(d, (x - Vec2(c[0], c[1])).norm() - c[2]);
      return d;
    };
  } else {
    const double v = s.value;
    f = [v](const Vec2&) { return v; };
  }
  if (s.invert) return [f](const Vec2& x) { return -f(x); };
  return f;
}

inline RunConfig parse_config(const json& j) {
  using detail::get;
  RunConfig c;
  c.raw = j;
  c.problem = get<std::string>(j, "problem", "");
  c.cloak_config = j.value("cloak_config", std::string("circular"));
  c.design = detail::get_refine(get<json>(j, "design", ""), "design");
  c.solution = detail::get_refine(get<json>(j, "solution", ""), "solution");
  const json& d = j.at("design");
  if (d.contains("symmetric") && !d.at("symmetric").is_null()) c.symmetric = get<bool>(d, "symmetric", "design");
  const json& sm = get<json>(j, "smoothing", "");
  c.smoothing.delta = get<double>(sm, "delta", "smoothing");
  c.smoothing.alpha = get<double>(sm, "alpha", "smoothing");
  c.smoothing.validate();
  const json& ni = get<json>(j, "nitsche", "");
  c.nitsche.beta = get<double>(ni, "beta", "nitsche");
  c.nitsche.gamma = get<double>(ni, "gamma", "nitsche");
  if (!(c.nitsche.beta > 0) || c.nitsche.gamma < 0 || c.nitsche.gamma > 1)
    throw ConfigError("nitsche parameters need beta > 0 and 0 <= gamma <= 1");
  c.quad_extra = get<int>(j, "quad_extra", "");
  if (c.quad_extra < 0) throw ConfigError("quad_extra must be >= 0");
  const json& b = get<json>(j, "boundary", "");
  c.t_left = get<double>(b, "t_left", "boundary");
  c.t_right = get<double>(b, "t_right", "boundary");

  const json& a = get<json>(j, "annulus", "");
  c.annulus.Ra = get<double>(a, "Ra", "annulus");
  c.annulus.Rb = get<double>(a, "Rb", "annulus");
  c.annulus.Ta = get<double>(a, "Ta", "annulus");
  c.annulus.Tb = get<double>(a, "Tb", "annulus");
  c.annulus.kappa_a = get<double>(a, "kappa_a", "annulus");
  c.annulus.kappa_b = get<double>(a, "kappa_b", "annulus");
  c.annulus_RL = get<double>(a, "R_L", "annulus");

  const json& m = get<json>(j, "materials", "");
  auto mat = [&](const char* k, double& dst) {
    if (m.contains(k)) {
      dst = get<double>(m, k, "materials");
      if (!(dst > 0)) throw ConfigError(std::string("material '") + k + "' must be positive");
    }
  };
  mat("base", c.cloak_mat.base);
  mat("obstacle", c.cloak_mat.obstacle);
  mat("insulator", c.cloak_mat.insulator);
  mat("high", c.cloak_mat.high);
  mat("low", c.cloak_mat.low);
  mat("base", c.camo_mat.base);
  mat("sector", c.camo_mat.sector);
  mat("object", c.camo_mat.object);
  mat("insulator", c.camo_mat.insulator);
  mat("high", c.camo_mat.high);
  mat("low", c.camo_mat.low);

  const json& o = get<json>(j, "objective", "");
  c.chi = get<double>(o, "chi", "objective");
  c.rho = get<double>(o, "rho", "objective");
  if (c.chi < 0 || c.rho < 0) throw ConfigError("objective weights must be non-negative");

  const json& q = get<json>(j, "optimizer", "");
  SqpConfig& s = c.topo.sqp;
  s.objective_limit = get<double>(q, "objective_limit", "optimizer");
  s.step_tolerance = get<double>(q, "step_tolerance", "optimizer");
  s.optimality_tolerance = get<double>(q, "optimality_tolerance", "optimizer");
  s.max_iterations = get<int>(q, "max_iterations", "optimizer");
  s.max_function_evaluations = get<int>(q, "max_function_evaluations", "optimizer");
  s.reinit = get<bool>(q, "reinit", "optimizer");
  s.reinit_every_iters = get<int>(q, "reinit_every_iters", "optimizer");
  s.reinit_every_fevals = get<int>(q, "reinit_every_fevals", "optimizer");
  s.consecutive_steptol_stop = get<int>(q, "consecutive_steptol_stop", "optimizer");
  c.topo.reinit_lines = get<int>(q, "reinit_lines", "optimizer");
  if (q.contains("lower") && !q.at("lower").is_null()) {
    c.lower_set = true;
    c.lower = get<double>(q, "lower", "optimizer");
  }
  if (q.contains("upper") && !q.at("upper").is_null()) {
    c.upper_set = true;
    c.upper = get<double>(q, "upper", "optimizer");
  }
  if (c.lower_set != c.upper_set) throw ConfigError("optimizer.lower and optimizer.upper must be set together");
  if (c.lower_set && c.lower > c.upper) throw ConfigError("optimizer.lower exceeds optimizer.upper");
  s.validate(0);

  c.initial = parse_initial(get<json>(j, "initial", ""));
  const json& out = get<json>(j, "output", "");
  c.output_dir = get<std::string>(out, "dir", "output");
  c.grid = get<int>(out, "grid", "output");
  c.vtk = get<bool>(out, "vtk", "output");
  if (c.grid < 2) throw ConfigError("output.grid must be >= 2");
  return c;
}

// ---------------------------------------------------------------------------
// Problem assembly

inline MultiPatchModel build_base_model(const RunConfig& c) {
  MultiPatchModel m;
  if (c.problem == "annulus")
    m = build_annulus(c.annulus);
  else if (c.problem == "cloak")
    m = build_cloak_model(c.cloak_config, c.cloak_mat, c.t_left, c.t_right);
  else if (c.problem == "camouflage")
    m = build_camouflage_model(c.camo_mat, c.t_left, c.t_right);
  else
    throw ConfigError("unknown problem '" + c.problem + "'");
  m.nitsche = c.nitsche;
  if (c.symmetric) m.symmetric = *c.symmetric;
  return m;
}

inline ObjectiveKind objective_kind(const RunConfig& c) {
  return parse_objective_kind(c.problem == "annulus" ? "annular" : c.problem);
}

struct Problem {
  std::shared_ptr<const Discretization> disc;
  ObjectiveSpec spec;
  DesignField initial;
};

inline Problem build_problem(const RunConfig& c) {
  Problem p;
  p.disc = make_discretization(build_base_model(c), c.design, c.solution, c.smoothing, c.quad_extra);
  p.spec = make_objective(*p.disc, objective_kind(c), c.chi, c.rho);
  p.initial = make_field(p.disc->design_ptr(), make_initializer(c.initial));
  return p;
}

inline TopologyOptions topology_options(const RunConfig& c, const DesignSpace& S) {
  TopologyOptions t = c.topo;
  if (c.lower_set) {
    t.sqp.lower = Eigen::VectorXd::Constant(S.vars().num_vars(), c.lower);
    t.sqp.upper = Eigen::VectorXd::Constant(S.vars().num_vars(), c.upper);
  }
  return t;
}

}  // namespace isotopo
