#pragma once

#include <Eigen/Dense>

#include <memory>
#include <vector>

#include "assembly.hpp"
#include "levelset.hpp"
#include "objectives.hpp"
#include "optimizer.hpp"

namespace isotopo {

struct TopologyOptions {
  SqpConfig sqp;
  int reinit_lines = 20;
};

struct TopologyResult {
  DesignField best;
  ObjectiveValue value;  // re-evaluated at the best iterate
  OptimizeResult opt;
  std::vector<ReinitReport> reinits;
};

// Bounds +-D with D the design-region diameter unless the caller set them.
inline SqpConfig with_default_bounds(SqpConfig c, const DesignSpace& S) {
  const int n = S.vars().num_vars();
  if (c.lower.size() == 0) {
    c.lower = Eigen::VectorXd::Constant(n, -S.diameter());
    c.upper = Eigen::VectorXd::Constant(n, S.diameter());
  }
  return c;
}

inline TopologyResult optimize_topology(const ObjectiveSpec& spec, const Discretization& D, const DesignField& f0,
                                        const TopologyOptions& opt = {}) {
  const auto space = f0.space;
  const SqpConfig cfg = with_default_bounds(opt.sqp, *space);
  SystemSolver ws;
  TopologyResult out;
  auto objective = [&](const Eigen::VectorXd& x) {
    const ObjectiveValue v = eval_total(spec, D, DesignField::from_vars(space, x), &ws);
    Evaluation e;
    e.f = v.J_total;
    e.g = v.g_vars;
    e.J_main = v.J_main;
    e.J_tknv = v.J_tknv;
    e.J_vol = v.J_vol;
    return e;
  };
  auto reinit = [&](const Eigen::VectorXd& x) {
    ReinitReport rep;
    const DesignField r = reinitialize(DesignField::from_vars(space, x), opt.reinit_lines, 0.0, &rep);
    out.reinits.push_back(rep);
    return r.vars();
  };
  out.opt = minimize(objective, f0.vars(), cfg, reinit);
  out.best = DesignField::from_vars(space, out.opt.x_best);
  if (out.opt.error.empty()) out.value = eval_total(spec, D, out.best, &ws);
  return out;
}

}  // namespace isotopo
