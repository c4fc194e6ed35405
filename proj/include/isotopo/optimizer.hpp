#pragma once

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>
#include <string>
#include <vector>

#include "errors.hpp"

namespace isotopo {

struct SqpConfig {
  double objective_limit = 1e-9;
  double step_tolerance = 1e-8;
  double optimality_tolerance = 1e-6;
  int max_iterations = 1000;
  int max_function_evaluations = 5000;
  Eigen::VectorXd lower, upper;  // per variable; empty means unbounded
  bool reinit = true;
  int reinit_every_iters = 10;
  int reinit_every_fevals = 100;
  int consecutive_steptol_stop = 4;
  double initial_step = 0.0;  // <= 0: derived from the bounds
  double armijo_c1 = 1e-4;
  double alpha_min = 1e-10;

  void validate(int n) const {
    if (!(objective_limit > -std::numeric_limits<double>::infinity()) || !(step_tolerance > 0) ||
        !(optimality_tolerance > 0))
      throw ConfigError("optimizer tolerances must be positive");
    if (max_iterations < 0 || max_function_evaluations < 1) throw ConfigError("optimizer caps must be positive");
    if (lower.size() != upper.size() || (lower.size() != 0 && lower.size() != n))
      throw ConfigError("bound vectors have the wrong length");
    for (Eigen::Index i = 0; i < lower.size(); ++i)
      if (lower[i] > upper[i]) throw ConfigError("lower bound exceeds upper bound");
    if (reinit_every_iters < 1 || reinit_every_fevals < 1 || consecutive_steptol_stop < 1)
      throw ConfigError("reinitialization schedule must be positive");
  }
};

enum class StopReason { none, objective_limit, optimality, step_tolerance, max_iterations, max_function_evaluations };

inline const char* stop_reason_name(StopReason r) {
  switch (r) {
    case StopReason::none: return "none";
    case StopReason::objective_limit: return "objective_limit";
    case StopReason::optimality: return "optimality";
    case StopReason::step_tolerance: return "step_tolerance";
    case StopReason::max_iterations: return "max_iterations";
    case StopReason::max_function_evaluations: return "max_function_evaluations";
  }
  return "?";
}

struct IterationRecord {
  int iter = 0;
  int fevals = 0;
  double J_main = 0, J_tknv = 0, J_vol = 0, J_total = 0;
  double g_inf = 0;  // projected gradient, infinity norm
  double step = 0;   // infinity norm of the accepted step
  bool reinit = false;
};

struct SqpState {
  Eigen::VectorXd x, g;
  Eigen::MatrixXd H;
  double f = 0;
  double proj_g_inf = 0;
  double grad_scale = 1;  // |g0|_inf, so the optimality test does not depend on length units
  int iterations = 0, fevals = 0;
  int iters_since_reinit = 0, fevals_since_reinit = 0;
  int steptol_streak = 0;
  bool step_failed = false;
  std::vector<IterationRecord> history;
};

enum class Action { proceed, stop, reinit };

struct StopDecision {
  Action action = Action::proceed;
  StopReason reason = StopReason::none;
};

inline StopDecision check_stop(const SqpState& s, const SqpConfig& c) {
  if (s.f <= c.objective_limit) return {Action::stop, StopReason::objective_limit};
  if (s.proj_g_inf <= c.optimality_tolerance * s.grad_scale) return {Action::stop, StopReason::optimality};
  if (s.iterations >= c.max_iterations) return {Action::stop, StopReason::max_iterations};
  if (s.fevals >= c.max_function_evaluations) return {Action::stop, StopReason::max_function_evaluations};
  if (s.step_failed) {
    if (s.steptol_streak >= c.consecutive_steptol_stop) return {Action::stop, StopReason::step_tolerance};
    return {Action::reinit, StopReason::step_tolerance};
  }
  if (c.reinit && (s.iters_since_reinit >= c.reinit_every_iters || s.fevals_since_reinit >= c.reinit_every_fevals))
    return {Action::reinit, StopReason::none};
  return {};
}

struct QpResult {
  Eigen::VectorXd p;
  Eigen::VectorXd multipliers;  // >= 0 on active bounds, 0 elsewhere
  int iterations = 0;
};

// min g^T p + 1/2 p^T H p  s.t.  lo <= p <= hi  (lo <= 0 <= hi), primal active set.
inline QpResult solve_qp_subproblem(const Eigen::VectorXd& g, const Eigen::MatrixXd& H, const Eigen::VectorXd& lower,
                                    const Eigen::VectorXd& upper, const Eigen::VectorXd& x) {
  const Eigen::Index n = g.size();
  const double inf = std::numeric_limits<double>::infinity();
  Eigen::VectorXd lo = Eigen::VectorXd::Constant(n, -inf), hi = Eigen::VectorXd::Constant(n, inf);
  if (lower.size() == n) {
    lo = (lower - x).cwiseMin(0.0);
    hi = (upper - x).cwiseMax(0.0);
  }
  QpResult r;
  r.p = Eigen::VectorXd::Zero(n);
  // 0: free, -1: at lower, +1: at upper
  std::vector<int> w(static_cast<size_t>(n), 0);
  for (Eigen::Index i = 0; i < n; ++i) {
    if (lo[i] == 0.0 && g[i] > 0) w[i] = -1;
    if (hi[i] == 0.0 && g[i] < 0) w[i] = 1;
  }
  const double tol = 1e-12 * std::max(1.0, g.cwiseAbs().maxCoeff());
  for (int it = 0; it < 10 * static_cast<int>(n) + 10; ++it) {
    r.iterations = it + 1;
    std::vector<Eigen::Index> F;
    for (Eigen::Index i = 0; i < n; ++i) {
      if (w[i] == -1) r.p[i] = lo[i];
      if (w[i] == 1) r.p[i] = hi[i];
      if (w[i] == 0) F.push_back(i);
    }
    Eigen::VectorXd target = r.p;
    if (!F.empty()) {
      const Eigen::Index m = static_cast<Eigen::Index>(F.size());
      Eigen::MatrixXd HF(m, m);
      Eigen::VectorXd rhs(m);
      const Eigen::VectorXd Hp = H * r.p;
      for (Eigen::Index a = 0; a < m; ++a) {
        for (Eigen::Index b = 0; b < m; ++b) HF(a, b) = H(F[a], F[b]);
        // rhs = -(g_F + H_FW p_W); H p includes the free part, remove it.
        double hw = Hp[F[a]];
        for (Eigen::Index b = 0; b < m; ++b) hw -= H(F[a], F[b]) * r.p[F[b]];
        rhs[a] = -(g[F[a]] + hw);
      }
      const Eigen::VectorXd pf = HF.llt().solve(rhs);
      for (Eigen::Index a = 0; a < m; ++a) target[F[a]] = pf[a];
    }
    // Largest feasible fraction of the move towards the subspace minimizer.
    double alpha = 1.0;
    Eigen::Index block = -1;
    int block_side = 0;
    for (Eigen::Index i : F) {
      const double d = target[i] - r.p[i];
      if (target[i] < lo[i] && d < 0) {
        const double a = (lo[i] - r.p[i]) / d;
        if (a < alpha) {
          alpha = a;
          block = i;
          block_side = -1;
        }
      } else if (target[i] > hi[i] && d > 0) {
        const double a = (hi[i] - r.p[i]) / d;
        if (a < alpha) {
          alpha = a;
          block = i;
          block_side = 1;
        }
      }
    }
    for (Eigen::Index i : F) r.p[i] += alpha * (target[i] - r.p[i]);
    if (block >= 0) {
      w[block] = block_side;
      continue;
    }
    const Eigen::VectorXd grad = g + H * r.p;
    Eigen::Index worst = -1;
    double worst_val = -tol;
    for (Eigen::Index i = 0; i < n; ++i) {
      const double lam = w[i] == -1 ? grad[i] : (w[i] == 1 ? -grad[i] : 0.0);
      if (lam < worst_val) {
        worst_val = lam;
        worst = i;
      }
    }
    if (worst < 0) break;
    w[worst] = 0;
  }
  const Eigen::VectorXd grad = g + H * r.p;
  r.multipliers = Eigen::VectorXd::Zero(n);
  for (Eigen::Index i = 0; i < n; ++i) r.multipliers[i] = w[i] == -1 ? grad[i] : (w[i] == 1 ? -grad[i] : 0.0);
  return r;
}

struct LineSearchResult {
  double alpha = 0;
  double f = 0;
  int evaluations = 0;
  bool success = false;
};

// Backtracking from alpha = 1, halving, Armijo constant c1.
inline LineSearchResult line_search(const std::function<double(double)>& phi, double f0, double gTp, double c1 = 1e-4,
                                    double alpha_min = 1e-10) {
  LineSearchResult r;
  if (!(gTp < 0)) return r;
  for (double a = 1.0; a >= alpha_min; a *= 0.5) {
    const double f = phi(a);
    ++r.evaluations;
    if (std::isfinite(f) && f <= f0 + c1 * a * gTp) {
      r.alpha = a;
      r.f = f;
      r.success = true;
      return r;
    }
  }
  return r;
}

// Powell-damped BFGS update of the Hessian approximation.
inline Eigen::MatrixXd bfgs_update(const Eigen::MatrixXd& H, const Eigen::VectorXd& s, const Eigen::VectorXd& y) {
  const double sHs = s.dot(H * s);
  if (!(sHs > 0)) return H;
  const Eigen::VectorXd Hs = H * s;
  const double sy = s.dot(y);
  const double theta = sy >= 0.2 * sHs ? 1.0 : 0.8 * sHs / (sHs - sy);
  const Eigen::VectorXd r = theta * y + (1.0 - theta) * Hs;
  const double sr = s.dot(r);
  Eigen::MatrixXd out = H - Hs * Hs.transpose() / sHs + r * r.transpose() / sr;
  out = 0.5 * (out + out.transpose());
  // Repeated damping can shrink one direction geometrically; skip updates that
  // would leave H numerically singular.
  const Eigen::LLT<Eigen::MatrixXd> llt(out);
  if (llt.info() != Eigen::Success) return H;
  const Eigen::VectorXd l = Eigen::MatrixXd(llt.matrixL()).diagonal();
  if (l.minCoeff() * l.minCoeff() < 1e-12 * out.diagonal().maxCoeff()) return H;
  return out;
}

struct Evaluation {
  double f = 0;
  Eigen::VectorXd g;
  double J_main = 0, J_tknv = 0, J_vol = 0;
};

struct OptimizeResult {
  Eigen::VectorXd x_best;
  double f_best = std::numeric_limits<double>::infinity();
  StopReason reason = StopReason::none;
  int iterations = 0, fevals = 0, reinits = 0;
  std::vector<IterationRecord> history;
  std::string error;  // non-empty when an evaluation failed
};

namespace detail {

inline double projected_inf(const Eigen::VectorXd& x, const Eigen::VectorXd& g, const SqpConfig& c) {
  double m = 0;
  for (Eigen::Index i = 0; i < x.size(); ++i) {
    double gi = g[i];
    if (c.lower.size() == x.size()) {
      if (x[i] <= c.lower[i] && gi > 0) gi = 0;
      if (x[i] >= c.upper[i] && gi < 0) gi = 0;
    }
    m = std::max(m, std::abs(gi));
  }
  return m;
}

}  // namespace detail

// Damped-BFGS SQP with box constraints. `reinit` (optional) maps the current
// iterate to a reinitialized one; it is called on the schedule and after
// step-tolerance failures.
inline OptimizeResult minimize(const std::function<Evaluation(const Eigen::VectorXd&)>& objective,
                               const Eigen::VectorXd& x0, const SqpConfig& cfg,
                               const std::function<Eigen::VectorXd(const Eigen::VectorXd&)>& reinit = nullptr) {
  const Eigen::Index n = x0.size();
  cfg.validate(static_cast<int>(n));
  const bool bounded = cfg.lower.size() == n;
  auto clip = [&](Eigen::VectorXd x) {
    if (bounded) x = x.cwiseMax(cfg.lower).cwiseMin(cfg.upper);
    return x;
  };
  double step0 = cfg.initial_step;
  if (!(step0 > 0)) step0 = bounded ? 0.05 * 0.5 * (cfg.upper - cfg.lower).maxCoeff() : 1.0;
  if (!(step0 > 0) || !std::isfinite(step0)) step0 = 1.0;

  OptimizeResult res;
  SqpState s;
  Evaluation E;
  auto evaluate = [&](const Eigen::VectorXd& x) {
    Evaluation e = objective(x);
    ++s.fevals;
    ++s.fevals_since_reinit;
    return e;
  };
  auto scaled_identity = [&](const Eigen::VectorXd& g) {
    const double gi = g.size() ? g.cwiseAbs().maxCoeff() : 0.0;
    return Eigen::MatrixXd::Identity(n, n) * std::max(gi / step0, 1e-12);
  };
  auto record = [&](double step, bool reinit_row) {
    IterationRecord r{s.iterations, s.fevals, E.J_main, E.J_tknv, E.J_vol, E.f, s.proj_g_inf, step, reinit_row};
    s.history.push_back(r);
    if (E.f < res.f_best) {
      res.f_best = E.f;
      res.x_best = s.x;
    }
  };

  try {
    s.x = clip(x0);
    E = evaluate(s.x);
    s.f = E.f;
    s.g = E.g;
    s.H = scaled_identity(s.g);
    s.grad_scale = s.g.cwiseAbs().maxCoeff();
    if (!(s.grad_scale > 0)) s.grad_scale = 1.0;
    s.proj_g_inf = detail::projected_inf(s.x, s.g, cfg);
    record(0.0, false);
    bool fresh_h = true;
    double last_scale = 0;  // y'y/s'y of the latest pair; restarts keep the learned curvature scale

    while (true) {
      const StopDecision d = check_stop(s, cfg);
      if (d.action == Action::stop) {
        res.reason = d.reason;
        break;
      }
      if (d.action == Action::reinit) {
        if (reinit && cfg.reinit) {
          s.x = clip(reinit(s.x));
          E = evaluate(s.x);
          s.f = E.f;
          s.g = E.g;
          ++res.reinits;
        }
        s.H = last_scale > 0 ? Eigen::MatrixXd(Eigen::MatrixXd::Identity(n, n) * last_scale) : scaled_identity(s.g);
        fresh_h = true;
        s.iters_since_reinit = 0;
        s.fevals_since_reinit = 0;
        s.step_failed = false;
        s.proj_g_inf = detail::projected_inf(s.x, s.g, cfg);
        record(0.0, true);
        continue;
      }

      const QpResult qp = solve_qp_subproblem(s.g, s.H, cfg.lower, cfg.upper, s.x);
      const double gTp = s.g.dot(qp.p);
      Evaluation trial;
      Eigen::VectorXd xt;
      auto phi = [&](double a) {
        xt = clip(s.x + a * qp.p);
        trial = evaluate(xt);
        return trial.f;
      };
      const LineSearchResult ls = line_search(phi, s.f, gTp, cfg.armijo_c1, cfg.alpha_min);
      ++s.iterations;
      ++s.iters_since_reinit;
      if (!ls.success) {
        s.step_failed = true;
        ++s.steptol_streak;
        record(0.0, false);
        continue;
      }
      const Eigen::VectorXd step = xt - s.x;
      const double step_inf = step.cwiseAbs().maxCoeff();
      const Eigen::VectorXd y = trial.g - s.g;
      const double sy = step.dot(y);
      if (sy > 0) last_scale = y.dot(y) / sy;
      if (fresh_h) {
        if (sy > 0) s.H = Eigen::MatrixXd::Identity(n, n) * last_scale;
        fresh_h = false;
      }
      s.H = bfgs_update(s.H, step, y);
      s.x = xt;
      E = trial;
      s.f = E.f;
      s.g = E.g;
      s.proj_g_inf = detail::projected_inf(s.x, s.g, cfg);
      if (step_inf < cfg.step_tolerance * (1.0 + s.x.cwiseAbs().maxCoeff())) {
        s.step_failed = true;
        ++s.steptol_streak;
      } else {
        s.step_failed = false;
        s.steptol_streak = 0;
      }
      record(step_inf, false);
    }
  } catch (const Error& e) {
    res.error = e.what();
  }
  if (res.x_best.size() == 0) res.x_best = clip(x0);
  res.iterations = s.iterations;
  res.fevals = s.fevals;
  res.history = std::move(s.history);
  return res;
}

}  // namespace isotopo
