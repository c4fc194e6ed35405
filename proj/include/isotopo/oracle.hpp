#pragma once

#include <Eigen/Dense>

#include <cmath>
#include <functional>
#include <numbers>

#include "errors.hpp"

namespace isotopo::oracle {

// Two-material annulus: kappa_a on Ra < r < R_L, kappa_b on R_L < r < Rb,
// T(Ra) = Ta, T(Rb) = Tb.
struct AnnulusParams {
  double Ra = 1.0, Rb = 2.0, RL = 1.5;
  double Ta = 0.0, Tb = 100.0;
  double ka = 100.0, kb = 10.0;

  void validate() const {
    if (!(Ra > 0 && Ra < RL && RL < Rb)) throw ConfigError("annulus radii must satisfy 0 < Ra < R_L < Rb");
    if (!(ka > 0 && kb > 0)) throw ConfigError("annulus conductivities must be positive");
  }
};

// T = c + d log r on each side.
struct LogPiece {
  double c = 0, d = 0;
};

struct AnnulusState {
  LogPiece a, b;
};

inline Eigen::Matrix4d interface_matrix(const AnnulusParams& p) {
  const double la = std::log(p.Ra), lb = std::log(p.Rb), lL = std::log(p.RL);
  Eigen::Matrix4d A;
  A << 1, la, 0, 0,        //
      0, 0, 1, lb,         //
      1, lL, -1, -lL,      //
      0, p.ka / p.RL, 0, -p.kb / p.RL;
  return A;
}

inline AnnulusState annulus_coefficients(const AnnulusParams& p) {
  p.validate();
  const Eigen::Vector4d rhs(p.Ta, p.Tb, 0, 0);
  const Eigen::Vector4d x = interface_matrix(p).fullPivLu().solve(rhs);
  return {{x[0], x[1]}, {x[2], x[3]}};
}

inline void check_radius(double r, const AnnulusParams& p) {
  const double tol = 1e-12 * p.Rb;
  if (r < p.Ra - tol || r > p.Rb + tol) throw DomainError("radius outside the annulus");
}

inline double annulus_state(double r, const AnnulusParams& p) {
  check_radius(r, p);
  const AnnulusState s = annulus_coefficients(p);
  const LogPiece& q = r < p.RL ? s.a : s.b;
  return q.c + q.d * std::log(r);
}

inline double annulus_state_dr(double r, const AnnulusParams& p) {
  check_radius(r, p);
  const AnnulusState s = annulus_coefficients(p);
  return (r < p.RL ? s.a.d : s.b.d) / r;
}

// Adjoint for J = int T^2: kappa (P'' + P'/r) = -2 (c + d log r), P(Ra) = P(Rb) = 0,
// P and kappa P' continuous at R_L. A particular solution of the ODE is
//   Pp = -(c - d) r^2 / (2 kappa) - d r^2 log r / (2 kappa),
// verified by substitution: Pp'' + Pp'/r = -(2/kappa)(c + d log r).
struct AdjointPiece {
  double C = 0, D = 0;  // homogeneous part C log r + D
  double c = 0, d = 0, kappa = 1;
  double value(double r) const {
    const double L = std::log(r);
    return C * L + D - (c - d) * r * r / (2 * kappa) - d * r * r * L / (2 * kappa);
  }
  double dr(double r) const {
    const double L = std::log(r);
    return C / r - (c - d) * r / kappa - d * (2 * r * L + r) / (2 * kappa);
  }
  double drr(double r) const {
    const double L = std::log(r);
    return -C / (r * r) - (c - d) / kappa - d * (2 * L + 3) / (2 * kappa);
  }
};

struct AnnulusAdjoint {
  AdjointPiece a, b;
};

inline AnnulusAdjoint annulus_adjoint_coefficients(const AnnulusParams& p) {
  const AnnulusState s = annulus_coefficients(p);
  AdjointPiece a{0, 0, s.a.c, s.a.d, p.ka}, b{0, 0, s.b.c, s.b.d, p.kb};
  // Unknowns (C1, D1, C2, D2); particular parts moved to the right-hand side.
  const Eigen::Matrix4d A = interface_matrix(p);
  const Eigen::Vector4d rhs(-a.value(p.Ra), -b.value(p.Rb), -(a.value(p.RL) - b.value(p.RL)),
                            -(p.ka * a.dr(p.RL) - p.kb * b.dr(p.RL)));
  Eigen::Matrix4d M = A;
  M.row(0) << std::log(p.Ra), 1, 0, 0;
  M.row(1) << 0, 0, std::log(p.Rb), 1;
  M.row(2) << std::log(p.RL), 1, -std::log(p.RL), -1;
  M.row(3) << p.ka / p.RL, 0, -p.kb / p.RL, 0;
  const Eigen::Vector4d x = M.fullPivLu().solve(rhs);
  a.C = x[0];
  a.D = x[1];
  b.C = x[2];
  b.D = x[3];
  return {a, b};
}

inline double annulus_adjoint(double r, const AnnulusParams& p) {
  check_radius(r, p);
  const AnnulusAdjoint s = annulus_adjoint_coefficients(p);
  return r < p.RL ? s.a.value(r) : s.b.value(r);
}

// int r (c1 + d1 log r)(c2 + d2 log r) dr
inline double log_product_antiderivative(double r, double c1, double d1, double c2, double d2) {
  const double L = std::log(r), r2 = r * r;
  return c1 * c2 * r2 / 2 + (c1 * d2 + c2 * d1) * (r2 * L / 2 - r2 / 4) + d1 * d2 * (r2 * L * L / 2 - r2 * L / 2 + r2 / 4);
}

// J = int_annulus T^2 dA in closed form.
inline double annulus_objective(const AnnulusParams& p) {
  const AnnulusState s = annulus_coefficients(p);
  auto piece = [](const LogPiece& q, double r0, double r1) {
    return log_product_antiderivative(r1, q.c, q.d, q.c, q.d) - log_product_antiderivative(r0, q.c, q.d, q.c, q.d);
  };
  return 2 * std::numbers::pi * (piece(s.a, p.Ra, p.RL) + piece(s.b, p.RL, p.Rb));
}

// dJ/dR_L: T is continuous at R_L, so only the coefficient sensitivities remain,
// dx/dR_L = -A^{-1} (dA/dR_L) x.
inline double annulus_objective_dRL(const AnnulusParams& p) {
  const AnnulusState s = annulus_coefficients(p);
  const Eigen::Vector4d x(s.a.c, s.a.d, s.b.c, s.b.d);
  Eigen::Matrix4d dA = Eigen::Matrix4d::Zero();
  dA(2, 1) = 1.0 / p.RL;
  dA(2, 3) = -1.0 / p.RL;
  dA(3, 1) = -p.ka / (p.RL * p.RL);
  dA(3, 3) = p.kb / (p.RL * p.RL);
  const Eigen::Vector4d dx = -interface_matrix(p).fullPivLu().solve(dA * x);
  auto piece = [](double c, double d, double dc, double dd, double r0, double r1) {
    return log_product_antiderivative(r1, c, d, dc, dd) - log_product_antiderivative(r0, c, d, dc, dd);
  };
  const double v = piece(x[0], x[1], dx[0], dx[1], p.Ra, p.RL) + piece(x[2], x[3], dx[2], dx[3], p.RL, p.Rb);
  return 2 * std::numbers::pi * 2 * v;
}

// Golden-section minimizer of the closed-form objective over R_L.
inline double annulus_argmin(AnnulusParams p, double tol = 1e-10) {
  const double g = (std::sqrt(5.0) - 1) / 2;
  double a = p.Ra + 1e-9, b = p.Rb - 1e-9;
  auto f = [&](double r) {
    p.RL = r;
    return annulus_objective(p);
  };
  double x1 = b - g * (b - a), x2 = a + g * (b - a), f1 = f(x1), f2 = f(x2);
  while (b - a > tol) {
    if (f1 < f2) {
      b = x2;
      x2 = x1;
      f2 = f1;
      x1 = b - g * (b - a);
      f1 = f(x1);
    } else {
      a = x1;
      x1 = x2;
      f1 = f2;
      x2 = a + g * (b - a);
      f2 = f(x2);
    }
  }
  return 0.5 * (a + b);
}

// Componentwise central differences.
inline Eigen::VectorXd fd_gradient(const std::function<double(const Eigen::VectorXd&)>& f, const Eigen::VectorXd& x,
                                   double h) {
  Eigen::VectorXd g(x.size());
  Eigen::VectorXd y = x;
  for (Eigen::Index i = 0; i < x.size(); ++i) {
    y[i] = x[i] + h;
    const double fp = f(y);
    y[i] = x[i] - h;
    const double fm = f(y);
    y[i] = x[i];
    g[i] = (fp - fm) / (2 * h);
  }
  return g;
}

}  // namespace isotopo::oracle
