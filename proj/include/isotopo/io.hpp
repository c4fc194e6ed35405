#pragma once

#include <Eigen/Dense>

#include <array>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <limits>
#include <optional>
#include <string>
#include <vector>

#include "assembly.hpp"
#include "errors.hpp"
#include "levelset.hpp"
#include "optimizer.hpp"

namespace isotopo {

// ---------------------------------------------------------------------------
// Point inversion

struct Location {
  int patch = -1;
  double xi = 0, eta = 0;
};

class PointLocator {
 public:
  explicit PointLocator(const MultiPatchModel& m) : m_(&m) {
    scale_ = model_scale(m);
    for (const auto& P : m.patches) {
      Eigen::AlignedBox2d box;
      for (const auto& x : P.points()) box.extend(x);
      // NURBS with positive weights stay inside the control hull.
      box.extend(box.min() - Vec2::Constant(1e-9 * scale_));
      box.extend(box.max() + Vec2::Constant(1e-9 * scale_));
      boxes_.push_back(box);
    }
  }

  std::optional<Location> locate(const Vec2& x) const {
    for (int p = 0; p < static_cast<int>(m_->patches.size()); ++p) {
      if (!boxes_[p].contains(x)) continue;
      if (auto l = invert(p, x)) return l;
    }
    return std::nullopt;
  }

 private:
  std::optional<Location> invert(int p, const Vec2& x) const {
    const NurbsPatch& P = m_->patches[p];
    const auto& ku = P.knots_u();
    const auto& kv = P.knots_v();
    const double u0 = ku.front(), u1 = ku.back(), v0 = kv.front(), v1 = kv.back();
    // Seed from a coarse parametric grid.
    double best = std::numeric_limits<double>::infinity(), xi = u0, eta = v0;
    const int ns = 8;
    for (int i = 0; i <= ns; ++i)
      for (int j = 0; j <= ns; ++j) {
        const double a = u0 + (u1 - u0) * i / ns, b = v0 + (v1 - v0) * j / ns;
        const double d = (eval_point(P, a, b) - x).squaredNorm();
        if (d < best) {
          best = d;
          xi = a;
          eta = b;
        }
      }
    const double tol = 1e-10 * scale_;
    for (int it = 0; it < 50; ++it) {
      BasisEval e;
      try {
        e = eval_basis(P, xi, eta, false);
      } catch (const Error&) {
        return std::nullopt;
      }
      const Vec2 r = e.point - x;
      if (r.norm() <= tol) {
        const double pt = 1e-9;
        if (xi < u0 - pt || xi > u1 + pt || eta < v0 - pt || eta > v1 + pt) return std::nullopt;
        return Location{p, std::clamp(xi, u0, u1), std::clamp(eta, v0, v1)};
      }
      const Vec2 d = e.jacobian.fullPivLu().solve(r);
      const double nxi = std::clamp(xi - d.x(), u0, u1), neta = std::clamp(eta - d.y(), v0, v1);
      if (nxi == xi && neta == eta) return std::nullopt;  // stuck on the boundary: point is outside
      xi = nxi;
      eta = neta;
    }
    return std::nullopt;
  }

  const MultiPatchModel* m_;
  double scale_ = 1;
  std::vector<Eigen::AlignedBox2d> boxes_;
};

// ---------------------------------------------------------------------------
// Field sampling

struct FieldSample {
  Vec2 x;
  bool inside = false;
  double T = 0, phi = 0, kappa = 0;
  Vec2 q = Vec2::Zero();  // heat flux -kappa grad T
};

inline FieldSample sample_field(const Discretization& D, const PointLocator& loc, const Eigen::VectorXd& T,
                                const DesignField& f, const Vec2& x) {
  FieldSample s;
  s.x = x;
  const auto l = loc.locate(x);
  if (!l) return s;
  s.inside = true;
  const MultiPatchModel& m = D.model();
  const BasisEval e = eval_basis(m.patches[l->patch], l->xi, l->eta);
  Vec2 g = Vec2::Zero();
  for (size_t k = 0; k < e.R.size(); ++k) {
    const double u = T[D.offset(l->patch) + e.index[k]];
    s.T += e.R[k] * u;
    g += u * Vec2(e.dR_dx[k], e.dR_dy[k]);
  }
  const Region r = m.regions[l->patch];
  if (r == Region::design) {
    s.phi = eval_lsf(f, l->patch, l->xi, l->eta).phi;
    s.kappa = kappa_at(s.phi, m.design, D.smoothing());
  } else {
    s.kappa = m.region_kappa(r);
  }
  s.q = -s.kappa * g;
  return s;
}

struct Grid {
  int nx = 201, ny = 201;
  Vec2 origin = Vec2::Zero();
  Vec2 spacing = Vec2::Ones();
};

inline Grid bounding_grid(const MultiPatchModel& m, int n) {
  Eigen::AlignedBox2d box;
  for (const auto& P : m.patches)
    for (const auto& x : P.points()) box.extend(x);
  Grid g;
  g.nx = g.ny = n;
  g.origin = box.min();
  g.spacing = (box.max() - box.min()) / (n - 1);
  return g;
}

inline std::vector<FieldSample> sample_grid(const Discretization& D, const Eigen::VectorXd& T, const DesignField& f,
                                            const Grid& g) {
  const PointLocator loc(D.model());
  std::vector<FieldSample> out;
  out.reserve(static_cast<size_t>(g.nx) * g.ny);
  for (int j = 0; j < g.ny; ++j)
    for (int i = 0; i < g.nx; ++i)
      out.push_back(sample_field(D, loc, T, f, g.origin + Vec2(i * g.spacing.x(), j * g.spacing.y())));
  return out;
}

// ---------------------------------------------------------------------------
// Writers

inline std::string fmt(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.12g", v);
  return buf;
}

inline std::ofstream open_out(const std::filesystem::path& p) {
  if (p.has_parent_path()) std::filesystem::create_directories(p.parent_path());
  std::ofstream out(p);
  if (!out) throw Error("cannot write '" + p.string() + "'");
  return out;
}

inline void write_vtk(const std::filesystem::path& path, const Grid& g, const std::vector<FieldSample>& s) {
  auto out = open_out(path);
  out << "# vtk DataFile Version 3.0\nfield\nASCII\nDATASET STRUCTURED_POINTS\n";
  out << "DIMENSIONS " << g.nx << " " << g.ny << " 1\n";
  out << "ORIGIN " << fmt(g.origin.x()) << " " << fmt(g.origin.y()) << " 0\n";
  out << "SPACING " << fmt(g.spacing.x()) << " " << fmt(g.spacing.y()) << " 1\n";
  out << "POINT_DATA " << s.size() << "\n";
  auto scalar = [&](const char* name, auto get) {
    out << "SCALARS " << name << " double 1\nLOOKUP_TABLE default\n";
    for (const auto& p : s) out << fmt(get(p)) << "\n";
  };
  scalar("inside", [](const FieldSample& p) { return p.inside ? 1.0 : 0.0; });
  scalar("T", [](const FieldSample& p) { return p.T; });
  scalar("Phi", [](const FieldSample& p) { return p.phi; });
  scalar("kappa", [](const FieldSample& p) { return p.kappa; });
  out << "VECTORS flux double\n";
  for (const auto& p : s) out << fmt(p.q.x()) << " " << fmt(p.q.y()) << " 0\n";
}

inline void write_field_csv(const std::filesystem::path& path, const std::vector<FieldSample>& s) {
  auto out = open_out(path);
  out << "x,y,T,Phi,kappa,qx,qy\n";
  for (const auto& p : s)
    if (p.inside)
      out << fmt(p.x.x()) << "," << fmt(p.x.y()) << "," << fmt(p.T) << "," << fmt(p.phi) << "," << fmt(p.kappa) << ","
          << fmt(p.q.x()) << "," << fmt(p.q.y()) << "\n";
}

inline void write_convergence_csv(const std::filesystem::path& path, const std::vector<IterationRecord>& h) {
  auto out = open_out(path);
  out << "iter,fevals,J_main,J_Tknv,J_vol,J_total,g_inf,step,reinit\n";
  for (const auto& r : h)
    out << r.iter << "," << r.fevals << "," << fmt(r.J_main) << "," << fmt(r.J_tknv) << "," << fmt(r.J_vol) << ","
        << fmt(r.J_total) << "," << fmt(r.g_inf) << "," << fmt(r.step) << "," << (r.reinit ? 1 : 0) << "\n";
}

inline void write_coefficients_csv(const std::filesystem::path& path, const Eigen::VectorXd& c) {
  auto out = open_out(path);
  out << "index,value\n";
  for (Eigen::Index i = 0; i < c.size(); ++i) out << i << "," << fmt(c[i]) << "\n";
}

inline Eigen::VectorXd read_coefficients_csv(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open coefficient file '" + path.string() + "'");
  std::string line;
  std::getline(in, line);
  std::vector<double> v;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    const auto comma = line.find(',');
    if (comma == std::string::npos) throw ConfigError("malformed coefficient row '" + line + "'");
    v.push_back(std::stod(line.substr(comma + 1)));
  }
  return Eigen::Map<Eigen::VectorXd>(v.data(), static_cast<Eigen::Index>(v.size()));
}

inline void write_points_csv(const std::filesystem::path& path, const std::vector<Vec2>& pts) {
  auto out = open_out(path);
  out << "x,y\n";
  for (const auto& p : pts) out << fmt(p.x()) << "," << fmt(p.y()) << "\n";
}

// Generic table: header plus rows of numbers.
inline void write_table_csv(const std::filesystem::path& path, const std::vector<std::string>& header,
                            const std::vector<std::vector<double>>& rows) {
  auto out = open_out(path);
  for (size_t i = 0; i < header.size(); ++i) out << (i ? "," : "") << header[i];
  out << "\n";
  for (const auto& r : rows) {
    for (size_t i = 0; i < r.size(); ++i) out << (i ? "," : "") << fmt(r[i]);
    out << "\n";
  }
}

}  // namespace isotopo
