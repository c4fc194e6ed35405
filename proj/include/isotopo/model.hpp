#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <functional>
#include <map>
#include <numbers>
#include <optional>
#include <string>
#include <vector>

#include "errors.hpp"
#include "splines.hpp"

namespace isotopo {

enum class Region { inside, design, outside, sector };

inline const char* region_name(Region r) {
  switch (r) {
    case Region::inside: return "inside";
    case Region::design: return "design";
    case Region::outside: return "outside";
    case Region::sector: return "sector";
  }
  return "?";
}

// Edge ids: 0 -> eta=0, 1 -> xi=1, 2 -> eta=1, 3 -> xi=0.
enum class Edge { v0 = 0, u1 = 1, v1 = 2, u0 = 3 };
inline constexpr std::array<Edge, 4> kEdges{Edge::v0, Edge::u1, Edge::v1, Edge::u0};

enum class BcKind { dirichlet, neumann, insulated };

struct BoundaryTag {
  int patch = 0;
  Edge edge = Edge::v0;
  BcKind kind = BcKind::insulated;
  double value = 0.0;  // K for Dirichlet, W/m^2 for Neumann
};

struct InterfacePair {
  int patch1 = 0, patch2 = 0;
  Edge edge1 = Edge::v0, edge2 = Edge::v0;
  bool reversed = false;  // edge2 runs against edge1
  std::vector<std::pair<int, int>> matched;  // local control indices (patch1, patch2)
};

// Which base direction a parametric direction follows; drives refinement.
enum class DirClass { circumferential, radial };

struct MaterialPair {
  double k1 = 1.0;  // Phi >= 0
  double k2 = 1.0;  // Phi < 0
};

struct NitscheParams {
  double beta = 1e12;
  double gamma = 0.5;
};

struct MultiPatchModel {
  std::string name;
  std::vector<NurbsPatch> patches;
  std::vector<Region> regions;
  std::vector<std::array<DirClass, 2>> dir_class;
  std::vector<InterfacePair> interfaces;
  std::vector<BoundaryTag> boundary;

  double kappa_inside = 1.0;
  double kappa_outside = 1.0;
  double kappa_sector = 1.0;
  double kappa_base = 1.0;       // reference filling material
  double kappa_insulator = 1.0;  // filling used for the normalization field
  MaterialPair design;
  NitscheParams nitsche;
  bool symmetric = false;  // x/y reflection symmetry of geometry and loading
  double length_unit = 1.0;  // metres per model length unit

  int num_patches() const { return static_cast<int>(patches.size()); }

  double region_kappa(Region r) const {
    switch (r) {
      case Region::inside: return kappa_inside;
      case Region::outside: return kappa_outside;
      case Region::sector: return kappa_sector;
      case Region::design: break;
    }
    throw ModelError("design region conductivity depends on the level set");
  }

  std::vector<int> patches_in(Region r) const {
    std::vector<int> out;
    for (int i = 0; i < num_patches(); ++i)
      if (regions[i] == r) out.push_back(i);
    return out;
  }
};

// ---------------------------------------------------------------------------
// Edge helpers

inline std::vector<int> edge_indices(const NurbsPatch& P, Edge e) {
  std::vector<int> out;
  switch (e) {
    case Edge::v0:
      for (int i = 0; i < P.nu(); ++i) out.push_back(P.index(i, 0));
      break;
    case Edge::v1:
      for (int i = 0; i < P.nu(); ++i) out.push_back(P.index(i, P.nv() - 1));
      break;
    case Edge::u0:
      for (int j = 0; j < P.nv(); ++j) out.push_back(P.index(0, j));
      break;
    case Edge::u1:
      for (int j = 0; j < P.nv(); ++j) out.push_back(P.index(P.nu() - 1, j));
      break;
  }
  return out;
}

inline Dir edge_dir(Edge e) { return (e == Edge::v0 || e == Edge::v1) ? Dir::u : Dir::v; }

// Parametric point on edge e at edge parameter t.
inline std::pair<double, double> edge_param(const NurbsPatch& P, Edge e, double t) {
  switch (e) {
    case Edge::v0: return {t, P.knots_v().front()};
    case Edge::v1: return {t, P.knots_v().back()};
    case Edge::u0: return {P.knots_u().front(), t};
    case Edge::u1: return {P.knots_u().back(), t};
  }
  return {0, 0};
}

// Outward unit normal and length element on an edge of a positively oriented patch.
inline std::pair<Vec2, double> edge_normal(const BasisEval& b, Edge e) {
  const Vec2 t = edge_dir(e) == Dir::u ? Vec2(b.jacobian.col(0)) : Vec2(b.jacobian.col(1));
  const double ds = t.norm();
  Vec2 n = (e == Edge::v0 || e == Edge::u1) ? Vec2(t.y(), -t.x()) : Vec2(-t.y(), t.x());
  return {n / ds, ds};
}

inline double model_scale(const MultiPatchModel& m) {
  double s = 0;
  for (const auto& P : m.patches)
    for (const auto& x : P.points()) s = std::max(s, x.cwiseAbs().maxCoeff());
  return std::max(s, 1e-300);
}

// Pairs every geometrically shared edge. Edges whose end points coincide but
// whose nets differ are reported as a model error.
inline std::vector<InterfacePair> match_interfaces(const std::vector<NurbsPatch>& patches, double scale) {
  const double tol = 1e-10 * scale;
  std::vector<InterfacePair> out;
  const int n = static_cast<int>(patches.size());
  auto same = [&](const Vec2& a, const Vec2& b) { return (a - b).norm() <= tol; };
  for (int a = 0; a < n; ++a)
    for (int ea = 0; ea < 4; ++ea)
      for (int b = a; b < n; ++b)
        for (int eb = (b == a ? ea + 1 : 0); eb < 4; ++eb) {
          const NurbsPatch& A = patches[a];
          const NurbsPatch& B = patches[b];
          const auto ia = edge_indices(A, kEdges[ea]);
          const auto ib = edge_indices(B, kEdges[eb]);
          const Vec2& a0 = A.points()[ia.front()];
          const Vec2& a1 = A.points()[ia.back()];
          const Vec2& b0 = B.points()[ib.front()];
          const Vec2& b1 = B.points()[ib.back()];
          bool rev;
          if (same(a0, b0) && same(a1, b1) && !same(a0, a1))
            rev = false;
          else if (same(a0, b1) && same(a1, b0) && !same(a0, a1))
            rev = true;
          else
            continue;
          // Curves with equal end points may still be different curves (e.g. two
          // sides of a thin sliver); compare the mid-edge physical point first.
          const auto [ax, ay] = edge_param(A, kEdges[ea], 0.5 * (A.knots(edge_dir(kEdges[ea])).front() +
                                                                  A.knots(edge_dir(kEdges[ea])).back()));
          const auto [bx, by] = edge_param(B, kEdges[eb], 0.5 * (B.knots(edge_dir(kEdges[eb])).front() +
                                                                  B.knots(edge_dir(kEdges[eb])).back()));
          if (!same(eval_point(A, ax, ay), eval_point(B, bx, by))) continue;
          bool ok = ia.size() == ib.size();
          const auto& ka = A.knots(edge_dir(kEdges[ea])).values();
          const auto& kb = B.knots(edge_dir(kEdges[eb])).values();
          ok = ok && ka.size() == kb.size();
          if (ok) {
            const double la = ka.back() - ka.front(), lb = kb.back() - kb.front();
            for (size_t k = 0; k < ka.size() && ok; ++k) {
              const double sa = (ka[k] - ka.front()) / la;
              const double sb = rev ? (kb.back() - kb[kb.size() - 1 - k]) / lb : (kb[k] - kb.front()) / lb;
              ok = std::abs(sa - sb) <= 1e-12;
            }
          }
          InterfacePair ip{a, b, kEdges[ea], kEdges[eb], rev, {}};
          for (size_t k = 0; k < ia.size() && ok; ++k) {
            const int kb2 = rev ? ib[ib.size() - 1 - k] : ib[k];
            const double wa = A.weights()[ia[k]], wb = B.weights()[kb2];
            ok = same(A.points()[ia[k]], B.points()[kb2]) && std::abs(wa - wb) <= 1e-10 * std::max(wa, wb);
            ip.matched.emplace_back(ia[k], kb2);
          }
          if (!ok)
            throw ModelError("mismatched interface nets between patch " + std::to_string(a) + " edge " +
                             std::to_string(ea) + " and patch " + std::to_string(b) + " edge " + std::to_string(eb));
          out.push_back(std::move(ip));
        }
  return out;
}

inline bool is_interface_edge(const MultiPatchModel& m, int patch, Edge e) {
  for (const auto& ip : m.interfaces)
    if ((ip.patch1 == patch && ip.edge1 == e) || (ip.patch2 == patch && ip.edge2 == e)) return true;
  return false;
}

// Checks the tagging invariants: every exterior edge tagged exactly once, no tag on
// an interface edge.
inline void validate_model(const MultiPatchModel& m) {
  const int n = m.num_patches();
  if (static_cast<int>(m.regions.size()) != n || static_cast<int>(m.dir_class.size()) != n)
    throw ModelError("per-patch tables do not match patch count");
  for (int p = 0; p < n; ++p)
    for (Edge e : kEdges) {
      int count = 0;
      for (const auto& t : m.boundary)
        if (t.patch == p && t.edge == e) ++count;
      const bool iface = is_interface_edge(m, p, e);
      if (iface && count > 0) throw ModelError("interface edge carries a boundary tag");
      if (!iface && count != 1)
        throw ModelError("exterior edge " + std::to_string(static_cast<int>(e)) + " of patch " + std::to_string(p) +
                         (count == 0 ? " is untagged" : " is tagged more than once"));
    }
  if (m.design.k1 <= 0 || m.design.k2 <= 0 || m.kappa_inside <= 0 || m.kappa_outside <= 0 || m.kappa_sector <= 0)
    throw ModelError("conductivities must be positive");
}

// ---------------------------------------------------------------------------
// Shapes: closed curves made of four quadratic rational arcs, arc k centred on
// direction k*90deg + angle, running counter-clockwise.

struct Arc {
  std::array<Vec2, 3> p;
  std::array<double, 3> w;
};
using Curve4 = std::array<Arc, 4>;

struct Shape {
  enum Kind { circle, ellipse, rectangle } kind = circle;
  double a = 1.0;  // radius / semi-axis x / half-width
  double b = 1.0;  // semi-axis y / half-height (ignored for circles)
  double angle = 0.0;  // degrees, counter-clockwise

  static Shape make_circle(double r, double angle = 0) { return {circle, r, r, angle}; }
  static Shape make_ellipse(double a, double b, double angle = 0) { return {ellipse, a, b, angle}; }
  static Shape make_rect(double hw, double hh, double angle = 0) { return {rectangle, hw, hh, angle}; }

  Eigen::Matrix2d rotation() const {
    const double t = angle * std::numbers::pi / 180.0;
    Eigen::Matrix2d R;
    R << std::cos(t), -std::sin(t), std::sin(t), std::cos(t);
    return R;
  }

  Curve4 curve() const {
    const Eigen::Matrix2d R = rotation();
    const Eigen::Matrix2d S = Eigen::Vector2d(a, kind == circle ? a : b).asDiagonal();
    Curve4 c;
    const double h = std::numbers::sqrt2 / 2.0;
    for (int k = 0; k < 4; ++k) {
      const double t = k * std::numbers::pi / 2.0;
      const Vec2 d(std::cos(t), std::sin(t));
      const Vec2 m(-d.y(), d.x());
      if (kind == rectangle) {
        c[k].p = {R * S * (d - m), R * S * d, R * S * (d + m)};
        c[k].w = {1.0, 1.0, 1.0};
      } else {
        // 90deg arc: end points at 45deg either side, middle point where the end
        // tangents meet, at radius sqrt(2).
        c[k].p = {R * S * (h * (d - m)), R * S * (std::numbers::sqrt2 * d), R * S * (h * (d + m))};
        c[k].w = {1.0, h, 1.0};
      }
    }
    return c;
  }

  double circumradius() const {
    if (kind == circle) return a;
    if (kind == ellipse) return std::max(a, b);
    return std::hypot(a, b);
  }

  // Inner square whose sides form the inner boundary of the first ring.
  Shape core(double fraction) const {
    return make_rect(fraction * a, fraction * (kind == circle ? a : b), angle);
  }
};

// Ring patch between two curves: u follows arc k (degree 2), v runs from outer
// (v=0) to inner (v=1), which keeps the Jacobian positive for CCW arcs.
inline NurbsPatch ring_patch(const Arc& inner, const Arc& outer) {
  std::vector<Vec2> pts{outer.p[0], outer.p[1], outer.p[2], inner.p[0], inner.p[1], inner.p[2]};
  std::vector<double> w{outer.w[0], outer.w[1], outer.w[2], inner.w[0], inner.w[1], inner.w[2]};
  return {open_uniform(2, 1), open_uniform(1, 1), std::move(pts), std::move(w)};
}

inline NurbsPatch core_patch(const Shape& rect) {
  const Eigen::Matrix2d R = rect.rotation();
  std::vector<Vec2> pts;
  for (int j = 0; j < 3; ++j)
    for (int i = 0; i < 3; ++i) pts.push_back(R * Vec2((i - 1) * rect.a, (j - 1) * rect.b));
  return {open_uniform(2, 1), open_uniform(2, 1), std::move(pts), std::vector<double>(9, 1.0)};
}

struct Layer {
  Shape shape;                    // outer boundary of the layer
  std::array<Region, 4> regions;  // per quarter (right, top, left, bottom)
};

using EdgeClassifier = std::function<std::optional<BoundaryTag>(int patch, Edge e, const std::vector<Vec2>& cps)>;

inline void finalize_model(MultiPatchModel& m, const EdgeClassifier& classify) {
  m.interfaces = match_interfaces(m.patches, model_scale(m));
  m.boundary.clear();
  for (int p = 0; p < m.num_patches(); ++p)
    for (Edge e : kEdges) {
      if (is_interface_edge(m, p, e)) continue;
      std::vector<Vec2> cps;
      for (int k : edge_indices(m.patches[p], e)) cps.push_back(m.patches[p].points()[k]);
      auto tag = classify(p, e, cps);
      if (!tag) throw ModelError("exterior edge of patch " + std::to_string(p) + " could not be classified");
      tag->patch = p;
      tag->edge = e;
      m.boundary.push_back(*tag);
    }
  validate_model(m);
}

// Concentric layers inside a square plate [-half, half]^2. The innermost layer
// gets a core patch; the plate ring is labelled outside.
inline MultiPatchModel build_layered(const std::vector<Layer>& layers, double half, double t_left, double t_right,
                                     double core_fraction = 0.45) {
  if (layers.empty()) throw ConfigError("layered model needs at least one layer");
  MultiPatchModel m;
  const Shape core = layers.front().shape.core(core_fraction);
  m.patches.push_back(core_patch(core));
  m.regions.push_back(layers.front().regions[0]);
  m.dir_class.push_back({DirClass::circumferential, DirClass::circumferential});
  Curve4 inner = core.curve();
  auto add_ring = [&](const Curve4& outer, const std::array<Region, 4>& reg) {
    for (int k = 0; k < 4; ++k) {
      m.patches.push_back(ring_patch(inner[k], outer[k]));
      m.regions.push_back(reg[k]);
      m.dir_class.push_back({DirClass::circumferential, DirClass::radial});
    }
    inner = outer;
  };
  for (const auto& L : layers) add_ring(L.shape.curve(), L.regions);
  const std::array<Region, 4> out{Region::outside, Region::outside, Region::outside, Region::outside};
  // A rotated outline would twist the plate ring into a fold; untwist over two
  // circular transition rings instead.
  const Shape& last = layers.back().shape;
  if (std::abs(std::remainder(last.angle, 90.0)) > 1e-9) {
    const double r0 = last.circumradius(), r1 = 0.95 * half;
    if (!(r0 < r1)) throw ModelError("rotated outline leaves no room for the plate ring");
    add_ring(Shape::make_circle(0.5 * (r0 + r1), last.angle).curve(), out);
    add_ring(Shape::make_circle(r1, 0.5 * last.angle).curve(), out);
  }
  add_ring(Shape::make_rect(half, half).curve(), out);

  const double tol = 1e-9 * half;
  finalize_model(m, [=](int, Edge, const std::vector<Vec2>& cps) -> std::optional<BoundaryTag> {
    auto all = [&](auto pred) { return std::all_of(cps.begin(), cps.end(), pred); };
    if (all([&](const Vec2& x) { return std::abs(x.x() + half) <= tol; }))
      return BoundaryTag{0, Edge::v0, BcKind::dirichlet, t_left};
    if (all([&](const Vec2& x) { return std::abs(x.x() - half) <= tol; }))
      return BoundaryTag{0, Edge::v0, BcKind::dirichlet, t_right};
    if (all([&](const Vec2& x) { return std::abs(std::abs(x.y()) - half) <= tol; }))
      return BoundaryTag{0, Edge::v0, BcKind::insulated, 0.0};
    return std::nullopt;
  });
  return m;
}

// ---------------------------------------------------------------------------
// Built-in problems

struct AnnulusSetup {
  double Ra = 1.0, Rb = 2.0;
  double Ta = 0.0, Tb = 100.0;
  double kappa_a = 100.0, kappa_b = 10.0;  // inner / outer material
};

// Single full-ring patch (rational quadratic around, linear across) whose seam
// u=0/u=1 is coupled to itself as an interface.
inline MultiPatchModel build_annulus(const AnnulusSetup& s = {}) {
  if (!(s.Ra > 0 && s.Rb > s.Ra)) throw ConfigError("annulus radii must satisfy 0 < Ra < Rb");
  if (!(s.kappa_a > 0 && s.kappa_b > 0)) throw ConfigError("annulus conductivities must be positive");
  const double h = std::numbers::sqrt2 / 2.0;
  std::vector<Vec2> pts;
  std::vector<double> w;
  for (double R : {s.Rb, s.Ra})
    for (int k = 0; k <= 8; ++k) {
      const double t = k * std::numbers::pi / 4.0;
      const bool mid = k % 2 == 1;
      const double r = mid ? R * std::numbers::sqrt2 : R;
      pts.emplace_back(r * std::cos(t), r * std::sin(t));
      w.push_back(mid ? h : 1.0);
    }
  MultiPatchModel m;
  m.name = "annulus";
  m.patches.emplace_back(KnotVector({0, 0, 0, 0.25, 0.25, 0.5, 0.5, 0.75, 0.75, 1, 1, 1}, 2), open_uniform(1, 1),
                         std::move(pts), std::move(w));
  m.regions = {Region::design};
  m.dir_class = {{DirClass::circumferential, DirClass::radial}};
  // Phi = r - R_L is positive outside the interface, so the outer material is k1.
  m.design = {s.kappa_b, s.kappa_a};
  m.kappa_base = s.kappa_b;
  m.kappa_insulator = s.kappa_b;
  m.kappa_inside = m.kappa_outside = m.kappa_sector = s.kappa_b;
  m.symmetric = true;
  const double tol = 1e-9 * s.Rb;
  finalize_model(m, [=](int, Edge, const std::vector<Vec2>& cps) -> std::optional<BoundaryTag> {
    // Corner control points sit off the circle, so classify by the interpolated end points.
    const double r = cps.front().norm();
    if (std::abs(r - s.Ra) <= tol) return BoundaryTag{0, Edge::v0, BcKind::dirichlet, s.Ta};
    if (std::abs(r - s.Rb) <= tol) return BoundaryTag{0, Edge::v0, BcKind::dirichlet, s.Tb};
    return std::nullopt;
  });
  return m;
}

struct CloakMaterials {
  double base = 200.0;        // aluminium plate
  double obstacle = 1e-4;     // insulating obstacle
  double insulator = 1e-4;    // normalization filling
  double high = 398.0;        // copper, Phi >= 0
  double low = 0.27;          // PDMS, Phi < 0
};

// Plate side 140 mm; obstacle and cloak outlines per configuration id:
// "circular", "I".."VIII".
inline MultiPatchModel build_cloak_model(const std::string& config = "circular", const CloakMaterials& mat = {},
                                         double t_left = 300.0, double t_right = 200.0) {
  const double half = 70.0;
  Shape obstacle = Shape::make_circle(20.0);
  Shape cloak = Shape::make_circle(40.0);
  bool symmetric = true;
  if (config == "circular") {
  } else if (config == "I") {
    obstacle = Shape::make_rect(15.0, 15.0);
  } else if (config == "II") {
    obstacle = Shape::make_rect(20.0, 10.0);
  } else if (config == "III") {
    obstacle = Shape::make_rect(10.0, 20.0);
  } else if (config == "IV") {
    obstacle = Shape::make_ellipse(25.0, 12.5);
  } else if (config == "V") {
    obstacle = Shape::make_ellipse(25.0, 12.5, 30.0);
    cloak = Shape::make_circle(40.0, 30.0);
    symmetric = false;
  } else if (config == "VI") {
    cloak = Shape::make_rect(40.0, 40.0);
  } else if (config == "VII") {
    cloak = Shape::make_rect(55.0, 35.0);
  } else if (config == "VIII") {
    obstacle = Shape::make_circle(20.0, 30.0);
    cloak = Shape::make_rect(40.0, 40.0, 30.0);
    symmetric = false;
  } else {
    throw ConfigError("unknown cloak configuration '" + config + "'");
  }
  const auto in = Region::inside, de = Region::design;
  MultiPatchModel m = build_layered({{obstacle, {in, in, in, in}}, {cloak, {de, de, de, de}}}, half, t_left, t_right);
  m.name = "cloak-" + config;
  m.length_unit = 1e-3;
  m.kappa_inside = mat.obstacle;
  m.kappa_outside = mat.base;
  m.kappa_sector = mat.base;
  m.kappa_base = mat.base;
  m.kappa_insulator = mat.insulator;
  m.design = {mat.high, mat.low};
  m.symmetric = symmetric;
  return m;
}

struct CamouflageMaterials {
  double base = 177.0;      // aluminium plate
  double sector = 1e-4;     // insulator sectors
  double object = 72.7;     // magnesium object
  double insulator = 1e-4;  // normalization filling
  double high = 398.0;
  double low = 0.27;
};

// Plate side 100 mm: object r < 15, design 15 < r < 30, insulator sectors in
// 30 < r < 40 facing the left and right edges.
inline MultiPatchModel build_camouflage_model(const CamouflageMaterials& mat = {}, double t_left = 300.0,
                                              double t_right = 200.0) {
  const auto in = Region::inside, de = Region::design, se = Region::sector, ou = Region::outside;
  MultiPatchModel m = build_layered({{Shape::make_circle(15.0), {in, in, in, in}},
                                     {Shape::make_circle(30.0), {de, de, de, de}},
                                     {Shape::make_circle(40.0), {se, ou, se, ou}}},
                                    50.0, t_left, t_right);
  m.name = "camouflage";
  m.length_unit = 1e-3;
  m.kappa_inside = mat.object;
  m.kappa_outside = mat.base;
  m.kappa_sector = mat.sector;
  m.kappa_base = mat.base;
  m.kappa_insulator = mat.insulator;
  m.design = {mat.high, mat.low};
  m.symmetric = true;
  return m;
}

// ---------------------------------------------------------------------------
// Refinement

struct RefineSpec {
  int p_circ = 2;      // target degree in circumferential directions
  int p_rad = 1;       // target degree in radial directions
  int circ_spans = 1;  // spans per base span, circumferential
  int rad_spans = 1;   // spans per base span, radial
  int design_rad_spans = 0;  // radial override on design patches (0: use rad_spans)

  int spans_for(DirClass c, Region r) const {
    if (c == DirClass::circumferential) return circ_spans;
    return (r == Region::design && design_rad_spans > 0) ? design_rad_spans : rad_spans;
  }
  int degree_for(DirClass c) const { return c == DirClass::circumferential ? p_circ : p_rad; }
};

inline NurbsPatch refine_patch(const NurbsPatch& P, const std::array<DirClass, 2>& cls, Region region,
                               const RefineSpec& s) {
  NurbsPatch out = P;
  for (int d = 0; d < 2; ++d) {
    const Dir dir = d == 0 ? Dir::u : Dir::v;
    const int target = s.degree_for(cls[d]);
    const int cur = out.knots(dir).degree();
    if (target > cur) out = degree_elevate(out, target - cur, dir);
    out = subdivide(out, s.spans_for(cls[d], region), dir);
  }
  return out;
}

inline MultiPatchModel refine_model(const MultiPatchModel& base, const RefineSpec& s) {
  if (s.circ_spans < 1 || s.rad_spans < 1 || s.design_rad_spans < 0) throw ConfigError("span counts must be >= 1");
  if (s.p_circ < 2 || s.p_rad < 1) throw ConfigError("refinement degrees below the base geometry degrees");
  MultiPatchModel m = base;
  for (int i = 0; i < m.num_patches(); ++i) m.patches[i] = refine_patch(base.patches[i], base.dir_class[i], base.regions[i], s);
  m.interfaces = match_interfaces(m.patches, model_scale(m));
  if (m.interfaces.size() != base.interfaces.size()) throw ModelError("interface pairing changed under refinement");
  validate_model(m);
  return m;
}

struct TwoStage {
  MultiPatchModel solution;
  std::vector<NurbsPatch> design;  // one per design-region patch, ascending patch id
  std::vector<int> design_patch_ids;
};

inline TwoStage two_stage_refine(const MultiPatchModel& base, const RefineSpec& design, const RefineSpec& solution) {
  auto rad = [](const RefineSpec& s) { return s.design_rad_spans > 0 ? s.design_rad_spans : s.rad_spans; };
  if (solution.p_circ < design.p_circ || solution.p_rad < design.p_rad || solution.circ_spans < design.circ_spans ||
      rad(solution) < rad(design))
    throw ConfigError("solution refinement must not be coarser than design refinement");
  TwoStage out;
  out.solution = refine_model(base, solution);
  for (int i = 0; i < base.num_patches(); ++i)
    if (base.regions[i] == Region::design) {
      out.design.push_back(refine_patch(base.patches[i], base.dir_class[i], Region::design, design));
      out.design_patch_ids.push_back(i);
    }
  if (out.design.empty()) throw ConfigError("model has no design region");
  return out;
}

}  // namespace isotopo
