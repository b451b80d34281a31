#pragma once

// Planar Lipschitz (polygonal) domains: smooth pseudo-normal field, collar
// map f(x,t) = x + t psi(x), the involutive collar reflection, and the field
// extension operator that continues an SBV field past the boundary by
// reflection and cuts it off outside.

#include "sbv/field.hpp"

namespace sbv {

struct LipschitzDomain {
  Polygon vertices;  // counterclockwise, simple
  double eps0 = 0;   // uniform Lipschitz-chart radius
  double l0 = 0;     // uniform Lipschitz-chart slope bound
  double min_edge = 0;
  double diam = 0;
  std::vector<double> cum_length;  // cumulative arclength, cum_length[0] = 0
  double perimeter = 0;

  // Validates: at least 3 vertices, counterclockwise, simple polygon.
  static LipschitzDomain from_polygon(Polygon poly);

  bool contains(const Vec2& x) const { return point_in_polygon(vertices, x); }
  // Negative inside, positive outside.
  double signed_distance(const Vec2& x) const;
  double boundary_distance(const Vec2& x) const;
  Box2 bbox() const;

  // Arclength parametrization of the boundary (wraps modulo perimeter).
  Vec2 boundary_point(double s) const;
  Vec2 edge_tangent(double s) const;
  Vec2 edge_normal(double s) const;  // outward
  // Closest boundary point, returned as arclength.
  double project_arclength(const Vec2& x) const;
};

struct PseudoNormal {
  std::function<Vec2(const Vec2&)> psi;
  double gamma = 0;           // measured inf over boundary samples of psi . nu
  double c1_norm = 0;         // measured sup of |psi| + |D psi| near the boundary
  double mollify_radius = 0;
};

// psi* = sum over edges of cutoff(dist to edge / radius) * outward normal,
// normalized smoothly so |psi| = 1 wherever |psi*| is bounded away from zero
// (in particular on the boundary). Throws on gamma <= 0.
PseudoNormal build_pseudo_normal(const LipschitzDomain& d, double mollify_radius);

class CollarReflection {
 public:
  CollarReflection(LipschitzDomain d, PseudoNormal pn, double width);

  double width() const { return width_; }
  const LipschitzDomain& domain() const { return domain_; }
  const PseudoNormal& pseudo_normal() const { return pn_; }

  Vec2 forward(double s, double t) const {
    const Vec2 x = domain_.boundary_point(s);
    return x + t * pn_.psi(x);
  }

  // Inverse of the collar map: y = f(s, t). Throws NumericError if y is not
  // reachable within 1.5 * width (projected fixed point, scan fallback).
  std::pair<double, double> invert(const Vec2& y) const;

  bool in_collar(const Vec2& y) const;

  // Phi(y) = f(s, -t); identity on the boundary, involution on the collar.
  Vec2 reflect(const Vec2& y) const;

 private:
  LipschitzDomain domain_;
  PseudoNormal pn_;
  double width_;
};

// Collar construction with automatic width: starts at
// min(eps0 / (1 + l0), safety * min_edge) / 4 and halves until the inversion
// and the involution pass on a validation grid. Throws NumericError if no
// width down to 1e-5 * diam works.
CollarReflection build_collar(const LipschitzDomain& d, const PseudoNormal& pn,
                              double safety = 0.5);

struct ExtensionReport {
  double width = 0;
  double bulk_increment = 0;     // int over the outer collar of |grad U|^p
  double surface_increment = 0;  // g0-energy of the reflected interfaces
  int halvings = 0;
};

// U = u on Omega, u o Phi on the outer collar, 0 outside; interfaces crossing
// the collar gain reflected images (parametric reflection, cubic re-fit,
// jump transported unchanged). The collar width is halved until both measured
// increments are <= theta; throws NumericError when that fails at the
// minimum width.
SbvField extend_field(const SbvField& u, const LipschitzDomain& d, double theta, double p,
                      const Modulus& g0, ExtensionReport* report = nullptr);

}  // namespace sbv
