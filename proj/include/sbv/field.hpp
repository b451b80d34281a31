#pragma once

// Model of piecewise-smooth planar fields with explicit parametric jump
// interfaces, segment slicing (cumulated jump + absolutely continuous part),
// jump-energy measures, and the truncation operator.

#include "sbv/geometry.hpp"

#include <memory>
#include <optional>

namespace sbv {

// ---------------------------------------------------------------------------
// g0 modulus catalog: continuous, nondecreasing, subadditive, zero only at 0.

struct Modulus {
  enum class Kind { Power, CappedPower, IdentityAugmented };
  Kind kind = Kind::CappedPower;
  double q = 0.5;  // exponent in (0, 1]

  double operator()(double t) const {
    t = std::max(0.0, t);
    switch (kind) {
      case Kind::Power:
        return std::pow(t, q);
      case Kind::CappedPower:
        return std::min(1.0, std::pow(t, q));
      case Kind::IdentityAugmented:
        return std::min(1.0, std::pow(t, q)) + t;
    }
    return 0;
  }

  // Parameter value where a capped modulus loses smoothness, if any.
  std::optional<double> kink() const {
    if (kind == Kind::Power) return std::nullopt;
    return 1.0;
  }

  static Modulus parse(const std::string& name, double q);
};

// ---------------------------------------------------------------------------
// Jump interfaces: parametric C^1 curve with unit normal, jump amplitude and
// analytic two-sided extensions on a tube around the curve.

struct Interface {
  double tau0 = 0, tau1 = 1;
  std::function<Vec2(double)> gamma;            // curve point
  std::function<Vec2(double)> normal;           // unit normal, consistent side
  std::function<VecM(double)> jump;             // u+ - u- at gamma(tau)
  std::function<VecM(const Vec2&)> eval_plus;   // extension of the nu side
  std::function<VecM(const Vec2&)> eval_minus;  // extension of the other side
  std::function<MatM2(const Vec2&)> grad_plus;
  std::function<MatM2(const Vec2&)> grad_minus;
  double tube_width = 0.1;
  // Signed side function: > 0 on the nu side, < 0 opposite, 0 on the curve.
  std::function<double(const Vec2&)> side;
  // Approximate unsigned distance to the curve (defaults to |side| if unset).
  std::function<double(const Vec2&)> distance;
  // Intersections with segment a + t(b - a): pairs (t, tau), unsorted.
  std::function<std::vector<std::pair<double, double>>(const Vec2&, const Vec2&)>
      segment_crossings;

  Vec2 tangent(double tau, double h = 1e-6) const {
    return Vec2((gamma(tau + h) - gamma(tau - h)) / (2 * h));
  }
};

struct SbvField {
  int m = 1;
  std::function<VecM(const Vec2&)> eval;   // defined off the interfaces
  std::function<MatM2(const Vec2&)> grad;  // classical gradient off interfaces
  std::vector<Interface> interfaces;
  std::optional<Box2> domain;
};

struct Crossing {
  double t = 0;    // segment parameter in (0,1)
  double tau = 0;  // curve parameter
  int interface_index = 0;
  VecM jump;
  Vec2 nu;
};

inline constexpr double kTangencyTol = 1e-8;
inline constexpr double kEndpointTol = 1e-12;

// Sorted transversal crossings with segment parameter strictly inside (0,1).
// A crossing whose normal is orthogonal to the segment direction (within
// kTangencyTol relative) raises DegenerateSliceError: the caller re-jitters.
std::vector<Crossing> interface_crossings(const SbvField& f, const Vec2& a, const Vec2& b);

// Cumulated jump over the open segment: sum of jump * sign(nu . (b-a)).
VecM slice_jump(const SbvField& f, const Vec2& a, const Vec2& b);

// Raises DegenerateSliceError if either endpoint sits on an interface.
void check_endpoints_off_interfaces(const SbvField& f, const Vec2& a, const Vec2& b);

// Absolutely continuous part xi = u(b) - u(a) - s_{[a,b]}.
VecM slice_grad(const SbvField& f, const Vec2& a, const Vec2& b);

// Quadrature oracle for xi: integral of grad u (b-a) along the segment,
// split at the interface crossings.
VecM slice_grad_oracle(const SbvField& f, const Vec2& a, const Vec2& b, double rel_tol = 1e-9);

// Parameter sub-intervals of the interface curve lying inside the box.
std::vector<std::pair<double, double>> interface_param_intervals(const Interface& itf,
                                                                 const Box2& box);

// mu_u(region) = integral over J_u of g0(|[u]|) dH^1, adaptive in tau with
// the curve clipped to the region.
double g0_jump_energy(const SbvField& f, const Modulus& g0, const Box2& region,
                      double rel_tol = 1e-8);

// Plain H^1 measure of the interfaces within the region.
double interface_length(const SbvField& f, const Box2& region, double rel_tol = 1e-8);

// Jump variation: integral of |[u]| over the interfaces within the region.
double jump_variation(const SbvField& f, const Box2& region, double rel_tol = 1e-8);

// The translated field x -> f(x - v), interfaces carried along.
SbvField translate(const SbvField& f, const Vec2& v);

// Truncation T_k: identity on |z| <= lo, zero on |z| >= hi, radial linear
// ramp in between. The profile slope stays <= 1 (so |D T_k| <= 1) exactly
// when hi >= 2 lo; truncation_profile_slope reports the measured maximum.
SbvField truncate(const SbvField& f, double lo, double hi);
double truncation_profile_slope(double lo, double hi);

// ---------------------------------------------------------------------------
// Field presets (analytic interfaces + extensions).

// Affine field u(x) = A x + b, no interfaces.
SbvField make_affine(const MatM2& a, const VecM& b);

// u = background + amplitude * chi_{x . n > c}; the plus side is the n side.
// The background is affine (slope bg_a, offset bg_b).
SbvField make_line_step(const Vec2& n, double c, const VecM& amplitude, const MatM2& bg_a,
                        const VecM& bg_b, const Box2& domain);

// Scalar indicator of the half-plane {x . n > c}.
SbvField make_indicator(const Vec2& n, double c, const Box2& domain);

// u = background + amplitude * chi_{y > phi(x)} for an analytic graph phi.
SbvField make_graph_step(const std::function<double(double)>& phi,
                         const std::function<double(double)>& dphi, const VecM& amplitude,
                         const MatM2& bg_a, const VecM& bg_b, const Box2& domain);

// Smooth nonlinear part plus a single line jump (scalar):
// u = 0.3 sin(pi x) cos(pi y) + amplitude * chi_{x . n > c}.
SbvField make_smooth_plus_jump(const Vec2& n, double c, double amplitude, const Box2& domain);

// Sum over k = 1..K of a_k * chi_{y > 1/k}: K horizontal interfaces.
SbvField make_stacked_lines(int k_count, const std::function<double(int)>& a_k,
                            const Box2& domain);

// Sawtooth u_j(x) = frac(j x1)/j: gradient e1, jumps -1/j on lines x1 = k/j.
SbvField make_sawtooth(int j, const Box2& domain);

}  // namespace sbv
