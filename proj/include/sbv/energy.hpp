#pragma once

// Free-discontinuity energies and comparison metrics: exact bulk integrals of
// piecewise-affine approximants, adaptive bulk/surface integrals of fields,
// and the jump-set discrepancies d1 / d2 / symmetric-difference length under
// a deformation of the domain.

#include "sbv/projector.hpp"

namespace sbv {

// ---------------------------------------------------------------------------
// Densities.

// Convex bulk density with p-growth. The catalog covers |xi|^p and the area
// integrand sqrt(1 + |xi|^2); arbitrary densities plug in through `psi`.
struct BulkDensity {
  std::function<double(const MatM2&)> psi;
  double p = 2;

  double operator()(const MatM2& g) const { return psi(g); }

  static BulkDensity p_power(double p);
  static BulkDensity area();
};

// Surface density g(s, nu). Cohesive: g0(|s|); brittle: the constant alpha;
// anisotropic product: g0(|s|) * rho(nu) with rho even and positive.
struct SurfaceDensity {
  enum class Kind { Cohesive, Brittle, AnisotropicProduct };
  Kind kind = Kind::Cohesive;
  Modulus g0;
  double alpha = 1;
  std::function<double(const Vec2&)> rho;

  double operator()(double jump_norm, const Vec2& nu) const {
    switch (kind) {
      case Kind::Cohesive:
        return g0(jump_norm);
      case Kind::Brittle:
        return alpha;
      case Kind::AnisotropicProduct:
        return g0(jump_norm) * rho(nu);
    }
    return 0;
  }

  static SurfaceDensity cohesive(const Modulus& g0);
  static SurfaceDensity brittle(double alpha);
};

// ---------------------------------------------------------------------------
// Energies.

// Exact bulk integral of an approximant: sum over subcells of
// psi(gradient) * area(subcell intersect region).
double bulk_energy(const PwAffineFunction& w, const BulkDensity& psi, const Box2& region);

// Adaptive quadtree integral of psi(grad u) over the region.
double bulk_energy(const SbvField& f, const BulkDensity& psi, const Box2& region,
                   double rel_tol = 1e-5);

// Surface energy of a face inventory, faces clipped to the region; each face
// carries an affine jump, so modulus kinks are split analytically.
double surface_energy(const std::vector<JumpFace>& faces, const SurfaceDensity& g,
                      const Box2& region);

// Surface energy of a field over its interfaces clipped to the region.
double surface_energy(const SbvField& f, const SurfaceDensity& g, const Box2& region,
                      double rel_tol = 1e-8);

// ---------------------------------------------------------------------------
// Jump-set comparison under a deformation.

// Forward/inverse pair for a bi-Lipschitz deformation of the plane; identity
// short-circuits both maps.
struct DeformationMap {
  std::function<Vec2(const Vec2&)> forward;
  std::function<Vec2(const Vec2&)> inverse;
  bool identity = true;

  Vec2 apply(const Vec2& x) const { return identity ? x : forward(x); }
  Vec2 pull(const Vec2& y) const { return identity ? y : inverse(y); }
};

struct JumpComparison {
  double d1 = 0;        // integral of g0(|[u] - [w] o Phi|)
  double d2 = 0;        // integral of g0(|[u]| + |[w] o Phi|) |nu_u - nu_w o Phi|
  double sym_diff = 0;  // H^1(J_u symmetric-difference Phi^{-1}(J_w))
  double matched_length = 0;
  double unmatched_field_length = 0;
  double unmatched_approx_length = 0;
};

// Compares the field jump set with a face inventory pulled back through the
// deformation. A field point x is matched when Phi(x) lies within match_tol
// of a face; a face point y is matched when Phi^{-1}(y) lies within
// face_match_tol of an interface. Matched normals are oriented to agree with
// nu_u; unmatched partners count as zero jump with zero normal vector.
JumpComparison jump_discrepancy(const SbvField& f, const std::vector<JumpFace>& faces,
                                double eps, const DeformationMap& phi, const Modulus& g0,
                                const Box2& region, double match_tol = 1e-9,
                                double face_match_tol = 1e-8);

// ---------------------------------------------------------------------------
// Strict / area-strict functionals and distances.

struct StrictMetrics {
  double grad_l1 = 0;   // integral of |grad|
  double area = 0;      // integral of sqrt(1 + |grad|^2)
  double jump_var = 0;  // integral of |jump|

  double strict() const { return grad_l1 + jump_var; }
  double area_strict() const { return area + jump_var; }
};

StrictMetrics strict_metrics(const PwAffineFunction& w, const std::vector<JumpFace>& faces,
                             const Box2& region);
StrictMetrics strict_metrics(const SbvField& f, const Box2& region, double rel_tol = 1e-6);

// L1 distance and p-th power gradient distance between an approximant and a
// field, integrated cell by cell (exact subcell areas, low-order quadrature
// for the field part).
struct BulkDistance {
  double l1 = 0;
  double lp_grad = 0;  // integral of |grad w - grad u|^p
};
BulkDistance bulk_distance(const PwAffineFunction& w, const SbvField& f, const Box2& region,
                           double p);

// ---------------------------------------------------------------------------
// One row of the convergence ledger.

struct MetricsRecord {
  double theta = 0, eps = 0, delta = 0;
  double l1 = 0, lp_grad = 0;
  double d1 = 0, d2 = 0, hn1_sym_diff = 0;
  double bulk_u = 0, bulk_w = 0;
  double surf_u = 0, surf_w = 0;
  double strict_u = 0, strict_w = 0;
  double area_strict_u = 0, area_strict_w = 0;
  double jump_length_w = 0;
  double phi_sup = 0, dphi_sup = 0;  // sup |Phi - id|, sup |DPhi - Id|
};

}  // namespace sbv
