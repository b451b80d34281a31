#pragma once

// The projection onto discontinuous piecewise-affine functions on the
// shifted scaled triangulation: vertex values sampled from the field, edge
// jumps from segment slicing, cell interpolants from the interp module.

#include "sbv/field.hpp"
#include "sbv/interp.hpp"

#include <memory>
#include <unordered_map>

namespace sbv {

using CellId2 = CellId<2>;

struct JumpFace {
  CellId2 cell;
  Vec2 a, b;           // face segment
  Vec2 nu;             // unit normal pointing to the plus side
  VecM jump_a, jump_b; // plus minus minus, affine along the face
  bool on_cell_boundary = false;
  // Affine one-sided extensions: value(x) = off +- grad * x.
  MatM2 grad_plus, grad_minus;
  VecM off_plus, off_minus;

  double length() const { return (b - a).norm(); }
  VecM jump_at(double t) const { return VecM((1 - t) * jump_a + t * jump_b); }
};

struct PwAffineFunction {
  GridPlacement<2> placement;
  Box2 region;
  int m = 1;
  std::function<CellData<2>(const CellId2&)> build_cell;
  mutable std::unordered_map<CellId2, std::shared_ptr<const CellInterpolant<2>>, CellIdHash<2>>
      cache;

  const CellInterpolant<2>& cell(const CellId2& id) const {
    auto it = cache.find(id);
    if (it == cache.end())
      it = cache.emplace(id, std::make_shared<CellInterpolant<2>>(build_interpolant<2>(build_cell(id))))
               .first;
    return *it->second;
  }

  VecM eval(const Vec2& x) const {
    const CellId2 id = locate_cell<2>(placement, x);
    const auto& c = cell(id);
    const auto b = c.barycentric(x);
    return c.eval_subcell(subcell_index<2>(b), x);
  }

  MatM2 grad(const Vec2& x) const {
    const CellId2 id = locate_cell<2>(placement, x);
    const auto& c = cell(id);
    const auto b = c.barycentric(x);
    return c.grad[static_cast<std::size_t>(subcell_index<2>(b))];
  }

  // One-sided limit at x approaching along -dir (value just on the x side of
  // a face with outward direction dir): evaluate a step into the dir side and
  // pull back with that side's affine map.
  VecM eval_side(const Vec2& x, const Vec2& dir) const {
    const double h = 1e-7 * placement.eps;
    const Vec2 q = x + h * dir.normalized();
    const CellId2 id = locate_cell<2>(placement, q);
    const auto& c = cell(id);
    const auto b = c.barycentric(q);
    const int j = subcell_index<2>(b);
    return c.eval_subcell(j, x);
  }
};

// Vertex values + sliced edge jumps for one cell of the grid.
CellData<2> slice_cell_data(const SbvField& f, const GridPlacement<2>& p, const CellId2& id);

// Lazily built projection covering the region. Degenerate slices throw
// DegenerateSliceError when the offending cell is first touched.
PwAffineFunction project(const SbvField& f, double eps, const Vec2& zeta, const Box2& region);

// Eagerly builds every cell; on a degenerate slice re-samples zeta uniformly
// from B_eps, up to max_attempts, then rethrows.
PwAffineFunction project_jittered(const SbvField& f, double eps, const Box2& region, Rng& rng,
                                  int max_attempts = 8);

// Uniform sample from the open ball of radius eps.
Vec2 sample_shift(double eps, Rng& rng);

// Jump-face inventory over the region: internal subcell faces plus
// cell-boundary faces where the two-sided traces differ by more than tol.
std::vector<JumpFace> jump_faces(const PwAffineFunction& p, const Box2& region,
                                 double tol = 1e-12);

// Faces contributed by a single cell: its internal subcell faces plus the
// cell-boundary half-edges against higher-id neighbours (so visiting every
// cell of a set records shared faces once).
void append_cell_jump_faces(const PwAffineFunction& p, const CellId2& id, double tol,
                            std::vector<JumpFace>& out);

// Exact re-projection of a piecewise-affine function onto its own grid:
// vertex values by tie-rule evaluation, edge jumps from the one-sided limits
// at edge midpoints (the only jump location along a grid edge).
PwAffineFunction reproject(const PwAffineFunction& p);

// The approximant viewed as a field (tie-rule eval everywhere); interfaces
// are the jump faces with exact affine one-sided extensions.
SbvField as_field(const PwAffineFunction& p, const Box2& region);

struct AveragedBoundsReport {
  double eps = 0;
  int n_zeta = 0;
  // Empirical zeta-averages of the three left-hand sides.
  double bulk_lhs = 0, surface_lhs = 0, l1_lhs = 0;
  // Right-hand integrals on the (2 c* eps)-inflated region, c* = 1 + sqrt(2).
  double bulk_rhs = 0, surface_rhs = 0, l1_rhs = 0;
  double bulk_ratio = 0, surface_ratio = 0, l1_ratio = 0;
};

// Samples n_zeta shifts, projects, and reports the empirical means of
// int |grad Pi u - eta|^p, int g0(|[Pi u]|), and ||Pi u - u||_L1 together
// with the comparison integrals of u.
AveragedBoundsReport averaged_bounds_report(const SbvField& f, double eps, const Box2& region,
                                            int n_zeta, double p, const MatM2& eta,
                                            const Modulus& g0, Rng& rng);

}  // namespace sbv
