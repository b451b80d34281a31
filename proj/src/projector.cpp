#include "sbv/projector.hpp"

#include <algorithm>

namespace sbv {

Vec2 sample_shift(double eps, Rng& rng) {
  std::uniform_real_distribution<double> uni(-eps, eps);
  while (true) {
    const Vec2 z(uni(rng), uni(rng));
    if (z.norm() < eps) return z;
  }
}

CellData<2> slice_cell_data(const SbvField& f, const GridPlacement<2>& p, const CellId2& id) {
  const Simplex<2> s = p.cell_simplex(id);
  CellData<2> d = CellData<2>::zero(s, f.m);
  for (int i = 0; i < 3; ++i) d.u[i] = f.eval(Vec2(s.vertices.col(i)));
  for (int i = 0; i < 3; ++i)
    for (int j = i + 1; j < 3; ++j) {
      const Vec2 a(s.vertices.col(i)), b(s.vertices.col(j));
      check_endpoints_off_interfaces(f, a, b);
      d.s_upper[i][j] = slice_jump(f, a, b);
    }
  return d;
}

PwAffineFunction project(const SbvField& f, double eps, const Vec2& zeta, const Box2& region) {
  PwAffineFunction p;
  p.placement.eps = eps;
  p.placement.shift = zeta;
  p.region = region;
  p.m = f.m;
  const GridPlacement<2> placement = p.placement;
  p.build_cell = [f, placement](const CellId2& id) { return slice_cell_data(f, placement, id); };
  return p;
}

PwAffineFunction project_jittered(const SbvField& f, double eps, const Box2& region, Rng& rng,
                                  int max_attempts) {
  for (int attempt = 0;; ++attempt) {
    const Vec2 zeta = sample_shift(eps, rng);
    PwAffineFunction p = project(f, eps, zeta, region);
    try {
      for (const auto& id : enumerate_cells<2>(p.placement, region)) p.cell(id);
      return p;
    } catch (const DegenerateSliceError&) {
      if (attempt + 1 >= max_attempts) throw;
    }
  }
}

// ---------------------------------------------------------------------------
// Jump-face inventory.

namespace {

Vec2 face_normal_toward(const Vec2& a, const Vec2& b, const Vec2& target) {
  const Vec2 e = b - a;
  Vec2 n(-e.y(), e.x());
  n.normalize();
  if (n.dot(target - Vec2(0.5 * (a + b))) < 0) n = -n;
  return n;
}

// One-sided affine data of the neighbour cell along a boundary-edge half:
// the subcell adjacent to the half, identified by probing just inside.
struct SideMap {
  MatM2 grad;
  VecM off;
  VecM at(const Vec2& x) const { return VecM(off + grad * x); }
};

SideMap neighbor_side_map(const PwAffineFunction& p, const CellId2& nb, const Vec2& probe) {
  const auto& c = p.cell(nb);
  const auto bc = c.barycentric(probe);
  const int j = subcell_index<2>(bc);
  return {c.grad[static_cast<std::size_t>(j)], c.offset[static_cast<std::size_t>(j)]};
}

}  // namespace

void append_cell_jump_faces(const PwAffineFunction& p, const CellId2& id, double tol,
                            std::vector<JumpFace>& out) {
  const double eps = p.placement.eps;
  {
    const auto& c = p.cell(id);
    const Simplex<2>& s = c.data.simplex;
    const auto geo = subcell_geometry(s);

    // Internal subcell faces (midpoint -> centroid).
    for (const auto& fc : geo.faces) {
      const auto la = barycentric<2>(s, fc.a);
      const auto lb = barycentric<2>(s, fc.b);
      JumpFace jf;
      jf.cell = id;
      jf.a = fc.a;
      jf.b = fc.b;
      jf.jump_a = c.face_jump(fc.i, fc.j, la);
      jf.jump_b = c.face_jump(fc.i, fc.j, lb);
      if (jf.jump_a.norm() <= tol && jf.jump_b.norm() <= tol) continue;
      Vec2 target(0, 0);
      for (const auto& v : geo.quads[static_cast<std::size_t>(fc.i)]) target += v;
      target /= static_cast<double>(geo.quads[static_cast<std::size_t>(fc.i)].size());
      jf.nu = face_normal_toward(fc.a, fc.b, target);
      jf.grad_plus = c.grad[static_cast<std::size_t>(fc.i)];
      jf.off_plus = c.offset[static_cast<std::size_t>(fc.i)];
      jf.grad_minus = c.grad[static_cast<std::size_t>(fc.j)];
      jf.off_minus = c.offset[static_cast<std::size_t>(fc.j)];
      out.push_back(std::move(jf));
    }

    // Cell-boundary faces: compare traces with each neighbour, half-edge by
    // half-edge (the trace may jump at the edge midpoint on either side).
    for (int i = 0; i < 3; ++i)
      for (int j = i + 1; j < 3; ++j) {
        const Vec2 vi(s.vertices.col(i)), vj(s.vertices.col(j));
        const Vec2 mid = 0.5 * (vi + vj);
        const int opp = 3 - i - j;
        const Vec2 n_out = face_normal_toward(vi, vj, mid + (mid - Vec2(s.vertices.col(opp))));
        CellId2 nb;
        try {
          nb = locate_cell<2>(p.placement, Vec2(mid + (1e-6 * eps) * n_out));
        } catch (const GeometryError&) {
          continue;
        }
        if (!(id < nb)) continue;  // shared faces recorded once
        for (int half = 0; half < 2; ++half) {
          const double t0 = half == 0 ? 0.0 : 0.5;
          const double t1 = t0 + 0.5;
          const int sub_this = half == 0 ? i : j;
          const Vec2 q0 = vi + (t0 + 0.125) * (vj - vi);
          const Vec2 q1 = vi + (t1 - 0.125) * (vj - vi);
          const SideMap other =
              neighbor_side_map(p, nb, Vec2(0.5 * (q0 + q1) + (1e-7 * eps) * n_out));
          const SideMap mine{c.grad[static_cast<std::size_t>(sub_this)],
                             c.offset[static_cast<std::size_t>(sub_this)]};
          const Vec2 a = vi + t0 * (vj - vi);
          const Vec2 b = vi + t1 * (vj - vi);
          const VecM ja = mine.at(a) - other.at(a);
          const VecM jb = mine.at(b) - other.at(b);
          if (ja.norm() <= tol && jb.norm() <= tol) continue;
          JumpFace jf;
          jf.cell = id;
          jf.a = a;
          jf.b = b;
          jf.nu = -n_out;  // plus side is the lower-id cell
          jf.jump_a = ja;
          jf.jump_b = jb;
          jf.on_cell_boundary = true;
          jf.grad_plus = mine.grad;
          jf.off_plus = mine.off;
          jf.grad_minus = other.grad;
          jf.off_minus = other.off;
          out.push_back(std::move(jf));
        }
      }
  }
}

std::vector<JumpFace> jump_faces(const PwAffineFunction& p, const Box2& region, double tol) {
  std::vector<JumpFace> out;
  for (const auto& id : enumerate_cells<2>(p.placement, region))
    append_cell_jump_faces(p, id, tol, out);
  return out;
}

PwAffineFunction reproject(const PwAffineFunction& p) {
  PwAffineFunction q;
  q.placement = p.placement;
  q.region = p.region;
  q.m = p.m;
  const PwAffineFunction src = p;  // shares the cache through the cell map copy
  q.build_cell = [src](const CellId2& id) {
    const Simplex<2> s = src.placement.cell_simplex(id);
    CellData<2> d = CellData<2>::zero(s, src.m);
    for (int i = 0; i < 3; ++i) d.u[i] = src.eval(Vec2(s.vertices.col(i)));
    for (int i = 0; i < 3; ++i)
      for (int j = i + 1; j < 3; ++j) {
        const Vec2 vi(s.vertices.col(i)), vj(s.vertices.col(j));
        const Vec2 mid = 0.5 * (vi + vj);
        const Vec2 dir = (vj - vi).normalized();
        d.s_upper[i][j] = src.eval_side(mid, dir) - src.eval_side(mid, -dir);
      }
    return d;
  };
  return q;
}

SbvField as_field(const PwAffineFunction& p, const Box2& region) {
  SbvField f;
  f.m = p.m;
  f.domain = region;
  const PwAffineFunction src = p;
  f.eval = [src](const Vec2& x) { return src.eval(x); };
  f.grad = [src](const Vec2& x) { return src.grad(x); };
  for (const auto& face : jump_faces(p, region)) {
    Interface itf;
    const Vec2 a = face.a, b = face.b, nu = face.nu;
    const double len = face.length();
    if (len < 1e-14) continue;
    itf.tau0 = 0;
    itf.tau1 = 1;
    itf.gamma = [a, b](double tau) { return Vec2(a + tau * (b - a)); };
    itf.normal = [nu](double) { return nu; };
    const VecM ja = face.jump_a, jb = face.jump_b;
    itf.jump = [ja, jb](double tau) { return VecM((1 - tau) * ja + tau * jb); };
    const MatM2 gp = face.grad_plus, gm = face.grad_minus;
    const VecM op = face.off_plus, om = face.off_minus;
    itf.eval_plus = [gp, op](const Vec2& x) { return VecM(op + gp * x); };
    itf.eval_minus = [gm, om](const Vec2& x) { return VecM(om + gm * x); };
    itf.grad_plus = [gp](const Vec2&) { return gp; };
    itf.grad_minus = [gm](const Vec2&) { return gm; };
    itf.tube_width = std::numeric_limits<double>::infinity();
    itf.side = [a, nu](const Vec2& x) { return nu.dot(x - a); };
    itf.distance = [a, b](const Vec2& x) { return dist_point_segment(x, a, b); };
    itf.segment_crossings = [a, b](const Vec2& sa, const Vec2& sb) {
      std::vector<std::pair<double, double>> out;
      const Vec2 d = sb - sa;
      const Vec2 e = b - a;
      const double det = d.x() * (-e.y()) - d.y() * (-e.x());
      if (std::abs(det) < 1e-300) return out;
      const Vec2 rhs = a - sa;
      const double t = (rhs.x() * (-e.y()) - rhs.y() * (-e.x())) / det;
      const double tau = (d.x() * rhs.y() - d.y() * rhs.x()) / det;
      if (t < -1e-12 || t > 1 + 1e-12 || tau < -1e-12 || tau > 1 + 1e-12) return out;
      out.emplace_back(t, tau);
      return out;
    };
    f.interfaces.push_back(std::move(itf));
  }
  return f;
}

// ---------------------------------------------------------------------------
// Averaged bounds.

namespace {

// Parameter range of segment a + t(b-a), t in [0,1], inside the box.
bool clip_segment_to_box(const Vec2& a, const Vec2& b, const Box2& box, double& t0, double& t1) {
  t0 = 0;
  t1 = 1;
  const Vec2 d = b - a;
  for (int axis = 0; axis < 2; ++axis) {
    if (std::abs(d[axis]) < 1e-300) {
      if (a[axis] < box.lo[axis] || a[axis] > box.hi[axis]) return false;
      continue;
    }
    double lo = (box.lo[axis] - a[axis]) / d[axis];
    double hi = (box.hi[axis] - a[axis]) / d[axis];
    if (lo > hi) std::swap(lo, hi);
    t0 = std::max(t0, lo);
    t1 = std::min(t1, hi);
  }
  return t0 < t1;
}

double integrate_box_grid(const std::function<double(const Vec2&)>& fn, const Box2& box,
                          double step) {
  const int nx = std::max(1, static_cast<int>(std::ceil((box.hi.x() - box.lo.x()) / step)));
  const int ny = std::max(1, static_cast<int>(std::ceil((box.hi.y() - box.lo.y()) / step)));
  double total = 0;
  for (int i = 0; i < nx; ++i)
    for (int j = 0; j < ny; ++j) {
      Box2 sub;
      sub.lo = Vec2(box.lo.x() + (box.hi.x() - box.lo.x()) * i / nx,
                    box.lo.y() + (box.hi.y() - box.lo.y()) * j / ny);
      sub.hi = Vec2(box.lo.x() + (box.hi.x() - box.lo.x()) * (i + 1) / nx,
                    box.lo.y() + (box.hi.y() - box.lo.y()) * (j + 1) / ny);
      total += gauss2d(fn, sub);
    }
  return total;
}

Polygon box_polygon(const Box2& b) {
  return {b.lo, Vec2(b.hi.x(), b.lo.y()), b.hi, Vec2(b.lo.x(), b.hi.y())};
}

}  // namespace

AveragedBoundsReport averaged_bounds_report(const SbvField& f, double eps, const Box2& region,
                                            int n_zeta, double p, const MatM2& eta,
                                            const Modulus& g0, Rng& rng) {
  AveragedBoundsReport rep;
  rep.eps = eps;
  rep.n_zeta = n_zeta;
  const double cstar = 1 + std::sqrt(2.0);
  const Box2 inflated = region.inflated(2 * cstar * eps);

  rep.bulk_rhs = integrate_box_grid(
      [&](const Vec2& x) { return std::pow((f.grad(x) - eta).norm(), p); }, inflated, eps / 2);
  rep.surface_rhs = g0_jump_energy(f, g0, inflated);
  rep.l1_rhs =
      eps * (integrate_box_grid([&](const Vec2& x) { return f.grad(x).norm(); }, inflated,
                                eps / 2) +
             jump_variation(f, inflated));

  const Polygon region_poly = box_polygon(region);
  int done = 0;
  int attempts = 0;
  while (done < n_zeta) {
    const Vec2 zeta = sample_shift(eps, rng);
    try {
      PwAffineFunction pw = project(f, eps, zeta, region);
      double bulk = 0;
      for (const auto& id : enumerate_cells<2>(pw.placement, region)) {
        const auto& c = pw.cell(id);
        const auto geo = subcell_geometry(c.data.simplex);
        for (int j = 0; j < 3; ++j) {
          const double area = polygon_area(clip_to_convex(geo.quads[static_cast<std::size_t>(j)],
                                                          region_poly));
          bulk += std::pow((c.grad[static_cast<std::size_t>(j)] - eta).norm(), p) * area;
        }
      }
      double surface = 0;
      for (const auto& face : jump_faces(pw, region)) {
        double t0, t1;
        if (!clip_segment_to_box(face.a, face.b, region, t0, t1)) continue;
        surface += adaptive_quadrature(
                       [&](double t) { return g0(face.jump_at(t).norm()); }, t0, t1, 1e-8) *
                   face.length();
      }
      const double l1 = integrate_box_grid(
          [&](const Vec2& x) { return (pw.eval(x) - f.eval(x)).norm(); }, region, eps / 4);
      rep.bulk_lhs += bulk;
      rep.surface_lhs += surface;
      rep.l1_lhs += l1;
      ++done;
    } catch (const DegenerateSliceError&) {
      if (++attempts > 8 * n_zeta) throw;
    }
  }
  rep.bulk_lhs /= n_zeta;
  rep.surface_lhs /= n_zeta;
  rep.l1_lhs /= n_zeta;
  auto ratio = [](double lhs, double rhs) {
    if (rhs > 1e-14) return lhs / rhs;
    return lhs < 1e-12 ? 0.0 : std::numeric_limits<double>::infinity();
  };
  rep.bulk_ratio = ratio(rep.bulk_lhs, rep.bulk_rhs);
  rep.surface_ratio = ratio(rep.surface_lhs, rep.surface_rhs);
  rep.l1_ratio = ratio(rep.l1_lhs, rep.l1_rhs);
  return rep;
}

}  // namespace sbv
