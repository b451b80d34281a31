#include "sbv/energy.hpp"

#include "sbv/mesh.hpp"

#include <algorithm>
#include <cmath>
#include <unordered_map>

namespace sbv {

BulkDensity BulkDensity::p_power(double p) {
  BulkDensity d;
  d.p = p;
  d.psi = [p](const MatM2& g) { return std::pow(g.norm(), p); };
  return d;
}

BulkDensity BulkDensity::area() {
  BulkDensity d;
  d.p = 1;
  d.psi = [](const MatM2& g) { return std::sqrt(1 + g.squaredNorm()); };
  return d;
}

SurfaceDensity SurfaceDensity::cohesive(const Modulus& g0) {
  SurfaceDensity g;
  g.kind = Kind::Cohesive;
  g.g0 = g0;
  return g;
}

SurfaceDensity SurfaceDensity::brittle(double alpha) {
  SurfaceDensity g;
  g.kind = Kind::Brittle;
  g.alpha = alpha;
  return g;
}

// ---------------------------------------------------------------------------
// Bulk integrals.

namespace {

bool simplex_inside(const Simplex<2>& s, const Box2& region) {
  for (int i = 0; i < 3; ++i)
    if (!region.contains(Vec2(s.vertices.col(i)), 0.0)) return false;
  return true;
}

}  // namespace

double bulk_energy(const PwAffineFunction& w, const BulkDensity& psi, const Box2& region) {
  double total = 0;
  for_each_cell<2>(w.placement, region, [&](const CellId2& id) {
    const auto& c = w.cell(id);
    const auto geo = subcell_geometry(c.data.simplex);
    const bool inside = simplex_inside(c.data.simplex, region);
    for (int j = 0; j < 3; ++j) {
      const double area =
          inside ? geo.volumes[static_cast<std::size_t>(j)]
                 : polygon_area(clip_to_box(geo.quads[static_cast<std::size_t>(j)], region));
      if (area > 0) total += psi(c.grad[static_cast<std::size_t>(j)]) * area;
    }
  });
  return total;
}

double bulk_energy(const SbvField& f, const BulkDensity& psi, const Box2& region,
                   double rel_tol) {
  auto dens = [&](const Vec2& x) { return psi(f.grad(x)); };
  // Coarse scale estimate fixes the absolute tolerance budget.
  double est = 0;
  for (int i = 0; i < 8; ++i)
    for (int j = 0; j < 8; ++j) {
      Box2 b;
      b.lo = region.lo + Vec2(i * (region.hi.x() - region.lo.x()) / 8,
                              j * (region.hi.y() - region.lo.y()) / 8);
      b.hi = b.lo + (region.hi - region.lo) / 8;
      est += gauss2d(dens, b);
    }
  const double budget = rel_tol * std::max(std::abs(est), 1e-12);
  const double inv_area = 1.0 / std::max(region.volume(), 1e-300);

  std::function<double(const Box2&, double, int)> rec = [&](const Box2& box, double whole,
                                                            int depth) -> double {
    std::array<Box2, 4> kids;
    const Vec2 c = box.center();
    kids[0] = {box.lo, c};
    kids[1] = {Vec2(c.x(), box.lo.y()), Vec2(box.hi.x(), c.y())};
    kids[2] = {Vec2(box.lo.x(), c.y()), Vec2(c.x(), box.hi.y())};
    kids[3] = {c, box.hi};
    double sum = 0;
    std::array<double, 4> part{};
    for (int k = 0; k < 4; ++k) {
      part[static_cast<std::size_t>(k)] = gauss2d(dens, kids[static_cast<std::size_t>(k)]);
      sum += part[static_cast<std::size_t>(k)];
    }
    if (depth >= 12 || std::abs(sum - whole) <= budget * box.volume() * inv_area) return sum;
    double out = 0;
    for (int k = 0; k < 4; ++k)
      out += rec(kids[static_cast<std::size_t>(k)], part[static_cast<std::size_t>(k)], depth + 1);
    return out;
  };
  return rec(region, gauss2d(dens, region), 0);
}

// ---------------------------------------------------------------------------
// Surface integrals over face inventories.

namespace {

// Parameter window of the face segment inside the box.
bool clip_face_param(const JumpFace& face, const Box2& box, double& t0, double& t1) {
  t0 = 0;
  t1 = 1;
  for (int i = 0; i < 2; ++i) {
    const double d = face.b[i] - face.a[i];
    if (std::abs(d) < 1e-300) {
      if (face.a[i] < box.lo[i] - 1e-12 || face.a[i] > box.hi[i] + 1e-12) return false;
      continue;
    }
    double u0 = (box.lo[i] - face.a[i]) / d;
    double u1 = (box.hi[i] - face.a[i]) / d;
    if (u0 > u1) std::swap(u0, u1);
    t0 = std::max(t0, u0);
    t1 = std::min(t1, u1);
  }
  return t1 > t0 + 1e-14;
}

// Integral over the face of dens(jump(t), nu) dH^1, split where |jump|
// crosses any of the given radii (modulus kinks) and at the norm minimum.
double integrate_face_density(const JumpFace& face, double t0, double t1,
                              const std::function<double(const VecM&, const Vec2&)>& dens,
                              const std::vector<double>& split_radii) {
  const double len = face.length();
  if (len <= 0) return 0;
  // |jump(t)|^2 = qa + 2 qb t + qc t^2.
  const VecM dj = face.jump_b - face.jump_a;
  const double qa = face.jump_a.squaredNorm();
  const double qb = face.jump_a.dot(dj);
  const double qc = dj.squaredNorm();

  std::vector<double> cuts = {t0, t1};
  if (qc > 1e-300) cuts.push_back(-qb / qc);  // norm minimum
  for (double r : split_radii) {
    // qc t^2 + 2 qb t + qa - r^2 = 0
    if (qc < 1e-300) continue;
    const double disc = qb * qb - qc * (qa - r * r);
    if (disc <= 0) continue;
    const double sq = std::sqrt(disc);
    cuts.push_back((-qb - sq) / qc);
    cuts.push_back((-qb + sq) / qc);
  }
  std::sort(cuts.begin(), cuts.end());
  double total = 0;
  for (std::size_t i = 0; i + 1 < cuts.size(); ++i) {
    const double lo = std::max(t0, cuts[i]);
    const double hi = std::min(t1, cuts[i + 1]);
    if (hi - lo < 1e-14) continue;
    constexpr int kChunks = 8;  // composite Gauss-5 on each smooth piece
    for (int c = 0; c < kChunks; ++c) {
      const double a = lo + (hi - lo) * c / kChunks;
      const double b = lo + (hi - lo) * (c + 1) / kChunks;
      for (int k = 0; k < Gauss5::n; ++k) {
        const double t = a + (b - a) * Gauss5::nodes()[static_cast<std::size_t>(k)];
        total += Gauss5::weights()[static_cast<std::size_t>(k)] * (b - a) *
                 dens(face.jump_at(t), face.nu);
      }
    }
  }
  return total * len;
}

}  // namespace

double surface_energy(const std::vector<JumpFace>& faces, const SurfaceDensity& g,
                      const Box2& region) {
  std::vector<double> radii;
  if (g.kind != SurfaceDensity::Kind::Brittle)
    if (auto k = g.g0.kink()) radii.push_back(*k);
  double total = 0;
  for (const auto& face : faces) {
    double t0, t1;
    if (!clip_face_param(face, region, t0, t1)) continue;
    total += integrate_face_density(
        face, t0, t1, [&](const VecM& s, const Vec2& nu) { return g(s.norm(), nu); }, radii);
  }
  return total;
}

double surface_energy(const SbvField& f, const SurfaceDensity& g, const Box2& region,
                      double rel_tol) {
  double total = 0;
  for (const auto& itf : f.interfaces) {
    auto speed = [&](double tau) {
      const double h = 1e-6 * std::max(1.0, std::abs(itf.tau1 - itf.tau0));
      return (itf.gamma(tau + h) - itf.gamma(tau - h)).norm() / (2 * h);
    };
    for (const auto& [lo, hi] : interface_param_intervals(itf, region)) {
      if (hi - lo < 1e-13) continue;
      total += adaptive_quadrature(
          [&](double tau) {
            return g(itf.jump(tau).norm(), itf.normal(tau)) * speed(tau);
          },
          lo, hi, rel_tol);
    }
  }
  return total;
}

// ---------------------------------------------------------------------------
// Jump-set comparison.

namespace {

// Uniform spatial hash of faces keyed by the eps-cube of the face midpoint.
struct FaceIndex {
  const std::vector<JumpFace>* faces = nullptr;
  double eps = 1;
  std::unordered_map<std::uint64_t, std::vector<int>> buckets;

  static std::uint64_t key(std::int64_t kx, std::int64_t ky) {
    return (static_cast<std::uint64_t>(static_cast<std::uint32_t>(kx)) << 32) |
           static_cast<std::uint64_t>(static_cast<std::uint32_t>(ky));
  }

  FaceIndex(const std::vector<JumpFace>& fs, double eps_) : faces(&fs), eps(eps_) {
    for (int i = 0; i < static_cast<int>(fs.size()); ++i) {
      const auto& f = fs[static_cast<std::size_t>(i)];
      // every cube the segment's bounding box touches
      const std::int64_t x0 =
          static_cast<std::int64_t>(std::floor(std::min(f.a.x(), f.b.x()) / eps));
      const std::int64_t x1 =
          static_cast<std::int64_t>(std::floor(std::max(f.a.x(), f.b.x()) / eps));
      const std::int64_t y0 =
          static_cast<std::int64_t>(std::floor(std::min(f.a.y(), f.b.y()) / eps));
      const std::int64_t y1 =
          static_cast<std::int64_t>(std::floor(std::max(f.a.y(), f.b.y()) / eps));
      for (std::int64_t kx = x0; kx <= x1; ++kx)
        for (std::int64_t ky = y0; ky <= y1; ++ky) buckets[key(kx, ky)].push_back(i);
    }
  }

  // Nearest face to y within the 5x5 cube neighbourhood; returns index or -1.
  int nearest(const Vec2& y, double& best_dist, double& best_t) const {
    const std::int64_t kx = static_cast<std::int64_t>(std::floor(y.x() / eps));
    const std::int64_t ky = static_cast<std::int64_t>(std::floor(y.y() / eps));
    int best = -1;
    best_dist = std::numeric_limits<double>::infinity();
    for (std::int64_t dx = -2; dx <= 2; ++dx)
      for (std::int64_t dy = -2; dy <= 2; ++dy) {
        auto it = buckets.find(key(kx + dx, ky + dy));
        if (it == buckets.end()) continue;
        for (int i : it->second) {
          const auto& f = (*faces)[static_cast<std::size_t>(i)];
          const double d = dist_point_segment(y, f.a, f.b);
          if (d < best_dist) {
            best_dist = d;
            best = i;
            const Vec2 e = f.b - f.a;
            const double l2 = e.squaredNorm();
            best_t = l2 > 0 ? std::clamp(e.dot(y - f.a) / l2, 0.0, 1.0) : 0.0;
          }
        }
      }
    return best;
  }
};

double interface_distance(const Interface& itf, const Vec2& x) {
  if (itf.distance) return itf.distance(x);
  if (itf.side) return std::abs(itf.side(x));
  return std::numeric_limits<double>::infinity();
}

}  // namespace

JumpComparison jump_discrepancy(const SbvField& f, const std::vector<JumpFace>& faces,
                                double eps, const DeformationMap& phi, const Modulus& g0,
                                const Box2& region, double match_tol, double face_match_tol) {
  JumpComparison out;
  FaceIndex index(faces, std::max(eps, 1e-12));

  // Field side: walk J_u, compare against the pushed-forward partner face.
  for (const auto& itf : f.interfaces) {
    auto speed = [&](double tau) {
      const double h = 1e-6 * std::max(1.0, std::abs(itf.tau1 - itf.tau0));
      return (itf.gamma(tau + h) - itf.gamma(tau - h)).norm() / (2 * h);
    };
    for (const auto& [lo, hi] : interface_param_intervals(itf, region)) {
      if (hi - lo < 1e-13) continue;
      double est_len = 0;
      for (int i = 0; i < 32; ++i) est_len += speed(lo + (hi - lo) * (i + 0.5) / 32);
      est_len *= (hi - lo) / 32;
      const int nseg =
          std::clamp(static_cast<int>(std::ceil(est_len / (eps / 4))), 1, 1 << 20);
      for (int s = 0; s < nseg; ++s) {
        const double a = lo + (hi - lo) * s / nseg;
        const double b = lo + (hi - lo) * (s + 1) / nseg;
        for (int k = 0; k < Gauss5::n; ++k) {
          const double tau = a + (b - a) * Gauss5::nodes()[static_cast<std::size_t>(k)];
          const double wgt =
              Gauss5::weights()[static_cast<std::size_t>(k)] * (b - a) * speed(tau);
          const Vec2 x = itf.gamma(tau);
          if (!region.contains(x, 1e-12)) continue;
          const VecM ju = itf.jump(tau);
          const Vec2 nu_u = itf.normal(tau);
          const Vec2 y = phi.apply(x);
          double dist, t;
          const int fi = index.nearest(y, dist, t);
          if (fi >= 0 && dist <= match_tol) {
            const auto& face = faces[static_cast<std::size_t>(fi)];
            VecM jv = face.jump_at(t);
            Vec2 nu_v = face.nu;
            if (nu_v.dot(nu_u) < 0) {
              jv = -jv;
              nu_v = -nu_v;
            }
            out.d1 += wgt * g0((ju - jv).norm());
            out.d2 += wgt * g0(ju.norm() + jv.norm()) * (nu_u - nu_v).norm();
            out.matched_length += wgt;
          } else {
            out.d1 += wgt * g0(ju.norm());
            out.d2 += wgt * g0(ju.norm());  // |nu_u - 0| = 1
            out.sym_diff += wgt;
            out.unmatched_field_length += wgt;
          }
        }
      }
    }
  }

  // Approximant side: faces whose pullback does not land on J_u.
  for (const auto& face : faces) {
    double t0, t1;
    if (!clip_face_param(face, region, t0, t1)) continue;
    const double len = face.length();
    const int nseg = std::max(1, static_cast<int>(std::ceil(len * (t1 - t0) / (eps / 4))));
    auto pull = [&](double t) { return phi.pull(Vec2(face.a + t * (face.b - face.a))); };
    for (int s = 0; s < nseg; ++s) {
      const double a = t0 + (t1 - t0) * s / nseg;
      const double b = t0 + (t1 - t0) * (s + 1) / nseg;
      for (int k = 0; k < Gauss5::n; ++k) {
        const double t = a + (b - a) * Gauss5::nodes()[static_cast<std::size_t>(k)];
        const VecM jv = face.jump_at(t);
        if (jv.norm() < 1e-12) continue;
        const Vec2 x = pull(t);
        if (!region.contains(x, 1e-12)) continue;
        double dmin = std::numeric_limits<double>::infinity();
        for (const auto& itf : f.interfaces) dmin = std::min(dmin, interface_distance(itf, x));
        if (dmin <= face_match_tol) continue;  // already visited from the field side
        double spd = len;
        if (!phi.identity) {
          const double dt = 1e-6;
          spd = (pull(t + dt) - pull(t - dt)).norm() / (2 * dt);
        }
        const double wgt = Gauss5::weights()[static_cast<std::size_t>(k)] * (b - a) * spd;
        out.d1 += wgt * g0(jv.norm());
        out.d2 += wgt * g0(jv.norm());  // |0 - nu_v| = 1
        out.sym_diff += wgt;
        out.unmatched_approx_length += wgt;
      }
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// Strict metrics and bulk distances.

StrictMetrics strict_metrics(const PwAffineFunction& w, const std::vector<JumpFace>& faces,
                             const Box2& region) {
  StrictMetrics sm;
  for_each_cell<2>(w.placement, region, [&](const CellId2& id) {
    const auto& c = w.cell(id);
    const auto geo = subcell_geometry(c.data.simplex);
    const bool inside = simplex_inside(c.data.simplex, region);
    for (int j = 0; j < 3; ++j) {
      const double area =
          inside ? geo.volumes[static_cast<std::size_t>(j)]
                 : polygon_area(clip_to_box(geo.quads[static_cast<std::size_t>(j)], region));
      if (area <= 0) continue;
      const double gn = c.grad[static_cast<std::size_t>(j)].norm();
      sm.grad_l1 += gn * area;
      sm.area += std::sqrt(1 + gn * gn) * area;
    }
  });
  for (const auto& face : faces) {
    double t0, t1;
    if (!clip_face_param(face, region, t0, t1)) continue;
    sm.jump_var += integrate_face_density(
        face, t0, t1, [](const VecM& s, const Vec2&) { return s.norm(); }, {});
  }
  return sm;
}

StrictMetrics strict_metrics(const SbvField& f, const Box2& region, double rel_tol) {
  StrictMetrics sm;
  BulkDensity grad_norm;
  grad_norm.p = 1;
  grad_norm.psi = [](const MatM2& g) { return g.norm(); };
  sm.grad_l1 = bulk_energy(f, grad_norm, region, rel_tol);
  sm.area = bulk_energy(f, BulkDensity::area(), region, rel_tol);
  sm.jump_var = jump_variation(f, region, rel_tol);
  return sm;
}

BulkDistance bulk_distance(const PwAffineFunction& w, const SbvField& f, const Box2& region,
                           double p) {
  BulkDistance bd;
  for_each_cell<2>(w.placement, region, [&](const CellId2& id) {
    const auto& c = w.cell(id);
    const auto geo = subcell_geometry(c.data.simplex);
    const bool inside = simplex_inside(c.data.simplex, region);
    for (int j = 0; j < 3; ++j) {
      Polygon poly = geo.quads[static_cast<std::size_t>(j)];
      if (!inside) poly = clip_to_box(poly, region);
      if (poly.size() < 3) continue;
      // Fan triangulation, centroid rule on each triangle.
      for (std::size_t k = 1; k + 1 < poly.size(); ++k) {
        const Vec2 p0 = poly[0], p1 = poly[k], p2 = poly[k + 1];
        const double area =
            0.5 * std::abs((p1 - p0).x() * (p2 - p0).y() - (p2 - p0).x() * (p1 - p0).y());
        if (area <= 0) continue;
        const Vec2 cen = (p0 + p1 + p2) / 3;
        bd.l1 += (c.eval_subcell(j, cen) - f.eval(cen)).norm() * area;
        bd.lp_grad +=
            std::pow((c.grad[static_cast<std::size_t>(j)] - f.grad(cen)).norm(), p) * area;
      }
    }
  });
  return bd;
}

}  // namespace sbv
