#include "sbv/pipeline.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <sstream>
#include <unordered_set>

namespace sbv {

namespace {

constexpr double kSqrt2 = 1.4142135623730951;
constexpr double kInf = std::numeric_limits<double>::infinity();

std::int64_t pack_index(std::int64_t i, std::int64_t j) {
  return (i << 32) ^ (j & 0xffffffffLL);
}

double point_segment_distance(const Vec2& x, const Vec2& a, const Vec2& b) {
  const Vec2 d = b - a;
  const double l2 = d.squaredNorm();
  const double t = l2 < 1e-300 ? 0.0 : std::clamp((x - a).dot(d) / l2, 0.0, 1.0);
  return (x - (a + t * d)).norm();
}

// Unsigned distance to the interface: analytic when available, otherwise a
// coarse polyline of gamma (underestimated by half the longest chord so the
// fallback never hides a nearby curve).
double iface_distance(const Interface& itf, const Vec2& x) {
  if (itf.distance) return itf.distance(x);
  if (itf.side) return std::abs(itf.side(x));
  const int n = 16;
  double best = kInf, max_seg = 0;
  Vec2 prev = itf.gamma(itf.tau0);
  for (int i = 1; i <= n; ++i) {
    const Vec2 p = itf.gamma(itf.tau0 + (itf.tau1 - itf.tau0) * i / n);
    best = std::min(best, point_segment_distance(x, prev, p));
    max_seg = std::max(max_seg, (p - prev).norm());
    prev = p;
  }
  return std::max(0.0, best - 0.5 * max_seg);
}

Box2 box_intersect(const Box2& a, const Box2& b) {
  Box2 r;
  r.lo = a.lo.cwiseMax(b.lo);
  r.hi = a.hi.cwiseMin(b.hi);
  return r;
}

bool box_empty(const Box2& b) { return b.hi.x() <= b.lo.x() || b.hi.y() <= b.lo.y(); }

double box_boundary_distance(const Box2& b, const Vec2& x) {
  double d = kInf;
  for (int k = 0; k < 2; ++k) d = std::min({d, x[k] - b.lo[k], b.hi[k] - x[k]});
  return d;
}

Vec2 polygon_centroid(const Polygon& p) {
  const std::size_t n = p.size();
  Vec2 c = Vec2::Zero();
  if (n == 0) return c;
  double a2 = 0;
  for (std::size_t i = 0; i < n; ++i) {
    const Vec2& u = p[i];
    const Vec2& v = p[(i + 1) % n];
    const double cr = u.x() * v.y() - v.x() * u.y();
    a2 += cr;
    c += cr * (u + v);
  }
  if (std::abs(a2) < 1e-30) {
    c = Vec2::Zero();
    for (const auto& q : p) c += q;
    return Vec2(c / static_cast<double>(n));
  }
  return Vec2(c / (3 * a2));
}

bool clip_segment_to_box(const Vec2& a, const Vec2& b, const Box2& box, double& t0, double& t1) {
  t0 = 0;
  t1 = 1;
  const Vec2 d = b - a;
  for (int k = 0; k < 2; ++k) {
    if (std::abs(d[k]) < 1e-300) {
      if (a[k] < box.lo[k] || a[k] > box.hi[k]) return false;
    } else {
      double u0 = (box.lo[k] - a[k]) / d[k];
      double u1 = (box.hi[k] - a[k]) / d[k];
      if (u0 > u1) std::swap(u0, u1);
      t0 = std::max(t0, u0);
      t1 = std::min(t1, u1);
    }
  }
  return t1 > t0 + 1e-12;
}

bool clip_face_to_box(JumpFace& jf, const Box2& box) {
  double t0, t1;
  if (!clip_segment_to_box(jf.a, jf.b, box, t0, t1)) return false;
  const VecM ja = jf.jump_at(t0);
  const VecM jb = jf.jump_at(t1);
  const Vec2 a = Vec2(jf.a + t0 * (jf.b - jf.a));
  const Vec2 b = Vec2(jf.a + t1 * (jf.b - jf.a));
  jf.a = a;
  jf.b = b;
  jf.jump_a = ja;
  jf.jump_b = jb;
  return jf.length() > 1e-14;
}

// Arc samples (tau, weight, point) of the interface clipped to a box,
// midpoint rule in tau with finite-difference speeds.
struct ArcSample {
  double tau;
  double weight;
  Vec2 point;
};

std::vector<ArcSample> arc_samples(const Interface& itf, const Box2& box, int per_interval) {
  std::vector<ArcSample> out;
  const double h = 1e-6 * std::max(1.0, std::abs(itf.tau1 - itf.tau0));
  for (const auto& [lo, hi] : interface_param_intervals(itf, box)) {
    if (hi - lo < 1e-13) continue;
    const double dt = (hi - lo) / per_interval;
    for (int i = 0; i < per_interval; ++i) {
      const double tau = lo + (i + 0.5) * dt;
      const double speed = (itf.gamma(tau + h) - itf.gamma(tau - h)).norm() / (2 * h);
      out.push_back({tau, speed * dt, itf.gamma(tau)});
    }
  }
  return out;
}

double interface_mass(const Interface& itf, const Box2& box, const Modulus& g0) {
  double s = 0;
  for (const auto& a : arc_samples(itf, box, 24)) s += a.weight * g0(itf.jump(a.tau).norm());
  return s;
}

// True when some interface runs along a lattice line of the (gamma, delta)
// grid (three consecutive samples within relative tolerance of the same
// coordinate residue), which would put positive length of jump set on a cube
// boundary.
bool lattice_coincident(const SbvField& f, const Vec2& gamma, double delta, const Box2& region) {
  const Box2 wide = region.inflated(delta);
  for (const auto& itf : f.interfaces) {
    int run_x = 0, run_y = 0;
    const int n = 200;
    for (int i = 0; i <= n; ++i) {
      const double tau = itf.tau0 + (itf.tau1 - itf.tau0) * i / n;
      const Vec2 p = itf.gamma(tau);
      if (!wide.contains(p)) {
        run_x = run_y = 0;
        continue;
      }
      auto frac = [&](double v, double g) {
        const double w = (v - g) / delta;
        return std::abs(w - std::round(w));
      };
      run_x = frac(p.x(), gamma.x()) < 1e-9 ? run_x + 1 : 0;
      run_y = frac(p.y(), gamma.y()) < 1e-9 ? run_y + 1 : 0;
      if (run_x >= 3 || run_y >= 3) return true;
    }
  }
  return false;
}

}  // namespace

// ---------------------------------------------------------------------------
// CubeFrame: cubic interpolation of the sampled graph.

double CubeFrame::phi(double t) const {
  const int n = static_cast<int>(phi_nodes.size());
  if (n == 0) return 0;
  if (n == 1) return phi_nodes[0];
  const double u = (std::clamp(t, t_lo, t_hi) - t_lo) / dt;
  const int i = std::clamp(static_cast<int>(u), 0, n - 2);
  const double s = u - i;
  const double p0 = phi_nodes[static_cast<std::size_t>(std::max(i - 1, 0))];
  const double p1 = phi_nodes[static_cast<std::size_t>(i)];
  const double p2 = phi_nodes[static_cast<std::size_t>(i + 1)];
  const double p3 = phi_nodes[static_cast<std::size_t>(std::min(i + 2, n - 1))];
  const double m1 = 0.5 * (p2 - p0);
  const double m2 = 0.5 * (p3 - p1);
  const double s2 = s * s, s3 = s2 * s;
  return (2 * s3 - 3 * s2 + 1) * p1 + (s3 - 2 * s2 + s) * m1 + (-2 * s3 + 3 * s2) * p2 +
         (s3 - s2) * m2;
}

double CubeFrame::dphi(double t) const {
  const int n = static_cast<int>(phi_nodes.size());
  if (n <= 1) return 0;
  if (t <= t_lo || t >= t_hi) return 0;  // constant extension
  const double u = (t - t_lo) / dt;
  const int i = std::clamp(static_cast<int>(u), 0, n - 2);
  const double s = u - i;
  const double p0 = phi_nodes[static_cast<std::size_t>(std::max(i - 1, 0))];
  const double p1 = phi_nodes[static_cast<std::size_t>(i)];
  const double p2 = phi_nodes[static_cast<std::size_t>(i + 1)];
  const double p3 = phi_nodes[static_cast<std::size_t>(std::min(i + 2, n - 1))];
  const double m1 = 0.5 * (p2 - p0);
  const double m2 = 0.5 * (p3 - p1);
  const double s2 = s * s;
  const double d = (6 * s2 - 6 * s) * p1 + (3 * s2 - 4 * s + 1) * m1 + (-6 * s2 + 6 * s) * p2 +
                   (3 * s2 - 2 * s) * m2;
  return d / dt;
}

const CubeFrame* ScaleAnalysis::frame_at(const Vec2& x) const {
  if (delta <= 0) return nullptr;
  const auto i = static_cast<std::int64_t>(std::floor((x.x() - gamma.x()) / delta));
  const auto j = static_cast<std::int64_t>(std::floor((x.y() - gamma.y()) / delta));
  const auto it = lookup.find(pack_index(i, j));
  return it == lookup.end() ? nullptr : &frames[static_cast<std::size_t>(it->second)];
}

const CubeFrame& ScaleAnalysis::frame_of(std::array<std::int64_t, 2> idx) const {
  const auto it = lookup.find(pack_index(idx[0], idx[1]));
  if (it == lookup.end()) throw std::out_of_range("frame_of: cube index outside the lattice");
  return frames[static_cast<std::size_t>(it->second)];
}

// ---------------------------------------------------------------------------
// analyze_scale

ScaleAnalysis analyze_scale(const SbvField& f, const Box2& region, double theta, Rng& rng,
                            const AnalysisOptions& opt) {
  if (!(theta > 0 && theta <= 0.5))
    throw std::invalid_argument("analyze_scale: theta must lie in (0, 1/2]");
  const double diam = (region.hi - region.lo).norm();
  const double area = region.volume();
  const Modulus& g0 = opt.g0;
  const double mu = f.interfaces.empty() ? 0.0 : g0_jump_energy(f, g0, region, 1e-6);
  const double budget = opt.residual_multiple * theta * (1 + mu + area);

  double delta = opt.delta0 > 0 ? std::min(opt.delta0, theta) : theta;
  std::array<double, 4> last_resid{};
  for (int halvings = 0;; delta *= 0.5, ++halvings) {
    if (delta < opt.min_delta_factor * diam) {
      std::ostringstream os;
      os << "scale analysis: delta underflow at theta=" << theta
         << "; residuals grad=" << last_resid[0] << " off_line=" << last_resid[1]
         << " normal=" << last_resid[2] << " amplitude=" << last_resid[3]
         << " budget=" << budget;
      throw NumericError(os.str());
    }

    Vec2 gamma = Vec2::Zero();
    for (int attempt = 0; attempt < 8; ++attempt) {
      gamma = sample_shift(delta / 4, rng);
      if (!lattice_coincident(f, gamma, delta, region)) break;
    }

    ScaleAnalysis sa;
    sa.theta = theta;
    sa.delta = delta;
    sa.delta_inner = 0.9 * delta;
    sa.gamma = gamma;
    sa.region = region;
    sa.halvings = halvings;
    sa.mu_total = mu;
    sa.residual_budget = budget;

    std::array<std::int64_t, 2> ilo{}, ihi{};
    for (int k = 0; k < 2; ++k) {
      ilo[static_cast<std::size_t>(k)] =
          static_cast<std::int64_t>(std::floor((region.lo[k] - gamma[k]) / delta));
      ihi[static_cast<std::size_t>(k)] =
          static_cast<std::int64_t>(std::floor((region.hi[k] - gamma[k]) / delta - 1e-12));
      if (ihi[static_cast<std::size_t>(k)] < ilo[static_cast<std::size_t>(k)])
        ihi[static_cast<std::size_t>(k)] = ilo[static_cast<std::size_t>(k)];
    }

    std::array<double, 4> resid{};
    bool slope_ok = true;
    std::vector<double> dom_mass_q;  // dominant-interface mass in Q, per frame

    // Mean gradient over off-interface samples of a box; deviation sum over
    // a second box, weighted by its area.
    auto grid_points = [&](const Box2& b) {
      std::vector<Vec2> pts;
      for (int iy = 0; iy < 5; ++iy)
        for (int ix = 0; ix < 5; ++ix)
          pts.emplace_back(b.lo.x() + (ix + 0.5) / 5.0 * (b.hi.x() - b.lo.x()),
                           b.lo.y() + (iy + 0.5) / 5.0 * (b.hi.y() - b.lo.y()));
      return pts;
    };
    auto off_interface = [&](const std::vector<int>& near, std::vector<Vec2> pts) {
      std::vector<Vec2> keep;
      for (const auto& p : pts) {
        double d = kInf;
        for (int k : near) d = std::min(d, iface_distance(f.interfaces[static_cast<std::size_t>(k)], p));
        if (d > delta / 8) keep.push_back(p);
      }
      return keep.empty() ? pts : keep;
    };

    for (std::int64_t j = ilo[1]; j <= ihi[1]; ++j)
      for (std::int64_t i = ilo[0]; i <= ihi[0]; ++i) {
        CubeFrame fr;
        fr.index = {i, j};
        fr.q.lo = Vec2(gamma + delta * Vec2(static_cast<double>(i), static_cast<double>(j)));
        fr.q.hi = Vec2(fr.q.lo + delta * Vec2(1, 1));
        fr.center = fr.q.center();
        fr.q_star.lo = Vec2(fr.center - delta * Vec2(1, 1));
        fr.q_star.hi = Vec2(fr.center + delta * Vec2(1, 1));
        fr.s = VecM::Zero(f.m);
        fr.eta = MatM2::Zero(f.m, 2);

        bool boundary_layer;
        if (opt.domain)
          boundary_layer = !opt.domain->contains(fr.center) ||
                           opt.domain->boundary_distance(fr.center) <= delta * kSqrt2;
        else
          boundary_layer = box_boundary_distance(region, fr.center) <= delta * kSqrt2;

        double total_mass = 0, dom_mass = 0;
        int dom = -1;
        for (int k = 0; k < static_cast<int>(f.interfaces.size()); ++k) {
          const auto& itf = f.interfaces[static_cast<std::size_t>(k)];
          if (iface_distance(itf, fr.center) > 3 * delta) continue;
          const double m = interface_mass(itf, fr.q_star, g0);
          if (m <= 1e-14) continue;
          fr.near_ifaces.push_back(k);
          total_mass += m;
          if (m > dom_mass) {
            dom_mass = m;
            dom = k;
          }
        }
        fr.dominant_mass = dom_mass;

        auto finish = [&](CubeFrame&& done) {
          sa.lookup[pack_index(i, j)] = static_cast<int>(sa.frames.size());
          sa.frames.push_back(std::move(done));
          dom_mass_q.push_back(0);
        };

        if (boundary_layer) {
          fr.cls = CubeClass::BoundaryLayer;
          finish(std::move(fr));
          continue;
        }
        if (fr.near_ifaces.empty()) {
          fr.cls = CubeClass::NoInterface;
          const auto pts = grid_points(fr.q_star);
          for (const auto& p : pts) fr.eta += f.grad(p);
          fr.eta /= static_cast<double>(pts.size());
          const auto dpts = grid_points(fr.q);
          double dev = 0;
          for (const auto& p : dpts) dev += std::pow((f.grad(p) - fr.eta).norm(), opt.p);
          double overlap = 1;
          for (int k = 0; k < 2; ++k)
            overlap *= std::max(0.0, std::min(fr.q.hi[k], region.hi[k]) -
                                         std::max(fr.q.lo[k], region.lo[k]));
          resid[0] += overlap * dev / static_cast<double>(dpts.size());
          finish(std::move(fr));
          continue;
        }
        const double secondary = total_mass - dom_mass;
        if (secondary > 0.25 * dom_mass) {
          fr.cls = CubeClass::Projection;
          finish(std::move(fr));
          continue;
        }

        // Fit the dominant interface: total-least-squares line, rotated
        // frame, graph table sampled by shooting along the fitted normal.
        const auto& itf = f.interfaces[static_cast<std::size_t>(dom)];
        const auto smp = arc_samples(itf, fr.q_star, 48);
        if (smp.size() < 2) {
          fr.cls = CubeClass::Projection;
          finish(std::move(fr));
          continue;
        }
        double wsum = 0;
        Vec2 cen = Vec2::Zero();
        for (const auto& a : smp) {
          cen += a.weight * a.point;
          wsum += a.weight;
        }
        cen /= wsum;
        Eigen::Matrix2d cov = Eigen::Matrix2d::Zero();
        for (const auto& a : smp) {
          const Vec2 d = a.point - cen;
          cov += a.weight * d * d.transpose();
        }
        Eigen::SelfAdjointEigenSolver<Eigen::Matrix2d> es(cov);
        Vec2 normal(-es.eigenvectors().col(1).y(), es.eigenvectors().col(1).x());
        double ndot = 0;
        for (const auto& a : smp) ndot += a.weight * normal.dot(itf.normal(a.tau));
        if (ndot < 0) normal = -normal;
        const Vec2 tangent(normal.y(), -normal.x());
        fr.rot.col(0) = tangent;
        fr.rot.col(1) = normal;
        // Slide the anchor along the fitted line to the cube center's foot,
        // so |t| stays below the half-diagonal for every point of Q.
        fr.anchor = Vec2(cen + tangent.dot(fr.center - cen) * tangent);
        fr.cls = CubeClass::Fitted;
        fr.interface_index = dom;

        const double reach = 1.6 * delta;
        const int n_nodes = 193;
        fr.t_lo = -reach;
        fr.t_hi = reach;
        fr.dt = 2 * reach / (n_nodes - 1);
        fr.phi_nodes.assign(n_nodes, std::numeric_limits<double>::quiet_NaN());
        int n_valid = 0;
        for (int q = 0; q < n_nodes; ++q) {
          const double t = fr.t_lo + q * fr.dt;
          const Vec2 a = fr.from_frame(t, -reach);
          const Vec2 b = fr.from_frame(t, reach);
          double best = std::numeric_limits<double>::quiet_NaN();
          double best_abs = kInf;
          for (const auto& [tc, tau] : itf.segment_crossings(a, b)) {
            const double hh = -reach + tc * (2 * reach);
            if (std::abs(hh) < best_abs) {
              best_abs = std::abs(hh);
              best = hh;
            }
          }
          fr.phi_nodes[static_cast<std::size_t>(q)] = best;
          if (std::isfinite(best)) ++n_valid;
        }
        if (n_valid == 0) {
          fr.cls = CubeClass::Projection;
          fr.interface_index = -1;
          fr.phi_nodes.clear();
          finish(std::move(fr));
          continue;
        }
        // Constant continuation into unsampled stretches.
        for (int q = 1; q < n_nodes; ++q)
          if (!std::isfinite(fr.phi_nodes[static_cast<std::size_t>(q)]))
            fr.phi_nodes[static_cast<std::size_t>(q)] = fr.phi_nodes[static_cast<std::size_t>(q - 1)];
        for (int q = n_nodes - 2; q >= 0; --q)
          if (!std::isfinite(fr.phi_nodes[static_cast<std::size_t>(q)]))
            fr.phi_nodes[static_cast<std::size_t>(q)] = fr.phi_nodes[static_cast<std::size_t>(q + 1)];

        const double t_reach = 0.85 * delta;
        double ds = 0;
        for (int q = 0; q <= 256; ++q)
          ds = std::max(ds, std::abs(fr.dphi(-t_reach + 2 * t_reach * q / 256)));
        fr.dphi_sup = ds;
        if (ds > theta) slope_ok = false;

        VecM smean = VecM::Zero(f.m);
        for (const auto& a : smp) smean += a.weight * itf.jump(a.tau);
        fr.s = smean / wsum;

        const auto pts = off_interface(fr.near_ifaces, grid_points(fr.q_star));
        for (const auto& p : pts) fr.eta += f.grad(p);
        fr.eta /= static_cast<double>(pts.size());

        // Residuals over Q.
        const auto qs = arc_samples(itf, fr.q, 32);
        double dq = 0;
        for (const auto& a : qs) {
          const double gj = g0(itf.jump(a.tau).norm());
          dq += a.weight * gj;
          resid[2] += a.weight * gj * (itf.normal(a.tau) - normal).norm();
          resid[3] += a.weight * g0((itf.jump(a.tau) - fr.s).norm());
        }
        for (int k : fr.near_ifaces)
          if (k != dom) resid[1] += interface_mass(f.interfaces[static_cast<std::size_t>(k)], fr.q, g0);
        {
          const auto dpts = off_interface(fr.near_ifaces, grid_points(fr.q));
          double dev = 0;
          for (const auto& p : dpts) dev += std::pow((f.grad(p) - fr.eta).norm(), opt.p);
          double overlap = 1;
          for (int k = 0; k < 2; ++k)
            overlap *= std::max(0.0, std::min(fr.q.hi[k], region.hi[k]) -
                                         std::max(fr.q.lo[k], region.lo[k]));
          resid[0] += overlap * dev / static_cast<double>(dpts.size());
        }
        finish(std::move(fr));
        dom_mass_q.back() = dq;
      }

    last_resid = resid;
    const bool resid_ok =
        resid[0] <= budget && resid[1] <= budget && resid[2] <= budget && resid[3] <= budget;
    if (!(slope_ok && resid_ok)) continue;

    // Q' close enough to Q that the interface mass left in the transition
    // ring stays within its budget.
    double r = 0.9;
    const double ring_budget = opt.ring_multiple * theta * (1 + mu + area);
    for (int it = 0; it < 6; ++it) {
      double ring = 0;
      for (std::size_t fi = 0; fi < sa.frames.size(); ++fi) {
        const CubeFrame& fr = sa.frames[fi];
        if (fr.cls != CubeClass::Fitted) continue;
        Box2 qi;
        qi.lo = Vec2(fr.center - 0.5 * r * delta * Vec2(1, 1));
        qi.hi = Vec2(fr.center + 0.5 * r * delta * Vec2(1, 1));
        ring += dom_mass_q[fi] -
                interface_mass(f.interfaces[static_cast<std::size_t>(fr.interface_index)], qi, g0);
      }
      if (ring <= ring_budget || it == 5) break;
      r = 1 - 0.5 * (1 - r);
    }
    sa.delta_inner = r * delta;
    for (auto& fr : sa.frames) {
      fr.q_inner.lo = Vec2(fr.center - 0.5 * r * delta * Vec2(1, 1));
      fr.q_inner.hi = Vec2(fr.center + 0.5 * r * delta * Vec2(1, 1));
      fr.q_mid.lo = Vec2(fr.center - 0.25 * (1 + r) * delta * Vec2(1, 1));
      fr.q_mid.hi = Vec2(fr.center + 0.25 * (1 + r) * delta * Vec2(1, 1));
    }
    sa.residuals = resid;
    return sa;
  }
}

// ---------------------------------------------------------------------------
// linearize_interface

double InterfacePL::psi(double t) const {
  const int n = static_cast<int>(psi_nodes.size());
  if (n == 0) return 0;
  if (n == 1) return psi_nodes[0];
  const double u = t / eps - static_cast<double>(k_lo);
  if (u <= 0) return psi_nodes[0];
  if (u >= n - 1) return psi_nodes[static_cast<std::size_t>(n - 1)];
  const int i = static_cast<int>(u);
  const double s = u - i;
  return (1 - s) * psi_nodes[static_cast<std::size_t>(i)] + s * psi_nodes[static_cast<std::size_t>(i + 1)];
}

double InterfacePL::dpsi(double t) const {
  const int n = static_cast<int>(psi_nodes.size());
  if (n < 2) return 0;
  const double u = t / eps - static_cast<double>(k_lo);
  if (u <= 0 || u >= n - 1) return 0;
  const int i = static_cast<int>(u);
  return (psi_nodes[static_cast<std::size_t>(i + 1)] - psi_nodes[static_cast<std::size_t>(i)]) / eps;
}

InterfacePL linearize_interface(const ScaleAnalysis& sa, int frame_index, double eps, Rng& rng) {
  const CubeFrame& fr = sa.frames.at(static_cast<std::size_t>(frame_index));
  if (fr.cls != CubeClass::Fitted)
    throw std::invalid_argument("linearize_interface: frame has no fitted interface");

  InterfacePL pl;
  pl.frame_index = frame_index;
  pl.eps = eps;
  // Nodes cover every t reachable from the bump support (half-diagonal of Q
  // plus margin); beyond them psi extends by the constant phi shares.
  const double half = 1.0 * sa.delta;
  pl.k_lo = static_cast<std::int64_t>(std::floor(-half / eps)) - 1;
  const auto k_hi = static_cast<std::int64_t>(std::ceil(half / eps)) + 1;
  for (std::int64_t k = pl.k_lo; k <= k_hi; ++k)
    pl.psi_nodes.push_back(fr.phi(static_cast<double>(k) * eps));

  double ws = 0, wd = 0;
  for (std::size_t i = 0; i + 1 < pl.psi_nodes.size(); ++i) {
    const double ta = static_cast<double>(pl.k_lo + static_cast<std::int64_t>(i)) * eps;
    for (int q = 1; q < 9; ++q) {
      const double t = ta + eps * q / 9.0;
      ws = std::max(ws, std::abs(fr.phi(t) - pl.psi(t)) / eps);
      wd = std::max(wd, std::abs(fr.dphi(t) - pl.dpsi(t)));
    }
  }
  pl.omega_sup = ws;
  pl.omega_slope = wd;

  // Vertical shift: small enough for the deformation budget, resampled so
  // that no node of the shifted polyline sits on the cube boundary.
  const double bmax =
      std::min(0.25 * eps, sa.theta * std::max(sa.delta - sa.delta_inner, 1e-12 * sa.delta) / 48);
  std::uniform_real_distribution<double> mag(0.25, 1.0);
  std::uniform_int_distribution<int> sgn(0, 1);
  double best_beta = 0, best_sep = -1;
  for (int attempt = 0; attempt < 8; ++attempt) {
    const double beta = (sgn(rng) ? 1 : -1) * mag(rng) * bmax;
    double sep = kInf;
    std::vector<Vec2> nodes;
    for (std::int64_t k = pl.k_lo; k <= k_hi; ++k) {
      const double t = static_cast<double>(k) * eps;
      const Vec2 p = fr.from_frame(t, pl.psi(t) + beta);
      nodes.push_back(p);
      for (int d = 0; d < 2; ++d)
        sep = std::min({sep, std::abs(p[d] - fr.q.lo[d]), std::abs(p[d] - fr.q.hi[d])});
    }
    for (std::size_t i = 0; i + 1 < nodes.size(); ++i)
      for (int d = 0; d < 2; ++d)
        for (const double c : {fr.q.lo[d], fr.q.hi[d]})
          if (std::abs(nodes[i][d] - c) < 1e-9 && std::abs(nodes[i + 1][d] - c) < 1e-9) sep = 0;
    if (sep > best_sep) {
      best_sep = sep;
      best_beta = beta;
    }
    if (sep > 1e-9) break;
  }
  pl.beta = best_beta;
  return pl;
}

// ---------------------------------------------------------------------------
// Deformation

Deformation::Deformation(const ScaleAnalysis* sa, std::vector<InterfacePL> pls)
    : sa_(sa), pls_(std::move(pls)) {
  for (std::size_t i = 0; i < pls_.size(); ++i)
    pl_of_frame_[pls_[i].frame_index] = static_cast<int>(i);
}

namespace {

double bump_alpha(const CubeFrame& fr, const Vec2& x) {
  const double hq = 0.5 * (fr.q.hi.x() - fr.q.lo.x());
  const double hm = 0.5 * (fr.q_mid.hi.x() - fr.q_mid.lo.x());
  double a = 1;
  for (int d = 0; d < 2; ++d) {
    const double r = std::abs(x[d] - fr.center[d]);
    if (r >= hq) return 0;
    if (r > hm) a *= smoothstep3((hq - r) / (hq - hm));
  }
  return a;
}

}  // namespace

Vec2 Deformation::apply(const Vec2& x) const {
  if (!sa_ || pls_.empty()) return x;
  const CubeFrame* fr = sa_->frame_at(x);
  if (!fr || fr->cls != CubeClass::Fitted) return x;
  const auto it = pl_of_frame_.find(static_cast<int>(fr - sa_->frames.data()));
  if (it == pl_of_frame_.end()) return x;
  const InterfacePL& pl = pls_[static_cast<std::size_t>(it->second)];
  const double alpha = bump_alpha(*fr, x);
  if (alpha == 0) return x;
  const Vec2 th = fr->frame_coords(x);
  const double disp = pl.psi(th.x()) + pl.beta - fr->phi(th.x());
  return Vec2(x + alpha * disp * Vec2(fr->rot.col(1)));
}

Vec2 Deformation::invert(const Vec2& y) const {
  if (!sa_ || pls_.empty()) return y;
  const double scale = sa_->delta;
  Vec2 x = y;
  for (int it = 0; it < 60; ++it) {
    const Vec2 r = apply(x) - y;
    if (r.norm() <= 1e-13 * std::max(1.0, scale)) return x;
    const double h = 1e-7 * scale;
    Eigen::Matrix2d jac;
    for (int d = 0; d < 2; ++d) {
      Vec2 e = Vec2::Zero();
      e[d] = h;
      jac.col(d) = (apply(Vec2(x + e)) - apply(Vec2(x - e))) / (2 * h);
    }
    x -= Vec2(jac.partialPivLu().solve(r));
  }
  if ((apply(x) - y).norm() > 1e-9 * std::max(1.0, scale))
    throw NumericError("deformation inverse: Newton failed to converge");
  return x;
}

DeformationMap Deformation::as_map() const {
  DeformationMap dm;
  if (is_identity()) return dm;
  dm.identity = false;
  dm.forward = [this](const Vec2& x) { return apply(x); };
  dm.inverse = [this](const Vec2& y) { return invert(y); };
  return dm;
}

Deformation build_deformation(const ScaleAnalysis& sa, std::vector<InterfacePL> pls,
                              double theta) {
  Deformation def(&sa, std::move(pls));
  double phi_sup = 0, dphi_sup = 0;
  const double h = 1e-6 * sa.delta;
  for (const auto& pl : def.interfaces()) {
    const CubeFrame& fr = sa.frames[static_cast<std::size_t>(pl.frame_index)];
    for (int iy = 0; iy < 13; ++iy)
      for (int ix = 0; ix < 13; ++ix) {
        const Vec2 x(fr.q.lo.x() + (ix + 0.5) / 13.0 * sa.delta,
                     fr.q.lo.y() + (iy + 0.5) / 13.0 * sa.delta);
        phi_sup = std::max(phi_sup, (def.apply(x) - x).norm());
        Eigen::Matrix2d jac;
        for (int d = 0; d < 2; ++d) {
          Vec2 e = Vec2::Zero();
          e[d] = h;
          jac.col(d) = (def.apply(Vec2(x + e)) - def.apply(Vec2(x - e))) / (2 * h);
        }
        dphi_sup = std::max(dphi_sup, (jac - Eigen::Matrix2d::Identity()).norm());
      }
  }
  def.phi_sup = phi_sup;
  def.dphi_sup = dphi_sup;
  if (dphi_sup > theta / 2) throw ReduceEpsSignal{dphi_sup};

  // Transport: the fitted graph lands on the shifted polyline inside Q'.
  for (const auto& pl : def.interfaces()) {
    const CubeFrame& fr = sa.frames[static_cast<std::size_t>(pl.frame_index)];
    const double span = 0.71 * sa.delta;
    for (int q = 0; q < 100; ++q) {
      const double t = -span + 2 * span * (q + 0.5) / 100;
      const Vec2 x = fr.from_frame(t, fr.phi(t));
      if (!fr.q_inner.contains(x)) continue;
      const Vec2 th = fr.frame_coords(def.apply(x));
      const double res = std::abs(th.y() - pl.psi(th.x()) - pl.beta) /
                         std::hypot(1.0, pl.dpsi(th.x()));
      if (res > 1e-8 * sa.delta)
        throw NumericError("deformation: interface transport residual too large");
    }
  }
  return def;
}

// ---------------------------------------------------------------------------
// Approximant

namespace {

struct SideKey {
  CellId2 cell;
  int iface;
  int sign;
  bool operator==(const SideKey&) const = default;
};

struct SideKeyHash {
  std::size_t operator()(const SideKey& k) const {
    return CellIdHash<2>{}(k.cell) * 1000003u ^
           static_cast<std::size_t>(k.iface * 2 + (k.sign > 0 ? 1 : 0));
  }
};

}  // namespace

struct Approximant::Impl {
  SbvField field;
  ScaleAnalysis sa;
  std::vector<InterfacePL> pls;
  std::unordered_map<int, int> pl_of_frame;
  GridPlacement<2> placement;
  Box2 region;
  int m = 1;
  PwAffineFunction pw;

  struct Affine {
    MatM2 g;
    VecM c;
    VecM at(const Vec2& x) const { return VecM(c + g * x); }
  };
  mutable std::unordered_map<SideKey, Affine, SideKeyHash> side_cache;
  mutable std::vector<JumpFace> face_list;
  mutable bool faces_built = false;

  const InterfacePL* pl_for(const CubeFrame* fr) const {
    if (!fr || fr->cls != CubeClass::Fitted) return nullptr;
    const auto it = pl_of_frame.find(static_cast<int>(fr - sa.frames.data()));
    return it == pl_of_frame.end() ? nullptr : &pls[static_cast<std::size_t>(it->second)];
  }

  const Affine& side_affine(const CellId2& id, int iface, int sign) const {
    const SideKey key{id, iface, sign};
    auto it = side_cache.find(key);
    if (it != side_cache.end()) return it->second;
    const Simplex<2> s = placement.cell_simplex(id);
    const auto& itf = field.interfaces[static_cast<std::size_t>(iface)];
    const auto& evalside = sign > 0 ? itf.eval_plus : itf.eval_minus;
    const Vec2 v0(s.vertices.col(0)), v1(s.vertices.col(1)), v2(s.vertices.col(2));
    const VecM u0 = evalside(v0), u1 = evalside(v1), u2 = evalside(v2);
    Eigen::Matrix2d e;
    e.col(0) = v1 - v0;
    e.col(1) = v2 - v0;
    MatM2 du(u0.size(), 2);
    du.col(0) = u1 - u0;
    du.col(1) = u2 - u0;
    Affine a;
    a.g = du * e.inverse();
    a.c = u0 - a.g * v0;
    return side_cache.emplace(key, std::move(a)).first->second;
  }

  VecM eval_at(const Vec2& x) const {
    const CubeFrame* fr = sa.frame_at(x);
    if (const InterfacePL* pl = pl_for(fr)) {
      const Vec2 th = fr->frame_coords(x);
      const int sign = th.y() >= pl->psi(th.x()) + pl->beta ? 1 : -1;
      return side_affine(locate_cell<2>(placement, x), fr->interface_index, sign).at(x);
    }
    return pw.eval(x);
  }

  MatM2 grad_at(const Vec2& x) const {
    const CubeFrame* fr = sa.frame_at(x);
    if (const InterfacePL* pl = pl_for(fr)) {
      const Vec2 th = fr->frame_coords(x);
      const int sign = th.y() >= pl->psi(th.x()) + pl->beta ? 1 : -1;
      return side_affine(locate_cell<2>(placement, x), fr->interface_index, sign).g;
    }
    return pw.grad(x);
  }

  // One-sided value/affine data at an edge point, forced to the rule of a
  // given cube; `inward` points into that cube.
  Affine forced_affine(const CubeFrame& fr, const Vec2& x, const Vec2& inward) const {
    const Vec2 probe = Vec2(x + (1e-6 * placement.eps) * inward);
    if (const InterfacePL* pl = pl_for(&fr)) {
      const Vec2 th = fr.frame_coords(probe);
      const int sign = th.y() >= pl->psi(th.x()) + pl->beta ? 1 : -1;
      return side_affine(locate_cell<2>(placement, probe), fr.interface_index, sign);
    }
    Affine a;
    a.g = pw.grad(probe);
    a.c = pw.eval(probe) - a.g * probe;
    return a;
  }

  template <class Fn>
  void visit_faces(Fn&& emit) const;

  void build_faces() const {
    if (faces_built) return;
    face_list.clear();
    visit_faces([this](JumpFace&& jf) { face_list.push_back(std::move(jf)); });
    faces_built = true;
  }
};

template <class Fn>
void Approximant::Impl::visit_faces(Fn&& emit) const {
  const double eps = placement.eps;

  // 1. Faces along the linearized graphs of fitted cubes, cut at the grid
  // nodes (kinks) and subdivided so the sampled endpoint jumps are affine to
  // within the cell resolution.
  for (const auto& pl : pls) {
    const CubeFrame& fr = sa.frames[static_cast<std::size_t>(pl.frame_index)];
    const Box2 b = box_intersect(fr.q, region);
    if (box_empty(b)) continue;
    const Vec2 nu_z(fr.rot.col(1));
    const double tspan = 0.75 * sa.delta;
    const auto k0 = static_cast<std::int64_t>(std::floor(-tspan / eps));
    const auto k1 = static_cast<std::int64_t>(std::ceil(tspan / eps));
    for (std::int64_t k = k0; k < k1; ++k) {
      const double ta0 = std::max(static_cast<double>(k) * eps, -tspan);
      const double tb0 = std::min(static_cast<double>(k + 1) * eps, tspan);
      if (tb0 <= ta0) continue;
      const int ns = std::max(1, static_cast<int>(std::ceil((tb0 - ta0) / (eps / 4))));
      for (int sseg = 0; sseg < ns; ++sseg) {
        const double ta = ta0 + (tb0 - ta0) * sseg / ns;
        const double tb = ta0 + (tb0 - ta0) * (sseg + 1) / ns;
        const Vec2 pa = fr.from_frame(ta, pl.psi(ta) + pl.beta);
        const Vec2 pb = fr.from_frame(tb, pl.psi(tb) + pl.beta);
        double u0, u1;
        if (!clip_segment_to_box(pa, pb, b, u0, u1)) continue;
        const Vec2 a = Vec2(pa + u0 * (pb - pa));
        const Vec2 bb = Vec2(pa + u1 * (pb - pa));
        if ((bb - a).norm() < 1e-15) continue;
        const Vec2 mid = Vec2(0.5 * (a + bb));
        const CellId2 id = locate_cell<2>(placement, mid);
        const Affine& ap = side_affine(id, fr.interface_index, 1);
        const Affine& am = side_affine(id, fr.interface_index, -1);
        JumpFace jf;
        jf.cell = id;
        jf.a = a;
        jf.b = bb;
        jf.jump_a = ap.at(a) - am.at(a);
        jf.jump_b = ap.at(bb) - am.at(bb);
        if (jf.jump_a.norm() <= 1e-12 && jf.jump_b.norm() <= 1e-12) continue;
        const Vec2 dir = (bb - a).normalized();
        Vec2 n(-dir.y(), dir.x());
        if (n.dot(nu_z) < 0) n = -n;
        jf.nu = n;
        jf.grad_plus = ap.g;
        jf.off_plus = ap.c;
        jf.grad_minus = am.g;
        jf.off_minus = am.c;
        emit(std::move(jf));
      }
    }
  }

  // 2. Cube-boundary mismatch faces wherever the two adjacent cubes follow
  // different rules (either side fitted).
  for (std::size_t fi = 0; fi < sa.frames.size(); ++fi) {
    const CubeFrame& fa = sa.frames[fi];
    for (int dir = 0; dir < 2; ++dir) {
      const std::array<std::int64_t, 2> nb{fa.index[0] + (dir == 0 ? 1 : 0),
                                           fa.index[1] + (dir == 1 ? 1 : 0)};
      const auto it = sa.lookup.find(pack_index(nb[0], nb[1]));
      if (it == sa.lookup.end()) continue;
      const CubeFrame& fb = sa.frames[static_cast<std::size_t>(it->second)];
      if (!pl_for(&fa) && !pl_for(&fb)) continue;  // both generic: same projection
      const Vec2 nrm = dir == 0 ? Vec2(1, 0) : Vec2(0, 1);
      const int tdim = 1 - dir;
      const double coord = fa.q.hi[dir];
      const double lo = std::max(fa.q.lo[tdim], region.lo[tdim]);
      const double hi = std::min(fa.q.hi[tdim], region.hi[tdim]);
      if (hi <= lo) continue;
      const int ns = std::max(2, static_cast<int>(std::ceil((hi - lo) / (eps / 4))));
      std::vector<Vec2> pts(static_cast<std::size_t>(ns) + 1);
      std::vector<VecM> diff(static_cast<std::size_t>(ns) + 1);
      std::vector<Affine> affa(static_cast<std::size_t>(ns) + 1), affb(static_cast<std::size_t>(ns) + 1);
      for (int i = 0; i <= ns; ++i) {
        Vec2 p;
        p[dir] = coord;
        p[tdim] = lo + (hi - lo) * i / ns;
        pts[static_cast<std::size_t>(i)] = p;
        affa[static_cast<std::size_t>(i)] = forced_affine(fa, p, Vec2(-nrm));
        affb[static_cast<std::size_t>(i)] = forced_affine(fb, p, nrm);
        diff[static_cast<std::size_t>(i)] =
            affb[static_cast<std::size_t>(i)].at(p) - affa[static_cast<std::size_t>(i)].at(p);
      }
      for (int i = 0; i < ns; ++i) {
        const VecM& da = diff[static_cast<std::size_t>(i)];
        const VecM& db = diff[static_cast<std::size_t>(i + 1)];
        if (da.norm() <= 1e-9 && db.norm() <= 1e-9) continue;
        JumpFace jf;
        jf.a = pts[static_cast<std::size_t>(i)];
        jf.b = pts[static_cast<std::size_t>(i + 1)];
        const Vec2 mid = Vec2(0.5 * (jf.a + jf.b));
        jf.cell = locate_cell<2>(placement, mid);
        jf.nu = nrm;  // plus side: the higher-index cube
        jf.jump_a = da;
        jf.jump_b = db;
        jf.on_cell_boundary = true;
        jf.grad_plus = affb[static_cast<std::size_t>(i)].g;
        jf.off_plus = affb[static_cast<std::size_t>(i)].c;
        jf.grad_minus = affa[static_cast<std::size_t>(i)].g;
        jf.off_minus = affa[static_cast<std::size_t>(i)].c;
        emit(std::move(jf));
      }
    }
  }

  // 3. Generic projector faces in fallback cubes, restricted to the cells
  // the interfaces actually visit and clipped to the cube.
  for (const auto& fr : sa.frames) {
    if (fr.cls != CubeClass::Projection && fr.cls != CubeClass::BoundaryLayer) continue;
    if (fr.near_ifaces.empty()) continue;
    const Box2 b = box_intersect(fr.q, region);
    if (box_empty(b)) continue;
    const Box2 walk = b.inflated(2 * eps);
    std::unordered_set<CellId2, CellIdHash<2>> cells;
    for (int k : fr.near_ifaces) {
      const auto& itf = field.interfaces[static_cast<std::size_t>(k)];
      const double h = 1e-6 * std::max(1.0, std::abs(itf.tau1 - itf.tau0));
      for (const auto& [lo, hi] : interface_param_intervals(itf, walk)) {
        if (hi - lo < 1e-13) continue;
        const double midspeed =
            (itf.gamma(0.5 * (lo + hi) + h) - itf.gamma(0.5 * (lo + hi) - h)).norm() / (2 * h);
        const double dtau = (eps / 3) / std::max(midspeed, 1e-12);
        const int steps = std::max(2, static_cast<int>(std::ceil((hi - lo) / dtau)));
        for (int i = 0; i <= steps; ++i) {
          const Vec2 p = itf.gamma(lo + (hi - lo) * i / steps);
          const Vec2 ref = placement.to_reference(p);
          const auto cx = static_cast<std::int64_t>(std::floor(ref.x()));
          const auto cy = static_cast<std::int64_t>(std::floor(ref.y()));
          for (std::int64_t dx = -1; dx <= 1; ++dx)
            for (std::int64_t dy = -1; dy <= 1; ++dy) {
              // neighbour cube only when the point is near its side
              if (dx != 0 &&
                  std::abs(ref.x() - static_cast<double>(cx + (dx > 0 ? 1 : 0))) > 0.1)
                continue;
              if (dy != 0 &&
                  std::abs(ref.y() - static_cast<double>(cy + (dy > 0 ? 1 : 0))) > 0.1)
                continue;
              CellId2 id;
              id.cube = {cx + dx, cy + dy};
              for (int tag = 0; tag < 2; ++tag) {
                id.tag = tag;
                cells.insert(id);
              }
            }
        }
      }
    }
    std::vector<CellId2> sorted(cells.begin(), cells.end());
    std::sort(sorted.begin(), sorted.end());
    std::vector<JumpFace> local;
    for (const auto& id : sorted) append_cell_jump_faces(pw, id, 1e-12, local);
    for (auto& jf : local)
      if (clip_face_to_box(jf, b)) emit(std::move(jf));
    if (pw.cache.size() > 300000) pw.cache.clear();
  }
}

VecM Approximant::eval(const Vec2& x) const { return impl->eval_at(x); }
MatM2 Approximant::grad(const Vec2& x) const { return impl->grad_at(x); }
const std::vector<JumpFace>& Approximant::faces() const {
  impl->build_faces();
  return impl->face_list;
}
const GridPlacement<2>& Approximant::placement() const { return impl->placement; }
const Box2& Approximant::region() const { return impl->region; }
int Approximant::components() const { return impl->m; }

Approximant assemble_approximant(const SbvField& f, const ScaleAnalysis& sa,
                                 const std::vector<InterfacePL>& pls, double eps,
                                 const Vec2& zeta) {
  Approximant w;
  w.impl = std::make_shared<Approximant::Impl>();
  auto& im = *w.impl;
  im.field = f;
  im.sa = sa;
  im.pls = pls;
  for (std::size_t i = 0; i < pls.size(); ++i)
    im.pl_of_frame[pls[i].frame_index] = static_cast<int>(i);
  im.placement.eps = eps;
  im.placement.shift = zeta;
  im.region = sa.region;
  im.m = f.m;

  im.pw.placement = im.placement;
  im.pw.region = im.region;
  im.pw.m = f.m;
  Approximant::Impl* raw = w.impl.get();
  im.pw.build_cell = [raw](const CellId2& id) {
    const Simplex<2> s = raw->placement.cell_simplex(id);
    const Vec2 c = s.centroid();
    const CubeFrame* fr = raw->sa.frame_at(c);
    const double thr = 2.5 * raw->placement.eps;
    std::vector<int> cand;
    if (fr) {
      for (int k : fr->near_ifaces)
        if (iface_distance(raw->field.interfaces[static_cast<std::size_t>(k)], c) <= thr)
          cand.push_back(k);
    } else {
      for (int k = 0; k < static_cast<int>(raw->field.interfaces.size()); ++k)
        if (iface_distance(raw->field.interfaces[static_cast<std::size_t>(k)], c) <= thr)
          cand.push_back(k);
    }
    if (cand.empty()) {
      CellData<2> d = CellData<2>::zero(s, raw->field.m);
      for (int i = 0; i < 3; ++i) d.u[static_cast<std::size_t>(i)] = raw->field.eval(Vec2(s.vertices.col(i)));
      return d;
    }
    SbvField local;
    local.m = raw->field.m;
    local.eval = raw->field.eval;
    local.grad = raw->field.grad;
    local.domain = raw->field.domain;
    for (int k : cand) local.interfaces.push_back(raw->field.interfaces[static_cast<std::size_t>(k)]);
    return slice_cell_data(local, raw->placement, id);
  };
  return w;
}

// ---------------------------------------------------------------------------
// Metrics

namespace {

struct StreamAccum {
  double l1 = 0, lp = 0, grad_l1 = 0, area_int = 0, bulk = 0, bl_bulk = 0;
};

void accum_piece(StreamAccum& acc, const Polygon& poly, const MatM2& g, const VecM& off,
                 const SbvField& u, double p, const BulkDensity& psi, bool bl, bool sampled_l1) {
  const double a = polygon_area(poly);
  if (a <= 1e-18) return;
  const double e = a * psi(g);
  acc.bulk += e;
  if (bl) acc.bl_bulk += e;
  acc.grad_l1 += a * g.norm();
  acc.area_int += a * std::sqrt(1 + g.squaredNorm());
  const Vec2 c = polygon_centroid(poly);
  acc.lp += a * std::pow((g - u.grad(c)).norm(), p);
  if (!sampled_l1) {
    acc.l1 += a * (off + g * c - u.eval(c)).norm();
    return;
  }
  // Fan split: sturdier when the reference field jumps inside the piece.
  const std::size_t n = poly.size();
  for (std::size_t i = 0; i < n; ++i) {
    const Vec2& va = poly[i];
    const Vec2& vb = poly[(i + 1) % n];
    const double ai = 0.5 * std::abs((va.x() - c.x()) * (vb.y() - c.y()) -
                                     (vb.x() - c.x()) * (va.y() - c.y()));
    if (ai <= 1e-18) continue;
    const Vec2 ci = Vec2((va + vb + c) / 3.0);
    acc.l1 += ai * (off + g * ci - u.eval(ci)).norm();
  }
}

// Split a polygon inside a fitted cube into pieces above / below the
// shifted polyline (strips at the grid nodes, then the exact chord).
template <class Fn>
void split_by_graph(const Polygon& poly, const CubeFrame& fr, const InterfacePL& pl, Fn&& emit) {
  const Vec2 tdir(fr.rot.col(0));
  const Vec2 ndir(fr.rot.col(1));
  double tmin = kInf, tmax = -kInf;
  for (const auto& v : poly) {
    const double t = tdir.dot(v - fr.anchor);
    tmin = std::min(tmin, t);
    tmax = std::max(tmax, t);
  }
  const double eps = pl.eps;
  const auto k0 = static_cast<std::int64_t>(std::floor(tmin / eps));
  const auto k1 = static_cast<std::int64_t>(std::floor(tmax / eps));
  for (std::int64_t k = k0; k <= k1; ++k) {
    Polygon strip = poly;
    if (k > k0)
      strip = clip_halfplane(strip, Vec2(fr.anchor + static_cast<double>(k) * eps * tdir),
                             Vec2(-tdir));
    if (k < k1)
      strip = clip_halfplane(strip, Vec2(fr.anchor + static_cast<double>(k + 1) * eps * tdir),
                             tdir);
    if (strip.size() < 3) continue;
    const double ta = static_cast<double>(k) * eps;
    const double tb = static_cast<double>(k + 1) * eps;
    const Vec2 pa = fr.from_frame(ta, pl.psi(ta) + pl.beta);
    const Vec2 pb = fr.from_frame(tb, pl.psi(tb) + pl.beta);
    Vec2 e = pb - pa;
    Vec2 n(-e.y(), e.x());
    if (n.dot(ndir) < 0) n = -n;
    n.normalize();
    const Polygon above = clip_halfplane(strip, pa, Vec2(-n));
    const Polygon below = clip_halfplane(strip, pa, n);
    if (polygon_area(above) > 1e-18) emit(1, above);
    if (polygon_area(below) > 1e-18) emit(-1, below);
  }
}

bool constant_on_box(const SbvField& f, const Box2& b) {
  const VecM v0 = f.eval(b.center());
  for (int iy = 0; iy < 3; ++iy)
    for (int ix = 0; ix < 3; ++ix) {
      const Vec2 p(b.lo.x() + (ix + 0.5) / 3.0 * (b.hi.x() - b.lo.x()),
                   b.lo.y() + (iy + 0.5) / 3.0 * (b.hi.y() - b.lo.y()));
      if (f.grad(p).norm() != 0.0) return false;
      if ((f.eval(p) - v0).norm() != 0.0) return false;
    }
  return true;
}

StreamAccum stream_bulk_metrics(const Approximant::Impl& im, const SbvField& u, double p,
                                const BulkDensity& psi) {
  StreamAccum acc;
  const MatM2 zero = MatM2::Zero(im.m, 2);
  for (const auto& fr : im.sa.frames) {
    const Box2 b = box_intersect(fr.q, im.region);
    if (box_empty(b)) continue;
    const bool bl = fr.cls == CubeClass::BoundaryLayer;
    const InterfacePL* pl = im.pl_for(&fr);
    if (!pl && fr.near_ifaces.empty() && constant_on_box(u, b)) {
      // The projection of a constant is the constant: only the area term.
      const double a = b.volume();
      const double e = a * psi(zero);
      acc.bulk += e;
      if (bl) acc.bl_bulk += e;
      acc.area_int += a;
      continue;
    }
    for_each_cell<2>(im.placement, b, [&](const CellId2& id) {
      const Simplex<2> s = im.placement.cell_simplex(id);
      Polygon tri = {Vec2(s.vertices.col(0)), Vec2(s.vertices.col(1)), Vec2(s.vertices.col(2))};
      if (polygon_area(tri) < 0) std::reverse(tri.begin(), tri.end());
      const Polygon clipped = clip_to_box(tri, b);
      if (clipped.size() < 3) return;
      if (pl) {
        split_by_graph(clipped, fr, *pl, [&](int sign, const Polygon& piece) {
          const auto& af = im.side_affine(id, fr.interface_index, sign);
          accum_piece(acc, piece, af.g, af.c, u, p, psi, bl, false);
        });
        return;
      }
      const Vec2 c = polygon_centroid(clipped);
      double d = kInf;
      for (int k : fr.near_ifaces)
        d = std::min(d, iface_distance(im.field.interfaces[static_cast<std::size_t>(k)], c));
      if (d > 4 * im.placement.eps) {
        // away from the jump set the projection is the plain affine interpolant
        const Vec2 v0(s.vertices.col(0)), v1(s.vertices.col(1)), v2(s.vertices.col(2));
        Eigen::Matrix2d e;
        e.col(0) = v1 - v0;
        e.col(1) = v2 - v0;
        const VecM u0 = im.field.eval(v0);
        MatM2 du(im.m, 2);
        du.col(0) = im.field.eval(v1) - u0;
        du.col(1) = im.field.eval(v2) - u0;
        const MatM2 g = du * e.inverse();
        accum_piece(acc, clipped, g, VecM(u0 - g * v0), u, p, psi, bl, false);
        return;
      }
      const auto& ci = im.pw.cell(id);
      const auto geo = subcell_geometry(s);
      for (int jq = 0; jq < 3; ++jq) {
        const Polygon piece = clip_to_box(geo.quads[static_cast<std::size_t>(jq)], b);
        if (piece.size() < 3) continue;
        accum_piece(acc, piece, ci.grad[static_cast<std::size_t>(jq)],
                    ci.offset[static_cast<std::size_t>(jq)], u, p, psi, bl, true);
      }
    });
    if (im.pw.cache.size() > 300000) im.pw.cache.clear();
  }
  return acc;
}

struct McMetrics {
  double l1 = 0, lp = 0, grad_l1 = 0, area_int = 0, bulk = 0;
};

McMetrics mc_bulk_metrics(const Approximant& w, const SbvField& u, const Box2& region, double p,
                          const BulkDensity& psi, const std::vector<Vec2>& pts) {
  McMetrics m;
  for (const auto& x : pts) {
    const VecM wv = w.eval(x);
    const MatM2 gw = w.grad(x);
    m.l1 += (wv - u.eval(x)).norm();
    m.lp += std::pow((gw - u.grad(x)).norm(), p);
    m.grad_l1 += gw.norm();
    m.area_int += std::sqrt(1 + gw.squaredNorm());
    m.bulk += psi(gw);
  }
  const double scale = region.volume() / static_cast<double>(pts.size());
  m.l1 *= scale;
  m.lp *= scale;
  m.grad_l1 *= scale;
  m.area_int *= scale;
  m.bulk *= scale;
  return m;
}

// Streaming face aggregation (surface energy, jump variation, length) that
// never materializes the whole inventory.
struct FaceAgg {
  double energy = 0, jump_var = 0, length = 0, bl_energy = 0;
};

FaceAgg aggregate_faces(const Approximant& w, const SurfaceDensity& g, const Box2& region) {
  FaceAgg agg;
  const SurfaceDensity var = SurfaceDensity::cohesive(Modulus{Modulus::Kind::Power, 1.0});
  std::vector<JumpFace> chunk, bl_chunk;
  const auto& im = *w.impl;
  auto flush = [&]() {
    agg.energy += surface_energy(chunk, g, region);
    agg.jump_var += surface_energy(chunk, var, region);
    agg.bl_energy += surface_energy(bl_chunk, g, region);
    chunk.clear();
    bl_chunk.clear();
  };
  im.visit_faces([&](JumpFace&& jf) {
    agg.length += jf.length();
    const Vec2 mid = Vec2(0.5 * (jf.a + jf.b));
    const CubeFrame* fr = im.sa.frame_at(mid);
    if (fr && fr->cls == CubeClass::BoundaryLayer) bl_chunk.push_back(jf);
    chunk.push_back(std::move(jf));
    if (chunk.size() >= 10000) flush();
  });
  flush();
  return agg;
}

void fill_u_side(MetricsRecord& r, const SbvField& u, const Box2& region,
                 const PipelineOptions& opt) {
  r.bulk_u = bulk_energy(u, opt.psi, region, 1e-5);
  r.surf_u = surface_energy(u, opt.g, region, 1e-7);
  const auto su = strict_metrics(u, region, 1e-5);
  r.strict_u = su.strict();
  r.area_strict_u = su.area_strict();
}

}  // namespace

// ---------------------------------------------------------------------------
// Shift selection and the ladder driver.

int select_shift(const std::vector<MetricsRecord>& candidates, bool finite_jump) {
  int best = -1;
  double best_v = kInf;
  for (int i = 0; i < static_cast<int>(candidates.size()); ++i) {
    const auto& c = candidates[static_cast<std::size_t>(i)];
    double v = c.l1 + c.lp_grad + c.d1 + c.d2;
    if (finite_jump) v += c.hn1_sym_diff;
    if (!std::isfinite(v)) continue;
    if (v < best_v) {
      best_v = v;
      best = i;
    }
  }
  if (best < 0) throw NumericError("shift selection: all candidates degenerate");
  return best;
}

std::vector<LevelResult> run_convergence(const SbvField& f, const LipschitzDomain& domain,
                                         const std::vector<double>& ladder,
                                         const PipelineOptions& opt) {
  std::vector<LevelResult> out;
  const Box2 region = domain.bbox();
  for (std::size_t lvl = 0; lvl < ladder.size(); ++lvl) {
    LevelResult lr;
    const double theta = opt.eps_ladder ? opt.eps_ladder_theta : ladder[lvl];
    lr.theta = theta;
    try {
      Rng rng(opt.seed * 0x9e3779b97f4a7c15ull + 0x2545f4914f6cdd1dull * (lvl + 1));
      ExtensionReport ext;
      const SbvField u = extend_field(f, domain, theta, opt.p, opt.g0, &ext);
      lr.extension_bulk = ext.bulk_increment;
      lr.extension_surface = ext.surface_increment;

      AnalysisOptions aopt = opt.analysis;
      aopt.domain = &domain;
      aopt.p = opt.p;
      aopt.g0 = opt.g0;
      const ScaleAnalysis sa = analyze_scale(u, region, theta, rng, aopt);
      lr.delta = sa.delta;
      lr.delta_inner = sa.delta_inner;
      lr.gamma = sa.gamma;

      std::vector<int> fitted;
      for (int i = 0; i < static_cast<int>(sa.frames.size()); ++i)
        if (sa.frames[static_cast<std::size_t>(i)].cls == CubeClass::Fitted) fitted.push_back(i);

      double eps = opt.eps_ladder ? ladder[lvl] : sa.delta / 4;
      Deformation def;
      std::vector<InterfacePL> pls;
      for (int halve = 0;; ++halve) {
        if (halve > 12 || eps < 1e-9)
          throw NumericError("deformation bound unattainable: eps underflow");
        pls.clear();
        Rng lrng(rng());
        for (int fi : fitted) pls.push_back(linearize_interface(sa, fi, eps, lrng));
        try {
          def = build_deformation(sa, pls, theta);
          break;
        } catch (const ReduceEpsSignal&) {
          if (opt.eps_ladder)
            throw NumericError("eps ladder level too coarse for the deformation bound");
          eps *= 0.5;
        }
      }
      lr.eps = eps;

      MetricsRecord base;
      base.theta = theta;
      base.eps = eps;
      base.delta = sa.delta;
      base.phi_sup = def.phi_sup;
      base.dphi_sup = def.dphi_sup;
      fill_u_side(base, u, region, opt);

      std::vector<Vec2> mcpts;
      {
        std::uniform_real_distribution<double> ux(region.lo.x(), region.hi.x());
        std::uniform_real_distribution<double> uy(region.lo.y(), region.hi.y());
        mcpts.reserve(static_cast<std::size_t>(opt.mc_samples));
        for (int i = 0; i < opt.mc_samples; ++i) mcpts.emplace_back(ux(rng), uy(rng));
      }
      const DeformationMap dmap = def.as_map();

      std::vector<std::pair<Vec2, MetricsRecord>> cands;
      std::vector<Approximant> apprs;
      for (int c = 0; c < opt.n_zeta; ++c) {
        for (int attempt = 0;; ++attempt) {
          const Vec2 zeta = sample_shift(eps, rng);
          try {
            Approximant w = assemble_approximant(u, sa, pls, eps, zeta);
            MetricsRecord mr = base;
            const auto mc = mc_bulk_metrics(w, u, region, opt.p, opt.psi, mcpts);
            mr.l1 = mc.l1;
            mr.lp_grad = mc.lp;
            if (opt.finite_jump) {
              const auto& faces = w.faces();
              const auto jc = jump_discrepancy(u, faces, eps, dmap, opt.g0, region, 2 * eps,
                                               2 * eps);
              mr.d1 = jc.d1;
              mr.d2 = jc.d2;
              mr.hn1_sym_diff = jc.sym_diff;
            }
            cands.emplace_back(zeta, mr);
            apprs.push_back(std::move(w));
            break;
          } catch (const DegenerateSliceError&) {
            if (attempt >= 7) throw;
          }
        }
      }
      std::vector<MetricsRecord> recs;
      recs.reserve(cands.size());
      for (const auto& [z, mr] : cands) recs.push_back(mr);
      const int sel = select_shift(recs, opt.finite_jump);
      lr.selected = sel;
      lr.zeta = cands[static_cast<std::size_t>(sel)].first;
      if (opt.keep_candidates) lr.candidates = cands;

      const Approximant& w = apprs[static_cast<std::size_t>(sel)];
      MetricsRecord mr = base;
      if (opt.finite_jump) {
        const StreamAccum acc = stream_bulk_metrics(*w.impl, u, opt.p, opt.psi);
        mr.l1 = acc.l1;
        mr.lp_grad = acc.lp;
        mr.bulk_w = acc.bulk;
        const auto& faces = w.faces();
        mr.surf_w = surface_energy(faces, opt.g, region);
        const double jv = surface_energy(
            faces, SurfaceDensity::cohesive(Modulus{Modulus::Kind::Power, 1.0}), region);
        mr.strict_w = acc.grad_l1 + jv;
        mr.area_strict_w = acc.area_int + jv;
        double len = 0, bl_surf = 0;
        for (const auto& jf : faces) {
          len += jf.length();
          const CubeFrame* fr = sa.frame_at(Vec2(0.5 * (jf.a + jf.b)));
          if (fr && fr->cls == CubeClass::BoundaryLayer)
            bl_surf += surface_energy({jf}, opt.g, region);
        }
        mr.jump_length_w = len;
        const auto jc = jump_discrepancy(u, faces, eps, dmap, opt.g0, region, 2 * eps, 2 * eps);
        mr.d1 = jc.d1;
        mr.d2 = jc.d2;
        mr.hn1_sym_diff = jc.sym_diff;
        lr.boundary_layer_bulk = acc.bl_bulk;
        lr.boundary_layer_surface = bl_surf;
      } else {
        const auto mc = mc_bulk_metrics(w, u, region, opt.p, opt.psi, mcpts);
        mr.l1 = mc.l1;
        mr.lp_grad = mc.lp;
        mr.bulk_w = mc.bulk;
        const FaceAgg agg = aggregate_faces(w, opt.g, region);
        mr.surf_w = agg.energy;
        mr.jump_length_w = agg.length;
        mr.strict_w = mc.grad_l1 + agg.jump_var;
        mr.area_strict_w = mc.area_int + agg.jump_var;
        lr.boundary_layer_surface = agg.bl_energy;
      }
      lr.metrics = mr;
    } catch (const ReduceEpsSignal& sig) {
      std::ostringstream os;
      os << "deformation bound violated: |D Phi - Id| = " << sig.dphi_sup;
      lr.error = os.str();
    } catch (const std::exception& e) {
      lr.error = e.what();
    }
    out.push_back(std::move(lr));
  }
  return out;
}

}  // namespace sbv
