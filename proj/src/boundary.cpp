#include "sbv/boundary.hpp"

#include <algorithm>
#include <cmath>
#include <memory>

namespace sbv {

// ---------------------------------------------------------------------------
// LipschitzDomain.

namespace {

bool proper_intersect(const Vec2& a, const Vec2& b, const Vec2& c, const Vec2& d) {
  auto orient = [](const Vec2& p, const Vec2& q, const Vec2& r) {
    const double v = (q - p).x() * (r - p).y() - (q - p).y() * (r - p).x();
    return v > 1e-14 ? 1 : (v < -1e-14 ? -1 : 0);
  };
  const int o1 = orient(a, b, c), o2 = orient(a, b, d);
  const int o3 = orient(c, d, a), o4 = orient(c, d, b);
  return o1 * o2 < 0 && o3 * o4 < 0;
}

double signed_area(const Polygon& p) {
  double a = 0;
  for (std::size_t i = 0; i < p.size(); ++i) {
    const Vec2& u = p[i];
    const Vec2& v = p[(i + 1) % p.size()];
    a += u.x() * v.y() - v.x() * u.y();
  }
  return 0.5 * a;
}

double dist_segments(const Vec2& a, const Vec2& b, const Vec2& c, const Vec2& d) {
  if (proper_intersect(a, b, c, d)) return 0;
  return std::min(std::min(dist_point_segment(c, a, b), dist_point_segment(d, a, b)),
                  std::min(dist_point_segment(a, c, d), dist_point_segment(b, c, d)));
}

}  // namespace

LipschitzDomain LipschitzDomain::from_polygon(Polygon poly) {
  const std::size_t n = poly.size();
  if (n < 3) throw GeometryError("domain: need at least 3 vertices");
  if (signed_area(poly) <= 0) throw GeometryError("domain: vertices must be counterclockwise");
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = i + 1; j < n; ++j) {
      if (j == i + 1 || (i == 0 && j == n - 1)) continue;  // adjacent edges share a vertex
      if (proper_intersect(poly[i], poly[(i + 1) % n], poly[j], poly[(j + 1) % n]))
        throw GeometryError("domain: polygon is self-intersecting");
    }

  LipschitzDomain d;
  d.vertices = std::move(poly);
  d.cum_length.assign(n + 1, 0.0);
  d.min_edge = std::numeric_limits<double>::infinity();
  for (std::size_t i = 0; i < n; ++i) {
    const double len = (d.vertices[(i + 1) % n] - d.vertices[i]).norm();
    if (len < 1e-12) throw GeometryError("domain: degenerate edge");
    d.min_edge = std::min(d.min_edge, len);
    d.cum_length[i + 1] = d.cum_length[i] + len;
  }
  d.perimeter = d.cum_length[n];
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = i; j < n; ++j)
      d.diam = std::max(d.diam, (d.vertices[i] - d.vertices[j]).norm());

  // Lipschitz slope from corner angles: each corner is a graph over the line
  // orthogonal to its angle bisector with slope |cot(beta/2)|.
  d.l0 = 0;
  for (std::size_t i = 0; i < n; ++i) {
    const Vec2 prev = d.vertices[(i + n - 1) % n];
    const Vec2 cur = d.vertices[i];
    const Vec2 next = d.vertices[(i + 1) % n];
    const Vec2 d1 = (cur - prev).normalized(), d2 = (next - cur).normalized();
    const double ext = std::atan2(d1.x() * d2.y() - d1.y() * d2.x(), d1.dot(d2));
    const double beta = M_PI - ext;  // interior angle in (0, 2 pi)
    d.l0 = std::max(d.l0, std::abs(std::cos(0.5 * beta) / std::sin(0.5 * beta)));
  }

  // Chart radius: half the clearance between non-adjacent edges.
  double clearance = d.min_edge;
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = i + 1; j < n; ++j) {
      if (j == i + 1 || (i == 0 && j == n - 1)) continue;
      clearance = std::min(clearance, dist_segments(d.vertices[i], d.vertices[(i + 1) % n],
                                                    d.vertices[j], d.vertices[(j + 1) % n]));
    }
  d.eps0 = 0.5 * clearance;
  return d;
}

double LipschitzDomain::boundary_distance(const Vec2& x) const {
  double best = std::numeric_limits<double>::infinity();
  const std::size_t n = vertices.size();
  for (std::size_t i = 0; i < n; ++i)
    best = std::min(best, dist_point_segment(x, vertices[i], vertices[(i + 1) % n]));
  return best;
}

double LipschitzDomain::signed_distance(const Vec2& x) const {
  return contains(x) ? -boundary_distance(x) : boundary_distance(x);
}

Box2 LipschitzDomain::bbox() const {
  Box2 b;
  b.lo = b.hi = vertices[0];
  for (const auto& v : vertices) {
    b.lo = b.lo.cwiseMin(v);
    b.hi = b.hi.cwiseMax(v);
  }
  return b;
}

Vec2 LipschitzDomain::boundary_point(double s) const {
  s = std::fmod(s, perimeter);
  if (s < 0) s += perimeter;
  const auto it = std::upper_bound(cum_length.begin(), cum_length.end(), s);
  std::size_t i = static_cast<std::size_t>(std::max<std::ptrdiff_t>(
      0, std::distance(cum_length.begin(), it) - 1));
  if (i >= vertices.size()) i = vertices.size() - 1;
  const Vec2 a = vertices[i];
  const Vec2 b = vertices[(i + 1) % vertices.size()];
  const double len = cum_length[i + 1] - cum_length[i];
  return a + ((s - cum_length[i]) / len) * (b - a);
}

Vec2 LipschitzDomain::edge_tangent(double s) const {
  s = std::fmod(s, perimeter);
  if (s < 0) s += perimeter;
  const auto it = std::upper_bound(cum_length.begin(), cum_length.end(), s);
  std::size_t i = static_cast<std::size_t>(std::max<std::ptrdiff_t>(
      0, std::distance(cum_length.begin(), it) - 1));
  if (i >= vertices.size()) i = vertices.size() - 1;
  return (vertices[(i + 1) % vertices.size()] - vertices[i]).normalized();
}

Vec2 LipschitzDomain::edge_normal(double s) const {
  const Vec2 t = edge_tangent(s);
  return Vec2(t.y(), -t.x());  // outward for a counterclockwise polygon
}

double LipschitzDomain::project_arclength(const Vec2& x) const {
  double best = std::numeric_limits<double>::infinity();
  double best_s = 0;
  const std::size_t n = vertices.size();
  for (std::size_t i = 0; i < n; ++i) {
    const Vec2 a = vertices[i], b = vertices[(i + 1) % n];
    const Vec2 d = b - a;
    const double l2 = d.squaredNorm();
    const double t = std::clamp(d.dot(x - a) / l2, 0.0, 1.0);
    const double dist = (x - (a + t * d)).norm();
    if (dist < best) {
      best = dist;
      best_s = cum_length[i] + t * std::sqrt(l2);
    }
  }
  return best_s;
}

// ---------------------------------------------------------------------------
// Pseudo-normal field.

namespace {

double smootherstep(double t) {
  t = std::clamp(t, 0.0, 1.0);
  return t * t * t * (t * (6 * t - 15) + 10);
}

// 1 for s <= 1/2, 0 for s >= 1, C^2 in between.
double cutoff(double s) { return smootherstep(2.0 * (1.0 - s)); }

}  // namespace

PseudoNormal build_pseudo_normal(const LipschitzDomain& d, double mollify_radius) {
  if (!(mollify_radius > 0) || mollify_radius >= 0.5 * d.min_edge)
    throw std::invalid_argument("pseudo-normal: radius must be in (0, min_edge / 2)");

  const std::size_t n = d.vertices.size();
  std::vector<Vec2> normals(n);
  for (std::size_t i = 0; i < n; ++i) {
    const Vec2 e = d.vertices[(i + 1) % n] - d.vertices[i];
    normals[i] = Vec2(e.y(), -e.x()).normalized();
  }

  const double gstar = 1.0 / std::sqrt(1.0 + d.l0 * d.l0);
  const double a2 = 0.25 * gstar * gstar;  // (gamma*/2)^2
  const Polygon verts = d.vertices;
  const double r = mollify_radius;

  auto psi = [verts, normals, r, a2](const Vec2& x) {
    Vec2 acc(0, 0);
    const std::size_t k = verts.size();
    for (std::size_t i = 0; i < k; ++i) {
      const double dist = dist_point_segment(x, verts[i], verts[(i + 1) % k]);
      if (dist < r) acc += cutoff(dist / r) * normals[i];
    }
    const double s2 = acc.squaredNorm();
    // smooth lower-bounded normalization; vanishes where psi* is tiny
    const double phi = a2 * smootherstep((a2 - s2) / a2);
    const double denom = std::sqrt(s2 + phi);
    if (denom < 1e-14) return Vec2(0, 0);
    return Vec2(acc / denom);
  };

  PseudoNormal pn;
  pn.psi = psi;
  pn.mollify_radius = mollify_radius;

  double gamma = std::numeric_limits<double>::infinity();
  for (int i = 0; i < 1000; ++i) {
    const double s = (i + 0.37) * d.perimeter / 1000;
    const Vec2 x = d.boundary_point(s);
    const Vec2 p = psi(x);
    if (std::abs(p.norm() - 1.0) > 1e-8)
      throw NumericError("pseudo-normal: |psi| != 1 on the boundary");
    gamma = std::min(gamma, p.dot(d.edge_normal(s)));
  }
  if (gamma <= 0)
    throw NumericError("pseudo-normal: measured gamma <= 0, mollify radius too large");
  pn.gamma = gamma;

  double c1 = 0;
  const double h = 1e-6 * std::max(1.0, d.diam);
  for (int i = 0; i < 200; ++i) {
    const double s = (i + 0.61) * d.perimeter / 200;
    for (double off : {-0.4 * r, 0.0, 0.4 * r}) {
      const Vec2 x = d.boundary_point(s) + off * d.edge_normal(s);
      const Vec2 p = psi(x);
      const Vec2 dx = (psi(Vec2(x + Vec2(h, 0))) - psi(Vec2(x - Vec2(h, 0)))) / (2 * h);
      const Vec2 dy = (psi(Vec2(x + Vec2(0, h))) - psi(Vec2(x - Vec2(0, h)))) / (2 * h);
      c1 = std::max(c1, p.norm() + std::sqrt(dx.squaredNorm() + dy.squaredNorm()));
    }
  }
  pn.c1_norm = c1;
  return pn;
}

// ---------------------------------------------------------------------------
// Collar reflection.

CollarReflection::CollarReflection(LipschitzDomain d, PseudoNormal pn, double width)
    : domain_(std::move(d)), pn_(std::move(pn)), width_(width) {}

std::pair<double, double> CollarReflection::invert(const Vec2& y) const {
  const double tol = 1e-10 * std::max(1.0, domain_.diam);
  double s = domain_.project_arclength(y);
  double t = 0;

  auto residual = [&](double s_, double& t_) {
    const Vec2 x = domain_.boundary_point(s_);
    const Vec2 p = pn_.psi(x);
    t_ = p.dot(y - x);
    return Vec2(y - x - t_ * p);
  };

  // Projected fixed point: slide the foot point along the boundary tangent.
  for (int it = 0; it < 80; ++it) {
    const Vec2 r = residual(s, t);
    if (r.norm() < 0.01 * tol) break;
    if (std::abs(t) > 3 * width_ + 1e-12) break;  // clearly not in the collar
    double ds = r.dot(domain_.edge_tangent(s));
    ds = std::clamp(ds, -0.5 * domain_.min_edge, 0.5 * domain_.min_edge);
    s += ds;
  }
  {
    const Vec2 r = residual(s, t);
    if (r.norm() <= tol && std::abs(t) <= 1.5 * width_) return {s, t};
  }

  // Fallback: scan + golden-section on the tangential residual norm.
  const double s0 = domain_.project_arclength(y);
  const double window =
      3 * width_ * (1 + domain_.l0) + 0.5 * domain_.min_edge;
  auto g = [&](double s_) {
    double t_;
    return residual(s_, t_).norm();
  };
  double best_s = s0, best_v = g(s0);
  constexpr int kScan = 400;
  for (int i = -kScan; i <= kScan; ++i) {
    const double cand = s0 + window * i / kScan;
    const double v = g(cand);
    if (v < best_v) {
      best_v = v;
      best_s = cand;
    }
  }
  double lo = best_s - window / kScan, hi = best_s + window / kScan;
  const double gr = 0.5 * (std::sqrt(5.0) - 1);
  double c = hi - gr * (hi - lo), dpt = lo + gr * (hi - lo);
  double fc = g(c), fd = g(dpt);
  for (int it = 0; it < 120; ++it) {
    if (fc < fd) {
      hi = dpt;
      dpt = c;
      fd = fc;
      c = hi - gr * (hi - lo);
      fc = g(c);
    } else {
      lo = c;
      c = dpt;
      fc = fd;
      dpt = lo + gr * (hi - lo);
      fd = g(dpt);
    }
  }
  s = 0.5 * (lo + hi);
  const Vec2 r = residual(s, t);
  if (r.norm() > tol)
    throw NumericError("collar inversion failed: residual " + std::to_string(r.norm()));
  if (std::abs(t) > 1.5 * width_) throw NumericError("collar inversion: point outside collar");
  return {s, t};
}

bool CollarReflection::in_collar(const Vec2& y) const {
  if (domain_.boundary_distance(y) > width_) return false;
  try {
    const auto [s, t] = invert(y);
    (void)s;
    return std::abs(t) < width_;
  } catch (const NumericError&) {
    return false;
  }
}

Vec2 CollarReflection::reflect(const Vec2& y) const {
  const auto [s, t] = invert(y);
  return forward(s, -t);
}

namespace {

bool validate_collar(const LipschitzDomain& d, const CollarReflection& c, double l_target,
                     std::string& last_error) {
  const double w = c.width();
  try {
    // Validation samples: uniform plus clusters around each corner, where the
    // inversion branches can collide when the width is too large.
    std::vector<double> svals;
    for (int i = 0; i < 100; ++i) svals.push_back((i + 0.43) * d.perimeter / 100);
    for (std::size_t v = 0; v < d.vertices.size(); ++v)
      for (int i = -10; i <= 10; ++i)
        svals.push_back(d.cum_length[v] + i * 0.3 * w);
    for (double s : svals) {
      const Vec2 bx = d.boundary_point(s);
      if ((c.reflect(bx) - bx).norm() > 1e-9) {
        last_error = "boundary fixed point";
        return false;
      }
      for (double frac : {-0.95, -0.5, -0.25, 0.25, 0.5, 0.95}) {
        const Vec2 y = c.forward(s, frac * w);
        const auto [s2, t2] = c.invert(y);
        if ((c.forward(s2, t2) - y).norm() > 1e-9 * std::max(1.0, d.diam)) {
          last_error = "inversion residual";
          return false;
        }
        const Vec2 z = c.reflect(y);
        if ((c.reflect(z) - y).norm() > 2e-9 * d.diam) {
          last_error = "involution";
          return false;
        }
        if (d.signed_distance(y) * d.signed_distance(z) >= 0) {
          last_error = "side swap";
          return false;
        }
      }
    }
    // Sampled bilipschitz ratio against the declared target.
    Rng rng(987);
    std::uniform_real_distribution<double> us(0, d.perimeter);
    std::uniform_real_distribution<double> ut(-0.9, 0.9);
    std::uniform_real_distribution<double> ua(0, 2 * M_PI);
    for (int i = 0; i < 400; ++i) {
      const Vec2 y = c.forward(us(rng), ut(rng) * w);
      const double ang = ua(rng);
      const Vec2 y2 = y + 1e-3 * w * Vec2(std::cos(ang), std::sin(ang));
      if (!c.in_collar(y) || !c.in_collar(y2)) continue;
      const double ratio = (c.reflect(y) - c.reflect(y2)).norm() / (y - y2).norm();
      if (ratio > 0.97 * l_target || ratio < 1 / (0.97 * l_target)) {
        last_error = "bilipschitz ratio " + std::to_string(ratio);
        return false;
      }
    }
  } catch (const NumericError& e) {
    last_error = e.what();
    return false;
  }
  return true;
}

}  // namespace

CollarReflection build_collar(const LipschitzDomain& d, const PseudoNormal& pn, double safety) {
  double w = std::min(d.eps0 / (1 + d.l0), safety * d.min_edge) / 4;
  // injectivity bound of the collar map: eps <= gamma^2 / (8 (1+L) |psi|_C1)
  const double inj =
      pn.gamma * pn.gamma / (8 * (1 + d.l0) * std::max(pn.c1_norm, 1e-6));
  w = std::min(w, inj);
  const double min_w = 1e-5 * d.diam;
  std::string last_error = "unknown";
  while (w >= min_w) {
    CollarReflection c(d, pn, w);
    if (validate_collar(d, c, 3.0, last_error)) return c;
    w *= 0.5;
  }
  throw NumericError("collar construction failed at minimum width: " + last_error);
}

// ---------------------------------------------------------------------------
// Field extension.

namespace {

// Uniform Catmull-Rom fit through samples of a parametric curve.
struct CubicFit {
  double tau0 = 0, tau1 = 1;
  std::vector<Vec2> nodes;

  Vec2 node_tangent(std::size_t i) const {
    const std::size_t n = nodes.size();
    if (i == 0) return nodes[1] - nodes[0];
    if (i + 1 == n) return nodes[n - 1] - nodes[n - 2];
    return 0.5 * (nodes[i + 1] - nodes[i - 1]);
  }

  Vec2 eval(double tau) const {
    const std::size_t n = nodes.size();
    const double u = std::clamp((tau - tau0) / (tau1 - tau0), 0.0, 1.0) * (n - 1);
    std::size_t i = std::min(static_cast<std::size_t>(u), n - 2);
    const double t = u - i;
    const double h00 = (1 + 2 * t) * (1 - t) * (1 - t);
    const double h10 = t * (1 - t) * (1 - t);
    const double h01 = t * t * (3 - 2 * t);
    const double h11 = t * t * (t - 1);
    return h00 * nodes[i] + h10 * node_tangent(i) + h01 * nodes[i + 1] +
           h11 * node_tangent(i + 1);
  }

  Vec2 tangent(double tau) const {
    const std::size_t n = nodes.size();
    const double u = std::clamp((tau - tau0) / (tau1 - tau0), 0.0, 1.0) * (n - 1);
    std::size_t i = std::min(static_cast<std::size_t>(u), n - 2);
    const double t = u - i;
    const double d00 = 6 * t * t - 6 * t;
    const double d10 = 3 * t * t - 4 * t + 1;
    const double d01 = -6 * t * t + 6 * t;
    const double d11 = 3 * t * t - 2 * t;
    return d00 * nodes[i] + d10 * node_tangent(i) + d01 * nodes[i + 1] +
           d11 * node_tangent(i + 1);
  }

  double polyline_integral(const std::function<double(double)>& density) const {
    double total = 0;
    const int k = 128;
    for (int i = 0; i < k; ++i) {
      const double ta = tau0 + (tau1 - tau0) * i / k;
      const double tb = tau0 + (tau1 - tau0) * (i + 1) / k;
      total += density(0.5 * (ta + tb)) * (eval(tb) - eval(ta)).norm();
    }
    return total;
  }
};

// Maximal parameter runs of the curve where pred holds, boundaries refined by
// bisection.
std::vector<std::pair<double, double>> predicate_runs(
    double tau0, double tau1, const std::function<bool(double)>& pred) {
  // Dense enough to catch the short runs where an interface dips into the
  // extension band (a fraction ~ band width / curve length of the range).
  constexpr int kScan = 8192;
  auto refine = [&](double lo, double hi) {
    for (int it = 0; it < 40; ++it) {
      const double mid = 0.5 * (lo + hi);
      if (pred(mid) == pred(lo))
        lo = mid;
      else
        hi = mid;
    }
    return 0.5 * (lo + hi);
  };
  std::vector<std::pair<double, double>> out;
  bool open = pred(tau0);
  double open_at = tau0, prev = tau0;
  for (int i = 1; i <= kScan; ++i) {
    const double tau = tau0 + (tau1 - tau0) * i / kScan;
    if (pred(tau) != open) {
      const double c = refine(prev, tau);
      if (open)
        out.emplace_back(open_at, c);
      else
        open_at = c;
      open = !open;
    }
    prev = tau;
  }
  if (open) out.emplace_back(open_at, tau1);
  return out;
}

// Scan-and-bisect segment crossings from a signed side function; tau is
// recovered by nearest-point projection onto the fitted curve, and roots
// farther than curve_tol from the fit are discarded (they belong to another
// branch of the shared side function).
std::vector<std::pair<double, double>> side_crossings(
    const std::function<double(const Vec2&)>& side, const std::shared_ptr<CubicFit>& fit,
    double curve_tol, const Vec2& a, const Vec2& b) {
  std::vector<std::pair<double, double>> out;
  const Vec2 d = b - a;
  auto v = [&](double t) { return side(Vec2(a + t * d)); };
  constexpr int kScan = 128;
  double prev_t = 0, prev_v = v(0);
  for (int i = 1; i <= kScan; ++i) {
    const double t = static_cast<double>(i) / kScan;
    const double val = v(t);
    if ((prev_v < 0 && val >= 0) || (prev_v >= 0 && val < 0)) {
      double lo = prev_t, hi = t, flo = prev_v;
      for (int it = 0; it < 80; ++it) {
        const double mid = 0.5 * (lo + hi);
        const double fm = v(mid);
        if ((flo < 0) == (fm < 0)) {
          lo = mid;
          flo = fm;
        } else {
          hi = mid;
        }
      }
      const double t_root = 0.5 * (lo + hi);
      const Vec2 pt = a + t_root * d;
      // nearest parameter on the fitted curve
      double best_tau = fit->tau0, best = std::numeric_limits<double>::infinity();
      constexpr int kTau = 256;
      for (int k = 0; k <= kTau; ++k) {
        const double tau = fit->tau0 + (fit->tau1 - fit->tau0) * k / kTau;
        const double dist = (fit->eval(tau) - pt).norm();
        if (dist < best) {
          best = dist;
          best_tau = tau;
        }
      }
      if (best <= curve_tol) out.emplace_back(t_root, best_tau);
    }
    prev_t = t;
    prev_v = val;
  }
  return out;
}

// The closed curve at constant distance r outside a convex polygon: edge
// translates joined by circular corner arcs, stored as a dense polyline with
// outward normals and arclength parametrized to [0, 1].
struct OffsetCurve {
  std::vector<Vec2> pts;
  std::vector<Vec2> nrm;
  std::vector<double> cum;
  double total = 0;

  static OffsetCurve build(const Polygon& poly, double r) {
    OffsetCurve c;
    const std::size_t nv = poly.size();
    auto push = [&](const Vec2& p, const Vec2& n) {
      if (!c.pts.empty() && (p - c.pts.back()).norm() < 1e-14) return;
      c.pts.push_back(p);
      c.nrm.push_back(n);
    };
    for (std::size_t i = 0; i < nv; ++i) {
      const Vec2& a = poly[i];
      const Vec2& b = poly[(i + 1) % nv];
      const Vec2& nx = poly[(i + 2) % nv];
      const Vec2 e = (b - a).normalized();
      const Vec2 n(e.y(), -e.x());  // outward for a counterclockwise polygon
      push(Vec2(a + r * n), n);
      push(Vec2(b + r * n), n);
      const Vec2 e2 = (nx - b).normalized();
      const Vec2 n2(e2.y(), -e2.x());
      const double ang = std::atan2(n.x() * n2.y() - n.y() * n2.x(), n.dot(n2));
      if (ang > 1e-12) {  // convex corner: arc from n to n2 around b
        const double a0 = std::atan2(n.y(), n.x());
        const int steps = std::max(2, static_cast<int>(std::ceil(ang / 0.05)));
        for (int k = 1; k < steps; ++k) {
          const double aa = a0 + ang * k / steps;
          const Vec2 nn(std::cos(aa), std::sin(aa));
          push(Vec2(b + r * nn), nn);
        }
      }
    }
    c.pts.push_back(c.pts.front());
    c.nrm.push_back(c.nrm.front());
    c.cum.resize(c.pts.size(), 0.0);
    for (std::size_t i = 1; i < c.pts.size(); ++i)
      c.cum[i] = c.cum[i - 1] + (c.pts[i] - c.pts[i - 1]).norm();
    c.total = c.cum.back();
    return c;
  }

  std::size_t segment(double s, double& local) const {
    s = std::clamp(s, 0.0, total);
    const auto it = std::upper_bound(cum.begin(), cum.end(), s);
    const std::size_t i =
        std::min(pts.size() - 2, static_cast<std::size_t>(std::max<std::ptrdiff_t>(
                                     0, std::distance(cum.begin(), it) - 1)));
    const double len = cum[i + 1] - cum[i];
    local = len > 0 ? (s - cum[i]) / len : 0.0;
    return i;
  }

  Vec2 at(double tau) const {
    double l;
    const std::size_t i = segment(tau * total, l);
    return Vec2((1 - l) * pts[i] + l * pts[i + 1]);
  }

  Vec2 normal_at(double tau) const {
    double l;
    const std::size_t i = segment(tau * total, l);
    return Vec2(((1 - l) * nrm[i] + l * nrm[i + 1]).normalized());
  }

  double project(const Vec2& x) const {
    double best = std::numeric_limits<double>::infinity(), best_s = 0;
    for (std::size_t i = 0; i + 1 < pts.size(); ++i) {
      const Vec2 dseg = pts[i + 1] - pts[i];
      const double l2 = dseg.squaredNorm();
      const double t = l2 > 0 ? std::clamp((x - pts[i]).dot(dseg) / l2, 0.0, 1.0) : 0.0;
      const double dist = (x - (pts[i] + t * dseg)).norm();
      if (dist < best) {
        best = dist;
        best_s = cum[i] + t * (cum[i + 1] - cum[i]);
      }
    }
    return best_s / total;
  }
};

}  // namespace

SbvField extend_field(const SbvField& u, const LipschitzDomain& d, double theta, double p,
                      const Modulus& g0, ExtensionReport* report) {
  const auto dd = std::make_shared<const LipschitzDomain>(d);
  const auto pn = std::make_shared<const PseudoNormal>(
      build_pseudo_normal(d, 0.45 * d.min_edge));

  // Original interfaces clipped to the runs inside Omega (their analytic side
  // functions usually extend past the domain, where U carries no such jump).
  std::vector<Interface> clipped;
  for (const auto& itf : u.interfaces) {
    auto inside = [&](double tau) { return dd->contains(itf.gamma(tau)); };
    for (const auto& [a, b] : predicate_runs(itf.tau0, itf.tau1, inside)) {
      if (b - a < 1e-9 * (itf.tau1 - itf.tau0)) continue;
      Interface t = itf;
      t.tau0 = a;
      t.tau1 = b;
      auto cross = itf.segment_crossings;
      t.segment_crossings = [cross, a, b](const Vec2& sa, const Vec2& sb) {
        auto all = cross(sa, sb);
        std::vector<std::pair<double, double>> keep;
        for (const auto& c : all)
          if (c.second >= a - 1e-12 && c.second <= b + 1e-12) keep.push_back(c);
        return keep;
      };
      clipped.push_back(std::move(t));
    }
  }

  const CollarReflection base = build_collar(d, *pn);
  double w = base.width();
  const double min_w = 1e-5 * d.diam;
  int halvings = 0;

  while (true) {
    const auto cr = std::make_shared<const CollarReflection>(d, *pn, w);
    // The extension band: U is u-reflected within distance wb of the
    // boundary and zero beyond. Strictly inside the collar so the inversion
    // stays on its validated range.
    const double wb = 0.6 * w;

    auto outer_t = [cr](const Vec2& y, double& t) {
      try {
        t = cr->invert(y).second;
        return t > 1e-13 && t < cr->width();
      } catch (const NumericError&) {
        return false;
      }
    };

    const int m = u.m;
    auto ueval = u.eval;
    auto ugrad = u.grad;
    auto eval = [dd, cr, ueval, m, wb](const Vec2& y) {
      if (dd->contains(y)) return ueval(y);
      if (dd->boundary_distance(y) < wb) {
        try {
          const auto [s, t] = cr->invert(y);
          if (t > -1e-13 && t < cr->width()) return ueval(cr->forward(s, -t));
        } catch (const NumericError&) {
        }
      }
      return VecM(VecM::Zero(m));
    };
    const double hfd = 1e-4 * w;
    auto dphi = [cr, hfd](const Vec2& y) {
      Mat2 j;
      j.col(0) = (cr->reflect(Vec2(y + Vec2(hfd, 0))) - cr->reflect(Vec2(y - Vec2(hfd, 0)))) /
                 (2 * hfd);
      j.col(1) = (cr->reflect(Vec2(y + Vec2(0, hfd))) - cr->reflect(Vec2(y - Vec2(0, hfd)))) /
                 (2 * hfd);
      return j;
    };
    auto grad = [dd, cr, ugrad, dphi, m, outer_t, wb](const Vec2& y) {
      if (dd->contains(y)) return ugrad(y);
      double t;
      if (dd->boundary_distance(y) < wb && outer_t(y, t))
        return MatM2(ugrad(cr->reflect(y)) * dphi(y));
      return MatM2(MatM2::Zero(m, 2));
    };

    // Reflected interface images for the parts of J_u in the inner collar.
    std::vector<Interface> reflected;
    for (const auto& itf : u.interfaces) {
      auto in_inner_collar = [&](double tau) {
        const Vec2 x = itf.gamma(tau);
        if (!dd->contains(x)) return false;
        if (dd->boundary_distance(x) >= wb) return false;
        try {
          const auto [s, t] = cr->invert(x);
          (void)s;
          return t < -1e-12 && t > -wb;
        } catch (const NumericError&) {
          return false;
        }
      };
      for (const auto& [a, b] : predicate_runs(itf.tau0, itf.tau1, in_inner_collar)) {
        if (b - a < 1e-7 * (itf.tau1 - itf.tau0)) continue;
        auto fit = std::make_shared<CubicFit>();
        fit->tau0 = a;
        fit->tau1 = b;
        const int k = 33;
        fit->nodes.resize(k);
        bool fit_ok = true;
        for (int i = 0; i < k; ++i) {
          const double tau = a + (b - a) * i / (k - 1);
          try {
            fit->nodes[static_cast<std::size_t>(i)] = cr->reflect(itf.gamma(tau));
          } catch (const NumericError&) {
            fit_ok = false;
            break;
          }
        }
        if (!fit_ok) continue;

        Interface r;
        r.tau0 = a;
        r.tau1 = b;
        r.gamma = [fit](double tau) { return fit->eval(tau); };
        r.jump = itf.jump;  // amplitude transported unchanged
        r.tube_width = std::min(0.5 * w, itf.tube_width);

        auto oside = itf.side;
        auto side = [dd, cr, oside, w](const Vec2& y) {
          if (dd->contains(y)) return oside(y);
          if (dd->boundary_distance(y) < 1.4 * w) {
            try {
              return oside(cr->reflect(y));
            } catch (const NumericError&) {
            }
          }
          return oside(y);  // beyond the collar: analytic continuation
        };
        r.side = side;

        // Orientation: the reflection fixes the boundary pointwise, so the
        // plus side is preserved; keep a probe as a safety net.
        double sigma = 1;
        {
          const double tm = 0.5 * (a + b);
          const Vec2 tan = fit->tangent(tm).normalized();
          const Vec2 n(-tan.y(), tan.x());
          const double h = 0.1 * std::min(w, itf.tube_width);
          const double sv = side(Vec2(fit->eval(tm) + h * n));
          if (sv < 0) sigma = -1;
        }
        r.normal = [fit, sigma](double tau) {
          const Vec2 tan = fit->tangent(tau).normalized();
          return Vec2(sigma * Vec2(-tan.y(), tan.x()));
        };

        auto oplus = itf.eval_plus;
        auto ominus = itf.eval_minus;
        r.eval_plus = [dd, cr, oplus](const Vec2& y) {
          return oplus(dd->contains(y) ? y : cr->reflect(y));
        };
        r.eval_minus = [dd, cr, ominus](const Vec2& y) {
          return ominus(dd->contains(y) ? y : cr->reflect(y));
        };
        if (itf.grad_plus) {
          auto ogp = itf.grad_plus;
          r.grad_plus = [dd, cr, ogp, dphi](const Vec2& y) {
            if (dd->contains(y)) return ogp(y);
            return MatM2(ogp(cr->reflect(y)) * dphi(y));
          };
        }
        if (itf.grad_minus) {
          auto ogm = itf.grad_minus;
          r.grad_minus = [dd, cr, ogm, dphi](const Vec2& y) {
            if (dd->contains(y)) return ogm(y);
            return MatM2(ogm(cr->reflect(y)) * dphi(y));
          };
        }
        const double curve_tol = 0.1 * w;
        r.segment_crossings = [side, fit, dd, curve_tol, wb](const Vec2& sa, const Vec2& sb) {
          auto all = side_crossings(side, fit, curve_tol, sa, sb);
          std::vector<std::pair<double, double>> keep;
          for (const auto& c : all) {
            const Vec2 pt = sa + c.first * (sb - sa);
            // Inside the domain the original interface carries the jump, and
            // beyond the extension band U vanishes on both sides; the
            // reflected jump only lives on the band in between.
            if (!dd->contains(pt) && dd->boundary_distance(pt) < wb) keep.push_back(c);
          }
          return keep;
        };
        reflected.push_back(std::move(r));
      }
    }

    // Budget: bulk and surface increments over the outer collar.
    double bulk = 0;
    {
      const double step = w / 3;
      const Box2 bb = dd->bbox().inflated(w);
      const int nx = static_cast<int>(std::ceil((bb.hi.x() - bb.lo.x()) / step));
      const int ny = static_cast<int>(std::ceil((bb.hi.y() - bb.lo.y()) / step));
      for (int i = 0; i < nx; ++i)
        for (int j = 0; j < ny; ++j) {
          const Vec2 c(bb.lo.x() + (i + 0.5) * step, bb.lo.y() + (j + 0.5) * step);
          if (dd->contains(c) || dd->boundary_distance(c) >= wb) continue;
          double t;
          if (!outer_t(c, t)) continue;
          bulk += std::pow(grad(c).norm(), p) * step * step;
        }
    }
    double surf = 0;
    for (const auto& r : reflected) {
      CubicFit f2;
      f2.tau0 = r.tau0;
      f2.tau1 = r.tau1;
      f2.nodes.resize(33);
      for (int i = 0; i < 33; ++i)
        f2.nodes[static_cast<std::size_t>(i)] =
            r.gamma(r.tau0 + (r.tau1 - r.tau0) * i / 32.0);
      surf += f2.polyline_integral([&](double tau) { return g0(r.jump(tau).norm()); });
    }

    if (bulk <= theta && surf <= theta) {
      if (report) {
        report->width = w;
        report->bulk_increment = bulk;
        report->surface_increment = surf;
        report->halvings = halvings;
      }
      // The extension drops to zero across the offset curve at distance wb
      // from the boundary; that cutoff is part of the jump set of U, so it
      // is declared as an interface with the exact signed-distance side
      // function (projection slicing then reproduces the cutoff).
      Interface cut;
      {
        const auto curve = std::make_shared<const OffsetCurve>(
            OffsetCurve::build(dd->vertices, wb));
        cut.tau0 = 0;
        cut.tau1 = 1;
        cut.gamma = [curve](double tau) { return curve->at(tau); };
        cut.normal = [curve](double tau) { return curve->normal_at(tau); };
        cut.tube_width = 0.9 * wb;
        auto side = [dd, wb](const Vec2& y) {
          const double bd = dd->boundary_distance(y);
          return (dd->contains(y) ? -bd : bd) - wb;  // > 0 beyond the band
        };
        cut.side = side;
        const double h = 0.05 * wb;
        cut.jump = [curve, eval, h](double tau) {
          // plus side (outside) is zero: [U] = 0 - inner trace
          return VecM(-eval(Vec2(curve->at(tau) - h * curve->normal_at(tau))));
        };
        cut.eval_plus = [m](const Vec2&) { return VecM(VecM::Zero(m)); };
        cut.eval_minus = [curve, eval, side, h](const Vec2& y) {
          const double s = side(y);
          if (s <= 0) return eval(y);
          return eval(Vec2(y - (s + h) * curve->normal_at(curve->project(y))));
        };
        cut.segment_crossings = [curve, side](const Vec2& sa, const Vec2& sb) {
          std::vector<std::pair<double, double>> out_c;
          const Vec2 dseg = sb - sa;
          auto v = [&](double t) { return side(Vec2(sa + t * dseg)); };
          constexpr int kScan = 128;
          double prev_t = 0, prev_v = v(0);
          for (int i = 1; i <= kScan; ++i) {
            const double t = static_cast<double>(i) / kScan;
            const double val = v(t);
            if ((prev_v < 0 && val >= 0) || (prev_v >= 0 && val < 0)) {
              double lo = prev_t, hi = t, flo = prev_v;
              for (int it = 0; it < 80; ++it) {
                const double mid = 0.5 * (lo + hi);
                const double fm = v(mid);
                if ((flo < 0) == (fm < 0)) {
                  lo = mid;
                  flo = fm;
                } else {
                  hi = mid;
                }
              }
              const double t_root = 0.5 * (lo + hi);
              out_c.emplace_back(t_root, curve->project(Vec2(sa + t_root * dseg)));
            }
            prev_t = t;
            prev_v = val;
          }
          return out_c;
        };
      }

      SbvField out;
      out.m = u.m;
      out.eval = eval;
      out.grad = grad;
      out.interfaces = clipped;
      out.interfaces.insert(out.interfaces.end(), reflected.begin(), reflected.end());
      out.interfaces.push_back(std::move(cut));
      out.domain = dd->bbox().inflated(w);
      return out;
    }
    if (0.5 * w < min_w)
      throw NumericError("extension: theta budget unreachable, bulk " + std::to_string(bulk) +
                         " surface " + std::to_string(surf));
    w *= 0.5;
    ++halvings;
  }
}

}  // namespace sbv
