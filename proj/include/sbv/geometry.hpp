#pragma once

#include <Eigen/Dense>

#include <array>
#include <cmath>
#include <cstdint>
#include <functional>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

namespace sbv {

template <int N>
using Vec = Eigen::Matrix<double, N, 1>;
using Vec2 = Vec<2>;
using Vec3 = Vec<3>;
using Mat2 = Eigen::Matrix<double, 2, 2>;

// Small codomain vectors (m <= 4) kept on the stack.
using VecM = Eigen::Matrix<double, Eigen::Dynamic, 1, 0, 4, 1>;
// Gradient of an R^m-valued function of two variables.
using MatM2 = Eigen::Matrix<double, Eigen::Dynamic, 2, 0, 4, 2>;

using Rng = std::mt19937_64;

struct GeometryError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct DegenerateSliceError : std::runtime_error {
  Vec2 a{0, 0}, b{0, 0};
  explicit DegenerateSliceError(const std::string& msg) : std::runtime_error(msg) {}
  DegenerateSliceError(const std::string& msg, const Vec2& a_, const Vec2& b_)
      : std::runtime_error(msg), a(a_), b(b_) {}
};

struct NumericError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

template <int N>
struct Box {
  Vec<N> lo, hi;

  bool contains(const Vec<N>& x, double tol = 0.0) const {
    for (int i = 0; i < N; ++i)
      if (x[i] < lo[i] - tol || x[i] > hi[i] + tol) return false;
    return true;
  }
  Box inflated(double r) const {
    Box b = *this;
    b.lo.array() -= r;
    b.hi.array() += r;
    return b;
  }
  double volume() const { return (hi - lo).prod(); }
  Vec<N> center() const { return 0.5 * (lo + hi); }
};

using Box2 = Box<2>;

// ---------------------------------------------------------------------------
// Planar polygon utilities (vertices in order, closed implicitly).

using Polygon = std::vector<Vec2>;

inline double polygon_area(const Polygon& p) {
  double a = 0;
  const std::size_t n = p.size();
  for (std::size_t i = 0; i < n; ++i) {
    const Vec2& u = p[i];
    const Vec2& v = p[(i + 1) % n];
    a += u.x() * v.y() - v.x() * u.y();
  }
  return 0.5 * std::abs(a);
}

// Keeps the part of `poly` with n.dot(x - p) <= 0.
inline Polygon clip_halfplane(const Polygon& poly, const Vec2& p, const Vec2& n) {
  Polygon out;
  const std::size_t k = poly.size();
  if (k == 0) return out;
  out.reserve(k + 2);
  for (std::size_t i = 0; i < k; ++i) {
    const Vec2& a = poly[i];
    const Vec2& b = poly[(i + 1) % k];
    const double da = n.dot(a - p);
    const double db = n.dot(b - p);
    if (da <= 0) out.push_back(a);
    if ((da < 0 && db > 0) || (da > 0 && db < 0)) {
      const double t = da / (da - db);
      out.push_back(a + t * (b - a));
    }
  }
  return out;
}

inline Polygon clip_to_box(Polygon poly, const Box2& box) {
  poly = clip_halfplane(poly, box.lo, Vec2(-1, 0));
  poly = clip_halfplane(poly, box.lo, Vec2(0, -1));
  poly = clip_halfplane(poly, box.hi, Vec2(1, 0));
  poly = clip_halfplane(poly, box.hi, Vec2(0, 1));
  return poly;
}

// Clip against a convex polygon given in counterclockwise order.
inline Polygon clip_to_convex(Polygon poly, const Polygon& convex) {
  const std::size_t k = convex.size();
  for (std::size_t i = 0; i < k && !poly.empty(); ++i) {
    const Vec2& a = convex[i];
    const Vec2& b = convex[(i + 1) % k];
    const Vec2 e = b - a;
    const Vec2 n(e.y(), -e.x());  // outward for CCW
    poly = clip_halfplane(poly, a, n);
  }
  return poly;
}

inline bool point_in_polygon(const Polygon& poly, const Vec2& x) {
  bool inside = false;
  const std::size_t n = poly.size();
  for (std::size_t i = 0, j = n - 1; i < n; j = i++) {
    const Vec2& pi = poly[i];
    const Vec2& pj = poly[j];
    if ((pi.y() > x.y()) != (pj.y() > x.y())) {
      const double xi = pi.x() + (x.y() - pi.y()) / (pj.y() - pi.y()) * (pj.x() - pi.x());
      if (x.x() < xi) inside = !inside;
    }
  }
  return inside;
}

inline double dist_point_segment(const Vec2& x, const Vec2& a, const Vec2& b) {
  const Vec2 d = b - a;
  const double l2 = d.squaredNorm();
  if (l2 == 0) return (x - a).norm();
  double t = d.dot(x - a) / l2;
  t = std::min(1.0, std::max(0.0, t));
  return (x - (a + t * d)).norm();
}

// ---------------------------------------------------------------------------
// Separating-axis intersection test between a simplex (n+1 vertices) and an
// axis-aligned box, exact for convex bodies up to `tol`.

template <int N>
bool simplex_box_intersect(const Eigen::Matrix<double, N, N + 1>& verts, const Box<N>& box,
                           double tol = 1e-12) {
  auto overlap_on_axis = [&](const Vec<N>& axis) {
    double smin = std::numeric_limits<double>::infinity(), smax = -smin;
    for (int i = 0; i < N + 1; ++i) {
      const double p = axis.dot(verts.col(i));
      smin = std::min(smin, p);
      smax = std::max(smax, p);
    }
    double bmin = 0, bmax = 0;
    for (int i = 0; i < N; ++i) {
      const double a = axis[i];
      bmin += a * (a > 0 ? box.lo[i] : box.hi[i]);
      bmax += a * (a > 0 ? box.hi[i] : box.lo[i]);
    }
    return smax >= bmin - tol && bmax >= smin - tol;
  };

  for (int i = 0; i < N; ++i) {
    Vec<N> e = Vec<N>::Zero();
    e[i] = 1;
    if (!overlap_on_axis(e)) return false;
  }
  if constexpr (N == 2) {
    for (int i = 0; i < 3; ++i) {
      const Vec2 e = verts.col((i + 1) % 3) - verts.col(i);
      if (!overlap_on_axis(Vec2(e.y(), -e.x()))) return false;
    }
  } else if constexpr (N == 3) {
    // Facet normals.
    for (int skip = 0; skip < 4; ++skip) {
      std::array<int, 3> idx;
      int k = 0;
      for (int i = 0; i < 4; ++i)
        if (i != skip) idx[k++] = i;
      const Vec3 n = (verts.col(idx[1]) - verts.col(idx[0]))
                         .cross(Vec3(verts.col(idx[2]) - verts.col(idx[0])));
      if (n.norm() > 0 && !overlap_on_axis(n)) return false;
    }
    // Edge cross box-edge axes.
    for (int i = 0; i < 4; ++i)
      for (int j = i + 1; j < 4; ++j) {
        const Vec3 e = verts.col(j) - verts.col(i);
        for (int a = 0; a < 3; ++a) {
          Vec3 ba = Vec3::Zero();
          ba[a] = 1;
          const Vec3 ax = e.cross(ba);
          if (ax.norm() > 1e-14 && !overlap_on_axis(ax)) return false;
        }
      }
  }
  return true;
}

// ---------------------------------------------------------------------------
// Quadrature.

// Five-point Gauss-Legendre nodes/weights on [0,1].
struct Gauss5 {
  static constexpr int n = 5;
  static const std::array<double, 5>& nodes() {
    static const std::array<double, 5> x = {0.04691007703066800, 0.23076534494715845, 0.5,
                                            0.76923465505284155, 0.95308992296933200};
    return x;
  }
  static const std::array<double, 5>& weights() {
    static const std::array<double, 5> w = {0.11846344252809454, 0.23931433524968324,
                                            0.28444444444444444, 0.23931433524968324,
                                            0.11846344252809454};
    return w;
  }
};

// Adaptive 1D quadrature (Gauss-Kronrod style doubling on GL5).
double adaptive_quadrature(const std::function<double(double)>& f, double a, double b,
                           double rel_tol, int max_depth = 30);

// Tensor 3x3 Gauss rule over a box.
double gauss2d(const std::function<double(const Vec2&)>& f, const Box2& box);

inline double smoothstep3(double x) {
  x = std::min(1.0, std::max(0.0, x));
  return x * x * (3 - 2 * x);
}

}  // namespace sbv
