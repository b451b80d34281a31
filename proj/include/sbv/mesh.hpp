#pragma once

// Periodic reference triangulation of R^n (Freudenthal partition of the unit
// cube, reflected along each axis so that the tiling has period 2), shifted
// and scaled placements, barycentric coordinates, point location and the
// barycentric subcell decomposition of a simplex.

#include "sbv/geometry.hpp"

#include <algorithm>
#include <numeric>

namespace sbv {

inline constexpr double kBaryTol = 1e-12;

template <int N>
struct BaryCoords {
  Eigen::Matrix<double, N + 1, 1> lambda;

  bool inside(double tol = kBaryTol) const {
    for (int i = 0; i < N + 1; ++i)
      if (lambda[i] < -tol) return false;
    return true;
  }
};

template <int N>
struct Simplex {
  // Columns are the vertices A_1..A_{n+1}.
  Eigen::Matrix<double, N, N + 1> vertices;

  double volume() const {
    Eigen::Matrix<double, N, N> e;
    for (int i = 0; i < N; ++i) e.col(i) = vertices.col(i + 1) - vertices.col(0);
    double fact = 1;
    for (int i = 2; i <= N; ++i) fact *= i;
    return std::abs(e.determinant()) / fact;
  }

  double diameter() const {
    double d = 0;
    for (int i = 0; i < N + 1; ++i)
      for (int j = i + 1; j < N + 1; ++j)
        d = std::max(d, (vertices.col(i) - vertices.col(j)).norm());
    return d;
  }

  double perimeter() const {
    // H^{n-1} measure of the boundary (sum of facet measures).
    double s = 0;
    for (int skip = 0; skip < N + 1; ++skip) s += facet_measure(skip);
    return s;
  }

  double facet_measure(int skip) const {
    if constexpr (N == 2) {
      const int a = skip == 0 ? 1 : 0;
      const int b = skip == 2 ? 1 : 2;
      return (vertices.col(a) - vertices.col(b)).norm();
    } else {
      std::array<int, N> idx;
      int k = 0;
      for (int i = 0; i < N + 1; ++i)
        if (i != skip) idx[k++] = i;
      Eigen::Matrix<double, N, N - 1> e;
      for (int i = 0; i + 1 < N; ++i) e.col(i) = vertices.col(idx[i + 1]) - vertices.col(idx[0]);
      const Eigen::Matrix<double, N - 1, N - 1> g = e.transpose() * e;
      double fact = 1;
      for (int i = 2; i <= N - 1; ++i) fact *= i;
      return std::sqrt(std::max(0.0, g.determinant())) / fact;
    }
  }

  Vec<N> centroid() const { return vertices.rowwise().mean(); }

  // The matrix mapping [x;1] to barycentric coordinates, cached by callers.
  Eigen::Matrix<double, N + 1, N + 1> barycentric_matrix() const {
    Eigen::Matrix<double, N + 1, N + 1> m;
    m.template topRows<N>() = vertices;
    m.row(N).setOnes();
    Eigen::FullPivLU<Eigen::Matrix<double, N + 1, N + 1>> lu(m);
    if (!lu.isInvertible()) throw GeometryError("degenerate simplex in barycentric solve");
    return lu.inverse();
  }
};

template <int N>
BaryCoords<N> barycentric(const Simplex<N>& s, const Vec<N>& x) {
  const auto minv = s.barycentric_matrix();
  Eigen::Matrix<double, N + 1, 1> rhs;
  rhs.template head<N>() = x;
  rhs[N] = 1;
  BaryCoords<N> b;
  b.lambda = minv * rhs;
  const double sum = b.lambda.sum();
  if (std::abs(sum - 1.0) > 1e-9)
    throw GeometryError("barycentric solve residual too large");
  return b;
}

// Index of the subcell T_j containing lambda (argmax, ties to lowest index).
template <int N>
int subcell_index(const BaryCoords<N>& b) {
  int j = 0;
  for (int i = 1; i < N + 1; ++i)
    if (b.lambda[i] > b.lambda[j]) j = i;
  return j;
}

// ---------------------------------------------------------------------------
// Reference partition and placements.

template <int N>
struct CellId {
  std::array<std::int64_t, N> cube{};
  int tag = 0;  // permutation index in lexicographic order

  friend bool operator==(const CellId& a, const CellId& b) {
    return a.cube == b.cube && a.tag == b.tag;
  }
  friend bool operator<(const CellId& a, const CellId& b) {
    if (a.cube != b.cube) return a.cube < b.cube;
    return a.tag < b.tag;
  }
};

template <int N>
struct CellIdHash {
  std::size_t operator()(const CellId<N>& id) const {
    std::size_t h = static_cast<std::size_t>(id.tag);
    for (int i = 0; i < N; ++i)
      h = h * 1000003u + static_cast<std::size_t>(id.cube[i] * 2654435761LL);
    return h;
  }
};

namespace detail {

inline int factorial(int n) {
  int f = 1;
  for (int i = 2; i <= n; ++i) f *= i;
  return f;
}

template <int N>
std::array<int, N> permutation_from_tag(int tag) {
  std::array<int, N> pool;
  std::iota(pool.begin(), pool.end(), 0);
  std::array<int, N> perm;
  int f = factorial(N - 1);
  for (int i = 0; i < N; ++i) {
    const int k = tag / f;
    tag %= f;
    perm[i] = pool[k];
    for (int j = k; j + 1 < N - i; ++j) pool[j] = pool[j + 1];
    if (i + 1 < N) f /= (N - 1 - i);
  }
  return perm;
}

}  // namespace detail

// The Freudenthal/Kuhn partition of [0,1]^n, reflected by cube parity so the
// resulting tiling of R^n has period 2 in every axis. Cells are identified by
// (cube index, permutation tag); everything is computed lazily.
template <int N>
struct ReferencePartition {
  static constexpr int cells_per_cube = []() {
    int f = 1;
    for (int i = 2; i <= N; ++i) f *= i;
    return f;
  }();

  // In-cube coordinates after the parity reflection; y in [0,1]^N.
  static Vec<N> reflect(const Vec<N>& y, const std::array<std::int64_t, N>& cube) {
    Vec<N> r;
    for (int i = 0; i < N; ++i) {
      const bool odd = ((cube[i] % 2) + 2) % 2 == 1;
      r[i] = odd ? 1.0 - y[i] : y[i];
    }
    return r;
  }

  static Simplex<N> cell_simplex(const CellId<N>& id) {
    const auto perm = detail::permutation_from_tag<N>(id.tag);
    Simplex<N> s;
    Vec<N> v = Vec<N>::Zero();
    s.vertices.col(0) = v;
    for (int k = 0; k < N; ++k) {
      v[perm[k]] = 1;
      s.vertices.col(k + 1) = v;
    }
    // Undo the reflection and translate to the cube.
    for (int c = 0; c < N + 1; ++c) {
      Vec<N> y = s.vertices.col(c);
      y = reflect(y, id.cube);
      for (int i = 0; i < N; ++i) y[i] += static_cast<double>(id.cube[i]);
      s.vertices.col(c) = y;
    }
    return s;
  }

  // Membership of a reference point in a cell, with tolerance.
  static bool cell_contains(const CellId<N>& id, const Vec<N>& x, double tol) {
    Vec<N> y;
    for (int i = 0; i < N; ++i) {
      y[i] = x[i] - static_cast<double>(id.cube[i]);
      if (y[i] < -tol || y[i] > 1 + tol) return false;
    }
    y = reflect(y, id.cube);
    const auto perm = detail::permutation_from_tag<N>(id.tag);
    double prev = 1 + tol;
    for (int k = 0; k < N; ++k) {
      if (y[perm[k]] > prev + tol) return false;
      prev = y[perm[k]];
    }
    return prev >= -tol;
  }
};

template <int N>
struct GridPlacement {
  double eps = 1;
  Vec<N> shift = Vec<N>::Zero();  // |shift| < eps

  Vec<N> to_reference(const Vec<N>& x) const { return (x - shift) / eps; }
  Vec<N> from_reference(const Vec<N>& y) const { return shift + eps * y; }

  Simplex<N> cell_simplex(const CellId<N>& id) const {
    Simplex<N> s = ReferencePartition<N>::cell_simplex(id);
    for (int c = 0; c < N + 1; ++c) s.vertices.col(c) = from_reference(Vec<N>(s.vertices.col(c)));
    return s;
  }
};

// Locate the cell containing x; boundary ties resolved to the lowest id.
template <int N>
CellId<N> locate_cell(const GridPlacement<N>& p, const Vec<N>& x) {
  const Vec<N> y = p.to_reference(x);
  const double tol = 1e-12 * std::max(1.0, y.template lpNorm<Eigen::Infinity>());

  std::array<std::int64_t, N> base;
  std::array<bool, N> boundary;
  for (int i = 0; i < N; ++i) {
    double f = std::floor(y[i]);
    if (y[i] - f < tol && f > y[i] - 0.5) {
      // near the lower face: both cubes f-1 and f are candidates
      base[i] = static_cast<std::int64_t>(f) - 1;
      boundary[i] = true;
    } else if (std::ceil(y[i]) - y[i] < tol) {
      base[i] = static_cast<std::int64_t>(std::ceil(y[i])) - 1;
      boundary[i] = true;
    } else {
      base[i] = static_cast<std::int64_t>(f);
      boundary[i] = false;
    }
  }

  bool found = false;
  CellId<N> best;
  const int combos = 1 << N;
  for (int c = 0; c < combos; ++c) {
    CellId<N> id;
    bool skip = false;
    for (int i = 0; i < N; ++i) {
      const int add = (c >> i) & 1;
      if (add == 1 && !boundary[i]) {
        skip = true;
        break;
      }
      id.cube[i] = base[i] + add;
    }
    if (skip) continue;
    for (int t = 0; t < ReferencePartition<N>::cells_per_cube; ++t) {
      id.tag = t;
      if (ReferencePartition<N>::cell_contains(id, y, tol)) {
        if (!found || id < best) best = id;
        found = true;
      }
    }
  }
  if (!found) throw GeometryError("locate_cell: no containing cell (numerical)");
  return best;
}

// All cells whose closure intersects the axis-aligned region, in id order.
template <int N>
std::vector<CellId<N>> enumerate_cells(const GridPlacement<N>& p, const Box<N>& region) {
  Box<N> ref;
  ref.lo = p.to_reference(region.lo);
  ref.hi = p.to_reference(region.hi);
  std::array<std::int64_t, N> lo, hi;
  for (int i = 0; i < N; ++i) {
    lo[i] = static_cast<std::int64_t>(std::floor(ref.lo[i] - 1e-12));
    hi[i] = static_cast<std::int64_t>(std::floor(ref.hi[i] + 1e-12));
  }
  std::vector<CellId<N>> out;
  std::array<std::int64_t, N> cube = lo;
  while (true) {
    CellId<N> id;
    id.cube = cube;
    for (int t = 0; t < ReferencePartition<N>::cells_per_cube; ++t) {
      id.tag = t;
      const Simplex<N> s = ReferencePartition<N>::cell_simplex(id);
      // negative tolerance: only cells overlapping the region's interior
      if (simplex_box_intersect<N>(s.vertices, ref, -1e-9)) out.push_back(id);
    }
    int i = 0;
    for (; i < N; ++i) {
      if (++cube[i] <= hi[i]) break;
      cube[i] = lo[i];
    }
    if (i == N) break;
  }
  std::sort(out.begin(), out.end());
  return out;
}

// Streaming variant; visits cells in id order within each cube.
template <int N, class Fn>
void for_each_cell(const GridPlacement<N>& p, const Box<N>& region, Fn&& fn) {
  Box<N> ref;
  ref.lo = p.to_reference(region.lo);
  ref.hi = p.to_reference(region.hi);
  std::array<std::int64_t, N> lo, hi;
  for (int i = 0; i < N; ++i) {
    lo[i] = static_cast<std::int64_t>(std::floor(ref.lo[i] - 1e-12));
    hi[i] = static_cast<std::int64_t>(std::floor(ref.hi[i] + 1e-12));
  }
  std::array<std::int64_t, N> cube = lo;
  while (true) {
    CellId<N> id;
    id.cube = cube;
    for (int t = 0; t < ReferencePartition<N>::cells_per_cube; ++t) {
      id.tag = t;
      const Simplex<N> s = ReferencePartition<N>::cell_simplex(id);
      if (simplex_box_intersect<N>(s.vertices, ref, -1e-9)) fn(id);
    }
    int i = 0;
    for (; i < N; ++i) {
      if (++cube[i] <= hi[i]) break;
      cube[i] = lo[i];
    }
    if (i == N) break;
  }
}

// ---------------------------------------------------------------------------
// Barycentric subcell geometry.

template <int N>
struct InternalFace {
  int i = 0, j = 0;  // incident subcell indices, i < j
};

struct SubcellGeometry2 {
  Simplex<2> parent;
  std::array<Polygon, 3> quads;           // explicit subcell polygons
  std::array<double, 3> volumes{};        // = |T|/3 each
  struct Face {
    int i, j;
    Vec2 a, b;  // midpoint(A_i,A_j) -> centroid
  };
  std::vector<Face> faces;

  double internal_face_length() const {
    double s = 0;
    for (const auto& f : faces) s += (f.b - f.a).norm();
    return s;
  }
};

inline SubcellGeometry2 subcell_geometry(const Simplex<2>& s) {
  if (s.volume() <= 0) throw GeometryError("degenerate simplex");
  SubcellGeometry2 g;
  g.parent = s;
  const Vec2 c = s.centroid();
  auto mid = [&](int a, int b) { return Vec2(0.5 * (s.vertices.col(a) + s.vertices.col(b))); };
  for (int j = 0; j < 3; ++j) {
    const int i = (j + 1) % 3;
    const int k = (j + 2) % 3;
    g.quads[j] = {Vec2(s.vertices.col(j)), mid(j, i), c, mid(j, k)};
    // Fix orientation (counterclockwise) for downstream convex clipping.
    double a2 = 0;
    const auto& q = g.quads[j];
    for (std::size_t t = 0; t < q.size(); ++t) {
      const Vec2& u = q[t];
      const Vec2& v = q[(t + 1) % q.size()];
      a2 += u.x() * v.y() - v.x() * u.y();
    }
    if (a2 < 0) std::reverse(g.quads[j].begin(), g.quads[j].end());
    g.volumes[j] = polygon_area(g.quads[j]);
  }
  for (int i = 0; i < 3; ++i)
    for (int j = i + 1; j < 3; ++j) g.faces.push_back({i, j, mid(i, j), c});
  return g;
}

// Monte-Carlo subcell volume for generic dimension (membership by argmax).
template <int N>
std::array<double, N + 1> subcell_volumes_mc(const Simplex<N>& s, int samples, Rng& rng) {
  std::array<double, N + 1> counts{};
  std::uniform_real_distribution<double> uni(0, 1);
  int accepted = 0;
  const auto minv = s.barycentric_matrix();
  while (accepted < samples) {
    // Sample barycentric coordinates uniformly over the simplex.
    Eigen::Matrix<double, N + 1, 1> e;
    for (int i = 0; i < N + 1; ++i) e[i] = -std::log(uni(rng));
    e /= e.sum();
    BaryCoords<N> b;
    b.lambda = e;
    counts[static_cast<std::size_t>(subcell_index<N>(b))] += 1;
    ++accepted;
  }
  (void)minv;
  std::array<double, N + 1> vols{};
  const double v = s.volume();
  for (int j = 0; j < N + 1; ++j) vols[j] = v * counts[j] / samples;
  return vols;
}

// Exact H^{n-1} measure of the internal face dT_i \cap dT_j for n = 3: the
// face is a planar convex polygon in barycentric coordinates with known
// vertices, mapped through the simplex chart.
inline double internal_face_area3(const Simplex<3>& s, int i, int j) {
  std::vector<Eigen::Matrix<double, 4, 1>> lambdas;
  // Vertices of {lambda_i = lambda_j = max}: all coordinate patterns where the
  // maximal value is shared by i, j and possibly more indices.
  std::array<int, 2> others{};
  int k = 0;
  for (int t = 0; t < 4; ++t)
    if (t != i && t != j) others[k++] = t;
  auto lam = [&](double li, double lo0, double lo1) {
    Eigen::Matrix<double, 4, 1> l = Eigen::Matrix<double, 4, 1>::Zero();
    l[i] = li;
    l[j] = li;
    l[others[0]] = lo0;
    l[others[1]] = lo1;
    return l;
  };
  lambdas.push_back(lam(0.5, 0, 0));
  lambdas.push_back(lam(1.0 / 3, 1.0 / 3, 0));
  lambdas.push_back(lam(1.0 / 3, 0, 1.0 / 3));
  lambdas.push_back(lam(0.25, 0.25, 0.25));
  std::vector<Vec3> pts;
  for (const auto& l : lambdas) {
    Vec3 x = Vec3::Zero();
    for (int t = 0; t < 4; ++t) x += l[t] * s.vertices.col(t);
    pts.push_back(x);
  }
  // Planar quadrilateral with cycle pts[1], pts[0], pts[2], pts[3]; split
  // along the diagonal pts[0]-pts[3].
  double area = 0;
  area += 0.5 * ((pts[1] - pts[0]).cross(pts[3] - pts[0])).norm();
  area += 0.5 * ((pts[2] - pts[0]).cross(pts[3] - pts[0])).norm();
  return area;
}

// Monte-Carlo estimate of the same area: uniform samples in the chart plane
// {lambda_i = lambda_j}, membership by the barycentric argmax condition.
// Returns (estimate, standard deviation).
inline std::pair<double, double> internal_face_area3_mc(const Simplex<3>& s, int i, int j,
                                                        int samples, Rng& rng) {
  std::array<int, 2> others{};
  int k = 0;
  for (int t = 0; t < 4; ++t)
    if (t != i && t != j) others[k++] = t;
  auto point = [&](double li, double lo0, double lo1) {
    Vec3 x = Vec3::Zero();
    x += li * (s.vertices.col(i) + s.vertices.col(j));
    x += lo0 * s.vertices.col(others[0]);
    x += lo1 * s.vertices.col(others[1]);
    return x;
  };
  const Vec3 p0 = point(0.5, 0, 0);
  const Vec3 e1 = point(1.0 / 3, 1.0 / 3, 0) - p0;
  const Vec3 e2 = point(1.0 / 3, 0, 1.0 / 3) - p0;
  // Chart coordinates of the quad's vertices: (0,0), (1,0), (0,1) and the
  // centroid point; bound the sampling box with a margin.
  const Vec3 pc = point(0.25, 0.25, 0.25);
  Eigen::Matrix<double, 3, 2> basis;
  basis.col(0) = e1;
  basis.col(1) = e2;
  const Eigen::Vector2d cc = (basis.transpose() * basis)
                                 .ldlt()
                                 .solve(basis.transpose() * (pc - p0));
  const double ulo = std::min({0.0, 1.0, cc[0]}) - 0.05;
  const double uhi = std::max({0.0, 1.0, cc[0]}) + 0.05;
  const double vlo = std::min({0.0, 1.0, cc[1]}) - 0.05;
  const double vhi = std::max({0.0, 1.0, cc[1]}) + 0.05;
  const auto minv = s.barycentric_matrix();
  std::uniform_real_distribution<double> du(ulo, uhi), dv(vlo, vhi);
  int hits = 0;
  for (int t = 0; t < samples; ++t) {
    const Vec3 x = p0 + du(rng) * e1 + dv(rng) * e2;
    Eigen::Matrix<double, 4, 1> rhs;
    rhs.head<3>() = x;
    rhs[3] = 1;
    const Eigen::Matrix<double, 4, 1> lam = minv * rhs;
    bool ok = true;
    for (int q = 0; q < 4; ++q)
      if (lam[q] < -1e-12) ok = false;
    for (int q : others)
      if (lam[q] > lam[i] + 1e-12) ok = false;
    if (ok) ++hits;
  }
  const double chart_area = (uhi - ulo) * (vhi - vlo) * e1.cross(e2).norm();
  const double frac = static_cast<double>(hits) / samples;
  const double sigma = chart_area * std::sqrt(std::max(frac * (1 - frac), 1e-12) / samples);
  return {chart_area * frac, sigma};
}

}  // namespace sbv
