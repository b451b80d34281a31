#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "sbv/interp.hpp"

using namespace sbv;

namespace {

Simplex<2> unit_triangle() {
  Simplex<2> s;
  s.vertices << 0, 1, 0, 0, 0, 1;
  return s;
}

// Reference data: u = (0, 1, 0), s_01 = 0.5, other jumps zero.
CellData<2> reference_data() {
  CellData<2> d = CellData<2>::zero(unit_triangle(), 1);
  d.u[1][0] = 1;
  d.s_upper[0][1][0] = 0.5;
  return d;
}

template <int N>
CellData<N> rand_cell_data(Rng& rng, int m, double scale = 1.0) {
  std::uniform_real_distribution<double> uni(-1, 1);
  Simplex<N> s;
  while (true) {
    for (int i = 0; i < N + 1; ++i)
      for (int r = 0; r < N; ++r) s.vertices(r, i) = scale * uni(rng);
    if (s.volume() > 0.02 * std::pow(scale, N)) break;
  }
  CellData<N> d = CellData<N>::zero(s, m);
  for (int i = 0; i < N + 1; ++i)
    for (int c = 0; c < m; ++c) d.u[i][c] = uni(rng);
  for (int i = 0; i < N + 1; ++i)
    for (int j = i + 1; j < N + 1; ++j)
      for (int c = 0; c < m; ++c) d.s_upper[i][j][c] = uni(rng);
  return d;
}

template <int N>
Eigen::Matrix<double, N + 1, 1> random_face_lambda(Rng& rng, int i, int j) {
  std::uniform_real_distribution<double> uni(0, 1);
  Eigen::Matrix<double, N + 1, 1> lam;
  while (true) {
    double rest = 0;
    for (int k = 0; k < N + 1; ++k) {
      if (k == i || k == j) continue;
      lam[k] = uni(rng);
      rest += lam[k];
    }
    const double share = (1 - rest) / 2;
    if (share <= 0) continue;
    lam[i] = lam[j] = share;
    bool ismax = true;
    for (int k = 0; k < N + 1; ++k)
      if (lam[k] > share) ismax = false;
    if (ismax) return lam;
  }
}

}  // namespace

TEST_CASE("cycle identity holds for any data") {
  Rng rng(2);
  const auto d = rand_cell_data<2>(rng, 2);
  for (int i = 0; i < 3; ++i)
    for (int j = 0; j < 3; ++j)
      for (int k = 0; k < 3; ++k) {
        const VecM c = d.xi(i, j) + d.xi(j, k) + d.xi(k, i) + d.s(i, j) + d.s(j, k) + d.s(k, i);
        CHECK(c.norm() < 1e-12);
      }
}

TEST_CASE("reference gradients, evaluation, trace and jumps") {
  const auto c = build_interpolant<2>(reference_data());

  CHECK(c.grad[0](0, 0) == doctest::Approx(0.5).epsilon(1e-12));
  CHECK(std::abs(c.grad[0](0, 1)) < 1e-12);
  CHECK(c.grad[1](0, 0) == doctest::Approx(0.5).epsilon(1e-12));
  CHECK(c.grad[1](0, 1) == doctest::Approx(-0.5).epsilon(1e-12));

  CHECK(c.eval(Vec2(1, 0))[0] == doctest::Approx(1).epsilon(1e-12));
  CHECK(c.eval(Vec2(1.0 / 3, 1.0 / 3))[0] == doctest::Approx(1.0 / 6).epsilon(1e-12));

  // Edge traces on edge (0,1).
  CHECK(c.edge_trace(0, 1, 0)[0] == doctest::Approx(0).epsilon(1e-12));
  CHECK(c.edge_trace(0, 1, 1)[0] == doctest::Approx(1).epsilon(1e-12));
  CHECK(c.edge_trace(0, 1, 0.25)[0] == doctest::Approx(0.125).epsilon(1e-12));

  // Midpoint of the edge: the two branches differ by s_01.
  CHECK(c.edge_trace(0, 1, 0.5 + 1e-12)[0] - c.edge_trace(0, 1, 0.5)[0] ==
        doctest::Approx(0.5).epsilon(1e-9));

  // Face jumps.
  BaryCoords<2> mid;
  mid.lambda << 0.5, 0.5, 0;
  CHECK(std::abs(c.face_jump(0, 1, mid).norm() - 0.5) < 1e-12);
  BaryCoords<2> cen;
  cen.lambda << 1.0 / 3, 1.0 / 3, 1.0 / 3;
  CHECK(c.face_jump(0, 1, cen)[0] == doctest::Approx(-1.0 / 3).epsilon(1e-12));
}

TEST_CASE("no jumps: interpolant is a single affine function") {
  Simplex<2> s = unit_triangle();
  CellData<2> d = CellData<2>::zero(s, 1);
  const Vec2 slope(0.7, -0.3);
  for (int i = 0; i < 3; ++i) d.u[i][0] = slope.dot(s.vertices.col(i)) + 0.2;
  const auto c = build_interpolant<2>(d);
  for (int j = 0; j < 3; ++j) {
    CHECK((Vec2(c.grad[j].row(0).transpose()) - slope).norm() < 1e-12);
    CHECK((c.offset[j][0]) == doctest::Approx(0.2).epsilon(1e-12));
  }
}

TEST_CASE("edge traces match one-sided evaluation, random data") {
  Rng rng(17);
  auto run = [&rng](auto dim_tag, int m) {
    constexpr int N = decltype(dim_tag)::value;
    for (int rep = 0; rep < 120; ++rep) {
      const auto d = rand_cell_data<N>(rng, m);
      const auto c = build_interpolant<N>(d);
      for (int i = 0; i < N + 1; ++i)
        for (int j = 0; j < N + 1; ++j) {
          if (i == j) continue;
          for (int q = 0; q < 20; ++q) {
            const double t = (q + 0.5) / 20.0;
            const Vec<N> x = Vec<N>(d.simplex.vertices.col(i)) +
                             t * Vec<N>(d.simplex.vertices.col(j) - d.simplex.vertices.col(i));
            // Evaluate on the subcell the trace formula refers to.
            const int sub = t < 0.5 ? i : j;
            const VecM v = c.eval_subcell(sub, x);
            CHECK((v - c.edge_trace(i, j, t)).norm() < 1e-10);
          }
        }
    }
  };
  run(std::integral_constant<int, 2>{}, 1);
  run(std::integral_constant<int, 2>{}, 3);
  run(std::integral_constant<int, 3>{}, 2);
}

TEST_CASE("face jump bound |[v]| <= 3|s|") {
  Rng rng(23);
  for (int rep = 0; rep < 100; ++rep) {
    const auto d = rand_cell_data<2>(rng, 2);
    const auto c = build_interpolant<2>(d);
    const double bound = c.max_jump_bound();
    for (int i = 0; i < 3; ++i)
      for (int j = i + 1; j < 3; ++j)
        for (int q = 0; q < 100; ++q) {
          BaryCoords<2> b;
          b.lambda = random_face_lambda<2>(rng, i, j);
          CHECK(c.face_jump(i, j, b).norm() <= bound + 1e-10);
        }
  }
}

TEST_CASE("face jump agrees with two-sided subcell evaluation") {
  Rng rng(29);
  for (int rep = 0; rep < 100; ++rep) {
    const auto d = rand_cell_data<2>(rng, 1);
    const auto c = build_interpolant<2>(d);
    for (int i = 0; i < 3; ++i)
      for (int j = i + 1; j < 3; ++j) {
        BaryCoords<2> b;
        b.lambda = random_face_lambda<2>(rng, i, j);
        Vec2 x = Vec2::Zero();
        for (int k = 0; k < 3; ++k) x += b.lambda[k] * d.simplex.vertices.col(k);
        const VecM diff = c.eval_subcell(i, x) - c.eval_subcell(j, x);
        CHECK((diff - c.face_jump(i, j, b)).norm() < 1e-10);
      }
  }
}

TEST_CASE("linearity of the construction") {
  Rng rng(31);
  for (int rep = 0; rep < 50; ++rep) {
    auto d1 = rand_cell_data<2>(rng, 2);
    CellData<2> d2 = d1;
    std::uniform_real_distribution<double> uni(-1, 1);
    for (int i = 0; i < 3; ++i)
      for (int c = 0; c < 2; ++c) d2.u[i][c] = uni(rng);
    for (int i = 0; i < 3; ++i)
      for (int j = i + 1; j < 3; ++j)
        for (int c = 0; c < 2; ++c) d2.s_upper[i][j][c] = uni(rng);
    const double alpha = uni(rng);

    CellData<2> dsum = d1;
    for (int i = 0; i < 3; ++i) dsum.u[i] = alpha * d1.u[i] + d2.u[i];
    for (int i = 0; i < 3; ++i)
      for (int j = i + 1; j < 3; ++j)
        dsum.s_upper[i][j] = alpha * d1.s_upper[i][j] + d2.s_upper[i][j];

    const auto c1 = build_interpolant<2>(d1);
    const auto c2 = build_interpolant<2>(d2);
    const auto cs = build_interpolant<2>(dsum);
    for (int j = 0; j < 3; ++j) {
      const Vec2 x = 0.6 * Vec2(d1.simplex.vertices.col(j)) + 0.4 * d1.simplex.centroid();
      const VecM want = alpha * c1.eval(x) + c2.eval(x);
      CHECK((cs.eval(x) - want).norm() < 1e-10);
    }
  }
}

TEST_CASE("face independence from the opposing vertex") {
  Rng rng(37);
  std::uniform_real_distribution<double> uni(-1, 1);
  for (int rep = 0; rep < 50; ++rep) {
    const Vec2 p(uni(rng), uni(rng));
    const Vec2 q = p + Vec2(1, 0.2 * uni(rng));
    const Vec2 up = p + Vec2(0.3, 1);
    const Vec2 dn = p + Vec2(0.6, -1);

    Simplex<2> sa, sb;
    sa.vertices.col(0) = p;
    sa.vertices.col(1) = q;
    sa.vertices.col(2) = up;
    sb.vertices.col(0) = p;
    sb.vertices.col(1) = q;
    sb.vertices.col(2) = dn;

    CellData<2> da = CellData<2>::zero(sa, 1), db = CellData<2>::zero(sb, 1);
    const double u0 = uni(rng), u1 = uni(rng), s01 = uni(rng);
    da.u[0][0] = db.u[0][0] = u0;
    da.u[1][0] = db.u[1][0] = u1;
    da.u[2][0] = uni(rng);
    db.u[2][0] = uni(rng);
    da.s_upper[0][1][0] = db.s_upper[0][1][0] = s01;
    da.s_upper[0][2][0] = uni(rng);
    db.s_upper[0][2][0] = uni(rng);
    da.s_upper[1][2][0] = uni(rng);
    db.s_upper[1][2][0] = uni(rng);

    const auto ca = build_interpolant<2>(da);
    const auto cb = build_interpolant<2>(db);
    for (int k = 0; k < 50; ++k) {
      const double t = (k + 0.5) / 50.0;
      CHECK((ca.edge_trace(0, 1, t) - cb.edge_trace(0, 1, t)).norm() < 1e-10);
    }
  }
}

TEST_CASE("jump-set length bounded by the perimeter") {
  Rng rng(41);
  for (int rep = 0; rep < 200; ++rep) {
    const auto d = rand_cell_data<2>(rng, 1);
    const auto c = build_interpolant<2>(d);
    CHECK(jump_set_length(c) <= d.simplex.perimeter() + 1e-12);
  }
}

TEST_CASE("gradient bound is homogeneous under rescaling") {
  Rng rng(43);
  // Measure C = max_j |G_j| * |T| / (diam^{n-1} |xi|) on a reference family,
  // then check the same data rescaled produces the same constant.
  for (int rep = 0; rep < 30; ++rep) {
    auto d = rand_cell_data<2>(rng, 1);
    const auto c = build_interpolant<2>(d);
    double xin = 0, gmax = 0;
    for (int i = 0; i < 3; ++i)
      for (int j = 0; j < 3; ++j)
        if (i != j) xin = std::max(xin, d.xi(i, j).norm());
    for (int j = 0; j < 3; ++j) gmax = std::max(gmax, c.grad[j].norm());
    if (xin < 1e-9) continue;
    const double cref = gmax * d.simplex.volume() / (d.simplex.diameter() * xin);

    const double sigma = 7.3;
    CellData<2> ds = d;
    ds.simplex.vertices *= sigma;
    const auto cs = build_interpolant<2>(ds);
    double gs = 0;
    for (int j = 0; j < 3; ++j) gs = std::max(gs, cs.grad[j].norm());
    const double cscaled = gs * ds.simplex.volume() / (ds.simplex.diameter() * xin);
    CHECK(cscaled == doctest::Approx(cref).epsilon(1e-9));
  }
}
