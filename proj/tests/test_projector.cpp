#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "sbv/projector.hpp"

using namespace sbv;

namespace {

Box2 unit_box() {
  Box2 b;
  b.lo = Vec2(0, 0);
  b.hi = Vec2(1, 1);
  return b;
}

bool cell_data_equal(const CellData<2>& a, const CellData<2>& b, double tol) {
  for (int i = 0; i < 3; ++i)
    if ((a.u[i] - b.u[i]).norm() > tol) return false;
  for (int i = 0; i < 3; ++i)
    for (int j = i + 1; j < 3; ++j)
      if ((a.s_upper[i][j] - b.s_upper[i][j]).norm() > tol) return false;
  return true;
}

}  // namespace

TEST_CASE("affine fields are reproduced exactly") {
  MatM2 a(2, 2);
  a << 0.3, -1.2, 0.7, 0.4;
  VecM b(2);
  b << 1, -0.5;
  const auto f = make_affine(a, b);
  Rng rng(5);
  const auto p = project_jittered(f, 0.25, unit_box(), rng);
  std::uniform_real_distribution<double> uni(0.01, 0.99);
  for (int k = 0; k < 1000; ++k) {
    const Vec2 x(uni(rng), uni(rng));
    CHECK((p.eval(x) - f.eval(x)).norm() < 1e-10);
  }
  CHECK(jump_faces(p, unit_box()).empty());
}

TEST_CASE("indicator input: piecewise constant output, zero gradients") {
  const auto f = make_indicator(Vec2(1, 0), 0.37, unit_box());
  Rng rng(7);
  const auto p = project_jittered(f, 0.25, unit_box(), rng);
  for (const auto& id : enumerate_cells<2>(p.placement, unit_box())) {
    const auto& c = p.cell(id);
    for (int j = 0; j < 3; ++j) CHECK(c.grad[j].norm() < 1e-12);
    for (int i = 0; i < 3; ++i) {
      const double v = c.data.u[i][0];
      CHECK((std::abs(v) < 1e-10 || std::abs(v - 1) < 1e-10));
    }
  }
  for (const auto& face : jump_faces(p, unit_box())) {
    for (const VecM& j : {face.jump_a, face.jump_b}) {
      const double v = j[0];
      CHECK((std::abs(v) < 1e-10 || std::abs(std::abs(v) - 1) < 1e-10));
    }
  }
}

TEST_CASE("vertex values equal the input at the lattice") {
  VecM amp(1);
  amp << 0.8;
  MatM2 bg(1, 2);
  bg << 0.5, -0.1;
  const auto f = make_line_step(Vec2(0.6, 0.8), 0.3, amp, bg, VecM::Zero(1), unit_box());
  Rng rng(9);
  const auto p = project_jittered(f, 0.2, unit_box(), rng);
  for (const auto& id : enumerate_cells<2>(p.placement, unit_box())) {
    const auto s = p.placement.cell_simplex(id);
    const auto& c = p.cell(id);
    for (int i = 0; i < 3; ++i)
      CHECK((c.data.u[i] - f.eval(Vec2(s.vertices.col(i)))).norm() < 1e-12);
  }
}

TEST_CASE("no jump across faces shared by adjacent simplexes") {
  VecM amp(1);
  amp << 0.8;
  MatM2 bg(1, 2);
  bg << 0.5, -0.1;
  const auto f = make_line_step(Vec2(0.6, 0.8), 0.3, amp, bg, VecM::Zero(1), unit_box());
  Rng rng(11);
  const auto p = project_jittered(f, 0.2, unit_box(), rng);
  for (const auto& face : jump_faces(p, unit_box()))
    CHECK_FALSE(face.on_cell_boundary);
}

TEST_CASE("idempotence: re-projection reproduces the cell data") {
  Rng rng(13);
  VecM amp(1);
  amp << 0.8;
  MatM2 bg(1, 2);
  bg << 0.5, -0.1;
  const auto f = make_graph_step([](double x) { return 0.4 + 0.1 * std::sin(2 * M_PI * x); },
                                 [](double x) { return 0.2 * M_PI * std::cos(2 * M_PI * x); },
                                 amp, bg, VecM::Zero(1), unit_box());
  const auto p = project_jittered(f, 0.2, unit_box(), rng);
  const auto q = reproject(p);
  for (const auto& id : enumerate_cells<2>(p.placement, unit_box()))
    CHECK(cell_data_equal(p.cell(id).data, q.cell(id).data, 1e-10));
}

TEST_CASE("zero function is a fixed point") {
  const auto f = make_affine(MatM2::Zero(1, 2), VecM::Zero(1));
  const auto p = project(f, 0.25, Vec2(0.05, 0.02), unit_box());
  const auto q = reproject(p);
  for (const auto& id : enumerate_cells<2>(p.placement, unit_box())) {
    CHECK(cell_data_equal(p.cell(id).data, q.cell(id).data, 1e-12));
    for (int i = 0; i < 3; ++i) CHECK(q.cell(id).data.u[i].norm() < 1e-12);
  }
}

TEST_CASE("translation commutation") {
  VecM amp(1);
  amp << 1.1;
  MatM2 bg(1, 2);
  bg << 0.2, 0.9;
  const auto f = make_line_step(Vec2(0.8, -0.6), 0.1, amp, bg, VecM::Zero(1), unit_box());
  const Vec2 zeta(0.031, -0.017);
  const auto shifted = translate(f, zeta);
  Box2 inner;
  inner.lo = Vec2(0.2, 0.2);
  inner.hi = Vec2(0.8, 0.8);
  const auto lhs = project(shifted, 0.2, zeta, unit_box());
  const auto rhs = project(f, 0.2, Vec2(0, 0), unit_box());
  Rng rng(17);
  std::uniform_real_distribution<double> uni(0.2, 0.8);
  for (int k = 0; k < 300; ++k) {
    const Vec2 x(uni(rng), uni(rng));
    CHECK((lhs.eval(x) - rhs.eval(Vec2(x - zeta))).norm() < 1e-9);
  }
}

TEST_CASE("affine equivariance") {
  VecM amp(1);
  amp << 0.9;
  const auto f =
      make_line_step(Vec2(1, 0.2), 0.4, amp, MatM2::Zero(1, 2), VecM::Zero(1), unit_box());
  // lambda f + (A x + b), projected, equals lambda Pi f + (A x + b).
  const double lambda = -1.7;
  MatM2 aa(1, 2);
  aa << 0.6, -0.3;
  VecM ab(1);
  ab << 0.25;

  SbvField g;
  g.m = 1;
  g.domain = f.domain;
  auto fe = f.eval;
  g.eval = [fe, lambda, aa, ab](const Vec2& x) { return VecM(lambda * fe(x) + aa * x + ab); };
  auto fg = f.grad;
  g.grad = [fg, lambda, aa](const Vec2& x) { return MatM2(lambda * fg(x) + aa); };
  g.interfaces = f.interfaces;
  auto& itf = g.interfaces[0];
  const VecM scaled_jump = lambda * amp;
  itf.jump = [scaled_jump](double) { return scaled_jump; };
  auto plus = f.interfaces[0].eval_plus;
  auto minus = f.interfaces[0].eval_minus;
  itf.eval_plus = [plus, lambda, aa, ab](const Vec2& x) {
    return VecM(lambda * plus(x) + aa * x + ab);
  };
  itf.eval_minus = [minus, lambda, aa, ab](const Vec2& x) {
    return VecM(lambda * minus(x) + aa * x + ab);
  };

  const Vec2 zeta(0.02, 0.05);
  const auto pf = project(f, 0.25, zeta, unit_box());
  const auto pg = project(g, 0.25, zeta, unit_box());
  Rng rng(19);
  std::uniform_real_distribution<double> uni(0.01, 0.99);
  for (int k = 0; k < 1000; ++k) {
    const Vec2 x(uni(rng), uni(rng));
    const VecM want = lambda * pf.eval(x) + aa * x + ab;
    CHECK((pg.eval(x) - want).norm() < 1e-9);
  }
}

TEST_CASE("locality: result depends only on the field near the cell") {
  // Two fields identical inside (omega)_{eps sqrt 2}, different far away.
  VecM amp(1);
  amp << 1;
  Box2 big;
  big.lo = Vec2(-2, -2);
  big.hi = Vec2(3, 3);
  const auto f1 = make_line_step(Vec2(1, 0), 2.2, amp, MatM2::Zero(1, 2), VecM::Zero(1), big);
  VecM amp2(1);
  amp2 << -3;
  const auto f2 = make_line_step(Vec2(1, 0), 2.2, amp2, MatM2::Zero(1, 2), VecM::Zero(1), big);

  const double eps = 0.25;
  const Vec2 zeta(0.03, 0.01);
  Box2 omega;  // far from the line x = 2.2: distance 1.2 > eps sqrt(2)
  omega.lo = Vec2(0, 0);
  omega.hi = Vec2(1, 1);
  const auto p1 = project(f1, eps, zeta, omega);
  const auto p2 = project(f2, eps, zeta, omega);
  for (const auto& id : enumerate_cells<2>(p1.placement, omega)) {
    const auto& c1 = p1.cell(id);
    const auto& c2 = p2.cell(id);
    for (int i = 0; i < 3; ++i) CHECK(c1.data.u[i][0] == c2.data.u[i][0]);
    for (int i = 0; i < 3; ++i)
      for (int j = i + 1; j < 3; ++j)
        CHECK(c1.data.s_upper[i][j][0] == c2.data.s_upper[i][j][0]);
  }
}

TEST_CASE("single-cell jump inventory matches the interp example") {
  // Line step across x = 0.5 with no background: inside cells crossed by the
  // line, the midpoint jump of cut edges equals the amplitude.
  const auto f = make_indicator(Vec2(1, 0), 0.5, unit_box());
  const auto p = project(f, 1.0, Vec2(-0.2, -0.1), unit_box());
  const auto faces = jump_faces(p, unit_box());
  CHECK(!faces.empty());
  double max_jump = 0;
  for (const auto& face : faces)
    max_jump = std::max(max_jump, std::max(face.jump_a.norm(), face.jump_b.norm()));
  CHECK(max_jump <= 3.0 + 1e-9);
  CHECK(max_jump >= 0.5);
}

TEST_CASE("L1 counterexample: sawtooth keeps the projection large") {
  // u_j = frac(j x)/j tends to 0 uniformly, but |Pi u_j| stays of order eps.
  const double eps = 0.25;
  Rng rng(23);
  for (int j : {8, 16, 32}) {
    Box2 box;
    box.lo = Vec2(-0.5, -0.5);
    box.hi = Vec2(1.5, 1.5);
    const auto f = make_sawtooth(j, box);
    const auto p = project_jittered(f, eps, unit_box(), rng);
    double sup = 0;
    std::uniform_real_distribution<double> uni(0.01, 0.99);
    for (int k = 0; k < 4000; ++k) {
      const Vec2 x(uni(rng), uni(rng));
      sup = std::max(sup, std::abs(p.eval(x)[0]));
    }
    CHECK(sup >= eps / 4);
  }
}

TEST_CASE("averaged bounds: degenerate cases and ratio stability") {
  Rng rng(29);
  const auto g0 = Modulus::parse("capped_power", 0.5);
  {
    MatM2 a(1, 2);
    a << 0.4, -0.7;
    VecM b(1);
    b << 0.3;
    const auto f = make_affine(a, b);
    const auto rep = averaged_bounds_report(f, 0.25, unit_box(), 4, 2.0, a, g0, rng);
    CHECK(rep.bulk_lhs < 1e-10);
    CHECK(rep.surface_lhs < 1e-10);
    CHECK(rep.l1_lhs < 1e-8);
  }
  {
    VecM amp(1);
    amp << 1;
    MatM2 bg(1, 2);
    bg << 0.3, 0.2;
    const auto f = make_line_step(Vec2(1, 0.1), 0.5, amp, bg, VecM::Zero(1), unit_box());
    const auto r1 = averaged_bounds_report(f, 1.0 / 8, unit_box(), 8, 2.0, bg, g0, rng);
    const auto r2 = averaged_bounds_report(f, 1.0 / 16, unit_box(), 8, 2.0, bg, g0, rng);
    CHECK(r1.surface_ratio > 0);
    CHECK(r2.surface_ratio > 0);
    CHECK(r2.surface_ratio <= 2 * r1.surface_ratio + 0.5);
    CHECK(std::isfinite(r1.l1_ratio));
    CHECK(std::isfinite(r2.l1_ratio));
  }
}

TEST_CASE("as_field exposes exact one-sided extensions") {
  const auto f = make_indicator(Vec2(1, 0), 0.5, unit_box());
  const auto p = project(f, 0.5, Vec2(0.07, 0.03), unit_box());
  const auto g = as_field(p, unit_box());
  for (const auto& itf : g.interfaces) {
    for (double tau : {0.25, 0.75}) {
      const Vec2 x = itf.gamma(tau);
      CHECK((itf.eval_plus(x) - itf.eval_minus(x) - itf.jump(tau)).norm() < 1e-10);
    }
  }
}
