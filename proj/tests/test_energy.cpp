#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include "sbv/energy.hpp"

#include <random>

using namespace sbv;

namespace {

Box2 unit_square() {
  Box2 b;
  b.lo = Vec2(0, 0);
  b.hi = Vec2(1, 1);
  return b;
}

Modulus capped_sqrt() { return Modulus::parse("capped_power", 0.5); }

JumpFace horizontal_face(double y, double x0, double x1, double jump_lo, double jump_hi,
                         const Vec2& nu) {
  JumpFace f;
  f.a = Vec2(x0, y);
  f.b = Vec2(x1, y);
  f.nu = nu;
  f.jump_a = VecM::Constant(1, jump_lo);
  f.jump_b = VecM::Constant(1, jump_hi);
  f.grad_plus = MatM2::Zero(1, 2);
  f.grad_minus = MatM2::Zero(1, 2);
  f.off_plus = VecM::Zero(1);
  f.off_minus = VecM::Zero(1);
  return f;
}

}  // namespace

TEST_CASE("bulk energy of a projected affine field is |A|^2") {
  MatM2 a(1, 2);
  a << 0.7, -1.3;
  VecM b(1);
  b << 0.4;
  const SbvField f = make_affine(a, b);
  const PwAffineFunction w = project(f, 0.25, Vec2(0.013, -0.007), unit_square());
  const double e = bulk_energy(w, BulkDensity::p_power(2), unit_square());
  CHECK(e == doctest::Approx(a.squaredNorm()).epsilon(1e-10));

  // Area integrand on the same function.
  const double ar = bulk_energy(w, BulkDensity::area(), unit_square());
  CHECK(ar == doctest::Approx(std::sqrt(1 + a.squaredNorm())).epsilon(1e-10));
}

TEST_CASE("bulk energy of a pure step vanishes") {
  const SbvField f = make_indicator(Vec2(0, 1), 0.37, unit_square());
  const PwAffineFunction w = project(f, 1.0 / 8, Vec2(0.01, 0.003), unit_square());
  CHECK(bulk_energy(w, BulkDensity::p_power(2), unit_square()) == doctest::Approx(0.0));
}

TEST_CASE("exact bulk integral agrees with a Monte Carlo oracle") {
  VecM amp(1);
  amp << 1;
  MatM2 bg(1, 2);
  bg << 0.3, 0.8;
  VecM off = VecM::Zero(1);
  const SbvField f = make_graph_step([](double x) { return 0.4 + 0.1 * std::sin(2 * M_PI * x); },
                                     [](double x) { return 0.2 * M_PI * std::cos(2 * M_PI * x); },
                                     amp, bg, off, unit_square());
  const PwAffineFunction w = project(f, 1.0 / 8, Vec2(0.021, -0.013), unit_square());
  const double exact = bulk_energy(w, BulkDensity::p_power(2), unit_square());

  Rng rng(77);
  std::uniform_real_distribution<double> uni(0, 1);
  const int n = 300000;
  double sum = 0, sum2 = 0;
  for (int i = 0; i < n; ++i) {
    const Vec2 x(uni(rng), uni(rng));
    const double v = w.grad(x).squaredNorm();
    sum += v;
    sum2 += v * v;
  }
  const double mean = sum / n;
  const double sigma = std::sqrt(std::max(0.0, sum2 / n - mean * mean) / n);
  CHECK(std::abs(exact - mean) <= 3 * sigma + 1e-9);
}

TEST_CASE("adaptive field bulk integral matches the analytic value") {
  const SbvField f = make_smooth_plus_jump(Vec2(1, 0), 0.5, 1.0, unit_square());
  // grad = 0.3 pi (cos cos, -sin sin): integral of |grad|^2 = (0.3 pi)^2 / 2.
  const double e = bulk_energy(f, BulkDensity::p_power(2), unit_square(), 1e-7);
  CHECK(e == doctest::Approx(0.5 * std::pow(0.3 * M_PI, 2)).epsilon(1e-5));
}

TEST_CASE("surface energy of explicit faces") {
  SurfaceDensity g = SurfaceDensity::cohesive(capped_sqrt());
  const Box2 box = unit_square();

  SUBCASE("unit amplitude, unit length") {
    std::vector<JumpFace> faces = {horizontal_face(0.5, 0, 1, 1, 1, Vec2(0, 1))};
    CHECK(surface_energy(faces, g, box) == doctest::Approx(1.0).epsilon(1e-12));
  }
  SUBCASE("brittle density counts length only") {
    std::vector<JumpFace> faces = {horizontal_face(0.5, 0.25, 0.75, 3.0, 0.1, Vec2(0, 1))};
    CHECK(surface_energy(faces, SurfaceDensity::brittle(0.7), box) ==
          doctest::Approx(0.35).epsilon(1e-12));
  }
  SUBCASE("kink of the capped modulus is split analytically") {
    // |jump(t)| = 0.25 + 2t crosses 1 at t = 0.375:
    // integral = [(0.25+2t)^{3/2}/3] over [0, 0.375] + 0.625.
    std::vector<JumpFace> faces = {horizontal_face(0.5, 0, 1, 0.25, 2.25, Vec2(0, 1))};
    const double expect = (1.0 - std::pow(0.25, 1.5)) / 3.0 + 0.625;
    CHECK(surface_energy(faces, g, box) == doctest::Approx(expect).epsilon(1e-10));
  }
  SUBCASE("clipping to the region") {
    std::vector<JumpFace> faces = {horizontal_face(0.5, -1, 2, 1, 1, Vec2(0, 1))};
    CHECK(surface_energy(faces, g, box) == doctest::Approx(1.0).epsilon(1e-10));
  }
}

TEST_CASE("surface energy of a field matches its projected face inventory") {
  const SbvField f = make_line_step(Vec2(0, 1), 0.52, VecM::Constant(1, 0.8),
                                    MatM2::Zero(1, 2), VecM::Zero(1), unit_square());
  SurfaceDensity g = SurfaceDensity::cohesive(capped_sqrt());
  const double direct = surface_energy(f, g, unit_square());
  CHECK(direct == doctest::Approx(std::sqrt(0.8)).epsilon(1e-8));

  const PwAffineFunction w = project(f, 1.0 / 8, Vec2(0.017, 0.004), unit_square());
  const auto faces = jump_faces(w, unit_square());
  const SbvField wf = as_field(w, unit_square());
  CHECK(surface_energy(faces, g, unit_square()) ==
        doctest::Approx(surface_energy(wf, g, unit_square())).epsilon(1e-6));
}

TEST_CASE("jump discrepancy") {
  const Modulus g0 = capped_sqrt();
  const Box2 box = unit_square();
  VecM amp(1);
  amp << 1.0;
  const SbvField f =
      make_line_step(Vec2(0, 1), 0.3, amp, MatM2::Zero(1, 2), VecM::Zero(1), box);
  DeformationMap id;

  SUBCASE("identical geometry, amplitude mismatch") {
    const double ap = 0.4;
    std::vector<JumpFace> faces = {horizontal_face(0.3, 0, 1, ap, ap, Vec2(0, 1))};
    const auto jc = jump_discrepancy(f, faces, 1.0 / 8, id, g0, box);
    CHECK(jc.d1 == doctest::Approx(g0(1.0 - ap)).epsilon(1e-9));
    CHECK(jc.d2 == doctest::Approx(0.0));
    CHECK(jc.sym_diff == doctest::Approx(0.0));
    CHECK(jc.matched_length == doctest::Approx(1.0).epsilon(1e-9));
  }

  SUBCASE("opposite face orientation is re-aligned") {
    std::vector<JumpFace> faces = {horizontal_face(0.3, 0, 1, -0.4, -0.4, Vec2(0, -1))};
    const auto jc = jump_discrepancy(f, faces, 1.0 / 8, id, g0, box);
    CHECK(jc.d1 == doctest::Approx(g0(0.6)).epsilon(1e-9));
    CHECK(jc.d2 == doctest::Approx(0.0));
  }

  SUBCASE("disjoint jump sets add both lengths") {
    std::vector<JumpFace> faces = {horizontal_face(0.75, 0, 1, 0.5, 0.5, Vec2(0, 1))};
    const auto jc = jump_discrepancy(f, faces, 1.0 / 8, id, g0, box);
    CHECK(jc.sym_diff == doctest::Approx(2.0).epsilon(1e-9));
    CHECK(jc.d1 == doctest::Approx(g0(1.0) + g0(0.5)).epsilon(1e-9));
    CHECK(jc.d2 == doctest::Approx(g0(1.0) + g0(0.5)).epsilon(1e-9));
  }

  SUBCASE("translation deformation matches shifted faces") {
    DeformationMap phi;
    phi.identity = false;
    phi.forward = [](const Vec2& x) { return Vec2(x + Vec2(0, 0.1)); };
    phi.inverse = [](const Vec2& y) { return Vec2(y - Vec2(0, 0.1)); };
    std::vector<JumpFace> faces = {horizontal_face(0.4, -0.5, 1.5, 0.7, 0.7, Vec2(0, 1))};
    const auto jc = jump_discrepancy(f, faces, 1.0 / 8, phi, g0, box);
    CHECK(jc.d1 == doctest::Approx(g0(0.3)).epsilon(1e-9));
    CHECK(jc.d2 == doctest::Approx(0.0));
    CHECK(jc.sym_diff == doctest::Approx(0.0).epsilon(1e-9));
  }
}

TEST_CASE("strict metrics") {
  const Box2 box = unit_square();
  MatM2 a(1, 2);
  a << 1.2, -0.5;
  const SbvField f = make_affine(a, VecM::Zero(1));

  const auto sf = strict_metrics(f, box);
  CHECK(sf.grad_l1 == doctest::Approx(a.norm()).epsilon(1e-8));
  CHECK(sf.area == doctest::Approx(std::sqrt(1 + a.squaredNorm())).epsilon(1e-8));
  CHECK(sf.jump_var == doctest::Approx(0.0));

  const PwAffineFunction w = project(f, 0.25, Vec2(0.02, -0.01), box);
  const auto sw = strict_metrics(w, jump_faces(w, box), box);
  CHECK(sw.strict() == doctest::Approx(sf.strict()).epsilon(1e-9));
  CHECK(sw.area_strict() == doctest::Approx(sf.area_strict()).epsilon(1e-9));

  // Indicator: no gradient, jump variation close to the interface length.
  const SbvField ind = make_indicator(Vec2(0, 1), 0.43, box);
  const PwAffineFunction wi = project(ind, 1.0 / 16, Vec2(0.005, 0.009), box);
  const auto si = strict_metrics(wi, jump_faces(wi, box), box);
  CHECK(si.grad_l1 == doctest::Approx(0.0));
  CHECK(si.jump_var > 0.5);
}

TEST_CASE("bulk distance") {
  const Box2 box = unit_square();
  MatM2 a(1, 2);
  a << 0.9, 0.4;
  VecM b(1);
  b << -0.2;
  const SbvField f = make_affine(a, b);
  const PwAffineFunction w = project(f, 0.25, Vec2(0.011, 0.017), box);

  const auto same = bulk_distance(w, f, box, 2.0);
  CHECK(same.l1 == doctest::Approx(0.0).epsilon(1e-12));
  CHECK(same.lp_grad == doctest::Approx(0.0).epsilon(1e-12));

  VecM b2 = b;
  b2[0] += 0.3;
  const auto off = bulk_distance(w, make_affine(a, b2), box, 2.0);
  CHECK(off.l1 == doctest::Approx(0.3).epsilon(1e-10));
  CHECK(off.lp_grad == doctest::Approx(0.0).epsilon(1e-12));
}
