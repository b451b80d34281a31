#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "sbv/field.hpp"

using namespace sbv;

namespace {

Box2 unit_box() {
  Box2 b;
  b.lo = Vec2(0, 0);
  b.hi = Vec2(1, 1);
  return b;
}

// u = 2 chi_{x > 0.5} + y.
SbvField step_plus_y() {
  VecM amp(1);
  amp << 2;
  MatM2 a(1, 2);
  a << 0, 1;
  VecM b = VecM::Zero(1);
  return make_line_step(Vec2(1, 0), 0.5, amp, a, b, unit_box());
}

}  // namespace

TEST_CASE("modulus presets: monotone, subadditive, zero only at zero") {
  Rng rng(3);
  std::uniform_real_distribution<double> uni(0, 5);
  for (const auto& g0 : {Modulus::parse("power", 0.5), Modulus::parse("capped_power", 0.5),
                         Modulus::parse("identity_augmented", 0.7)}) {
    CHECK(g0(0) == 0);
    CHECK(g0(1e-9) > 0);
    double prev = 0;
    for (int i = 1; i <= 100; ++i) {
      const double v = g0(5.0 * i / 100);
      CHECK(v >= prev - 1e-15);
      prev = v;
    }
    for (int k = 0; k < 10000; ++k) {
      const double a = uni(rng), b = uni(rng);
      CHECK(g0(a + b) <= g0(a) + g0(b) + 1e-12);
    }
  }
}

TEST_CASE("slice_jump on a vertical line step") {
  const auto f = step_plus_y();
  VecM s = slice_jump(f, Vec2(0, 0), Vec2(1, 1));
  CHECK(s[0] == doctest::Approx(2).epsilon(1e-12));
  s = slice_jump(f, Vec2(1, 1), Vec2(0, 0));
  CHECK(s[0] == doctest::Approx(-2).epsilon(1e-12));
  s = slice_jump(f, Vec2(0.2, 0), Vec2(0.2, 1));
  CHECK(std::abs(s[0]) < 1e-15);
}

TEST_CASE("slice_grad and its quadrature oracle") {
  const auto f = step_plus_y();
  const VecM xi = slice_grad(f, Vec2(0, 0), Vec2(1, 1));
  CHECK(xi[0] == doctest::Approx(1).epsilon(1e-12));
  const VecM oracle = slice_grad_oracle(f, Vec2(0, 0), Vec2(1, 1));
  CHECK(oracle[0] == doctest::Approx(1).epsilon(1e-6));

  // Affine field: xi = A (b - a), s = 0.
  MatM2 a(2, 2);
  a << 1, 2, -0.5, 0.3;
  VecM b(2);
  b << 0.1, 0.2;
  const auto g = make_affine(a, b);
  const Vec2 pa(0.1, 0.4), pb(0.9, -0.2);
  CHECK((slice_grad(g, pa, pb) - VecM(a * (pb - pa))).norm() < 1e-12);
  CHECK(slice_jump(g, pa, pb).norm() == 0);

  // Pure step: xi = 0 on every segment.
  const auto ind = make_indicator(Vec2(1, 0), 0.3, unit_box());
  CHECK(slice_grad(ind, Vec2(0.1, 0.1), Vec2(0.8, 0.9)).norm() < 1e-12);
}

TEST_CASE("tangential crossings raise the degenerate-slice error") {
  const auto f = step_plus_y();
  CHECK_THROWS_AS((void)slice_jump(f, Vec2(0.5 - 1e-12, 0.1), Vec2(0.5 + 1e-12, 0.9)),
                  DegenerateSliceError);
  CHECK_THROWS_AS((void)slice_grad(f, Vec2(0.5, 0.1), Vec2(0.9, 0.9)), DegenerateSliceError);
}

TEST_CASE("stacked-lines crossings along a vertical segment") {
  const auto f = make_stacked_lines(3, [](int) { return 1.0; }, unit_box());
  // Lines at y = 1, 1/2, 1/3. Segment from (0.3, 0) to (0.3, 1): the y = 1
  // endpoint is excluded.
  const auto xs = interface_crossings(f, Vec2(0.3, 0), Vec2(0.3, 1));
  REQUIRE(xs.size() == 2);
  CHECK(xs[0].t == doctest::Approx(1.0 / 3).epsilon(1e-12));
  CHECK(xs[1].t == doctest::Approx(1.0 / 2).epsilon(1e-12));

  const auto none = interface_crossings(make_affine(MatM2::Zero(1, 2), VecM::Zero(1)),
                                        Vec2(0, 0), Vec2(1, 1));
  CHECK(none.empty());
}

TEST_CASE("graph interface crossed twice by one segment") {
  VecM amp(1);
  amp << 1;
  const auto f = make_graph_step([](double x) { return 0.5 + 0.3 * std::sin(2 * M_PI * x); },
                                 [](double x) { return 0.6 * M_PI * std::cos(2 * M_PI * x); },
                                 amp, MatM2::Zero(1, 2), VecM::Zero(1), unit_box());
  // Horizontal segment at y = 0.6 from x=0.05 to x=0.45 crosses up then down.
  const auto xs = interface_crossings(f, Vec2(0.05, 0.6), Vec2(0.45, 0.6));
  REQUIRE(xs.size() == 2);
  const Vec2 d(1, 0);
  CHECK(xs[0].nu.dot(d) * xs[1].nu.dot(d) < 0);
  CHECK(slice_jump(f, Vec2(0.05, 0.6), Vec2(0.45, 0.6)).norm() < 1e-12);
}

TEST_CASE("g0 jump energy closed forms") {
  const auto g0 = Modulus::parse("capped_power", 0.5);
  {
    VecM amp(1);
    amp << 1;
    const auto f =
        make_line_step(Vec2(1, 0), 0.5, amp, MatM2::Zero(1, 2), VecM::Zero(1), unit_box());
    CHECK(g0_jump_energy(f, g0, unit_box()) == doctest::Approx(1.0).epsilon(1e-6));
  }
  {
    VecM amp = VecM::Zero(1);
    const auto f =
        make_line_step(Vec2(1, 0), 0.5, amp, MatM2::Zero(1, 2), VecM::Zero(1), unit_box());
    CHECK(g0_jump_energy(f, g0, unit_box()) < 1e-12);
  }
  {
    const auto sqrtmod = Modulus::parse("power", 0.5);
    const auto f = make_stacked_lines(
        100, [](int k) { return std::pow(static_cast<double>(k), -3.0); }, unit_box());
    double oracle = 0;
    for (int k = 1; k <= 100; ++k) oracle += std::pow(static_cast<double>(k), -1.5);
    CHECK(g0_jump_energy(f, sqrtmod, unit_box()) == doctest::Approx(oracle).epsilon(1e-6));
  }
}

TEST_CASE("slicing additivity and the cycle identity") {
  const auto f = step_plus_y();
  Rng rng(11);
  std::uniform_real_distribution<double> uni(0.01, 0.99);
  int done = 0;
  while (done < 1000) {
    Vec2 a(uni(rng), uni(rng)), b(uni(rng), uni(rng)), c(uni(rng), uni(rng));
    try {
      const VecM sab = slice_jump(f, a, b), sbc = slice_jump(f, b, c), sca = slice_jump(f, c, a);
      const VecM xab = slice_grad(f, a, b), xbc = slice_grad(f, b, c), xca = slice_grad(f, c, a);
      CHECK((sab + sbc + sca + xab + xbc + xca).norm() < 1e-8);
      // Additivity of s through the midpoint of a -> b.
      const Vec2 mid = 0.5 * (a + b);
      if (std::abs(mid.x() - 0.5) > 1e-6) {
        const VecM split = slice_jump(f, a, mid) + slice_jump(f, mid, b);
        CHECK((split - sab).norm() < 1e-12);
      }
      ++done;
    } catch (const DegenerateSliceError&) {
      continue;
    }
  }
}

TEST_CASE("oracle match across presets on random segments") {
  Rng rng(13);
  std::uniform_real_distribution<double> uni(0.05, 0.95);
  VecM amp(1);
  amp << 0.7;
  MatM2 bg(1, 2);
  bg << 0.4, -0.2;
  std::vector<SbvField> presets;
  presets.push_back(make_line_step(Vec2(0.8, 0.6), 0.4, amp, bg, VecM::Zero(1), unit_box()));
  presets.push_back(make_graph_step([](double x) { return 0.3 + 0.1 * std::sin(2 * M_PI * x); },
                                    [](double x) { return 0.2 * M_PI * std::cos(2 * M_PI * x); },
                                    amp, bg, VecM::Zero(1), unit_box()));
  presets.push_back(make_smooth_plus_jump(Vec2(1, 0), 0.5, 1.0, unit_box()));
  presets.push_back(make_sawtooth(8, unit_box()));
  for (const auto& f : presets) {
    int done = 0;
    while (done < 250) {
      const Vec2 a(uni(rng), uni(rng)), b(uni(rng), uni(rng));
      try {
        const VecM xi = slice_grad(f, a, b);
        const VecM oracle = slice_grad_oracle(f, a, b);
        CHECK((xi - oracle).norm() < 1e-6 * std::max(1.0, oracle.norm()));
        ++done;
      } catch (const DegenerateSliceError&) {
        continue;
      }
    }
  }
}

TEST_CASE("two-sided extensions agree with the field on their side") {
  VecM amp(1);
  amp << 0.7;
  MatM2 bg(1, 2);
  bg << 0.4, -0.2;
  const auto f = make_graph_step([](double x) { return 0.3 + 0.1 * std::sin(2 * M_PI * x); },
                                 [](double x) { return 0.2 * M_PI * std::cos(2 * M_PI * x); },
                                 amp, bg, VecM::Zero(1), unit_box());
  const auto& itf = f.interfaces[0];
  for (int k = 0; k < 100; ++k) {
    const double tau = 0.05 + 0.9 * k / 100.0;
    const Vec2 p = itf.gamma(tau);
    const Vec2 nu = itf.normal(tau);
    const Vec2 above = p + 0.01 * nu, below = p - 0.01 * nu;
    CHECK((itf.eval_plus(above) - f.eval(above)).norm() < 1e-8);
    CHECK((itf.eval_minus(below) - f.eval(below)).norm() < 1e-8);
    CHECK((itf.eval_plus(p) - itf.eval_minus(p) - itf.jump(tau)).norm() < 1e-8);
  }
}

TEST_CASE("truncation operator") {
  {
    MatM2 a(1, 2);
    a << 0.3, 0.1;
    VecM b(1);
    b << 0.1;
    const auto f = make_affine(a, b);  // bounded by ~0.6 on the unit box
    const auto t = truncate(f, 1.0, 3.0);
    for (const Vec2& x : {Vec2(0.1, 0.2), Vec2(0.9, 0.8)})
      CHECK((t.eval(x) - f.eval(x)).norm() < 1e-12);
  }
  {
    VecM b(1);
    b << 6.0;  // 2 * hi
    const auto f = make_affine(MatM2::Zero(1, 2), b);
    const auto t = truncate(f, 1.0, 3.0);
    CHECK(t.eval(Vec2(0.5, 0.5)).norm() < 1e-12);
  }
  {
    // Amplitude between thresholds: reduced, |[.]| <= amplitude.
    VecM amp(1);
    amp << 1.5;
    const auto f =
        make_line_step(Vec2(1, 0), 0.5, amp, MatM2::Zero(1, 2), VecM::Zero(1), unit_box());
    const auto t = truncate(f, 1.0, 3.0);
    const double tj = std::abs(t.interfaces[0].jump(0.0)[0]);
    CHECK(tj <= 1.5 + 1e-12);
    CHECK(tj > 0);
  }
  // Slope bound of the profile: |h'| <= 1 exactly when hi >= 2 lo.
  CHECK(truncation_profile_slope(1.0, 3.0) <= 1.0 + 1e-9);
  CHECK(truncation_profile_slope(1.0, 2.0) <= 1.0 + 1e-9);
  CHECK(truncation_profile_slope(1.0, 1.5) > 1.0);

  // Gradient contraction |grad T u| <= |grad u| on samples.
  MatM2 a(1, 2);
  a << 2.0, 1.0;
  const auto f = make_affine(a, VecM::Zero(1));
  const auto t = truncate(f, 0.5, 1.5);
  Rng rng(7);
  std::uniform_real_distribution<double> uni(-1, 1);
  for (int k = 0; k < 200; ++k) {
    const Vec2 x(uni(rng), uni(rng));
    CHECK(t.grad(x).norm() <= f.grad(x).norm() + 1e-10);
  }
}

TEST_CASE("translation carries interfaces along") {
  const auto f = step_plus_y();
  const Vec2 v(0.3, -0.2);
  const auto g = translate(f, v);
  const Vec2 x(0.7, 0.4);
  CHECK((g.eval(Vec2(x + v)) - f.eval(x)).norm() < 1e-12);
  const VecM s = slice_jump(g, Vec2(v + Vec2(0, 0)), Vec2(v + Vec2(1, 1)));
  CHECK(s[0] == doctest::Approx(2).epsilon(1e-12));
}
