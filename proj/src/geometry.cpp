#include "sbv/geometry.hpp"

namespace sbv {

namespace {

double gl5(const std::function<double(double)>& f, double a, double b) {
  const auto& x = Gauss5::nodes();
  const auto& w = Gauss5::weights();
  double s = 0;
  for (int i = 0; i < Gauss5::n; ++i) s += w[i] * f(a + (b - a) * x[i]);
  return s * (b - a);
}

double adaptive_rec(const std::function<double(double)>& f, double a, double b, double whole,
                    double tol, int depth) {
  const double m = 0.5 * (a + b);
  const double left = gl5(f, a, m);
  const double right = gl5(f, m, b);
  const double delta = left + right - whole;
  if (depth <= 0 || std::abs(delta) <= tol) return left + right;
  return adaptive_rec(f, a, m, left, 0.5 * tol, depth - 1) +
         adaptive_rec(f, m, b, right, 0.5 * tol, depth - 1);
}

}  // namespace

double adaptive_quadrature(const std::function<double(double)>& f, double a, double b,
                           double rel_tol, int max_depth) {
  const double whole = gl5(f, a, b);
  const double scale = std::max(std::abs(whole), 1e-300);
  return adaptive_rec(f, a, b, whole, rel_tol * scale, max_depth);
}

double gauss2d(const std::function<double(const Vec2&)>& f, const Box2& box) {
  static const double x3[3] = {0.1127016653792583, 0.5, 0.8872983346207417};
  static const double w3[3] = {5.0 / 18.0, 8.0 / 18.0, 5.0 / 18.0};
  double s = 0;
  for (int i = 0; i < 3; ++i)
    for (int j = 0; j < 3; ++j) {
      const Vec2 p(box.lo.x() + (box.hi.x() - box.lo.x()) * x3[i],
                   box.lo.y() + (box.hi.y() - box.lo.y()) * x3[j]);
      s += w3[i] * w3[j] * f(p);
    }
  return s * box.volume();
}

}  // namespace sbv
