#include "sbv/field.hpp"

#include <algorithm>

namespace sbv {

Modulus Modulus::parse(const std::string& name, double q) {
  Modulus g;
  g.q = q;
  if (name == "power")
    g.kind = Kind::Power;
  else if (name == "capped_power")
    g.kind = Kind::CappedPower;
  else if (name == "identity_augmented")
    g.kind = Kind::IdentityAugmented;
  else
    throw std::invalid_argument("unknown modulus preset: " + name);
  if (!(q > 0 && q <= 1)) throw std::invalid_argument("modulus exponent must be in (0,1]");
  return g;
}

// ---------------------------------------------------------------------------
// Slicing.

std::vector<Crossing> interface_crossings(const SbvField& f, const Vec2& a, const Vec2& b) {
  const Vec2 d = b - a;
  const double len = d.norm();
  if (len == 0) return {};
  std::vector<Crossing> out;
  for (std::size_t k = 0; k < f.interfaces.size(); ++k) {
    const Interface& itf = f.interfaces[k];
    for (const auto& [t, tau] : itf.segment_crossings(a, b)) {
      if (t <= kEndpointTol || t >= 1 - kEndpointTol) continue;
      Crossing c;
      c.t = t;
      c.tau = tau;
      c.interface_index = static_cast<int>(k);
      c.nu = itf.normal(tau);
      if (std::abs(c.nu.dot(d)) / len < kTangencyTol)
        throw DegenerateSliceError("tangential interface crossing", a, b);
      c.jump = itf.jump(tau);
      out.push_back(std::move(c));
    }
  }
  std::sort(out.begin(), out.end(), [](const Crossing& x, const Crossing& y) { return x.t < y.t; });
  return out;
}

VecM slice_jump(const SbvField& f, const Vec2& a, const Vec2& b) {
  const Vec2 d = b - a;
  VecM s = VecM::Zero(f.m);
  for (const auto& c : interface_crossings(f, a, b))
    s += (c.nu.dot(d) > 0 ? 1.0 : -1.0) * c.jump;
  return s;
}

void check_endpoints_off_interfaces(const SbvField& f, const Vec2& a, const Vec2& b) {
  const double tol = 1e-12 * std::max(1.0, (b - a).norm());
  for (const auto& itf : f.interfaces) {
    if (!itf.side) continue;
    if (std::abs(itf.side(a)) < tol || std::abs(itf.side(b)) < tol)
      throw DegenerateSliceError("slice endpoint on an interface", a, b);
  }
}

VecM slice_grad(const SbvField& f, const Vec2& a, const Vec2& b) {
  check_endpoints_off_interfaces(f, a, b);
  return f.eval(b) - f.eval(a) - slice_jump(f, a, b);
}

VecM slice_grad_oracle(const SbvField& f, const Vec2& a, const Vec2& b, double rel_tol) {
  const Vec2 d = b - a;
  std::vector<double> cuts{0, 1};
  for (const auto& c : interface_crossings(f, a, b)) cuts.push_back(c.t);
  std::sort(cuts.begin(), cuts.end());
  VecM xi = VecM::Zero(f.m);
  for (int comp = 0; comp < f.m; ++comp) {
    double v = 0;
    for (std::size_t i = 0; i + 1 < cuts.size(); ++i) {
      const double lo = cuts[i], hi = cuts[i + 1];
      if (hi - lo < 1e-14) continue;
      v += adaptive_quadrature(
          [&](double t) {
            const MatM2 g = f.grad(Vec2(a + t * d));
            return g.row(comp).dot(d);
          },
          lo, hi, rel_tol);
    }
    xi[comp] = v;
  }
  return xi;
}

// ---------------------------------------------------------------------------
// Curve integrals clipped to a box.

// Parameter sub-intervals of the curve lying inside the box, found by a
// dense scan with bisection refinement of the transitions.
std::vector<std::pair<double, double>> interface_param_intervals(const Interface& itf,
                                                                 const Box2& box) {
  constexpr int kScan = 1024;
  const double t0 = itf.tau0, t1 = itf.tau1;
  auto inside = [&](double tau) { return box.contains(itf.gamma(tau), 1e-12); };
  auto refine = [&](double lo, double hi) {
    // invariant: inside(lo) != inside(hi)
    for (int it = 0; it < 60; ++it) {
      const double mid = 0.5 * (lo + hi);
      if (inside(mid) == inside(lo))
        lo = mid;
      else
        hi = mid;
    }
    return 0.5 * (lo + hi);
  };
  std::vector<std::pair<double, double>> out;
  double open_at = 0;
  bool open = inside(t0);
  if (open) open_at = t0;
  double prev = t0;
  for (int i = 1; i <= kScan; ++i) {
    const double tau = t0 + (t1 - t0) * i / kScan;
    if (inside(tau) != open) {
      const double c = refine(prev, tau);
      if (open)
        out.emplace_back(open_at, c);
      else
        open_at = c;
      open = !open;
    }
    prev = tau;
  }
  if (open) out.emplace_back(open_at, t1);
  return out;
}

namespace {

double curve_integral(const Interface& itf, const Box2& region,
                      const std::function<double(double)>& density, double rel_tol) {
  auto speed = [&](double tau) {
    const double h = 1e-6 * std::max(1.0, std::abs(itf.tau1 - itf.tau0));
    return (itf.gamma(tau + h) - itf.gamma(tau - h)).norm() / (2 * h);
  };
  double total = 0;
  for (const auto& [lo, hi] : interface_param_intervals(itf, region)) {
    if (hi - lo < 1e-13) continue;
    total += adaptive_quadrature([&](double tau) { return density(tau) * speed(tau); }, lo, hi,
                                 rel_tol);
  }
  return total;
}

}  // namespace

double g0_jump_energy(const SbvField& f, const Modulus& g0, const Box2& region, double rel_tol) {
  double total = 0;
  for (const auto& itf : f.interfaces)
    total += curve_integral(itf, region, [&](double tau) { return g0(itf.jump(tau).norm()); },
                            rel_tol);
  return total;
}

double interface_length(const SbvField& f, const Box2& region, double rel_tol) {
  double total = 0;
  for (const auto& itf : f.interfaces)
    total += curve_integral(itf, region, [](double) { return 1.0; }, rel_tol);
  return total;
}

double jump_variation(const SbvField& f, const Box2& region, double rel_tol) {
  double total = 0;
  for (const auto& itf : f.interfaces)
    total += curve_integral(itf, region, [&](double tau) { return itf.jump(tau).norm(); },
                            rel_tol);
  return total;
}

SbvField translate(const SbvField& f, const Vec2& v) {
  SbvField g;
  g.m = f.m;
  if (f.domain) {
    Box2 d = *f.domain;
    d.lo += v;
    d.hi += v;
    g.domain = d;
  }
  auto ev = f.eval;
  auto gr = f.grad;
  g.eval = [ev, v](const Vec2& x) { return ev(Vec2(x - v)); };
  g.grad = [gr, v](const Vec2& x) { return gr(Vec2(x - v)); };
  for (const auto& itf : f.interfaces) {
    Interface t = itf;
    auto gamma = itf.gamma;
    t.gamma = [gamma, v](double tau) { return Vec2(gamma(tau) + v); };
    auto plus = itf.eval_plus;
    auto minus = itf.eval_minus;
    t.eval_plus = [plus, v](const Vec2& x) { return plus(Vec2(x - v)); };
    t.eval_minus = [minus, v](const Vec2& x) { return minus(Vec2(x - v)); };
    if (itf.grad_plus) {
      auto gp = itf.grad_plus;
      t.grad_plus = [gp, v](const Vec2& x) { return gp(Vec2(x - v)); };
    }
    if (itf.grad_minus) {
      auto gm = itf.grad_minus;
      t.grad_minus = [gm, v](const Vec2& x) { return gm(Vec2(x - v)); };
    }
    auto side = itf.side;
    if (side) t.side = [side, v](const Vec2& x) { return side(Vec2(x - v)); };
    auto dist = itf.distance;
    if (dist) t.distance = [dist, v](const Vec2& x) { return dist(Vec2(x - v)); };
    auto cross = itf.segment_crossings;
    t.segment_crossings = [cross, v](const Vec2& a, const Vec2& b) {
      return cross(Vec2(a - v), Vec2(b - v));
    };
    g.interfaces.push_back(std::move(t));
  }
  return g;
}

// ---------------------------------------------------------------------------
// Truncation.

namespace {

// Radial profile: identity up to lo, then a linear ramp down to zero. The
// ramp has slope -1 when hi >= 2 lo (reaching zero at 2 lo); otherwise it
// must be steeper to reach zero by hi, and the contraction property fails.
double profile(double t, double lo, double hi) {
  if (t <= lo) return t;
  const double zero_at = std::min(hi, 2 * lo);
  if (t >= zero_at) return 0;
  return lo * (zero_at - t) / (zero_at - lo);
}

double profile_deriv(double t, double lo, double hi) {
  if (t <= lo) return 1;
  const double zero_at = std::min(hi, 2 * lo);
  if (t >= zero_at) return 0;
  return -lo / (zero_at - lo);
}

VecM apply_truncation(const VecM& z, double lo, double hi) {
  const double r = z.norm();
  if (r < 1e-300) return z;
  return (profile(r, lo, hi) / r) * z;
}

// D T(z) = h'(r) P + (h(r)/r)(I - P), P the projector onto z.
Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, 0, 4, 4> truncation_jacobian(
    const VecM& z, double lo, double hi) {
  const int m = static_cast<int>(z.size());
  using MatMM = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, 0, 4, 4>;
  const double r = z.norm();
  if (r <= lo || r < 1e-300) return MatMM::Identity(m, m);
  const VecM zh = z / r;
  MatMM p = zh * zh.transpose();
  return profile_deriv(r, lo, hi) * p + (profile(r, lo, hi) / r) * (MatMM::Identity(m, m) - p);
}

}  // namespace

double truncation_profile_slope(double lo, double hi) {
  double worst = 0;
  for (int i = 0; i <= 4000; ++i) {
    const double t = lo * 0.5 + (hi - lo * 0.5) * i / 4000.0;
    worst = std::max(worst, std::abs(profile_deriv(t, lo, hi)));
  }
  return worst;
}

SbvField truncate(const SbvField& f, double lo, double hi) {
  if (!(lo < hi)) throw std::invalid_argument("truncate: requires lo < hi");
  SbvField g;
  g.m = f.m;
  g.domain = f.domain;
  auto base_eval = f.eval;
  auto base_grad = f.grad;
  g.eval = [base_eval, lo, hi](const Vec2& x) { return apply_truncation(base_eval(x), lo, hi); };
  g.grad = [base_eval, base_grad, lo, hi](const Vec2& x) {
    return MatM2(truncation_jacobian(base_eval(x), lo, hi) * base_grad(x));
  };
  for (const auto& itf : f.interfaces) {
    Interface t = itf;
    auto plus = itf.eval_plus;
    auto minus = itf.eval_minus;
    t.eval_plus = [plus, lo, hi](const Vec2& x) { return apply_truncation(plus(x), lo, hi); };
    t.eval_minus = [minus, lo, hi](const Vec2& x) { return apply_truncation(minus(x), lo, hi); };
    auto gp = itf.grad_plus;
    auto gm = itf.grad_minus;
    if (gp)
      t.grad_plus = [plus, gp, lo, hi](const Vec2& x) {
        return MatM2(truncation_jacobian(plus(x), lo, hi) * gp(x));
      };
    if (gm)
      t.grad_minus = [minus, gm, lo, hi](const Vec2& x) {
        return MatM2(truncation_jacobian(minus(x), lo, hi) * gm(x));
      };
    auto gamma = itf.gamma;
    t.jump = [gamma, plus, minus, lo, hi](double tau) {
      const Vec2 x = gamma(tau);
      return VecM(apply_truncation(plus(x), lo, hi) - apply_truncation(minus(x), lo, hi));
    };
    g.interfaces.push_back(std::move(t));
  }
  return g;
}

// ---------------------------------------------------------------------------
// Presets.

namespace {

// Straight-line interface through p0 with unit tangent tan and normal nu,
// covering tau in [tau0, tau1].
Interface make_line_interface(const Vec2& p0, const Vec2& tan, const Vec2& nu, double tau0,
                              double tau1) {
  Interface itf;
  itf.tau0 = tau0;
  itf.tau1 = tau1;
  itf.gamma = [p0, tan](double tau) { return Vec2(p0 + tau * tan); };
  itf.normal = [nu](double) { return nu; };
  itf.side = [p0, nu](const Vec2& x) { return nu.dot(x - p0); };
  itf.distance = [p0, nu](const Vec2& x) { return std::abs(nu.dot(x - p0)); };
  itf.segment_crossings = [p0, tan, nu, tau0, tau1](const Vec2& a, const Vec2& b) {
    std::vector<std::pair<double, double>> out;
    const Vec2 d = b - a;
    const double denom = nu.dot(d);
    const double offset = nu.dot(p0 - a);
    if (std::abs(denom) < 1e-300) return out;
    const double t = offset / denom;
    if (t < -1e-12 || t > 1 + 1e-12) return out;
    const double tau = tan.dot(Vec2(a + t * d) - p0);
    if (tau < tau0 - 1e-12 || tau > tau1 + 1e-12) return out;
    out.emplace_back(t, tau);
    return out;
  };
  return itf;
}

double domain_halfspan(const Box2& domain) {
  return 0.5 * (domain.hi - domain.lo).norm() + 1.0;
}

}  // namespace

SbvField make_affine(const MatM2& a, const VecM& b) {
  SbvField f;
  f.m = static_cast<int>(b.size());
  f.eval = [a, b](const Vec2& x) { return VecM(a * x + b); };
  f.grad = [a](const Vec2&) { return a; };
  return f;
}

SbvField make_line_step(const Vec2& n, double c, const VecM& amplitude, const MatM2& bg_a,
                        const VecM& bg_b, const Box2& domain) {
  const Vec2 nu = n.normalized();
  const double cc = c / n.norm();
  const Vec2 tan(-nu.y(), nu.x());
  SbvField f;
  f.m = static_cast<int>(amplitude.size());
  f.domain = domain;
  f.eval = [nu, cc, amplitude, bg_a, bg_b](const Vec2& x) {
    VecM v = bg_a * x + bg_b;
    if (nu.dot(x) > cc) v += amplitude;
    return v;
  };
  f.grad = [bg_a](const Vec2&) { return bg_a; };

  const Vec2 p0 = cc * nu;
  const double span = domain_halfspan(domain) + std::abs(tan.dot(domain.center() - p0));
  Interface itf = make_line_interface(p0, tan, nu, -span, span);
  itf.jump = [amplitude](double) { return amplitude; };
  itf.eval_plus = [bg_a, bg_b, amplitude](const Vec2& x) { return VecM(bg_a * x + bg_b + amplitude); };
  itf.eval_minus = [bg_a, bg_b](const Vec2& x) { return VecM(bg_a * x + bg_b); };
  itf.grad_plus = [bg_a](const Vec2&) { return bg_a; };
  itf.grad_minus = [bg_a](const Vec2&) { return bg_a; };
  itf.tube_width = std::numeric_limits<double>::infinity();
  f.interfaces.push_back(std::move(itf));
  return f;
}

SbvField make_indicator(const Vec2& n, double c, const Box2& domain) {
  VecM amp(1);
  amp << 1;
  MatM2 a = MatM2::Zero(1, 2);
  VecM b = VecM::Zero(1);
  return make_line_step(n, c, amp, a, b, domain);
}

SbvField make_graph_step(const std::function<double(double)>& phi,
                         const std::function<double(double)>& dphi, const VecM& amplitude,
                         const MatM2& bg_a, const VecM& bg_b, const Box2& domain) {
  SbvField f;
  f.m = static_cast<int>(amplitude.size());
  f.domain = domain;
  f.eval = [phi, amplitude, bg_a, bg_b](const Vec2& x) {
    VecM v = bg_a * x + bg_b;
    if (x.y() > phi(x.x())) v += amplitude;
    return v;
  };
  f.grad = [bg_a](const Vec2&) { return bg_a; };

  Interface itf;
  const double margin = 2.0;
  itf.tau0 = domain.lo.x() - margin;
  itf.tau1 = domain.hi.x() + margin;
  itf.gamma = [phi](double tau) { return Vec2(tau, phi(tau)); };
  itf.normal = [dphi](double tau) {
    const Vec2 n(-dphi(tau), 1);
    return Vec2(n.normalized());
  };
  itf.jump = [amplitude](double) { return amplitude; };
  itf.eval_plus = [bg_a, bg_b, amplitude](const Vec2& x) { return VecM(bg_a * x + bg_b + amplitude); };
  itf.eval_minus = [bg_a, bg_b](const Vec2& x) { return VecM(bg_a * x + bg_b); };
  itf.grad_plus = [bg_a](const Vec2&) { return bg_a; };
  itf.grad_minus = [bg_a](const Vec2&) { return bg_a; };
  itf.tube_width = std::numeric_limits<double>::infinity();
  itf.side = [phi](const Vec2& x) { return x.y() - phi(x.x()); };
  itf.distance = [phi, dphi](const Vec2& x) {
    const double d = dphi(x.x());
    return std::abs(x.y() - phi(x.x())) / std::sqrt(1 + d * d);
  };
  itf.segment_crossings = [phi](const Vec2& a, const Vec2& b) {
    std::vector<std::pair<double, double>> out;
    const Vec2 d = b - a;
    auto psi = [&](double t) { return a.y() + t * d.y() - phi(a.x() + t * d.x()); };
    constexpr int kScan = 256;
    double prev_t = 0;
    double prev_v = psi(0);
    for (int i = 1; i <= kScan; ++i) {
      const double t = static_cast<double>(i) / kScan;
      const double v = psi(t);
      if ((prev_v < 0 && v >= 0) || (prev_v >= 0 && v < 0)) {
        double lo = prev_t, hi = t, flo = prev_v;
        for (int it = 0; it < 80; ++it) {
          const double mid = 0.5 * (lo + hi);
          const double fm = psi(mid);
          if ((flo < 0) == (fm < 0)) {
            lo = mid;
            flo = fm;
          } else {
            hi = mid;
          }
        }
        const double t_root = 0.5 * (lo + hi);
        out.emplace_back(t_root, a.x() + t_root * d.x());
      }
      prev_t = t;
      prev_v = v;
    }
    return out;
  };
  f.interfaces.push_back(std::move(itf));
  return f;
}

SbvField make_smooth_plus_jump(const Vec2& n, double c, double amplitude, const Box2& domain) {
  VecM amp(1);
  amp << amplitude;
  MatM2 za = MatM2::Zero(1, 2);
  VecM zb = VecM::Zero(1);
  SbvField f = make_line_step(n, c, amp, za, zb, domain);
  auto smooth = [](const Vec2& x) {
    VecM v(1);
    v << 0.3 * std::sin(M_PI * x.x()) * std::cos(M_PI * x.y());
    return v;
  };
  auto smooth_grad = [](const Vec2& x) {
    MatM2 g(1, 2);
    g(0, 0) = 0.3 * M_PI * std::cos(M_PI * x.x()) * std::cos(M_PI * x.y());
    g(0, 1) = -0.3 * M_PI * std::sin(M_PI * x.x()) * std::sin(M_PI * x.y());
    return g;
  };
  auto step_eval = f.eval;
  f.eval = [step_eval, smooth](const Vec2& x) { return VecM(step_eval(x) + smooth(x)); };
  f.grad = smooth_grad;
  Interface& itf = f.interfaces[0];
  auto plus = itf.eval_plus;
  auto minus = itf.eval_minus;
  itf.eval_plus = [plus, smooth](const Vec2& x) { return VecM(plus(x) + smooth(x)); };
  itf.eval_minus = [minus, smooth](const Vec2& x) { return VecM(minus(x) + smooth(x)); };
  itf.grad_plus = smooth_grad;
  itf.grad_minus = smooth_grad;
  return f;
}

SbvField make_stacked_lines(int k_count, const std::function<double(int)>& a_k,
                            const Box2& domain) {
  std::vector<double> levels(static_cast<std::size_t>(k_count));
  std::vector<double> amps(static_cast<std::size_t>(k_count));
  for (int k = 1; k <= k_count; ++k) {
    levels[static_cast<std::size_t>(k - 1)] = 1.0 / k;
    amps[static_cast<std::size_t>(k - 1)] = a_k(k);
  }
  SbvField f;
  f.m = 1;
  f.domain = domain;
  f.eval = [levels, amps](const Vec2& x) {
    double v = 0;
    for (std::size_t i = 0; i < levels.size(); ++i)
      if (x.y() > levels[i]) v += amps[i];
    VecM out(1);
    out << v;
    return out;
  };
  f.grad = [](const Vec2&) { return MatM2(MatM2::Zero(1, 2)); };

  const double x_lo = domain.lo.x() - 1, x_hi = domain.hi.x() + 1;
  for (int k = 1; k <= k_count; ++k) {
    const double y = levels[static_cast<std::size_t>(k - 1)];
    const double amp = amps[static_cast<std::size_t>(k - 1)];
    Interface itf = make_line_interface(Vec2(0, y), Vec2(1, 0), Vec2(0, 1), x_lo, x_hi);
    VecM jmp(1);
    jmp << amp;
    itf.jump = [jmp](double) { return jmp; };
    // Two-sided extensions: the field with line k forced to its given side.
    itf.eval_plus = [levels, amps, k](const Vec2& x) {
      double v = amps[static_cast<std::size_t>(k - 1)];
      for (std::size_t i = 0; i < levels.size(); ++i)
        if (i != static_cast<std::size_t>(k - 1) && x.y() > levels[i]) v += amps[i];
      VecM out(1);
      out << v;
      return out;
    };
    itf.eval_minus = [levels, amps, k](const Vec2& x) {
      double v = 0;
      for (std::size_t i = 0; i < levels.size(); ++i)
        if (i != static_cast<std::size_t>(k - 1) && x.y() > levels[i]) v += amps[i];
      VecM out(1);
      out << v;
      return out;
    };
    itf.grad_plus = [](const Vec2&) { return MatM2(MatM2::Zero(1, 2)); };
    itf.grad_minus = [](const Vec2&) { return MatM2(MatM2::Zero(1, 2)); };
    // Keep the extensions single-valued: stay below the neighbouring lines.
    double width = std::numeric_limits<double>::infinity();
    if (k > 1) width = std::min(width, 1.0 / (k - 1) - y);
    if (k < k_count) width = std::min(width, y - 1.0 / (k + 1));
    itf.tube_width = 0.5 * width;
    f.interfaces.push_back(std::move(itf));
  }
  return f;
}

SbvField make_sawtooth(int j, const Box2& domain) {
  SbvField f;
  f.m = 1;
  f.domain = domain;
  const double jd = j;
  f.eval = [jd](const Vec2& x) {
    double t = jd * x.x();
    t -= std::floor(t);
    VecM out(1);
    out << t / jd;
    return out;
  };
  f.grad = [](const Vec2&) {
    MatM2 g(1, 2);
    g << 1, 0;
    return g;
  };
  const double y_lo = domain.lo.y() - 1, y_hi = domain.hi.y() + 1;
  const std::int64_t k_lo = static_cast<std::int64_t>(std::ceil(jd * domain.lo.x() - 1));
  const std::int64_t k_hi = static_cast<std::int64_t>(std::floor(jd * domain.hi.x() + 1));
  for (std::int64_t k = k_lo; k <= k_hi; ++k) {
    const double c = static_cast<double>(k) / jd;
    Interface itf = make_line_interface(Vec2(c, 0), Vec2(0, 1), Vec2(1, 0), y_lo, y_hi);
    VecM jmp(1);
    jmp << -1.0 / jd;
    itf.jump = [jmp](double) { return jmp; };
    itf.eval_plus = [c](const Vec2& x) {
      VecM out(1);
      out << x.x() - c;
      return out;
    };
    itf.eval_minus = [c, jd](const Vec2& x) {
      VecM out(1);
      out << x.x() - c + 1.0 / jd;
      return out;
    };
    auto e1 = [](const Vec2&) {
      MatM2 g(1, 2);
      g << 1, 0;
      return g;
    };
    itf.grad_plus = e1;
    itf.grad_minus = e1;
    itf.tube_width = 0.5 / jd;
    f.interfaces.push_back(std::move(itf));
  }
  return f;
}

}  // namespace sbv
