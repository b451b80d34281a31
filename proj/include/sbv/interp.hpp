#pragma once

// Discontinuous piecewise-affine interpolant on a single simplex: vertex
// values u_i and antisymmetric edge jumps s_ij determine a function affine on
// each barycentric subcell T_j, with prescribed edge traces and a jump
// bounded by 3|s| on internal faces.

#include "sbv/mesh.hpp"

namespace sbv {

template <int N>
struct CellData {
  Simplex<N> simplex;
  // Vertex values u_i, i = 0..N (rows index the codomain dimension m <= 4).
  std::array<VecM, N + 1> u;
  // Edge jumps s[i][j] = s_ij, antisymmetric; only i < j is stored.
  std::array<std::array<VecM, N + 1>, N + 1> s_upper;

  int m() const { return static_cast<int>(u[0].size()); }

  VecM s(int i, int j) const {
    if (i == j) return VecM::Zero(m());
    if (i < j) return s_upper[i][j];
    return -s_upper[j][i];
  }
  void set_s(int i, int j, const VecM& v) {
    if (i < j)
      s_upper[i][j] = v;
    else
      s_upper[j][i] = -v;
  }

  // xi_ij + s_ij = u_j - u_i; the cycle identity for (xi + s) then holds by
  // telescoping, for any data.
  VecM xi(int i, int j) const { return u[j] - u[i] - s(i, j); }

  static CellData zero(const Simplex<N>& simplex, int m) {
    CellData d;
    d.simplex = simplex;
    for (int i = 0; i < N + 1; ++i) d.u[i] = VecM::Zero(m);
    for (int i = 0; i < N + 1; ++i)
      for (int j = i + 1; j < N + 1; ++j) d.s_upper[i][j] = VecM::Zero(m);
    return d;
  }
};

template <int N>
struct CellInterpolant {
  CellData<N> data;
  Eigen::Matrix<double, N + 1, N + 1> bary;  // cached barycentric matrix
  // Per subcell j: v_j(x) = offset_j + grad_j * x, affine on T_j.
  std::array<Eigen::Matrix<double, Eigen::Dynamic, N, 0, 4, N>, N + 1> grad;
  std::array<VecM, N + 1> offset;

  int m() const { return data.m(); }

  BaryCoords<N> barycentric(const Vec<N>& x) const {
    Eigen::Matrix<double, N + 1, 1> rhs;
    rhs.template head<N>() = x;
    rhs[N] = 1;
    BaryCoords<N> b;
    b.lambda = bary * rhs;
    return b;
  }

  VecM eval_subcell(int j, const Vec<N>& x) const { return offset[j] + grad[j] * x; }

  // v_j in barycentric form: u_j + sum_{i != j} lambda_i xi_ji.
  VecM eval_subcell_bary(int j, const BaryCoords<N>& b) const {
    VecM v = data.u[j];
    for (int i = 0; i < N + 1; ++i)
      if (i != j) v += b.lambda[i] * data.xi(j, i);
    return v;
  }

  VecM eval(const Vec<N>& x) const {
    const auto b = barycentric(x);
    if (!b.inside(1e-9)) throw GeometryError("eval: point outside simplex");
    return eval_subcell(subcell_index<N>(b), x);
  }

  // One-sided evaluation: the subcell is chosen by argmax of lambda + bias,
  // letting callers probe either side of a face.
  VecM eval_from(const Vec<N>& x, const Eigen::Matrix<double, N + 1, 1>& bias) const {
    auto b = barycentric(x);
    b.lambda += bias;
    return eval_subcell(subcell_index<N>(b), x);
  }

  // Trace along edge A_i -> A_j: u_i + t xi_ij + s_ij chi_{t > 1/2}.
  VecM edge_trace(int i, int j, double t) const {
    VecM v = data.u[i] + t * data.xi(i, j);
    if (t > 0.5) v += data.s(i, j);
    return v;
  }

  // Jump across the internal face dT_i \cap dT_j at barycentric lambda,
  // signed as (side T_i) - (side T_j):
  //   (lambda_i + lambda_j) s_ji - sum_{k not in {i,j}} lambda_k (s_ik + s_kj).
  VecM face_jump(int i, int j, const BaryCoords<N>& b) const {
    if (std::abs(b.lambda[i] - b.lambda[j]) > 1e-9)
      throw GeometryError("face_jump: lambda not on the face");
    VecM v = (b.lambda[i] + b.lambda[j]) * data.s(j, i);
    for (int k = 0; k < N + 1; ++k) {
      if (k == i || k == j) continue;
      v -= b.lambda[k] * (data.s(i, k) + data.s(k, j));
    }
    return v;
  }

  double max_jump_bound() const {
    double s2 = 0;
    for (int i = 0; i < N + 1; ++i)
      for (int j = i + 1; j < N + 1; ++j) s2 += data.s(i, j).squaredNorm();
    return 3 * std::sqrt(s2);
  }
};

// G_j = A_j^{-T} (xi_ji)_{i != j}, where the matrix A_j has columns A_i - A_j.
template <int N>
CellInterpolant<N> build_interpolant(const CellData<N>& d) {
  CellInterpolant<N> c;
  c.data = d;
  c.bary = d.simplex.barycentric_matrix();
  const int m = d.m();
  for (int j = 0; j < N + 1; ++j) {
    Eigen::Matrix<double, N, N> aj;
    Eigen::Matrix<double, Eigen::Dynamic, N, 0, 4, N> xis(m, N);
    int col = 0;
    for (int i = 0; i < N + 1; ++i) {
      if (i == j) continue;
      aj.col(col) = d.simplex.vertices.col(i) - d.simplex.vertices.col(j);
      xis.col(col) = d.xi(j, i);
      ++col;
    }
    c.grad[j] = xis * aj.inverse();
    c.offset[j] = d.u[j] - c.grad[j] * Vec<N>(d.simplex.vertices.col(j));
  }
  return c;
}

// Total H^1 measure of the jump faces inside the simplex (n = 2 exact):
// faces where the affine jump map is not identically zero. The jump along
// face (i,j) is affine in lambda, so it vanishes identically iff it vanishes
// at both face endpoints.
inline double jump_set_length(const CellInterpolant<2>& c, double tol = 1e-12) {
  const auto g = subcell_geometry(c.data.simplex);
  double len = 0;
  for (const auto& f : g.faces) {
    const auto la = barycentric<2>(c.data.simplex, f.a);
    const auto lb = barycentric<2>(c.data.simplex, f.b);
    const double ja = c.face_jump(f.i, f.j, la).norm();
    const double jb = c.face_jump(f.i, f.j, lb).norm();
    if (ja > tol || jb > tol) len += (f.b - f.a).norm();
  }
  return len;
}

}  // namespace sbv
