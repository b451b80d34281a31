#pragma once

// Multiscale construction of piecewise-affine approximants: cube-scale
// analysis of the field (per-cube gradient/interface fits), piecewise-linear
// interface graphs on the projection grid, the bump-function deformation
// carrying the fitted graphs onto their linearizations, split projection
// glued along the linearized interfaces, shift selection, and the ladder
// driver that produces one metrics row per scale level.

#include "sbv/boundary.hpp"
#include "sbv/energy.hpp"

#include <map>
#include <unordered_map>

namespace sbv {

enum class CubeClass {
  NoInterface,    // interior cube, no jump set nearby: plain projection
  Fitted,         // interior cube with a dominant interface and accepted fit
  Projection,     // interior cube whose jump set resists a single-graph fit
  BoundaryLayer,  // cube near (or outside) the domain boundary
};

// One cube of the shifted lattice together with its local fit: rotated frame
// (anchor + tangent/normal axes), mean gradient, mean jump, and the interface
// graph h = phi(t) sampled in the frame (cubic interpolation of a uniform
// node table, constant beyond the sampled range).
struct CubeFrame {
  std::array<std::int64_t, 2> index{};  // lattice index of the cube
  Vec2 center = Vec2::Zero();
  Box2 q, q_star, q_mid, q_inner;  // Q (side delta), Q* (2 delta), Q'' and Q'
  CubeClass cls = CubeClass::NoInterface;
  int interface_index = -1;       // dominant interface for Fitted cubes
  std::vector<int> near_ifaces;   // interfaces with mass inside Q*
  double dominant_mass = 0;

  Vec2 anchor = Vec2::Zero();             // x_z, a point on the fitted line
  Eigen::Matrix2d rot = Eigen::Matrix2d::Identity();  // columns: tangent, normal
  VecM s;     // mean jump along the fitted interface in Q*
  MatM2 eta;  // mean gradient over off-interface samples in Q*

  double t_lo = 0, t_hi = 0, dt = 0;  // phi node table over [t_lo, t_hi]
  std::vector<double> phi_nodes;
  double dphi_sup = 0;  // measured max |phi'| over the cube's t-range

  Vec2 frame_coords(const Vec2& x) const { return Vec2(rot.transpose() * (x - anchor)); }
  Vec2 from_frame(double t, double h) const { return Vec2(anchor + rot * Vec2(t, h)); }
  double phi(double t) const;
  double dphi(double t) const;
};

struct AnalysisOptions {
  // Residual acceptance: each of the four per-scale residual sums must stay
  // below residual_multiple * theta * (1 + mu_u(region) + |region|).
  double residual_multiple = 0.25;
  // Q_z \ Q'_z interface mass budget: ring_multiple * theta * (1 + mu + area).
  double ring_multiple = 0.25;
  const LipschitzDomain* domain = nullptr;  // boundary-layer classification
  double delta0 = 0;                        // first candidate (default theta)
  double min_delta_factor = 1e-4;           // underflow at min_delta_factor * diam
  double p = 2;                             // exponent of the gradient residual
  Modulus g0;                               // weighs interface mass in residuals
};

struct ScaleAnalysis {
  double theta = 0;
  double delta = 0;        // accepted cube side
  double delta_inner = 0;  // side of Q' after the ring-budget adjustment
  Vec2 gamma = Vec2::Zero();  // lattice offset, |gamma| < delta / 4
  Box2 region;
  int halvings = 0;
  // Residual sums at acceptance: gradient Lp deviation, off-line g0 mass,
  // normal deviation, jump-amplitude deviation.
  std::array<double, 4> residuals{};
  double residual_budget = 0;
  double mu_total = 0;  // g0 interface mass of the whole region

  std::vector<CubeFrame> frames;
  std::unordered_map<std::int64_t, int> lookup;  // packed index -> frame

  const CubeFrame* frame_at(const Vec2& x) const;
  const CubeFrame& frame_of(std::array<std::int64_t, 2> idx) const;
};

// Scale selection by halving: delta starts at min(theta, delta0) and halves
// until every fitted cube satisfies |phi'| <= theta and the four residual
// sums pass their budget. Throws NumericError on delta underflow.
ScaleAnalysis analyze_scale(const SbvField& f, const Box2& region, double theta, Rng& rng,
                            const AnalysisOptions& opt = {});

// Piecewise-linear interpolation of one cube's graph on the eps-grid, plus
// the vertical shift beta that keeps the linearized graph off the cube
// corners/edges (resampled, at most 8 attempts).
struct InterfacePL {
  int frame_index = -1;
  double eps = 0;
  double beta = 0;
  std::int64_t k_lo = 0;  // nodes at t = k * eps, k in [k_lo, k_hi]
  std::vector<double> psi_nodes;
  double omega_sup = 0;    // measured sup |phi - psi| / eps
  double omega_slope = 0;  // measured sup |phi' - psi'|

  double psi(double t) const;
  double dpsi(double t) const;
  // Linearized graph in world coordinates: h = psi(t) + beta.
  Vec2 h_point(const CubeFrame& fr, double t) const { return fr.from_frame(t, psi(t) + beta); }
};

InterfacePL linearize_interface(const ScaleAnalysis& sa, int frame_index, double eps, Rng& rng);

// Signal from build_deformation: the measured |D Phi - Id| exceeded theta/2,
// the caller should halve eps and linearize again.
struct ReduceEpsSignal {
  double dphi_sup = 0;
};

// The deformation Phi(x) = x + sum_z alpha_z(x) (psi_z(t) + beta - phi_z(t)) nu_z
// over fitted cubes, with smooth bumps alpha_z equal to 1 on Q'' and
// supported in Q_z. Identity outside the fitted cubes.
class Deformation {
 public:
  Deformation() = default;
  Deformation(const ScaleAnalysis* sa, std::vector<InterfacePL> pls);

  Vec2 apply(const Vec2& x) const;
  Vec2 invert(const Vec2& y) const;  // Newton on apply
  bool is_identity() const { return pls_.empty(); }
  DeformationMap as_map() const;

  double phi_sup = 0;   // measured sup |Phi - id|
  double dphi_sup = 0;  // measured sup |D Phi - Id|

  const std::vector<InterfacePL>& interfaces() const { return pls_; }

 private:
  const ScaleAnalysis* sa_ = nullptr;
  std::vector<InterfacePL> pls_;
  std::unordered_map<std::int64_t, int> pl_of_frame_;
};

// Builds Phi, measures the sup norms on a sample grid, verifies the graph
// transport (fitted graph onto linearized graph inside Q', 100 samples at
// 1e-8 * delta) and throws ReduceEpsSignal when |D Phi - Id| > theta / 2.
Deformation build_deformation(const ScaleAnalysis& sa, std::vector<InterfacePL> pls,
                              double theta);

// The glued approximant: plain projection on no-interface / fallback /
// boundary-layer cubes, and on fitted cubes the affine interpolant of the
// dominant interface's plus (resp. minus) extension above (resp. below) the
// linearized graph. Jump faces: segments along the linearized graphs, cube
// boundary mismatches, and the generic face inventory of fallback cubes.
class Approximant {
 public:
  Approximant() = default;

  VecM eval(const Vec2& x) const;
  MatM2 grad(const Vec2& x) const;
  const std::vector<JumpFace>& faces() const;
  const GridPlacement<2>& placement() const;
  const Box2& region() const;
  int components() const;

  struct Impl;
  std::shared_ptr<Impl> impl;
};

Approximant assemble_approximant(const SbvField& f, const ScaleAnalysis& sa,
                                 const std::vector<InterfacePL>& pls, double eps,
                                 const Vec2& zeta);

// Weighted-sum argmin over candidate metric rows: l1 + lp_grad + d1 + d2
// (+ hn1_sym_diff when finite_jump). Rows with NaN in any term are excluded;
// ties resolve to the first index. Throws NumericError if all are excluded.
int select_shift(const std::vector<MetricsRecord>& candidates, bool finite_jump);

struct PipelineOptions {
  double p = 2;
  BulkDensity psi = BulkDensity::p_power(2);
  Modulus g0;
  SurfaceDensity g = SurfaceDensity::cohesive(Modulus{});
  int n_zeta = 8;
  std::uint64_t seed = 1;
  // Finite-jump mode: exact streaming bulk metrics and the jump-set
  // discrepancies d1 / d2 / sym-diff. Off (infinite-jump regime): bulk
  // distances by seeded Monte Carlo and no discrepancy walk.
  bool finite_jump = true;
  int mc_samples = 20000;
  AnalysisOptions analysis;
  // Ladder interpretation: theta ladder (eps chosen per level, halved until
  // the deformation bound holds) or eps ladder at fixed analysis theta.
  bool eps_ladder = false;
  double eps_ladder_theta = 0.1;
  // Extra diagnostics (per-level candidate tables) toggled by the CLI.
  bool keep_candidates = true;
};

struct LevelResult {
  double theta = 0, delta = 0, delta_inner = 0, eps = 0;
  Vec2 gamma = Vec2::Zero(), zeta = Vec2::Zero();
  int selected = -1;
  MetricsRecord metrics;
  std::vector<std::pair<Vec2, MetricsRecord>> candidates;
  double boundary_layer_bulk = 0;     // bulk energy of w over boundary cubes
  double boundary_layer_surface = 0;  // face energy inside boundary cubes
  double extension_bulk = 0, extension_surface = 0;  // extension increments
  std::string error;  // empty on success

  bool ok() const { return error.empty(); }
};

// Ladder driver: per level extend past the boundary, analyze the scale,
// linearize, build the deformation (halving eps on demand), assemble one
// approximant per shift candidate, select, and compute the full metrics for
// the selected shift. Per-level failures land in LevelResult::error and the
// run continues.
std::vector<LevelResult> run_convergence(const SbvField& f, const LipschitzDomain& domain,
                                         const std::vector<double>& ladder,
                                         const PipelineOptions& opt);

}  // namespace sbv
