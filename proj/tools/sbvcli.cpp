// Batch front door for the construction: experiment configs in, CSV and
// two-column plot data out. Subcommands: project | converge | reflect |
// energy | catalog. Exit codes: 0 ok, 2 config error, 3 numeric failure.

#include "sbv/config.hpp"

#include <CLI11.hpp>

#include <cinttypes>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>

namespace {

using namespace sbv;

// Fixed shortest-roundtrip formatting so identical runs produce identical
// bytes.
std::string num(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

std::string join(const VecM& v) {
  std::string s;
  for (int i = 0; i < v.size(); ++i) {
    if (i) s += ';';
    s += num(v[i]);
  }
  return s;
}

std::string join(const MatM2& g) {
  std::string s;
  for (int i = 0; i < g.rows(); ++i)
    for (int j = 0; j < 2; ++j) {
      if (i || j) s += ';';
      s += num(g(i, j));
    }
  return s;
}

std::ofstream open_out(const std::filesystem::path& dir, const std::string& name) {
  std::filesystem::create_directories(dir);
  std::ofstream f(dir / name, std::ios::binary);
  if (!f) throw ConfigError("cannot write " + (dir / name).string());
  return f;
}

void write_plot(const std::filesystem::path& dir, const std::string& name,
                const std::vector<std::pair<double, double>>& xy) {
  auto f = open_out(dir, name);
  for (const auto& [x, y] : xy) f << num(x) << " " << num(y) << "\n";
}

int cmd_project(const ExperimentConfig& cfg) {
  Rng rng(cfg.seed);
  const PwAffineFunction w = project_jittered(cfg.field, cfg.eps, cfg.box, rng);

  auto cells = open_out(cfg.out, "cells.csv");
  cells << "cube_i,cube_j,tag,v0x,v0y,v1x,v1y,v2x,v2y,u0,u1,u2,s01,s02,s12,grad0,grad1,grad2\n";
  for (const auto& id : enumerate_cells<2>(w.placement, cfg.box)) {
    const auto& c = w.cell(id);
    const auto& s = c.data.simplex;
    cells << id.cube[0] << ',' << id.cube[1] << ',' << id.tag;
    for (int i = 0; i < 3; ++i)
      cells << ',' << num(s.vertices(0, i)) << ',' << num(s.vertices(1, i));
    for (int i = 0; i < 3; ++i) cells << ',' << join(c.data.u[static_cast<std::size_t>(i)]);
    cells << ',' << join(c.data.s(0, 1)) << ',' << join(c.data.s(0, 2)) << ','
          << join(c.data.s(1, 2));
    for (int i = 0; i < 3; ++i) cells << ',' << join(c.grad[static_cast<std::size_t>(i)]);
    cells << '\n';
  }

  const auto faces = jump_faces(w, cfg.box);
  auto fcsv = open_out(cfg.out, "faces.csv");
  fcsv << "cube_i,cube_j,tag,ax,ay,bx,by,nux,nuy,jump_a,jump_b,on_cell_boundary\n";
  for (const auto& jf : faces)
    fcsv << jf.cell.cube[0] << ',' << jf.cell.cube[1] << ',' << jf.cell.tag << ',' << num(jf.a.x())
         << ',' << num(jf.a.y()) << ',' << num(jf.b.x()) << ',' << num(jf.b.y()) << ','
         << num(jf.nu.x()) << ',' << num(jf.nu.y()) << ',' << join(jf.jump_a) << ','
         << join(jf.jump_b) << ',' << (jf.on_cell_boundary ? 1 : 0) << '\n';
  return 0;
}

int cmd_converge(const ExperimentConfig& cfg) {
  if (cfg.ladder.empty()) throw ConfigError("config: converge requires a ladder");
  const LipschitzDomain dom = cfg.domain();
  const auto res = run_convergence(cfg.field, dom, cfg.ladder, cfg.pipeline_options());

  auto csv = open_out(cfg.out, "converge.csv");
  csv << "level,theta,delta,delta_inner,eps,gamma_x,gamma_y,zeta_x,zeta_y,selected,"
         "l1,lp_grad,d1,d2,hn1_sym_diff,bulk_u,bulk_w,surf_u,surf_w,"
         "strict_u,strict_w,area_strict_u,area_strict_w,jump_length_w,phi_sup,dphi_sup,"
         "bl_bulk,bl_surface,ext_bulk,ext_surface,error\n";
  for (std::size_t i = 0; i < res.size(); ++i) {
    const auto& r = res[i];
    const auto& m = r.metrics;
    csv << i << ',' << num(r.theta) << ',' << num(r.delta) << ',' << num(r.delta_inner) << ','
        << num(r.eps) << ',' << num(r.gamma.x()) << ',' << num(r.gamma.y()) << ','
        << num(r.zeta.x()) << ',' << num(r.zeta.y()) << ',' << r.selected << ',' << num(m.l1)
        << ',' << num(m.lp_grad) << ',' << num(m.d1) << ',' << num(m.d2) << ','
        << num(m.hn1_sym_diff) << ',' << num(m.bulk_u) << ',' << num(m.bulk_w) << ','
        << num(m.surf_u) << ',' << num(m.surf_w) << ',' << num(m.strict_u) << ','
        << num(m.strict_w) << ',' << num(m.area_strict_u) << ',' << num(m.area_strict_w) << ','
        << num(m.jump_length_w) << ',' << num(m.phi_sup) << ',' << num(m.dphi_sup) << ','
        << num(r.boundary_layer_bulk) << ',' << num(r.boundary_layer_surface) << ','
        << num(r.extension_bulk) << ',' << num(r.extension_surface) << ',' << r.error << '\n';
  }

  auto cand = open_out(cfg.out, "candidates.csv");
  cand << "level,candidate,zeta_x,zeta_y,l1,lp_grad,d1,d2,hn1_sym_diff\n";
  for (std::size_t i = 0; i < res.size(); ++i)
    for (std::size_t c = 0; c < res[i].candidates.size(); ++c) {
      const auto& [z, m] = res[i].candidates[c];
      cand << i << ',' << c << ',' << num(z.x()) << ',' << num(z.y()) << ',' << num(m.l1) << ','
           << num(m.lp_grad) << ',' << num(m.d1) << ',' << num(m.d2) << ','
           << num(m.hn1_sym_diff) << '\n';
    }

  const std::vector<std::pair<std::string, double MetricsRecord::*>> plots = {
      {"l1", &MetricsRecord::l1},         {"lp_grad", &MetricsRecord::lp_grad},
      {"d1", &MetricsRecord::d1},         {"d2", &MetricsRecord::d2},
      {"hn1", &MetricsRecord::hn1_sym_diff},
      {"bulk_w", &MetricsRecord::bulk_w}, {"surf_w", &MetricsRecord::surf_w}};
  for (const auto& [name, field] : plots) {
    std::vector<std::pair<double, double>> xy;
    for (const auto& r : res)
      if (r.ok()) xy.emplace_back(cfg.eps_ladder ? r.eps : r.theta, r.metrics.*field);
    write_plot(cfg.out, "plot_" + name + ".dat", xy);
  }
  return 0;
}

int cmd_reflect(const ExperimentConfig& cfg) {
  const LipschitzDomain dom = cfg.domain();
  const PseudoNormal pn = build_pseudo_normal(dom, 0.45 * dom.min_edge);
  const CollarReflection cr = build_collar(dom, pn);
  const double w = cr.width();

  Rng rng(cfg.seed);
  std::uniform_real_distribution<double> us(0.0, dom.perimeter);
  std::uniform_real_distribution<double> ut(-0.95 * w, 0.95 * w);
  double max_inv = 0, max_fix = 0;
  double rmin = std::numeric_limits<double>::infinity(), rmax = 0;
  std::vector<double> ratios;
  std::vector<Vec2> pts;
  for (int i = 0; i < 2000; ++i) {
    const Vec2 y = cr.forward(us(rng), ut(rng));
    max_inv = std::max(max_inv, (cr.reflect(cr.reflect(y)) - y).norm());
    pts.push_back(y);
  }
  for (int i = 0; i < 500; ++i) {
    const Vec2 b = dom.boundary_point(us(rng));
    max_fix = std::max(max_fix, (cr.reflect(b) - b).norm());
  }
  for (std::size_t i = 0; i + 1 < pts.size(); i += 2) {
    const double d = (pts[i] - pts[i + 1]).norm();
    if (d < 1e-12) continue;
    const double r = (cr.reflect(pts[i]) - cr.reflect(pts[i + 1])).norm() / d;
    ratios.push_back(r);
    rmin = std::min(rmin, r);
    rmax = std::max(rmax, r);
  }

  auto csv = open_out(cfg.out, "reflect.csv");
  csv << "gamma,c1_norm,width,max_involution_residual,max_boundary_residual,min_ratio,max_ratio,"
         "bilipschitz_l\n";
  const double L = std::max(rmax, 1.0 / std::max(rmin, 1e-300));
  csv << num(pn.gamma) << ',' << num(pn.c1_norm) << ',' << num(w) << ',' << num(max_inv) << ','
      << num(max_fix) << ',' << num(rmin) << ',' << num(rmax) << ',' << num(L) << '\n';

  const int nbins = 20;
  std::vector<int> bins(nbins, 0);
  for (double r : ratios) {
    const int b = std::clamp(static_cast<int>((r - rmin) / (rmax - rmin + 1e-300) * nbins), 0,
                             nbins - 1);
    ++bins[static_cast<std::size_t>(b)];
  }
  auto hist = open_out(cfg.out, "reflect_hist.csv");
  hist << "ratio_lo,ratio_hi,count\n";
  for (int b = 0; b < nbins; ++b)
    hist << num(rmin + (rmax - rmin) * b / nbins) << ','
         << num(rmin + (rmax - rmin) * (b + 1) / nbins) << ','
         << bins[static_cast<std::size_t>(b)] << '\n';
  return 0;
}

int cmd_energy(const ExperimentConfig& cfg) {
  const auto sm = strict_metrics(cfg.field, cfg.box);
  auto csv = open_out(cfg.out, "energy.csv");
  csv << "bulk,surface,g0_jump_energy,interface_length,jump_variation,strict,area_strict\n";
  csv << num(bulk_energy(cfg.field, cfg.bulk, cfg.box)) << ','
      << num(surface_energy(cfg.field, cfg.g, cfg.box)) << ','
      << num(g0_jump_energy(cfg.field, cfg.g0, cfg.box)) << ','
      << num(interface_length(cfg.field, cfg.box)) << ','
      << num(jump_variation(cfg.field, cfg.box)) << ',' << num(sm.strict()) << ','
      << num(sm.area_strict()) << '\n';
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Piecewise-affine approximation experiments"};
  app.require_subcommand(1);

  std::string config_path, out_override;
  std::int64_t seed_override = -1;
  app.add_option("--config", config_path, "Experiment config (JSON)");
  app.add_option("--seed", seed_override, "Seed override");
  app.add_option("--out", out_override, "Output directory override");

  auto* project = app.add_subcommand("project", "Single-scale projection dump");
  auto* converge = app.add_subcommand("converge", "Ladder run with metrics per level");
  auto* reflect = app.add_subcommand("reflect", "Collar reflection diagnostics");
  auto* energy = app.add_subcommand("energy", "Energies of the configured field");
  auto* catalog = app.add_subcommand("catalog", "List field presets");
  for (auto* sub : {project, converge, reflect, energy, catalog}) sub->fallthrough();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;
  }

  try {
    if (catalog->parsed()) {
      std::cout << sbv::preset_catalog();
      return 0;
    }
    if (config_path.empty()) throw sbv::ConfigError("config: --config is required");
    sbv::ExperimentConfig cfg = sbv::load_config(config_path);
    if (seed_override >= 0) cfg.seed = static_cast<std::uint64_t>(seed_override);
    if (!out_override.empty()) cfg.out = out_override;

    if (project->parsed()) return cmd_project(cfg);
    if (converge->parsed()) return cmd_converge(cfg);
    if (reflect->parsed()) return cmd_reflect(cfg);
    if (energy->parsed()) return cmd_energy(cfg);
    return 2;
  } catch (const sbv::ConfigError& e) {
    std::cerr << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 3;
  }
}
