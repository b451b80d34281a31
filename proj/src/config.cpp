#include "sbv/config.hpp"

#include <json.hpp>

#include <cmath>
#include <fstream>
#include <set>
#include <sstream>

namespace sbv {

namespace {

using nlohmann::json;

[[noreturn]] void fail(const std::string& msg) { throw ConfigError("config: " + msg); }

void require_keys(const json& obj, const std::string& where, const std::set<std::string>& allowed,
                  const std::set<std::string>& required) {
  if (!obj.is_object()) fail(where + " must be an object");
  for (const auto& [key, value] : obj.items())
    if (!allowed.count(key)) fail("unknown key '" + key + "' in " + where);
  for (const auto& key : required)
    if (!obj.contains(key)) fail("missing key '" + key + "' in " + where);
}

double get_number(const json& obj, const std::string& where, const std::string& key) {
  const auto& v = obj.at(key);
  if (!v.is_number()) fail(where + "." + key + " must be a number");
  return v.get<double>();
}

double get_number_or(const json& obj, const std::string& where, const std::string& key,
                     double def) {
  if (!obj.contains(key)) return def;
  return get_number(obj, where, key);
}

std::string get_string(const json& obj, const std::string& where, const std::string& key) {
  const auto& v = obj.at(key);
  if (!v.is_string()) fail(where + "." + key + " must be a string");
  return v.get<std::string>();
}

bool get_bool_or(const json& obj, const std::string& where, const std::string& key, bool def) {
  if (!obj.contains(key)) return def;
  const auto& v = obj.at(key);
  if (!v.is_boolean()) fail(where + "." + key + " must be a boolean");
  return v.get<bool>();
}

Vec2 get_vec2(const json& v, const std::string& where) {
  if (!v.is_array() || v.size() != 2 || !v[0].is_number() || !v[1].is_number())
    fail(where + " must be a pair of numbers");
  return Vec2(v[0].get<double>(), v[1].get<double>());
}

VecM get_vecm(const json& v, const std::string& where) {
  if (!v.is_array() || v.empty() || v.size() > 4) fail(where + " must have 1..4 numbers");
  VecM out(static_cast<int>(v.size()));
  for (std::size_t i = 0; i < v.size(); ++i) {
    if (!v[i].is_number()) fail(where + " must contain numbers");
    out[static_cast<int>(i)] = v[i].get<double>();
  }
  return out;
}

MatM2 get_matm2(const json& v, const std::string& where, int rows) {
  if (!v.is_array() || static_cast<int>(v.size()) != rows)
    fail(where + " must have one row per component");
  MatM2 out(rows, 2);
  for (int i = 0; i < rows; ++i) {
    const auto& row = v[static_cast<std::size_t>(i)];
    if (!row.is_array() || row.size() != 2) fail(where + " rows must be pairs");
    out(i, 0) = row[0].get<double>();
    out(i, 1) = row[1].get<double>();
  }
  return out;
}

Modulus parse_g0(const json& obj, const std::string& where) {
  require_keys(obj, where, {"kind", "q"}, {"kind"});
  return Modulus::parse(get_string(obj, where, "kind"), get_number_or(obj, where, "q", 0.5));
}

SbvField build_field(const std::string& preset, const json& prm, const Box2& box) {
  const std::string where = "params";
  if (preset == "affine") {
    require_keys(prm, where, {"a", "b"}, {"b"});
    const VecM b = get_vecm(prm.at("b"), where + ".b");
    const MatM2 a = prm.contains("a") ? get_matm2(prm.at("a"), where + ".a", b.size())
                                      : MatM2(MatM2::Zero(b.size(), 2));
    return make_affine(a, b);
  }
  if (preset == "line_step") {
    require_keys(prm, where, {"normal", "offset", "amplitude", "bg_a", "bg_b"},
                 {"normal", "offset", "amplitude"});
    const VecM amp = get_vecm(prm.at("amplitude"), where + ".amplitude");
    const MatM2 bg_a = prm.contains("bg_a") ? get_matm2(prm.at("bg_a"), where + ".bg_a", amp.size())
                                            : MatM2(MatM2::Zero(amp.size(), 2));
    const VecM bg_b = prm.contains("bg_b") ? get_vecm(prm.at("bg_b"), where + ".bg_b")
                                           : VecM(VecM::Zero(amp.size()));
    if (bg_b.size() != amp.size()) fail("params.bg_b size must match amplitude");
    return make_line_step(get_vec2(prm.at("normal"), where + ".normal"),
                          get_number(prm, where, "offset"), amp, bg_a, bg_b, box);
  }
  if (preset == "indicator") {
    require_keys(prm, where, {"normal", "offset"}, {"normal", "offset"});
    return make_indicator(get_vec2(prm.at("normal"), where + ".normal"),
                          get_number(prm, where, "offset"), box);
  }
  if (preset == "sine_graph_step") {
    require_keys(prm, where, {"base", "wave", "frequency", "amplitude"}, {"base", "amplitude"});
    const double base = get_number(prm, where, "base");
    const double wave = get_number_or(prm, where, "wave", 0.0);
    const double freq = get_number_or(prm, where, "frequency", 1.0);
    const VecM amp = get_vecm(prm.at("amplitude"), where + ".amplitude");
    const double k = 2 * M_PI * freq;
    return make_graph_step([base, wave, k](double x) { return base + wave * std::sin(k * x); },
                           [wave, k](double x) { return wave * k * std::cos(k * x); }, amp,
                           MatM2::Zero(amp.size(), 2), VecM::Zero(amp.size()), box);
  }
  if (preset == "smooth_plus_jump") {
    require_keys(prm, where, {"normal", "offset", "amplitude"}, {"normal", "offset", "amplitude"});
    const auto& av = prm.at("amplitude");
    if (!av.is_number()) fail("params.amplitude must be a number for smooth_plus_jump");
    return make_smooth_plus_jump(get_vec2(prm.at("normal"), where + ".normal"),
                                 get_number(prm, where, "offset"), av.get<double>(), box);
  }
  if (preset == "stacked_lines") {
    require_keys(prm, where, {"count", "decay_exponent"}, {"count"});
    const double cnt = get_number(prm, where, "count");
    if (cnt < 1 || cnt != std::floor(cnt)) fail("params.count must be a positive integer");
    const double q = get_number_or(prm, where, "decay_exponent", 3.0);
    return make_stacked_lines(static_cast<int>(cnt),
                              [q](int k) { return std::pow(static_cast<double>(k), -q); }, box);
  }
  if (preset == "sawtooth") {
    require_keys(prm, where, {"j"}, {"j"});
    const double j = get_number(prm, where, "j");
    if (j < 1 || j != std::floor(j)) fail("params.j must be a positive integer");
    return make_sawtooth(static_cast<int>(j), box);
  }
  fail("unknown preset '" + preset + "'");
}

}  // namespace

PipelineOptions ExperimentConfig::pipeline_options() const {
  PipelineOptions opt;
  opt.p = p;
  opt.psi = bulk;
  opt.g0 = g0;
  opt.g = g;
  opt.n_zeta = n_zeta;
  opt.seed = seed;
  opt.finite_jump = finite_jump;
  opt.mc_samples = mc_samples;
  opt.analysis.g0 = g0;
  opt.analysis.p = p;
  opt.eps_ladder = eps_ladder;
  opt.eps_ladder_theta = eps_ladder_theta;
  return opt;
}

ExperimentConfig parse_config(const std::string& json_text) {
  json doc;
  try {
    doc = json::parse(json_text);
  } catch (const json::parse_error& e) {
    fail(std::string("invalid JSON: ") + e.what());
  }
  require_keys(doc, "config",
               {"preset", "params", "domain", "ladder", "eps_ladder", "eps_ladder_theta",
                "finite_jump", "p", "bulk", "g0", "g", "n_zeta", "seed", "mc_samples", "eps",
                "out"},
               {"preset", "domain"});

  ExperimentConfig c;
  c.preset = get_string(doc, "config", "preset");

  const auto& dom = doc.at("domain");
  if (!dom.is_array() || dom.size() < 3) fail("domain must list at least 3 vertices");
  for (std::size_t i = 0; i < dom.size(); ++i)
    c.domain_poly.push_back(get_vec2(dom[i], "domain vertex"));
  c.domain();  // validates: counterclockwise, simple
  c.box.lo = c.box.hi = c.domain_poly[0];
  for (const auto& v : c.domain_poly) {
    c.box.lo = c.box.lo.cwiseMin(v);
    c.box.hi = c.box.hi.cwiseMax(v);
  }

  if (doc.contains("ladder")) {
    const auto& lad = doc.at("ladder");
    if (!lad.is_array() || lad.empty()) fail("ladder must be a non-empty array");
    for (const auto& v : lad) {
      if (!v.is_number() || !(v.get<double>() > 0)) fail("ladder entries must be positive");
      c.ladder.push_back(v.get<double>());
    }
  }
  c.eps_ladder = get_bool_or(doc, "config", "eps_ladder", false);
  c.eps_ladder_theta = get_number_or(doc, "config", "eps_ladder_theta", 0.1);
  c.finite_jump = get_bool_or(doc, "config", "finite_jump", true);

  c.p = get_number_or(doc, "config", "p", 2.0);
  if (!(c.p >= 1)) fail("p must be >= 1");
  if (doc.contains("bulk")) {
    const auto& b = doc.at("bulk");
    require_keys(b, "bulk", {"kind", "p"}, {"kind"});
    const std::string kind = get_string(b, "bulk", "kind");
    if (kind == "p_power")
      c.bulk = BulkDensity::p_power(get_number_or(b, "bulk", "p", c.p));
    else if (kind == "area")
      c.bulk = BulkDensity::area();
    else
      fail("unknown bulk density kind '" + kind + "'");
  } else {
    c.bulk = BulkDensity::p_power(c.p);
  }
  try {
    if (doc.contains("g0")) c.g0 = parse_g0(doc.at("g0"), "g0");
  } catch (const std::invalid_argument& e) {
    fail(e.what());
  }
  if (doc.contains("g")) {
    const auto& g = doc.at("g");
    require_keys(g, "g", {"kind", "alpha"}, {"kind"});
    const std::string kind = get_string(g, "g", "kind");
    if (kind == "cohesive")
      c.g = SurfaceDensity::cohesive(c.g0);
    else if (kind == "brittle")
      c.g = SurfaceDensity::brittle(get_number_or(g, "g", "alpha", 1.0));
    else
      fail("unknown surface density kind '" + kind + "'");
  } else {
    c.g = SurfaceDensity::cohesive(c.g0);
  }

  const double nz = get_number_or(doc, "config", "n_zeta", 8);
  if (nz < 1 || nz != std::floor(nz)) fail("n_zeta must be a positive integer");
  c.n_zeta = static_cast<int>(nz);
  const double seed = get_number_or(doc, "config", "seed", 1);
  if (seed < 0 || seed != std::floor(seed)) fail("seed must be a non-negative integer");
  c.seed = static_cast<std::uint64_t>(seed);
  const double mc = get_number_or(doc, "config", "mc_samples", 20000);
  if (mc < 1 || mc != std::floor(mc)) fail("mc_samples must be a positive integer");
  c.mc_samples = static_cast<int>(mc);
  c.eps = get_number_or(doc, "config", "eps", 0.25);
  if (!(c.eps > 0)) fail("eps must be positive");
  if (doc.contains("out")) c.out = get_string(doc, "config", "out");

  c.field = build_field(c.preset, doc.contains("params") ? doc.at("params") : json::object(),
                        c.box);
  return c;
}

ExperimentConfig load_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) fail("cannot read '" + path + "'");
  std::ostringstream ss;
  ss << in.rdbuf();
  return parse_config(ss.str());
}

std::string preset_catalog() {
  return "affine            params: a (m x 2 rows, optional), b (m values)     u = A x + b\n"
         "line_step         params: normal, offset, amplitude, bg_a?, bg_b?    step across x.n = c\n"
         "indicator         params: normal, offset                             indicator of x.n > c\n"
         "sine_graph_step   params: base, wave?, frequency?, amplitude         step across y = base + wave sin(2 pi f x)\n"
         "smooth_plus_jump  params: normal, offset, amplitude (scalar)         smooth background plus a line step\n"
         "stacked_lines     params: count, decay_exponent?                     sum of k^-q steps across y = 1/k\n"
         "sawtooth          params: j                                          frac(j x1)/j\n";
}

}  // namespace sbv
