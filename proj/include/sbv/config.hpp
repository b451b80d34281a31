#pragma once

// JSON experiment configuration: field preset + parameters, polygonal
// domain, ladder, density catalog, sampling controls. Parsing is strict:
// unknown keys anywhere in the document are rejected.

#include "sbv/boundary.hpp"
#include "sbv/pipeline.hpp"

#include <string>

namespace sbv {

struct ConfigError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct ExperimentConfig {
  std::string preset;
  SbvField field;
  Polygon domain_poly;
  Box2 box;  // bounding box of the domain polygon; the field's home box

  std::vector<double> ladder;
  bool eps_ladder = false;
  double eps_ladder_theta = 0.1;
  bool finite_jump = true;

  double p = 2;
  BulkDensity bulk = BulkDensity::p_power(2);
  Modulus g0;
  SurfaceDensity g = SurfaceDensity::cohesive(Modulus{});

  int n_zeta = 8;
  std::uint64_t seed = 1;
  int mc_samples = 20000;

  double eps = 0.25;           // single-scale commands (project)
  std::string out = "out";     // output directory

  LipschitzDomain domain() const { return LipschitzDomain::from_polygon(domain_poly); }
  PipelineOptions pipeline_options() const;
};

// Parses and validates a config document. Throws ConfigError on schema
// violations (missing/mistyped/unknown keys, bad parameter ranges).
ExperimentConfig parse_config(const std::string& json_text);

// Reads the file and parses it. Throws ConfigError if unreadable.
ExperimentConfig load_config(const std::string& path);

// One line per preset: name, parameter keys, and a short description.
std::string preset_catalog();

}  // namespace sbv
