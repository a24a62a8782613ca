#pragma once

// One JSON document drives every stage: sections demogen, estimator,
// stiffmodel and tankvic, plus the seed and the output directory.

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "vicpass/demogen.hpp"
#include "vicpass/errors.hpp"
#include "vicpass/estimator.hpp"
#include "vicpass/io_util.hpp"
#include "vicpass/tankvic.hpp"

namespace vicpass {

struct EstimatorSettings {
  int window_length = 3;
  std::vector<Method> methods{Method::Proposed, Method::NearestSpdLs, Method::ConvexDirect};
  double sweep_start = 26.0, sweep_stop = 58.0, sweep_step = 4.0;
  double zeta = 2.0;
  int max_iters = 10;
  double tol = 0.0;  // 0 runs every iteration, which the iteration table wants
  int convex_iters = 500;
  std::vector<double> sweep_grid() const;
};

struct StiffmodelSettings {
  double h = 1.0;
  double lambda = 1e-6;
  int stride = 10;                    // every stride-th sample of each demo
  std::string source = "proposed";    // estimation run used as targets
  std::string query;                  // optional extra query CSV (t,f1..,x1..)
};

struct TankvicSettings {
  ControllerConfig base;
  std::vector<ControlMode> modes{ControlMode::Direct, ControlMode::OriginalTank, ControlMode::Proposed};
  std::vector<double> k_c{12.0, 13.0};
  int log_stride = 10;  // rows written per simulation step; audits always use every step
};

struct ExperimentConfig {
  std::uint64_t seed = 1;
  std::filesystem::path out = "runs/default";
  DatasetConfig demogen;
  EstimatorSettings estimator;
  StiffmodelSettings stiffmodel;
  TankvicSettings tankvic;
};

inline std::vector<double> EstimatorSettings::sweep_grid() const {
  if (!(sweep_step > 0.0) || sweep_stop < sweep_start) throw ConfigError("estimator.sweep: bad grid");
  std::vector<double> g;
  const long n = std::lround(std::floor((sweep_stop - sweep_start) / sweep_step + 1e-9));
  for (long i = 0; i <= n; ++i) g.push_back(sweep_start + static_cast<double>(i) * sweep_step);
  return g;
}

inline json to_json(const ExperimentConfig& c) {
  json methods = json::array();
  for (Method m : c.estimator.methods) methods.push_back(method_name(m));
  json modes = json::array();
  for (ControlMode m : c.tankvic.modes) modes.push_back(control_mode_name(m));
  json tank = to_json(c.tankvic.base);
  tank.erase("mode");
  tank["modes"] = modes;
  tank["k_c"] = c.tankvic.k_c;
  tank["log_stride"] = c.tankvic.log_stride;
  json dg = to_json(c.demogen);
  dg.erase("seed");  // the top-level seed is the only one
  return {{"seed", c.seed},
          {"out", c.out.string()},
          {"demogen", dg},
          {"estimator",
           {{"window_length", c.estimator.window_length},
            {"methods", methods},
            {"sweep", {{"start", c.estimator.sweep_start}, {"stop", c.estimator.sweep_stop},
                       {"step", c.estimator.sweep_step}}},
            {"zeta", c.estimator.zeta},
            {"max_iters", c.estimator.max_iters},
            {"tol", c.estimator.tol},
            {"convex_iters", c.estimator.convex_iters}}},
          {"stiffmodel",
           {{"h", c.stiffmodel.h},
            {"lambda", c.stiffmodel.lambda},
            {"stride", c.stiffmodel.stride},
            {"source", c.stiffmodel.source},
            {"query", c.stiffmodel.query}}},
          {"tankvic", tank}};
}

inline ExperimentConfig experiment_config_from_json(const json& j) {
  ExperimentConfig c;
  try {
    static const char* known[] = {"seed", "out", "demogen", "estimator", "stiffmodel", "tankvic"};
    for (const auto& [key, value] : j.items()) {
      bool ok = false;
      for (const char* k : known) ok = ok || key == k;
      if (!ok) throw ConfigError("unknown config section '" + key + "'");
    }
    c.seed = j.value("seed", c.seed);
    c.out = j.value("out", c.out.string());
    c.demogen = dataset_config_from_json(j.value("demogen", json::object()));
    c.demogen.seed = c.seed;

    const json e = j.value("estimator", json::object());
    c.estimator.window_length = e.value("window_length", c.estimator.window_length);
    if (e.contains("methods")) {
      c.estimator.methods.clear();
      for (const auto& m : e.at("methods")) c.estimator.methods.push_back(method_from_name(m.get<std::string>()));
    }
    const json sw = e.value("sweep", json::object());
    c.estimator.sweep_start = sw.value("start", c.estimator.sweep_start);
    c.estimator.sweep_stop = sw.value("stop", c.estimator.sweep_stop);
    c.estimator.sweep_step = sw.value("step", c.estimator.sweep_step);
    c.estimator.zeta = e.value("zeta", c.estimator.zeta);
    c.estimator.max_iters = e.value("max_iters", c.estimator.max_iters);
    c.estimator.tol = e.value("tol", c.estimator.tol);
    c.estimator.convex_iters = e.value("convex_iters", c.estimator.convex_iters);
    if (c.estimator.window_length < c.demogen.dim) throw ConfigError("estimator.window_length must be >= demogen.dim");
    if (c.estimator.convex_iters < 1) throw ConfigError("estimator.convex_iters must be >= 1");
    if (c.estimator.methods.empty()) throw ConfigError("estimator.methods is empty");
    c.estimator.sweep_grid();

    const json s = j.value("stiffmodel", json::object());
    c.stiffmodel.h = s.value("h", c.stiffmodel.h);
    c.stiffmodel.lambda = s.value("lambda", c.stiffmodel.lambda);
    c.stiffmodel.stride = s.value("stride", c.stiffmodel.stride);
    c.stiffmodel.source = s.value("source", c.stiffmodel.source);
    c.stiffmodel.query = s.value("query", c.stiffmodel.query);
    if (!(c.stiffmodel.h > 0.0) || !(c.stiffmodel.lambda > 0.0))
      throw ConfigError("stiffmodel: h and lambda must be positive");
    if (c.stiffmodel.stride < 1) throw ConfigError("stiffmodel.stride must be >= 1");
    method_from_name(c.stiffmodel.source);

    const json t = j.value("tankvic", json::object());
    json base = t;  // k_c and modes here describe the grid, not one controller
    for (const char* k : {"k_c", "modes", "log_stride"}) base.erase(k);
    c.tankvic.base = controller_config_from_json(base);
    if (t.contains("modes")) {
      c.tankvic.modes.clear();
      for (const auto& m : t.at("modes")) c.tankvic.modes.push_back(control_mode_from_name(m.get<std::string>()));
    }
    if (t.contains("k_c")) c.tankvic.k_c = t.at("k_c").get<std::vector<double>>();
    c.tankvic.log_stride = t.value("log_stride", c.tankvic.log_stride);
    if (c.tankvic.log_stride < 1) throw ConfigError("tankvic.log_stride must be >= 1");
    if (c.tankvic.modes.empty() || c.tankvic.k_c.empty()) throw ConfigError("tankvic: empty simulation grid");
    double alpha = 0.0, xi = 0.0;
    resolved(c.tankvic.base, alpha, xi);
  } catch (const json::exception& ex) {
    throw ConfigError(std::string("config: ") + ex.what());
  }
  return c;
}

inline ExperimentConfig load_experiment_config(const std::filesystem::path& path) {
  return experiment_config_from_json(read_json(path));
}

}  // namespace vicpass
