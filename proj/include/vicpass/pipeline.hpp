#pragma once

// Experiment stages behind the CLI. Each stage reads the previous stage's
// files from the run directory and writes its own subdirectory:
//   demos/ demos_critical/   gen
//   estimate/                estimate
//   train/ predict/          train, predict
//   simulate/                simulate
//   report/                  report
// Every stage directory carries run.json (versions + resolved config) and
// config.json (the resolved config alone, usable as --config).

#include <algorithm>
#include <atomic>
#include <cmath>
#include <exception>
#include <limits>
#include <filesystem>
#include <map>
#include <mutex>
#include <optional>
#include <ostream>
#include <string>
#include <thread>
#include <vector>

#include "vicpass/config.hpp"
#include "vicpass/demo_io.hpp"
#include "vicpass/estimator.hpp"
#include "vicpass/stats.hpp"
#include "vicpass/stiffmodel.hpp"
#include "vicpass/tankvic.hpp"

namespace vicpass {

namespace fs = std::filesystem;

inline constexpr const char* kToolVersion = "1.0.0";
inline constexpr int kResultFormatVersion = 1;
inline constexpr int kSimLogFormatVersion = 1;

inline json format_versions() {
  return {{"demo", kDemoFormatVersion},
          {"kernel_model", kModelFormatVersion},
          {"results", kResultFormatVersion},
          {"simlog", kSimLogFormatVersion}};
}

inline void write_run_manifest(const fs::path& dir, const std::string& command, const ExperimentConfig& cfg) {
  const json c = to_json(cfg);
  write_json(dir / "run.json", {{"tool", "vicpass"},
                                {"tool_version", kToolVersion},
                                {"command", command},
                                {"formats", format_versions()},
                                {"config", c}});
  write_json(dir / "config.json", c);
}

// fn(i) for i in [0, n) on up to `jobs` threads; the first error is rethrown.
template <typename Fn>
void parallel_for(std::size_t n, int jobs, Fn&& fn) {
  const std::size_t workers = std::min<std::size_t>(n, static_cast<std::size_t>(std::max(jobs, 1)));
  if (workers <= 1) {
    for (std::size_t i = 0; i < n; ++i) fn(i);
    return;
  }
  std::atomic<std::size_t> next{0};
  std::exception_ptr err;
  std::mutex mu;
  std::vector<std::thread> pool;
  for (std::size_t w = 0; w < workers; ++w)
    pool.emplace_back([&] {
      for (std::size_t i = next++; i < n; i = next++) {
        try {
          fn(i);
        } catch (...) {
          const std::lock_guard<std::mutex> lock(mu);
          if (!err) err = std::current_exception();
          next = n;
        }
      }
    });
  for (auto& t : pool) t.join();
  if (err) std::rethrow_exception(err);
}

inline std::string demo_name(std::size_t i) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "demo_%03zu", i);
  return buf;
}

inline std::vector<fs::path> list_demo_files(const fs::path& dir) {
  if (!fs::is_directory(dir)) throw IoError("missing demonstration directory '" + dir.string() + "'");
  std::vector<fs::path> out;
  for (const auto& e : fs::directory_iterator(dir))
    if (e.is_regular_file() && e.path().extension() == ".csv") out.push_back(e.path());
  std::sort(out.begin(), out.end());
  if (out.empty()) throw IoError("no demonstrations in '" + dir.string() + "'");
  return out;
}

inline std::vector<Demonstration> load_demos(const fs::path& dir) {
  std::vector<Demonstration> out;
  for (const auto& p : list_demo_files(dir)) out.push_back(load_demo(p));
  return out;
}

// t,k11,k12,..,kNN over the upper triangle[,d]
inline std::string stiffness_csv_header(int n, bool with_d) {
  std::string h = "t";
  for (int i = 1; i <= n; ++i)
    for (int j = i; j <= n; ++j) h += ",k" + std::to_string(i) + std::to_string(j);
  if (with_d) h += ",d";
  return h;
}

template <typename Sym>
std::string stiffness_csv(const std::vector<double>& t, const std::vector<Sym>& ks, std::optional<double> d = {}) {
  const int n = ks.empty() ? 0 : static_cast<int>(ks.front().matrix().rows());
  std::string out = stiffness_csv_header(n, d.has_value()) + "\n";
  for (std::size_t r = 0; r < ks.size(); ++r) {
    out += fmt_double(t[r]);
    for (int i = 0; i < n; ++i)
      for (int j = i; j < n; ++j) out += "," + fmt_double(ks[r](i, j));
    if (d) out += "," + fmt_double(*d);
    out += "\n";
  }
  return out;
}

inline std::vector<double> sample_times(const Demonstration& d) {
  std::vector<double> t;
  for (const auto& s : d.samples) t.push_back(s.t);
  return t;
}

inline std::vector<MatrixXd> read_stiffness_csv(const fs::path& path, int n) {
  const CsvTable t = read_numeric_csv(path);
  const std::string want = stiffness_csv_header(n, false);
  std::string got;
  for (std::size_t i = 0; i < t.header.size() && i < static_cast<std::size_t>(1 + tri_size(n)); ++i)
    got += (i ? "," : "") + t.header[i];
  if (got != want) throw InvalidInput(path.string() + ": stiffness columns do not match dimension " + std::to_string(n));
  std::vector<MatrixXd> out;
  for (const auto& row : t.rows) {
    MatrixXd k(n, n);
    std::size_t c = 1;
    for (int i = 0; i < n; ++i)
      for (int j = i; j < n; ++j) k(i, j) = k(j, i) = row[c++];
    out.push_back(std::move(k));
  }
  return out;
}

namespace detail {

inline void require_truth(const Demonstration& d) {
  if (!d.truth) throw ConfigError("error tables need ground truth, and a demonstration has none");
}

inline std::vector<double> concat(const std::vector<std::vector<double>>& parts) {
  std::vector<double> all;
  for (const auto& p : parts) all.insert(all.end(), p.begin(), p.end());
  return all;
}

inline std::string row(std::initializer_list<std::string> cells) {
  std::string s;
  bool first = true;
  for (const auto& c : cells) {
    if (!first) s += ",";
    s += c;
    first = false;
  }
  return s + "\n";
}

inline std::string num(double v) { return fmt_double(v); }

}  // namespace detail

// gen ------------------------------------------------------------------------

// demos/ as configured; demos_critical/ is the same dataset with critical
// damping, for the iteration table.
inline std::size_t cmd_gen(const ExperimentConfig& cfg, int jobs, std::ostream& log) {
  std::size_t written = 0;
  for (const std::string sub : {"demos", "demos_critical"}) {
    ExperimentConfig rc = cfg;
    if (sub == "demos_critical") rc.demogen.damping_kind = "critical";
    const fs::path dir = cfg.out / sub;
    fs::create_directories(dir);
    parallel_for(static_cast<std::size_t>(rc.demogen.trajectories), jobs, [&](std::size_t i) {
      save_demo(make_demo(rc.demogen, static_cast<int>(i)), dir / (demo_name(i) + ".csv"));
    });
    write_run_manifest(dir, "gen", rc);
    log << "gen: " << rc.demogen.trajectories << " demonstrations (" << rc.demogen.damping_kind << " damping) -> "
        << dir.string() << "\n";
    written += static_cast<std::size_t>(rc.demogen.trajectories);
  }
  return written;
}

// estimate -------------------------------------------------------------------

inline void cmd_estimate(const ExperimentConfig& cfg, int jobs, std::ostream& log) {
  using detail::num;
  using detail::row;
  const auto demos = load_demos(cfg.out / "demos");
  for (const auto& d : demos) detail::require_truth(d);
  const fs::path dir = cfg.out / "estimate";
  fs::create_directories(dir);
  const WindowConfig wc{cfg.estimator.window_length};
  const ConvexOptions copt{cfg.estimator.convex_iters, 0.0};
  const auto& methods = cfg.estimator.methods;
  const int n = demos.front().dim;
  const double d_true = cfg.demogen.damping;
  const std::size_t nd = demos.size(), nm = methods.size();
  std::vector<WindowSource> src;
  for (const auto& d : demos) src.emplace_back(d);
  std::vector<std::vector<double>> times;
  for (const auto& d : demos) times.push_back(sample_times(d));
  auto truth = [&](std::size_t t) -> const std::vector<SpdMatrix>& { return demos[t].truth->stiffness; };
  json summary;

  // Known damping: methods x trajectories x metrics.
  const std::size_t nmet = std::size(kAllMetrics);
  std::vector<std::vector<std::vector<double>>> err(nm * nd, std::vector<std::vector<double>>(nmet));
  parallel_for(nm * nd, jobs, [&](std::size_t job) {
    const std::size_t m = job / nd, t = job % nd;
    const EstimationResult r =
        estimate_sequence(src[t], KnownConstantDamping{SpdMatrix::identity(n, d_true)}, wc, methods[m], copt);
    write_text(dir / "results" / method_name(methods[m]) / (demo_name(t) + ".csv"), stiffness_csv(times[t], r.stiffness));
    for (std::size_t k = 0; k < nmet; ++k) err[job][k] = errors_vs(r.stiffness, truth(t), kAllMetrics[k]);
  });
  {
    std::string per = "trajectory,method,metric,median,mean\n";
    std::string pool = "method,metric,median,mean,windows\n";
    for (std::size_t m = 0; m < nm; ++m)
      for (std::size_t k = 0; k < nmet; ++k) {
        std::vector<std::vector<double>> parts;
        for (std::size_t t = 0; t < nd; ++t) {
          const auto& e = err[m * nd + t][k];
          per += row({demo_name(t), method_name(methods[m]), metric_name(kAllMetrics[k]), num(median(e)), num(mean(e))});
          parts.push_back(e);
        }
        const auto all = detail::concat(parts);
        pool += row({method_name(methods[m]), metric_name(kAllMetrics[k]), num(median(all)), num(mean(all)),
                     std::to_string(all.size())});
        summary["known_damping"][method_name(methods[m])][metric_name(kAllMetrics[k])] = median(all);
      }
    write_text(dir / "errors_known.csv", per);
    write_text(dir / "errors_known_pooled.csv", pool);
  }
  log << "estimate: known-damping tables written\n";

  // Timing: one sequential pass over the first trajectory per method, so
  // worker threads do not share cores with the clock.
  {
    std::string out = "method,per_window_ms,windows\n";
    for (Method m : methods) {
      const EstimationResult r =
          estimate_sequence(src.front(), KnownConstantDamping{SpdMatrix::identity(n, d_true)}, wc, m, copt);
      out += row({method_name(m), num(1e3 * r.per_window_seconds),
                  std::to_string(r.stiffness.size() - r.degenerate_count())});
      summary["timing_ms"][method_name(m)] = 1e3 * r.per_window_seconds;
    }
    write_text(dir / "timing.csv", out);
  }

  // Damping sweep, proposed vs nearest-SPD baseline.
  {
    const auto grid = cfg.estimator.sweep_grid();
    const std::vector<Method> sm{Method::Proposed, Method::NearestSpdLs};
    std::vector<std::vector<double>> le(grid.size() * sm.size() * nd);
    parallel_for(le.size(), jobs, [&](std::size_t job) {
      const std::size_t t = job % nd, m = (job / nd) % sm.size(), g = job / (nd * sm.size());
      const EstimationResult r =
          estimate_sequence(src[t], KnownConstantDamping{SpdMatrix::identity(n, grid[g])}, wc, sm[m], copt);
      le[job] = errors_vs(r.stiffness, truth(t), SpdMetric::LogEuclidean);
    });
    std::string out = "damping_guess,true_damping,method,median_log_euclidean,mean_log_euclidean\n";
    for (std::size_t g = 0; g < grid.size(); ++g)
      for (std::size_t m = 0; m < sm.size(); ++m) {
        const auto first = le.begin() + static_cast<std::ptrdiff_t>((g * sm.size() + m) * nd);
        const auto all = detail::concat(std::vector<std::vector<double>>(first, first + static_cast<std::ptrdiff_t>(nd)));
        out += row({num(grid[g]), num(d_true), method_name(sm[m]), num(median(all)), num(mean(all))});
      }
    write_text(dir / "sweep.csv", out);
  }
  log << "estimate: damping sweep written\n";

  // Unknown scalar damping.
  {
    std::vector<EstimationResult> res(nd);
    parallel_for(nd, jobs, [&](std::size_t t) {
      res[t] = estimate_unknown_damping(src[t], wc, Method::Proposed, copt);
      write_text(dir / "unknown" / (demo_name(t) + ".csv"), stiffness_csv(times[t], res[t].stiffness, res[t].damping_scalar));
    });
    std::string per = "trajectory,d_bar,median_log_euclidean\n";
    std::vector<std::vector<double>> parts;
    std::vector<double> dbar;
    for (std::size_t t = 0; t < nd; ++t) {
      parts.push_back(errors_vs(res[t].stiffness, truth(t), SpdMetric::LogEuclidean));
      dbar.push_back(*res[t].damping_scalar);
      per += row({demo_name(t), num(dbar.back()), num(median(parts.back()))});
    }
    write_text(dir / "unknown_damping.csv", per);
    std::vector<std::vector<double>> known_parts;
    const auto pm = std::find(methods.begin(), methods.end(), Method::Proposed);
    if (pm != methods.end()) {
      const auto m = static_cast<std::size_t>(pm - methods.begin());
      const auto le_idx = static_cast<std::size_t>(
          std::find(std::begin(kAllMetrics), std::end(kAllMetrics), SpdMetric::LogEuclidean) - std::begin(kAllMetrics));
      for (std::size_t t = 0; t < nd; ++t) known_parts.push_back(err[m * nd + t][le_idx]);
    }
    const std::string known_med = known_parts.empty() ? "nan" : num(median(detail::concat(known_parts)));
    write_text(dir / "unknown_summary.csv",
               "d_bar_mean,true_damping,median_log_euclidean_unknown,median_log_euclidean_known\n" +
                   row({num(mean(dbar)), num(d_true), num(median(detail::concat(parts))), known_med}));
    summary["unknown_damping"] = {{"d_bar_mean", mean(dbar)}, {"median_log_euclidean", median(detail::concat(parts))}};
  }
  log << "estimate: unknown-damping tables written\n";

  // Critical damping, error per iteration.
  const fs::path crit_dir = cfg.out / "demos_critical";
  if (fs::is_directory(crit_dir)) {
    const auto cdemos = load_demos(crit_dir);
    for (const auto& d : cdemos) detail::require_truth(d);
    std::vector<EstimationResult> res(cdemos.size());
    parallel_for(cdemos.size(), jobs, [&](std::size_t t) {
      res[t] = estimate_critical_damping(WindowSource(cdemos[t]), wc, cfg.estimator.zeta, cfg.estimator.max_iters,
                                         cfg.estimator.tol, Method::Proposed, copt);
      write_text(dir / "critical" / (demo_name(t) + ".csv"), stiffness_csv(sample_times(cdemos[t]), res[t].stiffness));
    });
    std::size_t iters = res.front().history.size();
    for (const auto& r : res) iters = std::min(iters, r.history.size());
    std::string out = "iteration,median_log_euclidean,mean_log_euclidean,mean_change\n";
    json curve = json::array();
    for (std::size_t it = 0; it < iters; ++it) {
      std::vector<std::vector<double>> parts;
      std::vector<double> change;
      for (std::size_t t = 0; t < res.size(); ++t) {
        parts.push_back(errors_vs(res[t].history[it], cdemos[t].truth->stiffness, SpdMetric::LogEuclidean));
        if (it > 0) change.push_back(res[t].iteration_change[it - 1]);
      }
      const auto all = detail::concat(parts);
      out += row({std::to_string(it + 1), num(median(all)), num(mean(all)), it > 0 ? num(mean(change)) : "nan"});
      curve.push_back(median(all));
    }
    write_text(dir / "iterative.csv", out);
    summary["critical_median_by_iteration"] = curve;
    log << "estimate: iteration table written\n";
  } else {
    log << "estimate: no demos_critical/, iteration table skipped\n";
  }

  write_json(dir / "summary.json", summary);
  write_run_manifest(dir, "estimate", cfg);
}

// train / predict --------------------------------------------------------------

inline TrainingSet build_training_set(const std::vector<Demonstration>& demos,
                                      const std::vector<std::vector<MatrixXd>>& stiffness, int stride,
                                      std::vector<std::pair<std::size_t, std::size_t>>* where = nullptr) {
  TrainingSet ts;
  for (std::size_t t = 0; t < demos.size(); ++t) {
    if (stiffness[t].size() != demos[t].size())
      throw InvalidInput("training targets and demonstration " + demo_name(t) + " differ in length");
    for (std::size_t i = 0; i < demos[t].size(); i += static_cast<std::size_t>(stride)) {
      const auto& s = demos[t].samples[i];
      ts.add(model_input(s.f, s.x), chol_vec(SpdMatrix::checked(stiffness[t][i])));
      if (where) where->emplace_back(t, i);
    }
  }
  return ts;
}

inline void cmd_train(const ExperimentConfig& cfg, std::ostream& log) {
  using detail::num;
  const auto demos = load_demos(cfg.out / "demos");
  const fs::path res_dir = cfg.out / "estimate" / "results" / cfg.stiffmodel.source;
  std::vector<std::vector<MatrixXd>> ks;
  for (std::size_t t = 0; t < demos.size(); ++t)
    ks.push_back(read_stiffness_csv(res_dir / (demo_name(t) + ".csv"), demos[t].dim));
  std::vector<std::pair<std::size_t, std::size_t>> where;
  const TrainingSet ts = build_training_set(demos, ks, cfg.stiffmodel.stride, &where);
  const KernelModel model = train(ts, cfg.stiffmodel.h, cfg.stiffmodel.lambda);
  const fs::path dir = cfg.out / "train";
  save_model(model, dir / "model.json");

  std::string rec = "trajectory,index,log_euclidean\n";
  std::vector<double> le;
  for (Eigen::Index r = 0; r < ts.rows(); ++r) {
    const SymMatrix p = model.predict(ts.inputs.row(r).transpose());
    const SpdMatrix target = SpdMatrix::checked(ks[where[r].first][where[r].second]);
    le.push_back(spd_distance(target, lift_spd(p), SpdMetric::LogEuclidean));
    rec += detail::row({demo_name(where[r].first), std::to_string(where[r].second), num(le.back())});
  }
  write_text(dir / "reconstruction.csv", rec);

  // PSD check over every sample of every demonstration.
  std::size_t total = 0, psd = 0;
  double min_eig = std::numeric_limits<double>::infinity();
  for (const auto& d : demos)
    for (const auto& s : d.samples) {
      const double e = min_eigenvalue(model.predict(model_input(s.f, s.x)).matrix());
      min_eig = std::min(min_eig, e);
      ++total;
      if (e >= -1e-9) ++psd;
    }
  const double zero_abs = model.predict(VectorXd::Zero(2 * model.dim())).matrix().cwiseAbs().maxCoeff();
  write_text(dir / "train_summary.csv",
             "rows,h,lambda,mean_log_euclidean,max_log_euclidean,predictions,psd_fraction,min_prediction_eig,"
             "zero_input_max_abs\n" +
                 detail::row({std::to_string(ts.rows()), num(model.h()), num(model.lambda()), num(mean(le)),
                              num(*std::max_element(le.begin(), le.end())), std::to_string(total),
                              num(static_cast<double>(psd) / static_cast<double>(total)), num(min_eig),
                              num(zero_abs)}));
  write_run_manifest(dir, "train", cfg);
  log << "train: " << ts.rows() << " rows, mean reconstruction error " << mean(le) << " -> " << dir.string() << "\n";
}

// Query rows t,f1..fN,x1..xN
inline std::vector<SymMatrix> predict_query_csv(const KernelModel& model, const fs::path& path,
                                                std::vector<double>& t) {
  const CsvTable q = read_numeric_csv(path);
  const int n = model.dim();
  if (q.header.size() != static_cast<std::size_t>(1 + 2 * n))
    throw InvalidInput(path.string() + ": query has " + std::to_string(q.header.size()) +
                       " columns, the model expects t plus " + std::to_string(2 * n));
  std::vector<SymMatrix> out;
  for (const auto& r : q.rows) {
    t.push_back(r[0]);
    VectorXd s(2 * n);
    for (int i = 0; i < 2 * n; ++i) s(i) = r[static_cast<std::size_t>(1 + i)];
    out.push_back(model.predict(s));
  }
  return out;
}

inline void cmd_predict(const ExperimentConfig& cfg, std::ostream& log) {
  const KernelModel model = load_model(cfg.out / "train" / "model.json");
  const fs::path dir = cfg.out / "predict";
  const auto files = list_demo_files(cfg.out / "demos");
  for (std::size_t t = 0; t < files.size(); ++t) {
    const Demonstration d = load_demo(files[t]);
    if (d.dim != model.dim()) throw InvalidInput("predict: model dimension differs from the demonstration's");
    std::vector<SymMatrix> ks;
    for (const auto& s : d.samples) ks.push_back(model.predict(model_input(s.f, s.x)));
    write_text(dir / (demo_name(t) + ".csv"), stiffness_csv(sample_times(d), ks));
  }
  if (!cfg.stiffmodel.query.empty()) {
    std::vector<double> t;
    const auto ks = predict_query_csv(model, cfg.stiffmodel.query, t);
    write_text(dir / "query.csv", stiffness_csv(t, ks));
  }
  write_run_manifest(dir, "predict", cfg);
  log << "predict: " << files.size() << " trajectories -> " << dir.string() << "\n";
}

// simulate -----------------------------------------------------------------------

inline std::string grid_cell_name(ControlMode m, double k_c) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%s_kc%g", control_mode_name(m), k_c);
  return buf;
}

inline const char* kGridHeader =
    "mode,k_c,outcome,t_div,alpha,xi,W0,max_passivity_slack,slack_tolerance,min_T,max_T,gate_duty,"
    "freeze_constant,rms_stiffness_dev,rms_tracking,max_abs_e";

inline void cmd_simulate(const ExperimentConfig& cfg, int jobs, std::ostream& log) {
  using detail::num;
  const fs::path dir = cfg.out / "simulate";
  fs::create_directories(dir);
  std::vector<std::pair<ControlMode, double>> cells;
  for (ControlMode m : cfg.tankvic.modes)
    for (double k : cfg.tankvic.k_c) cells.emplace_back(m, k);
  std::vector<std::string> lines(cells.size());
  parallel_for(cells.size(), jobs, [&](std::size_t i) {
    ControllerConfig c = cfg.tankvic.base;
    c.mode = cells[i].first;
    c.k_c = cells[i].second;
    const SimLog sim = run_simulation(c);
    const PassivityReport a = passivity_audit(sim);
    const std::string name = grid_cell_name(c.mode, c.k_c);
    write_text(dir / (name + ".csv"), sim_log_csv(sim, cfg.tankvic.log_stride));
    json aj = to_json(a);
    aj["config"] = to_json(sim.config);
    aj["t_max"] = sim.config.t_max;
    write_json(dir / (name + "_audit.json"), aj);
    lines[i] = detail::row({control_mode_name(c.mode), num(c.k_c), a.outcome == Outcome::Stable ? "stable" : "diverged",
                            std::isfinite(a.t_div) ? num(a.t_div) : "nan", num(sim.alpha), num(sim.xi), num(a.W0),
                            num(a.max_passivity_slack), num(a.slack_tolerance), num(a.min_T), num(a.max_T),
                            num(a.gate_duty), a.freeze_constant ? "1" : "0", num(a.rms_stiffness_dev),
                            num(a.rms_tracking), num(a.max_abs_e)});
  });
  std::string out = std::string(kGridHeader) + "\n";
  for (const auto& l : lines) out += l;
  write_text(dir / "grid.csv", out);
  write_run_manifest(dir, "simulate", cfg);
  log << "simulate: " << cells.size() << " runs -> " << dir.string() << "\n";
}

// report -----------------------------------------------------------------------------

struct Verdict {
  std::string id, description, status, detail;  // status: PASS, FAIL, MISSING
};

struct ReportResult {
  std::vector<Verdict> verdicts;
  std::vector<std::string> absent, warnings;
  std::string digest;
  bool any_fail() const {
    return std::any_of(verdicts.begin(), verdicts.end(), [](const Verdict& v) { return v.status == "FAIL"; });
  }
  bool any_missing() const { return !absent.empty(); }
};

namespace detail {

// Cell lookup by key columns; verdicts only ever read these strings.
class Table {
 public:
  explicit Table(const fs::path& p) : path_(p), t_(read_csv(p)) {}
  const std::string& cell(const std::map<std::string, std::string>& key, const std::string& col) const {
    const int c = t_.column(col);
    if (c < 0) throw ParseError(path_.string(), 1, "no column '" + col + "'");
    for (const auto& r : t_.rows) {
      bool ok = true;
      for (const auto& [k, v] : key) {
        const int kc = t_.column(k);
        if (kc < 0 || !same(r[static_cast<std::size_t>(kc)], v)) ok = false;
      }
      if (ok) return r[static_cast<std::size_t>(c)];
    }
    throw ParseError(path_.string(), 0, "no row for the requested key in column '" + col + "'");
  }
  double value(const std::map<std::string, std::string>& key, const std::string& col) const {
    double v;
    const std::string& s = cell(key, col);
    if (s == "nan") return std::numeric_limits<double>::quiet_NaN();
    if (!parse_double(s, v)) throw ParseError(path_.string(), 0, "bad number '" + s + "'");
    return v;
  }
  const CsvText& raw() const { return t_; }

 private:
  static bool same(const std::string& a, const std::string& b) {
    double x, y;
    if (parse_double(a, x) && parse_double(b, y)) return x == y;
    return a == b;
  }
  fs::path path_;
  CsvText t_;
};

inline std::string markdown_table(const CsvText& t) {
  std::string s = "|";
  for (const auto& h : t.header) s += " " + h + " |";
  s += "\n|";
  for (std::size_t i = 0; i < t.header.size(); ++i) s += " --- |";
  s += "\n";
  for (const auto& r : t.rows) {
    s += "|";
    for (const auto& c : r) s += " " + c + " |";
    s += "\n";
  }
  return s;
}

inline std::string yes(bool b) { return b ? "PASS" : "FAIL"; }

}  // namespace detail

inline ReportResult build_report(const std::vector<fs::path>& runs) {
  using detail::num;
  using detail::Table;
  using detail::yes;
  ReportResult rep;
  if (runs.empty()) throw IoError("report: no run directories given");
  std::string digest = "# vicpass report\n\n";
  std::map<std::string, fs::path> found;  // first run providing each table
  const std::vector<std::pair<std::string, std::string>> tables{
      {"errors_known_pooled", "estimate/errors_known_pooled.csv"},
      {"errors_known", "estimate/errors_known.csv"},
      {"sweep", "estimate/sweep.csv"},
      {"unknown_summary", "estimate/unknown_summary.csv"},
      {"unknown_damping", "estimate/unknown_damping.csv"},
      {"iterative", "estimate/iterative.csv"},
      {"timing", "estimate/timing.csv"},
      {"train_summary", "train/train_summary.csv"},
      {"grid", "simulate/grid.csv"}};
  bool any_dir = false;
  for (const auto& r : runs) {
    if (!fs::is_directory(r)) {
      rep.absent.push_back(r.string() + " (run directory)");
      continue;
    }
    any_dir = true;
  }
  if (!any_dir) {
    rep.digest = "# vicpass report\n\nNo run directories found.\n";
    return rep;
  }

  for (const auto& [id, rel] : tables) {
    for (const auto& r : runs)
      if (fs::exists(r / rel)) {
        found.emplace(id, r / rel);
        break;
      }
    if (!found.count(id)) rep.absent.push_back(rel);
  }

  // format versions across every manifest that fed the report
  std::map<std::string, std::string> versions;
  for (const auto& r : runs)
    for (const char* sub : {"demos", "estimate", "train", "predict", "simulate"}) {
      const fs::path m = r / sub / "run.json";
      if (!fs::exists(m)) continue;
      const json j = read_json(m);
      versions[m.string()] = j.value("tool_version", "?") + " " + j.value("formats", json::object()).dump();
    }
  if (!versions.empty()) {
    const std::string first = versions.begin()->second;
    for (const auto& [path, v] : versions)
      if (v != first) rep.warnings.push_back("version mismatch: " + path + " has " + v + ", " +
                                             versions.begin()->first + " has " + first);
  }

  auto have = [&](std::initializer_list<const char*> ids) {
    for (const char* i : ids)
      if (!found.count(i)) return false;
    return true;
  };
  auto missing = [&](const std::string& id, const std::string& what) {
    rep.verdicts.push_back({id, what, "MISSING", "inputs absent"});
  };

  if (have({"errors_known_pooled"})) {
    const Table t(found["errors_known_pooled"]);
    bool ok = true;
    std::string det;
    for (const char* m : {"proposed", "nearest_spd_ls", "convex_direct"}) {
      const double v = t.value({{"method", m}, {"metric", "log_euclidean"}}, "median");
      ok = ok && v <= 0.1;
      det += std::string(m) + "=" + num(v) + " ";
    }
    for (SpdMetric metric : kAllMetrics) {
      const double p = t.value({{"method", "proposed"}, {"metric", metric_name(metric)}}, "median");
      const double b = t.value({{"method", "nearest_spd_ls"}, {"metric", metric_name(metric)}}, "median");
      ok = ok && p <= 1.5 * b;
      det += std::string(metric_name(metric)) + " ratio=" + num(p / b) + " ";
    }
    rep.verdicts.push_back({"2", "known damping: median log-Euclidean <= 0.1, proposed <= 1.5x baseline", yes(ok), det});
  } else {
    missing("2", "known damping accuracy");
  }

  if (have({"sweep"})) {
    const Table t(found["sweep"]);
    std::vector<double> gap, err;
    double d_true = 0.0, lo = 1e300, hi = -1e300;
    for (const auto& r : t.raw().rows) {
      double g;
      parse_double(r[0], g);
      lo = std::min(lo, g);
      hi = std::max(hi, g);
    }
    bool ends = true;
    std::string det;
    for (double g : {lo, hi}) {
      const double p = t.value({{"damping_guess", num(g)}, {"method", "proposed"}}, "median_log_euclidean");
      const double b = t.value({{"damping_guess", num(g)}, {"method", "nearest_spd_ls"}}, "median_log_euclidean");
      ends = ends && p <= b;
      det += "at " + num(g) + ": " + num(p) + " vs " + num(b) + "; ";
    }
    for (const auto& r : t.raw().rows) {
      if (r[2] != "proposed") continue;
      double g, e;
      parse_double(r[0], g);
      parse_double(r[1], d_true);
      parse_double(r[3], e);
      gap.push_back(std::abs(g - d_true));
      err.push_back(e);
    }
    const double rho = spearman(gap, err);
    det += "spearman=" + num(rho);
    rep.verdicts.push_back({"3", "damping sweep: proposed <= baseline at the ends, Spearman >= 0.8",
                            yes(ends && rho >= 0.8), det});
  } else {
    missing("3", "damping sweep");
  }

  if (have({"unknown_summary"})) {
    const Table t(found["unknown_summary"]);
    const auto& r = t.raw().rows.at(0);
    double dbar, dtrue, eu, ek;
    parse_double(r[0], dbar);
    parse_double(r[1], dtrue);
    parse_double(r[2], eu);
    if (!parse_double(r[3], ek)) ek = std::numeric_limits<double>::quiet_NaN();
    const bool ok = std::abs(dbar - dtrue) <= 0.05 * dtrue && eu <= 2.0 * ek;
    rep.verdicts.push_back({"4", "unknown damping: d_bar within 5%, error <= 2x known", yes(ok),
                            "d_bar=" + num(dbar) + " error=" + num(eu) + " known=" + num(ek)});
  } else {
    missing("4", "unknown damping");
  }

  if (have({"iterative"})) {
    const Table t(found["iterative"]);
    std::vector<double> e;
    for (const auto& r : t.raw().rows) {
      double v;
      parse_double(r[1], v);
      e.push_back(v);
    }
    bool ok = e.size() >= 10;
    for (std::size_t i = 2; i < e.size(); ++i) ok = ok && e[i] <= e[i - 1] + 1e-3;
    ok = ok && !e.empty() && e.back() <= e.front();
    std::string det;
    for (double v : e) det += num(v) + " ";
    rep.verdicts.push_back({"5", "critical damping: non-increasing from iteration 2, final <= initial", yes(ok), det});
  } else {
    missing("5", "critical damping iterations");
  }

  if (have({"timing"})) {
    const Table t(found["timing"]);
    const double p = t.value({{"method", "proposed"}}, "per_window_ms");
    const double b = t.value({{"method", "nearest_spd_ls"}}, "per_window_ms");
    const double c = t.value({{"method", "convex_direct"}}, "per_window_ms");
    rep.verdicts.push_back({"6", "timing: proposed <= 3x baseline, convex >= 50x proposed",
                            yes(p <= 3.0 * b && c >= 50.0 * p),
                            "proposed=" + num(p) + " baseline=" + num(b) + " convex=" + num(c) + " ms"});
  } else {
    missing("6", "timing");
  }

  if (have({"train_summary"})) {
    const Table t(found["train_summary"]);
    const auto& r = t.raw().rows.at(0);
    double mle, frac, zero;
    parse_double(r[static_cast<std::size_t>(t.raw().column("mean_log_euclidean"))], mle);
    parse_double(r[static_cast<std::size_t>(t.raw().column("psd_fraction"))], frac);
    parse_double(r[static_cast<std::size_t>(t.raw().column("zero_input_max_abs"))], zero);
    rep.verdicts.push_back({"7", "kernel model: reconstruction <= 0.05, all predictions PSD, zero at s=0",
                            yes(mle <= 0.05 && frac == 1.0 && zero == 0.0),
                            "mean=" + num(mle) + " psd_fraction=" + num(frac) + " zero=" + num(zero)});
  } else {
    missing("7", "kernel model");
  }

  if (have({"grid"})) {
    const Table t(found["grid"]);
    auto outcome = [&](const char* m, double k) { return t.cell({{"mode", m}, {"k_c", num(k)}}, "outcome"); };
    auto val = [&](const char* m, double k, const char* col) { return t.value({{"mode", m}, {"k_c", num(k)}}, col); };
    const bool ok = outcome("direct", 13) == "stable" && outcome("direct", 12) == "diverged" &&
                    outcome("proposed", 12) == "stable" &&
                    val("proposed", 12, "rms_stiffness_dev") < val("original_tank", 12, "rms_stiffness_dev") &&
                    val("proposed", 12, "rms_tracking") <= val("original_tank", 12, "rms_tracking");
    rep.verdicts.push_back(
        {"8", "control grid: Direct/13 stable, Direct/12 diverged, Proposed/12 stable and closer than OriginalTank",
         yes(ok),
         "direct13=" + outcome("direct", 13) + " direct12=" + outcome("direct", 12) + " proposed12=" +
             outcome("proposed", 12) + " rms_dev " + num(val("proposed", 12, "rms_stiffness_dev")) + " vs " +
             num(val("original_tank", 12, "rms_stiffness_dev")) + " rms_e " + num(val("proposed", 12, "rms_tracking")) +
             " vs " + num(val("original_tank", 12, "rms_tracking"))});
    bool pass = true;
    std::string det;
    for (const auto& r : t.raw().rows) {
      if (r[0] != "proposed") continue;
      double slack, tol, min_t;
      parse_double(r[static_cast<std::size_t>(t.raw().column("max_passivity_slack"))], slack);
      parse_double(r[static_cast<std::size_t>(t.raw().column("slack_tolerance"))], tol);
      parse_double(r[static_cast<std::size_t>(t.raw().column("min_T"))], min_t);
      const bool frozen = r[static_cast<std::size_t>(t.raw().column("freeze_constant"))] == "1";
      pass = pass && slack <= tol && min_t >= 0.0 && frozen;
      det += "k_c=" + r[1] + ": slack=" + num(slack) + " tol=" + num(tol) + " min_T=" + num(min_t) +
             " frozen=" + (frozen ? "1" : "0") + "; ";
    }
    rep.verdicts.push_back({"9", "passivity audit of Proposed runs", yes(pass), det});
  } else {
    missing("8", "control grid");
    missing("9", "passivity audit");
  }

  for (const auto& w : rep.warnings) digest += "WARNING: " + w + "\n";
  if (!rep.warnings.empty()) digest += "\n";
  digest += "## Verdicts\n\n| check | status | description | detail |\n| --- | --- | --- | --- |\n";
  for (const auto& v : rep.verdicts)
    digest += "| " + v.id + " | " + v.status + " | " + v.description + " | " + v.detail + " |\n";
  digest += "\nChecks 1 and 10 are unit-level and run in the acceptance binary.\n";
  if (!rep.absent.empty()) {
    digest += "\n## Missing inputs\n\n";
    for (const auto& a : rep.absent) digest += "- " + a + "\n";
  }
  const std::vector<std::pair<std::string, std::string>> sections{
      {"errors_known_pooled", "Known damping, pooled errors"},
      {"sweep", "Damping sweep"},
      {"unknown_summary", "Unknown damping"},
      {"unknown_damping", "Unknown damping per trajectory"},
      {"iterative", "Critical damping by iteration"},
      {"timing", "Per-window time"},
      {"train_summary", "Kernel model"},
      {"grid", "Control grid"}};
  for (const auto& [id, title] : sections)
    if (found.count(id)) {
      digest += "\n## " + title + "\n\nSource: " + found[id].string() + "\n\n";
      digest += detail::markdown_table(read_csv(found[id]));
    }
  rep.digest = digest;
  return rep;
}

// 0 ok, 2 missing inputs, 3 a check failed
inline int cmd_report(const std::vector<fs::path>& runs, const fs::path& out, std::ostream& log) {
  const ReportResult rep = build_report(runs);
  const fs::path dir = out / "report";
  write_text(dir / "digest.md", rep.digest);
  std::string v = "check,status,description,detail\n";
  for (const auto& x : rep.verdicts) v += x.id + "," + x.status + ",\"" + x.description + "\",\"" + x.detail + "\"\n";
  write_text(dir / "verdicts.csv", v);
  for (const auto& w : rep.warnings) log << "report: WARNING " << w << "\n";
  for (const auto& a : rep.absent) log << "report: missing " << a << "\n";
  for (const auto& x : rep.verdicts) log << "report: check " << x.id << " " << x.status << "  " << x.detail << "\n";
  log << "report: digest -> " << (dir / "digest.md").string() << "\n";
  if (rep.any_fail()) return 3;
  if (rep.any_missing()) return 2;
  return 0;
}

}  // namespace vicpass
