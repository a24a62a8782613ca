#pragma once

// Variable impedance control with an energy tank. The plant is the error
// dynamics H e'' + D e' + f(e) = F_ext with F_ext = 0, and the tank is kept
// in energy form T (T = x^2 / 2 of the tank state).

#include <Eigen/Dense>

#include <cmath>
#include <limits>
#include <optional>
#include <string>
#include <vector>

#include "vicpass/demogen.hpp"
#include "vicpass/errors.hpp"
#include "vicpass/io_util.hpp"
#include "vicpass/spd.hpp"
#include "vicpass/stats.hpp"

namespace vicpass {

enum class ControlMode { Direct, Proposed, OriginalTank };

inline const char* control_mode_name(ControlMode m) {
  switch (m) {
    case ControlMode::Direct: return "direct";
    case ControlMode::Proposed: return "proposed";
    case ControlMode::OriginalTank: return "original_tank";
  }
  return "?";
}

inline ControlMode control_mode_from_name(const std::string& s) {
  for (ControlMode m : {ControlMode::Direct, ControlMode::Proposed, ControlMode::OriginalTank})
    if (s == control_mode_name(m)) return m;
  throw ConfigError("unknown control mode '" + s + "'");
}

struct ControllerConfig {
  ControlMode mode = ControlMode::Proposed;
  double k_c = 12.0;     // N/m, offset of the reference stiffness
  double mass = 10.0;    // kg
  double damping = 1.0;  // N s/m
  double alpha = 0.0;    // 1/s; <= 0 selects min lambda(D) / max lambda(H)
  double xi = 0.0;       // (m/s)^2; <= 0 uses max(V(0)/10, xi_min)
  double xi_min = 1e-4;
  double t_max = 10.0;  // J
  double t0 = 1.0;      // J, initial energy of the original tank
  double dt = 1e-3;
  double duration = 110.0;
  double e_max = 10.0;  // m, divergence threshold on |e|
  double e0 = 1.0;      // m
  double ed0 = 0.0;     // m/s
};

inline json to_json(const ControllerConfig& c) {
  return {{"mode", control_mode_name(c.mode)}, {"k_c", c.k_c}, {"mass", c.mass}, {"damping", c.damping},
          {"alpha", c.alpha}, {"xi", c.xi}, {"xi_min", c.xi_min}, {"t_max", c.t_max}, {"t0", c.t0},
          {"dt", c.dt}, {"duration", c.duration}, {"e_max", c.e_max}, {"e0", c.e0}, {"ed0", c.ed0}};
}

inline ControllerConfig controller_config_from_json(const json& j) {
  ControllerConfig c;
  if (j.contains("mode")) c.mode = control_mode_from_name(j.at("mode").get<std::string>());
  c.k_c = j.value("k_c", c.k_c);
  c.mass = j.value("mass", c.mass);
  c.damping = j.value("damping", c.damping);
  c.alpha = j.value("alpha", c.alpha);
  c.xi = j.value("xi", c.xi);
  c.xi_min = j.value("xi_min", c.xi_min);
  c.t_max = j.value("t_max", c.t_max);
  c.t0 = j.value("t0", c.t0);
  c.dt = j.value("dt", c.dt);
  c.duration = j.value("duration", c.duration);
  c.e_max = j.value("e_max", c.e_max);
  c.e0 = j.value("e0", c.e0);
  c.ed0 = j.value("ed0", c.ed0);
  return c;
}

struct TankState {
  double energy = 0.0;  // J
  int sigma = 1;        // 1 iff energy < T_max
};

inline int tank_sigma(double energy, double t_max) { return energy < t_max ? 1 : 0; }

// min_t lambda_min(D_t) / lambda_max(H)
inline double select_alpha(const std::vector<SpdMatrix>& damping, const SpdMatrix& inertia) {
  if (damping.empty()) throw InvalidInput("select_alpha: empty damping schedule");
  double lo = std::numeric_limits<double>::infinity();
  for (const auto& d : damping) {
    if (d.dim() != inertia.dim()) throw InvalidDimension("select_alpha: dimension mismatch");
    lo = std::min(lo, min_eigenvalue(d.matrix()));
  }
  return lo / max_eigenvalue(inertia.matrix());
}

inline double storage_v(const VectorXd& e, const VectorXd& ed, const MatrixXd& h, double alpha) {
  const VectorXd z = ed + alpha * e;
  return 0.5 * z.dot(h * z);
}

inline double compute_xi_default(const VectorXd& e0, const VectorXd& ed0, const MatrixXd& h, double alpha,
                                 double xi_min = 1e-4) {
  return std::max(storage_v(e0, ed0, h, alpha) / 10.0, xi_min);
}

// Gate quantity (e' + alpha e)^T (e' + alpha e).
inline double gate_quantity(const VectorXd& e, const VectorXd& ed, double alpha) {
  return (ed + alpha * e).squaredNorm();
}

// Reference stiffness inside the gate, otherwise the previous applied one.
template <typename K>
K gate_stiffness(const VectorXd& e, const VectorXd& ed, double alpha, double xi, const K& k_ref, const K& k_prev) {
  return gate_quantity(e, ed, alpha) < xi ? k_ref : k_prev;
}

// T' = sigma (a e^T K e + e'^T D e') - a e'^T H e' - e'^T (a^2 H - K - a D) e
inline double tank_rate(const VectorXd& e, const VectorXd& ed, const MatrixXd& k, const MatrixXd& d,
                        const MatrixXd& h, double alpha, int sigma) {
  const double dissipation = alpha * e.dot(k * e) + ed.dot(d * ed);
  const MatrixXd coupling = alpha * alpha * h - k - alpha * d;
  return sigma * dissipation - alpha * ed.dot(h * ed) - ed.dot(coupling * e);
}

// One explicit step of the tank alone for a state held over dt.
inline TankState tank_step(const TankState& s, const VectorXd& e, const VectorXd& ed, const MatrixXd& k,
                           const MatrixXd& d, const MatrixXd& h, double alpha, double dt, double t_max) {
  TankState out;
  out.energy = std::max(s.energy + dt * tank_rate(e, ed, k, d, h, alpha, s.sigma), 0.0);
  out.sigma = tank_sigma(out.energy, t_max);
  return out;
}

// Tank of the original approach: charges from e'^T D e', pays for the power
// of the stiffness variation K - K_c.
inline double original_tank_rate(const VectorXd& e, const VectorXd& ed, const MatrixXd& k, const MatrixXd& k_c,
                                 const MatrixXd& d, int sigma) {
  return sigma * ed.dot(d * ed) + ed.dot((k - k_c) * e);
}

enum class Outcome { Stable, Diverged };

struct SimRow {
  double t, x, v, e, edot, k_ref, k_applied, tank_T;
  int sigma, gate;
  double V, W, flux;
};

struct SimLog {
  ControllerConfig config;
  double alpha = 0.0;
  double xi = 0.0;
  std::vector<SimRow> rows;
  Outcome outcome = Outcome::Stable;
  double t_div = std::numeric_limits<double>::quiet_NaN();
};

inline ControllerConfig resolved(const ControllerConfig& cfg, double& alpha, double& xi) {
  if (!(cfg.dt > 0.0) || !(cfg.duration > 0.0)) throw ConfigError("controller: dt and duration must be positive");
  if (!(cfg.mass > 0.0) || !(cfg.damping > 0.0)) throw ConfigError("controller: mass and damping must be positive");
  if (!(cfg.t_max > 0.0)) throw ConfigError("controller: T_max must be positive");
  if (!(cfg.e_max > 0.0)) throw ConfigError("controller: e_max must be positive");
  const SpdMatrix h = SpdMatrix::identity(1, cfg.mass);
  alpha = cfg.alpha > 0.0 ? cfg.alpha : select_alpha({SpdMatrix::identity(1, cfg.damping)}, h);
  xi = cfg.xi > 0.0 ? cfg.xi
                    : compute_xi_default(VectorXd::Constant(1, cfg.e0), VectorXd::Constant(1, cfg.ed0), h.matrix(),
                                         alpha, cfg.xi_min);
  ControllerConfig c = cfg;
  c.alpha = alpha;
  c.xi = xi;
  return c;
}

// 1-DOF closed loop around x^d = 10 sin(0.1 t), k^d = k_c + 10 sin(t).
// Gates and sigma are held over each RK4 step.
inline SimLog run_simulation(const ControllerConfig& cfg_in) {
  SimLog log;
  log.config = resolved(cfg_in, log.alpha, log.xi);
  const ControllerConfig& cfg = log.config;
  const double alpha = log.alpha, xi = log.xi;
  const double m = cfg.mass, d = cfg.damping, dt = cfg.dt;
  const MatrixXd H = MatrixXd::Constant(1, 1, m), D = MatrixXd::Constant(1, 1, d);
  const MatrixXd Kc = MatrixXd::Constant(1, 1, cfg.k_c);
  const long steps = std::lround(cfg.duration / dt);

  double e = cfg.e0, ed = cfg.ed0;
  double tank = cfg.mode == ControlMode::OriginalTank ? cfg.t0 : 0.0;
  double k_prev = control_ref_1dof(cfg.k_c, 0.0).k;
  const double flux = 0.0;  // integral of z^T F_ext, F_ext = 0
  log.rows.reserve(static_cast<std::size_t>(steps + 1));

  for (long i = 0;; ++i) {
    const double t = static_cast<double>(i) * dt;
    const ControlReference ref = control_ref_1dof(cfg.k_c, t);
    const VectorXd ev = VectorXd::Constant(1, e), edv = VectorXd::Constant(1, ed);
    double k = ref.k;
    int gate = 0;
    switch (cfg.mode) {
      case ControlMode::Direct: break;
      case ControlMode::Proposed:
        k = gate_stiffness(ev, edv, alpha, xi, ref.k, k_prev);
        gate = gate_quantity(ev, edv, alpha) < xi ? 0 : 1;
        break;
      case ControlMode::OriginalTank:
        if (!(tank > 0.0)) {
          k = cfg.k_c;
          gate = 1;
        }
        break;
    }
    const int sigma = tank_sigma(tank, cfg.t_max);
    const double z = ed + alpha * e;
    const double v = 0.5 * m * z * z;
    log.rows.push_back({t, ref.x + e, ref.v + ed, e, ed, ref.k, k, tank, sigma, gate, v, v + tank, flux});

    if (!std::isfinite(e) || std::abs(e) > cfg.e_max) {
      log.outcome = Outcome::Diverged;
      log.t_div = t;
      break;
    }
    if (i == steps) break;

    const MatrixXd K = MatrixXd::Constant(1, 1, k);
    auto rate = [&](double pe, double pv, double& de, double& dv, double& dT) {
      de = pv;
      dv = (-d * pv - k * pe) / m;
      const VectorXd a = VectorXd::Constant(1, pe), b = VectorXd::Constant(1, pv);
      dT = cfg.mode == ControlMode::OriginalTank ? original_tank_rate(a, b, K, Kc, D, sigma)
                                                 : tank_rate(a, b, K, D, H, alpha, sigma);
    };
    double k1e, k1v, k1t, k2e, k2v, k2t, k3e, k3v, k3t, k4e, k4v, k4t;
    rate(e, ed, k1e, k1v, k1t);
    rate(e + 0.5 * dt * k1e, ed + 0.5 * dt * k1v, k2e, k2v, k2t);
    rate(e + 0.5 * dt * k2e, ed + 0.5 * dt * k2v, k3e, k3v, k3t);
    rate(e + dt * k3e, ed + dt * k3v, k4e, k4v, k4t);
    e += dt / 6.0 * (k1e + 2 * k2e + 2 * k3e + k4e);
    ed += dt / 6.0 * (k1v + 2 * k2v + 2 * k3v + k4v);
    tank = std::max(tank + dt / 6.0 * (k1t + 2 * k2t + 2 * k3t + k4t), 0.0);
    k_prev = k;
  }
  return log;
}

struct PassivityReport {
  Outcome outcome = Outcome::Stable;
  double t_div = std::numeric_limits<double>::quiet_NaN();
  double W0 = 0.0;
  double max_passivity_slack = 0.0;  // max_t W(t) - W(0) - flux(t)
  double slack_tolerance = 0.0;      // 1e-6 max(W(0), 1 J)
  double min_T = 0.0;
  double max_T = 0.0;
  double gate_duty = 0.0;
  double rms_stiffness_dev = 0.0;
  double rms_tracking = 0.0;
  double max_abs_e = 0.0;
  bool freeze_constant = true;  // applied stiffness bit-constant over each gated interval
  double max_Q_eig = 0.0;       // over gated steps: Q = K'/2 + a D'/2 - a K with K' = 0
};

inline PassivityReport passivity_audit(const SimLog& log) {
  if (log.rows.empty()) throw InvalidInput("passivity_audit: empty log");
  PassivityReport r;
  r.outcome = log.outcome;
  r.t_div = log.t_div;
  const auto& rows = log.rows;
  r.W0 = rows.front().W;
  r.slack_tolerance = 1e-6 * std::max(r.W0, 1.0);
  r.max_passivity_slack = -std::numeric_limits<double>::infinity();
  r.min_T = std::numeric_limits<double>::infinity();
  r.max_T = -std::numeric_limits<double>::infinity();
  r.max_Q_eig = -std::numeric_limits<double>::infinity();
  std::vector<double> dev, trk;
  dev.reserve(rows.size());
  trk.reserve(rows.size());
  std::size_t gated = 0;
  for (std::size_t i = 0; i < rows.size(); ++i) {
    const auto& row = rows[i];
    r.max_passivity_slack = std::max(r.max_passivity_slack, row.W - r.W0 - row.flux);
    r.min_T = std::min(r.min_T, row.tank_T);
    r.max_T = std::max(r.max_T, row.tank_T);
    dev.push_back(row.k_applied - row.k_ref);
    trk.push_back(row.e);
    r.max_abs_e = std::max(r.max_abs_e, std::abs(row.e));
    if (row.gate) {
      ++gated;
      // frozen: the applied stiffness equals the previous step's
      if (i > 0 && log.config.mode == ControlMode::Proposed && row.k_applied != rows[i - 1].k_applied)
        r.freeze_constant = false;
      r.max_Q_eig = std::max(r.max_Q_eig, -log.alpha * row.k_applied);
    }
  }
  if (!gated) r.max_Q_eig = 0.0;
  r.gate_duty = static_cast<double>(gated) / static_cast<double>(rows.size());
  r.rms_stiffness_dev = rms(dev);
  r.rms_tracking = rms(trk);
  return r;
}

inline json to_json(const PassivityReport& r) {
  return {{"outcome", r.outcome == Outcome::Stable ? "stable" : "diverged"},
          {"t_div", std::isfinite(r.t_div) ? json(r.t_div) : json(nullptr)},
          {"W0", r.W0},
          {"max_passivity_slack", r.max_passivity_slack},
          {"slack_tolerance", r.slack_tolerance},
          {"min_T", r.min_T},
          {"max_T", r.max_T},
          {"gate_duty", r.gate_duty},
          {"rms_stiffness_dev", r.rms_stiffness_dev},
          {"rms_tracking", r.rms_tracking},
          {"max_abs_e", r.max_abs_e},
          {"freeze_constant", r.freeze_constant},
          {"max_Q_eig", r.max_Q_eig}};
}

// Largest mismatch between a central difference of V2 = V + e^T beta e / 2 along
// the log and e'(aH - D)e' + e^T Q e with Q = K'/2 + a D'/2 - a K, K' taken by
// central differences of the applied stiffness. Relative to 1 + |V2'|.
inline double eq40_residual(const SimLog& log) {
  const auto& rows = log.rows;
  const double a = log.alpha, m = log.config.mass, d = log.config.damping;
  auto v2 = [&](const SimRow& r) {
    const double z = r.edot + a * r.e;
    const double beta = r.k_applied + a * d - a * a * m;
    return 0.5 * m * z * z + 0.5 * beta * r.e * r.e;
  };
  double worst = 0.0;
  const double dt = log.config.dt;
  for (std::size_t i = 1; i + 1 < rows.size(); ++i) {
    const double numeric = (v2(rows[i + 1]) - v2(rows[i - 1])) / (2.0 * dt);
    const double kdot = (rows[i + 1].k_applied - rows[i - 1].k_applied) / (2.0 * dt);
    const double q = 0.5 * kdot - a * rows[i].k_applied;
    const double model = rows[i].edot * (a * m - d) * rows[i].edot + q * rows[i].e * rows[i].e;
    worst = std::max(worst, std::abs(numeric - model) / (1.0 + std::abs(model)));
  }
  return worst;
}

inline const char* kSimLogHeader = "t,x,v,e,edot,k_ref,k_applied,tank_T,sigma,gate,V,W,flux";

// Every `stride`-th row plus the last one.
inline std::string sim_log_csv(const SimLog& log, int stride = 1) {
  if (stride < 1) throw InvalidInput("sim_log_csv: stride must be >= 1");
  std::string out = std::string(kSimLogHeader) + "\n";
  out.reserve(log.rows.size() / static_cast<std::size_t>(stride) * 200 + 200);
  for (std::size_t i = 0; i < log.rows.size(); ++i) {
    if (i % static_cast<std::size_t>(stride) != 0 && i + 1 != log.rows.size()) continue;
    const auto& r = log.rows[i];
    for (double v : {r.t, r.x, r.v, r.e, r.edot, r.k_ref, r.k_applied, r.tank_T}) out += fmt_double(v) + ",";
    out += std::to_string(r.sigma) + "," + std::to_string(r.gate) + ",";
    out += fmt_double(r.V) + "," + fmt_double(r.W) + "," + fmt_double(r.flux) + "\n";
  }
  return out;
}

}  // namespace vicpass
