#pragma once

// Synthetic impedance demonstrations: the plant H e'' + K_t e + D_t e' = f_t
// integrated with fixed-step RK4 around a reference trajectory.

#include <Eigen/Dense>

#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <numbers>
#include <optional>
#include <random>
#include <string>
#include <utility>
#include <vector>

#include "vicpass/errors.hpp"
#include "vicpass/io_util.hpp"
#include "vicpass/spd.hpp"

namespace vicpass {

struct SinusoidTerm {
  double amplitude = 0.0;
  double omega = 0.0;  // rad/s
  double phase = 0.0;  // rad
};

// Per axis: offset + sum of a sin(w t + phi). Derivatives are analytic.
class SinusoidSignal {
 public:
  SinusoidSignal() = default;
  explicit SinusoidSignal(int dim) : offset_(dim, 0.0), terms_(dim) {
    if (dim < 1) throw InvalidDimension("SinusoidSignal: dim must be >= 1");
  }

  int dim() const { return static_cast<int>(offset_.size()); }

  SinusoidSignal& add(int axis, SinusoidTerm term) {
    terms_.at(axis).push_back(term);
    return *this;
  }
  SinusoidSignal& set_offset(int axis, double c) {
    offset_.at(axis) = c;
    return *this;
  }

  VectorXd value(double t) const { return eval(t, 0); }
  VectorXd rate(double t) const { return eval(t, 1); }
  VectorXd accel(double t) const { return eval(t, 2); }

  json to_json() const {
    json axes = json::array();
    for (int i = 0; i < dim(); ++i) {
      json terms = json::array();
      for (const auto& s : terms_[i]) terms.push_back({{"amplitude", s.amplitude}, {"omega", s.omega}, {"phase", s.phase}});
      axes.push_back({{"offset", offset_[i]}, {"terms", terms}});
    }
    return {{"kind", "sinusoid_sum"}, {"axes", axes}};
  }

  static SinusoidSignal from_json(const json& j) {
    if (j.value("kind", "") != "sinusoid_sum") throw ConfigError("signal: expected kind 'sinusoid_sum'");
    const auto& axes = j.at("axes");
    SinusoidSignal s(static_cast<int>(axes.size()));
    for (std::size_t i = 0; i < axes.size(); ++i) {
      s.offset_[i] = axes[i].value("offset", 0.0);
      for (const auto& t : axes[i].at("terms"))
        s.terms_[i].push_back({t.at("amplitude").get<double>(), t.at("omega").get<double>(), t.at("phase").get<double>()});
    }
    return s;
  }

 private:
  VectorXd eval(double t, int order) const {
    VectorXd out(dim());
    for (int i = 0; i < dim(); ++i) {
      double acc = order == 0 ? offset_[i] : 0.0;
      for (const auto& s : terms_[i]) {
        const double arg = s.omega * t + s.phase;
        switch (order) {
          case 0: acc += s.amplitude * std::sin(arg); break;
          case 1: acc += s.amplitude * s.omega * std::cos(arg); break;
          default: acc -= s.amplitude * s.omega * s.omega * std::sin(arg); break;
        }
      }
      out(i) = acc;
    }
    return out;
  }

  std::vector<double> offset_;
  std::vector<std::vector<SinusoidTerm>> terms_;
};

using ReferenceTrajectory = SinusoidSignal;
using ForceProfile = SinusoidSignal;

// Circle of radius r traversed at w rad/s in the first plane; N = 1 uses r sin(w t).
inline ReferenceTrajectory circle_reference(int dim, double radius, double omega) {
  ReferenceTrajectory ref(dim);
  if (dim == 1) {
    ref.add(0, {radius, omega, 0.0});
    return ref;
  }
  ref.add(0, {radius, omega, std::numbers::pi / 2});
  ref.add(1, {radius, omega, 0.0});
  return ref;
}

// Time-indexed matrix schedule with a coverage interval.
class MatrixSchedule {
 public:
  using Fn = std::function<MatrixXd(double)>;

  MatrixSchedule(int dim, Fn fn, double t_begin, double t_end, json descriptor)
      : dim_(dim), fn_(std::move(fn)), t_begin_(t_begin), t_end_(t_end), desc_(std::move(descriptor)) {}

  static MatrixSchedule constant(const SpdMatrix& k) {
    MatrixXd m = k.matrix();
    return MatrixSchedule(
        k.dim(), [m](double) { return m; }, -std::numeric_limits<double>::infinity(),
        std::numeric_limits<double>::infinity(), {{"kind", "constant"}, {"matrix", matrix_to_json(m)}});
  }

  // K(t) = R(th)^T diag(k_major, k_minor) R(th), th = th_end t / duration, in
  // the (0,1) plane; remaining axes get k_minor. Starts axis-aligned.
  static MatrixSchedule rotating_ellipse(double k_major, double k_minor, double theta_end, double duration,
                                         int dim = 2) {
    if (!(k_minor > 0.0) || !(k_major >= k_minor)) throw InvalidInput("rotating_ellipse: need k_major >= k_minor > 0");
    if (!(theta_end > 0.0) || theta_end > std::numbers::pi / 2 + 1e-15)
      throw InvalidInput("rotating_ellipse: theta_end must be in (0, pi/2]");
    if (!(duration > 0.0)) throw InvalidInput("rotating_ellipse: duration must be positive");
    if (dim < 1) throw InvalidDimension("rotating_ellipse: dim must be >= 1");
    json desc = {{"kind", "rotating_ellipse"}, {"k_major", k_major}, {"k_minor", k_minor},
                 {"theta_end", theta_end},     {"duration", duration}, {"dim", dim}};
    auto fn = [=](double t) {
      MatrixXd k = MatrixXd::Identity(dim, dim) * k_minor;
      if (dim == 1) {
        k(0, 0) = k_major;
        return k;
      }
      const double th = theta_end * t / duration;
      const double c = std::cos(th), s = std::sin(th);
      k(0, 0) = k_major * c * c + k_minor * s * s;
      k(1, 1) = k_major * s * s + k_minor * c * c;
      k(0, 1) = k(1, 0) = (k_minor - k_major) * c * s;
      return k;
    };
    return MatrixSchedule(dim, fn, 0.0, duration, std::move(desc));
  }

  // Piecewise-linear interpolation of samples at t0 + i dt.
  static MatrixSchedule sampled(double t0, double dt, std::vector<SpdMatrix> mats) {
    if (mats.empty()) throw InvalidInput("sampled schedule: no matrices");
    if (!(dt > 0.0)) throw InvalidInput("sampled schedule: dt must be positive");
    const int dim = mats.front().dim();
    std::vector<MatrixXd> m;
    json arr = json::array();
    for (const auto& k : mats) {
      if (k.dim() != dim) throw InvalidDimension("sampled schedule: mixed dimensions");
      m.push_back(k.matrix());
      arr.push_back(matrix_to_json(k.matrix()));
    }
    const double t_end = t0 + dt * static_cast<double>(m.size() - 1);
    auto fn = [m = std::move(m), t0, dt](double t) {
      const double u = (t - t0) / dt;
      const auto last = static_cast<double>(m.size() - 1);
      if (u <= 0.0) return m.front();
      if (u >= last) return m.back();
      const auto i = static_cast<std::size_t>(std::floor(u));
      const double a = u - static_cast<double>(i);
      return MatrixXd((1.0 - a) * m[i] + a * m[i + 1]);
    };
    return MatrixSchedule(dim, fn, t0, t_end, {{"kind", "sampled"}, {"t0", t0}, {"dt", dt}, {"matrices", arr}});
  }

  // D(t) = T^T (zeta Lambda^1/2) T from the eigenpairs of K(t).
  static MatrixSchedule critical_from(const MatrixSchedule& stiffness, double zeta) {
    if (!(zeta > 0.0)) throw InvalidInput("critical_from: zeta must be positive");
    Fn k = stiffness.fn_;
    auto fn = [k, zeta](double t) {
      const EigPair ep = eig_sym(SymMatrix(k(t)));
      return spectral_map(ep, [zeta](double v) { return zeta * std::sqrt(std::max(v, 0.0)); });
    };
    return MatrixSchedule(stiffness.dim_, fn, stiffness.t_begin_, stiffness.t_end_,
                          {{"kind", "critical"}, {"zeta", zeta}, {"stiffness", stiffness.desc_}});
  }

  static MatrixSchedule from_json(const json& j) {
    const std::string kind = j.value("kind", "");
    if (kind == "constant") return constant(SpdMatrix::checked(matrix_from_json(j.at("matrix"))));
    if (kind == "rotating_ellipse")
      return rotating_ellipse(j.at("k_major").get<double>(), j.at("k_minor").get<double>(),
                              j.at("theta_end").get<double>(), j.at("duration").get<double>(), j.value("dim", 2));
    if (kind == "critical") return critical_from(from_json(j.at("stiffness")), j.at("zeta").get<double>());
    if (kind == "sampled") {
      std::vector<SpdMatrix> mats;
      for (const auto& m : j.at("matrices")) mats.push_back(SpdMatrix::checked(matrix_from_json(m)));
      return sampled(j.at("t0").get<double>(), j.at("dt").get<double>(), std::move(mats));
    }
    throw ConfigError("unknown schedule kind '" + kind + "'");
  }

  int dim() const { return dim_; }
  MatrixXd matrix_at(double t) const { return fn_(t); }
  SpdMatrix at(double t) const { return SpdMatrix::checked(fn_(t)); }
  bool covers(double t0, double t1) const {
    const double slack = 1e-9 * std::max(1.0, std::abs(t1));
    return t0 >= t_begin_ - slack && t1 <= t_end_ + slack;
  }
  const json& descriptor() const { return desc_; }

 private:
  int dim_;
  Fn fn_;
  double t_begin_, t_end_;
  json desc_;
};

inline std::vector<SpdMatrix> rotating_ellipse_schedule(double k_major, double k_minor, double theta_end,
                                                        double duration, double dt, int dim = 2) {
  if (!(dt > 0.0)) throw InvalidInput("rotating_ellipse_schedule: dt must be positive");
  const auto sched = MatrixSchedule::rotating_ellipse(k_major, k_minor, theta_end, duration, dim);
  const auto n = static_cast<long>(std::llround(duration / dt));
  std::vector<SpdMatrix> out;
  out.reserve(static_cast<std::size_t>(n + 1));
  for (long i = 0; i <= n; ++i) out.push_back(sched.at(static_cast<double>(i) * dt));
  return out;
}

struct ImpedanceParams {
  SpdMatrix inertia = SpdMatrix::identity(1);
  MatrixSchedule stiffness = MatrixSchedule::constant(SpdMatrix::identity(1));
  MatrixSchedule damping = MatrixSchedule::constant(SpdMatrix::identity(1));
};

struct DemoSample {
  double t = 0.0;
  VectorXd x, v, a, f;
};

struct GroundTruth {
  std::vector<SpdMatrix> stiffness;
  std::vector<SpdMatrix> damping;
};

// Error signals e = x - x^r and derivatives, one column per sample.
struct ErrorSeries {
  MatrixXd e, ed, edd, f;
};

struct Demonstration {
  int dim = 0;
  double dt = 0.0;
  SpdMatrix inertia = SpdMatrix::identity(1);
  ReferenceTrajectory reference;
  std::vector<DemoSample> samples;
  std::optional<GroundTruth> truth;
  json meta = json::object();

  std::size_t size() const { return samples.size(); }

  ErrorSeries errors() const {
    const auto n = static_cast<Eigen::Index>(samples.size());
    ErrorSeries s{MatrixXd(dim, n), MatrixXd(dim, n), MatrixXd(dim, n), MatrixXd(dim, n)};
    for (Eigen::Index i = 0; i < n; ++i) {
      const auto& smp = samples[static_cast<std::size_t>(i)];
      s.e.col(i) = smp.x - reference.value(smp.t);
      s.ed.col(i) = smp.v - reference.rate(smp.t);
      s.edd.col(i) = smp.a - reference.accel(smp.t);
      s.f.col(i) = smp.f;
    }
    return s;
  }
};

struct SimulationSettings {
  double dt = 1e-3;
  double duration = 10.0;
  int record_every = 1;
  VectorXd e0;   // empty = zero
  VectorXd ed0;  // empty = zero
  double force_noise_std = 0.0;
  std::uint64_t noise_seed = 0;
};

inline Demonstration simulate_msd(const ImpedanceParams& params, const ReferenceTrajectory& ref,
                                  const ForceProfile& force, const SimulationSettings& cfg) {
  const int n = params.inertia.dim();
  if (params.stiffness.dim() != n || params.damping.dim() != n || ref.dim() != n || force.dim() != n)
    throw InvalidDimension("simulate_msd: dimension mismatch between plant, reference and force");
  if (!(cfg.dt > 0.0) || !(cfg.duration >= 0.0)) throw ConfigError("simulate_msd: dt must be > 0 and duration >= 0");
  if (cfg.record_every < 1) throw ConfigError("simulate_msd: record_every must be >= 1");
  const long steps = std::lround(cfg.duration / cfg.dt);
  const double t_final = static_cast<double>(steps) * cfg.dt;
  if (!params.stiffness.covers(0.0, t_final) || !params.damping.covers(0.0, t_final))
    throw ConfigError("simulate_msd: schedule does not cover [0, duration]");

  VectorXd e = cfg.e0.size() ? cfg.e0 : VectorXd::Zero(n);
  VectorXd ed = cfg.ed0.size() ? cfg.ed0 : VectorXd::Zero(n);
  if (e.size() != n || ed.size() != n) throw InvalidDimension("simulate_msd: initial state dimension");

  const Eigen::LLT<MatrixXd> h_llt(params.inertia.matrix());
  auto accel = [&](double t, const VectorXd& pe, const VectorXd& pv) -> VectorXd {
    const VectorXd rhs = force.value(t) - params.stiffness.matrix_at(t) * pe - params.damping.matrix_at(t) * pv;
    return h_llt.solve(rhs);
  };

  Demonstration demo;
  demo.dim = n;
  demo.dt = cfg.dt * cfg.record_every;
  demo.inertia = params.inertia;
  demo.reference = ref;
  demo.truth = GroundTruth{};
  demo.samples.reserve(static_cast<std::size_t>(steps / cfg.record_every + 1));

  std::mt19937_64 rng(cfg.noise_seed);
  std::normal_distribution<double> noise(0.0, cfg.force_noise_std > 0.0 ? cfg.force_noise_std : 1.0);

  const double h = cfg.dt;
  for (long i = 0;; ++i) {
    const double t = static_cast<double>(i) * h;
    if (i % cfg.record_every == 0) {
      DemoSample s;
      s.t = t;
      const VectorXd edd = accel(t, e, ed);
      s.x = ref.value(t) + e;
      s.v = ref.rate(t) + ed;
      s.a = ref.accel(t) + edd;
      s.f = force.value(t);
      if (cfg.force_noise_std > 0.0)
        for (int k = 0; k < n; ++k) s.f(k) += noise(rng);
      demo.samples.push_back(std::move(s));
      demo.truth->stiffness.push_back(params.stiffness.at(t));
      demo.truth->damping.push_back(params.damping.at(t));
    }
    if (i == steps) break;

    const VectorXd k1e = ed, k1v = accel(t, e, ed);
    const VectorXd k2e = ed + 0.5 * h * k1v, k2v = accel(t + 0.5 * h, e + 0.5 * h * k1e, k2e);
    const VectorXd k3e = ed + 0.5 * h * k2v, k3v = accel(t + 0.5 * h, e + 0.5 * h * k2e, k3e);
    const VectorXd k4e = ed + h * k3v, k4v = accel(t + h, e + h * k3e, k4e);
    e += h / 6.0 * (k1e + 2.0 * k2e + 2.0 * k3e + k4e);
    ed += h / 6.0 * (k1v + 2.0 * k2v + 2.0 * k3v + k4v);
    if (!e.allFinite() || !ed.allFinite()) throw DivergenceError("simulate_msd: non-finite state", t + h);
  }

  demo.meta = {{"dim", n},
               {"dt", demo.dt},
               {"inertia", matrix_to_json(params.inertia.matrix())},
               {"reference", ref.to_json()},
               {"force", force.to_json()},
               {"stiffness", params.stiffness.descriptor()},
               {"damping", params.damping.descriptor()},
               {"integrator", {{"method", "rk4"}, {"dt", cfg.dt}, {"record_every", cfg.record_every}}},
               {"force_noise_std", cfg.force_noise_std}};
  return demo;
}

// Relative plant residual |H e'' + K e + D e' - f| / (1 + |f|) at sample i.
inline double plant_residual(const Demonstration& demo, std::size_t i) {
  if (!demo.truth) throw InvalidInput("plant_residual: demonstration has no ground truth");
  const auto& s = demo.samples.at(i);
  const VectorXd e = s.x - demo.reference.value(s.t);
  const VectorXd ed = s.v - demo.reference.rate(s.t);
  const VectorXd edd = s.a - demo.reference.accel(s.t);
  const VectorXd r = demo.inertia.matrix() * edd + demo.truth->stiffness[i].matrix() * e +
                     demo.truth->damping[i].matrix() * ed - s.f;
  return r.norm() / (1.0 + s.f.norm());
}

struct ControlReference {
  double x = 0.0, v = 0.0, a = 0.0;  // desired trajectory
  double k = 0.0, kdot = 0.0;        // desired stiffness
};

// x^d = 10 sin(0.1 t), k^d = k_c + 10 sin(t).
inline ControlReference control_ref_1dof(double k_c, double t) {
  return {10.0 * std::sin(0.1 * t), std::cos(0.1 * t), -0.1 * std::sin(0.1 * t), k_c + 10.0 * std::sin(t),
          10.0 * std::cos(t)};
}

struct DatasetConfig {
  int dim = 2;
  int trajectories = 10;
  double k_major = 400.0;
  double k_minor = 100.0;
  double theta_end = std::numbers::pi / 4;
  double duration = 10.0;
  std::string damping_kind = "constant";  // or "critical"
  double damping = 50.0;                  // constant scalar damping
  double zeta = 2.0;                      // critical multiplier
  double inertia = 1.0;
  double dt = 1e-3;
  int record_every = 10;
  double ref_radius = 0.2;
  double ref_omega = 0.5;
  double amp_min = 2.0, amp_max = 6.0;
  double omega_min = 1.0, omega_max = 6.0;
  double force_noise_std = 0.0;
  std::uint64_t seed = 1;
};

inline json to_json(const DatasetConfig& c) {
  return {{"dim", c.dim},
          {"trajectories", c.trajectories},
          {"k_major", c.k_major},
          {"k_minor", c.k_minor},
          {"theta_end", c.theta_end},
          {"duration", c.duration},
          {"damping_kind", c.damping_kind},
          {"damping", c.damping},
          {"zeta", c.zeta},
          {"inertia", c.inertia},
          {"dt", c.dt},
          {"record_every", c.record_every},
          {"ref_radius", c.ref_radius},
          {"ref_omega", c.ref_omega},
          {"amp_min", c.amp_min},
          {"amp_max", c.amp_max},
          {"omega_min", c.omega_min},
          {"omega_max", c.omega_max},
          {"force_noise_std", c.force_noise_std},
          {"seed", c.seed}};
}

inline DatasetConfig dataset_config_from_json(const json& j) {
  DatasetConfig c;
  c.dim = j.value("dim", c.dim);
  c.trajectories = j.value("trajectories", c.trajectories);
  c.k_major = j.value("k_major", c.k_major);
  c.k_minor = j.value("k_minor", c.k_minor);
  c.theta_end = j.value("theta_end", c.theta_end);
  c.duration = j.value("duration", c.duration);
  c.damping_kind = j.value("damping_kind", c.damping_kind);
  c.damping = j.value("damping", c.damping);
  c.zeta = j.value("zeta", c.zeta);
  c.inertia = j.value("inertia", c.inertia);
  c.dt = j.value("dt", c.dt);
  c.record_every = j.value("record_every", c.record_every);
  c.ref_radius = j.value("ref_radius", c.ref_radius);
  c.ref_omega = j.value("ref_omega", c.ref_omega);
  c.amp_min = j.value("amp_min", c.amp_min);
  c.amp_max = j.value("amp_max", c.amp_max);
  c.omega_min = j.value("omega_min", c.omega_min);
  c.omega_max = j.value("omega_max", c.omega_max);
  c.force_noise_std = j.value("force_noise_std", c.force_noise_std);
  c.seed = j.value("seed", c.seed);
  if (c.dim < 1 || c.trajectories < 1) throw ConfigError("demogen: dim and trajectories must be >= 1");
  if (c.damping_kind != "constant" && c.damping_kind != "critical")
    throw ConfigError("demogen: damping_kind must be 'constant' or 'critical'");
  return c;
}

// One sinusoid per axis: A ~ U[amp], w ~ U[omega], phi ~ U[0, 2pi).
inline ForceProfile random_force_profile(const DatasetConfig& c, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> amp(c.amp_min, c.amp_max);
  std::uniform_real_distribution<double> om(c.omega_min, c.omega_max);
  std::uniform_real_distribution<double> ph(0.0, 2.0 * std::numbers::pi);
  ForceProfile f(c.dim);
  for (int i = 0; i < c.dim; ++i) {
    const double a = amp(rng);
    const double w = om(rng);
    f.add(i, {a, w, ph(rng)});
  }
  return f;
}

inline ImpedanceParams dataset_plant(const DatasetConfig& c) {
  ImpedanceParams p;
  p.inertia = SpdMatrix::identity(c.dim, c.inertia);
  p.stiffness = MatrixSchedule::rotating_ellipse(c.k_major, c.k_minor, c.theta_end, c.duration, c.dim);
  p.damping = c.damping_kind == "critical" ? MatrixSchedule::critical_from(p.stiffness, c.zeta)
                                           : MatrixSchedule::constant(SpdMatrix::identity(c.dim, c.damping));
  return p;
}

// Trajectory i uses seed + i for its force rule.
inline Demonstration make_demo(const DatasetConfig& c, int index) {
  const ImpedanceParams plant = dataset_plant(c);
  const auto ref = circle_reference(c.dim, c.ref_radius, c.ref_omega);
  const std::uint64_t seed = c.seed + static_cast<std::uint64_t>(index);
  SimulationSettings s;
  s.dt = c.dt;
  s.duration = c.duration;
  s.record_every = c.record_every;
  s.force_noise_std = c.force_noise_std;
  s.noise_seed = seed ^ 0x9e3779b97f4a7c15ULL;
  Demonstration d = simulate_msd(plant, ref, random_force_profile(c, seed), s);
  d.meta["seed"] = seed;
  d.meta["index"] = index;
  return d;
}

inline std::vector<Demonstration> make_dataset(const DatasetConfig& c) {
  std::vector<Demonstration> out;
  out.reserve(static_cast<std::size_t>(c.trajectories));
  for (int i = 0; i < c.trajectories; ++i) out.push_back(make_demo(c, i));
  return out;
}

}  // namespace vicpass
