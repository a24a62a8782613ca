#pragma once

// Sliding-window stiffness estimation. Per window the model is
// K X = Y with X the error columns and Y = f - H e'' - D e'.

#include <Eigen/Dense>
#include <Eigen/QR>

#include <chrono>
#include <cmath>
#include <optional>
#include <string>
#include <variant>
#include <vector>

#include "vicpass/demogen.hpp"
#include "vicpass/errors.hpp"
#include "vicpass/spd.hpp"

namespace vicpass {

inline constexpr double kEpsLs = 1e-8;
// sigma_min / sigma_max of X below this means rank(X) < N.
inline constexpr double kRankTol = 1e-9;

struct WindowConfig {
  int length = 3;
};

struct KnownConstantDamping {
  SpdMatrix damping;
};
struct UnknownScalarDamping {};
struct CriticallyDamped {
  double zeta = 2.0;
  int max_iters = 10;
  double tol = 1e-6;
};
using EstimationMode = std::variant<KnownConstantDamping, UnknownScalarDamping, CriticallyDamped>;

inline std::string mode_name(const EstimationMode& m) {
  if (std::holds_alternative<KnownConstantDamping>(m)) return "known_constant_damping";
  if (std::holds_alternative<UnknownScalarDamping>(m)) return "unknown_scalar_damping";
  return "critically_damped";
}

enum class Method { Proposed, NearestSpdLs, ConvexDirect, ConvexNormal };

inline const char* method_name(Method m) {
  switch (m) {
    case Method::Proposed: return "proposed";
    case Method::NearestSpdLs: return "nearest_spd_ls";
    case Method::ConvexDirect: return "convex_direct";
    case Method::ConvexNormal: return "convex_normal";
  }
  return "?";
}

inline Method method_from_name(const std::string& s) {
  for (Method m : {Method::Proposed, Method::NearestSpdLs, Method::ConvexDirect, Method::ConvexNormal})
    if (s == method_name(m)) return m;
  throw ConfigError("unknown estimation method '" + s + "'");
}

struct RegressionWindow {
  MatrixXd x;   // N x L error columns
  MatrixXd xd;  // N x L velocity-error columns
  MatrixXd y;   // N x L targets
  std::size_t index = 0;
  bool degenerate = false;
};

inline bool rank_deficient(const MatrixXd& x) {
  if (x.cols() < x.rows()) return true;
  const Eigen::JacobiSVD<MatrixXd> svd(x);
  const VectorXd& s = svd.singularValues();
  const double smax = s(0);
  const double smin = s(s.size() - 1);
  return !(smax > 0.0) || smin < kRankTol * smax;
}

// Error columns of a demonstration, computed once.
struct WindowSource {
  ErrorSeries signals;
  MatrixXd inertia;

  explicit WindowSource(const Demonstration& demo) : signals(demo.errors()), inertia(demo.inertia.matrix()) {}
  std::size_t size() const { return static_cast<std::size_t>(signals.e.cols()); }
};

// Trailing window [t-L+1, t]; the first L-1 indices reuse the first full
// window. `damping` null means the targets keep the damping force (f - H e'').
inline RegressionWindow build_window(const WindowSource& src, std::size_t t_index, const WindowConfig& cfg,
                                     const MatrixXd* damping) {
  const auto n = static_cast<std::size_t>(src.signals.e.rows());
  const auto len = static_cast<std::size_t>(cfg.length);
  if (cfg.length < 1 || len < n) throw ConfigError("window length must be >= the dimension");
  if (src.size() < len) throw InvalidInput("demonstration shorter than the window length");
  if (t_index >= src.size()) throw InvalidInput("window index out of range");
  const std::size_t end = std::max(t_index, len - 1);
  const auto start = static_cast<Eigen::Index>(end + 1 - len);
  const auto l = static_cast<Eigen::Index>(len);
  RegressionWindow w;
  w.index = t_index;
  w.x = src.signals.e.middleCols(start, l);
  w.xd = src.signals.ed.middleCols(start, l);
  w.y = src.signals.f.middleCols(start, l) - src.inertia * src.signals.edd.middleCols(start, l);
  if (damping) w.y.noalias() -= *damping * w.xd;
  w.degenerate = rank_deficient(w.x);
  return w;
}

inline RegressionWindow build_window(const Demonstration& demo, std::size_t t_index, const WindowConfig& cfg,
                                     const std::optional<SpdMatrix>& damping) {
  const WindowSource src(demo);
  const MatrixXd d = damping ? damping->matrix() : MatrixXd();
  return build_window(src, t_index, cfg, damping ? &d : nullptr);
}

inline void require_nondegenerate(const RegressionWindow& w, const char* who) {
  if (w.degenerate) throw DegenerateWindow(std::string(who) + ": rank(X) < N", w.index);
}

// Baseline: B = Y X^T (X X^T + lift)^-1, then nearest SPD.
inline SpdMatrix estimate_lsq_nearest_spd(const RegressionWindow& w) {
  require_nondegenerate(w, "estimate_lsq_nearest_spd");
  const auto n = w.x.rows();
  MatrixXd g = w.x * w.x.transpose();
  g.diagonal().array() += kEpsLs * g.trace() / static_cast<double>(n);
  // g symmetric: B^T = g^-1 X Y^T
  const MatrixXd bt = g.ldlt().solve(w.x * w.y.transpose());
  return nearest_spd(MatrixXd(bt.transpose()));
}

struct WeightSolution {
  VectorXd weights;               // symmetric-basis weights
  std::optional<double> damping;  // set when solved jointly and identifiable
  SpdMatrix stiffness = SpdMatrix::identity(1);
  bool projected = false;  // recombined matrix needed nearest SPD
};

// Column k of the design is the stacked M_k x_j over the window.
inline MatrixXd sym_design(const SymBasis& basis, const MatrixXd& x) {
  const auto n = x.rows();
  const auto l = x.cols();
  MatrixXd a = MatrixXd::Zero(n * l, static_cast<Eigen::Index>(basis.size()));
  for (std::size_t k = 0; k < basis.size(); ++k) {
    const auto [r, c] = basis.positions[k];
    const auto col = static_cast<Eigen::Index>(k);
    for (Eigen::Index j = 0; j < l; ++j) {
      a(j * n + r, col) += x(c, j);
      if (r != c) a(j * n + c, col) += x(r, j);
    }
  }
  return a;
}

// Proposed estimator: least squares over the N(N+1)/2 symmetric weights (plus
// one scalar damping weight on e' when `with_damping`).
inline WeightSolution solve_sym_weights(const SymBasis& basis, const RegressionWindow& w, bool with_damping) {
  require_nondegenerate(w, "estimate_sym_weights");
  const auto n = w.x.rows();
  const auto l = w.x.cols();
  if (basis.dim != n) throw InvalidDimension("estimate_sym_weights: basis dimension mismatch");
  const auto p = static_cast<Eigen::Index>(basis.size());
  const Eigen::Index cols = p + (with_damping ? 1 : 0);

  MatrixXd a(n * l, cols);
  a.leftCols(p) = sym_design(basis, w.x);
  if (with_damping) a.col(p) = w.xd.reshaped();
  const VectorXd b = w.y.reshaped();

  Eigen::ColPivHouseholderQR<MatrixXd> qr(a);
  VectorXd sol;
  bool damping_ok = with_damping;
  if (qr.rank() == cols) {
    sol = qr.solve(b);
  } else {
    // e' column collinear with the stiffness columns (or zero).
    damping_ok = false;
    MatrixXd ata = a.transpose() * a;
    ata.diagonal().array() += kEpsLs * std::max(ata.trace(), 1e-300) / static_cast<double>(cols);
    sol = ata.ldlt().solve(a.transpose() * b);
  }

  WeightSolution out;
  out.weights = sol.head(p);
  if (damping_ok) out.damping = sol(p);
  const SymMatrix k = recombine(basis, out.weights);
  if (min_eigenvalue(k.matrix()) < kEpsPd) {
    out.stiffness = nearest_spd(k);
    out.projected = true;
  } else {
    out.stiffness = SpdMatrix::checked(k.matrix());
  }
  return out;
}

inline SpdMatrix estimate_sym_weights(const RegressionWindow& w) {
  return solve_sym_weights(sym_basis(static_cast<int>(w.x.rows())), w, false).stiffness;
}

enum class ConvexVariant { Direct, NormalEquations };

struct ConvexOptions {
  int iters = 500;
  double step = 0.0;  // <= 0: 1 / |G|_2
};

inline MatrixXd project_psd(const MatrixXd& k) {
  const SymMatrix s = SymMatrix::symmetrize(k);
  return spectral_map(eig_sym(s), [](double v) { return std::max(v, 0.0); });
}

// Convex baseline: min |K X - Y|_F s.t. K >= 0 (Direct) or
// min |K X X^T - Y X^T|_F (NormalEquations). Accelerated projected gradient
// with function-value restart, then the eps_pd lift.
inline SpdMatrix estimate_psd_convex(const RegressionWindow& w, ConvexVariant variant, const ConvexOptions& opt = {}) {
  require_nondegenerate(w, "estimate_psd_convex");
  MatrixXd x = w.x, y = w.y;
  if (variant == ConvexVariant::NormalEquations) {
    y = w.y * w.x.transpose();
    x = w.x * w.x.transpose();
  }
  const MatrixXd g = x * x.transpose();
  const MatrixXd yx = y * x.transpose();
  const double lip = Eigen::SelfAdjointEigenSolver<MatrixXd>(g, Eigen::EigenvaluesOnly).eigenvalues().maxCoeff();
  const double step = opt.step > 0.0 ? opt.step : 1.0 / lip;
  auto objective = [&](const MatrixXd& k) { return 0.5 * (k * x - y).squaredNorm(); };

  const auto n = w.x.rows();
  MatrixXd k = MatrixXd::Zero(n, n);
  MatrixXd z = k;
  double tk = 1.0;
  const double f_start = objective(k);
  double f_prev = f_start;
  int increases = 0;
  for (int it = 0; it < opt.iters; ++it) {
    const MatrixXd k_new = project_psd(z - step * (z * g - yx));
    const double f_new = objective(k_new);
    if (!std::isfinite(f_new)) throw StepSizeError("estimate_psd_convex: objective is not finite");
    if (f_new > f_prev) {
      if (++increases >= 10) throw StepSizeError("estimate_psd_convex: objective increased 10 consecutive iterations");
      // restart the momentum from the last iterate
      z = k_new;
      tk = 1.0;
    } else {
      increases = 0;
      const double tn = 0.5 * (1.0 + std::sqrt(1.0 + 4.0 * tk * tk));
      z = k_new + ((tk - 1.0) / tn) * (k_new - k);
      tk = tn;
    }
    k = k_new;
    f_prev = f_new;
  }
  // An oversized step can also oscillate back onto the start; that is only
  // acceptable when K = 0 is itself optimal.
  if (opt.iters > 0 && !(f_prev < f_start) && project_psd(yx).norm() > 0.0)
    throw StepSizeError("estimate_psd_convex: no descent from the starting point");
  return lift_spd(SymMatrix::symmetrize(k));
}

struct EstimationResult {
  std::vector<SpdMatrix> stiffness;
  std::vector<bool> degenerate;
  std::optional<double> damping_scalar;
  std::vector<SpdMatrix> damping_schedule;  // per sample, critical mode
  double per_window_seconds = 0.0;
  std::string mode;
  Method method = Method::Proposed;
  // critical mode: stiffness after each iteration (front = iteration 1)
  std::vector<std::vector<SpdMatrix>> history;
  std::vector<double> iteration_change;
  bool converged = true;

  std::size_t degenerate_count() const {
    std::size_t c = 0;
    for (bool d : degenerate) c += d;
    return c;
  }
};

inline SpdMatrix estimate_window(const SymBasis& basis, const RegressionWindow& w, Method m,
                                 const ConvexOptions& copt) {
  switch (m) {
    case Method::Proposed: return solve_sym_weights(basis, w, false).stiffness;
    case Method::NearestSpdLs: return estimate_lsq_nearest_spd(w);
    case Method::ConvexDirect: return estimate_psd_convex(w, ConvexVariant::Direct, copt);
    case Method::ConvexNormal: return estimate_psd_convex(w, ConvexVariant::NormalEquations, copt);
  }
  throw ConfigError("unknown estimation method");
}

// Replace degenerate entries by the previous estimate (the first good one for
// a leading run).
inline void carry_forward(std::vector<std::optional<SpdMatrix>>& ks, std::vector<bool>& degenerate,
                          std::vector<SpdMatrix>& out) {
  std::optional<SpdMatrix> first;
  for (const auto& k : ks)
    if (k) {
      first = k;
      break;
    }
  if (!first) throw EstimationFailure("every window is degenerate");
  out.clear();
  out.reserve(ks.size());
  const SpdMatrix* prev = &*first;
  for (std::size_t i = 0; i < ks.size(); ++i) {
    degenerate[i] = !ks[i].has_value();
    if (ks[i]) prev = &*ks[i];
    out.push_back(*prev);
  }
}

// One pass over every sample with a per-window damping matrix (or none).
template <typename DampingAt>
EstimationResult estimate_pass(const WindowSource& src, const WindowConfig& cfg, Method m, DampingAt&& damping_at,
                               const ConvexOptions& copt = {}) {
  if (src.size() == 0) throw InvalidInput("estimation on an empty demonstration");
  const SymBasis basis = sym_basis(static_cast<int>(src.signals.e.rows()));
  std::vector<std::optional<SpdMatrix>> ks(src.size());
  double seconds = 0.0;
  std::size_t timed = 0;
  for (std::size_t i = 0; i < src.size(); ++i) {
    const MatrixXd* d = damping_at(i);
    const RegressionWindow w = build_window(src, i, cfg, d);
    if (w.degenerate) continue;
    const auto t0 = std::chrono::steady_clock::now();
    try {
      ks[i] = estimate_window(basis, w, m, copt);
    } catch (const StepSizeError& e) {
      throw StepSizeError(std::string(e.what()) + " (window " + std::to_string(i) + ")");
    }
    seconds += std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    ++timed;
  }
  EstimationResult r;
  r.method = m;
  r.degenerate.assign(src.size(), false);
  carry_forward(ks, r.degenerate, r.stiffness);
  r.per_window_seconds = timed ? seconds / static_cast<double>(timed) : 0.0;
  return r;
}

struct DampingFit {
  double mean = 0.0;
  std::size_t windows = 0;
};

// Joint per-window fit of the symmetric weights and a scalar d (D = d I),
// averaged over every distinct identifiable window.
inline DampingFit fit_scalar_damping(const WindowSource& src, const WindowConfig& cfg) {
  const SymBasis basis = sym_basis(static_cast<int>(src.signals.e.rows()));
  double sum = 0.0;
  std::size_t count = 0;
  const std::size_t first = static_cast<std::size_t>(std::max(cfg.length - 1, 0));
  for (std::size_t i = first; i < src.size(); ++i) {
    const RegressionWindow w = build_window(src, i, cfg, nullptr);
    if (w.degenerate) continue;
    const WeightSolution s = solve_sym_weights(basis, w, true);
    if (!s.damping) continue;
    sum += *s.damping;
    ++count;
  }
  if (count == 0) throw EstimationFailure("damping is unidentifiable: no window constrains it");
  return {sum / static_cast<double>(count), count};
}

inline EstimationResult estimate_unknown_damping(const WindowSource& src, const WindowConfig& cfg,
                                                 Method m = Method::Proposed, const ConvexOptions& copt = {}) {
  const DampingFit fit = fit_scalar_damping(src, cfg);
  const auto n = src.signals.e.rows();
  const MatrixXd d = fit.mean * MatrixXd::Identity(n, n);
  EstimationResult r = estimate_pass(src, cfg, m, [&](std::size_t) { return &d; }, copt);
  r.damping_scalar = fit.mean;
  r.mode = "unknown_scalar_damping";
  return r;
}

inline EstimationResult estimate_unknown_damping(const Demonstration& demo, const WindowConfig& cfg) {
  return estimate_unknown_damping(WindowSource(demo), cfg);
}

inline MatrixXd critical_damping(const SpdMatrix& k, double zeta) {
  return spectral_map(eig_sym(k), [zeta](double v) { return zeta * std::sqrt(v); });
}

inline double mean_log_euclidean_change(const std::vector<SpdMatrix>& a, const std::vector<SpdMatrix>& b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += spd_distance(a[i], b[i], SpdMetric::LogEuclidean);
  return s / static_cast<double>(a.size());
}

// Iteration 1 is the unknown-scalar-damping estimate; each further iteration
// sets D = T^T (zeta Lambda^1/2) T from the window's current K and re-solves.
inline EstimationResult estimate_critical_damping(const WindowSource& src, const WindowConfig& cfg, double zeta,
                                                  int max_iters, double tol, Method m = Method::Proposed,
                                                  const ConvexOptions& copt = {}) {
  if (!(zeta > 0.0)) throw ConfigError("critical damping: zeta must be positive");
  if (max_iters < 1) throw ConfigError("critical damping: max_iters must be >= 1");
  EstimationResult cur = estimate_unknown_damping(src, cfg, m, copt);
  const std::optional<double> d_first = cur.damping_scalar;
  std::vector<std::vector<SpdMatrix>> history{cur.stiffness};
  std::vector<double> changes;
  std::vector<MatrixXd> dsched;
  bool converged = false;
  double seconds = cur.per_window_seconds;
  for (int it = 2; it <= max_iters; ++it) {
    dsched.clear();
    for (const auto& k : cur.stiffness) dsched.push_back(critical_damping(k, zeta));
    EstimationResult next = estimate_pass(src, cfg, m, [&](std::size_t i) { return &dsched[i]; }, copt);
    seconds += next.per_window_seconds;
    const double change = mean_log_euclidean_change(cur.stiffness, next.stiffness);
    changes.push_back(change);
    history.push_back(next.stiffness);
    cur = std::move(next);
    if (change < tol) {
      converged = true;
      break;
    }
  }
  cur.mode = "critically_damped";
  cur.history = std::move(history);
  cur.iteration_change = std::move(changes);
  cur.converged = converged;
  cur.damping_scalar = d_first;
  cur.per_window_seconds = seconds / static_cast<double>(cur.history.size());
  cur.damping_schedule.clear();
  for (const auto& k : cur.stiffness) cur.damping_schedule.push_back(SpdMatrix::checked(critical_damping(k, zeta)));
  return cur;
}

inline EstimationResult estimate_sequence(const WindowSource& src, const EstimationMode& mode,
                                          const WindowConfig& cfg, Method m = Method::Proposed,
                                          const ConvexOptions& copt = {}) {
  if (src.size() == 0) throw InvalidInput("estimate_sequence: empty demonstration");
  if (const auto* known = std::get_if<KnownConstantDamping>(&mode)) {
    const MatrixXd d = known->damping.matrix();
    if (d.rows() != src.signals.e.rows()) throw InvalidDimension("estimate_sequence: damping dimension mismatch");
    EstimationResult r = estimate_pass(src, cfg, m, [&](std::size_t) { return &d; }, copt);
    r.mode = mode_name(mode);
    return r;
  }
  if (std::holds_alternative<UnknownScalarDamping>(mode)) return estimate_unknown_damping(src, cfg, m, copt);
  const auto& c = std::get<CriticallyDamped>(mode);
  return estimate_critical_damping(src, cfg, c.zeta, c.max_iters, c.tol, m, copt);
}

inline EstimationResult estimate_sequence(const Demonstration& demo, const EstimationMode& mode,
                                          const WindowConfig& cfg, Method m = Method::Proposed) {
  if (demo.samples.empty()) throw InvalidInput("estimate_sequence: empty demonstration");
  return estimate_sequence(WindowSource(demo), mode, cfg, m);
}

inline std::vector<double> errors_vs(const std::vector<SpdMatrix>& est, const std::vector<SpdMatrix>& truth,
                                     SpdMetric metric) {
  if (est.size() != truth.size()) throw InvalidInput("errors_vs: sequence lengths differ");
  std::vector<double> out(est.size());
  for (std::size_t i = 0; i < est.size(); ++i) out[i] = spd_distance(truth[i], est[i], metric);
  return out;
}

}  // namespace vicpass
