#include <gtest/gtest.h>

#include <cmath>
#include <map>
#include <random>
#include <sstream>

#include "test_util.hpp"
#include "vicpass/tankvic.hpp"

using namespace vicpass;
using vicpass::testing::random_matrix;
using vicpass::testing::random_spd_matrix;

namespace {

VectorXd v1(double a) { return VectorXd::Constant(1, a); }
MatrixXd m1(double a) { return MatrixXd::Constant(1, 1, a); }

ControllerConfig config(ControlMode mode, double k_c, double duration = 110.0) {
  ControllerConfig c;
  c.mode = mode;
  c.k_c = k_c;
  c.duration = duration;
  return c;
}

// Shared between tests: the 110 s runs are the slow part.
const SimLog& full_run(ControlMode mode, double k_c) {
  static std::map<std::pair<int, double>, SimLog> cache;
  const auto key = std::make_pair(static_cast<int>(mode), k_c);
  auto it = cache.find(key);
  if (it == cache.end()) it = cache.emplace(key, run_simulation(config(mode, k_c))).first;
  return it->second;
}

}  // namespace

TEST(Alpha, MinDampingOverMaxInertia) {
  const SpdMatrix h = SpdMatrix::diagonal(Eigen::Vector2d(1.0, 2.0));
  const std::vector<SpdMatrix> d{SpdMatrix::diagonal(Eigen::Vector2d(2.0, 3.0)),
                                 SpdMatrix::diagonal(Eigen::Vector2d(1.5, 4.0))};
  EXPECT_DOUBLE_EQ(select_alpha(d, h), 0.75);
  EXPECT_DOUBLE_EQ(select_alpha({SpdMatrix::identity(1, 1.0)}, SpdMatrix::identity(1, 10.0)), 0.1);
}

TEST(Alpha, OneDipSetsTheMinimum) {
  std::vector<SpdMatrix> d(50, SpdMatrix::identity(2, 5.0));
  d[31] = SpdMatrix::diagonal(Eigen::Vector2d(5.0, 0.5));
  EXPECT_DOUBLE_EQ(select_alpha(d, SpdMatrix::identity(2, 2.0)), 0.25);
  EXPECT_THROW(select_alpha({}, SpdMatrix::identity(2)), InvalidInput);
  EXPECT_THROW(select_alpha(d, SpdMatrix::identity(3)), InvalidDimension);
}

TEST(Xi, DefaultIsTenthOfInitialStorage) {
  // V(0) = m (alpha e0)^2 / 2 = 0.05 J
  EXPECT_DOUBLE_EQ(compute_xi_default(v1(1.0), v1(0.0), m1(10.0), 0.1), 0.005);
  EXPECT_DOUBLE_EQ(compute_xi_default(v1(0.0), v1(0.0), m1(10.0), 0.1), 1e-4);
  EXPECT_DOUBLE_EQ(compute_xi_default(v1(0.0), v1(2.0), m1(1.0), 0.1, 1e-2), 0.2);
}

TEST(Gate, ThresholdIsStrict) {
  const double alpha = 0.5;
  EXPECT_DOUBLE_EQ(gate_quantity(v1(2.0), v1(-0.5), alpha), 0.25);
  EXPECT_EQ(gate_stiffness(v1(2.0), v1(-0.5), alpha, 0.3, 20.0, 7.0), 20.0);
  EXPECT_EQ(gate_stiffness(v1(2.0), v1(-0.5), alpha, 0.25, 20.0, 7.0), 7.0);
  EXPECT_EQ(gate_stiffness(v1(2.0), v1(1.0), alpha, 0.3, 20.0, 7.0), 7.0);
}

TEST(Tank, StepWorkedExample) {
  // rate = sigma * 0.45 - 0.025 + 1.045
  const TankState s0{0.0, 1};
  const TankState s1 = tank_step(s0, v1(1.0), v1(0.5), m1(2.0), m1(1.0), m1(1.0), 0.1, 0.01, 10.0);
  EXPECT_NEAR(s1.energy, 0.0147, 1e-15);
  EXPECT_EQ(s1.sigma, 1);
  const TankState full{10.0, 0};
  const TankState s2 = tank_step(full, v1(1.0), v1(0.5), m1(2.0), m1(1.0), m1(1.0), 0.1, 0.01, 10.0);
  EXPECT_NEAR(s2.energy, 10.0102, 1e-12);
  EXPECT_EQ(s2.sigma, 0);
}

TEST(Tank, ClampsAtZero) {
  // pure outflow: e' D e' dissipation off, coupling negative
  const TankState s = tank_step({0.001, 0}, v1(1.0), v1(1.0), m1(0.0), m1(1.0), m1(1.0), 0.1, 1.0, 10.0);
  EXPECT_EQ(s.energy, 0.0);
  EXPECT_EQ(s.sigma, 1);
}

TEST(Tank, DissipationChargesWhenCouplingVanishes) {
  // e = 0 kills the coupling; alpha = 0 kills the H term
  const double r = tank_rate(v1(0.0), v1(0.7), m1(5.0), m1(2.0), m1(1.0), 0.0, 1);
  EXPECT_GT(r, 0.0);
  EXPECT_DOUBLE_EQ(r, 2.0 * 0.49);
}

TEST(Tank, SigmaTracksCeiling) {
  EXPECT_EQ(tank_sigma(9.999, 10.0), 1);
  EXPECT_EQ(tank_sigma(10.0, 10.0), 0);
  EXPECT_EQ(tank_sigma(0.0, 10.0), 1);
}

TEST(Tank, StorageExchangeIsLosslessWithSigmaOne) {
  // V' along H e'' = -D e' - K e, computed independently of tank_rate
  std::mt19937_64 rng(21);
  for (int rep = 0; rep < 200; ++rep) {
    const int n = 1 + rep % 3;
    const MatrixXd h = random_spd_matrix(rng, n, 0.5, 5.0), k = random_spd_matrix(rng, n, 1.0, 50.0),
                   d = random_spd_matrix(rng, n, 0.5, 5.0);
    const VectorXd e = random_matrix(rng, n, 1).col(0), ed = random_matrix(rng, n, 1).col(0);
    const double alpha = 0.3;
    const VectorXd edd = h.ldlt().solve(-d * ed - k * e);
    const VectorXd z = ed + alpha * e;
    const double vdot = z.dot(h * (edd + alpha * ed));
    const double tdot = tank_rate(e, ed, k, d, h, alpha, 1);
    EXPECT_NEAR(vdot + tdot, 0.0, 1e-10 * (1.0 + std::abs(vdot)));
  }
}

TEST(Simulation, KcDichotomyForDirectControl) {
  EXPECT_EQ(full_run(ControlMode::Direct, 12.0).outcome, Outcome::Diverged);
  EXPECT_EQ(full_run(ControlMode::Direct, 13.0).outcome, Outcome::Stable);
  EXPECT_EQ(full_run(ControlMode::Proposed, 12.0).outcome, Outcome::Stable);
}

TEST(Simulation, TankInvariantsAlongRuns) {
  for (ControlMode m : {ControlMode::Proposed, ControlMode::OriginalTank}) {
    for (double kc : {12.0, 13.0}) {
      const SimLog& log = full_run(m, kc);
      double max_inflow = 0.0;
      for (std::size_t i = 1; i < log.rows.size(); ++i)
        max_inflow = std::max(max_inflow, log.rows[i].tank_T - log.rows[i - 1].tank_T);
      for (const auto& r : log.rows) {
        ASSERT_GE(r.tank_T, 0.0);
        ASSERT_EQ(r.sigma, r.tank_T < log.config.t_max ? 1 : 0);
        ASSERT_LE(r.tank_T, log.config.t_max + max_inflow);
      }
    }
  }
}

TEST(Simulation, FrozenStiffnessIsBitConstant) {
  for (double kc : {12.0, 13.0}) {
    const SimLog& log = full_run(ControlMode::Proposed, kc);
    std::size_t gated = 0;
    for (std::size_t i = 1; i < log.rows.size(); ++i) {
      if (!log.rows[i].gate) {
        EXPECT_EQ(log.rows[i].k_applied, log.rows[i].k_ref);
        continue;
      }
      ++gated;
      ASSERT_EQ(log.rows[i].k_applied, log.rows[i - 1].k_applied) << "t=" << log.rows[i].t;
    }
    EXPECT_GT(gated, 0u);
    EXPECT_TRUE(passivity_audit(log).freeze_constant);
  }
}

TEST(Simulation, WideGateMatchesDirect) {
  ControllerConfig p = config(ControlMode::Proposed, 13.0, 20.0);
  p.xi = 1e12;
  const SimLog a = run_simulation(p);
  const SimLog b = run_simulation(config(ControlMode::Direct, 13.0, 20.0));
  ASSERT_EQ(a.rows.size(), b.rows.size());
  for (std::size_t i = 0; i < a.rows.size(); ++i) {
    ASSERT_EQ(a.rows[i].e, b.rows[i].e);
    ASSERT_EQ(a.rows[i].k_applied, b.rows[i].k_applied);
    ASSERT_EQ(a.rows[i].gate, 0);
  }
}

TEST(Simulation, ResolvedParametersFollowDefaults) {
  const SimLog log = run_simulation(config(ControlMode::Proposed, 12.0, 0.01));
  EXPECT_DOUBLE_EQ(log.alpha, 0.1);
  EXPECT_DOUBLE_EQ(log.xi, 0.005);
  EXPECT_EQ(log.rows.size(), 11u);
  EXPECT_DOUBLE_EQ(log.rows.front().V, 0.05);
}

TEST(Simulation, OriginalTankFallsBackWhenEmpty) {
  const SimLog& log = full_run(ControlMode::OriginalTank, 12.0);
  bool seen = false;
  for (const auto& r : log.rows) {
    if (r.tank_T > 0.0) continue;
    seen = true;
    ASSERT_EQ(r.k_applied, 12.0);
    ASSERT_EQ(r.gate, 1);
  }
  EXPECT_TRUE(seen);
}

TEST(Simulation, Deterministic) {
  const SimLog a = run_simulation(config(ControlMode::Proposed, 12.0, 5.0));
  const SimLog b = run_simulation(config(ControlMode::Proposed, 12.0, 5.0));
  EXPECT_EQ(sim_log_csv(a), sim_log_csv(b));
}

TEST(Simulation, RejectsNonPositiveParameters) {
  ControllerConfig c = config(ControlMode::Direct, 12.0, 1.0);
  c.dt = 0.0;
  EXPECT_THROW(run_simulation(c), ConfigError);
  c = config(ControlMode::Direct, 12.0, 1.0);
  c.t_max = -1.0;
  EXPECT_THROW(run_simulation(c), ConfigError);
}

TEST(Audit, StorageDerivativeMatchesClosedFormOnSmoothRun) {
  // no switching in Direct mode, so the log should follow V2' to O(dt^2)
  EXPECT_LT(eq40_residual(full_run(ControlMode::Direct, 13.0)), 5e-3);
}

TEST(Audit, ToleranceAndTankRange) {
  const PassivityReport r = passivity_audit(full_run(ControlMode::Proposed, 12.0));
  EXPECT_DOUBLE_EQ(r.W0, 0.05);
  EXPECT_DOUBLE_EQ(r.slack_tolerance, 1e-6);
  EXPECT_GE(r.min_T, 0.0);
  EXPECT_GT(r.gate_duty, 0.0);
  EXPECT_LT(r.gate_duty, 1.0);
  EXPECT_LT(r.max_Q_eig, 0.0);
}

TEST(LogIo, CsvHeaderAndRows) {
  const SimLog log = run_simulation(config(ControlMode::OriginalTank, 12.0, 0.05));
  std::istringstream in(sim_log_csv(log));
  std::string line;
  std::getline(in, line);
  EXPECT_EQ(line, "t,x,v,e,edot,k_ref,k_applied,tank_T,sigma,gate,V,W,flux");
  std::size_t n = 0;
  while (std::getline(in, line)) {
    ++n;
    EXPECT_EQ(std::count(line.begin(), line.end(), ','), 12);
  }
  EXPECT_EQ(n, log.rows.size());
}

TEST(ConfigIo, RoundTrip) {
  ControllerConfig c = config(ControlMode::OriginalTank, 13.0, 42.0);
  c.xi = 0.02;
  c.t0 = 2.5;
  const ControllerConfig r = controller_config_from_json(to_json(c));
  EXPECT_EQ(to_json(r), to_json(c));
  EXPECT_THROW(controller_config_from_json(json{{"mode", "bogus"}}), ConfigError);
}
