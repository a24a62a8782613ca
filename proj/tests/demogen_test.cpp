#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <numbers>

#include "vicpass/demo_io.hpp"
#include "vicpass/demogen.hpp"

using namespace vicpass;
namespace fs = std::filesystem;

namespace {

fs::path scratch_dir(const std::string& name) {
  fs::path p = fs::temp_directory_path() / ("vicpass_demogen_" + name);
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

DatasetConfig small_config() {
  DatasetConfig c;
  c.trajectories = 2;
  c.duration = 2.0;
  c.theta_end = std::numbers::pi / 4 * 0.2;
  return c;
}

}  // namespace

TEST(RotatingEllipse, StartsAxisAligned) {
  const auto s = MatrixSchedule::rotating_ellipse(400, 100, std::numbers::pi / 4, 10.0);
  MatrixXd want(2, 2);
  want << 400, 0, 0, 100;
  EXPECT_EQ(s.matrix_at(0.0), want);
}

TEST(RotatingEllipse, FortyFiveDegreesAtEnd) {
  const double a = 400, b = 100, th = std::numbers::pi / 4;
  const auto s = MatrixSchedule::rotating_ellipse(a, b, th, 10.0);
  // independent: R^T diag(a, b) R with R the counter-clockwise rotation by th
  MatrixXd r(2, 2);
  r << std::cos(th), -std::sin(th), std::sin(th), std::cos(th);
  const MatrixXd want = r.transpose() * Eigen::Vector2d(a, b).asDiagonal() * r;
  const MatrixXd k = s.matrix_at(10.0);
  EXPECT_LT((k - want).norm(), 1e-12);
  EXPECT_NEAR(k(0, 0), k(1, 1), 1e-12);
  EXPECT_NEAR(std::abs(k(0, 1)), (a - b) / 2, 1e-12);
  // clockwise: the major axis points into the fourth quadrant
  const EigPair ep = eig_sym(SymMatrix(k));
  const VectorXd major = ep.vectors.col(1);
  EXPECT_LT(major(0) * major(1), 0.0);
}

TEST(RotatingEllipse, EigenvaluesConstant) {
  const auto seq = rotating_ellipse_schedule(400, 100, std::numbers::pi / 4, 10.0, 1e-2);
  ASSERT_EQ(seq.size(), 1001u);
  for (const auto& k : seq) {
    const EigPair ep = eig_sym(k);
    EXPECT_NEAR(ep.values(0), 100.0, 1e-10);
    EXPECT_NEAR(ep.values(1), 400.0, 1e-10);
  }
}

TEST(RotatingEllipse, RejectsBadAxes) {
  EXPECT_THROW(MatrixSchedule::rotating_ellipse(400, 0, 0.5, 10), InvalidInput);
  EXPECT_THROW(MatrixSchedule::rotating_ellipse(100, 400, 0.5, 10), InvalidInput);
  EXPECT_THROW(MatrixSchedule::rotating_ellipse(400, 100, 0.0, 10), InvalidInput);
  EXPECT_THROW(MatrixSchedule::rotating_ellipse(400, 100, 2.0, 10), InvalidInput);
}

TEST(CriticalSchedule, SharesEigenvectorsWithSquareRootEigenvalues) {
  const auto k = MatrixSchedule::rotating_ellipse(400, 100, std::numbers::pi / 4, 10.0);
  const auto d = MatrixSchedule::critical_from(k, 2.0);
  for (double t : {0.0, 3.3, 10.0}) {
    const MatrixXd km = k.matrix_at(t), dm = d.matrix_at(t);
    // D = 2 K^1/2 exactly when the eigenvectors are shared
    EXPECT_LT((dm * dm / 4.0 - km).norm(), 1e-9);
    EXPECT_LT((dm * km - km * dm).norm(), 1e-9);
  }
}

TEST(Reference, DerivativesMatchFiniteDifferences) {
  const auto ref = circle_reference(2, 0.2, 0.5);
  const double h = 1e-3;
  for (double t = 0.0; t < 10.0; t += 0.37) {
    const VectorXd fd_v = (ref.value(t + h) - ref.value(t - h)) / (2 * h);
    const VectorXd fd_a = (ref.rate(t + h) - ref.rate(t - h)) / (2 * h);
    EXPECT_LT((fd_v - ref.rate(t)).norm(), 1e-4);
    EXPECT_LT((fd_a - ref.accel(t)).norm(), 1e-4);
  }
}

TEST(SimulateMsd, ZeroForceZeroErrorStaysOnReference) {
  ImpedanceParams p;
  p.inertia = SpdMatrix::identity(2);
  p.stiffness = MatrixSchedule::rotating_ellipse(400, 100, 0.5, 5.0);
  p.damping = MatrixSchedule::constant(SpdMatrix::identity(2, 50));
  const auto ref = circle_reference(2, 0.2, 0.5);
  SimulationSettings s;
  s.duration = 5.0;
  const Demonstration d = simulate_msd(p, ref, ForceProfile(2), s);
  for (const auto& smp : d.samples) {
    EXPECT_EQ(smp.x, ref.value(smp.t));
    EXPECT_EQ(smp.v, ref.rate(smp.t));
  }
}

TEST(SimulateMsd, ConstantForceSettlesAtStaticDeflection) {
  MatrixXd km(2, 2);
  km << 300, 40, 40, 120;
  const SpdMatrix k = SpdMatrix::checked(km);
  ImpedanceParams p;
  p.inertia = SpdMatrix::identity(2);
  p.stiffness = MatrixSchedule::constant(k);
  p.damping = MatrixSchedule::constant(SpdMatrix::identity(2, 40));
  ForceProfile f(2);
  f.set_offset(0, 3.0).set_offset(1, -2.0);
  SimulationSettings s;
  s.duration = 20.0;
  s.record_every = 100;
  const auto ref = circle_reference(2, 0.0, 0.0);
  const Demonstration d = simulate_msd(p, ref, f, s);
  const VectorXd want = km.ldlt().solve(Eigen::Vector2d(3.0, -2.0));
  EXPECT_LT((d.samples.back().x - want).norm(), 1e-9);
}

TEST(SimulateMsd, FourthOrderConvergence) {
  DatasetConfig c;
  c.duration = 2.0;
  const ImpedanceParams p = dataset_plant(c);
  const auto ref = circle_reference(2, c.ref_radius, c.ref_omega);
  const auto force = random_force_profile(c, 3);
  auto final_state = [&](double dt) {
    SimulationSettings s;
    s.dt = dt;
    s.duration = c.duration;
    s.e0 = Eigen::Vector2d(0.05, -0.02);
    const Demonstration d = simulate_msd(p, ref, force, s);
    VectorXd y(4);
    y << d.samples.back().x, d.samples.back().v;
    return y;
  };
  const double dt = 0.02;
  const VectorXd reference = final_state(dt / 10);
  const double e1 = (final_state(dt) - reference).norm();
  const double e2 = (final_state(dt / 2) - reference).norm();
  const double order = std::log2(e1 / e2);
  EXPECT_GE(order, 3.5) << "e1=" << e1 << " e2=" << e2;
}

TEST(SimulateMsd, DatasetSatisfiesPlantResidual) {
  const DatasetConfig c = small_config();
  for (const auto& d : make_dataset(c)) {
    ASSERT_TRUE(d.truth.has_value());
    for (std::size_t i = 0; i < d.size(); ++i) ASSERT_LE(plant_residual(d, i), 1e-6);
  }
}

TEST(SimulateMsd, CriticalDatasetSatisfiesPlantResidual) {
  DatasetConfig c = small_config();
  c.damping_kind = "critical";
  const Demonstration d = make_demo(c, 0);
  for (std::size_t i = 0; i < d.size(); ++i) ASSERT_LE(plant_residual(d, i), 1e-6);
}

TEST(SimulateMsd, DatasetErrorsStayBelowTenCentimetres) {
  DatasetConfig c;
  for (const auto& d : make_dataset(c)) {
    const ErrorSeries s = d.errors();
    EXPECT_LT(s.e.colwise().norm().maxCoeff(), 0.1);
  }
}

TEST(SimulateMsd, Deterministic) {
  const DatasetConfig c = small_config();
  const Demonstration a = make_demo(c, 1), b = make_demo(c, 1);
  ASSERT_EQ(a.size(), b.size());
  for (std::size_t i = 0; i < a.size(); ++i) {
    EXPECT_EQ(a.samples[i].x, b.samples[i].x);
    EXPECT_EQ(a.samples[i].a, b.samples[i].a);
  }
}

TEST(SimulateMsd, DistinctForceRulesPerTrajectory) {
  const DatasetConfig c = small_config();
  EXPECT_NE(make_demo(c, 0).meta["force"].dump(), make_demo(c, 1).meta["force"].dump());
}

TEST(SimulateMsd, RecordsEveryTenthStep) {
  const DatasetConfig c = small_config();
  const Demonstration d = make_demo(c, 0);
  EXPECT_EQ(d.size(), 201u);
  EXPECT_DOUBLE_EQ(d.dt, 0.01);
  EXPECT_DOUBLE_EQ(d.samples[7].t, 7 * 10 * 1e-3);
}

TEST(SimulateMsd, ScheduleGapIsConfigError) {
  ImpedanceParams p;
  p.inertia = SpdMatrix::identity(2);
  p.stiffness = MatrixSchedule::rotating_ellipse(400, 100, 0.5, 1.0);
  p.damping = MatrixSchedule::constant(SpdMatrix::identity(2, 50));
  SimulationSettings s;
  s.duration = 2.0;
  EXPECT_THROW(simulate_msd(p, circle_reference(2, 0.2, 0.5), ForceProfile(2), s), ConfigError);
}

TEST(SimulateMsd, BlowUpIsDivergenceWithTime) {
  ImpedanceParams p;
  p.inertia = SpdMatrix::identity(1);
  p.stiffness = MatrixSchedule::constant(SpdMatrix::identity(1, 1e6));
  p.damping = MatrixSchedule::constant(SpdMatrix::identity(1, 1e-3));
  SimulationSettings s;
  s.dt = 0.01;
  s.duration = 50.0;
  s.e0 = VectorXd::Constant(1, 1.0);
  try {
    simulate_msd(p, circle_reference(1, 0.0, 0.0), ForceProfile(1), s);
    FAIL() << "expected divergence";
  } catch (const DivergenceError& e) {
    EXPECT_GT(e.time(), 0.0);
    EXPECT_LT(e.time(), 50.0);
  }
}

TEST(SimulateMsd, OneDofDataset) {
  DatasetConfig c = small_config();
  c.dim = 1;
  const Demonstration d = make_demo(c, 0);
  EXPECT_EQ(d.dim, 1);
  for (std::size_t i = 0; i < d.size(); ++i) ASSERT_LE(plant_residual(d, i), 1e-6);
}

TEST(ControlReference, PaperValues) {
  const auto a = control_ref_1dof(13.0, 0.0);
  EXPECT_EQ(a.x, 0.0);
  EXPECT_EQ(a.k, 13.0);
  const auto b = control_ref_1dof(12.0, 5 * std::numbers::pi);
  EXPECT_NEAR(b.x, 10.0, 1e-12);
  EXPECT_NEAR(b.k, 12.0, 1e-12);
  double lo = 1e300;
  for (double t = 0; t < 200; t += 1e-3) lo = std::min(lo, control_ref_1dof(12.0, t).k);
  EXPECT_NEAR(lo, 2.0, 1e-6);
}

TEST(ControlReference, DerivativesConsistent) {
  const double h = 1e-4;
  for (double t = 0.0; t < 60.0; t += 1.7) {
    const auto r = control_ref_1dof(12.0, t);
    EXPECT_NEAR((control_ref_1dof(12.0, t + h).x - control_ref_1dof(12.0, t - h).x) / (2 * h), r.v, 1e-6);
    EXPECT_NEAR((control_ref_1dof(12.0, t + h).v - control_ref_1dof(12.0, t - h).v) / (2 * h), r.a, 1e-6);
    EXPECT_NEAR((control_ref_1dof(12.0, t + h).k - control_ref_1dof(12.0, t - h).k) / (2 * h), r.kdot, 1e-6);
  }
}

TEST(DemoIo, RoundTripIsBitExact) {
  const fs::path dir = scratch_dir("roundtrip");
  const Demonstration d = make_demo(small_config(), 0);
  save_demo(d, dir / "traj_00.csv");
  EXPECT_TRUE(fs::exists(dir / "traj_00.meta.json"));
  const Demonstration back = load_demo(dir / "traj_00.csv");
  ASSERT_EQ(back.size(), d.size());
  EXPECT_EQ(back.dt, d.dt);
  EXPECT_EQ(back.inertia.matrix(), d.inertia.matrix());
  ASSERT_TRUE(back.truth.has_value());
  for (std::size_t i = 0; i < d.size(); ++i) {
    EXPECT_EQ(back.samples[i].t, d.samples[i].t);
    EXPECT_EQ(back.samples[i].x, d.samples[i].x);
    EXPECT_EQ(back.samples[i].v, d.samples[i].v);
    EXPECT_EQ(back.samples[i].a, d.samples[i].a);
    EXPECT_EQ(back.samples[i].f, d.samples[i].f);
    EXPECT_EQ(back.truth->stiffness[i].matrix(), d.truth->stiffness[i].matrix());
    EXPECT_EQ(back.truth->damping[i].matrix(), d.truth->damping[i].matrix());
  }
  EXPECT_EQ(back.errors().e, d.errors().e);
}

TEST(DemoIo, HeaderLayout) {
  EXPECT_EQ(demo_csv_header(2, false), "t,x1,x2,v1,v2,a1,a2,f1,f2");
  EXPECT_EQ(demo_csv_header(2, true), "t,x1,x2,v1,v2,a1,a2,f1,f2,k11,k12,k21,k22,d11,d12,d21,d22");
}

TEST(DemoIo, MissingGroundTruthBlock) {
  const fs::path dir = scratch_dir("notruth");
  Demonstration d = make_demo(small_config(), 0);
  d.truth.reset();
  save_demo(d, dir / "a.csv");
  const Demonstration back = load_demo(dir / "a.csv");
  EXPECT_FALSE(back.truth.has_value());
  EXPECT_EQ(back.size(), d.size());
}

TEST(DemoIo, TruncatedFileIsParseError) {
  const fs::path dir = scratch_dir("trunc");
  save_demo(make_demo(small_config(), 0), dir / "a.csv");
  std::string text = read_text(dir / "a.csv");
  text.resize(text.size() / 2);
  text.resize(text.rfind('\n') + 1);
  write_text(dir / "a.csv", text);
  EXPECT_THROW(load_demo(dir / "a.csv"), ParseError);
}

TEST(DemoIo, PartialLineReportsLineNumber) {
  const fs::path dir = scratch_dir("partial");
  save_demo(make_demo(small_config(), 0), dir / "a.csv");
  std::string text = read_text(dir / "a.csv");
  // cut the 6th line (5th data row) after its first field
  std::size_t pos = 0;
  for (int i = 0; i < 5; ++i) pos = text.find('\n', pos) + 1;
  const std::size_t comma = text.find(',', pos);
  const std::size_t eol = text.find('\n', pos);
  text.erase(comma, eol - comma);
  write_text(dir / "a.csv", text);
  try {
    load_demo(dir / "a.csv");
    FAIL() << "expected a parse error";
  } catch (const ParseError& e) {
    EXPECT_EQ(e.line(), 6u);
  }
}

TEST(DemoIo, BadNumberIsParseError) {
  const fs::path dir = scratch_dir("badnum");
  save_demo(make_demo(small_config(), 0), dir / "a.csv");
  std::string text = read_text(dir / "a.csv");
  const std::size_t pos = text.find('\n') + 1;
  text.replace(pos, 1, "q");
  write_text(dir / "a.csv", text);
  EXPECT_THROW(load_demo(dir / "a.csv"), ParseError);
}
