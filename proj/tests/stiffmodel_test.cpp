#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <numeric>
#include <random>

#include "test_util.hpp"
#include "vicpass/stiffmodel.hpp"

using namespace vicpass;
using vicpass::testing::random_matrix;
using vicpass::testing::random_spd;

namespace {

TrainingSet random_training_set(std::mt19937_64& rng, int n, int rows) {
  TrainingSet ts;
  for (int i = 0; i < rows; ++i) {
    const VectorXd s = random_matrix(rng, 2 * n, 1).col(0);
    ts.add(s, chol_vec(random_spd(rng, n, 50, 500)));
  }
  return ts;
}

}  // namespace

TEST(Kernel, WorkedExamples) {
  EXPECT_EQ(kernel_eval(Eigen::Vector2d(1, 0), Eigen::Vector2d(0, 1), 3.0), 0.0);
  EXPECT_DOUBLE_EQ(kernel_eval(Eigen::Vector2d(1, 2), Eigen::Vector2d(1, 2), 7.0), 5.0);
  EXPECT_DOUBLE_EQ(kernel_eval(Eigen::Vector2d(1, 1), Eigen::Vector2d(1, 0), 0.5), std::exp(-0.5));
  EXPECT_DOUBLE_EQ(kernel_eval(Eigen::Vector2d(2, 0), Eigen::Vector2d(-1, 0), 0.1), -2.0 * std::exp(-0.9));
  EXPECT_THROW(kernel_eval(Eigen::Vector2d(1, 0), Eigen::Vector3d(1, 0, 0), 1.0), InvalidInput);
}

TEST(Kernel, ZeroInputNullsTheKernel) {
  std::mt19937_64 rng(1);
  for (int i = 0; i < 20; ++i)
    EXPECT_EQ(kernel_eval(VectorXd::Zero(4), random_matrix(rng, 4, 1).col(0), 0.3), 0.0);
}

TEST(Gram, SymmetricWithSquaredNormDiagonal) {
  std::mt19937_64 rng(2);
  const MatrixXd s = random_matrix(rng, 12, 4);
  const MatrixXd g = gram(s, 0.7);
  EXPECT_EQ(g, g.transpose());
  for (Eigen::Index i = 0; i < s.rows(); ++i) EXPECT_DOUBLE_EQ(g(i, i), s.row(i).squaredNorm());
}

TEST(Gram, PsdOverRandomInputSets) {
  std::mt19937_64 rng(3);
  std::uniform_int_distribution<int> rows(2, 40);
  std::uniform_real_distribution<double> logh(std::log(1e-3), std::log(10.0));
  for (int rep = 0; rep < 100; ++rep) {
    const MatrixXd s = random_matrix(rng, rows(rng), 4, 2.0);
    const MatrixXd g = gram(s, std::exp(logh(rng)));
    EXPECT_GE(min_eigenvalue(g), -1e-9 * std::max(1.0, max_eigenvalue(g)));
  }
}

TEST(Train, SinglePointClosedForm) {
  TrainingSet ts;
  const Eigen::Vector4d s1(1.0, -0.5, 0.2, 0.3);
  const CholVector y = chol_vec(SpdMatrix::checked((MatrixXd(2, 2) << 300, 40, 40, 120).finished()));
  ts.add(s1, y);
  const double lambda = 0.25, h = 0.8;
  const KernelModel m = train(ts, h, lambda);
  const Eigen::Vector4d q(0.4, 0.1, -0.3, 0.9);
  const double w = kernel_eval(q, s1, h) / (s1.squaredNorm() + lambda);
  EXPECT_LT((m.predict_vec(q) - w * y.values()).norm(), 1e-12 * y.values().norm());
}

TEST(Train, SmallLambdaInterpolates) {
  std::mt19937_64 rng(4);
  const TrainingSet ts = random_training_set(rng, 2, 30);
  const KernelModel m = train(ts, 0.2, 1e-10);
  for (Eigen::Index i = 0; i < ts.rows(); ++i) {
    const VectorXd p = m.predict_vec(ts.inputs.row(i).transpose());
    EXPECT_LT((p - ts.targets.row(i).transpose()).norm(), 1e-4 * ts.targets.row(i).norm());
  }
}

TEST(Train, LargeLambdaShrinksToZero) {
  std::mt19937_64 rng(5);
  const TrainingSet ts = random_training_set(rng, 2, 10);
  const KernelModel m = train(ts, 0.2, 1e12);
  for (Eigen::Index i = 0; i < ts.rows(); ++i)
    EXPECT_LT(m.predict_vec(ts.inputs.row(i).transpose()).norm(), 1e-8 * ts.targets.row(i).norm());
}

TEST(Train, DuplicateRowsStayFinite) {
  std::mt19937_64 rng(6);
  TrainingSet ts = random_training_set(rng, 2, 5);
  for (int k = 0; k < 5; ++k) ts.add(ts.inputs.row(0).transpose(), CholVector(2, ts.targets.row(0).transpose()));
  const KernelModel m = train(ts, 0.5, 1e-6);
  EXPECT_TRUE(m.coefficients().allFinite());
  EXPECT_TRUE(m.predict_vec(ts.inputs.row(0).transpose()).allFinite());
}

TEST(Train, RejectsBadParameters) {
  std::mt19937_64 rng(7);
  const TrainingSet ts = random_training_set(rng, 2, 3);
  EXPECT_THROW(train(ts, 0.5, 0.0), InvalidInput);
  EXPECT_THROW(train(ts, 0.0, 1.0), InvalidInput);
  EXPECT_THROW(train(TrainingSet{}, 0.5, 1.0), InvalidInput);
}

TEST(TrainingSetTest, RejectsMixedDimensions) {
  TrainingSet ts;
  ts.add(VectorXd::Zero(4), CholVector(2, VectorXd::Ones(3)));
  EXPECT_THROW(ts.add(VectorXd::Zero(6), CholVector(3, VectorXd::Ones(6))), InvalidDimension);
  EXPECT_THROW(ts.add(VectorXd::Zero(3), CholVector(2, VectorXd::Ones(3))), InvalidDimension);
}

TEST(Predict, ZeroInputGivesZeroMatrix) {
  std::mt19937_64 rng(8);
  const KernelModel m = train(random_training_set(rng, 2, 20), 0.3, 1e-3);
  const SymMatrix k = m.predict(VectorXd::Zero(4));
  EXPECT_EQ(k.matrix(), MatrixXd::Zero(2, 2));
}

TEST(Predict, AlwaysPsd) {
  std::mt19937_64 rng(9);
  const KernelModel m = train(random_training_set(rng, 3, 25), 0.3, 1e-4);
  for (int rep = 0; rep < 200; ++rep) {
    const SymMatrix k = m.predict(random_matrix(rng, 6, 1, 3.0).col(0));
    EXPECT_GE(min_eigenvalue(k.matrix()), -1e-9 * std::max(1.0, max_eigenvalue(k.matrix())));
  }
}

TEST(Predict, QueryDimensionMismatchIsInvalid) {
  std::mt19937_64 rng(10);
  const KernelModel m = train(random_training_set(rng, 2, 5), 0.3, 1e-3);
  EXPECT_THROW(m.predict(VectorXd::Zero(6)), InvalidInput);
}

TEST(Predict, TrainingOrderDoesNotMatter) {
  std::mt19937_64 rng(11);
  const TrainingSet ts = random_training_set(rng, 2, 15);
  std::vector<Eigen::Index> perm(static_cast<std::size_t>(ts.rows()));
  std::iota(perm.begin(), perm.end(), 0);
  std::shuffle(perm.begin(), perm.end(), rng);
  TrainingSet shuffled;
  for (Eigen::Index i : perm) shuffled.add(ts.inputs.row(i).transpose(), CholVector(2, ts.targets.row(i).transpose()));
  const KernelModel a = train(ts, 0.4, 1e-3);
  const KernelModel b = train(shuffled, 0.4, 1e-3);
  for (int rep = 0; rep < 20; ++rep) {
    const VectorXd q = random_matrix(rng, 4, 1).col(0);
    EXPECT_LT((a.predict_vec(q) - b.predict_vec(q)).norm(), 1e-8 * (1.0 + a.predict_vec(q).norm()));
  }
}

TEST(Predict, RelativeLambdaScalesWithInputs) {
  TrainingSet ts;
  ts.add(Eigen::Vector4d(1, 0, 0, 0), CholVector(2, VectorXd::Ones(3)));
  ts.add(Eigen::Vector4d(0, 2, 0, 0), CholVector(2, VectorXd::Ones(3)));
  EXPECT_DOUBLE_EQ(relative_lambda(ts, 0.1), 0.1 * (1.0 + 4.0) / 2.0);
}

TEST(ModelIo, RoundTripIsBitExact) {
  std::mt19937_64 rng(12);
  const KernelModel m = train(random_training_set(rng, 2, 12), 0.35, 2e-3);
  const auto dir = std::filesystem::temp_directory_path() / "vicpass_model_test";
  save_model(m, dir / "model.json");
  const KernelModel r = load_model(dir / "model.json");
  EXPECT_EQ(r.dim(), m.dim());
  EXPECT_EQ(r.h(), m.h());
  EXPECT_EQ(r.lambda(), m.lambda());
  EXPECT_EQ(r.support(), m.support());
  EXPECT_EQ(r.coefficients(), m.coefficients());
  const VectorXd q = random_matrix(rng, 4, 1).col(0);
  EXPECT_EQ(r.predict_vec(q), m.predict_vec(q));
  std::filesystem::remove_all(dir);
}

TEST(ModelIo, RejectsUnknownVersionAndFormat) {
  std::mt19937_64 rng(13);
  json j = train(random_training_set(rng, 2, 3), 0.3, 1e-3).to_json();
  json v = j;
  v["version"] = 2;
  EXPECT_THROW(KernelModel::from_json(v), ParseError);
  json f = j;
  f["format"] = "something-else";
  EXPECT_THROW(KernelModel::from_json(f), ParseError);
}
