#pragma once

// Kernel ridge regression from s = (f, x) to the Cholesky vector of K, with
// ker(a, b) = a^T b exp(-h |a - b|^2). The linear factor makes ker(0, .) = 0,
// so the reproduced stiffness vanishes with the input.

#include <Eigen/Cholesky>
#include <Eigen/Dense>

#include <cmath>
#include <filesystem>
#include <string>
#include <vector>

#include "vicpass/errors.hpp"
#include "vicpass/io_util.hpp"
#include "vicpass/spd.hpp"

namespace vicpass {

inline constexpr const char* kModelFormat = "vicpass-kernel-model";
inline constexpr int kModelFormatVersion = 1;

inline double kernel_eval(const VectorXd& a, const VectorXd& b, double h) {
  if (a.size() != b.size()) throw InvalidInput("kernel_eval: input lengths differ");
  return a.dot(b) * std::exp(-h * (a - b).squaredNorm());
}

// Rows of `inputs` are the samples.
inline MatrixXd gram(const MatrixXd& inputs, double h) {
  const auto n = inputs.rows();
  MatrixXd g(n, n);
  for (Eigen::Index i = 0; i < n; ++i) {
    const VectorXd si = inputs.row(i).transpose();
    for (Eigen::Index j = 0; j <= i; ++j) g(i, j) = g(j, i) = kernel_eval(si, inputs.row(j).transpose(), h);
  }
  return g;
}

// Force first, then position.
inline VectorXd model_input(const VectorXd& f, const VectorXd& x) {
  if (f.size() != x.size()) throw InvalidInput("model_input: force and position dimensions differ");
  VectorXd s(f.size() + x.size());
  s << f, x;
  return s;
}

struct TrainingSet {
  int dim = 0;
  MatrixXd inputs;   // rows: (f, x), length 2N
  MatrixXd targets;  // rows: Cholesky vectors, length N(N+1)/2

  void add(const VectorXd& s, const CholVector& v) {
    if (dim == 0) {
      dim = v.dim();
      inputs.resize(0, 2 * dim);
      targets.resize(0, tri_size(dim));
    }
    if (v.dim() != dim || s.size() != 2 * dim) throw InvalidDimension("TrainingSet::add: dimension mismatch");
    inputs.conservativeResize(inputs.rows() + 1, Eigen::NoChange);
    targets.conservativeResize(targets.rows() + 1, Eigen::NoChange);
    inputs.row(inputs.rows() - 1) = s.transpose();
    targets.row(targets.rows() - 1) = v.values().transpose();
  }
  Eigen::Index rows() const { return inputs.rows(); }
};

class KernelModel {
 public:
  KernelModel(int dim, double h, double lambda, MatrixXd support, MatrixXd coefficients)
      : dim_(dim), h_(h), lambda_(lambda), support_(std::move(support)), coef_(std::move(coefficients)) {
    if (!(h_ > 0.0) || !(lambda_ > 0.0)) throw InvalidInput("KernelModel: h and lambda must be positive");
    if (support_.rows() != coef_.rows()) throw InvalidInput("KernelModel: support and coefficient rows differ");
    if (support_.cols() != 2 * dim_ || coef_.cols() != tri_size(dim_))
      throw InvalidDimension("KernelModel: column counts do not match the dimension");
  }

  int dim() const { return dim_; }
  double h() const { return h_; }
  double lambda() const { return lambda_; }
  const MatrixXd& support() const { return support_; }
  const MatrixXd& coefficients() const { return coef_; }

  // ker* (Ker + lambda I)^-1 targets
  VectorXd predict_vec(const VectorXd& s) const {
    if (s.size() != support_.cols()) throw InvalidInput("predict: query length does not match the model");
    VectorXd kstar(support_.rows());
    for (Eigen::Index i = 0; i < support_.rows(); ++i) kstar(i) = kernel_eval(s, support_.row(i).transpose(), h_);
    return coef_.transpose() * kstar;
  }

  // K = L^T L: positive semi-definite, possibly singular.
  SymMatrix predict(const VectorXd& s) const { return chol_gram(CholVector(dim_, predict_vec(s))); }

  json to_json() const {
    return {{"format", kModelFormat}, {"version", kModelFormatVersion}, {"dim", dim_},
            {"h", h_},               {"lambda", lambda_},              {"support", matrix_to_json(support_)},
            {"coefficients", matrix_to_json(coef_)}};
  }

  static KernelModel from_json(const json& j, const std::string& origin = "model") {
    if (j.value("format", "") != kModelFormat) throw ParseError(origin, 0, "not a kernel model file");
    const int version = j.value("version", -1);
    if (version != kModelFormatVersion)
      throw ParseError(origin, 0, "unsupported kernel model version " + std::to_string(version));
    return KernelModel(j.at("dim").get<int>(), j.at("h").get<double>(), j.at("lambda").get<double>(),
                       matrix_from_json(j.at("support")), matrix_from_json(j.at("coefficients")));
  }

 private:
  int dim_;
  double h_, lambda_;
  MatrixXd support_, coef_;
};

inline KernelModel train(const TrainingSet& ts, double h, double lambda) {
  if (!(lambda > 0.0)) throw InvalidInput("train: lambda must be positive");
  if (!(h > 0.0)) throw InvalidInput("train: h must be positive");
  if (ts.rows() == 0) throw InvalidInput("train: empty training set");
  MatrixXd g = gram(ts.inputs, h);
  if (!g.allFinite()) throw InvalidInput("train: non-finite Gram entries");
  g.diagonal().array() += lambda;
  MatrixXd coef;
  const Eigen::LLT<MatrixXd> llt(g);
  if (llt.info() == Eigen::Success) {
    coef = llt.solve(ts.targets);
  } else {
    // lambda below the Gram rounding floor
    coef = g.ldlt().solve(ts.targets);
  }
  if (!coef.allFinite()) throw InvalidInput("train: solve produced non-finite coefficients");
  return KernelModel(ts.dim, h, lambda, ts.inputs, std::move(coef));
}

// lambda = scale * trace(Ker) / rows
inline double relative_lambda(const TrainingSet& ts, double scale) {
  double tr = 0.0;
  for (Eigen::Index i = 0; i < ts.rows(); ++i) tr += ts.inputs.row(i).squaredNorm();  // ker(s, s) = |s|^2
  return scale * tr / static_cast<double>(ts.rows());
}

inline void save_model(const KernelModel& m, const std::filesystem::path& path) { write_json(path, m.to_json()); }

inline KernelModel load_model(const std::filesystem::path& path) {
  return KernelModel::from_json(read_json(path), path.string());
}

}  // namespace vicpass
