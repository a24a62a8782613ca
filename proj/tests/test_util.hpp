#pragma once

#include <Eigen/Dense>

#include <cmath>
#include <random>

#include "vicpass/spd.hpp"

namespace vicpass::testing {

inline Eigen::MatrixXd random_matrix(std::mt19937_64& rng, int rows, int cols, double scale = 1.0) {
  std::normal_distribution<double> g(0.0, scale);
  Eigen::MatrixXd m(rows, cols);
  for (int i = 0; i < rows; ++i)
    for (int j = 0; j < cols; ++j) m(i, j) = g(rng);
  return m;
}

inline Eigen::MatrixXd random_rotation(std::mt19937_64& rng, int n) {
  Eigen::HouseholderQR<Eigen::MatrixXd> qr(random_matrix(rng, n, n));
  return qr.householderQ();
}

// Q diag(l) Q^T, eigenvalues log-uniform in [lo, hi].
inline Eigen::MatrixXd random_spd_matrix(std::mt19937_64& rng, int n, double lo = 0.1, double hi = 10.0) {
  std::uniform_real_distribution<double> u(std::log(lo), std::log(hi));
  Eigen::VectorXd l(n);
  for (int i = 0; i < n; ++i) l(i) = std::exp(u(rng));
  const Eigen::MatrixXd q = random_rotation(rng, n);
  Eigen::MatrixXd k = q * l.asDiagonal() * q.transpose();
  return 0.5 * (k + k.transpose());
}

inline SpdMatrix random_spd(std::mt19937_64& rng, int n, double lo = 0.1, double hi = 10.0) {
  return SpdMatrix::checked(random_spd_matrix(rng, n, lo, hi));
}

inline double rel_fro(const Eigen::MatrixXd& a, const Eigen::MatrixXd& b) { return (a - b).norm() / b.norm(); }

}  // namespace vicpass::testing
