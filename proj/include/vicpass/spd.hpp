#pragma once

// Symmetric / SPD matrix foundations: canonical symmetric storage, the
// symmetric basis used by the weighted estimator, nearest-SPD projection,
// reverse Cholesky vectorization (K = L^T L, L lower) and SPD distances.

#include <Eigen/Cholesky>
#include <Eigen/Dense>
#include <Eigen/SVD>

#include <algorithm>
#include <cmath>
#include <string>
#include <utility>
#include <vector>

#include "vicpass/errors.hpp"

namespace vicpass {

// Eigenvalue floor of every SpdMatrix.
inline constexpr double kEpsPd = 1e-6;
// Slack allowed below kEpsPd for rounding after reconstruction.
inline constexpr double kSpdSlack = 1e-12;

using Eigen::MatrixXd;
using Eigen::VectorXd;

inline int tri_size(int n) { return n * (n + 1) / 2; }

// Inverse of tri_size; -1 when m is not triangular.
inline int dim_from_tri_size(int m) {
  const int n = static_cast<int>(std::lround((std::sqrt(8.0 * m + 1.0) - 1.0) / 2.0));
  return tri_size(n) == m ? n : -1;
}

inline bool all_finite(const MatrixXd& a) { return a.allFinite(); }

class SymMatrix {
 public:
  SymMatrix() = default;

  // Canonicalizes from the lower triangle; the upper triangle is ignored.
  explicit SymMatrix(const MatrixXd& a) : m_(a) {
    if (a.rows() != a.cols()) throw InvalidDimension("SymMatrix: matrix is not square");
    m_.triangularView<Eigen::StrictlyUpper>() = m_.transpose().triangularView<Eigen::StrictlyUpper>();
  }

  static SymMatrix zero(int n) { return SymMatrix(MatrixXd::Zero(n, n)); }

  // (A + A^T)/2, usable on arbitrary square input.
  static SymMatrix symmetrize(const MatrixXd& a) {
    if (a.rows() != a.cols()) throw InvalidDimension("symmetrize: matrix is not square");
    return SymMatrix(0.5 * (a + a.transpose()));
  }

  int dim() const { return static_cast<int>(m_.rows()); }
  double operator()(int i, int j) const { return m_(i, j); }
  const MatrixXd& matrix() const { return m_; }

  friend bool operator==(const SymMatrix& a, const SymMatrix& b) { return a.m_ == b.m_; }

 private:
  MatrixXd m_;
};

class SpdMatrix;
namespace detail {
SpdMatrix make_spd_trusted(MatrixXd a);
}

// Symmetric with smallest eigenvalue >= kEpsPd (minus rounding slack).
class SpdMatrix {
 public:
  SpdMatrix() = default;

  // Validates symmetry (relative 1e-10) and the eigenvalue floor; throws InvalidInput.
  static SpdMatrix checked(const MatrixXd& a) {
    if (a.rows() != a.cols() || a.rows() == 0) throw InvalidDimension("SpdMatrix: matrix is not square");
    if (!a.allFinite()) throw InvalidInput("SpdMatrix: non-finite entries");
    const double scale = std::max(1.0, a.cwiseAbs().maxCoeff());
    if ((a - a.transpose()).cwiseAbs().maxCoeff() > 1e-10 * scale)
      throw InvalidInput("SpdMatrix: matrix is not symmetric");
    SymMatrix s(a);
    Eigen::SelfAdjointEigenSolver<MatrixXd> es(s.matrix(), Eigen::EigenvaluesOnly);
    if (es.eigenvalues()(0) < kEpsPd - kSpdSlack)
      throw InvalidInput("SpdMatrix: smallest eigenvalue " + std::to_string(es.eigenvalues()(0)) +
                         " below floor");
    return SpdMatrix(s.matrix());
  }

  static SpdMatrix identity(int n, double scale = 1.0) {
    if (n < 1) throw InvalidDimension("SpdMatrix::identity: n < 1");
    if (!(scale >= kEpsPd)) throw InvalidInput("SpdMatrix::identity: scale below floor");
    return SpdMatrix(scale * MatrixXd::Identity(n, n));
  }

  static SpdMatrix diagonal(const VectorXd& d) { return checked(d.asDiagonal().toDenseMatrix()); }

  int dim() const { return static_cast<int>(m_.rows()); }
  double operator()(int i, int j) const { return m_(i, j); }
  const MatrixXd& matrix() const { return m_; }
  SymMatrix sym() const { return SymMatrix(m_); }

  friend bool operator==(const SpdMatrix& a, const SpdMatrix& b) { return a.m_ == b.m_; }

 private:
  explicit SpdMatrix(MatrixXd a) : m_(std::move(a)) {}
  friend SpdMatrix detail::make_spd_trusted(MatrixXd a);

  MatrixXd m_;
};

namespace detail {
// Caller guarantees symmetry and the eigenvalue floor.
inline SpdMatrix make_spd_trusted(MatrixXd a) { return SpdMatrix(std::move(a)); }
}  // namespace detail

// Eigenpairs in ascending order; columns of `vectors` are orthonormal eigenvectors,
// so A = vectors * diag(values) * vectors^T.
struct EigPair {
  VectorXd values;
  MatrixXd vectors;
};

inline EigPair eig_sym(const SymMatrix& a) {
  if (a.dim() == 0) throw InvalidDimension("eig_sym: empty matrix");
  Eigen::SelfAdjointEigenSolver<MatrixXd> es(a.matrix());
  if (es.info() != Eigen::Success) throw DecompositionFailure("eig_sym: solver did not converge");
  return {es.eigenvalues(), es.eigenvectors()};
}

inline EigPair eig_sym(const MatrixXd& a) {
  if (a.rows() != a.cols()) throw InvalidDimension("eig_sym: matrix is not square");
  if (!a.allFinite()) throw InvalidInput("eig_sym: non-finite input");
  const double scale = std::max(1.0, a.cwiseAbs().maxCoeff());
  if ((a - a.transpose()).cwiseAbs().maxCoeff() > 1e-12 * scale)
    throw InvalidInput("eig_sym: matrix is not symmetric");
  return eig_sym(SymMatrix(a));
}

inline EigPair eig_sym(const SpdMatrix& a) { return eig_sym(a.sym()); }

inline double min_eigenvalue(const MatrixXd& sym) {
  Eigen::SelfAdjointEigenSolver<MatrixXd> es(sym, Eigen::EigenvaluesOnly);
  return es.eigenvalues()(0);
}

inline double max_eigenvalue(const MatrixXd& sym) {
  Eigen::SelfAdjointEigenSolver<MatrixXd> es(sym, Eigen::EigenvaluesOnly);
  return es.eigenvalues()(sym.rows() - 1);
}

// V f(Λ) V^T for a symmetric matrix.
template <typename F>
MatrixXd spectral_map(const EigPair& ep, F&& f) {
  VectorXd mapped = ep.values.unaryExpr(std::forward<F>(f));
  return ep.vectors * mapped.asDiagonal() * ep.vectors.transpose();
}

// Raise every eigenvalue below `floor` to `floor`.
inline SpdMatrix clamp_eigenvalues(const SymMatrix& a, double floor = kEpsPd) {
  const EigPair ep = eig_sym(a);
  MatrixXd k = spectral_map(ep, [floor](double v) { return std::max(v, floor); });
  return detail::make_spd_trusted(SymMatrix(k).matrix());
}

// K + eps I for a positive semi-definite K.
inline SpdMatrix lift_spd(const SymMatrix& psd, double eps = kEpsPd) {
  MatrixXd k = psd.matrix();
  k.diagonal().array() += eps;
  if (min_eigenvalue(k) < kEpsPd - kSpdSlack)
    throw InvalidInput("lift_spd: input is not positive semi-definite");
  return detail::make_spd_trusted(std::move(k));
}

// Nearest SPD approximation: B = (A+A^T)/2, B = U S V^T, L = V S V^T,
// K = (B + L)/2; eigenvalues clamped to kEpsPd when K fails the floor.
inline SpdMatrix nearest_spd(const MatrixXd& a) {
  if (a.rows() != a.cols() || a.rows() == 0) throw InvalidDimension("nearest_spd: matrix is not square");
  if (!a.allFinite()) throw InvalidInput("nearest_spd: non-finite input");
  const MatrixXd b = 0.5 * (a + a.transpose());
  Eigen::JacobiSVD<MatrixXd> svd(b, Eigen::ComputeFullV);
  const MatrixXd& v = svd.matrixV();
  const MatrixXd l = v * svd.singularValues().asDiagonal() * v.transpose();
  const SymMatrix k = SymMatrix::symmetrize(0.5 * (b + l));
  const EigPair ep = eig_sym(k);
  if (ep.values(0) >= kEpsPd) return detail::make_spd_trusted(k.matrix());
  MatrixXd clamped = spectral_map(ep, [](double x) { return std::max(x, kEpsPd); });
  return detail::make_spd_trusted(SymMatrix(clamped).matrix());
}

inline SpdMatrix nearest_spd(const SymMatrix& a) { return nearest_spd(a.matrix()); }

// One unit entry on the diagonal or a symmetric pair of unit entries.
struct SymBasis {
  int dim = 0;
  std::vector<SymMatrix> elements;
  std::vector<std::pair<int, int>> positions;  // (row, col) with row <= col

  std::size_t size() const { return elements.size(); }
};

// Canonical order: walk the upper triangle row by row, diagonal first in each row.
inline SymBasis sym_basis(int n) {
  if (n < 1) throw InvalidDimension("sym_basis: dimension must be >= 1");
  SymBasis basis;
  basis.dim = n;
  for (int i = 0; i < n; ++i) {
    for (int j = i; j < n; ++j) {
      MatrixXd m = MatrixXd::Zero(n, n);
      m(i, j) = 1.0;
      m(j, i) = 1.0;
      basis.elements.emplace_back(m);
      basis.positions.emplace_back(i, j);
    }
  }
  return basis;
}

inline SymMatrix recombine(const SymBasis& basis, const VectorXd& weights) {
  if (static_cast<std::size_t>(weights.size()) != basis.size())
    throw InvalidInput("recombine: expected " + std::to_string(basis.size()) + " weights, got " +
                       std::to_string(weights.size()));
  MatrixXd m = MatrixXd::Zero(basis.dim, basis.dim);
  for (std::size_t k = 0; k < basis.size(); ++k) {
    const auto [i, j] = basis.positions[k];
    m(i, j) = weights(static_cast<Eigen::Index>(k));
    m(j, i) = weights(static_cast<Eigen::Index>(k));
  }
  return SymMatrix(m);
}

// Row-major vectorization of a lower-triangular factor.
class CholVector {
 public:
  CholVector() = default;
  CholVector(int dim, VectorXd values) : dim_(dim), values_(std::move(values)) {
    if (dim < 1 || values_.size() != tri_size(dim))
      throw InvalidDimension("CholVector: length " + std::to_string(values_.size()) +
                             " does not match dimension " + std::to_string(dim));
  }

  static CholVector from_values(VectorXd values) {
    const int n = dim_from_tri_size(static_cast<int>(values.size()));
    if (n < 1) throw InvalidDimension("CholVector: length is not triangular");
    return CholVector(n, std::move(values));
  }

  int dim() const { return dim_; }
  const VectorXd& values() const { return values_; }

  MatrixXd factor() const {
    MatrixXd l = MatrixXd::Zero(dim_, dim_);
    int k = 0;
    for (int i = 0; i < dim_; ++i)
      for (int j = 0; j <= i; ++j) l(i, j) = values_(k++);
    return l;
  }

  static CholVector from_factor(const MatrixXd& l) {
    const int n = static_cast<int>(l.rows());
    VectorXd v(tri_size(n));
    int k = 0;
    for (int i = 0; i < n; ++i)
      for (int j = 0; j <= i; ++j) v(k++) = l(i, j);
    return CholVector(n, std::move(v));
  }

 private:
  int dim_ = 0;
  VectorXd values_;
};

// Lower-triangular L with positive diagonal such that K = L^T L.
inline MatrixXd reverse_cholesky(const MatrixXd& k) {
  const MatrixXd flipped = k.reverse();  // J K J
  Eigen::LLT<MatrixXd> llt(flipped);
  if (llt.info() != Eigen::Success) throw DecompositionFailure("chol_vec: matrix is not positive definite");
  const MatrixXd upper = llt.matrixU();  // J K J = U^T U
  return upper.reverse();                // J U J is lower triangular
}

inline CholVector chol_vec(const SpdMatrix& k) { return CholVector::from_factor(reverse_cholesky(k.matrix())); }

inline CholVector chol_vec(const SymMatrix& k) { return CholVector::from_factor(reverse_cholesky(k.matrix())); }

// L^T L without the SPD check (predictions may be singular).
inline SymMatrix chol_gram(const CholVector& v) {
  const MatrixXd l = v.factor();
  return SymMatrix(l.transpose() * l);
}

inline SpdMatrix chol_unvec(const CholVector& v) {
  const SymMatrix k = chol_gram(v);
  if (min_eigenvalue(k.matrix()) < kEpsPd - kSpdSlack)
    throw DecompositionFailure("chol_unvec: factor yields a matrix below the SPD floor");
  return detail::make_spd_trusted(k.matrix());
}

inline SymMatrix logm_spd(const SpdMatrix& a) {
  return SymMatrix(spectral_map(eig_sym(a), [](double x) { return std::log(x); }));
}

inline MatrixXd inv_sqrtm_spd(const SpdMatrix& a) {
  return spectral_map(eig_sym(a), [](double x) { return 1.0 / std::sqrt(x); });
}

inline MatrixXd sqrtm_spd(const SpdMatrix& a) {
  return spectral_map(eig_sym(a), [](double x) { return std::sqrt(x); });
}

inline double log_det_spd(const MatrixXd& a) {
  Eigen::LLT<MatrixXd> llt(a);
  if (llt.info() != Eigen::Success) throw DecompositionFailure("log_det: matrix is not positive definite");
  return 2.0 * llt.matrixL().toDenseMatrix().diagonal().array().log().sum();
}

enum class SpdMetric { AffineInvariant, LogEuclidean, LogDet };

inline const char* metric_name(SpdMetric m) {
  switch (m) {
    case SpdMetric::AffineInvariant:
      return "affine_invariant";
    case SpdMetric::LogEuclidean:
      return "log_euclidean";
    case SpdMetric::LogDet:
      return "log_det";
  }
  return "?";
}

inline constexpr SpdMetric kAllMetrics[] = {SpdMetric::AffineInvariant, SpdMetric::LogEuclidean,
                                            SpdMetric::LogDet};

inline SpdMetric metric_from_name(const std::string& s) {
  for (SpdMetric m : kAllMetrics)
    if (s == metric_name(m)) return m;
  throw InvalidInput("unknown SPD metric '" + s + "'");
}

// Eigenvalues of A^-1/2 B A^-1/2.
inline VectorXd relative_eigenvalues(const SpdMatrix& a, const SpdMatrix& b) {
  const MatrixXd s = inv_sqrtm_spd(a);
  return eig_sym(SymMatrix::symmetrize(s * b.matrix() * s)).values;
}

inline double spd_distance(const SpdMatrix& a, const SpdMatrix& b, SpdMetric metric) {
  if (a.dim() != b.dim()) throw InvalidDimension("spd_distance: dimension mismatch");
  switch (metric) {
    case SpdMetric::AffineInvariant: {
      const VectorXd ev = relative_eigenvalues(a, b);
      return std::sqrt(ev.unaryExpr([](double x) { return std::log(x) * std::log(x); }).sum());
    }
    case SpdMetric::LogEuclidean:
      return (logm_spd(a).matrix() - logm_spd(b).matrix()).norm();
    case SpdMetric::LogDet: {
      // logdet((A+B)/2) - logdet(A)/2 - logdet(B)/2 = sum log((1+l) / (2 sqrt l))
      // over the eigenvalues l of A^-1/2 B A^-1/2; log1p keeps d(A, A) at rounding level.
      const VectorXd ev = relative_eigenvalues(a, b);
      double v = 0.0;
      for (Eigen::Index i = 0; i < ev.size(); ++i) {
        const double r = std::sqrt(ev(i));
        v += std::log1p((r - 1.0) * (r - 1.0) / (2.0 * r));
      }
      return std::sqrt(v);
    }
  }
  return 0.0;
}

}  // namespace vicpass
