#pragma once

#include <Eigen/Dense>

#include <cmath>
#include <stdexcept>
#include <string>
#include <utility>

namespace sepcor {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;
using Index = Eigen::Index;

/// Thrown when a symmetric matrix fails to factor with strictly positive
/// Cholesky pivots (indefinite or numerically singular input).
class NotPositiveDefinite : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Relative symmetry tolerance: max |a - a^T| <= kSymmetryTol * max |a|.
inline constexpr double kSymmetryTol = 1e-10;

/// A Cholesky pivot at or below kCholeskyPivotTol times the largest diagonal
/// entry counts as non-positive. Must sit below the smallest eigenvalue ratio
/// accepted for correlation factors (1e-12) and above accumulation roundoff.
inline constexpr double kCholeskyPivotTol = 1e-13;

/// Kahan-Neumaier compensated accumulator. Objective values are sums of up to
/// q^2 terms and successive iterates are compared at 1e-12 absolute, so the
/// naive summation error is not acceptable there.
class CompensatedSum {
 public:
  void add(double v) {
    const double t = sum_ + v;
    if (std::abs(sum_) >= std::abs(v)) {
      comp_ += (sum_ - t) + v;
    } else {
      comp_ += (v - t) + sum_;
    }
    sum_ = t;
  }
  double value() const { return sum_ + comp_; }

 private:
  double sum_ = 0.0;
  double comp_ = 0.0;
};

inline bool is_symmetric(const Matrix& a, double rel_tol = kSymmetryTol) {
  if (a.rows() != a.cols()) return false;
  if (a.size() == 0) return true;
  const double scale = a.cwiseAbs().maxCoeff();
  const double gap = (a - a.transpose()).cwiseAbs().maxCoeff();
  return gap <= rel_tol * scale || gap == 0.0;
}

/// (a + a^T) / 2; absorbs accumulation noise before factorization.
inline Matrix symmetrized(const Matrix& a) {
  return (a + a.transpose()) / 2.0;
}

/// Lower Cholesky factor of a symmetric matrix, written into `l`. Returns
/// false when a pivot falls at or below the relative tolerance. `a` is read
/// from its lower triangle only.
inline bool try_cholesky_lower(const Matrix& a, Matrix& l) {
  const Index n = a.rows();
  l.setZero(n, n);
  double max_diag = 0.0;
  for (Index j = 0; j < n; ++j) max_diag = std::max(max_diag, std::abs(a(j, j)));
  const double pivot_floor = kCholeskyPivotTol * max_diag;
  for (Index j = 0; j < n; ++j) {
    double d = a(j, j) - l.row(j).head(j).squaredNorm();
    if (!(d > pivot_floor)) return false;  // also rejects NaN
    d = std::sqrt(d);
    l(j, j) = d;
    for (Index i = j + 1; i < n; ++i) {
      const double s = a(i, j) - l.row(i).head(j).dot(l.row(j).head(j));
      l(i, j) = s / d;
    }
  }
  return true;
}

/// Lower-triangular L with a = L L^T. Requires a symmetric; the input is
/// symmetrized before factoring. Throws NotPositiveDefinite on failure.
inline Matrix cholesky_lower(const Matrix& a) {
  if (!is_symmetric(a)) {
    throw std::invalid_argument("cholesky: input matrix is not symmetric");
  }
  Matrix l;
  if (!try_cholesky_lower(symmetrized(a), l)) {
    throw NotPositiveDefinite("cholesky: matrix is not positive definite");
  }
  return l;
}

/// log det(L L^T) = 2 sum log L_jj from an existing Cholesky factor.
inline double logdet_from_factor(const Matrix& l) {
  CompensatedSum s;
  for (Index j = 0; j < l.rows(); ++j) s.add(std::log(l(j, j)));
  return 2.0 * s.value();
}

inline double logdet_spd(const Matrix& a) {
  return logdet_from_factor(cholesky_lower(a));
}

/// Solves a x = b for symmetric positive definite a.
inline Matrix spd_solve(const Matrix& a, const Matrix& b) {
  const Matrix l = cholesky_lower(a);
  Matrix x = l.triangularView<Eigen::Lower>().solve(b);
  l.transpose().triangularView<Eigen::Upper>().solveInPlace(x);
  return x;
}

/// Inverse from an existing lower Cholesky factor.
inline Matrix inverse_from_factor(const Matrix& l) {
  const Index n = l.rows();
  Matrix x = l.triangularView<Eigen::Lower>().solve(Matrix::Identity(n, n));
  l.transpose().triangularView<Eigen::Upper>().solveInPlace(x);
  return symmetrized(x);
}

/// Kronecker product: result[(i*nb + k, j*nb + l)] = a(i,j) * b(k,l).
inline Matrix kronecker(const Matrix& a, const Matrix& b) {
  Matrix out(a.rows() * b.rows(), a.cols() * b.cols());
  for (Index i = 0; i < a.rows(); ++i) {
    for (Index j = 0; j < a.cols(); ++j) {
      out.block(i * b.rows(), j * b.cols(), b.rows(), b.cols()) = a(i, j) * b;
    }
  }
  return out;
}

/// Symmetric inverse square root m with m a m = I, via a full symmetric
/// eigendecomposition. Dimensions here stay small, so exactness wins over
/// iterative schemes.
inline Matrix sym_inv_sqrt(const Matrix& a) {
  if (!is_symmetric(a)) {
    throw std::invalid_argument("sym_inv_sqrt: input matrix is not symmetric");
  }
  Eigen::SelfAdjointEigenSolver<Matrix> es(symmetrized(a));
  if (es.info() != Eigen::Success) {
    throw std::runtime_error("sym_inv_sqrt: eigendecomposition failed");
  }
  const Vector& ev = es.eigenvalues();
  const double max_ev = ev.cwiseAbs().maxCoeff();
  if (!(ev.minCoeff() > kCholeskyPivotTol * max_ev)) {
    throw NotPositiveDefinite("sym_inv_sqrt: matrix is not positive definite");
  }
  const Vector inv_sqrt = ev.cwiseSqrt().cwiseInverse();
  return symmetrized(es.eigenvectors() * inv_sqrt.asDiagonal() *
                     es.eigenvectors().transpose());
}

/// Largest singular value. Symmetric inputs use their eigendecomposition;
/// general inputs go through the Gram matrix a^T a.
inline double spectral_norm(const Matrix& a) {
  if (a.size() == 0) return 0.0;
  if (is_symmetric(a)) {
    Eigen::SelfAdjointEigenSolver<Matrix> es(symmetrized(a),
                                             Eigen::EigenvaluesOnly);
    return es.eigenvalues().cwiseAbs().maxCoeff();
  }
  Eigen::SelfAdjointEigenSolver<Matrix> es(Matrix(a.transpose() * a),
                                           Eigen::EigenvaluesOnly);
  return std::sqrt(std::max(0.0, es.eigenvalues().maxCoeff()));
}

/// Validated symmetric positive definite matrix. Construction symmetrizes
/// (after the relative symmetry check) and factors once.
class SpdMatrix {
 public:
  explicit SpdMatrix(Matrix a) {
    if (a.rows() != a.cols()) {
      throw std::invalid_argument("SpdMatrix: matrix must be square");
    }
    if (!is_symmetric(a)) {
      throw std::invalid_argument("SpdMatrix: matrix is not symmetric");
    }
    mat_ = symmetrized(a);
    Matrix l;
    if (!try_cholesky_lower(mat_, l)) {
      throw NotPositiveDefinite("SpdMatrix: matrix is not positive definite");
    }
  }

  const Matrix& matrix() const { return mat_; }
  Index dim() const { return mat_.rows(); }

 private:
  Matrix mat_;
};

}  // namespace sepcor
