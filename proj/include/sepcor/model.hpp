#pragma once

#include <cmath>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "sepcor/matrix_kit.hpp"

namespace sepcor {

class SingularDesign : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class NotEstimable : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class DegenerateScatter : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Correlation factors whose smallest eigenvalue falls below this fraction of
/// the largest are rejected at construction instead of being regularized;
/// the solver's termination semantics rely on indefiniteness being surfaced.
inline constexpr double kCorrelationEigTol = 1e-12;

/// Unit-diagonal tolerance for correlation factors.
inline constexpr double kUnitDiagTol = 1e-12;

/// Strictly positive standard deviations, one per response coordinate.
class StdDevVector {
 public:
  explicit StdDevVector(Vector w) : w_(std::move(w)) {
    for (Index j = 0; j < w_.size(); ++j) {
      if (!(w_[j] > 0.0) || !std::isfinite(w_[j])) {
        throw std::invalid_argument(
            "StdDevVector: entries must be positive and finite");
      }
    }
  }

  const Vector& values() const { return w_; }
  Index size() const { return w_.size(); }
  double operator[](Index j) const { return w_[j]; }

 private:
  Vector w_;
};

/// Symmetric positive definite matrix with unit diagonal and off-diagonal
/// entries in (-1, 1).
class CorrelationFactor {
 public:
  explicit CorrelationFactor(Matrix m) : spd_(validated(std::move(m))) {}

  static CorrelationFactor identity(Index dim) {
    return CorrelationFactor(Matrix::Identity(dim, dim));
  }

  const Matrix& matrix() const { return spd_.matrix(); }
  Index dim() const { return spd_.dim(); }

 private:
  static Matrix validated(Matrix m) {
    if (m.rows() != m.cols()) {
      throw std::invalid_argument("CorrelationFactor: matrix must be square");
    }
    for (Index i = 0; i < m.rows(); ++i) {
      if (std::abs(m(i, i) - 1.0) > kUnitDiagTol) {
        throw std::invalid_argument(
            "CorrelationFactor: diagonal entries must equal 1");
      }
      for (Index j = 0; j < i; ++j) {
        if (!(std::abs(m(i, j)) < 1.0)) {
          throw std::invalid_argument(
              "CorrelationFactor: off-diagonal entries must lie in (-1, 1)");
        }
      }
    }
    Eigen::SelfAdjointEigenSolver<Matrix> es(symmetrized(m),
                                             Eigen::EigenvaluesOnly);
    const double max_ev = es.eigenvalues().maxCoeff();
    if (!(es.eigenvalues().minCoeff() > kCorrelationEigTol * max_ev)) {
      throw NotPositiveDefinite(
          "CorrelationFactor: matrix is singular or indefinite");
    }
    return m;
  }

  SpdMatrix spd_;
};

/// Observations y (n x q) with design x (n x p). Each response vector is the
/// column-stacking of an r x c data matrix: vector position (k-1)*r + j holds
/// data-matrix cell (row j, column k), 1-based. Rows of the data matrix are
/// correlated by the r x r factor V, columns by the c x c factor U.
class Dataset {
 public:
  Dataset(Matrix y, Matrix x, Index r, Index c)
      : y_(std::move(y)), x_(std::move(x)), r_(r), c_(c) {
    if (r_ < 1 || c_ < 1) {
      throw std::invalid_argument("Dataset: r and c must be positive");
    }
    if (y_.cols() != r_ * c_) {
      throw std::invalid_argument("Dataset: r*c=" + std::to_string(r_ * c_) +
                                  " != q=" + std::to_string(y_.cols()));
    }
    if (y_.rows() < 2) {
      throw std::invalid_argument("Dataset: need at least n=2 observations");
    }
    if (x_.rows() != y_.rows()) {
      throw std::invalid_argument("Dataset: y and x row counts differ");
    }
    if (x_.cols() < 1 || x_.cols() > x_.rows()) {
      throw std::invalid_argument("Dataset: design must have 1 <= p <= n");
    }
    if (!y_.allFinite() || !x_.allFinite()) {
      throw std::invalid_argument("Dataset: entries must be finite");
    }
    if (design_gram_rcond(x_) < kDesignRcondTol) {
      throw SingularDesign("Dataset: design matrix is rank deficient");
    }
  }

  /// Intercept-only design (a column of ones).
  static Dataset with_intercept(Matrix y, Index r, Index c) {
    const Index n = y.rows();
    return Dataset(std::move(y), Matrix::Ones(n, 1), r, c);
  }

  const Matrix& y() const { return y_; }
  const Matrix& x() const { return x_; }
  Index n() const { return y_.rows(); }
  Index p() const { return x_.cols(); }
  Index q() const { return y_.cols(); }
  Index r() const { return r_; }
  Index c() const { return c_; }

  /// Estimate of the reciprocal condition number of x^T x, from the diagonal
  /// of the rank-revealing QR factor of x.
  static double design_gram_rcond(const Matrix& x) {
    Eigen::ColPivHouseholderQR<Matrix> qr(x);
    const Vector diag = qr.matrixR()
                            .topLeftCorner(std::min(x.rows(), x.cols()), x.cols())
                            .diagonal()
                            .cwiseAbs();
    const double dmax = diag.maxCoeff();
    if (!(dmax > 0.0)) return 0.0;
    const double ratio = diag.minCoeff() / dmax;
    return ratio * ratio;
  }

  static constexpr double kDesignRcondTol = 1e-12;

 private:
  Matrix y_;
  Matrix x_;
  Index r_;
  Index c_;
};

/// Identified covariance parameters: Sigma = W (U kron V) W with U, V
/// correlation factors and W = diag(w).
struct SepCorParams {
  Matrix beta;           // p x q
  CorrelationFactor u;   // c x c
  CorrelationFactor v;   // r x r
  StdDevVector w;        // length q
};

/// A point of the relaxed space where the two factors are general covariance
/// matrices; identified parameters are recovered with identify().
struct RelaxedParams {
  SpdMatrix u;     // c x c
  SpdMatrix v;     // r x r
  StdDevVector w;  // length q
};

struct IdentifiedFactors {
  CorrelationFactor u;
  CorrelationFactor v;
  StdDevVector w;
};

enum class Termination {
  kConverged,
  kMaxIterations,
  kIndefiniteU,
  kIndefiniteV,
};

inline const char* to_string(Termination t) {
  switch (t) {
    case Termination::kConverged: return "Converged";
    case Termination::kMaxIterations: return "MaxIterations";
    case Termination::kIndefiniteU: return "IndefiniteU";
    case Termination::kIndefiniteV: return "IndefiniteV";
  }
  return "Unknown";
}

struct FitReport {
  SepCorParams params;
  double nll = 0.0;                    // objective value at termination
  std::vector<double> objective_trace; // per-iteration values, [0] = start
  int iterations = 0;
  Termination termination = Termination::kConverged;

  Matrix sigma() const;
};

/// Least squares coefficients: the p x q matrix minimizing
/// sum_i |y_i - beta^T x_i|^2, via a QR solve.
inline Matrix least_squares_beta(const Dataset& d) {
  if (Dataset::design_gram_rcond(d.x()) < Dataset::kDesignRcondTol) {
    throw SingularDesign("least_squares_beta: x^T x is numerically singular");
  }
  Eigen::HouseholderQR<Matrix> qr(d.x());
  return qr.solve(d.y());
}

/// S*(beta) = sum_i (y_i - beta^T x_i)(y_i - beta^T x_i)^T / n.
inline Matrix residual_scatter(const Dataset& d, const Matrix& beta) {
  if (beta.rows() != d.p() || beta.cols() != d.q()) {
    throw std::invalid_argument("residual_scatter: beta must be p x q");
  }
  const Matrix resid = d.y() - d.x() * beta;
  return symmetrized(resid.transpose() * resid / static_cast<double>(d.n()));
}

/// Sigma = diag(w) (u kron v) diag(w).
inline Matrix assemble_sigma(const Matrix& u, const Matrix& v, const Vector& w) {
  if (w.size() != u.rows() * v.rows()) {
    throw std::invalid_argument("assemble_sigma: w length must equal dim(u)*dim(v)");
  }
  Matrix sigma = kronecker(u, v);
  sigma = w.asDiagonal() * sigma * w.asDiagonal();
  return sigma;
}

namespace detail {

/// Accumulates sum_i tr[E_i u^-1 E_i^T v^-1] / n given Cholesky factors of u
/// and v, where vec(E_i) = diag(1/w) (y_i - beta^T x_i). `resid_t` is the
/// q x n matrix of residuals, one observation per column.
inline double scaled_residual_quad_form(const Matrix& resid_t, const Vector& w,
                                        const Matrix& lu, const Matrix& lv,
                                        Index r, Index c) {
  const Index n = resid_t.cols();
  Matrix e(r, c);
  CompensatedSum acc;
  const Vector inv_w = w.cwiseInverse();
  for (Index i = 0; i < n; ++i) {
    e = (resid_t.col(i).cwiseProduct(inv_w)).reshaped(r, c);
    lv.triangularView<Eigen::Lower>().solveInPlace(e);
    lu.triangularView<Eigen::Lower>().solveInPlace(e.transpose());
    acc.add(e.squaredNorm());
  }
  return acc.value() / static_cast<double>(n);
}

}  // namespace detail

/// Negative log-likelihood objective, up to scaling and additive constants:
///   g(beta, u, v, w) = log|W (u kron v) W| + tr(S*(beta) [W (u kron v) W]^-1).
/// Evaluated through the factor structure; the q x q matrix is never formed.
inline double nll_g(const Dataset& d, const Matrix& beta, const Matrix& u,
                    const Matrix& v, const Vector& w) {
  if (u.rows() != d.c() || v.rows() != d.r() || w.size() != d.q()) {
    throw std::invalid_argument("nll_g: parameter dimensions do not match data");
  }
  const Matrix lu = cholesky_lower(u);
  const Matrix lv = cholesky_lower(v);
  CompensatedSum logs;
  for (Index j = 0; j < w.size(); ++j) logs.add(std::log(w[j]));
  const double logdet = 2.0 * logs.value() +
                        static_cast<double>(d.r()) * logdet_from_factor(lu) +
                        static_cast<double>(d.c()) * logdet_from_factor(lv);
  const Matrix resid_t = (d.y() - d.x() * beta).transpose();
  return logdet + detail::scaled_residual_quad_form(resid_t, w, lu, lv, d.r(), d.c());
}

/// Profiled objective g1(u, v, w) = g(beta_hat, u, v, w).
inline double nll_g1(const Dataset& d, const Matrix& u, const Matrix& v,
                     const Vector& w) {
  return nll_g(d, least_squares_beta(d), u, v, w);
}

/// Same objective for an arbitrary covariance matrix:
///   log|sigma| + tr(S*(beta) sigma^-1).
/// Used where sigma carries no product structure.
inline double nll_g_sigma(const Dataset& d, const Matrix& beta,
                          const Matrix& sigma) {
  if (sigma.rows() != d.q() || sigma.cols() != d.q()) {
    throw std::invalid_argument("nll_g_sigma: sigma must be q x q");
  }
  const Matrix l = cholesky_lower(sigma);
  const Matrix resid_t = (d.y() - d.x() * beta).transpose();
  CompensatedSum acc;
  Vector z(d.q());
  for (Index i = 0; i < d.n(); ++i) {
    z = resid_t.col(i);
    l.triangularView<Eigen::Lower>().solveInPlace(z);
    acc.add(z.squaredNorm());
  }
  return logdet_from_factor(l) + acc.value() / static_cast<double>(d.n());
}

/// Maps a relaxed point (covariance factors u, v and scales w) to the unique
/// identified point with the same Sigma:
///   u_cor = D_u^-1/2 u D_u^-1/2,  v_cor likewise,
///   w_j   = w_j * sqrt(u_kk * v_ll) for vector position j <-> cell (l, k).
inline IdentifiedFactors identify(const RelaxedParams& y) {
  const Matrix& ut = y.u.matrix();
  const Matrix& vt = y.v.matrix();
  const Index c = ut.rows();
  const Index r = vt.rows();
  if (y.w.size() != r * c) {
    throw std::invalid_argument("identify: w length must equal dim(u)*dim(v)");
  }
  const Vector du = ut.diagonal().cwiseSqrt().cwiseInverse();
  const Vector dv = vt.diagonal().cwiseSqrt().cwiseInverse();
  Matrix u_cor = du.asDiagonal() * ut * du.asDiagonal();
  Matrix v_cor = dv.asDiagonal() * vt * dv.asDiagonal();
  u_cor.diagonal().setOnes();
  v_cor.diagonal().setOnes();
  Vector w_out(r * c);
  for (Index k = 0; k < c; ++k) {
    const double su = std::sqrt(ut(k, k));
    for (Index l = 0; l < r; ++l) {
      w_out[k * r + l] = y.w[k * r + l] * su * std::sqrt(vt(l, l));
    }
  }
  return IdentifiedFactors{CorrelationFactor(std::move(u_cor)),
                           CorrelationFactor(std::move(v_cor)),
                           StdDevVector(std::move(w_out))};
}

/// Rows are sigma_hat^-1/2 (y_i - beta^T x_i); approximately standard normal
/// entries under a perfect fit.
inline Matrix standardized_residuals(const Dataset& d, const SepCorParams& fit) {
  const Matrix sigma =
      assemble_sigma(fit.u.matrix(), fit.v.matrix(), fit.w.values());
  const Matrix root = sym_inv_sqrt(sigma);
  const Matrix resid = d.y() - d.x() * fit.beta;
  return resid * root;  // root is symmetric
}

/// Free covariance parameters when the correlation matrix factors but the
/// q standard deviations are unrestricted.
inline int covariance_param_count_sepcor(Index r, Index c) {
  return static_cast<int>(c * (c - 1) / 2 + r * (r - 1) / 2 + r * c);
}

/// Free covariance parameters when the covariance itself factors (one scale
/// is fixed by the identification constraint).
inline int covariance_param_count_sepcov(Index r, Index c) {
  return static_cast<int>(c * (c - 1) / 2 + r * (r - 1) / 2 + r + c - 1);
}

inline int covariance_param_count_unrestricted(Index q) {
  return static_cast<int>(q * (q + 1) / 2);
}

inline Matrix FitReport::sigma() const {
  return assemble_sigma(params.u.matrix(), params.v.matrix(), params.w.values());
}

}  // namespace sepcor
