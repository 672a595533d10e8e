#pragma once

#include <cmath>
#include <cstdint>
#include <optional>
#include <stdexcept>
#include <utility>
#include <vector>

#include "sepcor/log.hpp"
#include "sepcor/matrix_kit.hpp"
#include "sepcor/model.hpp"
#include "sepcor/rng.hpp"

namespace sepcor {

/// Thrown by the granular update operations when a factor update fails to be
/// positive definite. Inside the full fits the same condition is reported as
/// a termination status instead.
class IndefiniteU : public NotPositiveDefinite {
 public:
  using NotPositiveDefinite::NotPositiveDefinite;
};

class IndefiniteV : public NotPositiveDefinite {
 public:
  using NotPositiveDefinite::NotPositiveDefinite;
};

/// Starting point selection for the coordinate descent.
struct Init {
  enum class Mode { kIdentity, kSampleBased, kRandom };

  Mode mode = Mode::kIdentity;
  std::uint64_t seed = 0;  // used by kRandom only

  static Init identity() { return Init{Mode::kIdentity, 0}; }
  static Init sample_based() { return Init{Mode::kSampleBased, 0}; }
  static Init random(std::uint64_t seed) { return Init{Mode::kRandom, seed}; }
};

struct SolverConfig {
  double epsilon = 1e-10;     // stop once |g drop per sweep| <= epsilon
  int max_iterations = 10000;
  Init init = Init::identity();
};

/// Separable covariance parameters: sigma = u_tilde kron v_tilde, with the
/// scale indeterminacy fixed by u_tilde(0,0) = 1.
struct SepCovParams {
  Matrix beta;        // p x q
  SpdMatrix u_tilde;  // c x c covariance factor
  SpdMatrix v_tilde;  // r x r covariance factor
};

struct SepCovFitReport {
  SepCovParams params;
  double nll = 0.0;
  std::vector<double> objective_trace;
  int iterations = 0;
  Termination termination = Termination::kConverged;

  Matrix sigma() const {
    return kronecker(params.u_tilde.matrix(), params.v_tilde.matrix());
  }
};

struct UnrestrictedFit {
  Matrix beta;   // p x q
  Matrix sigma;  // q x q, the residual scatter
  double nll = 0.0;
};

namespace detail {

/// u_tilde = sum_i E_i^T v^-1 E_i / (n r), with v supplied through its
/// Cholesky factor and column i of `scaled_t` holding vec(E_i).
inline Matrix accumulate_u_tilde(const Matrix& scaled_t, const Matrix& lv,
                                 Index r, Index c) {
  const Index n = scaled_t.cols();
  Matrix acc = Matrix::Zero(c, c);
  Matrix g(r, c);
  for (Index i = 0; i < n; ++i) {
    g = Eigen::Map<const Matrix>(scaled_t.col(i).data(), r, c);
    lv.triangularView<Eigen::Lower>().solveInPlace(g);
    acc.noalias() += g.transpose() * g;
  }
  return symmetrized(acc / static_cast<double>(n * r));
}

/// v_tilde = sum_i E_i u_tilde^-1 E_i^T / (n c), with u_tilde supplied
/// through its Cholesky factor.
inline Matrix accumulate_v_tilde(const Matrix& scaled_t, const Matrix& l_ut,
                                 Index r, Index c) {
  const Index n = scaled_t.cols();
  Matrix acc = Matrix::Zero(r, r);
  Matrix h(r, c);
  for (Index i = 0; i < n; ++i) {
    h = Eigen::Map<const Matrix>(scaled_t.col(i).data(), r, c);
    l_ut.triangularView<Eigen::Lower>().solveInPlace(h.transpose());
    acc.noalias() += h * h.transpose();
  }
  return symmetrized(acc / static_cast<double>(n * c));
}

/// Positive root of w_j^2 - a w_j - b/4 = 0, the partial minimizer of g1 in
/// w_j. Entry (j, l) of the inverse correlation matrix is
/// u_inv(j/r, l/r) * v_inv(j%r, l%r); the q x q matrix is never formed.
inline double w_root(const Matrix& s, const Matrix& u_inv, const Matrix& v_inv,
                     const Vector& w, Index r, Index j) {
  if (!(s(j, j) > 0.0)) {
    throw DegenerateScatter(
        "update_w: residual scatter has a non-positive diagonal entry");
  }
  const Index q = w.size();
  const Index kj = j / r;
  const Index rj = j % r;
  double a = 0.0;
  for (Index l = 0; l < q; ++l) {
    if (l == j) continue;
    a += u_inv(kj, l / r) * v_inv(rj, l % r) * s(l, j) / w[l];
  }
  const double b = 4.0 * u_inv(kj, kj) * v_inv(rj, rj) * s(j, j);
  return 0.5 * (a + std::sqrt(a * a + b));
}

/// One cyclic pass of scale updates, in place; position j uses the
/// already-updated values at positions below j.
inline void cyclic_w_update(const Matrix& s, const Matrix& u_inv,
                            const Matrix& v_inv, Vector& w, Index r) {
  for (Index j = 0; j < w.size(); ++j) {
    w[j] = w_root(s, u_inv, v_inv, w, r, j);
  }
}

/// g1 at an identified point, through the Hadamard expansion
///   2 sum_j log w_j + r log|u| + c log|v|
///     + sum_{j,l} S_{jl} (u kron v)^-1_{jl} / (w_j w_l).
/// Every sweep of both fits funnels through this one evaluation path so the
/// objective trace is comparable across iterations.
inline double objective_hadamard(const Matrix& s, const Matrix& u_inv,
                                 const Matrix& v_inv, const Matrix& lu,
                                 const Matrix& lv, const Vector& w, Index r,
                                 Index c) {
  const Index q = w.size();
  const Vector inv_w = w.cwiseInverse();
  CompensatedSum tr;
  for (Index j = 0; j < q; ++j) {
    const Index kj = j / r;
    const Index rj = j % r;
    for (Index l = 0; l < q; ++l) {
      tr.add(s(l, j) * u_inv(kj, l / r) * v_inv(rj, l % r) * inv_w[j] *
             inv_w[l]);
    }
  }
  CompensatedSum logs;
  for (Index j = 0; j < q; ++j) logs.add(std::log(w[j]));
  return 2.0 * logs.value() + static_cast<double>(r) * logdet_from_factor(lu) +
         static_cast<double>(c) * logdet_from_factor(lv) + tr.value();
}

/// Objective of the separable covariance model at (u, v), via the factors:
///   r log|u| + c log|v| + sum_i tr[E_i u^-1 E_i^T v^-1] / n.
inline double objective_sepcov(const Matrix& resid_t, const Matrix& lu,
                               const Matrix& lv, Index r, Index c) {
  const Index n = resid_t.cols();
  Matrix e(r, c);
  CompensatedSum acc;
  for (Index i = 0; i < n; ++i) {
    e = Eigen::Map<const Matrix>(resid_t.col(i).data(), r, c);
    lv.triangularView<Eigen::Lower>().solveInPlace(e);
    lu.triangularView<Eigen::Lower>().solveInPlace(e.transpose());
    acc.add(e.squaredNorm());
  }
  return static_cast<double>(r) * logdet_from_factor(lu) +
         static_cast<double>(c) * logdet_from_factor(lv) +
         acc.value() / static_cast<double>(n);
}

/// Slack allowed in the recorded objective trace. Every sweep descends in
/// exact arithmetic, so a recorded rise beyond this slack means the iterates
/// have left the numerically positive definite region (possible only when the
/// likelihood is unbounded and the factors approach the cone boundary).
inline constexpr double kDescentSlack = 1e-12;

/// Attributes a numerical breakdown to the factor whose Cholesky pivots are
/// closest to collapse relative to its own scale.
inline Termination closer_to_singular(const Matrix& lu, const Matrix& lv) {
  const double pu = lu.diagonal().minCoeff() / lu.diagonal().maxCoeff();
  const double pv = lv.diagonal().minCoeff() / lv.diagonal().maxCoeff();
  return pu <= pv ? Termination::kIndefiniteU : Termination::kIndefiniteV;
}

/// Shrinks a symmetric unit-diagonal candidate toward the identity until it
/// passes correlation-factor validation. lambda = 1 always succeeds.
inline CorrelationFactor shrunk_correlation(Matrix m) {
  m = symmetrized(std::move(m));
  m.diagonal().setOnes();
  for (double lambda : {0.0, 1.0 / 64, 1.0 / 16, 0.25, 0.5, 0.75, 1.0}) {
    Matrix cand = (1.0 - lambda) * m;
    cand.diagonal().setOnes();
    try {
      return CorrelationFactor(std::move(cand));
    } catch (const std::exception&) {
      // try next shrinkage level
    }
  }
  return CorrelationFactor::identity(m.rows());
}

inline Vector init_w_from_scatter(const Matrix& s) {
  Vector w(s.rows());
  for (Index j = 0; j < s.rows(); ++j) {
    w[j] = s(j, j) > 0.0 ? std::max(std::sqrt(s(j, j)), 1e-8) : 1e-8;
  }
  return w;
}

/// Unit-diagonal rescaling of a Wishart draw with dim + 2 degrees of freedom.
inline CorrelationFactor random_correlation(Index dim, std::uint64_t seed,
                                            std::uint32_t row) {
  const Index df = dim + 2;
  std::vector<double> buf(static_cast<std::size_t>(dim * df));
  rng::fill_normal(seed, /*stream=*/0, row, buf);
  Eigen::Map<const Matrix> a(buf.data(), dim, df);
  Matrix m = a * a.transpose() / static_cast<double>(df);
  const Vector d = m.diagonal().cwiseSqrt().cwiseInverse();
  m = d.asDiagonal() * m * d.asDiagonal();
  return shrunk_correlation(std::move(m));
}

inline IdentifiedFactors initialize_from_scatter(const Matrix& s, Index r,
                                                 Index c, const Init& init) {
  Vector w = init_w_from_scatter(s);
  switch (init.mode) {
    case Init::Mode::kIdentity:
      return IdentifiedFactors{CorrelationFactor::identity(c),
                               CorrelationFactor::identity(r),
                               StdDevVector(std::move(w))};
    case Init::Mode::kSampleBased: {
      const Vector d = w.cwiseInverse();
      const Matrix corr = d.asDiagonal() * s * d.asDiagonal();
      Matrix u_bar = Matrix::Zero(c, c);
      for (Index k = 0; k < c; ++k) {
        for (Index kk = 0; kk < c; ++kk) {
          for (Index j = 0; j < r; ++j) {
            u_bar(k, kk) += corr(k * r + j, kk * r + j);
          }
        }
      }
      u_bar /= static_cast<double>(r);
      Matrix v_bar = Matrix::Zero(r, r);
      for (Index j = 0; j < r; ++j) {
        for (Index jj = 0; jj < r; ++jj) {
          for (Index k = 0; k < c; ++k) {
            v_bar(j, jj) += corr(k * r + j, k * r + jj);
          }
        }
      }
      v_bar /= static_cast<double>(c);
      return IdentifiedFactors{shrunk_correlation(std::move(u_bar)),
                               shrunk_correlation(std::move(v_bar)),
                               StdDevVector(std::move(w))};
    }
    case Init::Mode::kRandom:
      return IdentifiedFactors{random_correlation(c, init.seed, 0),
                               random_correlation(r, init.seed, 1),
                               StdDevVector(std::move(w))};
  }
  throw std::logic_error("initialize: unknown mode");
}

}  // namespace detail

/// Factor update given the other factor: u_tilde = sum_i E_i^T v^-1 E_i / (nr)
/// where column i of scaled_t is vec(E_i). Throws IndefiniteU when the update
/// is not positive definite (always the case when n r < c).
inline Matrix update_u(const Matrix& scaled_t, const Matrix& v, Index r,
                       Index c) {
  if (scaled_t.rows() != r * c || v.rows() != r) {
    throw std::invalid_argument("update_u: dimension mismatch");
  }
  const Matrix u_tilde =
      detail::accumulate_u_tilde(scaled_t, cholesky_lower(v), r, c);
  Matrix l;
  if (!try_cholesky_lower(u_tilde, l)) {
    throw IndefiniteU("update_u: factor update is not positive definite");
  }
  return u_tilde;
}

/// Companion update v_tilde = sum_i E_i u_tilde^-1 E_i^T / (nc), with
/// u_tilde exactly as returned by update_u (no rescaling in between).
inline Matrix update_v(const Matrix& scaled_t, const Matrix& u_tilde, Index r,
                       Index c) {
  if (scaled_t.rows() != r * c || u_tilde.rows() != c) {
    throw std::invalid_argument("update_v: dimension mismatch");
  }
  const Matrix v_tilde =
      detail::accumulate_v_tilde(scaled_t, cholesky_lower(u_tilde), r, c);
  Matrix l;
  if (!try_cholesky_lower(v_tilde, l)) {
    throw IndefiniteV("update_v: factor update is not positive definite");
  }
  return v_tilde;
}

/// Scale update at position j given factors u, v, the residual scatter s and
/// the current scales: the exact one-dimensional minimizer of g1 in w_j,
///   w_j = (a + sqrt(a^2 + b)) / 2,
/// a = sum_{l != j} R^-1_{jl} S_{lj} / w_l, b = 4 R^-1_{jj} S_{jj}, where
/// R^-1 = u^-1 kron v^-1 is accessed entrywise.
inline double update_w(const Matrix& s, const Matrix& u, const Matrix& v,
                       const Vector& w, Index j) {
  if (s.rows() != w.size() || u.rows() * v.rows() != w.size()) {
    throw std::invalid_argument("update_w: dimension mismatch");
  }
  if (j < 0 || j >= w.size()) {
    throw std::invalid_argument("update_w: index out of range");
  }
  const Matrix u_inv = inverse_from_factor(cholesky_lower(u));
  const Matrix v_inv = inverse_from_factor(cholesky_lower(v));
  return detail::w_root(s, u_inv, v_inv, w, v.rows(), j);
}

/// Starting point for fit_sepcor, always a valid identified triple.
inline IdentifiedFactors initialize(const Dataset& d, const Init& init) {
  const Matrix s = residual_scatter(d, least_squares_beta(d));
  return detail::initialize_from_scatter(s, d.r(), d.c(), init);
}

/// Coordinate descent for the separable correlation model. Each sweep
/// updates the two factors, restores identification, and cycles through the
/// scales; sweeps repeat while the objective drop exceeds cfg.epsilon.
/// Factor updates that lose positive definiteness end the fit with an
/// Indefinite status and the last valid iterate; no exception is thrown for
/// them. Throws DegenerateScatter if some response coordinate has zero
/// residual variance.
inline FitReport fit_sepcor(const Dataset& d, const SolverConfig& cfg = {}) {
  const Index r = d.r();
  const Index c = d.c();
  const Index q = d.q();
  if (d.n() <= d.p() + q) {
    log::warn("fit_sepcor: n <= p + q, a global minimum may not exist");
  }
  Matrix beta = least_squares_beta(d);
  const Matrix resid_t = (d.y() - d.x() * beta).transpose();
  const Matrix s =
      symmetrized(resid_t * resid_t.transpose() / static_cast<double>(d.n()));

  const IdentifiedFactors start = detail::initialize_from_scatter(s, r, c, cfg.init);
  Matrix u = start.u.matrix();
  Matrix v = start.v.matrix();
  Vector w = start.w.values();
  Matrix lu = cholesky_lower(u);
  Matrix lv = cholesky_lower(v);
  Matrix u_inv = inverse_from_factor(lu);
  Matrix v_inv = inverse_from_factor(lv);

  Matrix u_prev = u;
  Matrix v_prev = v;
  Vector w_prev = w;

  std::vector<double> trace;
  double g_cur = detail::objective_hadamard(s, u_inv, v_inv, lu, lv, w, r, c);
  trace.push_back(g_cur);

  Termination status = Termination::kMaxIterations;
  int iters = 0;
  while (iters < cfg.max_iterations) {
    const Matrix scaled_t = w.cwiseInverse().asDiagonal() * resid_t;
    const Matrix u_tilde = detail::accumulate_u_tilde(scaled_t, lv, r, c);
    Matrix l_ut;
    if (!try_cholesky_lower(u_tilde, l_ut)) {
      status = Termination::kIndefiniteU;
      break;
    }
    const Matrix v_tilde = detail::accumulate_v_tilde(scaled_t, l_ut, r, c);
    Matrix l_vt;
    if (!try_cholesky_lower(v_tilde, l_vt)) {
      status = Termination::kIndefiniteV;
      break;
    }

    u_prev = u;
    v_prev = v;
    w_prev = w;

    // Identification: rescale factors to unit diagonal and absorb the
    // diagonals into w. The factor Cholesky decompositions are obtained by
    // row scaling, not refactorization.
    const Vector du = u_tilde.diagonal().cwiseSqrt();
    const Vector dv = v_tilde.diagonal().cwiseSqrt();
    const Vector du_inv = du.cwiseInverse();
    const Vector dv_inv = dv.cwiseInverse();
    u = du_inv.asDiagonal() * u_tilde * du_inv.asDiagonal();
    v = dv_inv.asDiagonal() * v_tilde * dv_inv.asDiagonal();
    u.diagonal().setOnes();
    v.diagonal().setOnes();
    lu = du_inv.asDiagonal() * l_ut;
    lv = dv_inv.asDiagonal() * l_vt;
    for (Index j = 0; j < q; ++j) w[j] *= du[j / r] * dv[j % r];

    u_inv = inverse_from_factor(lu);
    v_inv = inverse_from_factor(lv);
    detail::cyclic_w_update(s, u_inv, v_inv, w, r);

    const double g_new =
        detail::objective_hadamard(s, u_inv, v_inv, lu, lv, w, r, c);
    if (g_new - g_cur > detail::kDescentSlack) {
      // Numerical breakdown: keep the previous iterate, whose evaluation is
      // the trace tail, so the recorded trace stays non-increasing.
      status = detail::closer_to_singular(lu, lv);
      u = u_prev;
      v = v_prev;
      w = w_prev;
      break;
    }
    trace.push_back(g_new);
    ++iters;
    const double delta = g_cur - g_new;
    g_cur = g_new;
    if (!(std::abs(delta) > cfg.epsilon)) {
      status = Termination::kConverged;
      break;
    }
  }

  auto package = [&](const Matrix& um, const Matrix& vm,
                     const Vector& wv) -> std::optional<SepCorParams> {
    try {
      return SepCorParams{beta, CorrelationFactor(um), CorrelationFactor(vm),
                          StdDevVector(wv)};
    } catch (const NotPositiveDefinite&) {
      return std::nullopt;
    }
  };
  std::optional<SepCorParams> params = package(u, v, w);
  if (!params) {
    // The last iterate passed the Cholesky pivot test but not the stricter
    // eigenvalue validation of CorrelationFactor; report it as an indefinite
    // stop at the latest iterate that does validate. The starting point is a
    // validated IdentifiedFactors, so the chain always terminates.
    status = Termination::kIndefiniteU;
    params = package(u_prev, v_prev, w_prev);
    if (params) {
      if (trace.size() > 1) trace.pop_back();
    } else {
      params = SepCorParams{beta, start.u, start.v, start.w};
      trace.resize(1);
    }
    iters = static_cast<int>(trace.size()) - 1;
  }
  FitReport report{std::move(*params), trace.back(), std::move(trace), iters,
                   status};
  return report;
}

/// Runs fit_sepcor from each starting point and returns the best report:
/// lowest objective among runs that ended by convergence or the iteration
/// cap, falling back to all runs when none did. Ties keep the earliest
/// starting point.
inline FitReport fit_sepcor_multistart(const Dataset& d,
                                       const std::vector<Init>& inits,
                                       SolverConfig cfg = {}) {
  if (inits.empty()) {
    throw std::invalid_argument("fit_sepcor_multistart: no starting points");
  }
  std::optional<FitReport> best_valid;
  std::optional<FitReport> best_any;
  for (const Init& init : inits) {
    cfg.init = init;
    FitReport rep = fit_sepcor(d, cfg);
    const bool valid = rep.termination == Termination::kConverged ||
                       rep.termination == Termination::kMaxIterations;
    if (!best_any || rep.nll < best_any->nll) best_any = rep;
    if (valid && (!best_valid || rep.nll < best_valid->nll)) {
      best_valid = std::move(rep);
    }
  }
  return best_valid ? std::move(*best_valid) : std::move(*best_any);
}

/// Flip-flop estimation of the separable covariance model sigma = u kron v,
/// started from v = identity. The scale indeterminacy is fixed after every
/// sweep by dividing u by u(0,0). Termination semantics match fit_sepcor.
inline SepCovFitReport fit_sepcov(const Dataset& d,
                                  const SolverConfig& cfg = {}) {
  const Index r = d.r();
  const Index c = d.c();
  const double rc = static_cast<double>(r) / static_cast<double>(c);
  if (static_cast<double>(d.n()) <= rc + 1.0 / rc + 1.0) {
    log::warn("fit_sepcov: n <= r/c + c/r + 1, a unique minimum may not exist");
  }
  Matrix beta = least_squares_beta(d);
  const Matrix resid_t = (d.y() - d.x() * beta).transpose();

  Matrix u = Matrix::Identity(c, c);
  Matrix v = Matrix::Identity(r, r);
  Matrix lu = u;
  Matrix lv = v;
  Matrix u_prev = u;
  Matrix v_prev = v;

  std::vector<double> trace;
  double g_cur = detail::objective_sepcov(resid_t, lu, lv, r, c);
  trace.push_back(g_cur);

  Termination status = Termination::kMaxIterations;
  int iters = 0;
  while (iters < cfg.max_iterations) {
    const Matrix u_tilde = detail::accumulate_u_tilde(resid_t, lv, r, c);
    Matrix l_ut;
    if (!try_cholesky_lower(u_tilde, l_ut)) {
      status = Termination::kIndefiniteU;
      break;
    }
    const Matrix v_tilde = detail::accumulate_v_tilde(resid_t, l_ut, r, c);
    Matrix l_vt;
    if (!try_cholesky_lower(v_tilde, l_vt)) {
      status = Termination::kIndefiniteV;
      break;
    }

    u_prev = u;
    v_prev = v;
    const double scale = u_tilde(0, 0);
    const double root = std::sqrt(scale);
    u = u_tilde / scale;
    u(0, 0) = 1.0;
    v = v_tilde * scale;
    lu = l_ut / root;
    lv = l_vt * root;

    const double g_new = detail::objective_sepcov(resid_t, lu, lv, r, c);
    if (g_new - g_cur > detail::kDescentSlack) {
      status = detail::closer_to_singular(lu, lv);
      u = u_prev;
      v = v_prev;
      break;
    }
    trace.push_back(g_new);
    ++iters;
    const double delta = g_cur - g_new;
    g_cur = g_new;
    if (!(std::abs(delta) > cfg.epsilon)) {
      status = Termination::kConverged;
      break;
    }
  }

  SepCovFitReport report{
      SepCovParams{std::move(beta), SpdMatrix(std::move(u)),
                   SpdMatrix(std::move(v))},
      trace.back(), std::move(trace), iters, status};
  return report;
}

/// Unrestricted Gaussian MLE: beta by least squares, sigma the residual
/// scatter. Estimable only when n - p > q and the scatter is positive
/// definite; otherwise throws NotEstimable.
inline UnrestrictedFit fit_unrestricted(const Dataset& d) {
  if (d.n() - d.p() <= d.q()) {
    throw NotEstimable("fit_unrestricted: need n - p > q observations");
  }
  Matrix beta = least_squares_beta(d);
  Matrix s = residual_scatter(d, beta);
  Matrix l;
  if (!try_cholesky_lower(s, l)) {
    throw NotEstimable("fit_unrestricted: residual scatter is singular");
  }
  const double nll = nll_g_sigma(d, beta, s);
  return UnrestrictedFit{std::move(beta), std::move(s), nll};
}

}  // namespace sepcor
