#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

#include "sepcor/log.hpp"
#include "sepcor/matrix_kit.hpp"
#include "sepcor/model.hpp"
#include "sepcor/parallel.hpp"
#include "sepcor/rng.hpp"
#include "sepcor/solver.hpp"

namespace sepcor {

/// Thrown when more than 10% of bootstrap refits fail; the surviving
/// replicate set is too small to calibrate the test.
class InsufficientReplicates : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

enum class TestKind {
  kCovVsCor,           // H0 separable covariance vs HA separable correlation
  kCorVsUnrestricted,  // H0 separable correlation vs HA unrestricted
};

inline const char* to_string(TestKind k) {
  switch (k) {
    case TestKind::kCovVsCor: return "cov-vs-cor";
    case TestKind::kCorVsUnrestricted: return "cor-vs-unrestricted";
  }
  return "unknown";
}

struct HypothesisTest {
  TestKind kind = TestKind::kCovVsCor;
  int b_replicates = 99;
  double alpha = 0.05;
  std::uint64_t seed = 0;
};

struct TestResult {
  double lr_observed = 0.0;      // L(null)/L(alternative) at the fits
  double log_lr_observed = 0.0;  // canonical scale for all comparisons
  std::vector<double> xi;        // bootstrap ratios, failed refits excluded
  std::vector<double> log_xi;
  double p_value = 1.0;
  bool reject = false;
  int b_requested = 0;
  int failed_replicates = 0;

  int b_effective() const { return static_cast<int>(log_xi.size()); }
};

/// Draws n multivariate normal rows: row i = beta^T x_i + L z_i with L the
/// Cholesky factor of sigma. z_i comes from the counter-based stream
/// (seed, stream, i), so identical inputs give bit-identical output and
/// replicates may be generated concurrently.
inline Matrix sample_mvn(const Matrix& beta, const Matrix& sigma,
                         const Matrix& x, std::uint64_t seed,
                         std::uint64_t stream) {
  if (beta.rows() != x.cols() || beta.cols() != sigma.rows()) {
    throw std::invalid_argument("sample_mvn: dimension mismatch");
  }
  const Index n = x.rows();
  const Index q = sigma.rows();
  const Matrix l = cholesky_lower(sigma);
  Matrix out = x * beta;
  std::vector<double> z(static_cast<std::size_t>(q));
  for (Index i = 0; i < n; ++i) {
    rng::fill_normal(seed, stream, static_cast<std::uint32_t>(i), z);
    out.row(i) += (l * Eigen::Map<const Vector>(z.data(), q)).transpose();
  }
  return out;
}

/// log of L(sigma0, beta) / L(sigma_a, beta) = -(n/2) [g(sigma0) - g(sigma_a)]
/// in the shared objective; the 2*pi constants cancel.
inline double log_likelihood_ratio(const Dataset& d, const Matrix& sigma0,
                                   const Matrix& sigma_a, const Matrix& beta) {
  return -0.5 * static_cast<double>(d.n()) *
         (nll_g_sigma(d, beta, sigma0) - nll_g_sigma(d, beta, sigma_a));
}

inline double likelihood_ratio(const Dataset& d, const Matrix& sigma0,
                               const Matrix& sigma_a, const Matrix& beta) {
  return std::exp(log_likelihood_ratio(d, sigma0, sigma_a, beta));
}

namespace detail {

/// Index (1-based) of the order statistic used as the empirical lower
/// alpha-quantile: ceil(alpha * b), clamped to [1, b]. The small slack keeps
/// exact products like 0.05 * 100 from rounding up.
inline int quantile_rank(double alpha, int b) {
  const int k = static_cast<int>(std::ceil(alpha * static_cast<double>(b) - 1e-9));
  return std::clamp(k, 1, b);
}

/// Reject iff the observed value lies strictly below the ceil(alpha*B)-th
/// smallest entry. Operates on the log scale.
inline bool quantile_reject(std::vector<double> log_xi, double log_observed,
                            double alpha) {
  if (log_xi.empty()) {
    throw std::invalid_argument("quantile_reject: empty replicate set");
  }
  const int k = quantile_rank(alpha, static_cast<int>(log_xi.size()));
  std::nth_element(log_xi.begin(), log_xi.begin() + (k - 1), log_xi.end());
  return log_observed < log_xi[static_cast<std::size_t>(k - 1)];
}

inline double add_one_p_value(const std::vector<double>& log_xi,
                              double log_observed) {
  std::size_t count = 0;
  for (double v : log_xi) {
    if (v <= log_observed) ++count;
  }
  return static_cast<double>(1 + count) /
         static_cast<double>(log_xi.size() + 1);
}

inline bool usable(Termination t) {
  return t == Termination::kConverged || t == Termination::kMaxIterations;
}

}  // namespace detail

/// Parametric bootstrap likelihood-ratio test. Fits null and alternative
/// models on d, simulates t.b_replicates datasets from the fitted null,
/// refits both models on each, and rejects when the observed ratio falls
/// strictly below the empirical alpha-quantile of the bootstrap ratios.
/// Replicates whose refits end with an Indefinite status (or whose
/// unrestricted fit is not estimable) are excluded with a logged warning;
/// more than 10% exclusions raise InsufficientReplicates. Results are a
/// deterministic function of (d, t, cfg), independent of `workers`.
inline TestResult bootstrap_test(const Dataset& d, const HypothesisTest& t,
                                 const SolverConfig& cfg = {},
                                 int workers = 1) {
  if (t.b_replicates < 1) {
    throw std::invalid_argument("bootstrap_test: need at least one replicate");
  }
  if (!(t.alpha > 0.0 && t.alpha < 1.0)) {
    throw std::invalid_argument("bootstrap_test: alpha must lie in (0, 1)");
  }
  const double n = static_cast<double>(d.n());

  Matrix beta_hat;
  Matrix sigma0;
  double log_obs = 0.0;
  if (t.kind == TestKind::kCovVsCor) {
    const SepCovFitReport null_fit = fit_sepcov(d, cfg);
    const FitReport alt_fit = fit_sepcor(d, cfg);
    if (!detail::usable(null_fit.termination) ||
        !detail::usable(alt_fit.termination)) {
      throw NotEstimable("bootstrap_test: model fits on the data failed");
    }
    beta_hat = null_fit.params.beta;
    sigma0 = null_fit.sigma();
    log_obs = -0.5 * n * (null_fit.nll - alt_fit.nll);
  } else {
    if (d.n() < d.p() + d.q()) {
      throw NotEstimable(
          "bootstrap_test: cor-vs-unrestricted needs n >= p + q");
    }
    const FitReport null_fit = fit_sepcor(d, cfg);
    const UnrestrictedFit alt_fit = fit_unrestricted(d);
    if (!detail::usable(null_fit.termination)) {
      throw NotEstimable("bootstrap_test: null model fit on the data failed");
    }
    beta_hat = null_fit.params.beta;
    sigma0 = null_fit.sigma();
    log_obs = -0.5 * n * (null_fit.nll - alt_fit.nll);
  }

  const std::uint64_t boot_seed = rng::derive_seed(t.seed, 0x626f6f74u);
  const std::size_t b = static_cast<std::size_t>(t.b_replicates);
  std::vector<double> raw(b, 0.0);
  std::vector<char> ok(b, 0);
  parallel_for(b, workers, [&](std::size_t j) {
    const Matrix yj = sample_mvn(beta_hat, sigma0, d.x(), boot_seed, j);
    const Dataset dj(yj, d.x(), d.r(), d.c());
    try {
      if (t.kind == TestKind::kCovVsCor) {
        const SepCovFitReport null_j = fit_sepcov(dj, cfg);
        const FitReport alt_j = fit_sepcor(dj, cfg);
        if (!detail::usable(null_j.termination) ||
            !detail::usable(alt_j.termination)) {
          return;
        }
        raw[j] = -0.5 * n * (null_j.nll - alt_j.nll);
      } else {
        const FitReport null_j = fit_sepcor(dj, cfg);
        if (!detail::usable(null_j.termination)) return;
        const UnrestrictedFit alt_j = fit_unrestricted(dj);
        raw[j] = -0.5 * n * (null_j.nll - alt_j.nll);
      }
      ok[j] = 1;
    } catch (const NotEstimable&) {
    } catch (const DegenerateScatter&) {
    }
  });

  TestResult result;
  result.b_requested = t.b_replicates;
  result.log_lr_observed = log_obs;
  result.lr_observed = std::exp(log_obs);
  for (std::size_t j = 0; j < b; ++j) {
    if (ok[j]) result.log_xi.push_back(raw[j]);
  }
  result.failed_replicates =
      t.b_replicates - static_cast<int>(result.log_xi.size());
  if (result.failed_replicates > 0) {
    log::warn("bootstrap_test: excluded " +
              std::to_string(result.failed_replicates) + " of " +
              std::to_string(t.b_replicates) + " replicates (failed refits)");
  }
  if (10 * result.failed_replicates > t.b_replicates) {
    throw InsufficientReplicates(
        "bootstrap_test: more than 10% of bootstrap refits failed (" +
        std::to_string(result.failed_replicates) + " of " +
        std::to_string(t.b_replicates) + ")");
  }
  result.xi.reserve(result.log_xi.size());
  for (double v : result.log_xi) result.xi.push_back(std::exp(v));
  result.p_value = detail::add_one_p_value(result.log_xi, log_obs);
  result.reject = detail::quantile_reject(result.log_xi, log_obs, t.alpha);
  return result;
}

}  // namespace sepcor
