#pragma once

#include <boost/math/distributions/chi_squared.hpp>

#include <array>
#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

#include "sepcor/csv.hpp"
#include "sepcor/inference.hpp"
#include "sepcor/matrix_kit.hpp"
#include "sepcor/model.hpp"
#include "sepcor/parallel.hpp"
#include "sepcor/rng.hpp"
#include "sepcor/solver.hpp"

namespace sepcor {

class InvalidRho : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// First-order autoregressive correlation: entry (i, j) = rho^|i-j|.
inline CorrelationFactor gen_ar1(Index dim, double rho) {
  if (!(std::abs(rho) < 1.0)) {
    throw InvalidRho("gen_ar1: need |rho| < 1");
  }
  Matrix m(dim, dim);
  for (Index i = 0; i < dim; ++i) {
    for (Index j = 0; j < dim; ++j) {
      m(i, j) = std::pow(rho, std::abs(static_cast<double>(i - j)));
    }
  }
  return CorrelationFactor(std::move(m));
}

/// Compound symmetric correlation: all off-diagonals equal rho. Positive
/// definite exactly when -1/(dim-1) < rho < 1.
inline CorrelationFactor gen_cs(Index dim, double rho) {
  if (!(rho < 1.0) || (dim > 1 && !(rho > -1.0 / static_cast<double>(dim - 1)))) {
    throw InvalidRho("gen_cs: rho outside the positive definite range");
  }
  if (dim == 1 && !(rho > -1.0)) {
    throw InvalidRho("gen_cs: rho outside the positive definite range");
  }
  Matrix m = Matrix::Constant(dim, dim, rho);
  m.diagonal().setOnes();
  return CorrelationFactor(std::move(m));
}

/// Wishart draw rescaled to unit diagonal: A = Z^T Z with Z a df x dim
/// standard normal block from the seeded stream, returned as
/// D^-1/2 A D^-1/2 with D = diag(A).
inline CorrelationFactor gen_rescaled_wishart(Index dim, Index df,
                                              std::uint64_t seed) {
  if (df < dim) {
    throw std::invalid_argument("gen_rescaled_wishart: need df >= dim");
  }
  std::vector<double> buf(static_cast<std::size_t>(df * dim));
  rng::fill_normal(rng::derive_seed(seed, 0x77697368u), /*stream=*/0,
                   /*row=*/0, buf);
  Eigen::Map<const Matrix> z(buf.data(), df, dim);
  Matrix a = z.transpose() * z;
  const Vector d = a.diagonal().cwiseSqrt().cwiseInverse();
  a = d.asDiagonal() * a * d.asDiagonal();
  a.diagonal().setOnes();
  return CorrelationFactor(std::move(a));
}

enum class WKind { kIdentity, kEvenlySpaced };

inline const char* to_string(WKind k) {
  switch (k) {
    case WKind::kIdentity: return "identity";
    case WKind::kEvenlySpaced: return "evenly_spaced";
  }
  return "unknown";
}

struct WSpec {
  WKind kind = WKind::kIdentity;
  double lo = 0.1;
  double hi = 10.0;

  static WSpec identity() { return WSpec{WKind::kIdentity, 0.1, 10.0}; }
  static WSpec evenly_spaced(double lo = 0.1, double hi = 10.0) {
    return WSpec{WKind::kEvenlySpaced, lo, hi};
  }
};

/// Marginal standard deviations in vec order: all ones, or inclusive linear
/// spacing from lo to hi.
inline StdDevVector gen_w(Index q, const WSpec& spec) {
  if (q < 1) {
    throw std::invalid_argument("gen_w: need q >= 1");
  }
  if (spec.kind == WKind::kIdentity) {
    return StdDevVector(Vector::Ones(q));
  }
  if (!(spec.lo > 0.0) || !(spec.hi >= spec.lo)) {
    throw std::invalid_argument("gen_w: need 0 < lo <= hi");
  }
  Vector w(q);
  if (q == 1) {
    w[0] = spec.lo;
  } else {
    const double step = (spec.hi - spec.lo) / static_cast<double>(q - 1);
    for (Index j = 0; j < q; ++j) {
      w[j] = spec.lo + static_cast<double>(j) * step;
    }
  }
  return StdDevVector(std::move(w));
}

/// Estimation error metric: spectral norm of the difference.
inline double spectral_error(const Matrix& est, const Matrix& truth) {
  if (est.rows() != truth.rows() || est.cols() != truth.cols()) {
    throw std::invalid_argument("spectral_error: dimension mismatch");
  }
  return spectral_norm(est - truth);
}

/// Recipe for one correlation factor of a scenario.
struct FactorSpec {
  enum class Kind { kAr1, kCs, kWishart };

  Kind kind = Kind::kAr1;
  double rho = 0.5;
  Index df = 0;
  std::uint64_t seed = 0;

  static FactorSpec ar1(double rho) { return {Kind::kAr1, rho, 0, 0}; }
  static FactorSpec cs(double rho) { return {Kind::kCs, rho, 0, 0}; }
  static FactorSpec wishart(Index df, std::uint64_t seed) {
    return {Kind::kWishart, 0.0, df, seed};
  }

  CorrelationFactor realize(Index dim) const {
    switch (kind) {
      case Kind::kAr1: return gen_ar1(dim, rho);
      case Kind::kCs: return gen_cs(dim, rho);
      case Kind::kWishart: return gen_rescaled_wishart(dim, df, seed);
    }
    throw std::logic_error("FactorSpec: unknown kind");
  }
};

struct Scenario {
  Index n = 0;
  Index r = 0;
  Index c = 0;
  FactorSpec u = FactorSpec::ar1(0.5);  // c x c factor
  FactorSpec v = FactorSpec::ar1(0.5);  // r x r factor
  WSpec w = WSpec::identity();
  int m = 200;
  std::uint64_t seed = 0;
};

/// Which tests run inside run_scenario and how.
struct TestSettings {
  bool naive = false;
  bool bootstrap = false;
  int b = 99;
  double alpha = 0.05;
};

/// The true covariance a scenario simulates from.
inline Matrix scenario_sigma(const Scenario& s) {
  const CorrelationFactor u = s.u.realize(s.c);
  const CorrelationFactor v = s.v.realize(s.r);
  const StdDevVector w = gen_w(s.r * s.c, s.w);
  return assemble_sigma(u.matrix(), v.matrix(), w.values());
}

/// Degrees of freedom of the naive chi-squared reference: the difference in
/// free covariance parameter counts between alternative and null.
inline int naive_lrt_df(TestKind kind, Index r, Index c) {
  if (kind == TestKind::kCovVsCor) {
    return covariance_param_count_sepcor(r, c) -
           covariance_param_count_sepcov(r, c);
  }
  return covariance_param_count_unrestricted(r * c) -
         covariance_param_count_sepcor(r, c);
}

namespace detail {

inline bool naive_reject_from_stat(double stat, int df, double alpha) {
  const boost::math::chi_squared dist(static_cast<double>(df));
  return stat > boost::math::quantile(dist, 1.0 - alpha);
}

}  // namespace detail

/// Classical likelihood ratio test against the asymptotic chi-squared
/// reference: rejects when n * (g_null - g_alt) exceeds the 1 - alpha
/// quantile with naive_lrt_df degrees of freedom.
inline bool naive_lrt(const Dataset& d, TestKind kind,
                      const SolverConfig& cfg = {}, double alpha = 0.05) {
  double g_null = 0.0;
  double g_alt = 0.0;
  if (kind == TestKind::kCovVsCor) {
    const SepCovFitReport null_fit = fit_sepcov(d, cfg);
    const FitReport alt_fit = fit_sepcor(d, cfg);
    if (null_fit.termination != Termination::kConverged ||
        alt_fit.termination != Termination::kConverged) {
      throw NotEstimable("naive_lrt: model fits did not converge");
    }
    g_null = null_fit.nll;
    g_alt = alt_fit.nll;
  } else {
    const FitReport null_fit = fit_sepcor(d, cfg);
    const UnrestrictedFit alt_fit = fit_unrestricted(d);
    if (null_fit.termination != Termination::kConverged) {
      throw NotEstimable("naive_lrt: null model fit did not converge");
    }
    g_null = null_fit.nll;
    g_alt = alt_fit.nll;
  }
  const double stat = static_cast<double>(d.n()) * (g_null - g_alt);
  return detail::naive_reject_from_stat(stat, naive_lrt_df(kind, d.r(), d.c()),
                                        alpha);
}

struct ErrStat {
  bool present = false;
  double mean = 0.0;
  double se = 0.0;
  int count = 0;
};

struct RateStat {
  bool present = false;
  double rate = 0.0;
  double se = 0.0;
  int count = 0;
};

struct ScenarioReport {
  Scenario scenario;
  ErrStat err_cor;
  ErrStat err_cov;
  ErrStat err_ur;
  RateStat rej_cov;    // naive test, covariance separability
  RateStat rej_cov_b;  // bootstrap test, covariance separability
  RateStat rej_cor;    // naive test, correlation separability
  RateStat rej_cor_b;  // bootstrap test, correlation separability
  std::array<int, 4> term_cor{};  // indexed by Termination
  std::array<int, 4> term_cov{};
};

namespace detail {

struct ReplicateOutcome {
  int term_cor = 0;
  int term_cov = 0;
  double err_cor = 0.0;
  double err_cov = 0.0;
  double err_ur = 0.0;
  bool has_err_cor = false;
  bool has_err_cov = false;
  bool has_err_ur = false;
  // -1 = not available, 0 = accept, 1 = reject
  int naive_cov = -1;
  int naive_cor = -1;
  int boot_cov = -1;
  int boot_cor = -1;
};

inline ErrStat aggregate_err(const std::vector<ReplicateOutcome>& slots,
                             double ReplicateOutcome::* value,
                             bool ReplicateOutcome::* flag) {
  ErrStat out;
  CompensatedSum sum;
  for (const auto& s : slots) {
    if (s.*flag) {
      sum.add(s.*value);
      ++out.count;
    }
  }
  if (out.count == 0) return out;
  out.present = true;
  out.mean = sum.value() / out.count;
  if (out.count > 1) {
    CompensatedSum sq;
    for (const auto& s : slots) {
      if (s.*flag) {
        const double dev = s.*value - out.mean;
        sq.add(dev * dev);
      }
    }
    out.se = std::sqrt(sq.value() / (out.count - 1)) /
             std::sqrt(static_cast<double>(out.count));
  }
  return out;
}

inline RateStat aggregate_rate(const std::vector<ReplicateOutcome>& slots,
                               int ReplicateOutcome::* value) {
  RateStat out;
  int rejects = 0;
  for (const auto& s : slots) {
    if (s.*value >= 0) {
      ++out.count;
      rejects += s.*value;
    }
  }
  if (out.count == 0) return out;
  out.present = true;
  out.rate = static_cast<double>(rejects) / out.count;
  out.se = std::sqrt(out.rate * (1.0 - out.rate) / out.count);
  return out;
}

}  // namespace detail

/// Monte-Carlo study of one scenario: for replicate j with stream
/// (scenario seed, j), data are drawn with beta = 0 and an intercept design;
/// the three estimators are fitted and compared to the true sigma in
/// spectral norm, and the requested tests are run. Error averages include
/// only replicates where the estimator converged; every termination is
/// counted in the histograms. Each rejection rate is computed over the
/// replicates where its test completed. The report is a deterministic
/// function of (s, cfg, tests), independent of `workers`.
inline ScenarioReport run_scenario(const Scenario& s,
                                   const SolverConfig& cfg = {},
                                   const TestSettings& tests = {},
                                   int workers = 1) {
  if (s.n < 2 || s.r < 1 || s.c < 1 || s.m < 1) {
    throw std::invalid_argument("run_scenario: invalid scenario dimensions");
  }
  const Index q = s.r * s.c;
  const Matrix sigma_true = scenario_sigma(s);
  const Matrix x = Matrix::Ones(s.n, 1);
  const Matrix beta0 = Matrix::Zero(1, q);
  const bool ur_possible = s.n - 1 > q;
  const bool cor_vs_ur_possible = s.n >= 1 + q;

  std::vector<detail::ReplicateOutcome> slots(static_cast<std::size_t>(s.m));
  parallel_for(slots.size(), workers, [&](std::size_t j) {
    detail::ReplicateOutcome& slot = slots[j];
    const Matrix y = sample_mvn(beta0, sigma_true, x, s.seed, j);
    const Dataset d(y, x, s.r, s.c);

    const FitReport cor = fit_sepcor(d, cfg);
    slot.term_cor = static_cast<int>(cor.termination);
    if (cor.termination == Termination::kConverged) {
      slot.err_cor = spectral_error(cor.sigma(), sigma_true);
      slot.has_err_cor = true;
    }

    const SepCovFitReport cov = fit_sepcov(d, cfg);
    slot.term_cov = static_cast<int>(cov.termination);
    if (cov.termination == Termination::kConverged) {
      slot.err_cov = spectral_error(cov.sigma(), sigma_true);
      slot.has_err_cov = true;
    }

    bool have_ur = false;
    double ur_nll = 0.0;
    if (ur_possible) {
      try {
        const UnrestrictedFit ur = fit_unrestricted(d);
        slot.err_ur = spectral_error(ur.sigma, sigma_true);
        slot.has_err_ur = true;
        ur_nll = ur.nll;
        have_ur = true;
      } catch (const NotEstimable&) {
      }
    }

    if (tests.naive) {
      if (slot.has_err_cor && slot.has_err_cov) {
        const double stat = static_cast<double>(s.n) * (cov.nll - cor.nll);
        slot.naive_cov = detail::naive_reject_from_stat(
                             stat, naive_lrt_df(TestKind::kCovVsCor, s.r, s.c),
                             tests.alpha)
                             ? 1
                             : 0;
      }
      if (slot.has_err_cor && have_ur) {
        const double stat = static_cast<double>(s.n) * (cor.nll - ur_nll);
        slot.naive_cor =
            detail::naive_reject_from_stat(
                stat, naive_lrt_df(TestKind::kCorVsUnrestricted, s.r, s.c),
                tests.alpha)
                ? 1
                : 0;
      }
    }

    if (tests.bootstrap) {
      HypothesisTest t;
      t.b_replicates = tests.b;
      t.alpha = tests.alpha;
      t.kind = TestKind::kCovVsCor;
      t.seed = rng::derive_seed(rng::derive_seed(s.seed, 0x73696d62u), j);
      try {
        slot.boot_cov = bootstrap_test(d, t, cfg, 1).reject ? 1 : 0;
      } catch (const NotEstimable&) {
      } catch (const InsufficientReplicates&) {
      }
      if (cor_vs_ur_possible) {
        t.kind = TestKind::kCorVsUnrestricted;
        t.seed = rng::derive_seed(rng::derive_seed(s.seed, 0x73696d61u), j);
        try {
          slot.boot_cor = bootstrap_test(d, t, cfg, 1).reject ? 1 : 0;
        } catch (const NotEstimable&) {
        } catch (const InsufficientReplicates&) {
        }
      }
    }
  });

  ScenarioReport rep;
  rep.scenario = s;
  for (const auto& slot : slots) {
    ++rep.term_cor[static_cast<std::size_t>(slot.term_cor)];
    ++rep.term_cov[static_cast<std::size_t>(slot.term_cov)];
  }
  rep.err_cor = detail::aggregate_err(
      slots, &detail::ReplicateOutcome::err_cor,
      &detail::ReplicateOutcome::has_err_cor);
  rep.err_cov = detail::aggregate_err(
      slots, &detail::ReplicateOutcome::err_cov,
      &detail::ReplicateOutcome::has_err_cov);
  rep.err_ur = detail::aggregate_err(slots, &detail::ReplicateOutcome::err_ur,
                                     &detail::ReplicateOutcome::has_err_ur);
  rep.rej_cov = detail::aggregate_rate(slots,
                                       &detail::ReplicateOutcome::naive_cov);
  rep.rej_cov_b =
      detail::aggregate_rate(slots, &detail::ReplicateOutcome::boot_cov);
  rep.rej_cor = detail::aggregate_rate(slots,
                                       &detail::ReplicateOutcome::naive_cor);
  rep.rej_cor_b =
      detail::aggregate_rate(slots, &detail::ReplicateOutcome::boot_cor);
  return rep;
}

inline std::string scenario_csv_header() {
  return "n,r,c,w_kind,err_cor,se_err_cor,err_cov,se_err_cov,err_ur,se_err_ur,"
         "rej_cov,rej_cov_b,rej_cor,rej_cor_b,"
         "term_converged,term_maxiter,term_indef_u,term_indef_v";
}

/// One CSV row per scenario. Absent statistics (non-estimable or not run)
/// are emitted as empty fields; termination counts are the sepcor fit's.
inline std::string scenario_csv_row(const ScenarioReport& rep) {
  std::string row;
  row += std::to_string(rep.scenario.n) + ',';
  row += std::to_string(rep.scenario.r) + ',';
  row += std::to_string(rep.scenario.c) + ',';
  row += to_string(rep.scenario.w.kind);
  auto add_err = [&row](const ErrStat& e) {
    row += ',';
    if (e.present) row += csv::format_double(e.mean);
    row += ',';
    if (e.present) row += csv::format_double(e.se);
  };
  add_err(rep.err_cor);
  add_err(rep.err_cov);
  add_err(rep.err_ur);
  auto add_rate = [&row](const RateStat& r) {
    row += ',';
    if (r.present) row += csv::format_double(r.rate);
  };
  add_rate(rep.rej_cov);
  add_rate(rep.rej_cov_b);
  add_rate(rep.rej_cor);
  add_rate(rep.rej_cor_b);
  for (int count : rep.term_cor) {
    row += ',' + std::to_string(count);
  }
  return row;
}

}  // namespace sepcor
