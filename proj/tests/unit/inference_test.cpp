#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <vector>

#include "sepcor/inference.hpp"
#include "sepcor/rng.hpp"
#include "sepcor/simulation.hpp"
#include "sepcor/solver.hpp"

using namespace sepcor;

namespace {

Dataset separable_dataset(Index n, Index r, Index c, double rho_u,
                          double rho_v, const WSpec& wspec,
                          std::uint64_t seed) {
  const Matrix sigma = assemble_sigma(gen_ar1(c, rho_u).matrix(),
                                      gen_ar1(r, rho_v).matrix(),
                                      gen_w(r * c, wspec).values());
  const Matrix x = Matrix::Ones(n, 1);
  return Dataset(sample_mvn(Matrix::Zero(1, r * c), sigma, x, seed, 0), x, r,
                 c);
}

bool same_result(const TestResult& a, const TestResult& b) {
  return a.lr_observed == b.lr_observed &&
         a.log_lr_observed == b.log_lr_observed && a.xi == b.xi &&
         a.log_xi == b.log_xi && a.p_value == b.p_value &&
         a.reject == b.reject && a.b_requested == b.b_requested &&
         a.failed_replicates == b.failed_replicates;
}

}  // namespace

TEST_CASE("sample_mvn reproduces the target covariance") {
  const Index n = 100000, q = 4;
  const Matrix x = Matrix::Ones(n, 1);
  const Matrix y = sample_mvn(Matrix::Zero(1, q), Matrix::Identity(q, q), x,
                              71, 0);
  const Eigen::RowVectorXd mean = y.colwise().mean();
  const Matrix centered = y.rowwise() - mean;
  const Matrix cov = centered.transpose() * centered / static_cast<double>(n);
  CHECK(spectral_norm(Matrix(cov - Matrix::Identity(q, q))) <= 0.05);
}

TEST_CASE("sample_mvn is deterministic and stream-separated") {
  const Matrix x = Matrix::Ones(50, 1);
  const Matrix sigma = gen_ar1(3, 0.5).matrix();
  const Matrix beta = Matrix::Zero(1, 3);
  CHECK(sample_mvn(beta, sigma, x, 7, 2) == sample_mvn(beta, sigma, x, 7, 2));
  CHECK(sample_mvn(beta, sigma, x, 7, 2) != sample_mvn(beta, sigma, x, 7, 3));
  CHECK(sample_mvn(beta, sigma, x, 7, 2) != sample_mvn(beta, sigma, x, 8, 2));
}

TEST_CASE("sample_mvn mean structure follows beta") {
  const Index n = 100000;
  Matrix beta(1, 2);
  beta << 1.5, -2.0;
  const Matrix x = Matrix::Ones(n, 1);
  const Matrix y = sample_mvn(beta, Matrix::Identity(2, 2), x, 72, 0);
  CHECK(y.col(0).mean() == Catch::Approx(1.5).margin(0.05));
  CHECK(y.col(1).mean() == Catch::Approx(-2.0).margin(0.05));
}

TEST_CASE("sample_mvn input validation") {
  const Matrix x = Matrix::Ones(5, 1);
  CHECK_THROWS_AS(
      sample_mvn(Matrix::Zero(2, 3), Matrix::Identity(3, 3), x, 1, 0),
      std::invalid_argument);
  CHECK_THROWS_AS(sample_mvn(Matrix::Zero(1, 2),
                             (Matrix(2, 2) << 1, 2, 2, 1).finished(), x, 1, 0),
                  NotPositiveDefinite);
}

TEST_CASE("likelihood_ratio identities") {
  const Dataset d = separable_dataset(30, 2, 2, 0.4, 0.3,
                                      WSpec::evenly_spaced(0.5, 2.0), 73);
  const Matrix beta = least_squares_beta(d);
  const Matrix sigma = assemble_sigma(gen_ar1(2, 0.4).matrix(),
                                      gen_ar1(2, 0.3).matrix(),
                                      Vector::Ones(4));
  CHECK(likelihood_ratio(d, sigma, sigma, beta) == 1.0);

  const SepCovFitReport cov = fit_sepcov(d);
  const FitReport cor = fit_sepcor(d);
  CHECK(likelihood_ratio(d, cov.sigma(), cor.sigma(), beta) <= 1.0 + 1e-10);
}

TEST_CASE("likelihood_ratio matches the scalar closed form") {
  Matrix y(3, 1);
  y << 1.0, 2.0, 4.0;
  const Dataset d = Dataset::with_intercept(y, 1, 1);
  const Matrix beta = least_squares_beta(d);
  REQUIRE(beta(0, 0) == Catch::Approx(7.0 / 3.0).margin(1e-15));
  const double s2 = 14.0 / 9.0;  // mean squared residual
  const Matrix sigma0 = Matrix::Identity(1, 1);
  const Matrix sigma_a = Matrix::Constant(1, 1, s2);
  const double expected = std::pow(s2, 1.5) * std::exp(-1.5 * (s2 - 1.0));
  CHECK(likelihood_ratio(d, sigma0, sigma_a, beta) ==
        Catch::Approx(expected).margin(1e-10));
  CHECK(log_likelihood_ratio(d, sigma0, sigma_a, beta) ==
        Catch::Approx(std::log(expected)).margin(1e-10));
}

TEST_CASE("quantile rank uses the ceil(alpha b) order statistic") {
  CHECK(detail::quantile_rank(0.25, 4) == 1);
  CHECK(detail::quantile_rank(0.05, 99) == 5);
  CHECK(detail::quantile_rank(0.05, 100) == 5);  // 0.05*100 rounds up in fp
  CHECK(detail::quantile_rank(0.5, 10) == 5);
  CHECK(detail::quantile_rank(1e-9, 10) == 1);
  CHECK(detail::quantile_rank(0.999, 10) == 10);
}

TEST_CASE("quantile decision mechanics") {
  const std::vector<double> xi = {0.1, 0.2, 0.3, 0.4};
  std::vector<double> log_xi;
  for (double v : xi) log_xi.push_back(std::log(v));

  // alpha-quantile at B = 4, alpha = 0.25 is the smallest entry, 0.1.
  CHECK(detail::quantile_reject(log_xi, std::log(0.05), 0.25));
  CHECK_FALSE(detail::quantile_reject(log_xi, std::log(0.15), 0.25));
  CHECK_FALSE(detail::quantile_reject(log_xi, std::log(0.1), 0.25));  // strict

  // Rejection is monotone in alpha.
  CHECK(detail::quantile_reject(log_xi, std::log(0.15), 0.5));

  CHECK(detail::add_one_p_value(log_xi, std::log(0.05)) ==
        Catch::Approx(0.2).margin(1e-15));
  CHECK(detail::add_one_p_value(log_xi, std::log(0.25)) ==
        Catch::Approx(0.6).margin(1e-15));
  CHECK_THROWS_AS(detail::quantile_reject({}, 0.0, 0.25),
                  std::invalid_argument);
}

TEST_CASE("bootstrap_test is deterministic and worker-invariant") {
  const Dataset d = separable_dataset(40, 2, 2, 0.5, 0.25,
                                      WSpec::evenly_spaced(0.5, 2.0), 74);
  HypothesisTest t;
  t.kind = TestKind::kCovVsCor;
  t.b_replicates = 10;
  t.alpha = 0.2;
  t.seed = 99;
  const TestResult a = bootstrap_test(d, t, SolverConfig{}, 1);
  const TestResult b = bootstrap_test(d, t, SolverConfig{}, 1);
  const TestResult c = bootstrap_test(d, t, SolverConfig{}, 3);
  CHECK(same_result(a, b));
  CHECK(same_result(a, c));
}

TEST_CASE("bootstrap_test replicate ratios stay nested") {
  const Dataset d = separable_dataset(40, 2, 2, 0.5, 0.25,
                                      WSpec::evenly_spaced(0.5, 2.0), 75);
  HypothesisTest t;
  t.kind = TestKind::kCovVsCor;
  t.b_replicates = 12;
  t.seed = 5;
  const TestResult res = bootstrap_test(d, t);
  CHECK(res.b_requested == 12);
  CHECK(res.failed_replicates == 0);
  CHECK(res.b_effective() == 12);
  CHECK(res.lr_observed <= 1.0 + 1e-10);
  for (double v : res.xi) CHECK(v <= 1.0 + 1e-10);
  for (std::size_t j = 0; j < res.xi.size(); ++j) {
    CHECK(res.xi[j] == Catch::Approx(std::exp(res.log_xi[j])).margin(1e-15));
  }
  CHECK(res.p_value >= 0.0);
  CHECK(res.p_value <= 1.0);
}

TEST_CASE("bootstrap_test against the unrestricted alternative") {
  const Dataset d = separable_dataset(40, 2, 2, 0.5, 0.25,
                                      WSpec::evenly_spaced(0.5, 2.0), 76);
  HypothesisTest t;
  t.kind = TestKind::kCorVsUnrestricted;
  t.b_replicates = 8;
  t.seed = 6;
  const TestResult res = bootstrap_test(d, t);
  CHECK(res.failed_replicates == 0);
  CHECK(res.lr_observed <= 1.0 + 1e-10);
  for (double v : res.xi) CHECK(v <= 1.0 + 1e-10);
}

TEST_CASE("bootstrap_test guards") {
  const Dataset d = separable_dataset(40, 2, 2, 0.4, 0.2, WSpec::identity(),
                                      77);
  HypothesisTest bad = {TestKind::kCovVsCor, 0, 0.05, 1};
  CHECK_THROWS_AS(bootstrap_test(d, bad), std::invalid_argument);
  bad = {TestKind::kCovVsCor, 10, 0.0, 1};
  CHECK_THROWS_AS(bootstrap_test(d, bad), std::invalid_argument);
  bad = {TestKind::kCovVsCor, 10, 1.0, 1};
  CHECK_THROWS_AS(bootstrap_test(d, bad), std::invalid_argument);

  // n < p + q makes the unrestricted alternative unbounded.
  const Dataset tiny = separable_dataset(4, 2, 2, 0.4, 0.2, WSpec::identity(),
                                         78);
  HypothesisTest t = {TestKind::kCorVsUnrestricted, 5, 0.05, 1};
  CHECK_THROWS_AS(bootstrap_test(tiny, t), NotEstimable);
}
