#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <vector>

#include "sepcor/inference.hpp"
#include "sepcor/model.hpp"
#include "sepcor/rng.hpp"
#include "sepcor/simulation.hpp"
#include "support/test_oracles.hpp"

using namespace sepcor;

namespace {

Matrix random_matrix(Index rows, Index cols, std::uint64_t seed) {
  std::vector<double> buf(static_cast<std::size_t>(rows * cols));
  rng::fill_normal(seed, 0, 0, buf);
  return Eigen::Map<const Matrix>(buf.data(), rows, cols);
}

Matrix random_spd(Index dim, std::uint64_t seed, double shift = 0.5) {
  const Matrix b = random_matrix(dim, dim, seed);
  return symmetrized(b.transpose() * b) + shift * Matrix::Identity(dim, dim);
}

Dataset random_dataset(Index n, Index r, Index c, std::uint64_t seed) {
  return Dataset::with_intercept(random_matrix(n, r * c, seed), r, c);
}

RelaxedParams random_relaxed(Index r, Index c, std::uint64_t seed) {
  Vector w = random_matrix(r * c, 1, seed + 2).col(0).cwiseAbs();
  w.array() += 0.2;
  return RelaxedParams{SpdMatrix(random_spd(c, seed)),
                       SpdMatrix(random_spd(r, seed + 1)),
                       StdDevVector(std::move(w))};
}

}  // namespace

TEST_CASE("value types validate their invariants") {
  CHECK_THROWS_AS(StdDevVector((Vector(2) << 1.0, 0.0).finished()),
                  std::invalid_argument);
  CHECK_THROWS_AS(StdDevVector((Vector(1) << -1.0).finished()),
                  std::invalid_argument);

  CHECK(CorrelationFactor::identity(3).matrix().isApprox(Matrix::Identity(3, 3)));
  Matrix bad_diag(2, 2);
  bad_diag << 1.0, 0.2, 0.2, 1.5;
  CHECK_THROWS_AS(CorrelationFactor(bad_diag), std::invalid_argument);
  Matrix bad_off(2, 2);
  bad_off << 1.0, 1.0, 1.0, 1.0;
  CHECK_THROWS_AS(CorrelationFactor(bad_off), std::invalid_argument);
  Matrix near_singular(2, 2);
  near_singular << 1.0, 1.0 - 1e-15, 1.0 - 1e-15, 1.0;
  CHECK_THROWS_AS(CorrelationFactor(near_singular), NotPositiveDefinite);
}

TEST_CASE("dataset validation reports the layout mismatch") {
  const Matrix y = random_matrix(10, 5, 1);
  CHECK_THROWS_WITH(Dataset::with_intercept(y, 3, 2),
                    Catch::Matchers::ContainsSubstring("r*c=6 != q=5"));
  CHECK_THROWS_AS(Dataset::with_intercept(random_matrix(1, 4, 2), 2, 2),
                  std::invalid_argument);
  Matrix with_nan = random_matrix(6, 4, 3);
  with_nan(2, 1) = std::nan("");
  CHECK_THROWS_AS(Dataset::with_intercept(with_nan, 2, 2),
                  std::invalid_argument);
  Matrix degenerate_x(6, 2);
  degenerate_x.col(0).setOnes();
  degenerate_x.col(1).setOnes();
  CHECK_THROWS_AS(Dataset(random_matrix(6, 4, 4), degenerate_x, 2, 2),
                  SingularDesign);
}

TEST_CASE("least squares beta matches column means and recovers exactly") {
  const Dataset d = random_dataset(20, 2, 2, 5);
  const Matrix beta = least_squares_beta(d);
  CHECK(beta.rows() == 1);
  CHECK((beta.row(0).transpose() -
         d.y().colwise().mean().transpose()).cwiseAbs().maxCoeff() <= 1e-12);

  Matrix x(12, 2);
  x.col(0).setOnes();
  x.col(1) = random_matrix(12, 1, 6).col(0);
  Matrix b_true(2, 4);
  b_true << 1.0, -2.0, 0.5, 3.0, 0.25, 1.0, -1.0, 2.0;
  const Dataset noiseless(x * b_true, x, 2, 2);
  CHECK((least_squares_beta(noiseless) - b_true).cwiseAbs().maxCoeff() <=
        1e-10);
}

TEST_CASE("least squares beta matches the normal equations oracle") {
  Matrix x(50, 2);
  x.col(0).setOnes();
  x.col(1) = random_matrix(50, 1, 7).col(0);
  const Matrix y = random_matrix(50, 4, 8);
  const Dataset d(y, x, 2, 2);
  const Matrix expected = oracle::ls_normal_equations(x, y);
  CHECK((least_squares_beta(d) - expected).cwiseAbs().maxCoeff() <= 1e-9);
}

TEST_CASE("residual scatter hand cases and brute oracle") {
  Matrix x(12, 2);
  x.col(0).setOnes();
  x.col(1) = random_matrix(12, 1, 9).col(0);
  Matrix b_true = random_matrix(2, 4, 10);
  const Dataset noiseless(x * b_true, x, 2, 2);
  CHECK(residual_scatter(noiseless, least_squares_beta(noiseless))
            .cwiseAbs()
            .maxCoeff() <= 1e-18);

  Vector v(4);
  v << 1.0, -2.0, 0.5, 3.0;
  Matrix y(2, 4);
  y.row(0) = v.transpose();
  y.row(1) = -v.transpose();
  const Dataset flip = Dataset::with_intercept(y, 2, 2);
  const Matrix s = residual_scatter(flip, least_squares_beta(flip));
  CHECK((s - v * v.transpose()).cwiseAbs().maxCoeff() <= 1e-14);

  const Dataset d = random_dataset(30, 2, 3, 11);
  const Matrix beta = least_squares_beta(d);
  CHECK((residual_scatter(d, beta) -
         oracle::residual_scatter_brute(d.y(), d.x(), beta))
            .cwiseAbs()
            .maxCoeff() <= 1e-12);
}

TEST_CASE("assemble sigma matches the entrywise formula") {
  CHECK(assemble_sigma(Matrix::Identity(2, 2), Matrix::Identity(3, 3),
                       Vector::Ones(6))
            .isApprox(Matrix::Identity(6, 6)));
  const Matrix u = gen_ar1(2, 0.4).matrix();
  const Matrix v = gen_ar1(2, -0.3).matrix();
  CHECK(assemble_sigma(u, v, Vector(2.0 * Vector::Ones(4)))
            .isApprox(Matrix(4.0 * kronecker(u, v)), 1e-14));
  const Vector w = (Vector(4) << 0.5, 1.5, 2.0, 0.25).finished();
  CHECK((assemble_sigma(u, v, w) - oracle::assemble_sigma_brute(u, v, w))
            .cwiseAbs()
            .maxCoeff() <= 1e-12);
}

TEST_CASE("nll_g on exactly crafted scatter") {
  // y = sqrt(n/2) [I; -I] has column means 0 and scatter exactly I.
  const Index q = 4, n = 2 * q;
  Matrix y(n, q);
  y.topRows(q) = std::sqrt(static_cast<double>(n) / 2.0) *
                 Matrix::Identity(q, q);
  y.bottomRows(q) = -y.topRows(q);
  const Dataset d = Dataset::with_intercept(y, 2, 2);
  const Matrix beta0 = Matrix::Zero(1, q);
  CHECK(residual_scatter(d, beta0).isApprox(Matrix::Identity(q, q), 1e-14));
  const Matrix id2 = Matrix::Identity(2, 2);
  CHECK(nll_g(d, beta0, id2, id2, Vector::Ones(q)) ==
        Catch::Approx(static_cast<double>(q)).margin(1e-12));
  CHECK(nll_g(d, beta0, id2, id2, Vector(2.0 * Vector::Ones(q))) ==
        Catch::Approx(q * std::log(4.0) + q / 4.0).margin(1e-12));
}

TEST_CASE("nll_g agrees with the dense oracle") {
  const Dataset d = random_dataset(40, 2, 3, 12);
  const Matrix beta = least_squares_beta(d);
  const Matrix u = random_spd(3, 13);
  const Matrix v = random_spd(2, 14);
  Vector w = random_matrix(6, 1, 15).col(0).cwiseAbs();
  w.array() += 0.3;
  const Matrix s = oracle::residual_scatter_brute(d.y(), d.x(), beta);
  const Matrix sigma = oracle::assemble_sigma_brute(u, v, w);
  CHECK(nll_g(d, beta, u, v, w) ==
        Catch::Approx(oracle::dense_nll(s, sigma)).margin(1e-9));
  CHECK(nll_g_sigma(d, beta, sigma) ==
        Catch::Approx(oracle::dense_nll(s, sigma)).margin(1e-9));
}

TEST_CASE("nll_g1 identities") {
  const Dataset d = random_dataset(25, 2, 2, 16);
  const Matrix id2 = Matrix::Identity(2, 2);
  const Matrix s = residual_scatter(d, least_squares_beta(d));
  CHECK(nll_g1(d, id2, id2, Vector::Ones(4)) ==
        Catch::Approx(s.trace()).margin(1e-10));

  const Matrix u = random_spd(2, 17);
  const Matrix v = random_spd(2, 18);
  Vector w = random_matrix(4, 1, 19).col(0).cwiseAbs();
  w.array() += 0.3;
  CHECK(nll_g1(d, u, v, w) ==
        Catch::Approx(nll_g(d, least_squares_beta(d), u, v, w)).margin(1e-10));

  // Doubling every scale adds 2q log 2 and quarters the trace term.
  const double logdet_part = 2.0 * w.array().log().sum() +
                             2.0 * logdet_spd(u) + 2.0 * logdet_spd(v);
  const double g = nll_g1(d, u, v, w);
  const double trace_part = g - logdet_part;
  CHECK(nll_g1(d, u, v, Vector(2.0 * w)) ==
        Catch::Approx(logdet_part + 8.0 * std::log(2.0) + trace_part / 4.0)
            .margin(1e-10));
}

TEST_CASE("identify fixed point and scalar absorption") {
  const Matrix u0 = gen_ar1(2, 0.5).matrix();
  const Matrix v0 = gen_ar1(3, -0.25).matrix();
  const RelaxedParams already{SpdMatrix(u0), SpdMatrix(v0),
                              StdDevVector((Vector(6) << 1, 2, 3, 4, 5, 6)
                                               .finished())};
  const IdentifiedFactors same = identify(already);
  CHECK(same.u.matrix().isApprox(u0, 1e-15));
  CHECK(same.v.matrix().isApprox(v0, 1e-15));
  CHECK((same.w.values() - already.w.values()).cwiseAbs().maxCoeff() == 0.0);

  const RelaxedParams scaled{SpdMatrix(Matrix(4.0 * u0)), SpdMatrix(v0),
                             StdDevVector(Vector::Ones(6))};
  const IdentifiedFactors out = identify(scaled);
  CHECK(out.u.matrix().isApprox(u0, 1e-14));
  CHECK(out.v.matrix().isApprox(v0, 1e-14));
  CHECK((out.w.values() - Vector(2.0 * Vector::Ones(6))).cwiseAbs().maxCoeff() <=
        1e-14);
}

TEST_CASE("identify preserves sigma and is idempotent") {
  for (std::uint64_t seed = 0; seed < 50; ++seed) {
    const RelaxedParams y = random_relaxed(3, 2, 1000 + seed * 7);
    const Matrix before =
        assemble_sigma(y.u.matrix(), y.v.matrix(), y.w.values());
    const IdentifiedFactors id = identify(y);
    const Matrix after =
        assemble_sigma(id.u.matrix(), id.v.matrix(), id.w.values());
    const double rel = ((after - before).cwiseAbs().array() /
                        (before.cwiseAbs().array() + 1e-300))
                           .maxCoeff();
    CHECK(rel <= 1e-12);

    const IdentifiedFactors twice = identify(RelaxedParams{
        SpdMatrix(id.u.matrix()), SpdMatrix(id.v.matrix()),
        StdDevVector(id.w.values())});
    CHECK((twice.u.matrix() - id.u.matrix()).cwiseAbs().maxCoeff() <= 1e-15);
    CHECK((twice.v.matrix() - id.v.matrix()).cwiseAbs().maxCoeff() <= 1e-15);
    CHECK((twice.w.values() - id.w.values()).cwiseAbs().maxCoeff() <= 1e-15);
  }
}

TEST_CASE("objective is invariant under identification") {
  const Dataset d = random_dataset(30, 2, 3, 20);
  const RelaxedParams y = random_relaxed(2, 3, 21);
  const IdentifiedFactors id = identify(y);
  CHECK(nll_g1(d, y.u.matrix(), y.v.matrix(), y.w.values()) ==
        Catch::Approx(nll_g1(d, id.u.matrix(), id.v.matrix(), id.w.values()))
            .margin(1e-10));
}

TEST_CASE("standardized residuals in closed form cases") {
  const Dataset d = random_dataset(10, 2, 2, 22);
  SepCorParams identity_fit{Matrix::Zero(1, 4), CorrelationFactor::identity(2),
                            CorrelationFactor::identity(2),
                            StdDevVector(Vector::Ones(4))};
  CHECK(standardized_residuals(d, identity_fit).isApprox(d.y(), 1e-12));
  SepCorParams scaled_fit{Matrix::Zero(1, 4), CorrelationFactor::identity(2),
                          CorrelationFactor::identity(2),
                          StdDevVector(Vector(2.0 * Vector::Ones(4)))};
  CHECK(standardized_residuals(d, scaled_fit)
            .isApprox(Matrix(d.y() / 2.0), 1e-12));
}

TEST_CASE("standardized residuals whiten synthetic data") {
  const Index n = 2000, q = 4;
  const Matrix u = gen_ar1(2, 0.6).matrix();
  const Matrix v = gen_ar1(2, 0.3).matrix();
  const Vector w = (Vector(4) << 1.0, 2.0, 0.5, 1.5).finished();
  const Matrix sigma = assemble_sigma(u, v, w);
  const Matrix x = Matrix::Ones(n, 1);
  const Matrix y = sample_mvn(Matrix::Zero(1, q), sigma, x, 23, 0);
  const Dataset d(y, x, 2, 2);
  SepCorParams truth{least_squares_beta(d), CorrelationFactor(u),
                     CorrelationFactor(v), StdDevVector(w)};
  const Matrix res = standardized_residuals(d, truth);
  const Matrix cov = res.transpose() * res / static_cast<double>(n);
  CHECK(spectral_norm(Matrix(cov - Matrix::Identity(q, q))) <= 0.15);
}

TEST_CASE("covariance parameter counts") {
  CHECK(covariance_param_count_sepcor(5, 5) -
            covariance_param_count_sepcov(5, 5) == 16);
  CHECK(covariance_param_count_sepcor(5, 15) -
            covariance_param_count_sepcov(5, 15) == 56);
  CHECK(covariance_param_count_sepcor(15, 15) -
            covariance_param_count_sepcov(15, 15) == 196);
  CHECK(covariance_param_count_sepcor(5, 5) == 10 + 10 + 25);
  CHECK(covariance_param_count_sepcov(5, 5) == 10 + 10 + 9);
  CHECK(covariance_param_count_unrestricted(25) == 325);
}
