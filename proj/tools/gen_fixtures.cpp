// Regenerates the committed CSV fixtures under tests/data/. Deterministic:
// every fixture is a pure function of the fixed seeds below, so rerunning
// this tool must reproduce the committed files byte for byte.

#include <iostream>
#include <string>
#include <vector>

#include "sepcor/sepcor.hpp"

namespace {

using namespace sepcor;

void write(const std::string& dir, const std::string& name, const Matrix& m) {
  const std::string path = dir + "/" + name;
  csv::write_matrix_file(path, m);
  std::cout << path << ": " << m.rows() << " x " << m.cols() << "\n";
}

}  // namespace

int main(int argc, char** argv) {
  if (argc != 2) {
    std::cerr << "usage: gen_fixtures <output-dir>\n";
    return 1;
  }
  const std::string dir = argv[1];

  // identity_y: n = 80, r = c = 2, true covariance I_4, intercept design.
  {
    const Index n = 80, r = 2, c = 2, q = r * c;
    const Matrix x = Matrix::Ones(n, 1);
    const Matrix beta = Matrix::Zero(1, q);
    write(dir, "identity_y.csv", sample_mvn(beta, Matrix::Identity(q, q), x,
                                            /*seed=*/11, /*stream=*/0));
  }

  // sepcov_y: n = 60, r = c = 3, true covariance 1.5*AR1(0.6) kron AR1(0.3).
  {
    const Index n = 60, r = 3, c = 3, q = r * c;
    const Matrix u_tilde = 1.5 * gen_ar1(c, 0.6).matrix();
    const Matrix v_tilde = gen_ar1(r, 0.3).matrix();
    const Matrix x = Matrix::Ones(n, 1);
    const Matrix beta = Matrix::Zero(1, q);
    write(dir, "sepcov_y.csv",
          sample_mvn(beta, kronecker(u_tilde, v_tilde), x, 22, 0));
  }

  // spaced_y: n = 320, r = c = 5, AR1(1/2) factors, evenly spaced scales.
  {
    const Index n = 320, r = 5, c = 5, q = r * c;
    const Matrix u = gen_ar1(c, 0.5).matrix();
    const Matrix v = gen_ar1(r, 0.5).matrix();
    const Vector w = gen_w(q, WSpec::evenly_spaced()).values();
    const Matrix x = Matrix::Ones(n, 1);
    const Matrix beta = Matrix::Zero(1, q);
    write(dir, "spaced_y.csv",
          sample_mvn(beta, assemble_sigma(u, v, w), x, 33, 0));
  }

  // design_x / design_y: n = 80, p = 2 (intercept plus a covariate),
  // r = c = 2, nonzero coefficients, AR1 factors, spaced scales.
  {
    const Index n = 80, r = 2, c = 2, q = r * c;
    Matrix x(n, 2);
    x.col(0).setOnes();
    for (Index i = 0; i < n; ++i) {
      double z[2];
      rng::fill_normal(rng::derive_seed(44, 0x78u), 0, i, z);
      x(i, 1) = z[0];
    }
    Matrix beta(2, q);
    beta << 1.0, -0.5, 0.25, 2.0,
            0.5, 1.0, -1.0, 0.75;
    const Matrix u = gen_ar1(c, 0.4).matrix();
    const Matrix v = gen_ar1(r, 0.7).matrix();
    const Vector w = gen_w(q, WSpec::evenly_spaced(0.5, 2.0)).values();
    write(dir, "design_x.csv", x);
    write(dir, "design_y.csv",
          sample_mvn(beta, assemble_sigma(u, v, w), x, 44, 0));
  }

  // small5_y: 5 columns, used to exercise the r*c != q input error path.
  {
    const Index n = 10, q = 5;
    const Matrix x = Matrix::Ones(n, 1);
    const Matrix beta = Matrix::Zero(1, q);
    write(dir, "small5_y.csv",
          sample_mvn(beta, Matrix::Identity(q, q), x, 55, 0));
  }

  // indef_y: n = 4 with r = 2, c = 9, structurally too few observations for
  // the 9 x 9 factor, so the solver stops on an indefinite iterate.
  {
    const Index n = 4, r = 2, c = 9, q = r * c;
    const Matrix u = gen_ar1(c, 0.5).matrix();
    const Matrix v = gen_ar1(r, 0.5).matrix();
    const Matrix x = Matrix::Ones(n, 1);
    const Matrix beta = Matrix::Zero(1, q);
    write(dir, "indef_y.csv",
          sample_mvn(beta, assemble_sigma(u, v, Vector::Ones(q)), x, 66, 0));
  }

  return 0;
}
