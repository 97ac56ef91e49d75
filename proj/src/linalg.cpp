#include "siflow/linalg.hpp"

#include <cmath>

#include "siflow/error.hpp"

namespace siflow {

namespace {

template <typename F>
Matrix spectral_apply(const Matrix& a, F f) {
  Eigen::SelfAdjointEigenSolver<Matrix> es(0.5 * (a + a.transpose()));
  if (es.info() != Eigen::Success) throw NumericError("eigendecomposition failed");
  Vector d = es.eigenvalues().unaryExpr(f);
  return es.eigenvectors() * d.asDiagonal() * es.eigenvectors().transpose();
}

}  // namespace

Matrix sym_sqrt(const Matrix& a) {
  return spectral_apply(a, [](double x) {
    if (x < 0.0) {
      if (x > -1e-14) return 0.0;
      throw NumericError("sym_sqrt: matrix is not positive semidefinite");
    }
    return std::sqrt(x);
  });
}

Matrix sym_inv_sqrt(const Matrix& a) {
  return spectral_apply(a, [](double x) {
    if (!(x > 0.0)) throw NumericError("sym_inv_sqrt: matrix is not positive definite");
    return 1.0 / std::sqrt(x);
  });
}

double min_eigenvalue(const Matrix& symmetric) {
  Eigen::SelfAdjointEigenSolver<Matrix> es(symmetric, Eigen::EigenvaluesOnly);
  return es.eigenvalues().minCoeff();
}

double max_eigenvalue(const Matrix& symmetric) {
  Eigen::SelfAdjointEigenSolver<Matrix> es(symmetric, Eigen::EigenvaluesOnly);
  return es.eigenvalues().maxCoeff();
}

double op_norm(const Matrix& a) {
  if (a.size() == 1) return std::abs(a(0, 0));
  Eigen::JacobiSVD<Matrix> svd(a);
  return svd.singularValues()(0);
}

double asymmetry(const Matrix& a) { return (a - a.transpose()).norm(); }

bool commutes(const Matrix& a, const Matrix& b, double tol) {
  return (a * b - b * a).norm() <= tol;
}

}  // namespace siflow
