#pragma once

#include <Eigen/Dense>

namespace siflow {

using Vector = Eigen::VectorXd;
using Matrix = Eigen::MatrixXd;

// Symmetric matrix functions go through a self-adjoint eigendecomposition;
// every matrix handled here is at most 10x10.
Matrix sym_sqrt(const Matrix& a);
Matrix sym_inv_sqrt(const Matrix& a);

double min_eigenvalue(const Matrix& symmetric);
double max_eigenvalue(const Matrix& symmetric);

// Largest singular value.
double op_norm(const Matrix& a);

// Frobenius norm of A - A^T.
double asymmetry(const Matrix& a);

bool commutes(const Matrix& a, const Matrix& b, double tol);

}  // namespace siflow
