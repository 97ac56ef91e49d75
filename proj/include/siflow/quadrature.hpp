#pragma once

#include <functional>
#include <memory>
#include <vector>

#include "siflow/linalg.hpp"

namespace siflow {

using ScalarField = std::function<double(const Vector&)>;
using VectorField = std::function<Vector(const Vector&)>;
using MatrixField = std::function<Matrix(const Vector&)>;

/// Probabilists' Gauss-Hermite rule: sum_k w_k f(z_k) ~ E[f(Z)], Z ~ N(0,1).
/// Weights are stored as logs; tail weights underflow long before the nodes do.
class HermiteRule {
 public:
  explicit HermiteRule(int n);

  int size() const { return static_cast<int>(nodes_.size()); }
  const std::vector<double>& nodes() const { return nodes_; }
  const std::vector<double>& log_weights() const { return log_weights_; }

 private:
  std::vector<double> nodes_;
  std::vector<double> log_weights_;
};

/// Shared, lazily built rule for n nodes.
std::shared_ptr<const HermiteRule> hermite_rule(int n);

/// Nodes of a tensor-product rule with normalized weights (sum to one) and the
/// log of the total mass of the integrand.
struct WeightedNodes {
  Matrix points;   // d x N
  Vector weights;  // N, normalized
  double log_mass;

  Vector mean() const;
  Matrix covariance() const;
};

/// Integrates exp(log_f) over R^d by importance against N(center, scale scale^T)
/// with a tensor-product Hermite rule. Throws NumericError when the mass is not finite.
WeightedNodes integrate_exp(const ScalarField& log_f, const Vector& center, const Matrix& scale,
                            const HermiteRule& rule);

struct ConvexObjective {
  ScalarField value;
  VectorField grad;
  MatrixField hess;
};

struct MinimizeResult {
  Vector argmin;
  Matrix hess;  // Hessian at argmin
  int iterations;
  bool converged;
};

/// Damped Newton with Armijo backtracking. Stops when the gradient norm drops
/// below grad_tol or the step stalls at machine precision.
MinimizeResult minimize_convex(const ConvexObjective& f, Vector start, double grad_tol = 1e-8,
                               int max_iter = 200);

}  // namespace siflow
