#pragma once

#include <cstdint>
#include <limits>
#include <string>
#include <string_view>
#include <variant>
#include <vector>

#include "siflow/linalg.hpp"
#include "siflow/quadrature.hpp"
#include "siflow/schedule.hpp"

namespace siflow {

/// Unnormalized density proportional to exp(-V) with declared two-sided
/// Hessian bounds kappa I <= hess V <= eta I.
struct PotentialDensity {
  std::string name;
  int dim = 1;
  ScalarField potential;
  VectorField grad;
  MatrixField hess;
  double kappa = 0.0;
  double eta = std::numeric_limits<double>::infinity();
};

class GaussianMeasure {
 public:
  /// Throws ParameterError unless cov is symmetric (1e-12) and positive definite.
  GaussianMeasure(Vector mean, Matrix cov);

  static GaussianMeasure standard(int dim);
  static GaussianMeasure isotropic(int dim, double variance);

  int dim() const { return static_cast<int>(mean_.size()); }
  const Vector& mean() const { return mean_; }
  const Matrix& cov() const { return cov_; }
  const Matrix& precision() const { return precision_; }
  const Matrix& cholesky() const { return chol_; }

  /// Log-concavity constant 1/lambda_max(cov) and log-convexity constant 1/lambda_min(cov).
  double kappa() const;
  double eta() const;

  bool is_standard(double tol = 0.0) const;

  PotentialDensity to_potential() const;

 private:
  Vector mean_;
  Matrix cov_;
  Matrix precision_;
  Matrix chol_;
};

using Measure = std::variant<GaussianMeasure, PotentialDensity>;

int dimension(const Measure& m);
std::string label(const Measure& m);
PotentialDensity potential_of(const Measure& m);
const GaussianMeasure* as_gaussian(const Measure& m);
double declared_kappa(const Measure& m);
double declared_eta(const Measure& m);

/// Built-in densities.
namespace densities {
GaussianMeasure standard_gaussian(int dim = 1);
GaussianMeasure gaussian_scaled(double kappa, int dim = 1);  // N(0, kappa^-1 I)
PotentialDensity quartic1d();                                // x^2/2 + x^4/4, kappa = 1
PotentialDensity logcosh1d();                                // x^2/2 + log cosh x, kappa = 1, eta = 2
}  // namespace densities

/// "standard[:d]", "gaussian_scaled:<kappa>[:d]", "quartic1d", "logcosh1d",
/// "gaussian_diag:<v1,...>[@<m1,...>]", "gaussian:<m1,...>|<c11,...;...>".
Measure parse_measure(std::string_view spec);

struct LogConcavityReport {
  double min_eigenvalue;
  double max_eigenvalue;
  Vector argmin;
  Vector argmax;
  bool pass;
};

/// Hessian eigenvalue range of V over the grid, compared with the declared
/// [kappa, eta] at 1e-8 slack.
LogConcavityReport logconcavity_check(const PotentialDensity& measure, const std::vector<Vector>& grid);

struct DerivativeReport {
  double grad_residual;
  double hess_residual;
  bool pass;  // grad <= 1e-5, hess <= 1e-4
};

DerivativeReport check_derivatives(const PotentialDensity& measure, const std::vector<Vector>& grid);

struct SampleSet {
  Matrix points;  // n x d, one sample per row
  std::uint64_t seed = 0;
  std::string source;

  int size() const { return static_cast<int>(points.rows()); }
  int dim() const { return static_cast<int>(points.cols()); }
};

/// Exact Gaussian sampling; for potentials, inverse CDF on an adaptive grid in
/// one dimension and rejection from N(argmin V, kappa^-1 I) otherwise.
SampleSet sample(const Measure& measure, int n, std::uint64_t seed);

/// Minimizer of V by damped Newton (gradient tolerance 1e-8).
Vector potential_argmin(const PotentialDensity& measure);

struct Moments {
  Vector mean;
  Matrix cov;
};

/// Exact for Gaussians; Laplace-centered Hermite quadrature for potentials (d <= 3).
Moments moments_of(const Measure& measure, int nodes_per_dim = 160);

/// E_mu[f] by Laplace-centered Hermite quadrature (d <= 3).
double expectation(const PotentialDensity& measure, const ScalarField& f, int nodes_per_dim = 160);

struct AffineMap {
  Matrix linear;
  Vector offset;
  Vector operator()(const Vector& x) const { return linear * x + offset; }
};

/// Optimal transport map between Gaussians with commuting covariances.
/// Throws UnsupportedCaseError if the covariances do not commute (1e-10).
AffineMap gaussian_ot_map(const GaussianMeasure& mu0, const GaussianMeasure& mu1);

/// Law of alpha_t X0 + beta_t X1 for independent Gaussian endpoints.
GaussianMeasure gaussian_interpolant_marginal(const GaussianMeasure& mu0, const GaussianMeasure& mu1,
                                              const Schedule& schedule, double t);

}  // namespace siflow
