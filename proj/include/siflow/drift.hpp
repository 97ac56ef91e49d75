#pragma once

#include <memory>
#include <optional>
#include <string>

#include "siflow/linalg.hpp"
#include "siflow/measure.hpp"
#include "siflow/quadrature.hpp"
#include "siflow/schedule.hpp"

namespace siflow {

struct DriftEvaluation {
  double t = 0.0;
  Vector x;
  Vector v;
  std::optional<Matrix> jac;
};

struct TimeRange {
  double start = 0.0;
  double end = 1.0;
};

/// A time-indexed velocity field v_t(x). Implementations are immutable after
/// construction and safe to evaluate concurrently.
class DriftBackend {
 public:
  virtual ~DriftBackend() = default;

  virtual int dim() const = 0;
  virtual TimeRange valid_range() const = 0;
  virtual std::string name() const = 0;
  virtual DriftEvaluation evaluate(double t, const Vector& x, bool with_jacobian) const = 0;

  /// Rows of `points` are states; the result holds one drift per row.
  virtual Matrix evaluate_batch(double t, const Matrix& points) const;
};

/// Score s_t = grad log mu_t.
class ScoreBackend {
 public:
  virtual ~ScoreBackend() = default;

  virtual TimeRange valid_range() const = 0;
  virtual Vector score(double t, const Vector& x) const = 0;
  virtual Matrix score_batch(double t, const Matrix& points) const;
};

// ---------------------------------------------------------------------------
// Gaussian endpoints with commuting covariances: everything in closed form.

/// v_t(x) = mdot_t + (1/2) Sigmadot_t Sigma_t^-1 (x - m_t), Jacobian (1/2) Sigmadot_t Sigma_t^-1.
/// Valid on all of [0,1]. Throws UnsupportedCaseError for non-commuting covariances.
class GaussianClosedDrift final : public DriftBackend {
 public:
  GaussianClosedDrift(GaussianMeasure mu0, GaussianMeasure mu1, Schedule schedule);

  int dim() const override { return mu0_.dim(); }
  TimeRange valid_range() const override { return {0.0, 1.0}; }
  std::string name() const override { return "gaussian_closed"; }
  DriftEvaluation evaluate(double t, const Vector& x, bool with_jacobian) const override;
  Matrix evaluate_batch(double t, const Matrix& points) const override;

  const GaussianMeasure& base() const { return mu0_; }
  const GaussianMeasure& target() const { return mu1_; }
  const Schedule& schedule() const { return schedule_; }

 private:
  struct Linearization {
    Vector m;
    Vector m_dot;
    Matrix gain;  // (1/2) Sigmadot Sigma^-1
  };
  Linearization linearize(double t) const;

  GaussianMeasure mu0_;
  GaussianMeasure mu1_;
  Schedule schedule_;
};

class GaussianClosedScore final : public ScoreBackend {
 public:
  GaussianClosedScore(GaussianMeasure mu0, GaussianMeasure mu1, Schedule schedule);

  TimeRange valid_range() const override { return {0.0, 1.0}; }
  Vector score(double t, const Vector& x) const override;
  Matrix score_batch(double t, const Matrix& points) const override;

 private:
  GaussianMeasure mu0_;
  GaussianMeasure mu1_;
  Schedule schedule_;
};

DriftEvaluation drift_gaussian(const GaussianMeasure& mu0, const GaussianMeasure& mu1, const Schedule& schedule,
                               double t, const Vector& x);

/// Closed-form flow map m_t + Sigma_t^(1/2) Sigma_0^(-1/2) (x - m_0).
Vector flowmap_gaussian_closed(const GaussianMeasure& mu0, const GaussianMeasure& mu1, const Schedule& schedule,
                               double t, const Vector& x);

// ---------------------------------------------------------------------------
// Quadrature backends (dim <= 3).

enum class QuadratureMode {
  /// Hermite rule centered at the mode of the conditional density with the
  /// inverse square root of its Hessian as scale.
  laplace,
  /// Hermite rule centered at x / beta_t with scale alpha_t / beta_t when
  /// beta_t / alpha_t >= switch_ratio, otherwise the base proposal.
  hermite_centered,
  /// Standard normal proposal at every time.
  base_proposal,
};

struct QuadratureConfig {
  int nodes_per_dim = 64;
  QuadratureMode mode = QuadratureMode::laplace;
  double switch_ratio = 1.0;
  double time_clamp = 1e-3;
  /// Linear-in-t extrapolation on [0, delta) and (1 - delta, 1]. When false
  /// those times raise TimeClampError.
  bool extrapolate = true;

  void validate() const;
};

enum class JacobianRoute {
  automatic,      // gaussian_base when mu0 = N(0, I), general otherwise
  gaussian_base,  // (adot/a) I + (bdot - adot b/a)(b/a^2) Cov[X1 | X_t = x]
  general,        // Cov[R_t, -grad_x Vtilde_t] under the reparametrized conditional
};

/// Drift of the isotropic interpolant computed by quadrature over x1 of
/// exp(-V0((x - beta x1)/alpha) - V1(x1)).
class QuadratureDrift final : public DriftBackend, public ScoreBackend {
 public:
  QuadratureDrift(const Measure& mu0, const Measure& mu1, Schedule schedule, QuadratureConfig config = {});

  int dim() const override { return dim_; }
  TimeRange valid_range() const override { return {config_.time_clamp, 1.0 - config_.time_clamp}; }
  std::string name() const override { return "quadrature"; }
  DriftEvaluation evaluate(double t, const Vector& x, bool with_jacobian) const override;

  Matrix jacobian(double t, const Vector& x, JacobianRoute route = JacobianRoute::automatic) const;

  /// True when mu0 is exactly N(0, I); enables the b_t, phi_t and score routes.
  bool gaussian_base() const { return gaussian_base_; }

  /// Requires a Gaussian base; see gaussian_base().
  double log_partition(double t, const Vector& x) const;
  double potential_phi(double t, const Vector& x) const;
  Vector score(double t, const Vector& x) const override;

  /// Mean and covariance of X1 given X_t = x.
  Moments conditional_moments(double t, const Vector& x) const;

  const QuadratureConfig& config() const { return config_; }
  const Schedule& schedule() const { return schedule_; }

 private:
  struct Frame;
  Frame frame(double t) const;
  WeightedNodes conditional_nodes(const Frame& f, const Vector& x) const;
  DriftEvaluation evaluate_direct(double t, const Vector& x, bool with_jacobian, JacobianRoute route) const;
  void require_gaussian_base(const char* what) const;
  void check_time(double t) const;

  int dim_;
  PotentialDensity v0_;
  PotentialDensity v1_;
  bool gaussian_base_;
  Schedule schedule_;
  QuadratureConfig config_;
  std::shared_ptr<const HermiteRule> rule_;
};

/// -V1(x1) - (beta^2 / 2 alpha^2)|x1|^2 + (beta / alpha^2) <x1, x>, base N(0, I).
double conditional_logdensity_gaussian_base(const PotentialDensity& mu1, const Schedule& schedule, double t,
                                            const Vector& x, const Vector& x1);

double log_partition_bt(const Measure& mu1, const Schedule& schedule, double t, const Vector& x,
                        const QuadratureConfig& quad = {});

DriftEvaluation drift_quadrature(const Measure& mu0, const Measure& mu1, const Schedule& schedule, double t,
                                 const Vector& x, const QuadratureConfig& quad = {}, bool with_jacobian = false);

Matrix drift_jacobian(const Measure& mu0, const Measure& mu1, const Schedule& schedule, double t, const Vector& x,
                      const QuadratureConfig& quad = {}, JacobianRoute route = JacobianRoute::automatic);

double drift_potential_phi(const Measure& mu1, const Schedule& schedule, double t, const Vector& x,
                           const QuadratureConfig& quad = {});

Vector score_quadrature(const Measure& mu1, const Schedule& schedule, double t, const Vector& x,
                        const QuadratureConfig& quad = {});

/// Drift from a score with base N(0, I), through grad b_t = s_t + x / a^2:
/// v = (adot/a) x + (bdot - adot b/a)(a^2/b)(s + x/a^2). Needs a, b > 0.
Vector drift_from_score(const Schedule& schedule, double t, const Vector& x, const Vector& score);

// ---------------------------------------------------------------------------
// Empirical estimator from samples of mu1.

/// Kernel estimate mu_hat_t = (1/n) sum N(beta_t X1_i, (alpha_t^2 + h) I), its
/// thresholded score grad mu_hat / max(eps, mu_hat), and the drift obtained
/// from the score through v = (adot/a) x + (bdot - adot b/a)(a^2/b)(s + x/a^2).
class EmpiricalDrift final : public DriftBackend, public ScoreBackend {
 public:
  EmpiricalDrift(SampleSet samples, Schedule schedule, double bandwidth, double threshold,
                 double time_clamp = 1e-3);

  int dim() const override { return static_cast<int>(samples_.points.cols()); }
  TimeRange valid_range() const override { return {time_clamp_, 1.0 - time_clamp_}; }
  std::string name() const override { return "empirical"; }
  DriftEvaluation evaluate(double t, const Vector& x, bool with_jacobian) const override;

  /// Regularized score; log-sum-exp evaluation of the mixture.
  Vector score(double t, const Vector& x) const override;
  double log_density(double t, const Vector& x) const;
  Vector drift(double t, const Vector& x) const;

  const SampleSet& samples() const { return samples_; }
  double bandwidth() const { return bandwidth_; }
  double threshold() const { return threshold_; }

 private:
  void check_time(double t) const;

  SampleSet samples_;
  Schedule schedule_;
  double bandwidth_;
  double threshold_;
  double time_clamp_;
};

Vector empirical_drift(const EmpiricalDrift& est, double t, const Vector& x);

}  // namespace siflow
