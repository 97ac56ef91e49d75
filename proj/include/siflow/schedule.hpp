#pragma once

#include <functional>
#include <string>
#include <string_view>
#include <vector>

namespace siflow {

struct Coefficients {
  double alpha;
  double beta;
  double alpha_dot;
  double beta_dot;
};

/// Interpolation coefficients I_t(x0, x1) = alpha(t) x0 + beta(t) x1 on [0,1].
///
/// Derivatives are analytic. Finite differences only appear in the
/// consistency check of check_endpoints. Immutable after construction.
class Schedule {
 public:
  using Fn = std::function<double(double)>;

  Schedule(std::string name, Fn alpha, Fn beta, Fn alpha_dot, Fn beta_dot);

  /// Throws DomainError for t outside [0,1].
  Coefficients eval(double t) const;

  const std::string& name() const { return name_; }

  static Schedule linear();
  static Schedule trig();
  /// kappa*alpha^2 + beta^2 = kappa^(1-t) together with alpha^2 + beta^2 = 1.
  /// The derivatives are infinite at the endpoints (beta_dot at 0, alpha_dot at 1).
  static Schedule variance_matched(double kappa);
  /// Ornstein-Uhlenbeck coefficients (e^-tau, sqrt(1-e^-2tau)) with
  /// tau = t/(1-t), frozen for t > 1 - time_clamp.
  static Schedule ou_reparam(double time_clamp = 1e-3);
  /// alpha(t) = sum a_k t^k, beta(t) = sum b_k t^k. No endpoint validation.
  static Schedule polynomial(std::vector<double> alpha_coeffs, std::vector<double> beta_coeffs);

 private:
  std::string name_;
  Fn alpha_;
  Fn beta_;
  Fn alpha_dot_;
  Fn beta_dot_;
};

/// Parses "linear", "trig", "vm:<kappa>", "ou" or "ou:<time_clamp>".
Schedule make_builtin(std::string_view kind);

struct CheckItem {
  std::string clause;
  bool pass;
  double residual;
};

struct ScheduleReport {
  std::vector<CheckItem> items;
  bool pass() const;
  std::vector<std::string> failed_clauses() const;
};

/// Endpoint values, interior positivity and derivative/finite-difference
/// agreement on a 101-point grid. Failures are reported, never thrown.
ScheduleReport check_endpoints(const Schedule& schedule);

struct AdmissibilityReport {
  bool admissible;
  bool strictly_decreasing;
  double max_norm_residual;  // max |alpha^2 + beta^2 - 1| over the grid
  double worst_t;            // where the norm residual peaks
};

AdmissibilityReport check_admissible(const Schedule& schedule, int grid_size);

}  // namespace siflow
