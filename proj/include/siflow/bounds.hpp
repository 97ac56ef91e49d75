#pragma once

#include <string>
#include <vector>

#include "siflow/schedule.hpp"

namespace siflow {

enum class BoundKind { thm1, thm2, gronwall };

std::string to_string(BoundKind kind);

/// Per-time Jacobian bound lambda_t and the flow-map bound it implies.
/// flow_bound is normalized to one at times.front(), so a curve on a clamped
/// grid bounds the flow started at the first grid time.
struct BoundCurve {
  std::vector<double> times;
  std::vector<double> lambda;
  std::vector<double> flow_bound;
  BoundKind provenance = BoundKind::gronwall;
};

/// (kappa a adot + b bdot) / (kappa a^2 + b^2). Throws DomainError for kappa < 0
/// or a vanishing denominator.
double thm1_lambda(const Schedule& schedule, double t, double kappa);

/// sqrt(a^2 + b^2 / kappa). Throws DomainError for kappa <= 0.
double thm1_flow_bound(const Schedule& schedule, double t, double kappa);

/// (adot a k1 + bdot b eta0) / sqrt((a^2 k1 + b^2 eta0)(a^2 k1 + b^2 k0)).
/// Only kappa1 enters from the target; its upper bound eta1 plays no role.
/// Throws PreconditionError unless the schedule is admissible and
/// kappa0 >= kappa1 >= 0, eta0 >= kappa0; DomainError for a zero denominator.
double thm2_lambda(const Schedule& schedule, double t, double kappa0, double eta0, double kappa1);

/// exp(int_{times[0]}^t lambda) by the trapezoid rule, linear interpolation inside a cell.
double gronwall_flow_bound(const std::vector<double>& times, const std::vector<double>& lambda, double t);
double gronwall_flow_bound(const BoundCurve& curve, double t);

/// Uniform grid with n points on [start, end].
std::vector<double> uniform_grid(double start, double end, int n);

BoundCurve thm1_curve(const Schedule& schedule, double kappa, const std::vector<double>& times);
/// flow_bound integrates the closed-form lambda by composite Simpson inside each cell.
BoundCurve thm2_curve(const Schedule& schedule, double kappa0, double eta0, double kappa1,
                      const std::vector<double>& times);
/// Running exp of the cumulative trapezoid integral of lambda.
BoundCurve gronwall_curve(const std::vector<double>& times, const std::vector<double>& lambda);

/// (eta0 / kappa1)^(sqrt(eta0 / kappa0) / 2).
double corollary_constant(double kappa0, double eta0, double kappa1);

/// sqrt(eta0 / kappa1), requires 0 < kappa1 <= eta0.
double caffarelli_constant(double eta0, double kappa1);

struct ScheduleBoundReport {
  double kappa;
  double grid_sup;       // sup over the clamped grid of |thm1_lambda|
  double argmax_t;
  double formula_value;  // |log kappa| / 2
  double stated_value;   // the value kappa quoted alongside the schedule
  bool discrepancy;      // stated and formula values disagree
};

/// Uniform bound of |thm1_lambda| for the variance-matched schedule.
/// Throws ParameterError for kappa == 1 and DomainError for kappa <= 0.
ScheduleBoundReport suggested_schedule_bound(double kappa, int grid_size = 1001, double time_clamp = 1e-3);

}  // namespace siflow
