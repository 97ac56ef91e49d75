#include "siflow/bounds.hpp"

#include <algorithm>
#include <cmath>

#include "siflow/error.hpp"

namespace siflow {

std::string to_string(BoundKind kind) {
  switch (kind) {
    case BoundKind::thm1:
      return "thm1";
    case BoundKind::thm2:
      return "thm2";
    case BoundKind::gronwall:
      return "gronwall";
  }
  return "unknown";
}

double thm1_lambda(const Schedule& schedule, double t, double kappa) {
  if (!(kappa >= 0.0)) throw DomainError("thm1_lambda needs kappa >= 0");
  const Coefficients c = schedule.eval(t);
  const double den = kappa * c.alpha * c.alpha + c.beta * c.beta;
  if (!(den > 0.0)) throw DomainError("thm1_lambda denominator vanishes at t=" + std::to_string(t));
  return (kappa * c.alpha * c.alpha_dot + c.beta * c.beta_dot) / den;
}

double thm1_flow_bound(const Schedule& schedule, double t, double kappa) {
  if (!(kappa > 0.0)) throw DomainError("thm1_flow_bound needs kappa > 0");
  const Coefficients c = schedule.eval(t);
  return std::sqrt(c.alpha * c.alpha + c.beta * c.beta / kappa);
}

namespace {

void check_thm2_constants(double kappa0, double eta0, double kappa1) {
  if (!(kappa1 >= 0.0 && kappa0 >= kappa1 && eta0 >= kappa0)) {
    throw PreconditionError("thm2 needs kappa0 >= kappa1 >= 0 and eta0 >= kappa0");
  }
}

void check_admissible_or_throw(const Schedule& schedule) {
  const AdmissibilityReport r = check_admissible(schedule, 1001);
  if (!r.admissible) {
    throw PreconditionError("schedule '" + schedule.name() + "' is not admissible (max |a^2+b^2-1| = " +
                            std::to_string(r.max_norm_residual) +
                            (r.strictly_decreasing ? "" : ", alpha not strictly decreasing") + ")");
  }
}

double thm2_lambda_unchecked(const Schedule& schedule, double t, double kappa0, double eta0, double kappa1) {
  const Coefficients c = schedule.eval(t);
  const double a2 = c.alpha * c.alpha;
  const double b2 = c.beta * c.beta;
  const double den = std::sqrt((a2 * kappa1 + b2 * eta0) * (a2 * kappa1 + b2 * kappa0));
  if (!(den > 0.0)) throw DomainError("thm2_lambda denominator vanishes at t=" + std::to_string(t));
  return (c.alpha_dot * c.alpha * kappa1 + c.beta_dot * c.beta * eta0) / den;
}

}  // namespace

double thm2_lambda(const Schedule& schedule, double t, double kappa0, double eta0, double kappa1) {
  check_thm2_constants(kappa0, eta0, kappa1);
  check_admissible_or_throw(schedule);
  return thm2_lambda_unchecked(schedule, t, kappa0, eta0, kappa1);
}

double gronwall_flow_bound(const std::vector<double>& times, const std::vector<double>& lambda, double t) {
  if (times.size() != lambda.size() || times.empty()) throw ParameterError("lambda curve is malformed");
  if (t <= times.front()) return 1.0;
  double integral = 0.0;
  for (std::size_t k = 1; k < times.size(); ++k) {
    const double t0 = times[k - 1];
    const double t1 = times[k];
    if (t >= t1) {
      integral += 0.5 * (t1 - t0) * (lambda[k - 1] + lambda[k]);
      continue;
    }
    const double l_at = lambda[k - 1] + (t - t0) / (t1 - t0) * (lambda[k] - lambda[k - 1]);
    integral += 0.5 * (t - t0) * (lambda[k - 1] + l_at);
    return std::exp(integral);
  }
  return std::exp(integral);
}

double gronwall_flow_bound(const BoundCurve& curve, double t) {
  return gronwall_flow_bound(curve.times, curve.lambda, t);
}

std::vector<double> uniform_grid(double start, double end, int n) {
  if (n < 2) throw ParameterError("a grid needs at least two points");
  std::vector<double> out(n);
  for (int k = 0; k < n; ++k) out[k] = start + (end - start) * k / (n - 1);
  out.back() = end;
  return out;
}

BoundCurve gronwall_curve(const std::vector<double>& times, const std::vector<double>& lambda) {
  if (times.size() != lambda.size() || times.empty()) throw ParameterError("lambda curve is malformed");
  BoundCurve out{times, lambda, std::vector<double>(times.size(), 1.0), BoundKind::gronwall};
  double integral = 0.0;
  for (std::size_t k = 1; k < times.size(); ++k) {
    integral += 0.5 * (times[k] - times[k - 1]) * (lambda[k - 1] + lambda[k]);
    out.flow_bound[k] = std::exp(integral);
  }
  return out;
}

BoundCurve thm1_curve(const Schedule& schedule, double kappa, const std::vector<double>& times) {
  if (times.empty()) throw ParameterError("empty time grid");
  BoundCurve out{times, {}, {}, BoundKind::thm1};
  const double base = thm1_flow_bound(schedule, times.front(), kappa);
  for (double t : times) {
    out.lambda.push_back(thm1_lambda(schedule, t, kappa));
    out.flow_bound.push_back(thm1_flow_bound(schedule, t, kappa) / base);
  }
  return out;
}

BoundCurve thm2_curve(const Schedule& schedule, double kappa0, double eta0, double kappa1,
                      const std::vector<double>& times) {
  check_thm2_constants(kappa0, eta0, kappa1);
  check_admissible_or_throw(schedule);
  const auto lam = [&](double t) { return thm2_lambda_unchecked(schedule, t, kappa0, eta0, kappa1); };
  BoundCurve out{times, {}, std::vector<double>(times.size(), 1.0), BoundKind::thm2};
  out.lambda.reserve(times.size());
  for (double t : times) out.lambda.push_back(lam(t));
  // lambda is known in closed form, so each cell is integrated by composite Simpson
  // rather than by the trapezoid rule on the grid samples.
  constexpr int sub = 16;
  double integral = 0.0;
  for (std::size_t k = 1; k < times.size(); ++k) {
    const double a = times[k - 1];
    const double h = (times[k] - a) / sub;
    double s = out.lambda[k - 1] + out.lambda[k];
    for (int i = 1; i < sub; ++i) s += (i % 2 ? 4.0 : 2.0) * lam(a + i * h);
    integral += s * h / 3.0;
    out.flow_bound[k] = std::exp(integral);
  }
  return out;
}

double corollary_constant(double kappa0, double eta0, double kappa1) {
  if (!(kappa0 > 0.0)) throw DomainError("corollary constant needs kappa0 > 0");
  if (!(kappa1 > 0.0)) throw DomainError("corollary constant needs kappa1 > 0");
  if (!(eta0 >= kappa0)) throw DomainError("corollary constant needs eta0 >= kappa0");
  return std::pow(eta0 / kappa1, 0.5 * std::sqrt(eta0 / kappa0));
}

double caffarelli_constant(double eta0, double kappa1) {
  if (!(kappa1 > 0.0)) throw DomainError("Caffarelli constant needs kappa1 > 0");
  if (kappa1 > eta0) throw DomainError("Caffarelli constant needs kappa1 <= eta0");
  return std::sqrt(eta0 / kappa1);
}

ScheduleBoundReport suggested_schedule_bound(double kappa, int grid_size, double time_clamp) {
  if (!(kappa > 0.0)) throw DomainError("suggested schedule bound needs kappa > 0");
  if (kappa == 1.0) throw ParameterError("variance-matched schedule is undefined for kappa = 1");
  const Schedule s = Schedule::variance_matched(kappa);
  ScheduleBoundReport r{kappa, 0.0, time_clamp, 0.5 * std::abs(std::log(kappa)), kappa, false};
  for (double t : uniform_grid(time_clamp, 1.0 - time_clamp, grid_size)) {
    const double v = std::abs(thm1_lambda(s, t, kappa));
    if (v > r.grid_sup) {
      r.grid_sup = v;
      r.argmax_t = t;
    }
  }
  r.discrepancy = std::abs(r.stated_value - r.formula_value) > 1e-6 * std::max(1.0, r.formula_value);
  return r;
}

}  // namespace siflow
