#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>

#include "siflow/drift.hpp"
#include "siflow/error.hpp"

namespace siflow {

EmpiricalDrift::EmpiricalDrift(SampleSet samples, Schedule schedule, double bandwidth, double threshold,
                               double time_clamp)
    : samples_(std::move(samples)),
      schedule_(std::move(schedule)),
      bandwidth_(bandwidth),
      threshold_(threshold),
      time_clamp_(time_clamp) {
  if (samples_.size() == 0) throw ParameterError("empirical drift needs at least one sample");
  if (!(bandwidth_ >= 0.0)) throw ParameterError("bandwidth must be >= 0");
  if (!(threshold_ > 0.0)) throw ParameterError("threshold must be > 0");
  if (!(time_clamp_ > 0.0 && time_clamp_ < 0.5)) throw ParameterError("time clamp must lie in (0, 0.5)");
}

void EmpiricalDrift::check_time(double t) const {
  if (!(t >= time_clamp_ && t <= 1.0 - time_clamp_)) {
    throw TimeClampError("t=" + std::to_string(t) + " outside the empirical drift range");
  }
}

namespace {

struct MixtureTerms {
  double log_density;
  Vector weighted_pull;  // sum_i w_i (beta X_i - x) / sigma^2 with softmax weights w_i
};

MixtureTerms mixture(const Matrix& pts, double alpha, double beta, double h, const Vector& x) {
  const Eigen::Index n = pts.rows();
  const int d = static_cast<int>(pts.cols());
  const double var = alpha * alpha + h;
  const Matrix diff = (beta * pts).rowwise() - x.transpose();  // beta X_i - x
  const Vector logs = (-0.5 / var) * diff.rowwise().squaredNorm();
  const double m = logs.maxCoeff();
  Vector w = (logs.array() - m).exp();
  const double sum = w.sum();
  w /= sum;
  MixtureTerms out;
  out.log_density = m + std::log(sum) - std::log(static_cast<double>(n)) -
                    0.5 * d * std::log(2.0 * std::numbers::pi * var);
  out.weighted_pull = diff.transpose() * w / var;
  return out;
}

}  // namespace

Vector drift_from_score(const Schedule& schedule, double t, const Vector& x, const Vector& score) {
  const Coefficients c = schedule.eval(t);
  if (!(c.alpha > 0.0 && c.beta > 0.0)) {
    throw TimeClampError("score-to-drift conversion needs alpha_t, beta_t > 0 (t=" + std::to_string(t) + ")");
  }
  const double a2 = c.alpha * c.alpha;
  const double gain = c.beta_dot - c.alpha_dot * c.beta / c.alpha;
  return (c.alpha_dot / c.alpha) * x + gain * (a2 / c.beta) * (score + x / a2);
}

double EmpiricalDrift::log_density(double t, const Vector& x) const {
  check_time(t);
  const Coefficients c = schedule_.eval(t);
  return mixture(samples_.points, c.alpha, c.beta, bandwidth_, x).log_density;
}

Vector EmpiricalDrift::score(double t, const Vector& x) const {
  check_time(t);
  const Coefficients c = schedule_.eval(t);
  const MixtureTerms m = mixture(samples_.points, c.alpha, c.beta, bandwidth_, x);
  // grad mu / max(eps, mu) = (mu / max(eps, mu)) * grad log mu
  const double ratio = std::exp(m.log_density - std::max(std::log(threshold_), m.log_density));
  return ratio * m.weighted_pull;
}

Vector EmpiricalDrift::drift(double t, const Vector& x) const { return drift_from_score(schedule_, t, x, score(t, x)); }

DriftEvaluation EmpiricalDrift::evaluate(double t, const Vector& x, bool with_jacobian) const {
  DriftEvaluation e;
  e.t = t;
  e.x = x;
  e.v = drift(t, x);
  if (with_jacobian) {
    const int d = dim();
    Matrix jac(d, d);
    for (int j = 0; j < d; ++j) {
      const double step = 1e-5 * std::max(1.0, std::abs(x(j)));
      Vector xp = x;
      Vector xm = x;
      xp(j) += step;
      xm(j) -= step;
      jac.col(j) = (drift(t, xp) - drift(t, xm)) / (2.0 * step);
    }
    e.jac = jac;
  }
  return e;
}

Vector empirical_drift(const EmpiricalDrift& est, double t, const Vector& x) { return est.drift(t, x); }

}  // namespace siflow
