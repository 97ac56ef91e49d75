#include "siflow/drift.hpp"

#include <cmath>
#include <sstream>

#include "siflow/error.hpp"

namespace siflow {

Matrix DriftBackend::evaluate_batch(double t, const Matrix& points) const {
  Matrix out(points.rows(), points.cols());
  for (Eigen::Index i = 0; i < points.rows(); ++i) {
    out.row(i) = evaluate(t, points.row(i).transpose(), false).v.transpose();
  }
  return out;
}

Matrix ScoreBackend::score_batch(double t, const Matrix& points) const {
  Matrix out(points.rows(), points.cols());
  for (Eigen::Index i = 0; i < points.rows(); ++i) {
    out.row(i) = score(t, points.row(i).transpose()).transpose();
  }
  return out;
}

namespace {

std::string at(double t, const Vector& x) {
  std::ostringstream os;
  os.precision(17);
  os << " at t=" << t << ", x=[";
  for (Eigen::Index i = 0; i < x.size(); ++i) os << (i ? "," : "") << x(i);
  os << "]";
  return os.str();
}

void require_commuting(const GaussianMeasure& mu0, const GaussianMeasure& mu1) {
  if (mu0.dim() != mu1.dim()) throw ParameterError("Gaussian endpoints differ in dimension");
  const double scale = std::max(1.0, mu0.cov().norm() * mu1.cov().norm());
  if (!commutes(mu0.cov(), mu1.cov(), 1e-10 * scale)) {
    throw UnsupportedCaseError("closed-form Gaussian interpolation needs commuting covariances");
  }
}

}  // namespace

// ---------------------------------------------------------------------------

GaussianClosedDrift::GaussianClosedDrift(GaussianMeasure mu0, GaussianMeasure mu1, Schedule schedule)
    : mu0_(std::move(mu0)), mu1_(std::move(mu1)), schedule_(std::move(schedule)) {
  require_commuting(mu0_, mu1_);
}

GaussianClosedDrift::Linearization GaussianClosedDrift::linearize(double t) const {
  const Coefficients c = schedule_.eval(t);
  Linearization lin;
  lin.m = c.alpha * mu0_.mean() + c.beta * mu1_.mean();
  lin.m_dot = c.alpha_dot * mu0_.mean() + c.beta_dot * mu1_.mean();
  const Matrix sigma = c.alpha * c.alpha * mu0_.cov() + c.beta * c.beta * mu1_.cov();
  const Matrix sigma_dot = 2.0 * c.alpha * c.alpha_dot * mu0_.cov() + 2.0 * c.beta * c.beta_dot * mu1_.cov();
  Eigen::LLT<Matrix> llt(sigma);
  if (llt.info() != Eigen::Success) throw NumericError("singular interpolant covariance at t=" + std::to_string(t));
  // Sigma^-1 Sigmadot = (Sigmadot Sigma^-1)^T for symmetric factors
  lin.gain = 0.5 * llt.solve(sigma_dot).transpose();
  return lin;
}

DriftEvaluation GaussianClosedDrift::evaluate(double t, const Vector& x, bool with_jacobian) const {
  const Linearization lin = linearize(t);
  DriftEvaluation e;
  e.t = t;
  e.x = x;
  e.v = lin.m_dot + lin.gain * (x - lin.m);
  if (with_jacobian) e.jac = lin.gain;
  return e;
}

Matrix GaussianClosedDrift::evaluate_batch(double t, const Matrix& points) const {
  const Linearization lin = linearize(t);
  Matrix centered = points.rowwise() - lin.m.transpose();
  Matrix out = centered * lin.gain.transpose();
  out.rowwise() += lin.m_dot.transpose();
  return out;
}

GaussianClosedScore::GaussianClosedScore(GaussianMeasure mu0, GaussianMeasure mu1, Schedule schedule)
    : mu0_(std::move(mu0)), mu1_(std::move(mu1)), schedule_(std::move(schedule)) {
  if (mu0_.dim() != mu1_.dim()) throw ParameterError("Gaussian endpoints differ in dimension");
}

Vector GaussianClosedScore::score(double t, const Vector& x) const {
  const GaussianMeasure mt = gaussian_interpolant_marginal(mu0_, mu1_, schedule_, t);
  return -mt.precision() * (x - mt.mean());
}

Matrix GaussianClosedScore::score_batch(double t, const Matrix& points) const {
  const GaussianMeasure mt = gaussian_interpolant_marginal(mu0_, mu1_, schedule_, t);
  return -(points.rowwise() - mt.mean().transpose()) * mt.precision();
}

DriftEvaluation drift_gaussian(const GaussianMeasure& mu0, const GaussianMeasure& mu1, const Schedule& schedule,
                               double t, const Vector& x) {
  return GaussianClosedDrift(mu0, mu1, schedule).evaluate(t, x, true);
}

Vector flowmap_gaussian_closed(const GaussianMeasure& mu0, const GaussianMeasure& mu1, const Schedule& schedule,
                               double t, const Vector& x) {
  require_commuting(mu0, mu1);
  const GaussianMeasure mt = gaussian_interpolant_marginal(mu0, mu1, schedule, t);
  return mt.mean() + sym_sqrt(mt.cov()) * sym_inv_sqrt(mu0.cov()) * (x - mu0.mean());
}

// ---------------------------------------------------------------------------

void QuadratureConfig::validate() const {
  if (nodes_per_dim < 8) throw ParameterError("quadrature needs nodes_per_dim >= 8");
  if (!(time_clamp > 0.0 && time_clamp < 0.25)) throw ParameterError("time clamp must lie in (0, 0.25)");
  if (!(switch_ratio > 0.0)) throw ParameterError("switch_ratio must be positive");
}

struct QuadratureDrift::Frame {
  double t;
  double a;
  double b;
  double a_dot;
  double b_dot;
  double det;  // a b_dot - a_dot b
};

QuadratureDrift::QuadratureDrift(const Measure& mu0, const Measure& mu1, Schedule schedule, QuadratureConfig config)
    : dim_(dimension(mu1)),
      v0_(potential_of(mu0)),
      v1_(potential_of(mu1)),
      gaussian_base_(false),
      schedule_(std::move(schedule)),
      config_(config) {
  config_.validate();
  if (dimension(mu0) != dim_) throw ParameterError("base and target differ in dimension");
  if (dim_ > 3) throw UnsupportedCaseError("quadrature drift supports dim <= 3");
  if (const auto* g = as_gaussian(mu0)) gaussian_base_ = g->is_standard();
  rule_ = hermite_rule(config_.nodes_per_dim);
}

QuadratureDrift::Frame QuadratureDrift::frame(double t) const {
  const Coefficients c = schedule_.eval(t);
  if (!(c.alpha >= 1e-300)) {
    throw TimeClampError("alpha_t vanishes at t=" + std::to_string(t) + "; quadrature needs t < 1");
  }
  Frame f{t, c.alpha, c.beta, c.alpha_dot, c.beta_dot, c.alpha * c.beta_dot - c.alpha_dot * c.beta};
  if (!(std::abs(f.det) > 1e-12)) {
    throw ScheduleError("determinant alpha*beta_dot - alpha_dot*beta vanishes at t=" + std::to_string(t));
  }
  return f;
}

void QuadratureDrift::check_time(double t) const {
  const double lo = config_.time_clamp;
  if (!(t >= lo && t <= 1.0 - lo)) {
    throw TimeClampError("t=" + std::to_string(t) + " outside the clamp range [" + std::to_string(lo) + ", " +
                         std::to_string(1.0 - lo) + "]");
  }
}

void QuadratureDrift::require_gaussian_base(const char* what) const {
  if (!gaussian_base_) throw PreconditionError(std::string(what) + " requires the base measure N(0, I)");
}

WeightedNodes QuadratureDrift::conditional_nodes(const Frame& f, const Vector& x) const {
  const double ratio = f.b / f.a;   // beta / alpha
  const double prec = ratio * ratio;  // beta^2 / alpha^2
  const double lin = f.b / (f.a * f.a);
  const int d = dim_;

  ScalarField log_f;
  ConvexObjective neg_log;
  if (gaussian_base_) {
    log_f = [&](const Vector& y) { return -v1_.potential(y) - 0.5 * prec * y.squaredNorm() + lin * y.dot(x); };
    neg_log.value = [&](const Vector& y) { return -log_f(y); };
    neg_log.grad = [&](const Vector& y) -> Vector { return v1_.grad(y) + prec * y - lin * x; };
    neg_log.hess = [&](const Vector& y) -> Matrix {
      return v1_.hess(y) + prec * Matrix::Identity(d, d);
    };
  } else {
    auto x0 = [&](const Vector& y) -> Vector { return (x - f.b * y) / f.a; };
    log_f = [&, x0](const Vector& y) { return -v0_.potential(x0(y)) - v1_.potential(y); };
    neg_log.value = [&](const Vector& y) { return -log_f(y); };
    neg_log.grad = [&, x0](const Vector& y) -> Vector { return v1_.grad(y) - ratio * v0_.grad(x0(y)); };
    neg_log.hess = [&, x0](const Vector& y) -> Matrix { return v1_.hess(y) + prec * v0_.hess(x0(y)); };
  }

  Vector center;
  Matrix scale;
  switch (config_.mode) {
    case QuadratureMode::laplace: {
      const Vector start = (f.b / (f.a * f.a + f.b * f.b)) * x;
      const MinimizeResult opt = minimize_convex(neg_log, start, 1e-10 * std::max(1.0, prec));
      center = opt.argmin;
      scale = sym_inv_sqrt(opt.hess);
      break;
    }
    case QuadratureMode::hermite_centered:
      if (ratio >= config_.switch_ratio) {
        center = x / f.b;
        scale = (1.0 / ratio) * Matrix::Identity(d, d);
        break;
      }
      [[fallthrough]];
    case QuadratureMode::base_proposal:
      center = Vector::Zero(d);
      scale = Matrix::Identity(d, d);
      break;
  }
  try {
    return integrate_exp(log_f, center, scale, *rule_);
  } catch (const NumericError& e) {
    throw NumericError(std::string(e.what()) + at(f.t, x));
  }
}

Moments QuadratureDrift::conditional_moments(double t, const Vector& x) const {
  const WeightedNodes w = conditional_nodes(frame(t), x);
  return {w.mean(), w.covariance()};
}

DriftEvaluation QuadratureDrift::evaluate_direct(double t, const Vector& x, bool with_jacobian,
                                                 JacobianRoute route) const {
  const Frame f = frame(t);
  const WeightedNodes w = conditional_nodes(f, x);
  const Vector mean_x1 = w.mean();
  // R_t = adot x0 + bdot x1 with x0 = (x - b x1)/a
  const double gain = f.b_dot - f.a_dot * f.b / f.a;

  DriftEvaluation e;
  e.t = t;
  e.x = x;
  e.v = (f.a_dot / f.a) * x + gain * mean_x1;
  if (!e.v.allFinite()) throw NumericError("non-finite quadrature drift" + at(t, x));
  if (!with_jacobian) return e;

  if (route == JacobianRoute::automatic) {
    route = gaussian_base_ ? JacobianRoute::gaussian_base : JacobianRoute::general;
  }
  const int d = dim_;
  if (route == JacobianRoute::gaussian_base) {
    require_gaussian_base("gaussian-base Jacobian route");
    const Matrix cov = w.covariance();
    e.jac = (f.a_dot / f.a) * Matrix::Identity(d, d) + gain * (f.b / (f.a * f.a)) * cov;
  } else {
    // Cov[R, G] with G = -grad_x Vtilde = -(bdot/det) grad V0(x0) + (adot/det) grad V1(x1);
    // R - E R = gain (x1 - E x1).
    const Eigen::Index n = w.weights.size();
    Matrix g_vals = Matrix::Zero(d, n);
    Vector g_mean = Vector::Zero(d);
    for (Eigen::Index k = 0; k < n; ++k) {
      if (w.weights(k) == 0.0) continue;
      const Vector y = w.points.col(k);
      const Vector x0 = (x - f.b * y) / f.a;
      g_vals.col(k) = -(f.b_dot / f.det) * v0_.grad(x0) + (f.a_dot / f.det) * v1_.grad(y);
      g_mean += w.weights(k) * g_vals.col(k);
    }
    Matrix cross = Matrix::Zero(d, d);
    for (Eigen::Index k = 0; k < n; ++k) {
      if (w.weights(k) == 0.0) continue;
      cross += w.weights(k) * (w.points.col(k) - mean_x1) * (g_vals.col(k) - g_mean).transpose();
    }
    e.jac = gain * cross;
  }
  if (!e.jac->allFinite()) throw NumericError("non-finite quadrature Jacobian" + at(t, x));
  return e;
}

DriftEvaluation QuadratureDrift::evaluate(double t, const Vector& x, bool with_jacobian) const {
  const double delta = config_.time_clamp;
  if (!(t >= 0.0 && t <= 1.0)) throw DomainError("t=" + std::to_string(t) + " outside [0,1]");
  if (t >= delta && t <= 1.0 - delta) return evaluate_direct(t, x, with_jacobian, JacobianRoute::automatic);
  if (!config_.extrapolate) check_time(t);
  const double t1 = t < delta ? delta : 1.0 - delta;
  const double t2 = t < delta ? 2.0 * delta : 1.0 - 2.0 * delta;
  const DriftEvaluation e1 = evaluate_direct(t1, x, with_jacobian, JacobianRoute::automatic);
  const DriftEvaluation e2 = evaluate_direct(t2, x, with_jacobian, JacobianRoute::automatic);
  const double s = (t - t1) / (t2 - t1);
  DriftEvaluation e;
  e.t = t;
  e.x = x;
  e.v = e1.v + s * (e2.v - e1.v);
  if (with_jacobian) e.jac = *e1.jac + s * (*e2.jac - *e1.jac);
  return e;
}

Matrix QuadratureDrift::jacobian(double t, const Vector& x, JacobianRoute route) const {
  check_time(t);
  return *evaluate_direct(t, x, true, route).jac;
}

double QuadratureDrift::log_partition(double t, const Vector& x) const {
  require_gaussian_base("log partition b_t");
  if (!(t >= 0.0 && t <= 1.0 - config_.time_clamp)) {
    throw TimeClampError("log partition needs 0 <= t <= 1 - time_clamp, got t=" + std::to_string(t));
  }
  return conditional_nodes(frame(t), x).log_mass;
}

double QuadratureDrift::potential_phi(double t, const Vector& x) const {
  require_gaussian_base("potential phi_t");
  check_time(t);
  const Frame f = frame(t);
  const double b_t = conditional_nodes(f, x).log_mass;
  const double gain = f.b_dot - f.a_dot * f.b / f.a;
  return f.a_dot / (2.0 * f.a) * x.squaredNorm() + gain * (f.a * f.a / f.b) * b_t;
}

Vector QuadratureDrift::score(double t, const Vector& x) const {
  require_gaussian_base("quadrature score");
  const double delta = config_.time_clamp;
  auto direct = [&](double s) -> Vector {
    const Frame f = frame(s);
    const Vector m = conditional_nodes(f, x).mean();
    const double a2 = f.a * f.a;
    return (f.b / a2) * m - x / a2;
  };
  if (!(t >= 0.0 && t <= 1.0)) throw DomainError("t=" + std::to_string(t) + " outside [0,1]");
  if (t >= delta && t <= 1.0 - delta) return direct(t);
  if (!config_.extrapolate) check_time(t);
  const double t1 = t < delta ? delta : 1.0 - delta;
  const double t2 = t < delta ? 2.0 * delta : 1.0 - 2.0 * delta;
  const Vector s1 = direct(t1);
  return s1 + (t - t1) / (t2 - t1) * (direct(t2) - s1);
}

// ---------------------------------------------------------------------------

double conditional_logdensity_gaussian_base(const PotentialDensity& mu1, const Schedule& schedule, double t,
                                            const Vector& x, const Vector& x1) {
  const Coefficients c = schedule.eval(t);
  if (!(c.alpha >= 1e-300)) throw TimeClampError("alpha_t vanishes at t=" + std::to_string(t));
  const double a2 = c.alpha * c.alpha;
  return -mu1.potential(x1) - 0.5 * (c.beta * c.beta / a2) * x1.squaredNorm() + (c.beta / a2) * x1.dot(x);
}

namespace {

QuadratureDrift gaussian_base_drift(const Measure& mu1, const Schedule& schedule, const QuadratureConfig& quad) {
  return QuadratureDrift(GaussianMeasure::standard(dimension(mu1)), mu1, schedule, quad);
}

}  // namespace

double log_partition_bt(const Measure& mu1, const Schedule& schedule, double t, const Vector& x,
                        const QuadratureConfig& quad) {
  return gaussian_base_drift(mu1, schedule, quad).log_partition(t, x);
}

DriftEvaluation drift_quadrature(const Measure& mu0, const Measure& mu1, const Schedule& schedule, double t,
                                 const Vector& x, const QuadratureConfig& quad, bool with_jacobian) {
  return QuadratureDrift(mu0, mu1, schedule, quad).evaluate(t, x, with_jacobian);
}

Matrix drift_jacobian(const Measure& mu0, const Measure& mu1, const Schedule& schedule, double t, const Vector& x,
                      const QuadratureConfig& quad, JacobianRoute route) {
  return QuadratureDrift(mu0, mu1, schedule, quad).jacobian(t, x, route);
}

double drift_potential_phi(const Measure& mu1, const Schedule& schedule, double t, const Vector& x,
                           const QuadratureConfig& quad) {
  return gaussian_base_drift(mu1, schedule, quad).potential_phi(t, x);
}

Vector score_quadrature(const Measure& mu1, const Schedule& schedule, double t, const Vector& x,
                        const QuadratureConfig& quad) {
  return gaussian_base_drift(mu1, schedule, quad).score(t, x);
}

}  // namespace siflow
