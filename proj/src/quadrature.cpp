#include "siflow/quadrature.hpp"

#include <gsl/gsl_integration.h>

#include <cmath>
#include <limits>
#include <map>
#include <memory>
#include <mutex>
#include <numbers>

#include "siflow/error.hpp"

namespace siflow {

HermiteRule::HermiteRule(int n) {
  if (n < 1) throw ParameterError("HermiteRule needs at least one node");
  // weight exp(-(x - a)^2 / 2) with a = 0: probabilists' nodes directly
  std::unique_ptr<gsl_integration_fixed_workspace, decltype(&gsl_integration_fixed_free)> ws(
      gsl_integration_fixed_alloc(gsl_integration_fixed_hermite, static_cast<size_t>(n), 0.0, 0.5, 0.0, 0.0),
      &gsl_integration_fixed_free);
  if (!ws) throw NumericError("GSL failed to build a Hermite rule");
  const double* x = gsl_integration_fixed_nodes(ws.get());
  const double* w = gsl_integration_fixed_weights(ws.get());
  const double log_norm = 0.5 * std::log(2.0 * std::numbers::pi);
  nodes_.assign(x, x + n);
  log_weights_.resize(n);
  for (int k = 0; k < n; ++k) {
    log_weights_[k] = w[k] > 0.0 ? std::log(w[k]) - log_norm : -std::numeric_limits<double>::infinity();
  }
}

std::shared_ptr<const HermiteRule> hermite_rule(int n) {
  static std::mutex mutex;
  static std::map<int, std::shared_ptr<const HermiteRule>> cache;
  std::lock_guard<std::mutex> lock(mutex);
  auto& slot = cache[n];
  if (!slot) slot = std::make_shared<const HermiteRule>(n);
  return slot;
}

Vector WeightedNodes::mean() const { return points * weights; }

Matrix WeightedNodes::covariance() const {
  const Vector m = mean();
  const Matrix centered = points.colwise() - m;
  return centered * weights.asDiagonal() * centered.transpose();
}

WeightedNodes integrate_exp(const ScalarField& log_f, const Vector& center, const Matrix& scale,
                            const HermiteRule& rule) {
  const int d = static_cast<int>(center.size());
  const int n = rule.size();
  long total = 1;
  for (int j = 0; j < d; ++j) total *= n;

  WeightedNodes out;
  out.points.resize(d, total);
  out.weights.resize(total);

  const double log_det = std::log(std::abs(scale.determinant()));
  const double log_const = log_det + 0.5 * d * std::log(2.0 * std::numbers::pi);

  std::vector<int> idx(d, 0);
  Vector z(d);
  Vector y(d);
  double max_lw = -std::numeric_limits<double>::infinity();
  for (long k = 0; k < total; ++k) {
    double lw = log_const;
    for (int j = 0; j < d; ++j) {
      z(j) = rule.nodes()[idx[j]];
      lw += rule.log_weights()[idx[j]] + 0.5 * z(j) * z(j);
    }
    y.noalias() = center + scale * z;
    lw += log_f(y);
    out.points.col(k) = y;
    out.weights(k) = lw;
    if (lw > max_lw) max_lw = lw;
    for (int j = 0; j < d; ++j) {
      if (++idx[j] < n) break;
      idx[j] = 0;
    }
  }
  if (!std::isfinite(max_lw)) throw NumericError("quadrature mass is not finite");
  double sum = 0.0;
  for (long k = 0; k < total; ++k) {
    const double w = std::exp(out.weights(k) - max_lw);
    out.weights(k) = w;
    sum += w;
  }
  out.weights /= sum;
  out.log_mass = max_lw + std::log(sum);
  if (!std::isfinite(out.log_mass)) throw NumericError("quadrature mass is not finite");
  return out;
}

MinimizeResult minimize_convex(const ConvexObjective& f, Vector x, double grad_tol, int max_iter) {
  const int d = static_cast<int>(x.size());
  double fx = f.value(x);
  Vector g = f.grad(x);
  Matrix h = f.hess(x);
  int it = 0;
  bool converged = false;
  bool polished = false;
  for (; it < max_iter; ++it) {
    // one extra full Newton step after reaching grad_tol puts the minimizer at
    // machine precision so it varies smoothly with the objective's parameters
    if (g.norm() <= grad_tol) polished = true;
    Eigen::LLT<Matrix> llt(h);
    Vector step;
    if (llt.info() == Eigen::Success) {
      step = -llt.solve(g);
    } else {
      const double shift = std::abs(min_eigenvalue(0.5 * (h + h.transpose()))) + 1e-8;
      step = -(h + shift * Matrix::Identity(d, d)).llt().solve(g);
    }
    if (polished) {
      x += step;
      h = f.hess(x);
      converged = true;
      ++it;
      break;
    }
    double lr = 1.0;
    Vector trial = x + step;
    double ft = f.value(trial);
    const double slope = g.dot(step);
    while (!(ft <= fx + 1e-4 * lr * slope) && lr > 1e-12) {
      lr *= 0.5;
      trial = x + lr * step;
      ft = f.value(trial);
    }
    if (lr <= 1e-12) {
      // no decrease available: at the floor of floating-point resolution
      converged = g.norm() <= std::max(grad_tol, 1e-6);
      break;
    }
    x = trial;
    fx = ft;
    g = f.grad(x);
    h = f.hess(x);
  }
  return {x, h, it, converged};
}

}  // namespace siflow
