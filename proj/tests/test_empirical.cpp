#include <doctest.h>

#include <cmath>
#include <numbers>

#include "siflow/drift.hpp"
#include "siflow/error.hpp"

using namespace siflow;

namespace {

Vector v1(double x) { return Vector::Constant(1, x); }

// Direct sum of Gaussian densities; fine when nothing underflows.
double naive_density(const Matrix& pts, double a, double b, double h, const Vector& x) {
  const double var = a * a + h;
  const int d = static_cast<int>(pts.cols());
  double s = 0.0;
  for (int i = 0; i < pts.rows(); ++i) {
    const double r2 = (b * pts.row(i).transpose() - x).squaredNorm();
    s += std::exp(-0.5 * r2 / var) / std::pow(2.0 * std::numbers::pi * var, 0.5 * d);
  }
  return s / pts.rows();
}

Vector naive_gradient(const Matrix& pts, double a, double b, double h, const Vector& x) {
  const double var = a * a + h;
  const int d = static_cast<int>(pts.cols());
  Vector g = Vector::Zero(d);
  for (int i = 0; i < pts.rows(); ++i) {
    const Vector r = b * pts.row(i).transpose() - x;
    g += r / var * std::exp(-0.5 * r.squaredNorm() / var) / std::pow(2.0 * std::numbers::pi * var, 0.5 * d);
  }
  return g / pts.rows();
}

}  // namespace

TEST_CASE("log-sum-exp mixture agrees with naive summation") {
  const SampleSet s = sample(GaussianMeasure::standard(2), 100, 9);
  for (double h : {0.0, 0.1}) {
    const EmpiricalDrift est(s, Schedule::trig(), h, 1e-4);
    for (double t : {0.2, 0.5, 0.8}) {
      const Coefficients c = Schedule::trig().eval(t);
      Vector x(2);
      x << 0.3, -0.6;
      const double p = naive_density(s.points, c.alpha, c.beta, h, x);
      CHECK(std::abs(std::exp(est.log_density(t, x)) - p) <= 1e-12);
      CHECK(std::log(p) == doctest::Approx(est.log_density(t, x)).epsilon(1e-12));
      // score = grad mu / max(eps, mu)
      const Vector expected = naive_gradient(s.points, c.alpha, c.beta, h, x) / std::max(1e-4, p);
      CHECK((est.score(t, x) - expected).norm() <= 1e-12);
    }
  }
}

TEST_CASE("thresholding caps the score where the mixture is thin") {
  const SampleSet s = sample(GaussianMeasure::standard(1), 20, 2);
  const EmpiricalDrift est(s, Schedule::trig(), 0.0, 1e-2);
  const double t = 0.5;
  const Coefficients c = Schedule::trig().eval(t);
  const Vector far = v1(8.0);
  const double p = naive_density(s.points, c.alpha, c.beta, 0.0, far);
  REQUIRE(p < 1e-2);
  const Vector expected = naive_gradient(s.points, c.alpha, c.beta, 0.0, far) / 1e-2;
  CHECK(std::abs(est.score(t, far)(0) - expected(0)) <= 1e-12 * std::max(1.0, std::abs(expected(0))));
  // the log-sum-exp path survives where the naive sum underflows
  CHECK(std::isfinite(est.log_density(1.0 - 1e-3, v1(40.0))));
  CHECK(est.score(1.0 - 1e-3, v1(40.0)).allFinite());
}

TEST_CASE("single sample at the origin") {
  SampleSet s;
  s.points = Matrix::Zero(1, 1);
  const EmpiricalDrift est(s, Schedule::trig(), 0.0, 1e-4);
  for (double t : {0.1, 0.5, 0.9}) CHECK(std::abs(empirical_drift(est, t, v1(0.0))(0)) < 1e-15);
}

TEST_CASE("standard target gives a nearly zero drift") {
  const SampleSet s = sample(GaussianMeasure::standard(1), 10000, 4);
  const EmpiricalDrift est(s, Schedule::trig(), 0.0, 1e-4);
  CHECK(std::abs(empirical_drift(est, 0.5, v1(0.5))(0)) <= 0.1);
  CHECK(std::abs(empirical_drift(est, 0.5, v1(0.0))(0)) <= 0.1);
}

TEST_CASE("drift conversion matches the closed form when fed the exact mixture") {
  // With mu1 = N(0, s2) the kernel estimate built from the exact law is Gaussian
  // with variance a^2 + b^2 s2; the bandwidth emulates that with one sample at 0.
  const double s2 = 0.25;
  SampleSet s;
  s.points = Matrix::Zero(1, 1);
  const GaussianClosedDrift exact(GaussianMeasure::standard(1), GaussianMeasure(v1(0.0), Matrix::Constant(1, 1, s2)),
                                  Schedule::linear());
  for (double t : {0.2, 0.5, 0.8}) {
    const Coefficients c = Schedule::linear().eval(t);
    const EmpiricalDrift est(s, Schedule::linear(), c.beta * c.beta * s2, 1e-300);
    for (double x : {-1.0, 0.4, 1.5}) {
      CHECK(empirical_drift(est, t, v1(x))(0) == doctest::Approx(exact.evaluate(t, v1(x), false).v(0)).epsilon(1e-12));
    }
  }
}

TEST_CASE("empirical Jacobian by finite differences") {
  const SampleSet s = sample(densities::gaussian_scaled(4.0), 500, 1);
  const EmpiricalDrift est(s, Schedule::trig(), 0.0, 1e-4);
  const DriftEvaluation e = est.evaluate(0.5, v1(0.3), true);
  REQUIRE(e.jac);
  const double h = 1e-4;
  const double fd = (est.drift(0.5, v1(0.3 + h))(0) - est.drift(0.5, v1(0.3 - h))(0)) / (2 * h);
  CHECK((*e.jac)(0, 0) == doctest::Approx(fd).epsilon(1e-6));
}

TEST_CASE("parameter validation") {
  SampleSet empty;
  empty.points = Matrix::Zero(0, 1);
  CHECK_THROWS_AS(EmpiricalDrift(empty, Schedule::trig(), 0.0, 1e-4), ParameterError);
  const SampleSet s = sample(GaussianMeasure::standard(1), 10, 0);
  CHECK_THROWS_AS(EmpiricalDrift(s, Schedule::trig(), -1.0, 1e-4), ParameterError);
  CHECK_THROWS_AS(EmpiricalDrift(s, Schedule::trig(), 0.0, 0.0), ParameterError);
  const EmpiricalDrift est(s, Schedule::trig(), 0.0, 1e-4);
  CHECK_THROWS_AS(est.score(0.0, v1(0.0)), TimeClampError);
  CHECK_THROWS_AS(est.score(1.0, v1(0.0)), TimeClampError);
}
