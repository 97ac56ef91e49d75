#include <doctest.h>

#include <cmath>
#include <numbers>
#include <random>

#include "siflow/drift.hpp"
#include "siflow/error.hpp"

using namespace siflow;

namespace {

Vector vec(std::initializer_list<double> v) {
  Vector r(static_cast<Eigen::Index>(v.size()));
  Eigen::Index i = 0;
  for (double x : v) r(i++) = x;
  return r;
}

Vector v1(double x) { return Vector::Constant(1, x); }

Matrix diag(std::initializer_list<double> v) { return vec(v).asDiagonal(); }

// Centered differences of a vector field, column j = d f / d x_j.
template <class F>
Matrix fd_jacobian(F f, const Vector& x, double h = 1e-5) {
  const int d = static_cast<int>(x.size());
  Matrix j(d, d);
  for (int k = 0; k < d; ++k) {
    Vector xp = x, xm = x;
    xp(k) += h;
    xm(k) -= h;
    j.col(k) = (f(xp) - f(xm)) / (2.0 * h);
  }
  return j;
}

template <class F>
Vector fd_gradient(F f, const Vector& x, double h = 1e-5) {
  Vector g(x.size());
  for (int k = 0; k < x.size(); ++k) {
    Vector xp = x, xm = x;
    xp(k) += h;
    xm(k) -= h;
    g(k) = (f(xp) - f(xm)) / (2.0 * h);
  }
  return g;
}

// Hand-rolled closed form in 1D: m_t, Sigma_t and their derivatives.
double closed_1d(double m0, double s0, double m1, double s1, const Coefficients& c, double x) {
  const double m = c.alpha * m0 + c.beta * m1;
  const double md = c.alpha_dot * m0 + c.beta_dot * m1;
  const double s = c.alpha * c.alpha * s0 + c.beta * c.beta * s1;
  const double sd = 2.0 * c.alpha * c.alpha_dot * s0 + 2.0 * c.beta * c.beta_dot * s1;
  return md + 0.5 * sd / s * (x - m);
}

}  // namespace

TEST_CASE("closed-form Gaussian drift") {
  const GaussianMeasure n01 = GaussianMeasure::standard(1);
  SUBCASE("identical endpoints, variance preserving schedule") {
    for (double t : {0.0, 0.3, 0.7, 1.0}) {
      for (double x : {-2.0, 0.0, 1.5}) CHECK(std::abs(drift_gaussian(n01, n01, Schedule::trig(), t, v1(x)).v(0)) < 1e-14);
    }
  }
  SUBCASE("contracting target, linear schedule") {
    const DriftEvaluation e = drift_gaussian(n01, densities::gaussian_scaled(4.0), Schedule::linear(), 0.5, v1(1.0));
    CHECK(e.v(0) == doctest::Approx(-1.2).epsilon(1e-14));
    REQUIRE(e.jac);
    CHECK((*e.jac)(0, 0) == doctest::Approx(-1.2).epsilon(1e-14));
  }
  SUBCASE("shifted means, x on the mean path") {
    const GaussianMeasure mu1(v1(1.0), Matrix::Identity(1, 1));
    CHECK(drift_gaussian(n01, mu1, Schedule::linear(), 0.3, v1(0.3)).v(0) == doctest::Approx(1.0).epsilon(1e-14));
  }
  SUBCASE("agrees with the hand formula in 1D") {
    const GaussianMeasure mu0(v1(0.5), Matrix::Constant(1, 1, 2.0));
    const GaussianMeasure mu1(v1(-1.0), Matrix::Constant(1, 1, 0.3));
    for (double t : {0.0, 0.2, 0.5, 0.9, 1.0}) {
      for (double x : {-1.0, 0.0, 2.0}) {
        const double v = drift_gaussian(mu0, mu1, Schedule::trig(), t, v1(x)).v(0);
        CHECK(v == doctest::Approx(closed_1d(0.5, 2.0, -1.0, 0.3, Schedule::trig().eval(t), x)).epsilon(1e-13));
      }
    }
  }
  SUBCASE("batch matches pointwise") {
    const GaussianClosedDrift d(GaussianMeasure(vec({1, 0}), diag({1, 2})), GaussianMeasure(vec({0, 1}), diag({3, 0.5})),
                                Schedule::trig());
    Matrix pts(3, 2);
    pts << 0, 0, 1, -1, 2.5, 0.3;
    const Matrix b = d.evaluate_batch(0.4, pts);
    for (int i = 0; i < 3; ++i) CHECK((b.row(i).transpose() - d.evaluate(0.4, pts.row(i).transpose(), false).v).norm() < 1e-14);
  }
  SUBCASE("non-commuting covariances are unsupported") {
    Matrix c(2, 2);
    c << 2, 0.5, 0.5, 1;
    CHECK_THROWS_AS(GaussianClosedDrift(GaussianMeasure(Vector::Zero(2), diag({1, 3})), GaussianMeasure(Vector::Zero(2), c),
                                        Schedule::linear()),
                    UnsupportedCaseError);
  }
}

TEST_CASE("closed-form flow map") {
  const GaussianMeasure n0 = GaussianMeasure::standard(2);
  const Vector x = vec({0.7, -1.3});
  CHECK((flowmap_gaussian_closed(n0, densities::gaussian_scaled(4.0, 2), Schedule::trig(), 0.0, x) - x).norm() < 1e-15);
  CHECK((flowmap_gaussian_closed(n0, densities::gaussian_scaled(4.0, 2), Schedule::linear(), 1.0, x) - 0.5 * x).norm() <
        1e-15);

  const GaussianMeasure mu0(vec({1.0, -2.0}), diag({3.0, 1.0}));
  const GaussianMeasure mu1(vec({0.0, 0.5}), diag({1.0, 4.0}));
  const AffineMap ot = gaussian_ot_map(mu0, mu1);
  CHECK((flowmap_gaussian_closed(mu0, mu1, Schedule::trig(), 1.0, x) - ot(x)).norm() < 1e-14);
  CHECK((flowmap_gaussian_closed(mu0, mu1, Schedule::trig(), 0.0, x) - x).norm() < 1e-15);
}

TEST_CASE("Gaussian-base conditional log density") {
  const PotentialDensity n1 = GaussianMeasure::standard(1).to_potential();
  const PotentialDensity q = densities::quartic1d();
  // t = 0: only -V1 remains
  for (double x1 : {-1.0, 0.3, 2.0}) {
    CHECK(conditional_logdensity_gaussian_base(q, Schedule::trig(), 0.0, v1(0.8), v1(x1)) ==
          doctest::Approx(-q.potential(v1(x1))));
  }
  // Gaussian V1: completing the square gives mean b x / (a^2 + b^2), variance a^2 / (a^2 + b^2)
  const double t = 0.35, x = 1.1;
  const Coefficients c = Schedule::linear().eval(t);
  const double s = c.alpha * c.alpha + c.beta * c.beta;
  const double mean = c.beta * x / s, var = c.alpha * c.alpha / s;
  const double l0 = conditional_logdensity_gaussian_base(n1, Schedule::linear(), t, v1(x), v1(mean));
  for (double dx : {-0.5, 0.2, 1.0}) {
    const double l = conditional_logdensity_gaussian_base(n1, Schedule::linear(), t, v1(x), v1(mean + dx));
    CHECK(l - l0 == doctest::Approx(-dx * dx / (2.0 * var)).epsilon(1e-12));
  }
  const Moments m = QuadratureDrift(GaussianMeasure::standard(1), n1, Schedule::linear()).conditional_moments(t, v1(x));
  CHECK(m.mean(0) == doctest::Approx(mean).epsilon(1e-10));
  CHECK(m.cov(0, 0) == doctest::Approx(var).epsilon(1e-10));
  // x = 0 with even V1: centred conditional
  CHECK(std::abs(QuadratureDrift(GaussianMeasure::standard(1), q, Schedule::trig()).conditional_moments(0.4, v1(0.0)).mean(0)) <
        1e-12);
}

TEST_CASE("log partition") {
  const Measure n1 = GaussianMeasure::standard(1);
  for (const Schedule& s : {Schedule::linear(), Schedule::trig()}) {
    for (double t : {0.0, 0.1, 0.5, 0.9, 0.999}) {
      for (double x : {-2.0, 0.0, 0.7}) {
        const Coefficients c = s.eval(t);
        const double a2 = c.alpha * c.alpha, b2 = c.beta * c.beta;
        const double exact =
            0.5 * (b2 / a2) * x * x / (a2 + b2) + 0.5 * std::log(2.0 * std::numbers::pi * a2 / (a2 + b2));
        CAPTURE(t);
        CHECK(log_partition_bt(n1, s, t, v1(x)) == doctest::Approx(exact).epsilon(1e-10));
      }
    }
  }
  CHECK_THROWS_AS(log_partition_bt(n1, Schedule::trig(), 0.9995, v1(0.0)), TimeClampError);

  // exponential-family identities against quadrature moments
  const Measure q = densities::quartic1d();
  const QuadratureDrift qd(GaussianMeasure::standard(1), q, Schedule::trig());
  std::mt19937_64 gen(3);
  std::uniform_real_distribution<double> ut(0.05, 0.95), ux(-2.0, 2.0);
  for (int i = 0; i < 10; ++i) {
    const double t = ut(gen);
    const Vector x = v1(ux(gen));
    const Coefficients c = Schedule::trig().eval(t);
    const double ratio = c.beta / (c.alpha * c.alpha);
    const Moments m = qd.conditional_moments(t, x);
    const auto b = [&](const Vector& y) { return qd.log_partition(t, y); };
    CAPTURE(t);
    CHECK(std::abs(fd_gradient(b, x)(0) - ratio * m.mean(0)) <= 1e-5);
    const double h = 1e-4;
    const double second = (b(x + v1(h)) - 2.0 * b(x) + b(x - v1(h))) / (h * h);
    CHECK(std::abs(second - ratio * ratio * m.cov(0, 0)) <= 1e-5 * std::max(1.0, ratio * ratio));
  }
  CHECK(std::abs(fd_gradient([&](const Vector& y) { return qd.log_partition(0.6, y); }, v1(0.0))(0)) < 1e-9);
}

TEST_CASE("quadrature drift matches the closed form on Gaussians") {
  struct Case {
    GaussianMeasure mu0, mu1;
    Schedule s;
  };
  const std::vector<Case> cases = {
      {GaussianMeasure::standard(1), densities::gaussian_scaled(4.0), Schedule::linear()},
      {GaussianMeasure::standard(1), GaussianMeasure(v1(1.0), Matrix::Constant(1, 1, 2.0)), Schedule::trig()},
      {GaussianMeasure(v1(-0.5), Matrix::Constant(1, 1, 0.5)), GaussianMeasure(v1(1.0), Matrix::Constant(1, 1, 3.0)),
       Schedule::trig()},
  };
  for (const Case& cs : cases) {
    const GaussianClosedDrift exact(cs.mu0, cs.mu1, cs.s);
    const QuadratureDrift quad(cs.mu0, cs.mu1, cs.s);
    double worst = 0.0, worst_jac = 0.0;
    for (int i = 0; i < 9; ++i) {
      const double t = 0.05 + 0.9 * i / 8.0;
      for (int j = 0; j < 9; ++j) {
        const Vector x = v1(-2.0 + 4.0 * j / 8.0);
        const DriftEvaluation q = quad.evaluate(t, x, true);
        const DriftEvaluation e = exact.evaluate(t, x, true);
        worst = std::max(worst, (q.v - e.v).norm());
        worst_jac = std::max(worst_jac, (*q.jac - *e.jac).norm());
      }
    }
    CHECK(worst <= 1e-6);
    CHECK(worst_jac <= 1e-6);
  }
}

TEST_CASE("quadrature drift in two dimensions") {
  const GaussianMeasure mu0(vec({0.5, 0.0}), diag({1.0, 2.0}));
  const GaussianMeasure mu1(vec({0.0, -1.0}), diag({0.5, 1.5}));
  QuadratureConfig cfg;
  cfg.nodes_per_dim = 32;
  const QuadratureDrift quad(mu0, mu1, Schedule::trig(), cfg);
  const GaussianClosedDrift exact(mu0, mu1, Schedule::trig());
  for (double t : {0.1, 0.5, 0.9}) {
    const Vector x = vec({0.3, -0.8});
    const DriftEvaluation q = quad.evaluate(t, x, true);
    CHECK((q.v - exact.evaluate(t, x, false).v).norm() <= 1e-6);
    CHECK((*q.jac - *exact.evaluate(t, x, true).jac).norm() <= 1e-6);
  }
}

TEST_CASE("symmetry of the quadrature drift") {
  const Measure q = densities::quartic1d();
  const Measure n1 = GaussianMeasure::standard(1);
  CHECK(std::abs(drift_quadrature(q, q, Schedule::linear(), 0.5, v1(0.0)).v(0)) < 1e-12);
  for (double t : {0.001, 0.2, 0.5, 0.8, 0.999}) {
    for (double x : {0.3, 1.0, 2.5}) {
      const double vp = drift_quadrature(n1, q, Schedule::trig(), t, v1(x)).v(0);
      const double vm = drift_quadrature(n1, q, Schedule::trig(), t, v1(-x)).v(0);
      CHECK(std::isfinite(vp));
      CHECK(std::abs(vp + vm) <= 1e-10 * std::max(1.0, std::abs(vp)));
    }
  }
}

TEST_CASE("quadrature modes agree on a smooth interior case") {
  const Measure n1 = GaussianMeasure::standard(1);
  const Measure lc = densities::logcosh1d();
  const DriftEvaluation ref = drift_quadrature(n1, lc, Schedule::trig(), 0.5, v1(0.8));
  for (QuadratureMode mode : {QuadratureMode::hermite_centered, QuadratureMode::base_proposal}) {
    QuadratureConfig cfg;
    cfg.mode = mode;
    cfg.nodes_per_dim = 128;
    CHECK(std::abs(drift_quadrature(n1, lc, Schedule::trig(), 0.5, v1(0.8), cfg).v(0) - ref.v(0)) <= 1e-5);
  }
}

TEST_CASE("Jacobian routes") {
  const Measure n1 = GaussianMeasure::standard(1);
  const Measure q = densities::quartic1d();
  const Measure lc = densities::logcosh1d();

  SUBCASE("finite-difference cross-check on the quartic target") {
    const QuadratureDrift d(n1, q, Schedule::trig());
    std::mt19937_64 gen(11);
    std::uniform_real_distribution<double> ut(0.05, 0.95), ux(-2.0, 2.0);
    for (int i = 0; i < 20; ++i) {
      const double t = ut(gen);
      const Vector x = v1(ux(gen));
      const Matrix fd = fd_jacobian([&](const Vector& y) { return d.evaluate(t, y, false).v; }, x);
      CAPTURE(t);
      CHECK((d.jacobian(t, x, JacobianRoute::gaussian_base) - fd).norm() <= 1e-5);
      CHECK((d.jacobian(t, x, JacobianRoute::general) - fd).norm() <= 1e-5);
    }
  }
  SUBCASE("general route with a non-Gaussian base") {
    const QuadratureDrift d(lc, q, Schedule::trig());
    CHECK_FALSE(d.gaussian_base());
    for (double t : {0.2, 0.5, 0.8}) {
      for (double x : {-1.0, 0.4}) {
        const Matrix fd = fd_jacobian([&](const Vector& y) { return d.evaluate(t, y, false).v; }, v1(x));
        CHECK((d.jacobian(t, v1(x)) - fd).norm() <= 1e-5);
      }
    }
  }
  SUBCASE("two-dimensional routes agree and are symmetric") {
    Matrix c(2, 2);
    c << 1.0, 0.4, 0.4, 0.7;
    QuadratureConfig cfg;
    cfg.nodes_per_dim = 32;
    const QuadratureDrift d(GaussianMeasure::standard(2), GaussianMeasure(vec({0.5, -0.5}), c), Schedule::trig(), cfg);
    const Vector x = vec({0.3, 0.9});
    const Matrix a = d.jacobian(0.6, x, JacobianRoute::gaussian_base);
    const Matrix b = d.jacobian(0.6, x, JacobianRoute::general);
    CHECK((a - a.transpose()).norm() <= 1e-8);
    CHECK((a - b).norm() <= 1e-6);
    const Matrix fd = fd_jacobian([&](const Vector& y) { return d.evaluate(0.6, y, false).v; }, x);
    CHECK((a - fd).norm() <= 1e-5);
  }
  SUBCASE("log cosh target is symmetric and bounded") {
    const QuadratureDrift d(n1, lc, Schedule::trig());
    for (double t : {0.1, 0.5, 0.9}) {
      const Matrix j = d.jacobian(t, v1(0.5), JacobianRoute::gaussian_base);
      CHECK((j - j.transpose()).norm() <= 1e-8);
      CHECK(j.allFinite());
    }
  }
  SUBCASE("Gaussian-base route needs a standard base") {
    const QuadratureDrift d(lc, q, Schedule::trig());
    CHECK_THROWS(d.jacobian(0.5, v1(0.0), JacobianRoute::gaussian_base));
  }
}

TEST_CASE("velocity potential") {
  const Measure q = densities::quartic1d();
  const QuadratureDrift d(GaussianMeasure::standard(1), q, Schedule::trig());
  std::mt19937_64 gen(5);
  std::uniform_real_distribution<double> ut(0.05, 0.95), ux(-2.0, 2.0);
  for (int i = 0; i < 10; ++i) {
    const double t = ut(gen);
    const Vector x = v1(ux(gen));
    const Vector g = fd_gradient([&](const Vector& y) { return d.potential_phi(t, y); }, x);
    CHECK(std::abs(g(0) - d.evaluate(t, x, false).v(0)) <= 1e-5);
  }
  CHECK(std::abs(fd_gradient([&](const Vector& y) { return d.potential_phi(0.4, y); }, v1(0.0))(0)) < 1e-9);

  // N(0,1) target with a variance-preserving schedule: phi is flat
  const Measure n1 = GaussianMeasure::standard(1);
  const double p0 = drift_potential_phi(n1, Schedule::trig(), 0.3, v1(0.0));
  for (double x : {-1.5, 0.5, 2.0}) {
    CHECK(drift_potential_phi(n1, Schedule::trig(), 0.3, v1(x)) == doctest::Approx(p0).epsilon(1e-10));
    CHECK(std::abs(drift_quadrature(n1, n1, Schedule::trig(), 0.3, v1(x)).v(0)) < 1e-10);
  }
}

TEST_CASE("score by quadrature") {
  const Measure n1 = GaussianMeasure::standard(1);
  for (double t : {0.1, 0.5, 0.9}) {
    for (double x : {-1.0, 0.5, 2.0}) CHECK(score_quadrature(n1, Schedule::trig(), t, v1(x))(0) == doctest::Approx(-x).epsilon(1e-9));
  }
  const double sigma2 = 0.3;
  const Measure mu1 = GaussianMeasure(v1(0.0), Matrix::Constant(1, 1, sigma2));
  for (double t : {0.2, 0.6}) {
    const Coefficients c = Schedule::linear().eval(t);
    const double x = 0.9;
    CHECK(score_quadrature(mu1, Schedule::linear(), t, v1(x))(0) ==
          doctest::Approx(-x / (c.alpha * c.alpha + c.beta * c.beta * sigma2)).epsilon(1e-9));
  }
  CHECK(std::abs(score_quadrature(densities::quartic1d(), Schedule::trig(), 0.5, v1(0.0))(0)) < 1e-12);
}

TEST_CASE("score to drift conversion against the Gaussian oracle") {
  const GaussianMeasure mu0 = GaussianMeasure::standard(2);
  const GaussianMeasure mu1(vec({1.0, -0.5}), diag({0.25, 2.0}));
  const GaussianClosedScore score(mu0, mu1, Schedule::trig());
  const GaussianClosedDrift drift(mu0, mu1, Schedule::trig());
  for (double t : {0.05, 0.3, 0.5, 0.7, 0.95}) {
    for (const Vector& x : {vec({0.0, 0.0}), vec({1.0, 2.0}), vec({-1.5, 0.3})}) {
      const Vector v = drift_from_score(Schedule::trig(), t, x, score.score(t, x));
      CHECK((v - drift.evaluate(t, x, false).v).norm() <= 1e-12 * std::max(1.0, v.norm()));
    }
  }
  CHECK_THROWS_AS(drift_from_score(Schedule::trig(), 0.0, vec({0, 0}), vec({0, 0})), TimeClampError);
  CHECK_THROWS_AS(drift_from_score(Schedule::linear(), 1.0, vec({0, 0}), vec({0, 0})), TimeClampError);
}

TEST_CASE("closed-form score") {
  const GaussianMeasure mu0 = GaussianMeasure::standard(1);
  const GaussianMeasure mu1 = densities::gaussian_scaled(4.0);
  const GaussianClosedScore s(mu0, mu1, Schedule::linear());
  const GaussianMeasure mt = gaussian_interpolant_marginal(mu0, mu1, Schedule::linear(), 0.5);
  CHECK(s.score(0.5, v1(1.0))(0) == doctest::Approx(-1.0 / mt.cov()(0, 0)));
}

TEST_CASE("time clamp and extrapolation") {
  const Measure n1 = GaussianMeasure::standard(1);
  const Measure q = densities::quartic1d();
  const QuadratureDrift d(n1, q, Schedule::trig());
  CHECK(d.valid_range().start == 1e-3);
  CHECK(d.valid_range().end == 1.0 - 1e-3);

  // extrapolated endpoints follow the line through the two nearest interior samples
  const Vector x = v1(0.7);
  for (const auto& [t, t1, t2] : {std::tuple{0.0, 1e-3, 2e-3}, std::tuple{1.0, 1.0 - 1e-3, 1.0 - 2e-3}}) {
    const double a = d.evaluate(t1, x, false).v(0);
    const double b = d.evaluate(t2, x, false).v(0);
    CHECK(d.evaluate(t, x, false).v(0) == doctest::Approx(a + (a - b) * (t - t1) / (t1 - t2)).epsilon(1e-12));
  }
  // and approach the closed form on Gaussian endpoints
  const GaussianMeasure g1 = densities::gaussian_scaled(2.0);
  const QuadratureDrift dg(n1, g1, Schedule::trig());
  const GaussianClosedDrift eg(GaussianMeasure::standard(1), g1, Schedule::trig());
  for (double t : {0.0, 1.0}) CHECK(std::abs(dg.evaluate(t, x, false).v(0) - eg.evaluate(t, x, false).v(0)) <= 1e-4);

  QuadratureConfig strict;
  strict.extrapolate = false;
  const QuadratureDrift ds(n1, q, Schedule::trig(), strict);
  CHECK_THROWS_AS(ds.evaluate(0.0, x, false), TimeClampError);
  CHECK_THROWS_AS(ds.evaluate(0.9995, x, false), TimeClampError);
  CHECK_NOTHROW(ds.evaluate(0.5, x, false));
  CHECK_THROWS_AS(d.evaluate(1.5, x, false), DomainError);
}

TEST_CASE("quadrature configuration validation") {
  const Measure n1 = GaussianMeasure::standard(1);
  QuadratureConfig c;
  c.nodes_per_dim = 4;
  CHECK_THROWS_AS(QuadratureDrift(n1, n1, Schedule::trig(), c), ParameterError);
  c = {};
  c.time_clamp = 0.3;
  CHECK_THROWS_AS(QuadratureDrift(n1, n1, Schedule::trig(), c), ParameterError);
  CHECK_THROWS(QuadratureDrift(GaussianMeasure::standard(4), GaussianMeasure::standard(4), Schedule::trig()));
}
