#include "siflow/verify.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

#include "siflow/error.hpp"
#include "siflow/flow.hpp"
#include "siflow/rng.hpp"

namespace siflow {

std::unique_ptr<DriftBackend> make_drift(const Measure& mu0, const Measure& mu1, const Schedule& schedule,
                                         BackendKind kind, const QuadratureConfig& quad) {
  const GaussianMeasure* g0 = as_gaussian(mu0);
  const GaussianMeasure* g1 = as_gaussian(mu1);
  bool closed_ok = g0 && g1 && g0->dim() == g1->dim();
  if (closed_ok) {
    const double scale = std::max(1.0, g0->cov().norm() * g1->cov().norm());
    closed_ok = commutes(g0->cov(), g1->cov(), 1e-10 * scale);
  }
  if (kind == BackendKind::gaussian_closed || (kind == BackendKind::automatic && closed_ok)) {
    if (!g0 || !g1) throw UnsupportedCaseError("closed-form drift needs Gaussian endpoints");
    return std::make_unique<GaussianClosedDrift>(*g0, *g1, schedule);
  }
  return std::make_unique<QuadratureDrift>(mu0, mu1, schedule, quad);
}

std::vector<Vector> proxy_grid(const Moments& m0, const Moments& m1, const Schedule& schedule, double t, int points,
                               double n_sd) {
  if (points < 1) throw ParameterError("proxy grid needs at least one point per axis");
  const Coefficients c = schedule.eval(t);
  const Vector mean = c.alpha * m0.mean + c.beta * m1.mean;
  const Vector sd = (c.alpha * c.alpha * m0.cov + c.beta * c.beta * m1.cov).diagonal().cwiseSqrt();
  const int d = static_cast<int>(mean.size());
  auto axis = [&](int j, int k) {
    if (points == 1) return mean(j);
    return mean(j) - n_sd * sd(j) + 2.0 * n_sd * sd(j) * k / (points - 1);
  };
  long total = 1;
  for (int j = 0; j < d; ++j) total *= points;
  std::vector<Vector> out;
  out.reserve(total);
  std::vector<int> idx(d, 0);
  for (long n = 0; n < total; ++n) {
    Vector x(d);
    for (int j = 0; j < d; ++j) x(j) = axis(j, idx[j]);
    out.push_back(std::move(x));
    for (int j = 0; j < d; ++j) {
      if (++idx[j] < points) break;
      idx[j] = 0;
    }
  }
  return out;
}

std::vector<double> measure_drift_norms(const DriftBackend& drift, const std::vector<std::vector<Vector>>& x_grids,
                                        const std::vector<double>& t_grid) {
  if (t_grid.empty() || x_grids.size() != t_grid.size()) throw ParameterError("need one x grid per time");
  std::vector<double> out;
  out.reserve(t_grid.size());
  for (std::size_t k = 0; k < t_grid.size(); ++k) {
    if (x_grids[k].empty()) throw ParameterError("empty x grid");
    double worst = 0.0;
    for (const Vector& x : x_grids[k]) worst = std::max(worst, op_norm(*drift.evaluate(t_grid[k], x, true).jac));
    out.push_back(worst);
  }
  return out;
}

namespace {

enum class Compare { max_eigenvalue, op_norm };

struct VerifySetup {
  std::string name;
  Compare compare;
  bool symmetry_is_hard;
  std::function<double(double)> lambda;
  std::function<std::vector<double>(const std::vector<double>&)> flow_bound;  // on the flow grid
};

int default_points(int d, int one, int two, int three) { return d == 1 ? one : d == 2 ? two : three; }

std::string describe_grid(const std::vector<double>& times, int x_points, double n_sd, int d, int steps, int starts) {
  std::ostringstream os;
  os << times.size() << " times in [" << times.front() << ", " << times.back() << "]; " << x_points << "^" << d
     << " x points over +-" << n_sd << " sd; " << starts << "^" << d << " trajectories of " << steps
     << " RK4 steps";
  return os.str();
}

BoundReport run_verify(const VerifySetup& setup, const Measure& mu0, const Measure& mu1, const Schedule& schedule,
                       const VerifyOptions& opt) {
  const std::unique_ptr<DriftBackend> drift = make_drift(mu0, mu1, schedule, opt.backend, opt.quad);
  const bool closed = drift->name() == "gaussian_closed";
  const int d = drift->dim();
  const TimeRange range = drift->valid_range();

  std::vector<double> times = opt.times;
  if (times.empty()) {
    if (closed) times.push_back(0.0);
    for (int k = 1; k <= 19; ++k) times.push_back(0.05 * k);
    if (closed) times.push_back(1.0);
  }
  const int x_points = opt.x_points > 0 ? opt.x_points : default_points(d, 81, 21, 9);
  const int starts = opt.flow_starts > 0 ? opt.flow_starts : default_points(d, 9, 5, 3);

  BoundReport r;
  r.name = setup.name;
  r.backend = drift->name();
  r.tolerance = std::isnan(opt.tol) ? (closed ? 1e-6 : 1e-4) : opt.tol;
  r.grid = describe_grid(times, x_points, opt.n_sd, d, opt.flow_steps, starts);

  const Moments m0 = moments_of(mu0);
  const Moments m1 = moments_of(mu1);

  // flow-map Jacobians along trajectories from the start of the valid range
  std::vector<double> flow_times;
  std::vector<double> df_max;
  for (const Vector& x0 : proxy_grid(m0, m1, schedule, range.start, starts, opt.n_sd)) {
    const FlowResult f = integrate_flow(*drift, x0, opt.flow_steps, true);
    if (flow_times.empty()) {
      flow_times = f.times;
      df_max.assign(f.times.size(), 0.0);
    }
    for (std::size_t k = 0; k < f.op_norms.size(); ++k) df_max[k] = std::max(df_max[k], f.op_norms[k]);
  }
  const std::vector<double> df_bound = setup.flow_bound(flow_times);
  for (std::size_t k = 0; k < flow_times.size(); ++k) {
    r.worst_df_margin = std::min(r.worst_df_margin, df_bound[k] - df_max[k]);
  }
  r.endpoint_time = flow_times.back();
  r.endpoint_df = df_max.back();
  r.endpoint_bound = df_bound.back();

  for (double t : times) {
    BoundRow row{};
    row.t = t;
    row.lambda = setup.lambda(t);
    double measured = -std::numeric_limits<double>::infinity();
    for (const Vector& x : proxy_grid(m0, m1, schedule, t, x_points, opt.n_sd)) {
      const Matrix jac = *drift->evaluate(t, x, true).jac;
      row.symmetry = std::max(row.symmetry, asymmetry(jac));
      row.dv_opnorm = std::max(row.dv_opnorm, op_norm(jac));
      if (setup.compare == Compare::max_eigenvalue) {
        measured = std::max(measured, max_eigenvalue(0.5 * (jac + jac.transpose())));
      }
    }
    row.measured_dv = setup.compare == Compare::op_norm ? row.dv_opnorm : measured;
    row.margin_dv = row.lambda - row.measured_dv;
    const auto nearest = std::min_element(flow_times.begin(), flow_times.end(), [t](double a, double b) {
      return std::abs(a - t) < std::abs(b - t);
    });
    const std::size_t k = static_cast<std::size_t>(nearest - flow_times.begin());
    row.t_flow = flow_times[k];
    row.flow_bound = df_bound[k];
    row.measured_df = df_max[k];
    row.margin_df = row.flow_bound - row.measured_df;
    r.worst_dv_margin = std::min(r.worst_dv_margin, row.margin_dv);
    r.max_symmetry_residual = std::max(r.max_symmetry_residual, row.symmetry);
    r.rows.push_back(row);
  }
  r.worst_margin = std::min(r.worst_dv_margin, r.worst_df_margin);

  if (setup.symmetry_is_hard && r.max_symmetry_residual > 1e-8) {
    r.failures.push_back("velocity Jacobian is not symmetric (residual " + std::to_string(r.max_symmetry_residual) +
                         ")");
  }
  if (r.worst_dv_margin < -r.tolerance) {
    r.failures.push_back("Jacobian bound violated (worst margin " + std::to_string(r.worst_dv_margin) + ")");
  }
  if (r.worst_df_margin < -r.tolerance) {
    r.failures.push_back("flow-map bound violated (worst margin " + std::to_string(r.worst_df_margin) + ")");
  }
  r.pass = r.failures.empty();
  return r;
}

}  // namespace

BoundReport verify_thm1(const Measure& mu1, double kappa, const Schedule& schedule, const VerifyOptions& opt) {
  if (!(kappa > 0.0)) throw DomainError("verify_thm1 needs kappa > 0");
  const Measure mu0 = GaussianMeasure::standard(dimension(mu1));
  VerifySetup setup;
  setup.name = "thm1";
  setup.compare = Compare::max_eigenvalue;
  setup.symmetry_is_hard = true;
  setup.lambda = [&](double t) { return thm1_lambda(schedule, t, kappa); };
  setup.flow_bound = [&](const std::vector<double>& ts) { return thm1_curve(schedule, kappa, ts).flow_bound; };
  BoundReport r = run_verify(setup, mu0, mu1, schedule, opt);
  r.constants["kappa"] = kappa;
  r.constants["flow_bound_at_1"] = thm1_flow_bound(schedule, 1.0, kappa);
  return r;
}

BoundReport verify_thm2(const Measure& mu0, const Measure& mu1, double kappa0, double eta0, double kappa1,
                        const Schedule& schedule, const VerifyOptions& opt) {
  // validates admissibility and constants before any work
  thm2_lambda(schedule, 0.5, kappa0, eta0, kappa1);
  VerifySetup setup;
  setup.name = "thm2";
  setup.compare = Compare::op_norm;
  setup.symmetry_is_hard = false;
  setup.lambda = [&](double t) { return thm2_curve(schedule, kappa0, eta0, kappa1, {t}).lambda.front(); };
  setup.flow_bound = [&](const std::vector<double>& ts) {
    return thm2_curve(schedule, kappa0, eta0, kappa1, ts).flow_bound;
  };
  BoundReport r = run_verify(setup, mu0, mu1, schedule, opt);
  r.constants["kappa0"] = kappa0;
  r.constants["eta0"] = eta0;
  r.constants["kappa1"] = kappa1;
  if (kappa0 > 0.0 && kappa1 > 0.0) r.constants["corollary"] = corollary_constant(kappa0, eta0, kappa1);
  if (kappa1 > 0.0 && kappa1 <= eta0) r.constants["caffarelli"] = caffarelli_constant(eta0, kappa1);
  return r;
}

BrascampLiebResult brascamp_lieb_check_1d(const PotentialDensity& mu, const std::function<double(double)>& f,
                                          const std::function<double(double)>& df, int nodes_per_dim) {
  if (mu.dim != 1) throw PreconditionError("Brascamp-Lieb check is one-dimensional");
  if (!(mu.kappa > 0.0)) throw PreconditionError("Brascamp-Lieb check needs kappa > 0");
  const double mean = expectation(mu, [&](const Vector& x) { return f(x(0)); }, nodes_per_dim);
  const double var = expectation(
      mu,
      [&](const Vector& x) {
        const double c = f(x(0)) - mean;
        return c * c;
      },
      nodes_per_dim);
  const double bound = expectation(
      mu,
      [&](const Vector& x) {
        const double g = df(x(0));
        return g * g / mu.hess(x)(0, 0);
      },
      nodes_per_dim);
  return {var, bound, bound - var, var <= bound + 1e-8};
}

double lemma_gap(const Matrix& a, const Matrix& b, const Matrix& c, const Matrix& d) {
  const Matrix diff = c * d * c - a * b * a;
  return min_eigenvalue(0.5 * (diff + diff.transpose()));
}

LemmaReport matrix_lemma_check(int trials, int dim, std::uint64_t seed, LemmaMode mode) {
  if (trials < 1) throw ParameterError("matrix_lemma_check needs trials >= 1");
  if (dim < 1) throw ParameterError("matrix_lemma_check needs dim >= 1");
  const CounterNormal gen(seed);
  LemmaReport r;
  r.trials = trials;
  r.dim = dim;
  for (int trial = 0; trial < trials; ++trial) {
    std::uint64_t counter = 0;
    auto gaussian = [&]() {
      Matrix g(dim, dim);
      for (int i = 0; i < dim; ++i) {
        for (int j = 0; j < dim; ++j) g(i, j) = gen.normal(static_cast<std::uint64_t>(trial), counter++);
      }
      return g;
    };
    Matrix a, b, c, d;
    if (mode == LemmaMode::random) {
      const Matrix g = gaussian();
      const Matrix h = gaussian();
      const Matrix k = gaussian();
      const Matrix s = gaussian();
      a = g * g.transpose();
      c = a + h * h.transpose();
      b = k * k.transpose();
      d = b + s * s.transpose();
    } else {
      const Matrix q = Eigen::HouseholderQR<Matrix>(gaussian()).householderQ();
      const Matrix raw = gaussian();
      const Vector da = raw.col(0).cwiseAbs2();
      const Vector db = raw.col(std::min(1, dim - 1)).cwiseAbs2();
      const Matrix extra = gaussian();
      const Vector dc = da + extra.col(0).cwiseAbs2();
      const Vector dd = db + extra.col(std::min(1, dim - 1)).cwiseAbs2();
      a = q * da.asDiagonal() * q.transpose();
      b = q * db.asDiagonal() * q.transpose();
      c = q * dc.asDiagonal() * q.transpose();
      d = q * dd.asDiagonal() * q.transpose();
    }
    const double gap = lemma_gap(a, b, c, d);
    r.gaps.push_back(gap);
    if (gap < -1e-10) ++r.failures;
    if (gap < r.worst_min_eigenvalue) {
      r.worst_min_eigenvalue = gap;
      r.worst_trial = trial;
      r.worst_a = a;
      r.worst_b = b;
      r.worst_c = c;
      r.worst_d = d;
    }
  }
  r.pass = r.failures == 0;
  return r;
}

namespace {

double median(std::vector<double> v) {
  std::sort(v.begin(), v.end());
  const std::size_t n = v.size();
  return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

}  // namespace

EstimatorStudy estimator_study(const Measure& mu1, const Schedule& schedule, const std::vector<int>& n_list,
                               const std::vector<std::uint64_t>& seeds, double t, double bandwidth, double threshold,
                               int eval_points, std::uint64_t eval_seed) {
  if (n_list.empty() || seeds.empty()) throw ParameterError("estimator study needs sample sizes and seeds");
  if (eval_points < 1) throw ParameterError("estimator study needs evaluation points");
  const int d = dimension(mu1);
  const Measure mu0 = GaussianMeasure::standard(d);
  const std::unique_ptr<DriftBackend> exact = make_drift(mu0, mu1, schedule);
  const Coefficients c = schedule.eval(t);

  // evaluation points X_t = a X0 + b X1, independent of every estimator seed
  const SampleSet x0 = sample(mu0, eval_points, mix64(eval_seed));
  const SampleSet x1 = sample(mu1, eval_points, mix64(eval_seed + 1));
  const Matrix xt = c.alpha * x0.points + c.beta * x1.points;
  const Matrix v_exact = exact->evaluate_batch(t, xt);

  EstimatorStudy study{t, bandwidth, threshold, eval_points, {}, true};
  for (int n : n_list) {
    EstimatorRow row{n, 0.0, {}};
    for (std::uint64_t seed : seeds) {
      const EmpiricalDrift est(sample(mu1, n, seed), schedule, bandwidth, threshold);
      const Matrix v_hat = est.evaluate_batch(t, xt);
      row.errors.push_back(std::sqrt((v_hat - v_exact).rowwise().squaredNorm().mean()));
    }
    row.median_error = median(row.errors);
    if (!study.rows.empty() && !(row.median_error < study.rows.back().median_error)) {
      study.strictly_decreasing = false;
    }
    study.rows.push_back(std::move(row));
  }
  return study;
}

}  // namespace siflow
