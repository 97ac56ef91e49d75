#include "siflow/measure.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <sstream>

#include "siflow/error.hpp"
#include "siflow/rng.hpp"

namespace siflow {

namespace {

double to_double(std::string_view s) {
  double v = 0.0;
  auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc() || ptr != s.data() + s.size()) {
    throw ParameterError("cannot parse number '" + std::string(s) + "'");
  }
  return v;
}

std::vector<double> to_doubles(std::string_view s) {
  std::vector<double> out;
  while (!s.empty()) {
    const auto comma = s.find(',');
    out.push_back(to_double(s.substr(0, comma)));
    if (comma == std::string_view::npos) break;
    s.remove_prefix(comma + 1);
  }
  return out;
}

int to_int(std::string_view s) {
  int v = 0;
  auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc() || ptr != s.data() + s.size()) {
    throw ParameterError("cannot parse integer '" + std::string(s) + "'");
  }
  return v;
}

std::string num(double v) {
  std::ostringstream os;
  os.precision(17);
  os << v;
  return os.str();
}

ConvexObjective objective_of(const PotentialDensity& m) { return {m.potential, m.grad, m.hess}; }

// Laplace-centered proposal for exp(-V): mode and inverse square root Hessian.
WeightedNodes laplace_nodes(const PotentialDensity& m, int nodes) {
  if (m.dim > 3) throw UnsupportedCaseError("quadrature over potentials supports dim <= 3");
  const MinimizeResult opt = minimize_convex(objective_of(m), Vector::Zero(m.dim));
  const double v_min = m.potential(opt.argmin);
  Matrix h = opt.hess;
  Matrix scale = min_eigenvalue(h) > 1e-12 ? sym_inv_sqrt(h) : Matrix::Identity(m.dim, m.dim);
  return integrate_exp([&](const Vector& x) { return v_min - m.potential(x); }, opt.argmin, scale,
                       *hermite_rule(nodes));
}

}  // namespace

GaussianMeasure::GaussianMeasure(Vector mean, Matrix cov) : mean_(std::move(mean)), cov_(std::move(cov)) {
  const auto d = mean_.size();
  if (d == 0) throw ParameterError("Gaussian measure needs dimension >= 1");
  if (cov_.rows() != d || cov_.cols() != d) throw ParameterError("Gaussian covariance shape mismatch");
  if ((cov_ - cov_.transpose()).cwiseAbs().maxCoeff() > 1e-12) {
    throw ParameterError("Gaussian covariance is not symmetric");
  }
  if (!(min_eigenvalue(cov_) > 0.0)) throw ParameterError("Gaussian covariance is not positive definite");
  Eigen::LLT<Matrix> llt(cov_);
  if (llt.info() != Eigen::Success) throw ParameterError("Gaussian covariance Cholesky failed");
  chol_ = llt.matrixL();
  precision_ = llt.solve(Matrix::Identity(d, d));
  precision_ = 0.5 * (precision_ + precision_.transpose()).eval();
}

GaussianMeasure GaussianMeasure::standard(int dim) {
  return GaussianMeasure(Vector::Zero(dim), Matrix::Identity(dim, dim));
}

GaussianMeasure GaussianMeasure::isotropic(int dim, double variance) {
  if (!(variance > 0.0)) throw ParameterError("isotropic Gaussian needs variance > 0");
  return GaussianMeasure(Vector::Zero(dim), variance * Matrix::Identity(dim, dim));
}

double GaussianMeasure::kappa() const { return 1.0 / max_eigenvalue(cov_); }
double GaussianMeasure::eta() const { return 1.0 / min_eigenvalue(cov_); }

bool GaussianMeasure::is_standard(double tol) const {
  const int d = dim();
  return mean_.cwiseAbs().maxCoeff() <= tol && (cov_ - Matrix::Identity(d, d)).cwiseAbs().maxCoeff() <= tol;
}

PotentialDensity GaussianMeasure::to_potential() const {
  PotentialDensity p;
  std::ostringstream name;
  name << "gaussian(d=" << dim() << ")";
  p.name = name.str();
  p.dim = dim();
  const Vector m = mean_;
  const Matrix prec = precision_;
  p.potential = [m, prec](const Vector& x) {
    const Vector r = x - m;
    return 0.5 * r.dot(prec * r);
  };
  p.grad = [m, prec](const Vector& x) -> Vector { return prec * (x - m); };
  p.hess = [prec](const Vector&) -> Matrix { return prec; };
  p.kappa = kappa();
  p.eta = eta();
  return p;
}

int dimension(const Measure& m) {
  return std::visit(
      [](const auto& x) {
        if constexpr (std::is_same_v<std::decay_t<decltype(x)>, GaussianMeasure>) {
          return x.dim();
        } else {
          return x.dim;
        }
      },
      m);
}

std::string label(const Measure& m) {
  if (const auto* g = as_gaussian(m)) {
    std::ostringstream os;
    os << "gaussian(mean=[";
    for (int i = 0; i < g->dim(); ++i) os << (i ? "," : "") << num(g->mean()(i));
    os << "],cov=[";
    for (int i = 0; i < g->dim(); ++i)
      for (int j = 0; j < g->dim(); ++j) os << (i || j ? "," : "") << num(g->cov()(i, j));
    os << "])";
    return os.str();
  }
  return std::get<PotentialDensity>(m).name;
}

PotentialDensity potential_of(const Measure& m) {
  if (const auto* g = as_gaussian(m)) return g->to_potential();
  return std::get<PotentialDensity>(m);
}

const GaussianMeasure* as_gaussian(const Measure& m) { return std::get_if<GaussianMeasure>(&m); }

double declared_kappa(const Measure& m) {
  if (const auto* g = as_gaussian(m)) return g->kappa();
  return std::get<PotentialDensity>(m).kappa;
}

double declared_eta(const Measure& m) {
  if (const auto* g = as_gaussian(m)) return g->eta();
  return std::get<PotentialDensity>(m).eta;
}

namespace densities {

GaussianMeasure standard_gaussian(int dim) { return GaussianMeasure::standard(dim); }

GaussianMeasure gaussian_scaled(double kappa, int dim) {
  if (!(kappa > 0.0)) throw ParameterError("gaussian_scaled needs kappa > 0");
  return GaussianMeasure::isotropic(dim, 1.0 / kappa);
}

PotentialDensity quartic1d() {
  PotentialDensity p;
  p.name = "quartic1d";
  p.dim = 1;
  p.potential = [](const Vector& x) {
    const double y = x(0);
    return 0.5 * y * y + 0.25 * y * y * y * y;
  };
  p.grad = [](const Vector& x) -> Vector {
    const double y = x(0);
    return Vector::Constant(1, y + y * y * y);
  };
  p.hess = [](const Vector& x) -> Matrix {
    const double y = x(0);
    return Matrix::Constant(1, 1, 1.0 + 3.0 * y * y);
  };
  p.kappa = 1.0;
  p.eta = std::numeric_limits<double>::infinity();
  return p;
}

PotentialDensity logcosh1d() {
  PotentialDensity p;
  p.name = "logcosh1d";
  p.dim = 1;
  p.potential = [](const Vector& x) {
    const double y = x(0);
    const double a = std::abs(y);
    return 0.5 * y * y + a + std::log1p(std::exp(-2.0 * a)) - std::log(2.0);
  };
  p.grad = [](const Vector& x) -> Vector {
    const double y = x(0);
    return Vector::Constant(1, y + std::tanh(y));
  };
  p.hess = [](const Vector& x) -> Matrix {
    const double c = std::cosh(x(0));
    return Matrix::Constant(1, 1, 1.0 + 1.0 / (c * c));
  };
  p.kappa = 1.0;
  p.eta = 2.0;
  return p;
}

}  // namespace densities

Measure parse_measure(std::string_view spec) {
  auto split_dim = [](std::string_view rest, int& dim) {
    const auto colon = rest.find(':');
    if (colon != std::string_view::npos) {
      dim = to_int(rest.substr(colon + 1));
      rest = rest.substr(0, colon);
    }
    return rest;
  };
  if (spec == "quartic1d") return densities::quartic1d();
  if (spec == "logcosh1d") return densities::logcosh1d();
  if (spec == "standard" || spec.starts_with("standard:")) {
    int dim = 1;
    if (spec.size() > 8) split_dim(spec.substr(8), dim);
    if (dim < 1) throw ParameterError("dimension must be >= 1");
    return densities::standard_gaussian(dim);
  }
  if (spec.starts_with("gaussian_scaled:")) {
    int dim = 1;
    const auto k = split_dim(spec.substr(16), dim);
    if (dim < 1) throw ParameterError("dimension must be >= 1");
    return densities::gaussian_scaled(to_double(k), dim);
  }
  if (spec.starts_with("gaussian_diag:")) {
    auto rest = spec.substr(14);
    std::vector<double> mean;
    const auto at = rest.find('@');
    if (at != std::string_view::npos) {
      mean = to_doubles(rest.substr(at + 1));
      rest = rest.substr(0, at);
    }
    const auto var = to_doubles(rest);
    if (var.empty()) throw ParameterError("gaussian_diag needs at least one variance");
    if (mean.empty()) mean.assign(var.size(), 0.0);
    if (mean.size() != var.size()) throw ParameterError("gaussian_diag mean/variance length mismatch");
    const Eigen::Map<const Vector> v(var.data(), static_cast<Eigen::Index>(var.size()));
    const Eigen::Map<const Vector> m(mean.data(), static_cast<Eigen::Index>(mean.size()));
    return GaussianMeasure(m, v.asDiagonal().toDenseMatrix());
  }
  if (spec.starts_with("gaussian:")) {
    // gaussian:<m1,...,md>|<c11,...,c1d;...;cd1,...,cdd>
    const auto rest = spec.substr(9);
    const auto bar = rest.find('|');
    if (bar == std::string_view::npos) throw ParameterError("gaussian needs '<mean>|<covariance rows>'");
    const auto mean = to_doubles(rest.substr(0, bar));
    const auto d = static_cast<Eigen::Index>(mean.size());
    Matrix cov(d, d);
    auto rows = rest.substr(bar + 1);
    for (Eigen::Index i = 0; i < d; ++i) {
      const auto semi = rows.find(';');
      const auto row = to_doubles(rows.substr(0, semi));
      if (static_cast<Eigen::Index>(row.size()) != d) throw ParameterError("gaussian covariance row has wrong length");
      for (Eigen::Index j = 0; j < d; ++j) cov(i, j) = row[static_cast<std::size_t>(j)];
      if (semi == std::string_view::npos) {
        if (i + 1 != d) throw ParameterError("gaussian covariance has too few rows");
        rows = {};
      } else {
        rows = rows.substr(semi + 1);
      }
    }
    if (!rows.empty()) throw ParameterError("gaussian covariance has too many rows");
    return GaussianMeasure(Eigen::Map<const Vector>(mean.data(), d), cov);
  }
  throw ParameterError("unknown measure '" + std::string(spec) +
                       "' (expected standard[:d]|gaussian_scaled:<k>[:d]|quartic1d|logcosh1d|gaussian_diag:...|"
                       "gaussian:<mean>|<cov rows>)");
}

LogConcavityReport logconcavity_check(const PotentialDensity& m, const std::vector<Vector>& grid) {
  if (grid.empty()) throw ParameterError("logconcavity_check needs a nonempty grid");
  LogConcavityReport r{std::numeric_limits<double>::infinity(), -std::numeric_limits<double>::infinity(),
                       grid.front(), grid.front(), false};
  for (const auto& x : grid) {
    Eigen::SelfAdjointEigenSolver<Matrix> es(m.hess(x), Eigen::EigenvaluesOnly);
    const double lo = es.eigenvalues().minCoeff();
    const double hi = es.eigenvalues().maxCoeff();
    if (lo < r.min_eigenvalue) {
      r.min_eigenvalue = lo;
      r.argmin = x;
    }
    if (hi > r.max_eigenvalue) {
      r.max_eigenvalue = hi;
      r.argmax = x;
    }
  }
  r.pass = r.min_eigenvalue >= m.kappa - 1e-8 && r.max_eigenvalue <= m.eta + 1e-8;
  return r;
}

DerivativeReport check_derivatives(const PotentialDensity& m, const std::vector<Vector>& grid) {
  constexpr double h = 1e-5;
  DerivativeReport r{0.0, 0.0, false};
  for (const auto& x : grid) {
    const Vector g = m.grad(x);
    const Matrix H = m.hess(x);
    for (int j = 0; j < m.dim; ++j) {
      Vector xp = x, xm = x;
      xp(j) += h;
      xm(j) -= h;
      const double fd = (m.potential(xp) - m.potential(xm)) / (2.0 * h);
      r.grad_residual = std::max(r.grad_residual, std::abs(fd - g(j)));
      const Vector fd_col = (m.grad(xp) - m.grad(xm)) / (2.0 * h);
      r.hess_residual = std::max(r.hess_residual, (fd_col - H.col(j)).cwiseAbs().maxCoeff());
    }
  }
  r.pass = r.grad_residual <= 1e-5 && r.hess_residual <= 1e-4;
  return r;
}

Vector potential_argmin(const PotentialDensity& m) {
  const MinimizeResult opt = minimize_convex(objective_of(m), Vector::Zero(m.dim), 1e-8);
  if (!opt.converged) throw NumericError("minimization of potential '" + m.name + "' did not converge");
  return opt.argmin;
}

namespace {

SampleSet sample_inverse_cdf_1d(const PotentialDensity& m, int n, std::uint64_t seed) {
  const Vector mode = potential_argmin(m);
  const double v_min = m.potential(mode);
  const double curv = m.hess(mode)(0, 0);
  const double sd = curv > 1e-12 ? 1.0 / std::sqrt(curv) : 1.0;
  // walk outwards until the density has dropped by e^-60
  auto edge = [&](double dir) {
    double step = sd;
    double x = mode(0);
    for (int k = 0; k < 400; ++k) {
      x += dir * step;
      if (m.potential(Vector::Constant(1, x)) - v_min > 60.0) return x;
      step *= 1.25;
    }
    throw SamplerError("inverse-CDF sampler could not bracket the mass of '" + m.name + "'");
  };
  const double lo = edge(-1.0);
  const double hi = edge(1.0);
  constexpr int kGrid = 20001;
  const double dx = (hi - lo) / (kGrid - 1);
  std::vector<double> xs(kGrid), cdf(kGrid);
  double prev = 0.0;
  for (int k = 0; k < kGrid; ++k) {
    xs[k] = lo + dx * k;
    const double dens = std::exp(v_min - m.potential(Vector::Constant(1, xs[k])));
    cdf[k] = k == 0 ? 0.0 : cdf[k - 1] + 0.5 * dx * (dens + prev);
    prev = dens;
  }
  const double total = cdf.back();
  for (auto& c : cdf) c /= total;

  SampleSet s;
  s.points.resize(n, 1);
  s.seed = seed;
  s.source = m.name;
  const CounterNormal gen(seed);
  for (int i = 0; i < n; ++i) {
    const double u = gen.uniform(static_cast<std::uint64_t>(i), 0);
    const auto it = std::upper_bound(cdf.begin(), cdf.end(), u);
    const auto k = std::clamp<std::ptrdiff_t>(it - cdf.begin(), 1, kGrid - 1);
    const double c0 = cdf[k - 1], c1 = cdf[k];
    const double frac = c1 > c0 ? (u - c0) / (c1 - c0) : 0.5;
    s.points(i, 0) = xs[k - 1] + frac * dx;
  }
  return s;
}

SampleSet sample_rejection(const PotentialDensity& m, int n, std::uint64_t seed) {
  if (!(m.kappa > 0.0)) {
    throw SamplerError("rejection sampling of '" + m.name +
                       "' needs kappa > 0; use a one-dimensional target or a Gaussian target");
  }
  const Vector mode = potential_argmin(m);
  const double v_min = m.potential(mode);
  const double sd = 1.0 / std::sqrt(m.kappa);
  SampleSet s;
  s.points.resize(n, m.dim);
  s.seed = seed;
  s.source = m.name;
  NormalStream stream(seed, 0);
  long attempts = 0;
  Vector z(m.dim);
  for (int i = 0; i < n;) {
    for (int j = 0; j < m.dim; ++j) z(j) = stream.next_normal();
    const Vector x = mode + sd * z;
    ++attempts;
    // exp(-V(x) + V(mode)) <= exp(-kappa |x - mode|^2 / 2) by kappa-convexity
    const double log_accept = v_min - m.potential(x) + 0.5 * z.squaredNorm();
    if (std::log(stream.next_uniform()) <= log_accept) {
      s.points.row(i++) = x.transpose();
    }
    if (attempts >= 100000 && static_cast<double>(i) / static_cast<double>(attempts) < 1e-4) {
      throw SamplerError("rejection acceptance rate below 1e-4 for '" + m.name +
                         "'; use a one-dimensional target or a Gaussian target");
    }
  }
  return s;
}

}  // namespace

SampleSet sample(const Measure& measure, int n, std::uint64_t seed) {
  if (n < 1) throw ParameterError("sample size must be >= 1");
  if (const auto* g = as_gaussian(measure)) {
    SampleSet s;
    const int d = g->dim();
    s.points.resize(n, d);
    s.seed = seed;
    s.source = label(measure);
    const CounterNormal gen(seed);
    Vector z(d);
    for (int i = 0; i < n; ++i) {
      for (int j = 0; j < d; ++j) z(j) = gen.normal(static_cast<std::uint64_t>(i), static_cast<std::uint64_t>(j));
      s.points.row(i) = (g->mean() + g->cholesky() * z).transpose();
    }
    return s;
  }
  const auto& p = std::get<PotentialDensity>(measure);
  if (p.dim == 1) return sample_inverse_cdf_1d(p, n, seed);
  return sample_rejection(p, n, seed);
}

Moments moments_of(const Measure& measure, int nodes_per_dim) {
  if (const auto* g = as_gaussian(measure)) return {g->mean(), g->cov()};
  const WeightedNodes w = laplace_nodes(std::get<PotentialDensity>(measure), nodes_per_dim);
  return {w.mean(), w.covariance()};
}

double expectation(const PotentialDensity& m, const ScalarField& f, int nodes_per_dim) {
  const WeightedNodes w = laplace_nodes(m, nodes_per_dim);
  double acc = 0.0;
  for (Eigen::Index k = 0; k < w.weights.size(); ++k) {
    if (w.weights(k) == 0.0) continue;
    acc += w.weights(k) * f(w.points.col(k));
  }
  return acc;
}

AffineMap gaussian_ot_map(const GaussianMeasure& mu0, const GaussianMeasure& mu1) {
  if (mu0.dim() != mu1.dim()) throw ParameterError("gaussian_ot_map: dimension mismatch");
  const double scale = std::max(1.0, mu0.cov().norm() * mu1.cov().norm());
  if (!commutes(mu0.cov(), mu1.cov(), 1e-10 * scale)) {
    throw UnsupportedCaseError("gaussian_ot_map: covariances do not commute");
  }
  AffineMap map;
  map.linear = sym_sqrt(mu1.cov()) * sym_inv_sqrt(mu0.cov());
  map.offset = mu1.mean() - map.linear * mu0.mean();
  const Matrix pushed = map.linear * mu0.cov() * map.linear.transpose();
  if ((pushed - mu1.cov()).norm() > 1e-10 * std::max(1.0, mu1.cov().norm())) {
    throw NumericError("gaussian_ot_map: pushforward covariance check failed");
  }
  return map;
}

GaussianMeasure gaussian_interpolant_marginal(const GaussianMeasure& mu0, const GaussianMeasure& mu1,
                                              const Schedule& schedule, double t) {
  if (mu0.dim() != mu1.dim()) throw ParameterError("gaussian_interpolant_marginal: dimension mismatch");
  const Coefficients c = schedule.eval(t);
  Matrix cov = c.alpha * c.alpha * mu0.cov() + c.beta * c.beta * mu1.cov();
  cov = 0.5 * (cov + cov.transpose()).eval();
  return GaussianMeasure(c.alpha * mu0.mean() + c.beta * mu1.mean(), cov);
}

}  // namespace siflow
