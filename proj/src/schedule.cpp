#include "siflow/schedule.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <limits>
#include <numbers>
#include <sstream>

#include "siflow/error.hpp"

namespace siflow {

namespace {

constexpr double kEndpointTol = 1e-12;
constexpr double kDerivativeTol = 1e-6;
constexpr double kFdStep = 1e-6;
constexpr int kCheckGrid = 101;

double parse_double(std::string_view s, std::string_view what) {
  double v = 0.0;
  const auto* first = s.data();
  const auto* last = s.data() + s.size();
  auto [ptr, ec] = std::from_chars(first, last, v);
  if (ec != std::errc() || ptr != last) {
    throw ParameterError("cannot parse " + std::string(what) + " from '" + std::string(s) + "'");
  }
  return v;
}

std::string fmt_double(double v) {
  std::ostringstream os;
  os.precision(17);
  os << v;
  return os.str();
}

}  // namespace

Schedule::Schedule(std::string name, Fn alpha, Fn beta, Fn alpha_dot, Fn beta_dot)
    : name_(std::move(name)),
      alpha_(std::move(alpha)),
      beta_(std::move(beta)),
      alpha_dot_(std::move(alpha_dot)),
      beta_dot_(std::move(beta_dot)) {}

Coefficients Schedule::eval(double t) const {
  if (!(t >= 0.0 && t <= 1.0)) {
    throw DomainError("schedule '" + name_ + "' evaluated at t=" + fmt_double(t) + " outside [0,1]");
  }
  return {alpha_(t), beta_(t), alpha_dot_(t), beta_dot_(t)};
}

Schedule Schedule::linear() {
  return Schedule(
      "linear", [](double t) { return 1.0 - t; }, [](double t) { return t; },
      [](double) { return -1.0; }, [](double) { return 1.0; });
}

Schedule Schedule::trig() {
  constexpr double h = std::numbers::pi / 2.0;
  return Schedule(
      "trig", [](double t) { return std::cos(h * t); }, [](double t) { return std::sin(h * t); },
      [](double t) { return -h * std::sin(h * t); }, [](double t) { return h * std::cos(h * t); });
}

Schedule Schedule::variance_matched(double kappa) {
  if (!(kappa > 0.0) || kappa == 1.0 || !std::isfinite(kappa)) {
    throw ParameterError("variance_matched requires kappa > 0 and kappa != 1 (use trig for kappa = 1), got " +
                         fmt_double(kappa));
  }
  const double log_k = std::log(kappa);
  const double denom = kappa - 1.0;
  // alpha^2 = (kappa^(1-t) - 1)/(kappa - 1), beta^2 = kappa (1 - kappa^-t)/(kappa - 1),
  // both written with expm1 so the endpoint zeros are exact.
  auto alpha_sq = [=](double t) { return std::expm1((1.0 - t) * log_k) / denom; };
  auto beta_sq = [=](double t) { return -kappa * std::expm1(-t * log_k) / denom; };
  auto g_dot = [=](double t) { return -log_k * std::exp((1.0 - t) * log_k) / denom; };
  return Schedule(
      "vm:" + fmt_double(kappa), [=](double t) { return std::sqrt(alpha_sq(t)); },
      [=](double t) { return std::sqrt(beta_sq(t)); },
      [=](double t) { return g_dot(t) / (2.0 * std::sqrt(alpha_sq(t))); },
      [=](double t) { return -g_dot(t) / (2.0 * std::sqrt(beta_sq(t))); });
}

Schedule Schedule::ou_reparam(double time_clamp) {
  if (!(time_clamp > 0.0 && time_clamp < 0.5)) {
    throw ParameterError("ou_reparam time clamp must lie in (0, 0.5)");
  }
  const double t_max = 1.0 - time_clamp;
  auto tau = [=](double t) {
    const double s = std::min(t, t_max);
    return s / (1.0 - s);
  };
  auto tau_dot = [=](double t) {
    if (t > t_max) return 0.0;
    return 1.0 / ((1.0 - t) * (1.0 - t));
  };
  return Schedule(
      "ou", [=](double t) { return std::exp(-tau(t)); },
      [=](double t) { return std::sqrt(-std::expm1(-2.0 * tau(t))); },
      [=](double t) { return -tau_dot(t) * std::exp(-tau(t)); },
      [=](double t) {
        const double e2 = std::exp(-2.0 * tau(t));
        return e2 * tau_dot(t) / std::sqrt(-std::expm1(-2.0 * tau(t)));
      });
}

Schedule Schedule::polynomial(std::vector<double> a, std::vector<double> b) {
  auto value = [](const std::vector<double>& c, double t) {
    double acc = 0.0;
    for (auto it = c.rbegin(); it != c.rend(); ++it) acc = acc * t + *it;
    return acc;
  };
  auto deriv = [](const std::vector<double>& c, double t) {
    double acc = 0.0;
    for (std::size_t k = c.size(); k-- > 1;) acc = acc * t + static_cast<double>(k) * c[k];
    return acc;
  };
  return Schedule(
      "polynomial", [=](double t) { return value(a, t); }, [=](double t) { return value(b, t); },
      [=](double t) { return deriv(a, t); }, [=](double t) { return deriv(b, t); });
}

Schedule make_builtin(std::string_view kind) {
  if (kind == "linear") return Schedule::linear();
  if (kind == "trig") return Schedule::trig();
  if (kind == "ou") return Schedule::ou_reparam();
  if (kind.starts_with("ou:")) return Schedule::ou_reparam(parse_double(kind.substr(3), "ou time clamp"));
  if (kind.starts_with("vm:")) return Schedule::variance_matched(parse_double(kind.substr(3), "kappa"));
  throw ParameterError("unknown schedule '" + std::string(kind) + "' (expected linear|trig|vm:<kappa>|ou)");
}

bool ScheduleReport::pass() const {
  return std::all_of(items.begin(), items.end(), [](const CheckItem& c) { return c.pass; });
}

std::vector<std::string> ScheduleReport::failed_clauses() const {
  std::vector<std::string> out;
  for (const auto& c : items)
    if (!c.pass) out.push_back(c.clause);
  return out;
}

ScheduleReport check_endpoints(const Schedule& s) {
  ScheduleReport r;
  auto endpoint = [&](std::string clause, double value, double target) {
    const double res = std::abs(value - target);
    r.items.push_back({std::move(clause), res <= kEndpointTol, res});
  };
  const Coefficients c0 = s.eval(0.0);
  const Coefficients c1 = s.eval(1.0);
  endpoint("alpha(0)=1", c0.alpha, 1.0);
  endpoint("beta(0)=0", c0.beta, 0.0);
  endpoint("alpha(1)=0", c1.alpha, 0.0);
  endpoint("beta(1)=1", c1.beta, 1.0);

  // Positivity on the open interval; residual is the most negative value seen.
  double min_alpha = std::numeric_limits<double>::infinity();
  double min_beta = std::numeric_limits<double>::infinity();
  double fd_alpha = 0.0;
  double fd_beta = 0.0;
  for (int k = 1; k < kCheckGrid - 1; ++k) {
    const double t = static_cast<double>(k) / (kCheckGrid - 1);
    const Coefficients c = s.eval(t);
    min_alpha = std::min(min_alpha, c.alpha);
    min_beta = std::min(min_beta, c.beta);
    const Coefficients lo = s.eval(t - kFdStep);
    const Coefficients hi = s.eval(t + kFdStep);
    const double da = (hi.alpha - lo.alpha) / (2.0 * kFdStep);
    const double db = (hi.beta - lo.beta) / (2.0 * kFdStep);
    fd_alpha = std::max(fd_alpha, std::abs(da - c.alpha_dot) / std::max(1.0, std::abs(c.alpha_dot)));
    fd_beta = std::max(fd_beta, std::abs(db - c.beta_dot) / std::max(1.0, std::abs(c.beta_dot)));
  }
  r.items.push_back({"alpha(t)>0 on (0,1)", min_alpha > 0.0, std::min(0.0, min_alpha)});
  r.items.push_back({"beta(t)>0 on (0,1)", min_beta > 0.0, std::min(0.0, min_beta)});
  r.items.push_back({"alpha_dot matches finite differences", fd_alpha <= kDerivativeTol, fd_alpha});
  r.items.push_back({"beta_dot matches finite differences", fd_beta <= kDerivativeTol, fd_beta});
  return r;
}

AdmissibilityReport check_admissible(const Schedule& s, int grid_size) {
  if (grid_size < 2) throw ParameterError("check_admissible needs grid_size >= 2");
  AdmissibilityReport r{true, true, 0.0, 0.0};
  for (int k = 0; k < grid_size; ++k) {
    const double t = static_cast<double>(k) / (grid_size - 1);
    const Coefficients c = s.eval(t);
    const double res = std::abs(c.alpha * c.alpha + c.beta * c.beta - 1.0);
    if (res > r.max_norm_residual) {
      r.max_norm_residual = res;
      r.worst_t = t;
    }
    if (k > 0 && k < grid_size - 1 && !(c.alpha_dot < 0.0)) r.strictly_decreasing = false;
  }
  r.admissible = r.strictly_decreasing && r.max_norm_residual <= 1e-10;
  return r;
}

}  // namespace siflow
