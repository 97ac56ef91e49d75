#include "siflow/cli.hpp"

#include <CLI11.hpp>

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <memory>
#include <sstream>

#include "siflow/bounds.hpp"
#include "siflow/drift.hpp"
#include "siflow/error.hpp"
#include "siflow/flow.hpp"
#include "siflow/measure.hpp"
#include "siflow/rng.hpp"
#include "siflow/schedule.hpp"
#include "siflow/verify.hpp"

namespace siflow::cli {

namespace {

// ---------------------------------------------------------------------------
// Output

std::string fmt(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

struct Table {
  std::vector<std::string> header;
  std::vector<std::vector<double>> rows;
};

void write_csv(const std::filesystem::path& path, const Table& table) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw Error("cannot write " + path.string());
  for (std::size_t j = 0; j < table.header.size(); ++j) os << (j ? "," : "") << table.header[j];
  os << '\n';
  for (const auto& row : table.rows) {
    for (std::size_t j = 0; j < row.size(); ++j) os << (j ? "," : "") << fmt(row[j]);
    os << '\n';
  }
}

struct Outcome {
  Json summary = Json::object();
  Table curves;
  std::optional<Table> samples;
  bool pass = true;
};

// Non-finite doubles are not valid JSON; they are written as strings.
Json num(double v) {
  if (std::isfinite(v)) return v;
  return fmt(v);
}

Json vec(const Vector& v) {
  Json out = Json::array();
  for (Eigen::Index i = 0; i < v.size(); ++i) out.push_back(num(v(i)));
  return out;
}

Json mat(const Matrix& m) {
  Json out = Json::array();
  for (Eigen::Index i = 0; i < m.rows(); ++i) out.push_back(vec(m.row(i).transpose()));
  return out;
}

// ---------------------------------------------------------------------------
// Config access

const Json& need(const Json& cfg, const std::string& key) {
  if (!cfg.contains(key) || cfg.at(key).is_null()) throw ConfigError("missing config key '" + key + "'");
  return cfg.at(key);
}

double get_num(const Json& cfg, const std::string& key) {
  const Json& v = need(cfg, key);
  if (!v.is_number()) throw ConfigError("config key '" + key + "' must be a number");
  return v.get<double>();
}

long get_int(const Json& cfg, const std::string& key) {
  const Json& v = need(cfg, key);
  if (!v.is_number_integer() && !(v.is_number() && std::floor(v.get<double>()) == v.get<double>())) {
    throw ConfigError("config key '" + key + "' must be an integer");
  }
  return v.get<long>();
}

std::string get_str(const Json& cfg, const std::string& key) {
  const Json& v = need(cfg, key);
  if (!v.is_string()) throw ConfigError("config key '" + key + "' must be a string");
  return v.get<std::string>();
}

bool get_bool(const Json& cfg, const std::string& key) {
  const Json& v = need(cfg, key);
  if (!v.is_boolean()) throw ConfigError("config key '" + key + "' must be true or false");
  return v.get<bool>();
}

std::vector<double> get_list(const Json& cfg, const std::string& key) {
  const Json& v = need(cfg, key);
  if (v.is_number()) return {v.get<double>()};
  if (!v.is_array()) throw ConfigError("config key '" + key + "' must be a list of numbers");
  std::vector<double> out;
  for (const Json& e : v) {
    if (!e.is_number()) throw ConfigError("config key '" + key + "' must be a list of numbers");
    out.push_back(e.get<double>());
  }
  return out;
}

// A list of points: [[x, y], ...], or a flat list of 1D points.
std::vector<Vector> get_points(const Json& cfg, const std::string& key, int dim) {
  const Json& v = need(cfg, key);
  if (!v.is_array()) throw ConfigError("config key '" + key + "' must be a list of points");
  std::vector<Vector> out;
  for (const Json& p : v) {
    Vector x;
    if (p.is_number()) {
      x = Vector::Constant(1, p.get<double>());
    } else if (p.is_array()) {
      x.resize(static_cast<Eigen::Index>(p.size()));
      for (std::size_t j = 0; j < p.size(); ++j) {
        if (!p[j].is_number()) throw ConfigError("config key '" + key + "' has a non-numeric coordinate");
        x(static_cast<Eigen::Index>(j)) = p[j].get<double>();
      }
    } else {
      throw ConfigError("config key '" + key + "' must be a list of points");
    }
    if (x.size() != dim) {
      throw ConfigError("config key '" + key + "' has a point of dimension " + std::to_string(x.size()) +
                        ", expected " + std::to_string(dim));
    }
    out.push_back(std::move(x));
  }
  if (out.empty()) throw ConfigError("config key '" + key + "' is empty");
  return out;
}

Json defaults() {
  return Json{
      {"command", nullptr},
      {"action", nullptr},
      {"schedule", "linear"},
      {"base", nullptr},
      {"target", "standard"},
      {"backend", "auto"},
      {"nodes", 64},
      {"quad_mode", "laplace"},
      {"switch_ratio", 1.0},
      {"time_clamp", 1e-3},
      {"extrapolate", true},
      {"steps", 1000},
      {"seed", 0},
      {"out", "out"},
      {"tol", nullptr},
      {"times", nullptr},
      {"x", nullptr},
      {"x_points", 0},
      {"x0", nullptr},
      {"jacobian", false},
      {"eps", 0.0},
      {"n", 1000},
      {"checkpoints", Json::array({0.5})},
      {"thm", 1},
      {"kappa", nullptr},
      {"kappa0", nullptr},
      {"eta0", nullptr},
      {"kappa1", nullptr},
      {"grid_points", 1001},
      {"trials", 1000},
      {"dim", 4},
      {"lemma_mode", "random"},
      {"n_list", Json::array({100, 1000, 10000})},
      {"seeds", 10},
      {"t", 0.5},
      {"bandwidth", 0.0},
      {"threshold", 1e-4},
      {"eval_points", 10000},
      {"emp_n", 1000},
      {"emp_seed", 0},
      {"f", "x"},
  };
}

Json resolve(const Json& config) {
  Json out = defaults();
  for (auto it = config.begin(); it != config.end(); ++it) {
    if (!out.contains(it.key())) throw ConfigError("unknown config key '" + it.key() + "'");
    out[it.key()] = it.value();
  }
  return out;
}

Schedule resolve_schedule(const Json& cfg) {
  const Json& v = need(cfg, "schedule");
  try {
    if (v.is_string()) return make_builtin(v.get<std::string>());
    if (v.is_object()) {
      const std::string kind = get_str(v, "kind");
      if (kind != "polynomial") throw ConfigError("schedule kind '" + kind + "' is not known");
      return Schedule::polynomial(get_list(v, "alpha"), get_list(v, "beta"));
    }
  } catch (const ConfigError&) {
    throw;
  } catch (const Error& e) {
    throw ConfigError(std::string("config key 'schedule': ") + e.what());
  }
  throw ConfigError("config key 'schedule' must be a name or a polynomial object");
}

void validate_schedule(const Schedule& s) {
  const ScheduleReport rep = check_endpoints(s);
  if (rep.pass()) return;
  std::string msg = "validation failed for schedule '" + s.name() + "':";
  for (const std::string& clause : rep.failed_clauses()) msg += "\n  - " + clause;
  throw ConfigError(msg);
}

Measure resolve_measure(const Json& cfg, const std::string& key) {
  const std::string spec = get_str(cfg, key);
  try {
    return parse_measure(spec);
  } catch (const Error& e) {
    throw ConfigError("config key '" + key + "': " + e.what());
  }
}

Measure resolve_base(const Json& cfg, const Measure& target) {
  if (cfg.at("base").is_null()) return GaussianMeasure::standard(dimension(target));
  Measure base = resolve_measure(cfg, "base");
  if (dimension(base) != dimension(target)) throw ConfigError("base and target differ in dimension");
  return base;
}

QuadratureConfig resolve_quad(const Json& cfg) {
  QuadratureConfig q;
  q.nodes_per_dim = static_cast<int>(get_int(cfg, "nodes"));
  const std::string mode = get_str(cfg, "quad_mode");
  if (mode == "laplace") {
    q.mode = QuadratureMode::laplace;
  } else if (mode == "hermite_centered") {
    q.mode = QuadratureMode::hermite_centered;
  } else if (mode == "base_proposal") {
    q.mode = QuadratureMode::base_proposal;
  } else {
    throw ConfigError("config key 'quad_mode' must be laplace, hermite_centered or base_proposal");
  }
  q.switch_ratio = get_num(cfg, "switch_ratio");
  q.time_clamp = get_num(cfg, "time_clamp");
  q.extrapolate = get_bool(cfg, "extrapolate");
  try {
    q.validate();
  } catch (const Error& e) {
    throw ConfigError(std::string("quadrature settings: ") + e.what());
  }
  return q;
}

std::uint64_t get_seed(const Json& cfg, const std::string& key) {
  const long s = get_int(cfg, key);
  if (s < 0) throw ConfigError("config key '" + key + "' must be non-negative");
  return static_cast<std::uint64_t>(s);
}

// Drift and score backends for the configured endpoints.
struct Backends {
  std::unique_ptr<DriftBackend> drift;
  std::unique_ptr<ScoreBackend> score;  // may be null
  std::shared_ptr<EmpiricalDrift> empirical;
};

class NullScore final : public ScoreBackend {
 public:
  explicit NullScore(int dim) : dim_(dim) {}
  TimeRange valid_range() const override { return {0.0, 1.0}; }
  Vector score(double, const Vector&) const override { return Vector::Zero(dim_); }

 private:
  int dim_;
};

Backends build_backends(const Json& cfg, const Measure& base, const Measure& target, const Schedule& schedule) {
  const std::string kind = get_str(cfg, "backend");
  const QuadratureConfig quad = resolve_quad(cfg);
  Backends b;
  const GaussianMeasure* g0 = as_gaussian(base);
  const GaussianMeasure* g1 = as_gaussian(target);
  if (kind == "empirical") {
    if (!g0 || !g0->is_standard()) throw ConfigError("the empirical backend needs base N(0, I)");
    const long n = get_int(cfg, "emp_n");
    if (n < 1) throw ConfigError("config key 'emp_n' must be >= 1");
    auto est = std::make_shared<EmpiricalDrift>(sample(target, static_cast<int>(n), get_seed(cfg, "emp_seed")),
                                                schedule, get_num(cfg, "bandwidth"), get_num(cfg, "threshold"),
                                                quad.time_clamp);
    b.empirical = est;
    b.drift = std::make_unique<EmpiricalDrift>(*est);
    b.score = std::make_unique<EmpiricalDrift>(*est);
    return b;
  }
  BackendKind bk;
  if (kind == "auto") {
    bk = BackendKind::automatic;
  } else if (kind == "gaussian_closed") {
    bk = BackendKind::gaussian_closed;
  } else if (kind == "quadrature") {
    bk = BackendKind::quadrature;
  } else {
    throw ConfigError("config key 'backend' must be auto, gaussian_closed, quadrature or empirical");
  }
  b.drift = make_drift(base, target, schedule, bk, quad);
  if (b.drift->name() == "gaussian_closed") {
    b.score = std::make_unique<GaussianClosedScore>(*g0, *g1, schedule);
  } else if (g0 && g0->is_standard()) {
    b.score = std::make_unique<QuadratureDrift>(base, target, schedule, quad);
  }
  return b;
}

std::optional<double> get_tol(const Json& cfg) {
  if (cfg.at("tol").is_null()) return std::nullopt;
  return get_num(cfg, "tol");
}

// ---------------------------------------------------------------------------
// Commands

Outcome cmd_schedule(const Json& cfg) {
  const Schedule s = resolve_schedule(cfg);
  const ScheduleReport rep = check_endpoints(s);
  const AdmissibilityReport adm = check_admissible(s, 1001);
  Outcome out;
  out.curves.header = {"t", "alpha", "beta", "alpha_dot", "beta_dot", "norm_residual"};
  for (double t : uniform_grid(0.0, 1.0, 101)) {
    const Coefficients c = s.eval(t);
    out.curves.rows.push_back(
        {t, c.alpha, c.beta, c.alpha_dot, c.beta_dot, c.alpha * c.alpha + c.beta * c.beta - 1.0});
  }
  Json items = Json::array();
  for (const CheckItem& it : rep.items) {
    items.push_back({{"clause", it.clause}, {"pass", it.pass}, {"residual", num(it.residual)}});
  }
  out.summary["schedule"] = s.name();
  out.summary["checks"] = items;
  out.summary["failed_clauses"] = rep.failed_clauses();
  out.summary["admissible"] = {{"admissible", adm.admissible},
                               {"strictly_decreasing", adm.strictly_decreasing},
                               {"max_norm_residual", num(adm.max_norm_residual)},
                               {"worst_t", adm.worst_t}};
  out.pass = rep.pass();
  return out;
}

std::vector<double> default_times(const Json& cfg, std::vector<double> fallback) {
  if (cfg.at("times").is_null()) return fallback;
  return get_list(cfg, "times");
}

std::vector<Vector> x_points(const Json& cfg, const std::string& key, const Measure& base, const Measure& target,
                             const Schedule& schedule, double t, int per_axis) {
  if (!cfg.at(key).is_null()) return get_points(cfg, key, dimension(target));
  const long requested = get_int(cfg, "x_points");
  return proxy_grid(moments_of(base), moments_of(target), schedule, t,
                    requested > 0 ? static_cast<int>(requested) : per_axis);
}

Outcome cmd_drift(const Json& cfg) {
  const Schedule s = resolve_schedule(cfg);
  validate_schedule(s);
  const Measure target = resolve_measure(cfg, "target");
  const Measure base = resolve_base(cfg, target);
  const Backends b = build_backends(cfg, base, target, s);
  const int d = b.drift->dim();
  const bool symmetric_expected =
      b.drift->name() != "empirical" && as_gaussian(base) && as_gaussian(base)->is_standard();

  Outcome out;
  out.curves.header = {"t"};
  for (int j = 0; j < d; ++j) out.curves.header.push_back("x" + std::to_string(j + 1));
  for (int j = 0; j < d; ++j) out.curves.header.push_back("v" + std::to_string(j + 1));
  for (int i = 0; i < d; ++i) {
    for (int j = 0; j < d; ++j) out.curves.header.push_back("dv" + std::to_string(i + 1) + std::to_string(j + 1));
  }
  out.curves.header.push_back("symmetry");
  double worst_sym = 0.0;
  bool finite = true;
  for (double t : default_times(cfg, {0.25, 0.5, 0.75})) {
    for (const Vector& x : x_points(cfg, "x", base, target, s, t, d == 1 ? 21 : d == 2 ? 11 : 5)) {
      const DriftEvaluation e = b.drift->evaluate(t, x, true);
      std::vector<double> row{t};
      for (int j = 0; j < d; ++j) row.push_back(x(j));
      for (int j = 0; j < d; ++j) row.push_back(e.v(j));
      for (int i = 0; i < d; ++i) {
        for (int j = 0; j < d; ++j) row.push_back((*e.jac)(i, j));
      }
      const double sym = asymmetry(*e.jac);
      row.push_back(sym);
      worst_sym = std::max(worst_sym, sym);
      finite = finite && e.v.allFinite() && e.jac->allFinite();
      out.curves.rows.push_back(std::move(row));
    }
  }
  out.summary["backend"] = b.drift->name();
  out.summary["points"] = out.curves.rows.size();
  out.summary["all_finite"] = finite;
  out.summary["max_symmetry_residual"] = num(worst_sym);
  out.summary["symmetry_checked"] = symmetric_expected;
  out.pass = finite && (!symmetric_expected || worst_sym <= 1e-8);
  return out;
}

Outcome cmd_flow(const Json& cfg) {
  const Schedule s = resolve_schedule(cfg);
  validate_schedule(s);
  const Measure target = resolve_measure(cfg, "target");
  const Measure base = resolve_base(cfg, target);
  const Backends b = build_backends(cfg, base, target, s);
  const int d = b.drift->dim();
  const bool jac = get_bool(cfg, "jacobian");
  const int steps = static_cast<int>(get_int(cfg, "steps"));
  const std::vector<Vector> starts =
      cfg.at("x0").is_null() ? std::vector<Vector>{Vector::Ones(d)} : get_points(cfg, "x0", d);

  Outcome out;
  out.curves.header = {"path", "t"};
  for (int j = 0; j < d; ++j) out.curves.header.push_back("x" + std::to_string(j + 1));
  if (jac) out.curves.header.push_back("op_norm");
  Json paths = Json::array();
  const GaussianMeasure* g0 = as_gaussian(base);
  const GaussianMeasure* g1 = as_gaussian(target);
  const bool closed = b.drift->name() == "gaussian_closed";
  for (std::size_t p = 0; p < starts.size(); ++p) {
    const FlowResult f = integrate_flow(*b.drift, starts[p], steps, jac);
    for (std::size_t k = 0; k < f.times.size(); ++k) {
      std::vector<double> row{static_cast<double>(p), f.times[k]};
      for (int j = 0; j < d; ++j) row.push_back(f.states[k](j));
      if (jac) row.push_back(f.op_norms[k]);
      out.curves.rows.push_back(std::move(row));
    }
    Json entry{{"x0", vec(starts[p])}, {"t_end", f.times.back()}, {"endpoint", vec(f.endpoint())}};
    if (jac) {
      entry["jacobian"] = mat(f.jacobians.back());
      entry["op_norm"] = f.op_norms.back();
    }
    if (closed) {
      const Vector ref = flowmap_gaussian_closed(*g0, *g1, s, f.times.back(), starts[p]);
      entry["closed_form_residual"] = (ref - f.endpoint()).norm();
    }
    paths.push_back(entry);
  }
  out.summary["backend"] = b.drift->name();
  out.summary["steps"] = steps;
  out.summary["paths"] = paths;
  return out;
}

Outcome cmd_sde(const Json& cfg) {
  const Schedule s = resolve_schedule(cfg);
  validate_schedule(s);
  const Measure target = resolve_measure(cfg, "target");
  const Measure base = resolve_base(cfg, target);
  const Backends b = build_backends(cfg, base, target, s);
  const double eps = get_num(cfg, "eps");
  if (!(eps >= 0.0 && eps <= 1.0)) throw ConfigError("config key 'eps' must lie in [0,1]");
  const long n = get_int(cfg, "n");
  if (n < 2) throw ConfigError("config key 'n' must be >= 2");
  const std::uint64_t seed = get_seed(cfg, "seed");
  const int steps = static_cast<int>(get_int(cfg, "steps"));
  const int d = b.drift->dim();
  NullScore null_score(d);
  const ScoreBackend* score = b.score.get();
  if (!score) {
    if (eps != 1.0) throw ConfigError("no score is available for this base measure; use eps = 1");
    score = &null_score;
  }
  const SampleSet x0 = sample(base, static_cast<int>(n), mix64(seed));
  const SdeResult r = sde_sample(*b.drift, *score, eps, x0, steps, seed, get_list(cfg, "checkpoints"));

  const GaussianMeasure* g0 = as_gaussian(base);
  const GaussianMeasure* g1 = as_gaussian(target);
  const bool oracle = g0 && g1;
  Outcome out;
  out.samples = Table{{"t", "path"}, {}};
  for (int j = 0; j < d; ++j) out.samples->header.push_back("x" + std::to_string(j + 1));
  out.curves.header = {"t", "coord", "mean", "var", "se_mean", "se_var"};
  if (oracle) {
    for (const char* h : {"target_mean", "target_var", "z_mean", "z_var"}) out.curves.header.push_back(h);
  }
  double worst_z = 0.0;
  for (std::size_t c = 0; c < r.times.size(); ++c) {
    const Matrix& pts = r.snapshots[c].points;
    for (Eigen::Index i = 0; i < pts.rows(); ++i) {
      std::vector<double> row{r.times[c], static_cast<double>(i)};
      for (int j = 0; j < d; ++j) row.push_back(pts(i, j));
      out.samples->rows.push_back(std::move(row));
    }
    const Vector mean = pts.colwise().mean();
    const Matrix centered = pts.rowwise() - mean.transpose();
    const Vector var = centered.colwise().squaredNorm() / static_cast<double>(pts.rows() - 1);
    std::optional<GaussianMeasure> mt;
    if (oracle) mt = gaussian_interpolant_marginal(*g0, *g1, s, r.times[c]);
    for (int j = 0; j < d; ++j) {
      const double se_mean = std::sqrt(var(j) / pts.rows());
      const double se_var = var(j) * std::sqrt(2.0 / (pts.rows() - 1));
      std::vector<double> row{r.times[c], static_cast<double>(j + 1), mean(j), var(j), se_mean, se_var};
      if (oracle) {
        const double tm = mt->mean()(j);
        const double tv = mt->cov()(j, j);
        const double zm = (mean(j) - tm) / se_mean;
        const double zv = (var(j) - tv) / se_var;
        worst_z = std::max({worst_z, std::abs(zm), std::abs(zv)});
        row.insert(row.end(), {tm, tv, zm, zv});
      }
      out.curves.rows.push_back(std::move(row));
    }
  }
  out.summary["backend"] = b.drift->name();
  out.summary["checkpoints"] = r.times;
  out.summary["paths"] = n;
  if (oracle) {
    out.summary["max_abs_z"] = num(worst_z);
    out.pass = worst_z <= 3.0;
  }
  return out;
}

Outcome cmd_bounds(const Json& cfg, const std::string& action) {
  Outcome out;
  if (action == "suggested") {
    const double kappa = get_num(cfg, "kappa");
    const ScheduleBoundReport rep =
        suggested_schedule_bound(kappa, static_cast<int>(get_int(cfg, "grid_points")), get_num(cfg, "time_clamp"));
    const Schedule s = Schedule::variance_matched(kappa);
    out.curves.header = {"t", "lambda"};
    for (double t : uniform_grid(get_num(cfg, "time_clamp"), 1.0 - get_num(cfg, "time_clamp"),
                                 static_cast<int>(get_int(cfg, "grid_points")))) {
      out.curves.rows.push_back({t, thm1_lambda(s, t, kappa)});
    }
    out.summary["kappa"] = kappa;
    out.summary["grid_sup"] = rep.grid_sup;
    out.summary["argmax_t"] = rep.argmax_t;
    out.summary["formula_value"] = rep.formula_value;
    out.summary["stated_value"] = rep.stated_value;
    out.summary["discrepancy"] = rep.discrepancy;
    return out;
  }
  if (action != "eval") throw ConfigError("bounds action must be eval or suggested");
  const Schedule s = resolve_schedule(cfg);
  validate_schedule(s);
  const int n = static_cast<int>(get_int(cfg, "grid_points"));
  // schedules with infinite endpoint derivatives are evaluated on the clamped grid
  const Coefficients c0 = s.eval(0.0);
  const Coefficients c1 = s.eval(1.0);
  const bool finite_ends = std::isfinite(c0.alpha_dot + c0.beta_dot + c1.alpha_dot + c1.beta_dot);
  const double clamp = finite_ends ? 0.0 : get_num(cfg, "time_clamp");
  const std::vector<double> times = uniform_grid(clamp, 1.0 - clamp, n);
  const long thm = get_int(cfg, "thm");
  if (thm == 1) {
    const double kappa = get_num(cfg, "kappa");
    const BoundCurve curve = thm1_curve(s, kappa, times);
    const BoundCurve gw = gronwall_curve(times, curve.lambda);
    out.curves.header = {"t", "lambda", "flow_bound", "gronwall"};
    for (std::size_t k = 0; k < times.size(); ++k) {
      out.curves.rows.push_back({times[k], curve.lambda[k], curve.flow_bound[k], gw.flow_bound[k]});
    }
    out.summary["kappa"] = kappa;
    out.summary["flow_bound_end"] = curve.flow_bound.back();
  } else if (thm == 2) {
    const double k0 = get_num(cfg, "kappa0");
    const double e0 = get_num(cfg, "eta0");
    const double k1 = get_num(cfg, "kappa1");
    const BoundCurve curve = thm2_curve(s, k0, e0, k1, times);
    out.curves.header = {"t", "lambda", "flow_bound"};
    for (std::size_t k = 0; k < times.size(); ++k) {
      out.curves.rows.push_back({times[k], curve.lambda[k], curve.flow_bound[k]});
    }
    out.summary["kappa0"] = k0;
    out.summary["eta0"] = e0;
    out.summary["kappa1"] = k1;
    out.summary["flow_bound_end"] = curve.flow_bound.back();
    if (k0 > 0.0 && k1 > 0.0) out.summary["corollary"] = corollary_constant(k0, e0, k1);
    if (k1 > 0.0 && k1 <= e0) out.summary["caffarelli"] = caffarelli_constant(e0, k1);
  } else {
    throw ConfigError("config key 'thm' must be 1 or 2");
  }
  out.summary["provenance"] = thm == 1 ? "thm1" : "thm2";
  out.summary["grid"] = {{"start", times.front()}, {"end", times.back()}, {"points", n}};
  return out;
}

Json report_json(const BoundReport& r) {
  Json constants = Json::object();
  for (const auto& [k, v] : r.constants) constants[k] = num(v);
  Json at_end{{"t", r.rows.empty() ? 0.0 : r.rows.back().t},
              {"margin_dv", num(r.rows.empty() ? 0.0 : r.rows.back().margin_dv)},
              {"t_flow", r.endpoint_time},
              {"measured_df", num(r.endpoint_df)},
              {"flow_bound", num(r.endpoint_bound)},
              {"margin_df", num(r.endpoint_bound - r.endpoint_df)}};
  return Json{{"name", r.name},
              {"backend", r.backend},
              {"grid", r.grid},
              {"tolerance", r.tolerance},
              {"worst_margin", num(r.worst_margin)},
              {"worst_dv_margin", num(r.worst_dv_margin)},
              {"worst_df_margin", num(r.worst_df_margin)},
              {"max_symmetry_residual", num(r.max_symmetry_residual)},
              {"at_end", at_end},
              {"constants", constants},
              {"failures", r.failures},
              {"pass", r.pass}};
}

Table report_table(const BoundReport& r) {
  Table t{{"t", "lambda", "measured_dv", "dv_opnorm", "margin_dv", "symmetry", "t_flow", "flow_bound", "measured_df",
           "margin_df"},
          {}};
  for (const BoundRow& row : r.rows) {
    t.rows.push_back({row.t, row.lambda, row.measured_dv, row.dv_opnorm, row.margin_dv, row.symmetry, row.t_flow,
                      row.flow_bound, row.measured_df, row.margin_df});
  }
  return t;
}

VerifyOptions verify_options(const Json& cfg) {
  VerifyOptions opt;
  if (!cfg.at("times").is_null()) opt.times = get_list(cfg, "times");
  opt.x_points = static_cast<int>(get_int(cfg, "x_points"));
  opt.flow_steps = static_cast<int>(get_int(cfg, "steps"));
  if (auto tol = get_tol(cfg)) opt.tol = *tol;
  opt.quad = resolve_quad(cfg);
  const std::string kind = get_str(cfg, "backend");
  if (kind == "auto") {
    opt.backend = BackendKind::automatic;
  } else if (kind == "gaussian_closed") {
    opt.backend = BackendKind::gaussian_closed;
  } else if (kind == "quadrature") {
    opt.backend = BackendKind::quadrature;
  } else {
    throw ConfigError("verify supports the auto, gaussian_closed and quadrature backends");
  }
  return opt;
}

double num_or(const Json& cfg, const std::string& key, double fallback) {
  return cfg.at(key).is_null() ? fallback : get_num(cfg, key);
}

Outcome cmd_verify(const Json& cfg, const std::string& action) {
  Outcome out;
  if (action == "thm1" || action == "thm2") {
    const Schedule s = resolve_schedule(cfg);
    validate_schedule(s);
    const Measure target = resolve_measure(cfg, "target");
    const VerifyOptions opt = verify_options(cfg);
    BoundReport r;
    if (action == "thm1") {
      r = verify_thm1(target, num_or(cfg, "kappa", declared_kappa(target)), s, opt);
    } else {
      const Measure base = resolve_base(cfg, target);
      r = verify_thm2(base, target, num_or(cfg, "kappa0", declared_kappa(base)),
                      num_or(cfg, "eta0", declared_eta(base)), num_or(cfg, "kappa1", declared_kappa(target)), s, opt);
    }
    out.summary["report"] = report_json(r);
    out.curves = report_table(r);
    out.pass = r.pass;
    return out;
  }
  if (action == "bl") {
    const Measure target = resolve_measure(cfg, "target");
    const PotentialDensity p = potential_of(target);
    const std::string f = get_str(cfg, "f");
    std::function<double(double)> fn;
    std::function<double(double)> dfn;
    if (f == "x") {
      fn = [](double x) { return x; };
      dfn = [](double) { return 1.0; };
    } else if (f == "x2") {
      fn = [](double x) { return x * x; };
      dfn = [](double x) { return 2.0 * x; };
    } else if (f == "x3") {
      fn = [](double x) { return x * x * x; };
      dfn = [](double x) { return 3.0 * x * x; };
    } else if (f == "sin") {
      fn = [](double x) { return std::sin(x); };
      dfn = [](double x) { return std::cos(x); };
    } else {
      throw ConfigError("config key 'f' must be x, x2, x3 or sin");
    }
    const BrascampLiebResult r = brascamp_lieb_check_1d(p, fn, dfn, static_cast<int>(std::max(160L, get_int(cfg, "nodes"))));
    out.curves = Table{{"variance", "bound", "margin"}, {{r.variance, r.bound, r.margin}}};
    out.summary["report"] = {{"measure", p.name}, {"f", f},           {"variance", r.variance},
                             {"bound", r.bound},  {"margin", r.margin}, {"pass", r.pass}};
    out.pass = r.pass;
    return out;
  }
  if (action == "lemma-a2") {
    const std::string mode = get_str(cfg, "lemma_mode");
    if (mode != "random" && mode != "commuting") throw ConfigError("config key 'lemma_mode' must be random or commuting");
    const LemmaReport r = matrix_lemma_check(static_cast<int>(get_int(cfg, "trials")),
                                             static_cast<int>(get_int(cfg, "dim")), get_seed(cfg, "seed"),
                                             mode == "random" ? LemmaMode::random : LemmaMode::commuting);
    out.curves.header = {"trial", "min_eigenvalue"};
    for (std::size_t k = 0; k < r.gaps.size(); ++k) out.curves.rows.push_back({static_cast<double>(k), r.gaps[k]});
    out.summary["report"] = {{"mode", mode},
                             {"trials", r.trials},
                             {"dim", r.dim},
                             {"failures", r.failures},
                             {"worst_min_eigenvalue", num(r.worst_min_eigenvalue)},
                             {"worst_trial", r.worst_trial},
                             {"worst_A", mat(r.worst_a)},
                             {"worst_B", mat(r.worst_b)},
                             {"worst_C", mat(r.worst_c)},
                             {"worst_D", mat(r.worst_d)},
                             {"pass", r.pass}};
    out.pass = r.pass;
    return out;
  }
  if (action == "estimator") {
    const Schedule s = resolve_schedule(cfg);
    validate_schedule(s);
    const Measure target = resolve_measure(cfg, "target");
    std::vector<int> n_list;
    for (double v : get_list(cfg, "n_list")) n_list.push_back(static_cast<int>(v));
    const long n_seeds = get_int(cfg, "seeds");
    if (n_seeds < 1) throw ConfigError("config key 'seeds' must be >= 1");
    std::vector<std::uint64_t> seeds;
    for (long k = 0; k < n_seeds; ++k) seeds.push_back(get_seed(cfg, "seed") + static_cast<std::uint64_t>(k));
    const EstimatorStudy st = estimator_study(target, s, n_list, seeds, get_num(cfg, "t"), get_num(cfg, "bandwidth"),
                                              get_num(cfg, "threshold"), static_cast<int>(get_int(cfg, "eval_points")));
    out.curves.header = {"n", "median_error"};
    for (std::size_t k = 0; k < seeds.size(); ++k) out.curves.header.push_back("error_seed" + std::to_string(seeds[k]));
    Json rows = Json::array();
    for (const EstimatorRow& row : st.rows) {
      std::vector<double> r{static_cast<double>(row.n), row.median_error};
      r.insert(r.end(), row.errors.begin(), row.errors.end());
      out.curves.rows.push_back(std::move(r));
      rows.push_back({{"n", row.n}, {"median_error", row.median_error}});
    }
    out.summary["report"] = {{"t", st.t},
                             {"bandwidth", st.bandwidth},
                             {"threshold", st.threshold},
                             {"eval_points", st.eval_points},
                             {"rows", rows},
                             {"strictly_decreasing", st.strictly_decreasing},
                             {"pass", st.strictly_decreasing}};
    out.pass = st.strictly_decreasing;
    return out;
  }
  throw ConfigError("verify action must be thm1, thm2, bl, lemma-a2 or estimator");
}

Outcome cmd_estimate(const Json& cfg) {
  const Schedule s = resolve_schedule(cfg);
  validate_schedule(s);
  const Measure target = resolve_measure(cfg, "target");
  const Measure base = GaussianMeasure::standard(dimension(target));
  const double t = get_num(cfg, "t");
  const long n = get_int(cfg, "emp_n");
  if (n < 1) throw ConfigError("config key 'emp_n' must be >= 1");
  const EmpiricalDrift est(sample(target, static_cast<int>(n), get_seed(cfg, "emp_seed")), s,
                           get_num(cfg, "bandwidth"), get_num(cfg, "threshold"), get_num(cfg, "time_clamp"));
  const std::unique_ptr<DriftBackend> exact = make_drift(base, target, s, BackendKind::automatic, resolve_quad(cfg));
  const int d = est.dim();
  Outcome out;
  for (int j = 0; j < d; ++j) out.curves.header.push_back("x" + std::to_string(j + 1));
  for (int j = 0; j < d; ++j) out.curves.header.push_back("v_hat" + std::to_string(j + 1));
  for (int j = 0; j < d; ++j) out.curves.header.push_back("v_exact" + std::to_string(j + 1));
  double sq = 0.0;
  const std::vector<Vector> xs = x_points(cfg, "x", base, target, s, t, d == 1 ? 41 : d == 2 ? 11 : 5);
  for (const Vector& x : xs) {
    const Vector vh = est.drift(t, x);
    const Vector ve = exact->evaluate(t, x, false).v;
    std::vector<double> row;
    for (int j = 0; j < d; ++j) row.push_back(x(j));
    for (int j = 0; j < d; ++j) row.push_back(vh(j));
    for (int j = 0; j < d; ++j) row.push_back(ve(j));
    out.curves.rows.push_back(std::move(row));
    sq += (vh - ve).squaredNorm();
  }
  out.summary["t"] = t;
  out.summary["samples"] = n;
  out.summary["exact_backend"] = exact->name();
  out.summary["grid_rmse"] = num(std::sqrt(sq / xs.size()));
  out.pass = std::isfinite(sq);
  return out;
}

std::string default_action(const std::string& command) {
  static const std::map<std::string, std::string> m{{"schedule", "check"}, {"drift", "eval"}, {"flow", "run"},
                                                    {"sde", "run"},        {"bounds", "eval"}, {"estimate", "run"}};
  const auto it = m.find(command);
  return it == m.end() ? "" : it->second;
}

// ---------------------------------------------------------------------------
// Flags

enum class Kind { text, number, integer, list, points, flag };

struct FlagSpec {
  const char* name;
  const char* key;
  Kind kind;
  const char* help;
};

const std::vector<FlagSpec>& flag_specs() {
  static const std::vector<FlagSpec> specs{
      {"--schedule", "schedule", Kind::text, "linear | trig | vm:<kappa> | ou[:<delta>] | polynomial JSON"},
      {"--base", "base", Kind::text, "base measure (default standard Gaussian)"},
      {"--target", "target", Kind::text, "target measure"},
      {"--backend", "backend", Kind::text, "auto | gaussian_closed | quadrature | empirical"},
      {"--nodes", "nodes", Kind::integer, "quadrature nodes per dimension"},
      {"--quad-mode", "quad_mode", Kind::text, "laplace | hermite_centered | base_proposal"},
      {"--switch-ratio", "switch_ratio", Kind::number, "beta/alpha threshold of hermite_centered"},
      {"--time-clamp", "time_clamp", Kind::number, "clamp width near t = 0 and t = 1"},
      {"--steps", "steps", Kind::integer, "RK4 steps"},
      {"--seed", "seed", Kind::integer, "random seed"},
      {"--out", "out", Kind::text, "output directory"},
      {"--tol", "tol", Kind::number, "verification tolerance"},
      {"--times", "times", Kind::list, "comma-separated times"},
      {"--x", "x", Kind::points, "points 'a,b;c,d'"},
      {"--x-points", "x_points", Kind::integer, "grid points per axis"},
      {"--x0", "x0", Kind::points, "initial points 'a,b;c,d'"},
      {"--jacobian", "jacobian", Kind::flag, "integrate the variational equation"},
      {"--eps", "eps", Kind::number, "stochasticity level in [0,1]"},
      {"--n", "n", Kind::integer, "number of SDE paths"},
      {"--checkpoints", "checkpoints", Kind::list, "comma-separated checkpoint times"},
      {"--thm", "thm", Kind::integer, "1 or 2"},
      {"--kappa", "kappa", Kind::number, "log-concavity constant"},
      {"--kappa0", "kappa0", Kind::number, "base log-concavity constant"},
      {"--eta0", "eta0", Kind::number, "base log-convexity constant"},
      {"--kappa1", "kappa1", Kind::number, "target log-concavity constant"},
      {"--grid-points", "grid_points", Kind::integer, "time grid size for bound curves"},
      {"--trials", "trials", Kind::integer, "random trials"},
      {"--dim", "dim", Kind::integer, "matrix dimension"},
      {"--lemma-mode", "lemma_mode", Kind::text, "random | commuting"},
      {"--n-list", "n_list", Kind::list, "comma-separated sample sizes"},
      {"--seeds", "seeds", Kind::integer, "number of seeds"},
      {"--t", "t", Kind::number, "time"},
      {"--bandwidth", "bandwidth", Kind::number, "kernel bandwidth h"},
      {"--threshold", "threshold", Kind::number, "density threshold eps"},
      {"--eval-points", "eval_points", Kind::integer, "Monte Carlo evaluation points"},
      {"--emp-n", "emp_n", Kind::integer, "samples for the empirical drift"},
      {"--emp-seed", "emp_seed", Kind::integer, "seed for the empirical drift samples"},
      {"--f", "f", Kind::text, "test function: x | x2 | x3 | sin"},
  };
  return specs;
}

double parse_double(const std::string& s, const std::string& flag) {
  try {
    std::size_t pos = 0;
    const double v = std::stod(s, &pos);
    if (pos != s.size()) throw std::invalid_argument(s);
    return v;
  } catch (const std::exception&) {
    throw ConfigError("flag " + flag + ": '" + s + "' is not a number");
  }
}

std::vector<std::string> split(const std::string& s, char sep) {
  std::vector<std::string> out;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, sep)) out.push_back(item);
  return out;
}

Json flag_value(const FlagSpec& spec, const std::string& raw) {
  switch (spec.kind) {
    case Kind::text:
      if (!raw.empty() && raw.front() == '{') {
        try {
          return Json::parse(raw);
        } catch (const Json::parse_error& e) {
          throw ConfigError(std::string("flag ") + spec.name + ": " + e.what());
        }
      }
      return raw;
    case Kind::number:
      return parse_double(raw, spec.name);
    case Kind::integer: {
      const double v = parse_double(raw, spec.name);
      if (std::floor(v) != v) throw ConfigError(std::string("flag ") + spec.name + " must be an integer");
      return static_cast<long>(v);
    }
    case Kind::list: {
      Json arr = Json::array();
      for (const std::string& item : split(raw, ',')) arr.push_back(parse_double(item, spec.name));
      return arr;
    }
    case Kind::points: {
      Json arr = Json::array();
      for (const std::string& p : split(raw, ';')) {
        Json pt = Json::array();
        for (const std::string& item : split(p, ',')) pt.push_back(parse_double(item, spec.name));
        arr.push_back(pt);
      }
      return arr;
    }
    case Kind::flag:
      return true;
  }
  return nullptr;
}

}  // namespace

Json load_config(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw ConfigError("cannot open config file " + path);
  const std::string text((std::istreambuf_iterator<char>(is)), std::istreambuf_iterator<char>());
  try {
    Json cfg = Json::parse(text);
    if (!cfg.is_object()) throw ConfigError(path + ": top level must be a JSON object");
    return cfg;
  } catch (const Json::parse_error& e) {
    std::size_t line = 1;
    std::size_t col = 1;
    for (std::size_t i = 0; i + 1 < e.byte && i < text.size(); ++i) {
      if (text[i] == '\n') {
        ++line;
        col = 1;
      } else {
        ++col;
      }
    }
    throw ConfigError(path + ":" + std::to_string(line) + ":" + std::to_string(col) + ": " + e.what());
  }
}

int run(const Json& config, std::ostream& log) {
  const Json cfg = resolve(config);
  const std::string command = get_str(cfg, "command");
  std::string action = cfg.at("action").is_null() ? default_action(command) : get_str(cfg, "action");

  Outcome out;
  if (command == "schedule") {
    if (action != "check") throw ConfigError("schedule action must be check");
    out = cmd_schedule(cfg);
  } else if (command == "drift") {
    if (action != "eval") throw ConfigError("drift action must be eval");
    out = cmd_drift(cfg);
  } else if (command == "flow") {
    if (action != "run") throw ConfigError("flow action must be run");
    out = cmd_flow(cfg);
  } else if (command == "sde") {
    if (action != "run") throw ConfigError("sde action must be run");
    out = cmd_sde(cfg);
  } else if (command == "bounds") {
    out = cmd_bounds(cfg, action);
  } else if (command == "verify") {
    out = cmd_verify(cfg, action);
  } else if (command == "estimate") {
    if (action != "run") throw ConfigError("estimate action must be run");
    out = cmd_estimate(cfg);
  } else {
    throw ConfigError("unknown command '" + command + "'");
  }

  const std::filesystem::path dir = get_str(cfg, "out");
  std::filesystem::create_directories(dir);
  write_csv(dir / "curves.csv", out.curves);
  if (out.samples) write_csv(dir / "samples.csv", *out.samples);
  Json summary{{"command", command}, {"action", action}, {"pass", out.pass}, {"config", cfg}};
  for (auto it = out.summary.begin(); it != out.summary.end(); ++it) summary[it.key()] = it.value();
  {
    std::ofstream os(dir / "summary.json", std::ios::binary);
    if (!os) throw Error("cannot write " + (dir / "summary.json").string());
    os << summary.dump(2) << '\n';
  }
  log << command << ' ' << action << ": " << (out.pass ? "PASS" : "FAIL") << " (" << (dir / "summary.json").string()
      << ")\n";
  if (summary.contains("report") && summary["report"].contains("failures") && summary["report"]["failures"].is_array()) {
    for (const auto& f : summary["report"]["failures"]) log << "  - " << f.get<std::string>() << '\n';
  }
  return out.pass ? 0 : 1;
}

int main(int argc, char** argv) {
  CLI::App app{"Stochastic-interpolant flows: drifts, flow maps and contraction bounds"};
  app.require_subcommand(1);
  struct Sub {
    const char* name;
    const char* help;
  };
  const std::vector<Sub> subs{{"schedule", "check interpolation coefficients"},
                              {"drift", "evaluate the velocity field and its Jacobian"},
                              {"flow", "integrate the flow ODE"},
                              {"sde", "simulate the stochastic sampler"},
                              {"bounds", "evaluate closed-form bounds (eval | suggested)"},
                              {"verify", "compare measured contraction with the bounds"},
                              {"estimate", "evaluate the empirical drift estimator"}};

  std::map<std::string, std::string> raw;          // flag name -> value
  std::map<std::string, CLI::Option*> options;     // "<sub> <flag>" -> option
  std::map<std::string, std::string> actions;
  std::map<std::string, std::string> config_paths;
  std::vector<CLI::App*> apps;
  for (const Sub& sub : subs) {
    CLI::App* s = app.add_subcommand(sub.name, sub.help);
    apps.push_back(s);
    s->add_option("action", actions[sub.name], "action");
    s->add_option("--config", config_paths[sub.name], "JSON config file; flags override its keys");
    for (const FlagSpec& spec : flag_specs()) {
      const std::string id = std::string(sub.name) + " " + spec.name;
      if (spec.kind == Kind::flag) {
        options[id] = s->add_flag(spec.name, spec.help);
      } else {
        options[id] = s->add_option(spec.name, raw[id], spec.help);
      }
    }
  }

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e);
  }

  try {
    for (CLI::App* s : apps) {
      if (!s->parsed()) continue;
      const std::string name = s->get_name();
      Json cfg = config_paths[name].empty() ? Json::object() : load_config(config_paths[name]);
      cfg["command"] = name;
      if (!actions[name].empty()) cfg["action"] = actions[name];
      for (const FlagSpec& spec : flag_specs()) {
        const std::string id = name + " " + spec.name;
        if (options[id]->count() > 0) cfg[spec.key] = flag_value(spec, raw[id]);
      }
      return run(cfg, std::cout);
    }
  } catch (const ConfigError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 2;
  } catch (const PreconditionError& e) {
    std::cerr << "validation error: " << e.what() << '\n';
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "runtime error: " << e.what() << '\n';
    return 3;
  }
  return 2;
}

}  // namespace siflow::cli
