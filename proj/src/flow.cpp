#include "siflow/flow.hpp"

#include <algorithm>
#include <cmath>

#include "siflow/error.hpp"
#include "siflow/rng.hpp"

namespace siflow {

namespace {

struct Stage {
  Vector v;
  Matrix jac;
};

Stage stage(const DriftBackend& drift, double t, const Vector& x, bool with_jacobian) {
  DriftEvaluation e = drift.evaluate(t, x, with_jacobian);
  return {std::move(e.v), with_jacobian ? std::move(*e.jac) : Matrix()};
}

}  // namespace

FlowResult integrate_flow(const DriftBackend& drift, const Vector& x0, int n_steps, bool with_jacobian) {
  if (n_steps < 10) throw ParameterError("integrate_flow needs n_steps >= 10");
  if (x0.size() != drift.dim()) throw ParameterError("initial state has the wrong dimension");
  const TimeRange range = drift.valid_range();
  const double h = (range.end - range.start) / n_steps;
  const int d = drift.dim();

  FlowResult out;
  out.times.reserve(n_steps + 1);
  out.states.reserve(n_steps + 1);
  Vector x = x0;
  Matrix j = Matrix::Identity(d, d);
  out.times.push_back(range.start);
  out.states.push_back(x);
  if (with_jacobian) {
    out.jacobians.push_back(j);
    out.op_norms.push_back(1.0);
  }

  for (int k = 0; k < n_steps; ++k) {
    const double t = range.start + k * h;
    const double t_next = k + 1 == n_steps ? range.end : range.start + (k + 1) * h;
    const Stage s1 = stage(drift, t, x, with_jacobian);
    const Stage s2 = stage(drift, t + 0.5 * h, x + 0.5 * h * s1.v, with_jacobian);
    const Stage s3 = stage(drift, t + 0.5 * h, x + 0.5 * h * s2.v, with_jacobian);
    const Stage s4 = stage(drift, t_next, x + h * s3.v, with_jacobian);
    x += (h / 6.0) * (s1.v + 2.0 * s2.v + 2.0 * s3.v + s4.v);
    if (!x.allFinite()) throw DivergenceError("flow state became non-finite at step " + std::to_string(k + 1), k + 1);
    out.times.push_back(t_next);
    out.states.push_back(x);
    if (with_jacobian) {
      const Matrix k1 = s1.jac * j;
      const Matrix k2 = s2.jac * (j + 0.5 * h * k1);
      const Matrix k3 = s3.jac * (j + 0.5 * h * k2);
      const Matrix k4 = s4.jac * (j + h * k3);
      j += (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
      if (!j.allFinite()) {
        throw DivergenceError("flow Jacobian became non-finite at step " + std::to_string(k + 1), k + 1);
      }
      out.jacobians.push_back(j);
      out.op_norms.push_back(op_norm(j));
    }
  }
  return out;
}

SdeResult sde_sample(const DriftBackend& drift, const ScoreBackend& score, double eps, const SampleSet& x0,
                     int n_steps, std::uint64_t seed, const std::vector<double>& checkpoints) {
  if (!(eps >= 0.0 && eps <= 1.0)) throw ParameterError("eps must lie in [0,1]");
  if (n_steps < 10) throw ParameterError("sde_sample needs n_steps >= 10");
  if (x0.dim() != drift.dim()) throw ParameterError("initial samples have the wrong dimension");
  const TimeRange rd = drift.valid_range();
  const TimeRange rs = score.valid_range();
  const TimeRange range{std::max(rd.start, rs.start), std::min(rd.end, rs.end)};
  const double h = (range.end - range.start) / n_steps;
  const double noise = std::sqrt(2.0 * (1.0 - eps) * h);
  const double score_gain = 1.0 - eps;
  const int d = x0.dim();

  // checkpoint -> nearest grid index
  std::vector<int> snap;
  SdeResult out;
  for (double c : checkpoints) {
    if (!(c >= range.start - 1e-12 && c <= range.end + 1e-12)) {
      throw ParameterError("checkpoint " + std::to_string(c) + " outside the integration range");
    }
    const int k = static_cast<int>(std::lround((c - range.start) / h));
    snap.push_back(std::clamp(k, 0, n_steps));
    out.times.push_back(snap.back() == n_steps ? range.end : range.start + snap.back() * h);
    out.snapshots.push_back({Matrix(), seed, "sde"});
  }

  auto b = [&](double t, const Matrix& pts) -> Matrix {
    Matrix v = drift.evaluate_batch(t, pts);
    if (score_gain != 0.0) v += score_gain * score.score_batch(t, pts);
    return v;
  };
  auto record = [&](int k, const Matrix& pts) {
    for (std::size_t c = 0; c < snap.size(); ++c) {
      if (snap[c] == k) out.snapshots[c].points = pts;
    }
  };

  const CounterNormal gen(seed);
  Matrix x = x0.points;
  record(0, x);
  for (int k = 0; k < n_steps; ++k) {
    const double t = range.start + k * h;
    const double t_next = k + 1 == n_steps ? range.end : range.start + (k + 1) * h;
    const Matrix k1 = b(t, x);
    const Matrix k2 = b(t + 0.5 * h, x + 0.5 * h * k1);
    const Matrix k3 = b(t + 0.5 * h, x + 0.5 * h * k2);
    const Matrix k4 = b(t_next, x + h * k3);
    x += (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
    if (noise != 0.0) {
      for (Eigen::Index i = 0; i < x.rows(); ++i) {
        for (int j = 0; j < d; ++j) {
          x(i, j) += noise * gen.normal(static_cast<std::uint64_t>(i),
                                        static_cast<std::uint64_t>(k) * d + static_cast<std::uint64_t>(j));
        }
      }
    }
    if (!x.allFinite()) throw DivergenceError("SDE state became non-finite at step " + std::to_string(k + 1), k + 1);
    record(k + 1, x);
  }
  return out;
}

SampleSet pushforward(const std::vector<FlowResult>& flows) {
  SampleSet out;
  out.source = "pushforward";
  if (flows.empty()) return out;
  const auto& grid = flows.front().times;
  out.points.resize(static_cast<Eigen::Index>(flows.size()), flows.front().endpoint().size());
  for (std::size_t i = 0; i < flows.size(); ++i) {
    if (flows[i].times.size() != grid.size() || flows[i].times.back() != grid.back()) {
      throw ParameterError("pushforward needs flows on a shared time grid");
    }
    out.points.row(static_cast<Eigen::Index>(i)) = flows[i].endpoint().transpose();
  }
  return out;
}

SampleSet pushforward(const DriftBackend& drift, const SampleSet& x0, int n_steps) {
  SampleSet out;
  out.seed = x0.seed;
  out.source = "pushforward";
  out.points.resize(x0.points.rows(), x0.points.cols());
  for (Eigen::Index i = 0; i < x0.points.rows(); ++i) {
    out.points.row(i) = integrate_flow(drift, x0.points.row(i).transpose(), n_steps, false).endpoint().transpose();
  }
  return out;
}

}  // namespace siflow
