#pragma once

#include <cstdint>
#include <vector>

#include "siflow/drift.hpp"
#include "siflow/measure.hpp"

namespace siflow {

struct FlowResult {
  std::vector<double> times;
  std::vector<Vector> states;
  std::vector<Matrix> jacobians;  // empty unless requested
  std::vector<double> op_norms;   // spectral norms of jacobians

  const Vector& endpoint() const { return states.back(); }
};

/// Classical RK4 on a uniform grid over the backend's valid range. With
/// `with_jacobian` the variational equation J' = Dv(f) J, J(start) = I, is
/// integrated with the same stages. Throws DivergenceError on non-finite state.
FlowResult integrate_flow(const DriftBackend& drift, const Vector& x0, int n_steps = 1000,
                          bool with_jacobian = false);

struct SdeResult {
  std::vector<double> times;        // checkpoint times snapped to the grid
  std::vector<SampleSet> snapshots;  // one per checkpoint
};

/// Paths of dX = [v + (1 - eps) s] dt + sqrt(2 (1 - eps)) dW started at the
/// rows of x0. Each step advances the drift part with RK4 and adds the Gaussian
/// increment, so eps = 1 reproduces integrate_flow exactly. Noise for (path, step)
/// comes from a counter-based generator keyed by seed.
SdeResult sde_sample(const DriftBackend& drift, const ScoreBackend& score, double eps, const SampleSet& x0,
                     int n_steps, std::uint64_t seed, const std::vector<double>& checkpoints);

/// Endpoint states of flows sharing one time grid, one row per flow.
SampleSet pushforward(const std::vector<FlowResult>& flows);

/// Integrates every row of `x0` and collects the endpoints.
SampleSet pushforward(const DriftBackend& drift, const SampleSet& x0, int n_steps = 1000);

}  // namespace siflow
