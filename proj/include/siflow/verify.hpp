#pragma once

#include <cstdint>
#include <functional>
#include <limits>
#include <map>
#include <memory>
#include <string>
#include <vector>

#include "siflow/bounds.hpp"
#include "siflow/drift.hpp"
#include "siflow/measure.hpp"

namespace siflow {

enum class BackendKind { automatic, gaussian_closed, quadrature };

/// Builds the drift for a pair of endpoints. automatic picks the closed form for
/// Gaussian endpoints with commuting covariances and quadrature otherwise.
std::unique_ptr<DriftBackend> make_drift(const Measure& mu0, const Measure& mu1, const Schedule& schedule,
                                         BackendKind kind = BackendKind::automatic,
                                         const QuadratureConfig& quad = {});

/// Points spanning mean +- n_sd standard deviations of the Gaussian proxy
/// N(a m0 + b m1, a^2 S0 + b^2 S1) per coordinate: `points` per axis, tensor product.
std::vector<Vector> proxy_grid(const Moments& m0, const Moments& m1, const Schedule& schedule, double t,
                               int points, double n_sd = 4.0);

/// Max over x of ||Dv_t(x)||_op, one entry per time.
std::vector<double> measure_drift_norms(const DriftBackend& drift, const std::vector<std::vector<Vector>>& x_grids,
                                        const std::vector<double>& t_grid);

struct VerifyOptions {
  std::vector<double> times;  // empty: 0.05, 0.10, ..., 0.95 (plus 0 and 1 for the closed form)
  int x_points = 0;           // per axis; 0 picks 81 in 1D, 21 in 2D, 9 in 3D
  double n_sd = 4.0;
  int flow_steps = 1000;
  int flow_starts = 0;  // per axis; 0 picks 9 in 1D, 5 in 2D, 3 in 3D
  double tol = std::numeric_limits<double>::quiet_NaN();  // NaN: 1e-6 closed form, 1e-4 quadrature
  BackendKind backend = BackendKind::automatic;
  QuadratureConfig quad;
};

struct BoundRow {
  double t;
  double lambda;
  double measured_dv;  // quantity compared with lambda
  double dv_opnorm;
  double margin_dv;
  double symmetry;  // max ||Dv - Dv^T||_F over the x grid
  double t_flow;    // flow grid time nearest to t
  double flow_bound;
  double measured_df;  // max over trajectories of ||Df||_op
  double margin_df;
};

struct BoundReport {
  std::string name;
  std::string backend;
  std::string grid;
  double tolerance = 0.0;
  std::vector<BoundRow> rows;
  double worst_margin = std::numeric_limits<double>::infinity();  // over rows and every flow step
  double worst_dv_margin = std::numeric_limits<double>::infinity();
  double worst_df_margin = std::numeric_limits<double>::infinity();
  double endpoint_time = 0.0;
  double endpoint_df = 0.0;
  double endpoint_bound = 0.0;
  double max_symmetry_residual = 0.0;
  std::map<std::string, double> constants;
  std::vector<std::string> failures;
  bool pass = false;
};

/// Base N(0, I). Checks symmetry of Dv_t (hard failure above 1e-8 when the
/// Jacobian comes from the Gaussian-base route), lambda_max(Dv_t) <= thm1_lambda + tol
/// and ||Df_t|| <= thm1_flow_bound + tol along integrated trajectories.
BoundReport verify_thm1(const Measure& mu1, double kappa, const Schedule& schedule, const VerifyOptions& opt = {});

/// Checks ||Dv_t||_op <= thm2_lambda + tol and ||Df_t|| <= gronwall bound + tol;
/// reports the corollary and Caffarelli constants. Throws PreconditionError for
/// an inadmissible schedule.
BoundReport verify_thm2(const Measure& mu0, const Measure& mu1, double kappa0, double eta0, double kappa1,
                        const Schedule& schedule, const VerifyOptions& opt = {});

struct BrascampLiebResult {
  double variance;
  double bound;
  double margin;  // bound - variance
  bool pass;      // variance <= bound + 1e-8
};

/// Both sides by quadrature against mu. Throws PreconditionError unless mu is
/// one-dimensional with kappa > 0.
BrascampLiebResult brascamp_lieb_check_1d(const PotentialDensity& mu, const std::function<double(double)>& f,
                                          const std::function<double(double)>& df, int nodes_per_dim = 160);

enum class LemmaMode {
  random,     // A = G G^T, C = A + H H^T, likewise B, D
  commuting,  // all four diagonal in one random orthonormal basis
};

struct LemmaReport {
  int trials = 0;
  int dim = 0;
  int failures = 0;
  double worst_min_eigenvalue = std::numeric_limits<double>::infinity();
  int worst_trial = -1;
  Matrix worst_a, worst_b, worst_c, worst_d;
  std::vector<double> gaps;  // lambda_min(CDC - ABA) per trial
  bool pass = false;  // every trial has lambda_min(CDC - ABA) >= -1e-10
};

/// Randomized check of A <= C, B <= D => ABA <= CDC for PSD matrices.
LemmaReport matrix_lemma_check(int trials, int dim, std::uint64_t seed, LemmaMode mode = LemmaMode::random);

/// Minimum eigenvalue of CDC - ABA.
double lemma_gap(const Matrix& a, const Matrix& b, const Matrix& c, const Matrix& d);

struct EstimatorRow {
  int n;
  double median_error;
  std::vector<double> errors;  // one per seed
};

struct EstimatorStudy {
  double t;
  double bandwidth;
  double threshold;
  int eval_points;
  std::vector<EstimatorRow> rows;
  bool strictly_decreasing = false;
};

/// L2(mu_t) distance between the empirical drift (from n samples of mu1) and
/// the exact drift, median over seeds. Base N(0, I).
EstimatorStudy estimator_study(const Measure& mu1, const Schedule& schedule, const std::vector<int>& n_list,
                               const std::vector<std::uint64_t>& seeds, double t, double bandwidth, double threshold,
                               int eval_points = 10000, std::uint64_t eval_seed = 0x5eed);

}  // namespace siflow
