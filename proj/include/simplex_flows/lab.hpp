#pragma once

// Experiment harness: rate fits, rate bounds over sublevel sets, and the
// experiments behind the convergence, conditioning and robustness results.
// Each experiment returns a table plus named pass/fail assertions; write_outputs
// turns that into <name>.csv and <name>.json.

#include "simplex_flows/config.hpp"
#include "simplex_flows/descent.hpp"
#include "simplex_flows/flows.hpp"

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <string>
#include <utility>
#include <vector>

namespace sflow {

// ---------------------------------------------------------------------------
// Rate fitting

struct FitOptions {
  double fraction = 0.6;
  double floor = 1e-13;
  double min_r2 = 0.99;
};

struct RateFit {
  /// Decay rate: minus the slope of log(value) against time.
  double slope = 0.0;
  double intercept = 0.0;
  double r_squared = 0.0;
  double t_lo = 0.0;
  double t_hi = 0.0;
  std::size_t points = 0;
  /// r_squared below FitOptions::min_r2.
  bool flagged = false;
};

/// Least-squares fit of log(values) against times over the last `fraction`
/// of the samples above `floor`. Throws InsufficientDecay when the values
/// never drop below 0.9x the first one or fewer than 10 samples remain.
RateFit fit_rate(const std::vector<double> &times, const std::vector<double> &values,
                 const FitOptions &opts = {});
RateFit fit_rate(const Trajectory &traj, const FitOptions &opts = {});

// ---------------------------------------------------------------------------
// Rate bounds

enum class BoundLoss { Lq_eta, Lq_theta };

struct RateBounds {
  /// Smallest and largest Hessian eigenvalue over the sampled sublevel set.
  double m_lo = 0.0;
  double l_hi = 0.0;

  double rate_lo() const { return 2.0 * m_lo; }
  double rate_hi() const { return 2.0 * l_hi; }
};

/// Extreme eigenvalues of the Hessian of L_q (eta or theta chart) over points
/// of {x : L_q(x) <= L_q(p0)}: a barycentric grid (n = 2) or Dirichlet draws
/// (n > 2), chords from the optimum, any extra chart states supplied, and a
/// pattern search over rays to the edge of the set.
RateBounds rate_bounds(BoundLoss loss, const SimplexPointd &q, const SimplexPointd &p0,
                       long samples, std::uint64_t seed,
                       const std::vector<Vector> &extra_states = {});

// ---------------------------------------------------------------------------
// Experiment results

struct Assertion {
  std::string name;
  bool passed = false;
  std::string detail;
};

struct ExperimentResult {
  std::string name;
  std::uint64_t seed = 0;
  std::vector<std::pair<std::string, std::string>> config;
  std::vector<std::string> columns;
  std::vector<std::vector<double>> rows;
  std::vector<std::pair<std::string, double>> summary;
  std::vector<Assertion> assertions;

  bool all_passed() const;
  double summary_value(const std::string &key) const;
};

/// Nine significant digits, as used in every output file.
std::string format_number(double x);

std::string to_csv(const ExperimentResult &result);
std::string to_json(const ExperimentResult &result);
/// Writes <dir>/<name>.csv and <dir>/<name>.json, creating dir if needed.
void write_outputs(const ExperimentResult &result, const std::filesystem::path &dir);

// ---------------------------------------------------------------------------
// Experiments

/// Per random init: fitted rates of the eta, natural and theta flows of L_q,
/// their rate bounds, and the natural flow against its closed form.
ExperimentResult sandwich_experiment(const RunConfig &cfg);

/// Flows in the barred charts of make_identity_chart(theta_q, c).
ExperimentResult affine_rate_experiment(const RunConfig &cfg);

/// Convergence time (max over inits) per learning rate on the empirical loss.
ExperimentResult lr_sweep(const RunConfig &cfg);

/// The sweep grid, resolving grid = auto to a per-method default.
GridSpec sweep_grid(const RunConfig &cfg);
/// The sweep tolerance, resolving tol = auto to 1e-4 (full batch) or 1e-2 (sgd).
double sweep_tolerance(const RunConfig &cfg);

/// Full-batch descent with one small learning rate shared by all methods.
ExperimentResult empirical_sandwich(const RunConfig &cfg);

/// Multiplicative and additive noise on the linearized dynamics.
ExperimentResult robustness_experiment(const RunConfig &cfg);

/// Midpoint-violation search for L*_p(theta), and the same search on L_q(theta).
ExperimentResult nonconvexity_experiment(const RunConfig &cfg);

/// L_q along lines through the optimum in both charts.
ExperimentResult local_sections(const RunConfig &cfg);

/// Dispatch by name (sandwich, affine, sweep, empirical, robustness,
/// nonconvexity, sections).
ExperimentResult run_experiment(const std::string &name, const RunConfig &cfg);

// ---------------------------------------------------------------------------
// Building blocks

struct Witness {
  Vector a;
  Vector b;
  double fa = 0.0;
  double fb = 0.0;
  double fmid = 0.0;
  long probes = 0;
};

/// Random multi-start search for theta_a, theta_b with f(midpoint) above
/// max(f(a), f(b)). Probes are drawn uniformly from the cube of half-width
/// `radius` around `center`. Throws WitnessNotFound when the budget runs out.
Witness nonconvexity_witness(const std::function<double(const Vector &)> &f, const Vector &center,
                             double radius, long probes, std::uint64_t seed);

/// Draws a random point and shrinks it toward q until KL(q || p) <= max_kl.
SimplexPointd near_optimum_init(const SimplexPointd &q, double max_kl, CounterRng &rng);

/// Worker count: SIMPLEX_FLOWS_THREADS if set and positive, else the
/// hardware concurrency.
unsigned worker_count();

/// Runs fn(i) for i in [0, count) on worker_count() threads. Results land in
/// index order, so output does not depend on scheduling.
template <typename T> std::vector<T> parallel_map(std::size_t count, const std::function<T(std::size_t)> &fn);

} // namespace sflow

#include "simplex_flows/detail/parallel.hpp"
