#pragma once

// Continuous-time gradient flows x' = -grad L(x) for the two losses in the
// eta, theta and affine (barred) charts, plus the natural gradient flows.
// Integrated with fixed-step classical RK4.

#include "simplex_flows/geometry.hpp"
#include "simplex_flows/simplex.hpp"
#include "simplex_flows/trajectory.hpp"

#include <optional>
#include <string>

namespace sflow {

enum class Loss {
  Lq,   // D(q || x): target q, state in the second argument
  Lstar // D(x || p): target p, state in the first argument
};

enum class FlowChart { eta, theta, natural_eta, natural_theta, affine_eta, affine_theta };

std::string to_string(Loss loss);
std::string to_string(FlowChart chart);

struct FlowSpec {
  Loss loss = Loss::Lq;
  FlowChart chart = FlowChart::eta;
  SimplexPointd target;
  SimplexPointd init;
  /// Required for the affine charts, ignored otherwise.
  std::optional<AffineChartd> affine;
};

struct IntegrateOptions {
  /// Stop once the loss drops below this value (0 disables).
  double stop_below = 0.0;
  /// Each rejected step is split into this many substeps...
  int refine_factor = 10;
  /// ...recursively, at most this many levels deep.
  int max_refinements = 3;
};

/// Loss of a simplex point under the given loss and target.
double flow_loss(Loss loss, const SimplexPointd &target, const SimplexPointd &state);

/// Initial chart coordinates of spec.init.
Vector flow_initial_state(const FlowSpec &spec);

/// Distribution represented by chart coordinates x (throws if outside the chart).
SimplexPointd flow_state_point(const FlowSpec &spec, const Vector &x);

/// Right-hand side -grad L(x) (or -natural grad) in the flow's chart.
Vector flow_rhs(const FlowSpec &spec, const Vector &x);

/// Fixed-step RK4 integration from t = 0 to t_end, recording every
/// `sample_every`-th step (and the final state). A step is rejected when an
/// intermediate state leaves the chart or the loss increases; a rejected step
/// is retried as refine_factor substeps, recursively up to max_refinements
/// levels, after which BoundaryEscape is thrown.
Trajectory integrate(const FlowSpec &spec, double t_end, double dt, int sample_every,
                     const IntegrateOptions &opts = {});

/// Exact natural gradient flow of L_q in eta: eta_q + exp(-t) (eta_0 - eta_q).
EtaCoordd natural_flow_exact(const EtaCoordd &eq, const EtaCoordd &e0, double t);

} // namespace sflow
