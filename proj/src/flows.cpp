#include "simplex_flows/flows.hpp"

#include <cmath>
#include <cstdio>

namespace sflow {

std::string to_string(Loss loss) { return loss == Loss::Lq ? "Lq" : "Lstar"; }

std::string to_string(FlowChart chart) {
  switch (chart) {
  case FlowChart::eta:
    return "eta";
  case FlowChart::theta:
    return "theta";
  case FlowChart::natural_eta:
    return "natural_eta";
  case FlowChart::natural_theta:
    return "natural_theta";
  case FlowChart::affine_eta:
    return "affine_eta";
  case FlowChart::affine_theta:
    return "affine_theta";
  }
  return "unknown";
}

double flow_loss(Loss loss, const SimplexPointd &target, const SimplexPointd &state) {
  return loss == Loss::Lq ? kl(target, state) : kl(state, target);
}

namespace {

const AffineChartd &require_affine(const FlowSpec &spec) {
  if (!spec.affine)
    throw DomainError("flow: affine chart requested without an AffineChart");
  require_same_dim("flow affine chart", spec.affine->dim(), spec.target.dim());
  return *spec.affine;
}

/// Euclidean gradients of the loss at a distribution, in the eta and theta charts.
Vector grad_eta_at(const FlowSpec &spec, const Vector &eta) {
  const EtaCoordd e(eta);
  if (spec.loss == Loss::Lq)
    return grad_Lq_eta(e, to_eta(spec.target));
  return grad_Lstar_eta(e, to_eta(spec.target));
}

Vector grad_theta_at(const FlowSpec &spec, const Vector &theta) {
  const ThetaCoordd t(theta);
  if (spec.loss == Loss::Lq)
    return grad_Lq_theta(t, to_theta(spec.target));
  return grad_Lstar_theta(t, to_theta(spec.target));
}

bool state_valid(const FlowSpec &spec, const Vector &x) {
  if (!x.allFinite())
    return false;
  try {
    (void)flow_state_point(spec, x);
  } catch (const Error &) {
    return false;
  }
  return true;
}

} // namespace

Vector flow_initial_state(const FlowSpec &spec) {
  require_same_dim("flow", spec.init.dim(), spec.target.dim());
  switch (spec.chart) {
  case FlowChart::eta:
  case FlowChart::natural_eta:
    return to_eta(spec.init).values();
  case FlowChart::theta:
  case FlowChart::natural_theta:
    return to_theta(spec.init).values();
  case FlowChart::affine_eta:
    return require_affine(spec).eta_bar(to_eta(spec.init).values());
  case FlowChart::affine_theta:
    return require_affine(spec).theta_bar(to_theta(spec.init).values());
  }
  throw DomainError("flow: unknown chart");
}

SimplexPointd flow_state_point(const FlowSpec &spec, const Vector &x) {
  switch (spec.chart) {
  case FlowChart::eta:
  case FlowChart::natural_eta:
    return to_simplex(EtaCoordd(x));
  case FlowChart::theta:
  case FlowChart::natural_theta:
    return to_simplex(ThetaCoordd(x));
  case FlowChart::affine_eta:
    return to_simplex(EtaCoordd(require_affine(spec).eta_from_bar(x)));
  case FlowChart::affine_theta:
    return to_simplex(ThetaCoordd(require_affine(spec).theta_from_bar(x)));
  }
  throw DomainError("flow: unknown chart");
}

Vector flow_rhs(const FlowSpec &spec, const Vector &x) {
  require_same_dim("flow_rhs", x.size(), spec.target.dim());
  switch (spec.chart) {
  case FlowChart::eta:
    return -grad_eta_at(spec, x);
  case FlowChart::theta:
    return -grad_theta_at(spec, x);
  case FlowChart::natural_eta: {
    const EtaCoordd e(x);
    if (spec.loss == Loss::Lq)
      return -natural_grad_Lq(e, to_eta(spec.target));
    // -hess_phi^{-1} grad = -hess_psi(theta(eta)) (theta - theta_p)
    const Vector theta = theta_from_eta(e).values();
    return detail::hess_psi_times<double>(x, to_theta(spec.target).values() - theta);
  }
  case FlowChart::natural_theta: {
    const ThetaCoordd t(x);
    if (spec.loss == Loss::Lstar)
      return -natural_grad_Lstar(t, to_theta(spec.target));
    // -hess_psi^{-1} (eta - eta_q) = hess_phi(eta) (eta_q - eta)
    const EtaCoordd e = eta_from_theta(t);
    return detail::hess_phi_times<double>(e.values(), e.last(),
                                          to_eta(spec.target).values() - e.values());
  }
  case FlowChart::affine_eta: {
    const AffineChartd &chart = require_affine(spec);
    return -chart.eta_grad_bar(grad_eta_at(spec, chart.eta_from_bar(x)));
  }
  case FlowChart::affine_theta: {
    const AffineChartd &chart = require_affine(spec);
    return -chart.theta_grad_bar(grad_theta_at(spec, chart.theta_from_bar(x)));
  }
  }
  throw DomainError("flow: unknown chart");
}

namespace {

std::string format_loss(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.3g", v);
  return buf;
}

class Rk4Stepper {
public:
  Rk4Stepper(const FlowSpec &spec, const IntegrateOptions &opts) : spec_(spec), opts_(opts) {}

  /// Advances x (with loss `loss`) by h, refining on rejection.
  void advance(Vector &x, double &loss, double h, int depth) const {
    Vector next;
    double next_loss = 0.0;
    if (try_step(x, loss, h, next, next_loss)) {
      x = std::move(next);
      loss = next_loss;
      return;
    }
    if (depth >= opts_.max_refinements)
      throw BoundaryEscape("integrate: step of size " + std::to_string(h) + " at loss " +
                           format_loss(loss) +
                           " rejected after refinement (state left the chart or loss increased)");
    const double sub = h / opts_.refine_factor;
    for (int i = 0; i < opts_.refine_factor; ++i)
      advance(x, loss, sub, depth + 1);
  }

private:
  bool try_step(const Vector &x, double loss, double h, Vector &next, double &next_loss) const {
    try {
      const Vector k1 = flow_rhs(spec_, x);
      const Vector x2 = x + 0.5 * h * k1;
      if (!state_valid(spec_, x2))
        return false;
      const Vector k2 = flow_rhs(spec_, x2);
      const Vector x3 = x + 0.5 * h * k2;
      if (!state_valid(spec_, x3))
        return false;
      const Vector k3 = flow_rhs(spec_, x3);
      const Vector x4 = x + h * k3;
      if (!state_valid(spec_, x4))
        return false;
      const Vector k4 = flow_rhs(spec_, x4);
      next = x + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
      if (!state_valid(spec_, next))
        return false;
      next_loss = flow_loss(spec_.loss, spec_.target, flow_state_point(spec_, next));
    } catch (const Error &) {
      return false;
    }
    // Gradient flows never increase the loss; an increase means the step
    // overshot a stiff direction. Below about 1e-12 the KL evaluation is
    // dominated by rounding, so only chart validity is checked there.
    constexpr double kRoundingFloor = 1e-12;
    return loss < kRoundingFloor || next_loss <= loss + 1e-10 * loss;
  }

  const FlowSpec &spec_;
  const IntegrateOptions &opts_;
};

} // namespace

Trajectory integrate(const FlowSpec &spec, double t_end, double dt, int sample_every,
                     const IntegrateOptions &opts) {
  if (!(t_end > 0.0) || !(dt > 0.0))
    throw DomainError("integrate: t_end and dt must be positive");
  if (sample_every < 1)
    throw DomainError("integrate: sample_every must be positive");
  if (opts.refine_factor < 2 || opts.max_refinements < 0)
    throw DomainError("integrate: invalid refinement options");
  require_same_dim("integrate", spec.init.dim(), spec.target.dim());

  Vector x = flow_initial_state(spec);
  double loss = flow_loss(spec.loss, spec.target, spec.init);

  Trajectory traj;
  traj.push(0.0, x, loss, loss);

  const auto steps = static_cast<long>(std::llround(t_end / dt));
  const Rk4Stepper stepper(spec, opts);
  for (long i = 1; i <= steps; ++i) {
    stepper.advance(x, loss, dt, 0);
    const bool stop = opts.stop_below > 0.0 && loss < opts.stop_below;
    if (i % sample_every == 0 || i == steps || stop)
      traj.push(static_cast<double>(i) * dt, x, loss, loss);
    if (stop)
      break;
  }
  return traj;
}

EtaCoordd natural_flow_exact(const EtaCoordd &eq, const EtaCoordd &e0, double t) {
  require_same_dim("natural_flow_exact", eq.dim(), e0.dim());
  if (!(t >= 0.0))
    throw DomainError("natural_flow_exact: t must be nonnegative");
  return EtaCoordd(eq.values() + std::exp(-t) * (e0.values() - eq.values()));
}

} // namespace sflow
