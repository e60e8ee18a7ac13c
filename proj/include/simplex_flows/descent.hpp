#pragma once

// Discrete-time gradient and natural gradient descent on L_q, exact and
// linearized about the optimum, with multiplicative and additive noise.

#include "simplex_flows/rng.hpp"
#include "simplex_flows/simplex.hpp"
#include "simplex_flows/sym_matrix.hpp"
#include "simplex_flows/trajectory.hpp"

#include <cstdint>
#include <functional>
#include <optional>
#include <string>

namespace sflow {

enum class Method { gd_eta, gd_theta, ngd };
enum class Variant { nonlinear, linearized };
enum class LrRule { standard, optimal };

std::string to_string(Method method);
Method method_from_string(const std::string &name);

/// Gradient noise. Multiplicative noise replaces the (preconditioned)
/// gradient v by (I + Delta(k)) v; additive noise adds delta(k) ~ N(0, I) to
/// each update.
struct NoiseModel {
  enum class Kind { none, multiplicative, additive };

  Kind kind = Kind::none;
  std::function<Matrix(long)> delta;
  std::uint64_t seed = 0;

  static NoiseModel none() { return {}; }
  static NoiseModel multiplicative(Matrix fixed);
  static NoiseModel multiplicative(std::function<Matrix(long)> sequence);
  static NoiseModel additive(std::uint64_t seed);
};

struct DescentSpec {
  Method method = Method::ngd;
  Variant variant = Variant::nonlinear;
  SimplexPointd target;
  SimplexPointd init;
  double learning_rate = 1.0;
  NoiseModel noise;
  long max_iters = 100;
  /// Stop once the objective drops to this value (0 runs all iterations).
  double tolerance = 0.0;
  /// Distribution the recorded KL is measured against (defaults to target).
  std::optional<SimplexPointd> reference;
};

/// Hessian of L_q at the optimum in the method's chart: hess_phi(eta_q),
/// hess_psi(theta_q), or I for ngd.
SymMatrixd linearized_hessian(Method method, const SimplexPointd &target);

/// 1/lambda_max(Q) (standard) or 2/(lambda_min + lambda_max) (optimal).
double optimal_lr(const SymMatrixd &q, LrRule rule);

/// U diag(0, ..., 0, 1/kappa) U^T for Q = U Lambda U^T (ascending).
Matrix destabilizing_delta(const SymMatrixd &q);

/// Stateful runner for a DescentSpec. States are chart coordinates (eta for
/// gd_eta and ngd, theta for gd_theta).
class Descent {
public:
  explicit Descent(DescentSpec spec);

  const DescentSpec &spec() const { return spec_; }
  /// Optimum in the method's chart.
  const Vector &optimum() const { return optimum_; }
  /// Frozen Hessian Q used by the linearized variant.
  const SymMatrixd &hessian() const { return q_; }

  Vector initial_state() const;
  /// One update at iteration k. Advances the noise generator when noisy.
  Vector step(const Vector &state, long k);
  /// Linearized update of the error e = x - x_opt.
  Vector step_error(const Vector &e, long k);

  /// Iterates from the initial state, recording every iteration.
  Trajectory run();

  /// Objective minimized at state: KL(target || x) for the nonlinear variant,
  /// 0.5 e^T Q e for the linearized one.
  double objective(const Vector &state) const;
  /// KL(reference || x), NaN if x is not a valid chart point.
  double reference_kl(const Vector &state) const;
  SimplexPointd state_point(const Vector &state) const;

private:
  DescentSpec spec_;
  Vector optimum_;
  SymMatrixd q_;
  CounterRng rng_;
};

/// Per-step ratio of 0.5 e^T Q e under e <- (I - alpha Q) e, measured along
/// the slowest mode by renormalized power iteration from a random start.
double measured_loss_contraction(const SymMatrixd &q, double alpha, long iters, std::uint64_t seed);

/// Sample covariance of the error of the linearized, additively perturbed
/// dynamics after burn_in iterations, averaged over `steps` iterations.
SymMatrixd steady_state_covariance(Method method, const SimplexPointd &target, double alpha,
                                   long burn_in, long steps, std::uint64_t seed);

} // namespace sflow
