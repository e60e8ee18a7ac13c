#include "simplex_flows/descent.hpp"

#include "simplex_flows/geometry.hpp"
#include "simplex_flows/spectral.hpp"

#include <cmath>
#include <limits>

namespace sflow {

std::string to_string(Method method) {
  switch (method) {
  case Method::gd_eta:
    return "gd_eta";
  case Method::gd_theta:
    return "gd_theta";
  case Method::ngd:
    return "ngd";
  }
  return "unknown";
}

Method method_from_string(const std::string &name) {
  if (name == "gd_eta" || name == "eta")
    return Method::gd_eta;
  if (name == "gd_theta" || name == "theta")
    return Method::gd_theta;
  if (name == "ngd" || name == "natural")
    return Method::ngd;
  throw ConfigError("unknown method '" + name + "' (expected gd_eta, gd_theta or ngd)");
}

NoiseModel NoiseModel::multiplicative(Matrix fixed) {
  NoiseModel m;
  m.kind = Kind::multiplicative;
  m.delta = [d = std::move(fixed)](long) { return d; };
  return m;
}

NoiseModel NoiseModel::multiplicative(std::function<Matrix(long)> sequence) {
  NoiseModel m;
  m.kind = Kind::multiplicative;
  m.delta = std::move(sequence);
  return m;
}

NoiseModel NoiseModel::additive(std::uint64_t seed) {
  NoiseModel m;
  m.kind = Kind::additive;
  m.seed = seed;
  return m;
}

SymMatrixd linearized_hessian(Method method, const SimplexPointd &target) {
  switch (method) {
  case Method::gd_eta:
    return hess_phi(to_eta(target));
  case Method::gd_theta:
    return hess_psi(to_theta(target));
  case Method::ngd:
    return SymMatrixd::identity(target.dim());
  }
  throw DomainError("linearized_hessian: unknown method");
}

double optimal_lr(const SymMatrixd &q, LrRule rule) {
  const auto ed = eigh(q);
  detail::require_positive_definite(ed, "optimal_lr");
  const double lmin = ed.values[0];
  const double lmax = ed.values[ed.values.size() - 1];
  return rule == LrRule::standard ? 1.0 / lmax : 2.0 / (lmin + lmax);
}

Matrix destabilizing_delta(const SymMatrixd &q) {
  const auto ed = eigh(q);
  detail::require_positive_definite(ed, "destabilizing_delta");
  const Index n = ed.values.size();
  Vector diag = Vector::Zero(n);
  diag[n - 1] = ed.values[0] / ed.values[n - 1];
  return ed.vectors * diag.asDiagonal() * ed.vectors.transpose();
}

namespace {

bool uses_eta(Method m) { return m != Method::gd_theta; }

} // namespace

Descent::Descent(DescentSpec spec)
    : spec_(std::move(spec)), q_(linearized_hessian(spec_.method, spec_.target)),
      rng_(spec_.noise.seed) {
  require_same_dim("Descent", spec_.init.dim(), spec_.target.dim());
  if (spec_.reference)
    require_same_dim("Descent reference", spec_.reference->dim(), spec_.target.dim());
  if (!(spec_.learning_rate > 0.0) || !std::isfinite(spec_.learning_rate))
    throw DomainError("Descent: learning rate must be positive");
  if (spec_.max_iters < 1)
    throw DomainError("Descent: max_iters must be positive");
  if (spec_.noise.kind != NoiseModel::Kind::none && spec_.variant != Variant::linearized)
    throw DomainError("Descent: noise is only defined for the linearized variant");
  if (spec_.noise.kind == NoiseModel::Kind::multiplicative && !spec_.noise.delta)
    throw DomainError("Descent: multiplicative noise without a perturbation sequence");
  optimum_ = uses_eta(spec_.method) ? to_eta(spec_.target).values() : to_theta(spec_.target).values();
}

Vector Descent::initial_state() const {
  return uses_eta(spec_.method) ? to_eta(spec_.init).values() : to_theta(spec_.init).values();
}

SimplexPointd Descent::state_point(const Vector &state) const {
  if (uses_eta(spec_.method))
    return to_simplex(EtaCoordd(state));
  return to_simplex(ThetaCoordd(state));
}

double Descent::reference_kl(const Vector &state) const {
  const SimplexPointd &ref = spec_.reference ? *spec_.reference : spec_.target;
  if (!state.allFinite())
    return std::numeric_limits<double>::quiet_NaN();
  if (uses_eta(spec_.method) && !EtaCoordd::is_valid(state))
    return std::numeric_limits<double>::quiet_NaN();
  try {
    return kl(ref, state_point(state));
  } catch (const Error &) {
    return std::numeric_limits<double>::quiet_NaN();
  }
}

double Descent::objective(const Vector &state) const {
  if (spec_.variant == Variant::linearized) {
    const Vector e = state - optimum_;
    return 0.5 * e.dot(q_.matrix() * e);
  }
  return kl(spec_.target, state_point(state));
}

Vector Descent::step_error(const Vector &e, long k) {
  require_same_dim("Descent::step_error", e.size(), optimum_.size());
  Vector v = q_.matrix() * e;
  if (spec_.noise.kind == NoiseModel::Kind::multiplicative) {
    const Matrix d = spec_.noise.delta(k);
    if (d.rows() != v.size() || d.cols() != v.size())
      throw DimensionMismatch("Descent: perturbation", d.rows(), v.size());
    v += d * v;
  }
  Vector next = e - spec_.learning_rate * v;
  if (spec_.noise.kind == NoiseModel::Kind::additive)
    next += gaussian_noise(e.size(), rng_);
  return next;
}

Vector Descent::step(const Vector &state, long k) {
  require_same_dim("Descent::step", state.size(), optimum_.size());
  const double alpha = spec_.learning_rate;
  if (spec_.variant == Variant::linearized)
    return optimum_ + step_error(state - optimum_, k);

  Vector next;
  switch (spec_.method) {
  case Method::gd_eta:
    next = state - alpha * grad_Lq_eta(EtaCoordd(state), EtaCoordd(optimum_));
    break;
  case Method::gd_theta:
    next = state - alpha * grad_Lq_theta(ThetaCoordd(state), ThetaCoordd(optimum_));
    break;
  case Method::ngd:
    next = state - alpha * natural_grad_Lq(EtaCoordd(state), EtaCoordd(optimum_));
    break;
  }
  if (!next.allFinite())
    throw NonFinite("Descent: non-finite iterate at k = " + std::to_string(k));
  if (uses_eta(spec_.method) && !EtaCoordd::is_valid(next))
    throw BoundaryEscape("Descent: " + to_string(spec_.method) + " iterate left the simplex at k = " +
                         std::to_string(k));
  return next;
}

Trajectory Descent::run() {
  Trajectory traj;
  Vector x = initial_state();
  double obj = objective(x);
  traj.push(0.0, x, reference_kl(x), obj);
  for (long k = 0; k < spec_.max_iters; ++k) {
    if (spec_.tolerance > 0.0 && obj <= spec_.tolerance)
      break;
    x = step(x, k);
    obj = objective(x);
    traj.push(static_cast<double>(k + 1), x, reference_kl(x), obj);
  }
  return traj;
}

double measured_loss_contraction(const SymMatrixd &q, double alpha, long iters, std::uint64_t seed) {
  if (iters < 1)
    throw DomainError("measured_loss_contraction: iters must be positive");
  CounterRng rng(seed);
  const Matrix m = Matrix::Identity(q.dim(), q.dim()) - alpha * q.matrix();
  Vector e = gaussian_noise(q.dim(), rng);
  e.normalize();
  double ratio = 0.0;
  for (long k = 0; k < iters; ++k) {
    const Vector next = m * e;
    const double before = e.dot(q.matrix() * e);
    const double after = next.dot(q.matrix() * next);
    ratio = after / before;
    e = next / next.norm();
  }
  return ratio;
}

SymMatrixd steady_state_covariance(Method method, const SimplexPointd &target, double alpha,
                                   long burn_in, long steps, std::uint64_t seed) {
  if (burn_in < 0 || steps < 2)
    throw DomainError("steady_state_covariance: need burn_in >= 0 and steps >= 2");
  DescentSpec spec{method, Variant::linearized, target, target, alpha, NoiseModel::additive(seed),
                   burn_in + steps, 0.0, std::nullopt};
  Descent d(std::move(spec));
  const Index n = target.dim();
  Vector e = Vector::Zero(n);
  for (long k = 0; k < burn_in; ++k)
    e = d.step_error(e, k);
  // The stationary mean is zero, so the second moment is the covariance.
  Matrix acc = Matrix::Zero(n, n);
  for (long k = 0; k < steps; ++k) {
    e = d.step_error(e, burn_in + k);
    acc.noalias() += e * e.transpose();
  }
  acc /= static_cast<double>(steps);
  return SymMatrixd(0.5 * (acc + acc.transpose()));
}

} // namespace sflow
