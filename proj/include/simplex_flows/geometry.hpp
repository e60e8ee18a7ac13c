#pragma once

// Divergences, loss gradients and Hessians on the simplex.
//
//   L_q(p)  = D(q || p)   minimized over the second argument (target q)
//   L*_p(q) = D(q || p)   minimized over the first argument (target p)
//
// Gradients are given in both the mixture (eta) and exponential (theta)
// charts. Natural gradients use the Fisher metric, i.e. hess_phi in eta and
// hess_psi in theta.

#include "simplex_flows/simplex.hpp"
#include "simplex_flows/spectral.hpp"
#include "simplex_flows/sym_matrix.hpp"

#include <cmath>
#include <utility>

namespace sflow {

/// KL divergence D(q || p) = sum q_i log(q_i / p_i).
template <typename Scalar> Scalar kl(const SimplexPoint<Scalar> &q, const SimplexPoint<Scalar> &p) {
  require_same_dim("kl", q.dim(), p.dim());
  Scalar sum(0);
  for (Index i = 0; i < q.outcomes(); ++i) {
    const Scalar qi = q[i];
    const Scalar pi = p[i];
    // log1p keeps the per-term error relative when p is close to q.
    sum += qi * std::log1p((qi - pi) / pi);
  }
  return std::max(sum, Scalar(0));
}

/// D_psi(theta_p || theta_q) = psi(tp) - psi(tq) - grad psi(tq)^T (tp - tq).
template <typename Scalar>
Scalar bregman_psi(const ThetaCoord<Scalar> &tp, const ThetaCoord<Scalar> &tq) {
  require_same_dim("bregman_psi", tp.dim(), tq.dim());
  const Vec<Scalar> eq = eta_from_theta(tq).values();
  return psi(tp) - psi(tq) - eq.dot(tp.values() - tq.values());
}

/// D_phi(eta_q || eta_p) = phi(eq) - phi(ep) - grad phi(ep)^T (eq - ep).
template <typename Scalar>
Scalar bregman_phi(const EtaCoord<Scalar> &eq, const EtaCoord<Scalar> &ep) {
  require_same_dim("bregman_phi", eq.dim(), ep.dim());
  const Vec<Scalar> tp = theta_from_eta(ep).values();
  return phi(eq) - phi(ep) - tp.dot(eq.values() - ep.values());
}

// ---------------------------------------------------------------------------
// Hessians

/// hess phi(eta) = diag(1/eta_i) + (1/eta_{n+1}) * ones.
template <typename Scalar> SymMatrix<Scalar> hess_phi(const EtaCoord<Scalar> &e) {
  const Index n = e.dim();
  Mat<Scalar> h = Mat<Scalar>::Constant(n, n, Scalar(1) / e.last());
  h.diagonal().array() += e.values().array().inverse();
  return SymMatrix<Scalar>(std::move(h));
}

/// hess psi(theta) = diag(eta) - eta eta^T with eta = grad psi(theta).
/// Also the Hessian of L_q in the theta chart.
template <typename Scalar> SymMatrix<Scalar> hess_psi(const ThetaCoord<Scalar> &t) {
  const Vec<Scalar> eta = eta_from_theta(t).values();
  Mat<Scalar> h = -eta * eta.transpose();
  h.diagonal() += eta;
  return SymMatrix<Scalar>(std::move(h));
}

/// Hessian of L_q in the eta chart:
///   diag(q_i / eta_i^2) + (q_{n+1} / eta_{n+1}^2) * ones.
template <typename Scalar>
SymMatrix<Scalar> hess_Lq_eta(const EtaCoord<Scalar> &e, const EtaCoord<Scalar> &eq) {
  require_same_dim("hess_Lq_eta", e.dim(), eq.dim());
  const Index n = e.dim();
  const Scalar last = e.last();
  Mat<Scalar> h = Mat<Scalar>::Constant(n, n, eq.last() / (last * last));
  h.diagonal().array() += eq.values().array() / e.values().array().square();
  return SymMatrix<Scalar>(std::move(h));
}

// ---------------------------------------------------------------------------
// Gradients

namespace detail {

/// hess_phi(eta) * v without forming the matrix.
template <typename Scalar>
Vec<Scalar> hess_phi_times(const Vec<Scalar> &eta, Scalar eta_last, const Vec<Scalar> &v) {
  return (v.array() / eta.array()).matrix() + Vec<Scalar>::Constant(v.size(), v.sum() / eta_last);
}

/// Gradient of the cross-entropy -sum_i w_i log p_i in the eta chart. The
/// weights w (n+1 entries) may contain zeros; for a probability vector w this
/// is the gradient of L_w.
template <typename Scalar>
Vec<Scalar> cross_entropy_grad_eta(const Vec<Scalar> &eta, const Vec<Scalar> &weights) {
  const Index n = eta.size();
  const Scalar last = Scalar(1) - eta.sum();
  return (-weights.head(n).array() / eta.array() + weights[n] / last).matrix();
}

/// hess_psi(theta) * v where eta = grad psi(theta).
template <typename Scalar> Vec<Scalar> hess_psi_times(const Vec<Scalar> &eta, const Vec<Scalar> &v) {
  return (eta.array() * v.array()).matrix() - eta * eta.dot(v);
}

} // namespace detail

/// grad L_q(eta_p) = -hess_phi(eta_p) (eta_q - eta_p).
template <typename Scalar>
Vec<Scalar> grad_Lq_eta(const EtaCoord<Scalar> &ep, const EtaCoord<Scalar> &eq) {
  require_same_dim("grad_Lq_eta", ep.dim(), eq.dim());
  return -detail::hess_phi_times<Scalar>(ep.values(), ep.last(), eq.values() - ep.values());
}

/// grad L_q(theta_p) = grad psi(theta_p) - grad psi(theta_q).
template <typename Scalar>
Vec<Scalar> grad_Lq_theta(const ThetaCoord<Scalar> &tp, const ThetaCoord<Scalar> &tq) {
  require_same_dim("grad_Lq_theta", tp.dim(), tq.dim());
  return eta_from_theta(tp).values() - eta_from_theta(tq).values();
}

/// grad L*_p(eta_q) = grad phi(eta_q) - grad phi(eta_p).
template <typename Scalar>
Vec<Scalar> grad_Lstar_eta(const EtaCoord<Scalar> &eq, const EtaCoord<Scalar> &ep) {
  require_same_dim("grad_Lstar_eta", eq.dim(), ep.dim());
  return theta_from_eta(eq).values() - theta_from_eta(ep).values();
}

/// grad L*_p(theta_q) = -hess_psi(theta_q) (theta_p - theta_q).
template <typename Scalar>
Vec<Scalar> grad_Lstar_theta(const ThetaCoord<Scalar> &tq, const ThetaCoord<Scalar> &tp) {
  require_same_dim("grad_Lstar_theta", tq.dim(), tp.dim());
  const Vec<Scalar> eta = eta_from_theta(tq).values();
  return -detail::hess_psi_times<Scalar>(eta, tp.values() - tq.values());
}

/// Natural gradient of L_q in eta: hess_phi^{-1} grad = eta_p - eta_q.
template <typename Scalar>
Vec<Scalar> natural_grad_Lq(const EtaCoord<Scalar> &ep, const EtaCoord<Scalar> &eq) {
  require_same_dim("natural_grad_Lq", ep.dim(), eq.dim());
  return ep.values() - eq.values();
}

/// Natural gradient of L*_p in theta: hess_psi^{-1} grad = theta_q - theta_p.
template <typename Scalar>
Vec<Scalar> natural_grad_Lstar(const ThetaCoord<Scalar> &tq, const ThetaCoord<Scalar> &tp) {
  require_same_dim("natural_grad_Lstar", tq.dim(), tp.dim());
  return tq.values() - tp.values();
}

// ---------------------------------------------------------------------------
// Affine reparameterization of the dual pair.
//
// Barred coordinates are defined by theta_bar = A^T (theta - b), so that
//   psi_bar(theta_bar) = psi(A^{-T} theta_bar + b),
//   eta_bar = grad psi_bar(theta_bar) = A^{-1} eta,
//   hess psi_bar = A^{-1} hess psi A^{-T},   hess phi_bar = A^T hess phi A.
// Gradients pull back as grad_theta_bar = A^{-1} grad_theta and
// grad_eta_bar = A^T grad_eta.

template <typename Scalar = double> class AffineChart {
public:
  AffineChart(Mat<Scalar> a, Vec<Scalar> b, Scalar c)
      : a_(std::move(a)), b_(std::move(b)), c_(c), lu_(a_) {
    if (a_.rows() != a_.cols())
      throw DomainError("AffineChart: A must be square");
    require_same_dim("AffineChart", a_.rows(), b_.size());
    if (!(c_ > Scalar(0)))
      throw DomainError("AffineChart: scale c must be positive");
    if (!lu_.isInvertible())
      throw DomainError("AffineChart: A is singular");
    const Scalar rcond = lu_.rcond();
    if (!(rcond > Scalar(1e-14)))
      throw DomainError("AffineChart: A is numerically singular");
    a_inv_ = lu_.inverse();
  }

  static AffineChart identity(Index n) {
    return AffineChart(Mat<Scalar>::Identity(n, n), Vec<Scalar>::Zero(n), Scalar(1));
  }

  Index dim() const { return a_.rows(); }
  const Mat<Scalar> &a_matrix() const { return a_; }
  const Mat<Scalar> &a_inverse() const { return a_inv_; }
  const Vec<Scalar> &b_offset() const { return b_; }
  Scalar scale_c() const { return c_; }

  Vec<Scalar> theta_bar(const Vec<Scalar> &theta) const {
    require_same_dim("AffineChart::theta_bar", dim(), theta.size());
    return a_.transpose() * (theta - b_);
  }
  Vec<Scalar> theta_from_bar(const Vec<Scalar> &theta_bar) const {
    require_same_dim("AffineChart::theta_from_bar", dim(), theta_bar.size());
    return a_inv_.transpose() * theta_bar + b_;
  }
  Vec<Scalar> eta_bar(const Vec<Scalar> &eta) const {
    require_same_dim("AffineChart::eta_bar", dim(), eta.size());
    return a_inv_ * eta;
  }
  Vec<Scalar> eta_from_bar(const Vec<Scalar> &eta_bar) const {
    require_same_dim("AffineChart::eta_from_bar", dim(), eta_bar.size());
    return a_ * eta_bar;
  }
  Vec<Scalar> theta_grad_bar(const Vec<Scalar> &grad_theta) const {
    require_same_dim("AffineChart::theta_grad_bar", dim(), grad_theta.size());
    return a_inv_ * grad_theta;
  }
  Vec<Scalar> eta_grad_bar(const Vec<Scalar> &grad_eta) const {
    require_same_dim("AffineChart::eta_grad_bar", dim(), grad_eta.size());
    return a_.transpose() * grad_eta;
  }
  Mat<Scalar> theta_hessian_bar(const Mat<Scalar> &h) const {
    return a_inv_ * h * a_inv_.transpose();
  }
  Mat<Scalar> eta_hessian_bar(const Mat<Scalar> &h) const { return a_.transpose() * h * a_; }

  Scalar psi_bar(const Vec<Scalar> &theta_bar) const {
    return psi(ThetaCoord<Scalar>(theta_from_bar(theta_bar)));
  }
  /// Legendre conjugate of psi_bar; differs from phi by the linear term b^T eta.
  Scalar phi_bar(const Vec<Scalar> &eta_bar) const {
    const Vec<Scalar> eta = eta_from_bar(eta_bar);
    return phi(EtaCoord<Scalar>(eta)) - b_.dot(eta);
  }

private:
  Mat<Scalar> a_;
  Vec<Scalar> b_;
  Scalar c_;
  Eigen::FullPivLU<Mat<Scalar>> lu_;
  Mat<Scalar> a_inv_;
};

using AffineChartd = AffineChart<double>;

/// Chart with A = sqrt(c) D_q, D_q the symmetric square root of hess psi(theta_q).
/// At the optimum the barred Hessians are c I (eta side) and I / c (theta side).
template <typename Scalar>
AffineChart<Scalar> make_identity_chart(const ThetaCoord<Scalar> &tq, Scalar c) {
  if (!(c > Scalar(0)))
    throw DomainError("make_identity_chart: c must be positive");
  const SymMatrix<Scalar> dq = sym_sqrt(hess_psi(tq));
  return AffineChart<Scalar>(std::sqrt(c) * dq.matrix(), Vec<Scalar>::Zero(tq.dim()), c);
}

/// Euclidean theta-gradient expressed in the barred theta chart.
template <typename Scalar>
Vec<Scalar> chart_pullback_grad(const AffineChart<Scalar> &chart, const Vec<Scalar> &grad_theta) {
  return chart.theta_grad_bar(grad_theta);
}

/// Mean parameters in the barred chart.
template <typename Scalar>
Vec<Scalar> chart_pushforward_eta(const AffineChart<Scalar> &chart, const Vec<Scalar> &eta) {
  return chart.eta_bar(eta);
}

/// Bregman divergence of psi_bar between two barred theta points.
template <typename Scalar>
Scalar bregman_psi_bar(const AffineChart<Scalar> &chart, const Vec<Scalar> &tp_bar,
                       const Vec<Scalar> &tq_bar) {
  const Vec<Scalar> eq = eta_from_theta(ThetaCoord<Scalar>(chart.theta_from_bar(tq_bar))).values();
  const Vec<Scalar> grad = chart.eta_bar(eq);
  return chart.psi_bar(tp_bar) - chart.psi_bar(tq_bar) - grad.dot(tp_bar - tq_bar);
}

} // namespace sflow
